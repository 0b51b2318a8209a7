"""Caption chunking and lexical-category lookup.

Captions are screened for domain relevance by chunking them into noun
phrases and checking whether any phrase word belongs to one of the domain's
lexical categories (e.g. "noun.food"). The bundled database is a compact
TSV of term -> categories covering common caption vocabulary; deployments
can extend or replace it.
"""

from functools import lru_cache
from importlib import resources
from pathlib import Path

from .errors import ValidationError

# Phrase-initial function words; allowed inside a phrase only at its start.
DETERMINERS = frozenset(
    "a an the this that these those some any each every no its his her my your our their "
    "one two three four five several many few more most other another".split()
)

# Words that terminate a noun phrase: prepositions, conjunctions, and verbs
# common in generated captions.
PHRASE_BREAKS = frozenset(
    "and or but nor with without of on in at by for from to into onto over under above "
    "below near beside between behind across against along around through during after "
    "before next up down out off is are was were be been being has have had does do did "
    "sits sitting sit stands standing stand lies lying looks looking holds holding "
    "contains containing filled topped covered served placed shown seen made makes "
    "there here where which who while as than it they".split()
)


def tokenize(text: str) -> list[str]:
    tokens = []
    for raw in text.lower().split():
        word = raw.strip(".,;:!?()[]\"'")
        if word:
            tokens.append(word)
    return tokens


def noun_phrases(caption: str) -> list[str]:
    """Chunk a caption into candidate noun phrases.

    A phrase is an optional determiner followed by a run of content words;
    break words and fresh determiners close the current phrase.
    """
    phrases: list[str] = []
    current: list[str] = []

    def flush():
        if any(tok not in DETERMINERS for tok in current):
            phrases.append(" ".join(current))
        current.clear()

    for token in tokenize(caption):
        if token in PHRASE_BREAKS:
            flush()
        elif token in DETERMINERS:
            flush()
            current.append(token)
        else:
            current.append(token)
    flush()
    return phrases


class Lexicon:
    """term -> set of lexical-category names, over all senses of the term."""

    def __init__(self, entries: dict[str, frozenset[str]]):
        self._entries = {self._normalize(term): frozenset(cats) for term, cats in entries.items()}

    @staticmethod
    def _normalize(term: str) -> str:
        return " ".join(term.lower().split())

    @staticmethod
    def _singular_variants(word: str) -> list[str]:
        variants = []
        if word.endswith("ies") and len(word) > 3:
            variants.append(word[:-3] + "y")
        if word.endswith("es") and len(word) > 2:
            variants.append(word[:-2])
        if word.endswith("s") and len(word) > 1:
            variants.append(word[:-1])
        return variants

    def lookup(self, term: str) -> frozenset[str]:
        """Categories for a term; plural forms fall back to their singular."""
        term = self._normalize(term)
        hit = self._entries.get(term)
        if hit is not None:
            return hit
        for variant in self._singular_variants(term):
            hit = self._entries.get(variant)
            if hit is not None:
                return hit
        return frozenset()

    def matches(self, term: str, lexnames) -> bool:
        return bool(self.lookup(term) & frozenset(lexnames))

    def extended(self, extra: dict[str, frozenset[str]]) -> "Lexicon":
        merged = dict(self._entries)
        for term, cats in extra.items():
            key = self._normalize(term)
            merged[key] = merged.get(key, frozenset()) | frozenset(cats)
        return Lexicon(merged)

    def __len__(self) -> int:
        return len(self._entries)

    @classmethod
    def from_file(cls, path) -> "Lexicon":
        path = Path(path)
        entries: dict[str, frozenset[str]] = {}
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValidationError(f"{path}:{lineno}: expected 'term<TAB>categories'")
            term, cats = parts
            entries[term] = frozenset(c.strip() for c in cats.split(",") if c.strip())
        return cls(entries)


@lru_cache(maxsize=1)
def bundled_lexicon() -> Lexicon:
    with resources.as_file(resources.files("appeal.data") / "lexicon.tsv") as path:
        return Lexicon.from_file(path)
