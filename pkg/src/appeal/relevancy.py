"""Two-stage domain-relevance filtering and polarity balancing.

Stage one screens captions lexically: an image survives only if its caption
contains a noun phrase from the domain's lexical categories. Stage two
grounds the surviving phrases with a segmentation backend, aggregates the
per-phrase maps into a domain-relevancy field, and keeps the image only if
domain objects cover at least a gamma fraction of its pixels.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .acquisition import STATUS_FILTERED_AREA, STATUS_KEPT, ImageRecord
from .domain import POSITIVE
from .errors import BackendError, ValidationError
from .fields import ScalarField
from .lexicon import DETERMINERS, Lexicon, bundled_lexicon, noun_phrases

log = logging.getLogger(__name__)

AGGREGATE_MAX = "max"
AGGREGATE_SUM_NORM = "sum_norm"


@dataclass(frozen=True)
class PhraseSet:
    all_phrases: tuple[str, ...]
    domain_phrases: tuple[str, ...]

    def __post_init__(self):
        if not set(self.domain_phrases) <= set(self.all_phrases):
            raise ValidationError("domain_phrases must be a subset of all_phrases")


def caption_image(image: np.ndarray, captioner, image_id: str | None = None) -> str:
    try:
        return captioner.caption(image, image_id=image_id)
    except Exception as exc:
        raise BackendError(f"captioner failed: {exc}", retryable=True) from exc


def _content_words(phrase: str) -> list[str]:
    return [w for w in phrase.split() if w not in DETERMINERS]


def phrase_in_domain(phrase: str, lexnames, lexicon: Lexicon) -> bool:
    words = _content_words(phrase)
    if not words:
        return False
    # Multiword lookup first ("living room"), then word-by-word fallback.
    if lexicon.matches(" ".join(words), lexnames):
        return True
    return any(lexicon.matches(w, lexnames) for w in words)


def extract_domain_phrases(caption: str, lexnames, lexicon: Lexicon | None = None) -> PhraseSet:
    if not caption or not caption.strip():
        raise ValidationError("caption is empty")
    lexicon = lexicon or bundled_lexicon()
    phrases = noun_phrases(caption)
    domain = tuple(p for p in phrases if phrase_in_domain(p, lexnames, lexicon))
    return PhraseSet(tuple(phrases), domain)


def head_noun(phrase: str, lexnames, lexicon: Lexicon) -> str:
    """Last content word carrying a domain lexname; falls back to the last word."""
    words = _content_words(phrase)
    for word in reversed(words):
        if lexicon.matches(word, lexnames):
            return word
    return words[-1]


def parse_object_type(caption: str, lexnames, lexicon: Lexicon | None = None) -> str:
    """Object-type word for enhancement prompts (e.g. "burger", "kitchen")."""
    lexicon = lexicon or bundled_lexicon()
    phrases = extract_domain_phrases(caption, lexnames, lexicon)
    if phrases.domain_phrases:
        return head_noun(phrases.domain_phrases[0], lexnames, lexicon)
    words = _content_words(caption.lower())
    return words[-1] if words else ""


def build_relevancy_map(
    image: np.ndarray,
    phrases: PhraseSet,
    segmenter,
    aggregate: str = AGGREGATE_MAX,
) -> ScalarField:
    """Aggregate per-phrase segmentation maps into one [0,1] field.

    Backend outputs are clamped into [0,1] here, so arbitrary segmenters
    cannot break the field invariant. An empty phrase set yields all zeros.
    """
    if aggregate not in (AGGREGATE_MAX, AGGREGATE_SUM_NORM):
        raise ValidationError(f"unknown aggregate mode {aggregate!r}")
    h, w = image.shape[:2]
    if not phrases.domain_phrases:
        return ScalarField.zeros(h, w)
    maps = []
    for phrase in phrases.domain_phrases:
        try:
            raw = segmenter.segment(image, phrase)
        except Exception as exc:
            raise BackendError(f"segmenter failed on {phrase!r}: {exc}", retryable=True) from exc
        maps.append(np.clip(np.asarray(raw, dtype=np.float64), 0.0, 1.0))
    stack = np.stack(maps)
    if aggregate == AGGREGATE_MAX:
        combined = stack.max(axis=0)
    else:
        combined = stack.sum(axis=0)
        peak = combined.max()
        if peak > 0:
            combined = combined / peak
    return ScalarField(combined)


def area_filter(record: ImageRecord, field: ScalarField, gamma: float) -> tuple[ImageRecord, bool]:
    """Keep iff the field's pixel sum reaches gamma * w * h (equality keeps)."""
    if (field.height, field.width) != (record.height, record.width):
        from .errors import PipelineError

        raise PipelineError(
            f"relevancy map {field.width}x{field.height} does not match "
            f"record {record.id} ({record.width}x{record.height})"
        )
    total = float(field.values.sum())
    pixels = record.width * record.height
    fraction = total / pixels
    keep = total >= gamma * pixels
    status = STATUS_KEPT if keep else STATUS_FILTERED_AREA
    return record.with_status(status, relevancy_fraction=fraction), keep


def balance_polarity(records: list[ImageRecord]) -> list[ImageRecord]:
    """Equalize kept positives and negatives by dropping from the larger side.

    Highest-rank (least relevant to its query) records go first; ties break
    by id. Already-balanced input comes back unchanged, so the operation is
    idempotent.
    """
    for record in records:
        if record.status != STATUS_KEPT:
            raise ValidationError(f"balance_polarity expects kept records, got {record.status}")
    positives = [r for r in records if r.query.polarity == POSITIVE]
    negatives = [r for r in records if r.query.polarity != POSITIVE]
    if not positives or not negatives:
        raise ValidationError(
            f"cannot balance: {len(positives)} positive vs {len(negatives)} negative kept records"
        )
    target = min(len(positives), len(negatives))
    larger = positives if len(positives) > len(negatives) else negatives
    excess = len(larger) - target
    if excess == 0:
        return list(records)
    drop_order = sorted(larger, key=lambda r: (-r.rank, r.id))
    dropped_ids = {r.id for r in drop_order[:excess]}
    out = []
    for record in records:
        if record.id in dropped_ids:
            out.append(record.with_status("dropped_balance"))
        else:
            out.append(record)
    return out
