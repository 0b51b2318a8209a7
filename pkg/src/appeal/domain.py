"""Application-domain definitions and search-query generation.

A domain is a word-list bundle: nouns naming its objects, appealing
adjectives, named groups of unappealing adjectives (each group later gets
its own unappealing embedding), the lexical categories that identify the
domain in captions, plus filtering and synthesis knobs.
"""

import sys
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigFormatError, ValidationError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

POSITIVE = "positive"
NEGATIVE = "negative"

_TOP_LEVEL_KEYS = {
    "name",
    "nouns",
    "positive_adjectives",
    "negative_groups",
    "lexnames",
    "gamma",
    "output_size",
    "synthesis_plan",
}
_PLAN_KEYS = {"backgrounds_per_base", "alphas_per_background"}


@dataclass(frozen=True)
class SynthesisPlan:
    backgrounds_per_base: int
    alphas_per_background: int

    def __post_init__(self):
        for name in ("backgrounds_per_base", "alphas_per_background"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValidationError(f"synthesis_plan.{name} must be a positive integer")


@dataclass(frozen=True)
class SearchQuery:
    text: str
    polarity: str
    negative_group: str | None = None

    def __post_init__(self):
        if self.polarity not in (POSITIVE, NEGATIVE):
            raise ValidationError(f"polarity must be positive or negative, got {self.polarity!r}")
        if (self.negative_group is not None) != (self.polarity == NEGATIVE):
            raise ValidationError("negative_group is set iff polarity is negative")

    def to_dict(self) -> dict:
        return {"text": self.text, "polarity": self.polarity, "negative_group": self.negative_group}

    @classmethod
    def from_dict(cls, d: dict) -> "SearchQuery":
        return cls(text=d["text"], polarity=d["polarity"], negative_group=d.get("negative_group"))

    @property
    def slug(self) -> str:
        return "-".join(self.text.lower().split())


@dataclass(frozen=True)
class DomainConfig:
    name: str
    nouns: tuple[str, ...]
    positive_adjectives: tuple[str, ...]
    negative_groups: dict[str, tuple[str, ...]]
    lexnames: tuple[str, ...]
    gamma: float
    output_size: int
    synthesis_plan: SynthesisPlan = field(default_factory=lambda: SynthesisPlan(3, 6))

    def __post_init__(self):
        def check_words(label, words):
            if not words:
                raise ValidationError(f"{label} must be non-empty")
            for w in words:
                if not isinstance(w, str) or not w.strip():
                    raise ValidationError(f"{label} contains an empty string")

        if not isinstance(self.name, str) or not self.name.strip():
            raise ValidationError("name must be a non-empty string")
        check_words("nouns", self.nouns)
        check_words("positive_adjectives", self.positive_adjectives)
        check_words("lexnames", self.lexnames)
        trimmed = [n.strip() for n in self.nouns]
        if len(set(trimmed)) != len(trimmed):
            raise ValidationError("nouns contains duplicates")
        if not self.negative_groups:
            raise ValidationError("negative_groups must be non-empty")
        for group, adjectives in self.negative_groups.items():
            if not isinstance(group, str) or not group.strip():
                raise ValidationError("negative_groups contains an empty group name")
            check_words(f"negative_groups.{group}", adjectives)
        if not 0.0 < self.gamma < 1.0:
            raise ValidationError(f"gamma must be in (0, 1), got {self.gamma}")
        if not isinstance(self.output_size, int) or self.output_size < 1:
            raise ValidationError("output_size must be a positive integer")

    @property
    def negative_adjectives(self) -> tuple[str, ...]:
        return tuple(a for group in self.negative_groups.values() for a in group)


def load_domain_config(path) -> DomainConfig:
    """Load and validate a domain config TOML file. Unknown keys are a hard error."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"domain config not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        # tomllib error messages carry line/column info.
        raise ConfigFormatError(f"{path}: {exc}") from exc

    unknown = set(raw) - _TOP_LEVEL_KEYS
    if unknown:
        raise ValidationError(f"{path}: unknown keys {sorted(unknown)}")
    missing = _TOP_LEVEL_KEYS - set(raw)
    if missing:
        raise ValidationError(f"{path}: missing keys {sorted(missing)}")

    plan_raw = raw["synthesis_plan"]
    if not isinstance(plan_raw, dict):
        raise ValidationError(f"{path}: synthesis_plan must be a table")
    unknown_plan = set(plan_raw) - _PLAN_KEYS
    if unknown_plan:
        raise ValidationError(f"{path}: unknown synthesis_plan keys {sorted(unknown_plan)}")
    missing_plan = _PLAN_KEYS - set(plan_raw)
    if missing_plan:
        raise ValidationError(f"{path}: missing synthesis_plan keys {sorted(missing_plan)}")

    groups_raw = raw["negative_groups"]
    if not isinstance(groups_raw, dict):
        raise ValidationError(f"{path}: negative_groups must be a table of name -> string array")

    def strings(label, value):
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ValidationError(f"{path}: {label} must be a string array")
        return tuple(v.strip() for v in value)

    gamma = raw["gamma"]
    if isinstance(gamma, int):
        gamma = float(gamma)
    if not isinstance(gamma, float):
        raise ValidationError(f"{path}: gamma must be a float")

    return DomainConfig(
        name=str(raw["name"]).strip(),
        nouns=strings("nouns", raw["nouns"]),
        positive_adjectives=strings("positive_adjectives", raw["positive_adjectives"]),
        negative_groups={
            str(g): strings(f"negative_groups.{g}", adjs) for g, adjs in groups_raw.items()
        },
        lexnames=strings("lexnames", raw["lexnames"]),
        gamma=gamma,
        output_size=raw["output_size"],
        synthesis_plan=SynthesisPlan(
            backgrounds_per_base=plan_raw["backgrounds_per_base"],
            alphas_per_background=plan_raw["alphas_per_background"],
        ),
    )


def generate_queries(cfg: DomainConfig) -> list[SearchQuery]:
    """Full adjective x noun cross product, adjective-major, noun-minor.

    Downstream stages decide which queries to issue; this list is the
    deterministic universe they sample from.
    """
    queries: list[SearchQuery] = []
    for adjective in cfg.positive_adjectives:
        for noun in cfg.nouns:
            queries.append(SearchQuery(f"{adjective.strip()} {noun.strip()}", POSITIVE))
    for group, adjectives in cfg.negative_groups.items():
        for adjective in adjectives:
            for noun in cfg.nouns:
                queries.append(
                    SearchQuery(f"{adjective.strip()} {noun.strip()}", NEGATIVE, negative_group=group)
                )
    return queries
