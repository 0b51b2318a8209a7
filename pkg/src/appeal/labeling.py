"""Exemplar voting: relative comparisons into absolute 1-10 labels.

Each image is compared against a fixed exemplar set; the mean comparator
outcome is its raw score (positive raw = more appealing than the exemplars
on average), and a dataset-wide min-max map stretches raws onto [1, 10].
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import imageio
from .acquisition import ImageRecord
from .domain import POSITIVE
from .errors import PipelineError, ValidationError
from .manifest import append_jsonl, read_jsonl, write_jsonl
from .models import ComparatorModel, encode_images
from .seeding import derive_rng

log = logging.getLogger(__name__)

SCALE_LO = 1.0
SCALE_HI = 10.0
SCALE_MID = 5.5  # all raws equal: no ordering information, park at the midpoint


@dataclass(frozen=True)
class ExemplarSet:
    ids: tuple[str, ...]
    selection_seed: int
    strategy: str = "stratified"

    def __post_init__(self):
        if not self.ids:
            raise ValidationError("exemplar set is empty")
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError("exemplar set contains duplicates")


@dataclass(frozen=True)
class AppealLabel:
    image_id: str
    raw: float
    scaled: float

    def __post_init__(self):
        if not SCALE_LO <= self.scaled <= SCALE_HI:
            raise ValidationError(f"scaled score must lie in [1, 10], got {self.scaled}")

    def to_dict(self) -> dict:
        return {"image_id": self.image_id, "raw": self.raw, "scaled": self.scaled}


def select_exemplars(records: list[ImageRecord], n: int, seed: int) -> ExemplarSet:
    """Stratified uniform sample: half from positive queries, half negative."""
    if n < 1:
        raise ValidationError("exemplar count must be >= 1")
    if n > len(records):
        raise ValidationError(f"asked for {n} exemplars from {len(records)} records")
    positives = sorted((r.id for r in records if r.query.polarity == POSITIVE))
    negatives = sorted((r.id for r in records if r.query.polarity != POSITIVE))
    n_pos = n // 2 + n % 2
    n_neg = n // 2
    if len(positives) < n_pos or len(negatives) < n_neg:
        raise ValidationError(
            f"cannot stratify {n} exemplars over {len(positives)} positive / "
            f"{len(negatives)} negative records"
        )
    rng = derive_rng(seed, "exemplars")
    chosen = list(rng.choice(positives, size=n_pos, replace=False))
    chosen += list(rng.choice(negatives, size=n_neg, replace=False))
    return ExemplarSet(ids=tuple(chosen), selection_seed=seed)


def resolve_exemplar_images(
    exemplars: ExemplarSet, records: list[ImageRecord], image_root: Path
) -> list[np.ndarray]:
    """Load every exemplar image; any miss is fatal (the set is the yardstick)."""
    by_id = {r.id: r for r in records}
    images = []
    for image_id in exemplars.ids:
        record = by_id.get(image_id)
        if record is None:
            raise ValidationError(f"exemplar {image_id} is not in the record set")
        images.append(imageio.load_image(Path(image_root) / record.path))
    return images


def vote_score(image, exemplar_images, model: ComparatorModel, predict_fn=None) -> float:
    """Mean comparator outcome of `image` against every exemplar."""
    if predict_fn is not None:
        return float(np.mean([predict_fn(image, v) for v in exemplar_images]))
    exemplar_features = encode_images(model.encoder, exemplar_images)
    return _vote_from_features(image, exemplar_features, model)


def _vote_from_features(image, exemplar_features: torch.Tensor, model: ComparatorModel) -> float:
    model.eval()
    with torch.no_grad():
        x = model.encoder.prepare(image if isinstance(image, np.ndarray) else imageio.load_image(image))
        f_image = model.encoder(x.unsqueeze(0))
        expanded = f_image.expand(exemplar_features.shape[0], -1)
        scores = model.score_features(expanded, exemplar_features)
        return float(scores.mean())


def scale_scores(raws: list[tuple[str, float]]) -> list[AppealLabel]:
    """Min-max map raws onto [1, 10], preserving input order and ranking."""
    if not raws:
        raise ValidationError("no raw scores to scale")
    values = np.array([raw for _, raw in raws], dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return [AppealLabel(image_id, raw, SCALE_MID) for image_id, raw in raws]
    span = SCALE_HI - SCALE_LO
    # ratio first: raw == hi must land on exactly 10.0, raw == lo on 1.0
    return [
        AppealLabel(image_id, raw, SCALE_LO + span * ((raw - lo) / (hi - lo)))
        for image_id, raw in raws
    ]


def annotate_dataset(
    records: list[ImageRecord],
    exemplars: ExemplarSet,
    model: ComparatorModel,
    image_root: Path,
    *,
    cache_path: Path | None = None,
    manifest_path: Path | None = None,
    predict_fn=None,
    max_failure_fraction: float = 0.01,
    retries: int = 2,
) -> list[AppealLabel]:
    """Vote-score every record, then scale the full set to [1, 10].

    Raw scores are cached per image so an interrupted run resumes where it
    stopped; scaling always re-runs over the complete raw set.
    """
    if not records:
        raise ValidationError("no records to annotate")
    cached: dict[str, float] = {}
    if cache_path is not None and Path(cache_path).exists():
        for row in read_jsonl(cache_path):
            cached[row["image_id"]] = row["raw"]

    exemplar_images = resolve_exemplar_images(exemplars, records, image_root)
    exemplar_features = None
    if predict_fn is None:
        exemplar_features = encode_images(model.encoder, exemplar_images)

    raws: list[tuple[str, float]] = []
    failures = 0
    for record in records:
        if record.id in cached:
            raws.append((record.id, cached[record.id]))
            continue
        raw = None
        error = None
        for _ in range(retries + 1):
            try:
                image = imageio.load_image(Path(image_root) / record.path)
                if predict_fn is not None:
                    raw = float(np.mean([predict_fn(image, v) for v in exemplar_images]))
                else:
                    raw = _vote_from_features(image, exemplar_features, model)
                break
            except Exception as exc:  # retried; counted against the failure budget
                error = exc
        if raw is None:
            failures += 1
            log.warning("failed to score %s: %s", record.id, error)
            if failures > max_failure_fraction * len(records):
                raise PipelineError(
                    f"{failures} scoring failures out of {len(records)} records; aborting"
                )
            continue
        raws.append((record.id, raw))
        if cache_path is not None:
            append_jsonl(cache_path, {"image_id": record.id, "raw": raw})

    labels = scale_scores(raws)
    if manifest_path is not None:
        write_jsonl(manifest_path, (label.to_dict() for label in labels))
    return labels
