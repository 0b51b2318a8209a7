"""Synthetic appeal-graded image generation.

Polarity embeddings learned from extreme exemplars are blended linearly to
hit any appeal level alpha in [0, 1]; inpainting regenerates the domain
region at that level after the background has been diversified. Every
sample's randomness derives from (run_seed, base id, slot), so parallel
generation order and resume points never change outputs.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import imageio
from .acquisition import ImageRecord
from .domain import DomainConfig
from .errors import BackendError, PipelineError, ValidationError
from .fields import ScalarField
from .seeding import derive_rng, derive_seed

log = logging.getLogger(__name__)

# Placeholder token appended to prompts; its conditioning vector is the
# blended polarity embedding.
PLACEHOLDER_TOKEN = "<appeal>"

# Embedding-inversion training hyperparameters.
INVERSION_BATCH_SIZE = 1
INVERSION_LEARNING_RATE = 5e-3

ALPHA_JITTER = 0.2  # delta ~ uniform(-ALPHA_JITTER, +ALPHA_JITTER)
ALPHA_STEPS = (0, 1, 2)  # k cycles over these so variants span the spectrum

# Relevancy fields binarize at this threshold before inpainting; synthesis
# regenerates masked regions wholesale, hence full denoising strength.
MASK_THRESHOLD = 0.5
SYNTHESIS_DENOISING_STRENGTH = 1.0


@dataclass(frozen=True)
class PolarityEmbedding:
    vector: np.ndarray
    polarity: str
    group: str | None
    trained_on: tuple[str, ...]

    def __post_init__(self):
        if self.polarity not in ("positive", "negative"):
            raise ValidationError(f"polarity must be positive or negative, got {self.polarity!r}")
        if not self.trained_on:
            raise ValidationError("trained_on must be non-empty")
        object.__setattr__(self, "vector", np.asarray(self.vector, dtype=np.float64))
        if self.vector.ndim != 1:
            raise ValidationError("embedding vector must be 1-D")


@dataclass(frozen=True)
class EmbeddingSet:
    positive: PolarityEmbedding
    negative: dict[str, PolarityEmbedding]  # negative-group name -> embedding

    def __post_init__(self):
        if not self.negative:
            raise ValidationError("at least one negative embedding is required")


@dataclass(frozen=True)
class SyntheticSample:
    id: str
    base_id: str
    background_seed: int
    alpha: float
    negative_group: str
    path: str

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"alpha must lie in [0, 1], got {self.alpha}")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "base_id": self.base_id,
            "background_seed": self.background_seed,
            "alpha": self.alpha,
            "negative_group": self.negative_group,
            "path": self.path,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSample":
        return cls(
            id=d["id"],
            base_id=d["base_id"],
            background_seed=d["background_seed"],
            alpha=d["alpha"],
            negative_group=d["negative_group"],
            path=d["path"],
        )


def train_polarity_embedding(
    exemplars: list[ImageRecord],
    polarity: str,
    trainer,
    image_root: Path,
    group: str | None = None,
) -> PolarityEmbedding:
    """Learn one polarity embedding from exemplar images."""
    if not exemplars:
        raise ValidationError("embedding training needs at least one exemplar")
    images = [imageio.load_image(Path(image_root) / r.path) for r in exemplars]
    try:
        vector = trainer.train(
            images,
            polarity,
            group=group,
            batch_size=INVERSION_BATCH_SIZE,
            learning_rate=INVERSION_LEARNING_RATE,
        )
    except ValidationError:
        raise
    except Exception as exc:
        raise BackendError(f"embedding inversion failed: {exc}") from exc
    if np.asarray(vector).shape != (trainer.conditioning_dim,):
        raise PipelineError(
            f"trainer returned shape {np.asarray(vector).shape}, "
            f"expected ({trainer.conditioning_dim},)"
        )
    return PolarityEmbedding(
        vector=vector,
        polarity=polarity,
        group=group,
        trained_on=tuple(r.id for r in exemplars),
    )


def blend(z_pos: PolarityEmbedding, z_neg: PolarityEmbedding, alpha: float) -> np.ndarray:
    """alpha * z_pos + (1 - alpha) * z_neg, elementwise."""
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError(f"alpha must lie in [0, 1], got {alpha}")
    if z_pos.vector.shape != z_neg.vector.shape:
        raise PipelineError(
            f"embedding dimensions differ: {z_pos.vector.shape} vs {z_neg.vector.shape}"
        )
    return alpha * z_pos.vector + (1.0 - alpha) * z_neg.vector


def sample_alpha(k: int, delta: float) -> float:
    """clamp(k/2 + delta, 0, 1)."""
    if k not in ALPHA_STEPS:
        raise ValidationError(f"k must be one of {ALPHA_STEPS}, got {k}")
    if abs(delta) > ALPHA_JITTER:
        raise ValidationError(f"|delta| must be <= {ALPHA_JITTER}, got {delta}")
    return max(min(k / 2 + delta, 1.0), 0.0)


def _binary_mask(values: np.ndarray, threshold: float) -> np.ndarray:
    return (values >= threshold).astype(np.float64)


def _inpaint_masked(image, mask, inpainter, *, prompt, conditioning, seed, strength) -> np.ndarray:
    try:
        out = inpainter.inpaint(
            image,
            mask,
            prompt=prompt,
            conditioning=conditioning,
            seed=seed,
            denoising_strength=strength,
        )
    except Exception as exc:
        raise BackendError(f"inpainting failed: {exc}", retryable=True) from exc
    # Locality is our contract, not the backend's: outside the mask the
    # input pixels pass through untouched no matter what came back.
    keep = mask < MASK_THRESHOLD
    out = out.copy()
    out[keep] = image[keep]
    return out


def diversify_background(
    image: np.ndarray,
    relevancy: ScalarField,
    seed: int,
    inpainter,
    threshold: float = MASK_THRESHOLD,
    strength: float = SYNTHESIS_DENOISING_STRENGTH,
) -> np.ndarray:
    """Regenerate non-domain regions freely (empty prompt)."""
    relevancy.require_matches(image)
    mask = _binary_mask(1.0 - relevancy.values, threshold)
    if not mask.any():
        return image.copy()
    return _inpaint_masked(
        image, mask, inpainter, prompt="", conditioning=None, seed=seed, strength=strength
    )


def adjust_appeal(
    image: np.ndarray,
    caption: str,
    cond: np.ndarray,
    relevancy: ScalarField,
    seed: int,
    inpainter,
    threshold: float = MASK_THRESHOLD,
    strength: float = SYNTHESIS_DENOISING_STRENGTH,
) -> np.ndarray:
    """Regenerate the domain region at the appeal level encoded in `cond`."""
    if not caption or not caption.strip():
        raise ValidationError("caption is empty")
    relevancy.require_matches(image)
    mask = _binary_mask(relevancy.values, threshold)
    if not mask.any():
        return image.copy()
    prompt = f"{caption} {PLACEHOLDER_TOKEN}"
    return _inpaint_masked(
        image, mask, inpainter, prompt=prompt, conditioning=cond, seed=seed, strength=strength
    )


def plan_alphas(run_seed: int, base_id: str, bg_index: int, slots: int) -> list[float]:
    """Deterministic alpha values for one background variant.

    k cycles 0,1,2 across slots; delta is drawn per slot from the stream
    derived from (run_seed, base_id, bg, slot). Values that would collide
    within the variant (the clamp makes alpha=0 and alpha=1 sticky) are
    redrawn so the (base, background, alpha, group) key stays unique.
    """
    used: set[float] = set()
    alphas = []
    for slot in range(slots):
        k = ALPHA_STEPS[slot % len(ALPHA_STEPS)]
        rng = derive_rng(run_seed, "alpha", base_id, bg_index, slot)
        alpha = sample_alpha(k, float(rng.uniform(-ALPHA_JITTER, ALPHA_JITTER)))
        while alpha in used:
            alpha = sample_alpha(k, float(rng.uniform(-ALPHA_JITTER, ALPHA_JITTER)))
        used.add(alpha)
        alphas.append(alpha)
    return alphas


def generate_synthetic_set(
    bases: list[ImageRecord],
    cfg: DomainConfig,
    embeddings: EmbeddingSet,
    inpainter,
    *,
    image_root: Path,
    relevancy_root: Path,
    out_dir: Path,
    run_seed: int,
    path_prefix: str = "synthetic",
    mask_threshold: float = MASK_THRESHOLD,
    strength: float = SYNTHESIS_DENOISING_STRENGTH,
) -> list[SyntheticSample]:
    """Generate the full per-base plan: backgrounds x alpha levels.

    Background diversification runs before the appeal adjustment. Existing
    output files are not regenerated, so an interrupted run resumes by
    re-invoking with the same arguments.
    """
    plan = cfg.synthesis_plan
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    groups = sorted(embeddings.negative)
    samples: list[SyntheticSample] = []
    for base in bases:
        if not base.caption:
            raise ValidationError(f"base {base.id} has no caption")
        group_rng = derive_rng(run_seed, "group", base.id)
        group = groups[int(group_rng.integers(len(groups)))]
        z_neg = embeddings.negative[group]
        base_image = None
        relevancy = None
        for bg_index in range(plan.backgrounds_per_base):
            bg_seed = derive_seed(run_seed, "background", base.id, bg_index)
            alphas = plan_alphas(run_seed, base.id, bg_index, plan.alphas_per_background)
            diversified = None  # built lazily, shared across the variant's slots
            for slot, alpha in enumerate(alphas):
                sample_id = f"{base.id}-b{bg_index:02d}-s{slot:02d}"
                sample = SyntheticSample(
                    id=sample_id,
                    base_id=base.id,
                    background_seed=bg_seed,
                    alpha=alpha,
                    negative_group=group,
                    path=f"{path_prefix}/{sample_id}.png",
                )
                out_path = out_dir / f"{sample_id}.png"
                if not out_path.exists():
                    if base_image is None:
                        base_image = imageio.load_image(Path(image_root) / base.path)
                        relevancy = ScalarField.load_png(Path(relevancy_root) / f"{base.id}.png")
                    try:
                        if diversified is None:
                            diversified = diversify_background(
                                base_image, relevancy, bg_seed, inpainter,
                                threshold=mask_threshold, strength=strength,
                            )
                        cond = blend(embeddings.positive, z_neg, alpha)
                        paint_seed = derive_seed(run_seed, "paint", base.id, bg_index, slot)
                        adjusted = adjust_appeal(
                            diversified, base.caption, cond, relevancy, paint_seed, inpainter,
                            threshold=mask_threshold, strength=strength,
                        )
                    except BackendError as exc:
                        log.warning("skipping sample %s: %s", sample_id, exc)
                        continue
                    imageio.save_image(adjusted, out_path)
                samples.append(sample)
    return samples


def save_embedding(embedding: PolarityEmbedding, path: Path) -> None:
    """Vector as .npy plus a sidecar metadata JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.save(path, embedding.vector)
    meta = {
        "polarity": embedding.polarity,
        "group": embedding.group,
        "trained_on": list(embedding.trained_on),
        "dimension": int(embedding.vector.shape[0]),
        "batch_size": INVERSION_BATCH_SIZE,
        "learning_rate": INVERSION_LEARNING_RATE,
    }
    path.with_suffix(".json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_embedding(path: Path) -> PolarityEmbedding:
    path = Path(path)
    vector = np.load(path)
    meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    return PolarityEmbedding(
        vector=vector,
        polarity=meta["polarity"],
        group=meta["group"],
        trained_on=tuple(meta["trained_on"]),
    )
