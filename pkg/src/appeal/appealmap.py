"""Sliding-window appeal heatmaps and heatmap-gated enhancement.

The estimator scores overlapping windows; each pixel averages the scores of
every window covering it; min-max normalization and inversion turn that
into a heatmap where lighter means more unappealing. The heatmap then acts
as a soft inpainting mask, so enhancement concentrates exactly where appeal
is lacking.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import BackendError, PipelineError, ValidationError
from .fields import ScalarField
from .models import EstimatorModel, estimator_predict_batch
from .synthesis import PLACEHOLDER_TOKEN, PolarityEmbedding

log = logging.getLogger(__name__)

DEFAULT_NEGATIVE_PROMPT = (
    "out of frame, lowres, text, error, cropped, worst quality, low quality, "
    "jpeg artifacts, ugly, duplicate, morbid, mutilated, out of frame, extra "
    "fingers, mutated hands, poorly drawn hands, poorly drawn face, mutation, "
    "deformed, blurry, dehydrated, bad anatomy, bad proportions, extra limbs, "
    "cloned face, disfigured, gross proportions, malformed limbs, missing "
    "arms, missing legs, extra arms, extra legs, fused fingers, too many "
    "fingers, long neck, username, watermark, signature,"
)
DEFAULT_SAMPLER = "DPM++ 2M Karras"
DEFAULT_DEPTH_PREPROCESSOR = "depth_midas"


@dataclass(frozen=True)
class HeatmapConfig:
    window: int = 224
    stride: int = 32
    normalization: str = "minmax"

    def __post_init__(self):
        if not 0 < self.stride <= self.window:
            raise ValidationError(
                f"need 0 < stride <= window, got stride={self.stride} window={self.window}"
            )
        if self.normalization != "minmax":
            raise ValidationError(f"unknown normalization {self.normalization!r}")


@dataclass(frozen=True)
class EnhanceConfig:
    denoising_strength: float = 0.6
    guidance_scale: float = 7.0
    sampler: str = DEFAULT_SAMPLER
    negative_prompt: str = DEFAULT_NEGATIVE_PROMPT
    depth_conditioning: bool = True
    depth_preprocessor: str = DEFAULT_DEPTH_PREPROCESSOR
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.denoising_strength <= 1.0:
            raise ValidationError("denoising_strength must lie in (0, 1]")
        if self.guidance_scale <= 0:
            raise ValidationError("guidance_scale must be > 0")


@dataclass(frozen=True)
class PatchGrid:
    """Window scores plus the geometry needed to map them back to pixels."""

    scores: np.ndarray  # (len(ys), len(xs)) float64
    ys: tuple[int, ...]
    xs: tuple[int, ...]
    window: int
    image_shape: tuple[int, int]


def window_positions(side: int, window: int, stride: int) -> tuple[int, ...]:
    """Positions every `stride` pixels from 0, plus a flush-edge position so
    border pixels are always covered."""
    positions = list(range(0, side - window + 1, stride))
    if positions[-1] != side - window:
        positions.append(side - window)
    return tuple(positions)


def patch_scores(image: np.ndarray, cfg: HeatmapConfig, estimator) -> PatchGrid:
    """Score every sliding-window patch.

    `estimator` is either an EstimatorModel or any callable patch -> float
    (handy for oracle tests).
    """
    h, w = image.shape[:2]
    if cfg.window > min(h, w):
        raise ValidationError(
            f"window {cfg.window} exceeds image {w}x{h}; use a smaller window"
        )
    ys = window_positions(h, cfg.window, cfg.stride)
    xs = window_positions(w, cfg.window, cfg.stride)
    patches = [image[y : y + cfg.window, x : x + cfg.window] for y in ys for x in xs]
    if isinstance(estimator, EstimatorModel):
        flat = estimator_predict_batch(estimator, patches)
    else:
        flat = np.array([float(estimator(p)) for p in patches], dtype=np.float64)
    scores = np.asarray(flat, dtype=np.float64).reshape(len(ys), len(xs))
    return PatchGrid(scores=scores, ys=ys, xs=xs, window=cfg.window, image_shape=(h, w))


def build_heatmap(image: np.ndarray, grid: PatchGrid, cfg: HeatmapConfig) -> ScalarField:
    """Per-pixel mean over covering windows, min-max normalized and inverted.

    Constant scores normalize degenerately; that means no region stands out
    as unappealing, so the heatmap is all zeros (nothing to enhance).
    """
    h, w = image.shape[:2]
    if grid.image_shape != (h, w) or grid.window != cfg.window:
        raise PipelineError("patch grid geometry does not match this image/config")
    if (grid.ys, grid.xs) != (
        window_positions(h, cfg.window, cfg.stride),
        window_positions(w, cfg.window, cfg.stride),
    ):
        raise PipelineError("patch grid positions do not match this config")

    total = np.zeros((h, w), dtype=np.float64)
    count = np.zeros((h, w), dtype=np.float64)
    for yi, y in enumerate(grid.ys):
        for xi, x in enumerate(grid.xs):
            total[y : y + grid.window, x : x + grid.window] += grid.scores[yi, xi]
            count[y : y + grid.window, x : x + grid.window] += 1.0
    if (count == 0).any():
        raise PipelineError("window positions leave pixels uncovered")
    mean = total / count
    lo, hi = float(mean.min()), float(mean.max())
    if hi == lo:
        return ScalarField.zeros(h, w)
    return ScalarField(1.0 - (mean - lo) / (hi - lo))


def estimate_depth(image: np.ndarray, depth_backend) -> ScalarField | None:
    """Normalized inverse-depth field; returns None (with a warning) on
    backend failure so enhancement can proceed unconditioned."""
    try:
        raw = depth_backend.estimate(image)
    except Exception as exc:
        log.warning("depth backend failed (%s); enhancing without depth", exc)
        return None
    return ScalarField.from_raw(raw)


def enhance(
    image: np.ndarray,
    caption: str,
    z_pos: PolarityEmbedding,
    heatmap: ScalarField,
    depth: ScalarField | None,
    cfg: EnhanceConfig,
    inpainter,
    object_type: str | None = None,
    lexnames=None,
) -> np.ndarray:
    """Inpaint toward full appeal wherever the heatmap says it is lacking.

    The soft heatmap goes to the backend as-is so enhancement strength can
    follow unappeal intensity; backends that need a hard mask binarize
    internally. An all-zero heatmap is the identity.
    """
    if z_pos is None:
        raise ValidationError("enhancement needs the positive polarity embedding")
    if not caption or not caption.strip():
        raise ValidationError("caption is empty")
    heatmap.require_matches(image)
    if not heatmap.values.any():
        return image.copy()
    if object_type is None:
        from .relevancy import parse_object_type

        object_type = parse_object_type(caption, lexnames) if lexnames else caption.split()[-1]
    prompt = f"{PLACEHOLDER_TOKEN} {object_type}".strip()
    depth_values = None
    if cfg.depth_conditioning and depth is not None:
        depth.require_matches(image)
        depth_values = depth.values
    try:
        out = inpainter.inpaint(
            image,
            heatmap.values,
            prompt=prompt,
            conditioning=z_pos.vector,
            seed=cfg.seed,
            negative_prompt=cfg.negative_prompt,
            guidance_scale=cfg.guidance_scale,
            denoising_strength=cfg.denoising_strength,
            sampler=cfg.sampler,
            depth=depth_values,
        )
    except Exception as exc:
        raise BackendError(f"enhancement inpainting failed: {exc}", retryable=True) from exc
    # Zero-heat pixels are outside mask support and must survive bit-exact.
    out = out.copy()
    untouched = heatmap.values == 0.0
    out[untouched] = image[untouched]
    return out


def overlay_heatmap(image: np.ndarray, heatmap: ScalarField) -> np.ndarray:
    """Red-tinted visualization of the heatmap over the image."""
    heatmap.require_matches(image)
    v = heatmap.values[..., None]
    red = np.zeros_like(image, dtype=np.float64)
    red[..., 0] = 255.0
    blended = (1.0 - 0.5 * v) * image.astype(np.float64) + 0.5 * v * red
    return np.clip(np.round(blended), 0, 255).astype(np.uint8)
