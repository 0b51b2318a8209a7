"""Deterministic mock backends for desk-scale runs and tests.

Every mock is seed-deterministic and reentrant. The inpainter's toy mode
renders the requested appeal level directly into masked-region saturation,
which is what makes the toy end-to-end harness checkable against a known
ground truth.
"""

import hashlib
import json
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .. import imageio
from ..errors import BackendError, ValidationError
from . import conditioning_hash, register_backend

# Toy-mode saturation endpoints: conditioning that encodes alpha=0 renders
# masked-region saturation TOY_SAT_LO, alpha=1 renders TOY_SAT_HI. Hue and
# value are seed-keyed distractors: they vary freely without touching the
# saturation that carries the appeal signal.
TOY_SAT_LO = 0.2
TOY_SAT_HI = 0.9
TOY_VALUE_LO = 0.75
TOY_VALUE_HI = 1.0


def _stable_int(key: str) -> int:
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little")


def _keyed_color(key: str) -> tuple[int, int, int]:
    digest = hashlib.sha256(key.encode()).digest()
    return digest[0], digest[1], digest[2]


def _keyed_unit(key: str) -> float:
    return (_stable_int(key) % 2**20) / 2**20


class MockCaptioner:
    """Fixed caption map keyed by image id; unmapped ids get the default."""

    deterministic = True
    reentrant = True

    def __init__(self, captions=None, default: str = ""):
        if isinstance(captions, (str, Path)):
            captions = json.loads(Path(captions).read_text(encoding="utf-8"))
        self.captions = dict(captions or {})
        self.default = default

    def caption(self, image: np.ndarray, image_id: str | None = None) -> str:
        return self.captions.get(image_id, self.default)


class MockSegmenter:
    """Reads one color channel, keyed by the phrase, as the segmentation map."""

    deterministic = True
    reentrant = True

    def __init__(self):
        pass

    def segment(self, image: np.ndarray, phrase: str) -> np.ndarray:
        channel = _stable_int(f"segment:{phrase}") % 3
        return image[:, :, channel].astype(np.float64) / 255.0


class MockInpainter:
    """Fills the binarized mask with a deterministic solid color.

    The fill color is a function of (seed, conditioning hash). In toy mode a
    conditioning vector is interpreted as an appeal level alpha = clamp(mean)
    and the fill becomes a fixed-hue color whose saturation is
    TOY_SAT_LO + (TOY_SAT_HI - TOY_SAT_LO) * alpha. Pixels where the
    binarized mask is 0 are returned bit-identical.
    """

    deterministic = True
    reentrant = True
    binarizes_mask = True
    mask_threshold = 0.5

    def __init__(self, toy_mode: bool = False, conditioning_dim: int = 16):
        self.toy_mode = toy_mode
        self.conditioning_dim = conditioning_dim

    def inpaint(
        self,
        image: np.ndarray,
        mask: np.ndarray,
        prompt: str = "",
        conditioning: np.ndarray | None = None,
        seed: int = 0,
        negative_prompt: str = "",
        guidance_scale: float = 7.0,
        denoising_strength: float = 0.6,
        sampler: str = "DPM++ 2M Karras",
        depth: np.ndarray | None = None,
    ) -> np.ndarray:
        if mask.shape != image.shape[:2]:
            raise BackendError(f"mask shape {mask.shape} does not match image {image.shape[:2]}")
        support = np.asarray(mask, dtype=np.float64) >= self.mask_threshold
        out = image.copy()
        if not support.any():
            return out
        if conditioning is not None and self.toy_mode:
            alpha = float(np.clip(np.mean(np.asarray(conditioning, dtype=np.float64)), 0.0, 1.0))
            sat = TOY_SAT_LO + (TOY_SAT_HI - TOY_SAT_LO) * alpha
            hue = _keyed_unit(f"hue:{seed}")
            value = TOY_VALUE_LO + (TOY_VALUE_HI - TOY_VALUE_LO) * _keyed_unit(f"value:{seed}")
            color = imageio.hsv_rgb(hue, sat, value)
        else:
            color = _keyed_color(f"fill:{seed}:{conditioning_hash(conditioning)}")
        out[support] = np.asarray(color, dtype=np.uint8)
        return out


class MockInversionTrainer:
    """Canonical polarity embeddings: all-ones for positive, all-zeros for negative.

    Blending them makes the mixture mean recover alpha exactly, which the
    toy-mode inpainter relies on.
    """

    deterministic = True
    reentrant = True

    def __init__(self, conditioning_dim: int = 16):
        self.conditioning_dim = conditioning_dim

    def train(
        self,
        images,
        polarity: str,
        group: str | None = None,
        batch_size: int = 1,
        learning_rate: float = 5e-3,
    ) -> np.ndarray:
        if not images:
            raise ValidationError("inversion training needs at least one exemplar image")
        if polarity == "positive":
            return np.ones(self.conditioning_dim, dtype=np.float64)
        return np.zeros(self.conditioning_dim, dtype=np.float64)


class MockUpscaler:
    """Bicubic stand-in for a super-resolution model."""

    deterministic = True
    reentrant = True

    def __init__(self, factor: int = 2):
        if factor < 2:
            raise ValidationError("upscaler factor must be >= 2")
        self.factor = factor

    def upscale(self, image: np.ndarray) -> np.ndarray:
        h, w = image.shape[:2]
        return imageio.resize(image, (w * self.factor, h * self.factor))


class MockDepth:
    """Content-independent vertical ramp: 0 at the top row, 1 at the bottom.

    Any image, including a constant-color one, yields this same field.
    """

    deterministic = True
    reentrant = True

    def estimate(self, image: np.ndarray) -> np.ndarray:
        h, w = image.shape[:2]
        if h == 1:
            return np.zeros((1, w), dtype=np.float64)
        column = np.arange(h, dtype=np.float64) / (h - 1)
        return np.repeat(column[:, None], w, axis=1)


class MockEncoder(nn.Module):
    """Fixed-seed random projection of downsampled pixels.

    Weak on purpose: a trainable head on top must still be able to learn,
    and stage-two fine-tuning can update the projection itself.
    """

    deterministic = True
    reentrant = True

    def __init__(self, output_dim: int = 64, patch: int = 8, input_size: int = 64, seed: int = 0):
        super().__init__()
        self.output_dim = output_dim
        self.patch = patch
        self.input_size = input_size
        self.seed = seed
        self.proj = nn.Linear(3 * patch * patch, output_dim, dtype=torch.float64)
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            self.proj.weight.normal_(0.0, (3 * patch * patch) ** -0.5, generator=gen)
            self.proj.bias.zero_()

    def spec(self) -> dict:
        return {
            "id": "mock",
            "output_dim": self.output_dim,
            "patch": self.patch,
            "input_size": self.input_size,
            "seed": self.seed,
        }

    def prepare(self, image: np.ndarray) -> torch.Tensor:
        """uint8 HWC image -> float64 CHW tensor at the encoder's input size."""
        if image.shape[:2] != (self.input_size, self.input_size):
            image = imageio.resize(
                image, (self.input_size, self.input_size), imageio.RESAMPLE_BILINEAR
            )
        arr = image.astype(np.float64) / 255.0
        return torch.from_numpy(arr).permute(2, 0, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        pooled = F.adaptive_avg_pool2d(x, self.patch)
        return self.proj(pooled.flatten(1))


class MockImageSource:
    """Serves a local directory tree: <corpus>/<query-slug>/<rank>.png."""

    deterministic = True
    reentrant = True

    def __init__(self, corpus, name: str = "mock"):
        self.corpus = Path(corpus)
        self.name = name

    def search(self, query, top_k: int) -> list[np.ndarray]:
        folder = self.corpus / query.slug
        if not folder.is_dir():
            return []
        files = sorted(
            (p for p in folder.iterdir() if p.suffix.lower() == ".png"),
            key=lambda p: (0, int(p.stem)) if p.stem.isdigit() else (1, p.stem),
        )
        return [imageio.load_image(p) for p in files[:top_k]]


@register_backend("captioner", "mock")
def _make_captioner(options):
    return MockCaptioner(captions=options.get("captions"), default=options.get("default", ""))


@register_backend("segmenter", "mock")
def _make_segmenter(options):
    return MockSegmenter()


@register_backend("inpainter", "mock")
def _make_inpainter(options):
    return MockInpainter(toy_mode=False, conditioning_dim=options.get("conditioning_dim", 16))


@register_backend("inpainter", "mock-toy")
def _make_toy_inpainter(options):
    return MockInpainter(toy_mode=True, conditioning_dim=options.get("conditioning_dim", 16))


@register_backend("inversion_trainer", "mock")
def _make_inversion_trainer(options):
    return MockInversionTrainer(conditioning_dim=options.get("conditioning_dim", 16))


@register_backend("upscaler", "mock")
def _make_upscaler(options):
    return MockUpscaler(factor=options.get("factor", 2))


@register_backend("depth", "mock")
def _make_depth(options):
    return MockDepth()


@register_backend("encoder", "mock")
def _make_encoder(options):
    return MockEncoder(
        output_dim=options.get("output_dim", 64),
        patch=options.get("patch", 8),
        input_size=options.get("input_size", 64),
        seed=options.get("seed", 0),
    )


@register_backend("image_source", "mock")
def _make_image_source(options):
    if "corpus" not in options:
        raise ValidationError("mock image_source needs a 'corpus' directory option")
    return MockImageSource(options["corpus"], name=options.get("name", "mock"))


def mock_contracts() -> dict:
    """Documented behavior table for every mock implementation."""
    return {
        "captioner": {
            "id": "mock",
            "behavior": "fixed caption map keyed by image id; unmapped ids -> configured default",
        },
        "segmenter": {
            "id": "mock",
            "behavior": "returns image channel (stable_hash(phrase) mod 3) scaled to [0,1]",
        },
        "inpainter": {
            "id": "mock / mock-toy",
            "behavior": (
                "binarizes the mask at 0.5 and fills it with a solid color keyed by "
                "(seed, conditioning hash); unmasked pixels are bit-identical; in toy mode "
                "a conditioning vector encodes alpha = clamp(mean, 0, 1) and the fill "
                "saturation is TOY_SAT_LO + (TOY_SAT_HI - TOY_SAT_LO) * alpha"
            ),
            "constants": {
                "mask_threshold": 0.5,
                "toy_saturation_alpha0": TOY_SAT_LO,
                "toy_saturation_alpha1": TOY_SAT_HI,
                "toy_value_range": [TOY_VALUE_LO, TOY_VALUE_HI],
            },
        },
        "inversion_trainer": {
            "id": "mock",
            "behavior": "positive -> all-ones vector, negative -> all-zeros vector "
            "of the configured conditioning dimension",
        },
        "upscaler": {
            "id": "mock",
            "behavior": "bicubic x-factor resize (default factor 2)",
        },
        "depth": {
            "id": "mock",
            "behavior": "content-independent vertical ramp, 0 at top to 1 at bottom",
        },
        "encoder": {
            "id": "mock",
            "behavior": "adaptive-average-pool to patch x patch, then a fixed-seed "
            "random linear projection to output_dim (same dim for any input size)",
        },
        "image_source": {
            "id": "mock",
            "behavior": "serves <corpus>/<query-slug>/<rank>.png in rank order",
        },
    }
