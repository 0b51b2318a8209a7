"""Image loading/saving, content hashing, and small color helpers.

Images travel through the pipeline as uint8 RGB arrays of shape (H, W, 3).
"""

import colorsys
import hashlib
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ValidationError

RESAMPLE_BICUBIC = Image.BICUBIC
RESAMPLE_BILINEAR = Image.BILINEAR


def load_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, SyntaxError, ValueError) as exc:
        raise ValidationError(f"cannot decode image {path}: {exc}") from exc


def save_image(image: np.ndarray, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(image), "RGB").save(path, format="PNG")


def content_id(image: np.ndarray) -> str:
    """Hash of decoded pixel content, independent of file format or URL."""
    h = hashlib.sha256()
    h.update(f"{image.shape[0]}x{image.shape[1]}".encode())
    h.update(np.ascontiguousarray(image).tobytes())
    return h.hexdigest()[:16]


def resize(image: np.ndarray, size: tuple[int, int], resample=RESAMPLE_BICUBIC) -> np.ndarray:
    """Resize to (width, height)."""
    im = Image.fromarray(image, "RGB").resize(size, resample)
    return np.asarray(im, dtype=np.uint8)


def saturation(image: np.ndarray) -> np.ndarray:
    """Per-pixel HSV saturation in [0, 1]."""
    arr = image.astype(np.float64) / 255.0
    maxc = arr.max(axis=2)
    minc = arr.min(axis=2)
    out = np.zeros_like(maxc)
    nonzero = maxc > 0
    out[nonzero] = (maxc[nonzero] - minc[nonzero]) / maxc[nonzero]
    return out


def solid(height: int, width: int, rgb) -> np.ndarray:
    out = np.empty((height, width, 3), dtype=np.uint8)
    out[:, :] = np.asarray(rgb, dtype=np.uint8)
    return out


def hsv_rgb(h: float, s: float, v: float) -> tuple[int, int, int]:
    r, g, b = colorsys.hsv_to_rgb(h, s, v)
    return int(round(r * 255)), int(round(g * 255)), int(round(b * 255))
