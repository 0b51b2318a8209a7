"""Per-pixel scalar fields in [0, 1].

The same type carries domain-relevancy maps (where do domain objects sit)
and appeal heatmaps (how unappealing is each region).
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import PipelineError, ValidationError


@dataclass(frozen=True)
class ScalarField:
    values: np.ndarray  # (H, W) float64 in [0, 1]

    def __post_init__(self):
        v = self.values
        if v.ndim != 2:
            raise ValidationError(f"scalar field must be 2-D, got shape {v.shape}")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValidationError("scalar field values must lie in [0, 1]")
        if v.dtype != np.float64:
            object.__setattr__(self, "values", v.astype(np.float64))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_raw(cls, values: np.ndarray) -> "ScalarField":
        """Clamp an arbitrary backend output into [0, 1] at the module boundary."""
        arr = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
        return cls(arr)

    @classmethod
    def zeros(cls, height: int, width: int) -> "ScalarField":
        return cls(np.zeros((height, width), dtype=np.float64))

    @classmethod
    def ones(cls, height: int, width: int) -> "ScalarField":
        return cls(np.ones((height, width), dtype=np.float64))

    def matches_image(self, image: np.ndarray) -> bool:
        return image.shape[:2] == self.values.shape

    def require_matches(self, image: np.ndarray) -> None:
        if not self.matches_image(image):
            raise PipelineError(
                f"field shape {self.values.shape} does not match image {image.shape[:2]}"
            )

    def binarize(self, threshold: float = 0.5) -> np.ndarray:
        """Boolean mask: value >= threshold."""
        return self.values >= threshold

    def save_png(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        gray = np.round(self.values * 255.0).astype(np.uint8)
        Image.fromarray(gray, "L").save(path, format="PNG")

    @classmethod
    def load_png(cls, path) -> "ScalarField":
        with Image.open(path) as im:
            gray = np.asarray(im.convert("L"), dtype=np.float64)
        return cls(gray / 255.0)
