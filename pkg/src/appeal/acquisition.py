"""Thumbnail retrieval, dedup, and normalization to the domain output size.

Records flow through statuses monotonically:
fetched -> filtered_caption | filtered_area | kept, and kept -> dropped_balance.
"""

import logging
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import imageio
from .domain import SearchQuery
from .errors import PipelineError, ValidationError

log = logging.getLogger(__name__)

STATUS_FETCHED = "fetched"
STATUS_FILTERED_CAPTION = "filtered_caption"
STATUS_FILTERED_AREA = "filtered_area"
STATUS_KEPT = "kept"
STATUS_DROPPED_BALANCE = "dropped_balance"

STATUSES = (
    STATUS_FETCHED,
    STATUS_FILTERED_CAPTION,
    STATUS_FILTERED_AREA,
    STATUS_KEPT,
    STATUS_DROPPED_BALANCE,
)

_ALLOWED_TRANSITIONS = {
    STATUS_FETCHED: {STATUS_FILTERED_CAPTION, STATUS_FILTERED_AREA, STATUS_KEPT},
    STATUS_FILTERED_CAPTION: set(),
    STATUS_FILTERED_AREA: set(),
    STATUS_KEPT: {STATUS_DROPPED_BALANCE},
    STATUS_DROPPED_BALANCE: set(),
}

# relevancy_fraction exists exactly once the relevancy map has been computed.
_STATUSES_WITH_FRACTION = {STATUS_FILTERED_AREA, STATUS_KEPT, STATUS_DROPPED_BALANCE}


@dataclass(frozen=True)
class ImageRecord:
    id: str
    source: str
    query: SearchQuery
    rank: int
    path: str
    width: int
    height: int
    caption: str | None = None
    relevancy_fraction: float | None = None
    status: str = STATUS_FETCHED

    def __post_init__(self):
        if self.rank < 1:
            raise ValidationError(f"rank must be >= 1, got {self.rank}")
        if self.status not in STATUSES:
            raise ValidationError(f"unknown status {self.status!r}")
        has_fraction = self.relevancy_fraction is not None
        if has_fraction != (self.status in _STATUSES_WITH_FRACTION):
            raise ValidationError(
                f"relevancy_fraction must be present iff status in {sorted(_STATUSES_WITH_FRACTION)}; "
                f"status={self.status} fraction={self.relevancy_fraction}"
            )
        if has_fraction and not 0.0 <= self.relevancy_fraction <= 1.0:
            raise ValidationError("relevancy_fraction must lie in [0, 1]")

    def with_status(self, status: str, **changes) -> "ImageRecord":
        if status not in _ALLOWED_TRANSITIONS.get(self.status, set()):
            raise PipelineError(f"illegal status transition {self.status} -> {status}")
        return replace(self, status=status, **changes)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "source": self.source,
            "query": self.query.to_dict(),
            "rank": self.rank,
            "path": self.path,
            "width": self.width,
            "height": self.height,
            "caption": self.caption,
            "relevancy_fraction": self.relevancy_fraction,
            "status": self.status,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ImageRecord":
        return cls(
            id=d["id"],
            source=d["source"],
            query=SearchQuery.from_dict(d["query"]),
            rank=d["rank"],
            path=d["path"],
            width=d["width"],
            height=d["height"],
            caption=d.get("caption"),
            relevancy_fraction=d.get("relevancy_fraction"),
            status=d["status"],
        )


@dataclass(frozen=True)
class FetchError:
    query: SearchQuery
    source: str
    error: str

    def to_dict(self) -> dict:
        return {"query": self.query.to_dict(), "source": self.source, "error": self.error}


def fetch_thumbnails(
    queries: list[SearchQuery],
    client,
    top_k: int,
    dest_dir: Path,
    path_prefix: str = "raw",
    delay: float = 0.0,
) -> tuple[list[ImageRecord], list[FetchError]]:
    """Fetch up to top_k thumbnails per query, dedup by pixel content.

    The same asset often appears on several stock sites and under several
    queries; the first occurrence wins. Per-query failures are collected,
    not raised, so one bad query cannot kill a long run. `delay` seconds of
    politeness pause separate consecutive queries against live sources.
    """
    if top_k < 1:
        raise ValidationError(f"top_k must be >= 1, got {top_k}")
    dest_dir = Path(dest_dir)
    dest_dir.mkdir(parents=True, exist_ok=True)

    records: list[ImageRecord] = []
    errors: list[FetchError] = []
    seen: set[str] = set()
    for index, query in enumerate(queries):
        if delay > 0 and index > 0:
            time.sleep(delay)
        try:
            results = client.search(query, top_k)
        except Exception as exc:  # a flaky source must not kill the run
            errors.append(FetchError(query, getattr(client, "name", "?"), str(exc)))
            continue
        if not results:
            log.warning("no results for query %r", query.text)
            continue
        for rank, image in enumerate(results[:top_k], start=1):
            image_id = imageio.content_id(image)
            if image_id in seen:
                continue
            seen.add(image_id)
            imageio.save_image(image, dest_dir / f"{image_id}.png")
            records.append(
                ImageRecord(
                    id=image_id,
                    source=getattr(client, "name", "?"),
                    query=query,
                    rank=rank,
                    path=f"{path_prefix}/{image_id}.png",
                    width=image.shape[1],
                    height=image.shape[0],
                )
            )
    return records, errors


def normalize_array(image: np.ndarray, upscaler, output_size: int) -> np.ndarray:
    """Upscale until the longest side covers output_size, resize it to exactly
    output_size (aspect preserved, short side rounded up), then zero-pad
    symmetrically to a square."""
    h, w = image.shape[:2]
    if h == output_size and w == output_size:
        return image
    while max(image.shape[:2]) < output_size:
        image = upscaler.upscale(image)
    h, w = image.shape[:2]
    if w >= h:
        new_w = output_size
        new_h = min(output_size, math.ceil(output_size * h / w))
    else:
        new_h = output_size
        new_w = min(output_size, math.ceil(output_size * w / h))
    content = imageio.resize(image, (new_w, new_h))
    return pad_to_square(content, output_size)


def pad_to_square(content: np.ndarray, output_size: int) -> np.ndarray:
    h, w = content.shape[:2]
    if h > output_size or w > output_size:
        raise PipelineError(f"content {w}x{h} exceeds output size {output_size}")
    out = np.zeros((output_size, output_size, 3), dtype=np.uint8)
    top = (output_size - h) // 2
    left = (output_size - w) // 2
    out[top : top + h, left : left + w] = content
    return out


def pad_field_to_square(values: np.ndarray, output_size: int) -> np.ndarray:
    h, w = values.shape
    out = np.zeros((output_size, output_size), dtype=np.float64)
    top = (output_size - h) // 2
    left = (output_size - w) // 2
    out[top : top + h, left : left + w] = values
    return out


def normalize_field(field, output_size: int):
    """Apply the image normalization geometry (aspect resize + center pad)
    to a scalar field, so relevancy maps stay aligned with their images."""
    from PIL import Image

    from .fields import ScalarField

    h, w = field.height, field.width
    if (h, w) == (output_size, output_size):
        return field
    if w >= h:
        new_w = output_size
        new_h = min(output_size, math.ceil(output_size * h / w))
    else:
        new_h = output_size
        new_w = min(output_size, math.ceil(output_size * w / h))
    gray = np.round(field.values * 255.0).astype(np.uint8)
    resized = Image.fromarray(gray, "L").resize((new_w, new_h), imageio.RESAMPLE_BILINEAR)
    values = np.asarray(resized, dtype=np.float64) / 255.0
    return ScalarField(pad_field_to_square(values, output_size))


def normalize_image(
    record: ImageRecord,
    upscaler,
    output_size: int,
    src_root: Path,
    dest_dir: Path,
    path_prefix: str = "normalized",
) -> tuple[ImageRecord, np.ndarray]:
    """Normalize one record's image file and rewrite its path/dimensions."""
    image = imageio.load_image(Path(src_root) / record.path)
    normalized = normalize_array(image, upscaler, output_size)
    dest_dir = Path(dest_dir)
    out_path = dest_dir / f"{record.id}.png"
    imageio.save_image(normalized, out_path)
    updated = replace(
        record,
        path=f"{path_prefix}/{record.id}.png",
        width=output_size,
        height=output_size,
    )
    return updated, normalized
