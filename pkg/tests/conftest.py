import numpy as np
import pytest

from appeal import imageio
from appeal.acquisition import STATUS_KEPT, ImageRecord
from appeal.domain import NEGATIVE, POSITIVE, SearchQuery


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, h=32, w=32):
    return rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)


def make_record(image, query=None, rank=1, status=STATUS_KEPT, fraction=0.5, path=None, **kw):
    image_id = imageio.content_id(image)
    if query is None:
        query = SearchQuery("delicious burger", POSITIVE)
    has_fraction = status in ("filtered_area", "kept", "dropped_balance")
    return ImageRecord(
        id=image_id,
        source="test",
        query=query,
        rank=rank,
        path=path or f"raw/{image_id}.png",
        width=image.shape[1],
        height=image.shape[0],
        relevancy_fraction=fraction if has_fraction else None,
        status=status,
        **kw,
    )


def positive_query(noun="burger"):
    return SearchQuery(f"delicious {noun}", POSITIVE)


def negative_query(noun="burger", group="burnt"):
    return SearchQuery(f"burnt {noun}", NEGATIVE, negative_group=group)
