import numpy as np
import pytest

from appeal import imageio
from appeal.backends.mocks import MockEncoder
from appeal.errors import PipelineError, ValidationError
from appeal.labeling import (
    AppealLabel,
    ExemplarSet,
    annotate_dataset,
    resolve_exemplar_images,
    scale_scores,
    select_exemplars,
    vote_score,
)
from appeal.manifest import read_jsonl
from appeal.models import ComparatorModel, comparator_predict
from conftest import make_record, negative_query, positive_query, random_image


def corpus(tmp_path, rng, n_pos, n_neg):
    records = []
    for i in range(n_pos + n_neg):
        image = random_image(rng, 16, 16)
        query = positive_query() if i < n_pos else negative_query()
        record = make_record(image, query=query, rank=i + 1, path=None, fraction=0.5)
        imageio.save_image(image, tmp_path / record.path)
        records.append(record)
    return records


# ------------------------------------------------------------ exemplars


def test_stratified_split(tmp_path, rng):
    records = corpus(tmp_path, rng, 8, 8)
    exemplars = select_exemplars(records, 8, seed=1)
    by_id = {r.id: r for r in records}
    polarities = [by_id[i].query.polarity for i in exemplars.ids]
    assert polarities.count("positive") == 4
    assert polarities.count("negative") == 4


def test_same_seed_same_set(tmp_path, rng):
    records = corpus(tmp_path, rng, 6, 6)
    assert select_exemplars(records, 6, seed=3).ids == select_exemplars(records, 6, seed=3).ids
    assert select_exemplars(records, 6, seed=3).ids != select_exemplars(records, 6, seed=4).ids


def test_exhaustive_selection(tmp_path, rng):
    records = corpus(tmp_path, rng, 2, 2)
    exemplars = select_exemplars(records, 4, seed=0)
    assert sorted(exemplars.ids) == sorted(r.id for r in records)


def test_too_many_exemplars(tmp_path, rng):
    records = corpus(tmp_path, rng, 2, 2)
    with pytest.raises(ValidationError):
        select_exemplars(records, 5, seed=0)


def test_duplicate_ids_rejected():
    with pytest.raises(ValidationError):
        ExemplarSet(ids=("a", "a"), selection_seed=0)


def test_missing_exemplar_file_is_fatal(tmp_path, rng):
    records = corpus(tmp_path, rng, 2, 2)
    exemplars = select_exemplars(records, 4, seed=0)
    (tmp_path / records[0].path).unlink()
    with pytest.raises(ValidationError):
        resolve_exemplar_images(exemplars, records, tmp_path)


# ------------------------------------------------------------ voting


def test_vote_constant_comparator(rng):
    image = random_image(rng)
    exemplar_images = [random_image(rng) for _ in range(5)]
    raw = vote_score(image, exemplar_images, model=None, predict_fn=lambda a, b: 0.3)
    assert raw == pytest.approx(0.3)


def test_vote_arithmetic_mean(rng):
    outcomes = iter([0.2, -0.1, 0.5])
    raw = vote_score(
        random_image(rng),
        [random_image(rng) for _ in range(3)],
        model=None,
        predict_fn=lambda a, b: next(outcomes),
    )
    assert raw == pytest.approx(0.2)


def test_vote_matches_brute_force_double_loop(rng):
    encoder = MockEncoder(output_dim=8, patch=4, input_size=16, seed=2)
    model = ComparatorModel(encoder, head_widths=(16,), seed=3)
    images = [random_image(rng, 16, 16) for _ in range(10)]
    exemplars = [random_image(rng, 16, 16) for _ in range(7)]
    for image in images:
        batched = vote_score(image, exemplars, model)
        looped = np.mean([comparator_predict(model, image, v) for v in exemplars])
        assert batched == pytest.approx(looped, abs=1e-9)


def test_vote_linear_in_comparator(rng):
    image = random_image(rng)
    exemplar_images = [random_image(rng) for _ in range(4)]
    rng2 = np.random.default_rng(0)
    outcomes = {id(v): float(rng2.normal()) for v in exemplar_images}
    raw = vote_score(image, exemplar_images, None, predict_fn=lambda a, b: outcomes[id(b)])
    scaled = vote_score(image, exemplar_images, None, predict_fn=lambda a, b: 3.0 * outcomes[id(b)])
    assert scaled == pytest.approx(3.0 * raw)


# ------------------------------------------------------------ scaling


def test_scale_anchor_points():
    labels = scale_scores([("a", -0.5), ("b", 0.0), ("c", 0.5)])
    assert [l.scaled for l in labels] == [1.0, 5.5, 10.0]


def test_scale_degenerate_all_equal():
    labels = scale_scores([("a", 0.2), ("b", 0.2)])
    assert [l.scaled for l in labels] == [5.5, 5.5]


def test_scale_endpoints_exact(rng):
    raws = [(f"i{k}", float(v)) for k, v in enumerate(rng.normal(size=50))]
    labels = scale_scores(raws)
    values = [l.scaled for l in labels]
    assert min(values) == 1.0 and max(values) == 10.0


def test_scale_strictly_monotone(rng):
    raws = [(f"i{k}", float(v)) for k, v in enumerate(rng.normal(size=30))]
    labels = scale_scores(raws)
    for (_, ra), la in zip(raws, labels):
        for (_, rb), lb in zip(raws, labels):
            if ra < rb:
                assert la.scaled < lb.scaled


def test_scale_invariant_to_positive_affine(rng):
    raws = [float(v) for v in rng.normal(size=40)]
    base = scale_scores([(f"i{k}", v) for k, v in enumerate(raws)])
    mapped = scale_scores([(f"i{k}", 2.5 * v + 7.0) for k, v in enumerate(raws)])
    for a, b in zip(base, mapped):
        assert b.scaled == pytest.approx(a.scaled, abs=1e-9)


def test_scale_preserves_order_of_input():
    labels = scale_scores([("z", 1.0), ("a", 0.0)])
    assert [l.image_id for l in labels] == ["z", "a"]


# ------------------------------------------------------------ annotate


def test_annotate_endpoints_and_manifest(tmp_path, rng):
    records = corpus(tmp_path, rng, 10, 10)
    exemplars = select_exemplars(records, 6, seed=0)
    manifest = tmp_path / "labeled.jsonl"
    values = {r.id: float(i) for i, r in enumerate(records)}

    def fake_predict(image, exemplar):
        return values[imageio.content_id(image)]

    labels = annotate_dataset(
        records, exemplars, None, tmp_path, predict_fn=fake_predict, manifest_path=manifest
    )
    assert len(labels) == 20
    scaled = [l.scaled for l in labels]
    assert min(scaled) == 1.0 and max(scaled) == 10.0
    rows = read_jsonl(manifest)
    assert {row["image_id"] for row in rows} == {r.id for r in records}


def test_annotate_cache_resume_identical(tmp_path, rng):
    records = corpus(tmp_path, rng, 4, 4)
    exemplars = select_exemplars(records, 4, seed=0)
    cache = tmp_path / "cache.jsonl"
    calls = []

    def fake_predict(image, exemplar):
        calls.append(1)
        return float(len(calls))

    first = annotate_dataset(
        records, exemplars, None, tmp_path, predict_fn=fake_predict, cache_path=cache
    )
    n_calls = len(calls)
    second = annotate_dataset(
        records, exemplars, None, tmp_path, predict_fn=fake_predict, cache_path=cache
    )
    assert len(calls) == n_calls  # cached raws: no new comparator work
    assert [(l.image_id, l.raw, l.scaled) for l in first] == [
        (l.image_id, l.raw, l.scaled) for l in second
    ]


def test_annotate_failure_budget(tmp_path, rng):
    records = corpus(tmp_path, rng, 10, 10)
    exemplars = select_exemplars(records, 4, seed=0)
    bad = {r.id for r in records[5:10]}

    def flaky_predict(image, exemplar):
        if imageio.content_id(image) in bad:
            raise RuntimeError("broken")
        return 0.1

    with pytest.raises(PipelineError, match="failures"):
        annotate_dataset(
            records, exemplars, None, tmp_path, predict_fn=flaky_predict, retries=0
        )


def test_scaled_bounds_validated():
    with pytest.raises(ValidationError):
        AppealLabel("x", 0.0, 11.0)
