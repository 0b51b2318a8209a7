"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines as they execute.
"""

import time
from contextlib import contextmanager
from dataclasses import replace

import numpy as np
import pytest

from appeal.appealmap import EnhanceConfig, HeatmapConfig, build_heatmap, enhance, patch_scores
from appeal.backends.mocks import MockInpainter
from appeal.fields import ScalarField
from appeal.harness import toy_harness
from appeal.labeling import scale_scores
from appeal.manifest import read_jsonl
from appeal.metrics import correlations, reference_results
from appeal.models import TrainConfig, TrainStage
from appeal.relevancy import area_filter
from appeal.synthesis import (
    PolarityEmbedding,
    adjust_appeal,
    blend,
    diversify_background,
    sample_alpha,
)
from conftest import make_record, random_image
from test_appealmap import brute_force_heatmap, mean_intensity
from test_metrics import (
    oracle_kendall_tau_b,
    oracle_mae,
    oracle_pearson,
    oracle_rmse,
    oracle_spearman,
)

ACCEPTANCE_SEED = 0


@contextmanager
def criterion(number, description):
    try:
        yield
    except BaseException:
        print(f"FAIL criterion {number}: {description}")
        raise
    print(f"PASS criterion {number}: {description}")


@pytest.fixture(scope="module")
def harness_run(tmp_path_factory):
    """One full-scale toy run shared by criteria 1, 2, and 10."""
    workdir = tmp_path_factory.mktemp("accept-main")
    start = time.monotonic()
    report, artifacts = toy_harness(seed=ACCEPTANCE_SEED, n_images=500, workdir=workdir)
    elapsed = time.monotonic() - start
    return report, artifacts, elapsed, workdir


def test_criterion_01_toy_end_to_end(harness_run, tmp_path):
    report, _, elapsed, _ = harness_run
    with criterion(1, "toy end-to-end SRCC and negative control"):
        assert report.srcc >= 0.9, f"trained SRCC {report.srcc:.4f} < 0.9"
        assert elapsed < 600, f"harness took {elapsed:.0f}s, budget is 10 minutes"
        negative, _ = toy_harness(
            seed=ACCEPTANCE_SEED,
            n_images=500,
            workdir=tmp_path / "negative",
            train_config=TrainConfig.zero_epochs(),
        )
        assert abs(negative.srcc) <= 0.3, f"negative control |SRCC| {abs(negative.srcc):.4f} > 0.3"


def test_criterion_02_pair_target_oracle(harness_run):
    _, artifacts, _, _ = harness_run
    with criterion(2, "pair targets equal manifest alpha differences, symmetric multiset"):
        alpha_by_path = {
            row["path"]: row["alpha"] for row in read_jsonl(artifacts["synthetic_manifest"])
        }
        pairs = read_jsonl(artifacts["pairs_manifest"])
        assert len(pairs) >= 1000, f"only {len(pairs)} pairs generated"
        for row in pairs:
            expected = alpha_by_path[row["image_a_path"]] - alpha_by_path[row["image_b_path"]]
            assert row["target"] == expected  # exact, not approximate
        targets = sorted(row["target"] for row in pairs)
        mirrored = sorted(-row["target"] for row in pairs)
        assert targets == mirrored


def test_criterion_03_scaling_contract(rng):
    with criterion(3, "scale_scores endpoints, order preservation, affine invariance"):
        for _ in range(50):
            n = int(rng.integers(3, 200))
            raws = [float(v) for v in rng.normal(size=n) * rng.uniform(0.1, 100)]
            if max(raws) == min(raws):
                continue
            labels = scale_scores([(f"i{k}", v) for k, v in enumerate(raws)])
            scaled = [l.scaled for l in labels]
            assert min(scaled) == 1.0 and max(scaled) == 10.0
            assert correlations(raws, scaled).srcc == pytest.approx(1.0, abs=1e-12)
            a = float(rng.uniform(0.1, 10))
            b = float(rng.normal() * 10)
            mapped = scale_scores([(f"i{k}", a * v + b) for k, v in enumerate(raws)])
            for orig, new in zip(labels, mapped):
                assert abs(new.scaled - orig.scaled) <= 1e-9


def test_criterion_04_filter_oracle(rng):
    with criterion(4, "area_filter matches pixel-count oracle on 50 crafted masks"):
        gamma = 0.4
        cases = []
        for _ in range(44):
            h, w = int(rng.integers(4, 48)), int(rng.integers(4, 48))
            mask = (rng.uniform(size=(h, w)) < rng.uniform()).astype(np.float64)
            cases.append(mask)
        for offset in (-2, -1, 0, 1, 2, 3):  # masks straddling the threshold
            mask = np.zeros((10, 10))
            mask.reshape(-1)[: int(gamma * 100) + offset] = 1.0
            cases.append(mask)
        assert len(cases) == 50
        for mask in cases:
            h, w = mask.shape
            record = make_record(random_image(rng, h, w), status="fetched", fraction=None)
            _, keep = area_filter(record, ScalarField(mask), gamma)
            oracle_keep = int(mask.sum()) >= gamma * h * w
            assert keep == oracle_keep


def test_criterion_05_heatmap_oracle(rng):
    with criterion(5, "heatmap matches brute-force oracle; degenerate and affine cases"):
        cfg = HeatmapConfig(window=8, stride=4)
        for _ in range(10):
            image = random_image(rng, 16, 16)
            grid = patch_scores(image, cfg, mean_intensity)
            got = build_heatmap(image, grid, cfg)
            expected = brute_force_heatmap(image, cfg, mean_intensity)
            assert np.abs(got.values - expected).max() <= 1e-9
            scaled_grid = replace(grid, scores=float(rng.uniform(0.1, 9)) * grid.scores + 4.2)
            affine = build_heatmap(image, scaled_grid, cfg)
            assert np.abs(affine.values - got.values).max() <= 1e-9
        constant = patch_scores(random_image(rng, 16, 16), cfg, lambda p: 7.0)
        assert not build_heatmap(random_image(rng, 16, 16), constant, cfg).values.any()


def test_criterion_06_mask_locality(rng):
    with criterion(6, "inpainting wrappers never touch pixels outside mask support"):
        z_pos = PolarityEmbedding(np.ones(8), "positive", None, ("x",))
        inpainter = MockInpainter(toy_mode=True)
        for index in range(100):
            h, w = int(rng.integers(8, 32)), int(rng.integers(8, 32))
            image = random_image(rng, h, w)
            soft = rng.uniform(size=(h, w)) * (rng.uniform(size=(h, w)) < 0.5)
            field = ScalarField(soft)
            op = index % 3
            if op == 0:
                out = diversify_background(image, field, seed=index, inpainter=inpainter)
                outside = (1.0 - field.values) < 0.5
            elif op == 1:
                out = adjust_appeal(image, "a blob", np.ones(8), field, index, inpainter)
                outside = field.values < 0.5
            else:
                out = enhance(
                    image, "a blob", z_pos, field, None, EnhanceConfig(seed=index),
                    inpainter, object_type="blob",
                )
                outside = field.values == 0.0
            assert np.array_equal(out[outside], image[outside])
        image = random_image(rng, 16, 16)
        identity = enhance(
            image, "a blob", z_pos, ScalarField.zeros(16, 16), None, EnhanceConfig(),
            inpainter, object_type="blob",
        )
        assert np.array_equal(identity, image)


def test_criterion_07_metrics_oracle(rng):
    with criterion(7, "correlations match brute-force implementation within 1e-9"):
        for _ in range(100):
            n = int(rng.integers(5, 50))
            x = rng.normal(size=n)
            y = rng.normal(size=n)
            if rng.uniform() < 0.25:
                x = np.round(x, 1)
                y = np.round(y, 1)
            if np.ptp(x) == 0 or np.ptp(y) == 0:
                continue
            report = correlations(x, y)
            lx, ly = list(x), list(y)
            assert abs(report.plcc - oracle_pearson(lx, ly)) <= 1e-9
            assert abs(report.srcc - oracle_spearman(lx, ly)) <= 1e-9
            assert abs(report.krcc - oracle_kendall_tau_b(lx, ly)) <= 1e-9
            assert abs(report.rmse - oracle_rmse(lx, ly)) <= 1e-9
            assert abs(report.mae - oracle_mae(lx, ly)) <= 1e-9
        identity = correlations([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert (identity.plcc, identity.srcc, identity.krcc) == (1.0, 1.0, 1.0)
        assert identity.rmse == 0.0 and identity.mae == 0.0
        reversal = correlations([1.0, 2.0, 3.0], [3.0, 2.0, 1.0])
        assert reversal.srcc == -1.0 and reversal.krcc == -1.0
        x = rng.normal(size=40)
        y = rng.normal(size=40)
        base = correlations(x, y)
        warped = correlations(np.exp(x), y**3)
        assert abs(warped.srcc - base.srcc) <= 1e-12
        assert abs(warped.krcc - base.krcc) <= 1e-12


def test_criterion_08_formula_fidelity(rng):
    with criterion(8, "blend endpoints/linearity and alpha clamp formula"):
        for _ in range(20):
            dim = int(rng.integers(2, 64))
            z_pos = PolarityEmbedding(rng.normal(size=dim), "positive", None, ("x",))
            z_neg = PolarityEmbedding(rng.normal(size=dim), "negative", "g", ("y",))
            assert np.array_equal(blend(z_pos, z_neg, 1.0), z_pos.vector)
            assert np.array_equal(blend(z_pos, z_neg, 0.0), z_neg.vector)
            alpha = float(rng.uniform())
            total = blend(z_pos, z_neg, alpha) + blend(z_pos, z_neg, 1.0 - alpha)
            assert np.abs(total - (z_pos.vector + z_neg.vector)).max() <= 1e-7
        for _ in range(10_000):
            k = int(rng.integers(0, 3))
            delta = float(rng.uniform(-0.2, 0.2))
            assert sample_alpha(k, delta) == max(min(k / 2 + delta, 1.0), 0.0)


def test_criterion_09_configuration_fidelity():
    with criterion(9, "default train/enhance configs match the published recipe"):
        stages = TrainConfig.default().stages
        assert stages == (
            TrainStage(freeze_encoder=True, epochs=10, learning_rate=1e-3, batch_size=16),
            TrainStage(freeze_encoder=False, epochs=10, learning_rate=1e-5, batch_size=16),
        )
        assert TrainConfig.default().optimizer == "adamw"
        cfg = EnhanceConfig()
        assert cfg.denoising_strength == 0.6
        assert cfg.guidance_scale == 7.0
        assert cfg.sampler == "DPM++ 2M Karras"
        assert cfg.depth_conditioning is True
        assert cfg.depth_preprocessor == "depth_midas"
        assert cfg.negative_prompt.startswith("out of frame, lowres, text, error,")
        assert cfg.negative_prompt.endswith("username, watermark, signature,")
        reference = reference_results()
        assert reference["food"]["estimator_mae"] == 0.6756
        assert reference["room"]["estimator_mae"] == 0.6332
        assert reference["food"]["user_preference_enhanced_pct"] == 76.53
        assert reference["room"]["user_preference_enhanced_pct"] == 82.74
        assert reference["food"]["iaa_correlations"]["DIAA"]["srcc"] == 0.162


def test_trained_comparator_near_antisymmetric(harness_run):
    """Not a numbered criterion: residual asymmetry stays small on toy runs."""
    import json

    _, artifacts, _, _ = harness_run
    payload = json.loads(artifacts["report"].read_text())
    assert payload["diagnostics"]["self_difference_mean"] <= 0.1
    assert payload["diagnostics"]["swap_asymmetry_mean"] <= 0.2


def test_criterion_10_determinism(harness_run, tmp_path):
    _, artifacts, _, _ = harness_run
    with criterion(10, "same seed reproduces byte-identical manifests and reports"):
        _, artifacts_again = toy_harness(
            seed=ACCEPTANCE_SEED, n_images=500, workdir=tmp_path / "again"
        )
        for key in (
            "corpus_manifest",
            "synthetic_manifest",
            "pairs_manifest",
            "labeled_manifest",
            "report",
        ):
            first = artifacts[key].read_bytes()
            second = artifacts_again[key].read_bytes()
            assert first == second, f"{key} differs between same-seed runs"
