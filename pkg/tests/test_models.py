import numpy as np
import pytest
import torch

from appeal import imageio
from appeal.backends.mocks import MockEncoder
from appeal.errors import ValidationError
from appeal.models import (
    ComparatorModel,
    EstimatorModel,
    TrainConfig,
    TrainStage,
    comparator_predict,
    estimator_predict,
    load_checkpoint,
    make_pairs,
    save_checkpoint,
    train_comparator,
    train_estimator,
)
from appeal.synthesis import SyntheticSample


def sample(sid, base, alpha, path=None):
    return SyntheticSample(sid, base, 1, alpha, "g", path or f"{sid}.png")


def tiny_encoder(seed=0):
    return MockEncoder(output_dim=12, patch=4, input_size=16, seed=seed)


def save_gradient_images(tmp_path, rng, n, size=16):
    """Images whose mean intensity is controlled; returns (paths, levels)."""
    paths, levels = [], []
    for i in range(n):
        level = i / max(n - 1, 1)
        base = np.full((size, size, 3), int(40 + 180 * level), np.uint8)
        noise = rng.integers(0, 20, size=(size, size, 3), dtype=np.uint8)
        image = np.clip(base.astype(int) + noise, 0, 255).astype(np.uint8)
        path = tmp_path / f"img{i}.png"
        imageio.save_image(image, path)
        paths.append(str(path))
        levels.append(level)
    return paths, levels


# ------------------------------------------------------------ pairs


def test_pair_targets_and_reversal():
    samples = [sample("a", "b1", 0.8), sample("b", "b1", 0.3)]
    pairs = make_pairs(samples, per_base_pairs=1, seed=0)
    assert len(pairs) == 2
    targets = sorted(p.target for p in pairs)
    assert targets == [-0.5, 0.5]
    assert {p.base_id for p in pairs} == {"b1"}


def test_no_self_pairs():
    samples = [sample(f"s{i}", "b1", i / 4) for i in range(5)]
    pairs = make_pairs(samples, per_base_pairs=10, seed=1)
    assert all(p.image_a_path != p.image_b_path for p in pairs)


def test_three_samples_three_pairs_gives_six():
    samples = [sample(f"s{i}", "b1", i / 2) for i in range(3)]
    pairs = make_pairs(samples, per_base_pairs=3, seed=2)
    assert len(pairs) == 6  # enumeration oracle: C(3,2) ordered both ways


def test_pair_multiset_symmetric_about_zero():
    rng = np.random.default_rng(3)
    samples = [
        sample(f"s{b}-{i}", f"b{b}", float(rng.uniform()))
        for b in range(10)
        for i in range(6)
    ]
    pairs = make_pairs(samples, per_base_pairs=8, seed=4)
    targets = sorted(p.target for p in pairs)
    mirrored = sorted(-p.target for p in pairs)
    assert targets == mirrored


def test_single_sample_base_skipped():
    samples = [sample("s0", "lonely", 0.5), sample("a", "b1", 0.1), sample("b", "b1", 0.9)]
    pairs = make_pairs(samples, per_base_pairs=2, seed=0)
    assert {p.base_id for p in pairs} == {"b1"}


def test_make_pairs_deterministic():
    samples = [sample(f"s{i}", "b1", i / 9) for i in range(10)]
    assert make_pairs(samples, 5, seed=7) == make_pairs(samples, 5, seed=7)
    assert make_pairs(samples, 5, seed=7) != make_pairs(samples, 5, seed=8)


# ------------------------------------------------------------ config


def test_default_schedule_matches_published_recipe():
    cfg = TrainConfig.default()
    assert cfg.optimizer == "adamw"
    first, second = cfg.stages
    assert first == TrainStage(freeze_encoder=True, epochs=10, learning_rate=1e-3, batch_size=16)
    assert second == TrainStage(freeze_encoder=False, epochs=10, learning_rate=1e-5, batch_size=16)


def test_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(stages=())
    with pytest.raises(ValidationError):
        TrainStage(True, 1, -0.1, 4)
    with pytest.raises(ValidationError):
        TrainConfig(stages=(TrainStage(True, 1, 1e-3, 4),), optimizer="sgd")


def test_config_roundtrip():
    cfg = TrainConfig.default(seed=9)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


# ------------------------------------------------------------ architecture


def test_weight_sharing_is_parameter_identity():
    model = ComparatorModel(tiny_encoder())
    encoder_params = {id(p) for p in model.encoder.parameters()}
    # the two branches are the same module object: identical parameter set
    all_params = {id(p) for p in model.parameters()}
    assert encoder_params <= all_params
    assert model.head_widths == (512, 128)


def test_zero_final_layer_gives_zero(rng_img=np.random.default_rng(0)):
    model = ComparatorModel(tiny_encoder())
    last = model.head[-1]
    torch.nn.init.zeros_(last.weight)
    torch.nn.init.zeros_(last.bias)
    image = rng_img.integers(0, 256, (16, 16, 3), dtype=np.uint8)
    assert comparator_predict(model, image, image) == 0.0


def test_comparator_output_unbounded_scalar(rng=np.random.default_rng(1)):
    model = ComparatorModel(tiny_encoder())
    a = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
    b = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
    out = comparator_predict(model, a, b)
    assert isinstance(out, float)


# ------------------------------------------------------------ training


def test_empty_pairs_error():
    model = ComparatorModel(tiny_encoder())
    with pytest.raises(ValidationError):
        train_comparator(model, [], TrainConfig.default())


def test_comparator_overfits_ten_pairs(tmp_path):
    rng = np.random.default_rng(5)
    paths, levels = save_gradient_images(tmp_path, rng, 5)
    samples = [sample(f"s{i}", "b0", levels[i], paths[i]) for i in range(5)]
    pairs = make_pairs(samples, per_base_pairs=5, seed=0)
    cfg = TrainConfig(stages=(TrainStage(False, 200, 1e-3, 4),), seed=0)
    model = ComparatorModel(tiny_encoder(), head_widths=(64, 32), seed=1)
    model, trace = train_comparator(model, pairs, cfg, val_fraction=0.0)
    assert trace[-1]["train_loss"] < 0.05  # overfitting oracle


def test_loss_trace_bitwise_deterministic(tmp_path):
    rng = np.random.default_rng(6)
    paths, levels = save_gradient_images(tmp_path, rng, 6)
    samples = [sample(f"s{i}", f"b{i % 2}", levels[i], paths[i]) for i in range(6)]
    pairs = make_pairs(samples, per_base_pairs=3, seed=0)
    cfg = TrainConfig(stages=(TrainStage(True, 3, 1e-3, 4), TrainStage(False, 2, 1e-4, 4)), seed=3)

    def run():
        model = ComparatorModel(tiny_encoder(seed=2), head_widths=(32,), seed=4)
        _, trace = train_comparator(model, pairs, cfg)
        return trace

    assert run() == run()


def test_loss_nonnegative_and_zero_iff_equal():
    pred = torch.tensor([0.5, -0.2])
    target = torch.tensor([0.5, -0.2])
    assert float(torch.mean(torch.abs(pred - target))) == 0.0
    assert float(torch.mean(torch.abs(pred - target + 0.1))) > 0.0


def test_freeze_then_unfreeze_updates_encoder(tmp_path):
    rng = np.random.default_rng(7)
    paths, levels = save_gradient_images(tmp_path, rng, 4)
    samples = [sample(f"s{i}", "b0", levels[i], paths[i]) for i in range(4)]
    pairs = make_pairs(samples, per_base_pairs=4, seed=0)
    model = ComparatorModel(tiny_encoder(seed=3), head_widths=(16,), seed=5)
    before = model.encoder.proj.weight.detach().clone()
    cfg1 = TrainConfig(stages=(TrainStage(True, 2, 1e-3, 2),), seed=0)
    train_comparator(model, pairs, cfg1, val_fraction=0.0)
    assert torch.equal(model.encoder.proj.weight, before)  # frozen stage: untouched
    cfg2 = TrainConfig(stages=(TrainStage(False, 2, 1e-3, 2),), seed=0)
    train_comparator(model, pairs, cfg2, val_fraction=0.0)
    assert not torch.equal(model.encoder.proj.weight, before)


def test_estimator_overfits_twenty_images(tmp_path):
    rng = np.random.default_rng(8)
    paths, levels = save_gradient_images(tmp_path, rng, 20)
    labeled = [(paths[i], 1.0 + 9.0 * levels[i]) for i in range(20)]
    cfg = TrainConfig(stages=(TrainStage(False, 200, 1e-3, 4),), seed=0)
    model = EstimatorModel(tiny_encoder(seed=9), head_widths=(64, 32), seed=2)
    model, trace, _ = train_estimator(model, labeled, cfg, val_fraction=0.0)
    assert trace[-1]["train_loss"] < 0.1  # overfitting oracle


def test_estimator_rejects_out_of_range_scores(tmp_path):
    model = EstimatorModel(tiny_encoder())
    with pytest.raises(ValidationError):
        train_estimator(model, [("x.png", 11.0)], TrainConfig.default())


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(9)
    model = EstimatorModel(tiny_encoder(seed=4), head_widths=(32,), seed=6)
    save_checkpoint(model, tmp_path / "est.pt", TrainConfig.default(), extra={"final_mae": 0.5})
    loaded = load_checkpoint(tmp_path / "est.pt")
    image = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
    assert estimator_predict(loaded, image) == estimator_predict(model, image)
    meta = (tmp_path / "est.json").read_text()
    assert '"final_mae": 0.5' in meta
