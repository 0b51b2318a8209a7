"""Relative comparator and absolute estimator: architecture and training.

Both models share the pattern: a pluggable image encoder feeding a small
fully connected head. The comparator runs two inputs through one shared
encoder, concatenates the features, and regresses the appeal difference;
the estimator regresses a single absolute score on the 1-10 label scale.

Everything runs in float64: desk-scale models are tiny, and the oracle
tests compare batched inference against brute-force loops at 1e-9.
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import imageio
from .errors import PipelineError, ValidationError
from .seeding import derive_rng
from .synthesis import SyntheticSample

log = logging.getLogger(__name__)

DTYPE = torch.float64


@dataclass(frozen=True)
class PairExample:
    image_a_path: str
    image_b_path: str
    target: float  # alpha_a - alpha_b
    base_id: str

    def __post_init__(self):
        if not -1.0 <= self.target <= 1.0:
            raise ValidationError(f"pair target must lie in [-1, 1], got {self.target}")

    def to_dict(self) -> dict:
        return {
            "image_a_path": self.image_a_path,
            "image_b_path": self.image_b_path,
            "target": self.target,
            "base_id": self.base_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PairExample":
        return cls(d["image_a_path"], d["image_b_path"], d["target"], d["base_id"])


def make_pairs(
    samples: list[SyntheticSample], per_base_pairs: int, seed: int
) -> list[PairExample]:
    """Sample unordered within-base pairs, then emit both orderings.

    The reversed copy with negated target is the order augmentation that
    pushes the concat head toward antisymmetry.
    """
    if per_base_pairs < 1:
        raise ValidationError(f"per_base_pairs must be >= 1, got {per_base_pairs}")
    by_base: dict[str, list[SyntheticSample]] = {}
    for sample in samples:
        by_base.setdefault(sample.base_id, []).append(sample)

    pairs: list[PairExample] = []
    for base_id in sorted(by_base):
        group = sorted(by_base[base_id], key=lambda s: s.id)
        n = len(group)
        if n < 2:
            log.warning("base %s has %d sample(s); skipping pair sampling", base_id, n)
            continue
        combos = [(i, j) for i in range(n) for j in range(i + 1, n)]
        rng = derive_rng(seed, "pairs", base_id)
        order = rng.permutation(len(combos))
        for idx in order[: min(per_base_pairs, len(combos))]:
            i, j = combos[idx]
            a, b = group[i], group[j]
            pairs.append(PairExample(a.path, b.path, a.alpha - b.alpha, base_id))
            pairs.append(PairExample(b.path, a.path, b.alpha - a.alpha, base_id))
    return pairs


@dataclass(frozen=True)
class TrainStage:
    freeze_encoder: bool
    epochs: int
    learning_rate: float
    batch_size: int

    def __post_init__(self):
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    stages: tuple[TrainStage, ...]
    optimizer: str = "adamw"
    seed: int = 0

    def __post_init__(self):
        if not self.stages:
            raise ValidationError("training needs at least one stage")
        if self.optimizer != "adamw":
            raise ValidationError(f"unsupported optimizer {self.optimizer!r}")

    @classmethod
    def default(cls, seed: int = 0) -> "TrainConfig":
        """Two-stage schedule: frozen encoder first, then full fine-tune."""
        return cls(
            stages=(
                TrainStage(freeze_encoder=True, epochs=10, learning_rate=1e-3, batch_size=16),
                TrainStage(freeze_encoder=False, epochs=10, learning_rate=1e-5, batch_size=16),
            ),
            seed=seed,
        )

    @classmethod
    def zero_epochs(cls, seed: int = 0) -> "TrainConfig":
        """Negative-control schedule: the model never takes a step."""
        default = cls.default(seed=seed)
        return cls(
            stages=tuple(
                TrainStage(s.freeze_encoder, 0, s.learning_rate, s.batch_size)
                for s in default.stages
            ),
            seed=seed,
        )

    def to_dict(self) -> dict:
        return {
            "stages": [
                {
                    "freeze_encoder": s.freeze_encoder,
                    "epochs": s.epochs,
                    "learning_rate": s.learning_rate,
                    "batch_size": s.batch_size,
                }
                for s in self.stages
            ],
            "optimizer": self.optimizer,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(
            stages=tuple(
                TrainStage(
                    freeze_encoder=s["freeze_encoder"],
                    epochs=s["epochs"],
                    learning_rate=s["learning_rate"],
                    batch_size=s["batch_size"],
                )
                for s in d["stages"]
            ),
            optimizer=d.get("optimizer", "adamw"),
            seed=d.get("seed", 0),
        )


def _build_head(in_dim: int, widths: tuple[int, ...], seed: int) -> nn.Sequential:
    gen = torch.Generator().manual_seed(seed)
    layers: list[nn.Module] = []
    prev = in_dim
    for width in widths:
        layers.append(nn.Linear(prev, width, dtype=DTYPE))
        layers.append(nn.ReLU())
        prev = width
    layers.append(nn.Linear(prev, 1, dtype=DTYPE))
    head = nn.Sequential(*layers)
    with torch.no_grad():
        for module in head:
            if isinstance(module, nn.Linear):
                bound = 1.0 / math.sqrt(module.in_features)
                module.weight.uniform_(-bound, bound, generator=gen)
                module.bias.uniform_(-bound, bound, generator=gen)
    return head


class ComparatorModel(nn.Module):
    """Siamese appeal-difference regressor: one shared encoder, concat head."""

    def __init__(self, encoder: nn.Module, head_widths: tuple[int, ...] = (512, 128), seed: int = 0):
        super().__init__()
        self.encoder = encoder  # both branches run this same module
        self.head_widths = tuple(head_widths)
        self.head = _build_head(2 * encoder.output_dim, self.head_widths, seed)

    def forward(self, xa: torch.Tensor, xb: torch.Tensor) -> torch.Tensor:
        fa = self.encoder(xa)
        fb = self.encoder(xb)
        return self.head(torch.cat([fa, fb], dim=1)).squeeze(-1)

    def score_features(self, fa: torch.Tensor, fb: torch.Tensor) -> torch.Tensor:
        return self.head(torch.cat([fa, fb], dim=1)).squeeze(-1)


class EstimatorModel(nn.Module):
    """Absolute appeal regressor on the 1-10 label scale."""

    def __init__(self, encoder: nn.Module, head_widths: tuple[int, ...] = (512, 128), seed: int = 0):
        super().__init__()
        self.encoder = encoder
        self.head_widths = tuple(head_widths)
        self.head = _build_head(encoder.output_dim, self.head_widths, seed)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.encoder(x)).squeeze(-1)


def _as_image(image) -> np.ndarray:
    if isinstance(image, (str, Path)):
        return imageio.load_image(image)
    return image


class TensorCache:
    """Prepared-tensor cache keyed by image path; repeated epochs reuse it."""

    def __init__(self, encoder, root: Path | None = None):
        self.encoder = encoder
        self.root = Path(root) if root is not None else None
        self._cache: dict[str, torch.Tensor] = {}

    def get(self, path: str) -> torch.Tensor:
        tensor = self._cache.get(path)
        if tensor is None:
            full = self.root / path if self.root is not None else Path(path)
            tensor = self.encoder.prepare(imageio.load_image(full))
            self._cache[path] = tensor
        return tensor

    def batch(self, paths) -> torch.Tensor:
        return torch.stack([self.get(p) for p in paths])


def _split_by_group(items, group_of, seed: int, val_fraction: float):
    """Deterministic held-out split that never splits a group across sides."""
    groups = sorted({group_of(item) for item in items})
    if val_fraction <= 0 or len(groups) < 2:
        return list(items), []
    val_groups = {
        g for g in groups if derive_rng(seed, "valsplit", g).uniform() < val_fraction
    }
    if not val_groups or len(val_groups) == len(groups):
        return list(items), []
    train = [item for item in items if group_of(item) not in val_groups]
    val = [item for item in items if group_of(item) in val_groups]
    return train, val


def _run_training(model, cfg, train_items, val_items, batch_forward, checkpoint=None):
    """Shared stage loop: freeze/unfreeze, AdamW, L1 objective, loss trace."""
    trace: list[dict] = []
    for stage_index, stage in enumerate(cfg.stages):
        for param in model.encoder.parameters():
            param.requires_grad_(not stage.freeze_encoder)
        params = [p for p in model.parameters() if p.requires_grad]
        optimizer = torch.optim.AdamW(params, lr=stage.learning_rate)
        for epoch in range(stage.epochs):
            model.train()
            order = derive_rng(cfg.seed, "order", stage_index, epoch).permutation(len(train_items))
            total = 0.0
            count = 0
            for start in range(0, len(order), stage.batch_size):
                batch = [train_items[i] for i in order[start : start + stage.batch_size]]
                optimizer.zero_grad()
                loss = batch_forward(batch)
                if not torch.isfinite(loss):
                    raise PipelineError(
                        f"non-finite loss at stage {stage_index} epoch {epoch} "
                        f"batch {start // stage.batch_size} (lr={stage.learning_rate})"
                    )
                loss.backward()
                optimizer.step()
                total += float(loss.detach()) * len(batch)
                count += len(batch)
            train_loss = total / count
            val_loss = None
            if val_items:
                model.eval()
                with torch.no_grad():
                    val_loss = float(batch_forward(val_items).detach())
            trace.append(
                {
                    "stage": stage_index,
                    "epoch": epoch,
                    "train_loss": train_loss,
                    "val_loss": val_loss,
                }
            )
        if checkpoint is not None:
            checkpoint(stage_index)
    model.eval()
    return trace


def train_comparator(
    model: ComparatorModel,
    pairs: list[PairExample],
    cfg: TrainConfig,
    image_root: Path | None = None,
    val_fraction: float = 0.05,
    checkpoint_dir: Path | None = None,
) -> tuple[ComparatorModel, list[dict]]:
    """Minimize mean |predicted - assumed| appeal difference over the pairs."""
    if not pairs:
        raise ValidationError("no training pairs")
    cache = TensorCache(model.encoder, image_root)
    train_items, val_items = _split_by_group(pairs, lambda p: p.base_id, cfg.seed, val_fraction)

    def batch_forward(batch):
        xa = cache.batch([p.image_a_path for p in batch])
        xb = cache.batch([p.image_b_path for p in batch])
        targets = torch.tensor([p.target for p in batch], dtype=DTYPE)
        return torch.mean(torch.abs(model(xa, xb) - targets))

    def checkpoint(stage_index):
        if checkpoint_dir is not None:
            save_checkpoint(
                model, Path(checkpoint_dir) / f"comparator_stage{stage_index}.pt", cfg
            )

    trace = _run_training(model, cfg, train_items, val_items, batch_forward, checkpoint)
    return model, trace


def train_estimator(
    model: EstimatorModel,
    labeled: list[tuple],
    cfg: TrainConfig,
    image_root: Path | None = None,
    val_fraction: float = 0.05,
    checkpoint_dir: Path | None = None,
) -> tuple[EstimatorModel, list[dict], float]:
    """Same two-stage procedure over (image path, score) examples.

    Returns the trained model, the loss trace, and the final MAE on the
    held-out split (on the train split when the set is too small to split).
    """
    if not labeled:
        raise ValidationError("no labeled examples")
    for _, score in labeled:
        if not 1.0 <= score <= 10.0:
            raise ValidationError(f"scores must lie in [1, 10], got {score}")
    cache = TensorCache(model.encoder, image_root)
    train_items, val_items = _split_by_group(labeled, lambda ex: ex[0], cfg.seed, val_fraction)

    def batch_forward(batch):
        x = cache.batch([path for path, _ in batch])
        targets = torch.tensor([score for _, score in batch], dtype=DTYPE)
        return torch.mean(torch.abs(model(x) - targets))

    def checkpoint(stage_index):
        if checkpoint_dir is not None:
            save_checkpoint(
                model, Path(checkpoint_dir) / f"estimator_stage{stage_index}.pt", cfg
            )

    trace = _run_training(model, cfg, train_items, val_items, batch_forward, checkpoint)
    with torch.no_grad():
        final_mae = float(batch_forward(val_items if val_items else train_items).detach())
    return model, trace, final_mae


def comparator_predict(model: ComparatorModel, image_a, image_b) -> float:
    """Appeal difference for one (a, b) pair. Unbounded by design."""
    model.eval()
    with torch.no_grad():
        xa = model.encoder.prepare(_as_image(image_a)).unsqueeze(0)
        xb = model.encoder.prepare(_as_image(image_b)).unsqueeze(0)
        return float(model(xa, xb)[0])


def estimator_predict(model: EstimatorModel, image) -> float:
    model.eval()
    with torch.no_grad():
        x = model.encoder.prepare(_as_image(image)).unsqueeze(0)
        return float(model(x)[0])


def estimator_predict_batch(model: EstimatorModel, images) -> np.ndarray:
    model.eval()
    with torch.no_grad():
        x = torch.stack([model.encoder.prepare(_as_image(im)) for im in images])
        return model(x).numpy()


def encode_images(encoder, images) -> torch.Tensor:
    with torch.no_grad():
        x = torch.stack([encoder.prepare(_as_image(im)) for im in images])
        return encoder(x)


def save_checkpoint(model, path: Path, cfg: TrainConfig | None = None, extra: dict | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), path)
    meta = {
        "kind": "comparator" if isinstance(model, ComparatorModel) else "estimator",
        "head_widths": list(model.head_widths),
        "encoder": model.encoder.spec(),
        "training": cfg.to_dict() if cfg is not None else None,
    }
    if extra:
        meta.update(extra)
    path.with_suffix(".json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_checkpoint(path: Path):
    """Rebuild a model from a checkpoint plus its sidecar metadata."""
    from .backends import create_backend

    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    encoder_spec = dict(meta["encoder"])
    encoder = create_backend("encoder", encoder_spec.pop("id"), encoder_spec)
    cls = ComparatorModel if meta["kind"] == "comparator" else EstimatorModel
    model = cls(encoder, head_widths=tuple(meta["head_widths"]))
    model.load_state_dict(torch.load(path, weights_only=True))
    model.eval()
    return model
