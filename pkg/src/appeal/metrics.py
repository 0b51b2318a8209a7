"""Correlation and error metrics between two score sets.

Used to compare appeal labels against external predictions (e.g. aesthetics
baselines). Tie handling follows the standard conventions: average ranks
for the Spearman coefficient, tau-b for the Kendall coefficient.
"""

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import ValidationError


class UndefinedCorrelationError(ValidationError):
    """Correlation is undefined when either input has zero variance."""


@dataclass(frozen=True)
class MetricReport:
    plcc: float
    srcc: float
    krcc: float
    rmse: float
    mae: float
    n: int

    def to_dict(self) -> dict:
        return {
            "plcc": self.plcc,
            "srcc": self.srcc,
            "krcc": self.krcc,
            "rmse": self.rmse,
            "mae": self.mae,
            "n": self.n,
        }

    def table(self, label: str = "pred-vs-ref") -> str:
        lines = [f"{'':6s} {label}"]
        for name, value in (
            ("PLCC", self.plcc),
            ("SRCC", self.srcc),
            ("KRCC", self.krcc),
            ("RMSE", self.rmse),
            ("MAE", self.mae),
        ):
            lines.append(f"{name:6s} {value:.4f}")
        return "\n".join(lines)


def average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the average of their rank span."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    dx = x - x.mean()
    dy = y - y.mean()
    return float((dx * dy).sum() / np.sqrt((dx * dx).sum() * (dy * dy).sum()))


def _kendall_tau_b(x: np.ndarray, y: np.ndarray) -> float:
    dx = np.sign(x[:, None] - x[None, :])
    dy = np.sign(y[:, None] - y[None, :])
    upper = np.triu_indices(len(x), k=1)
    concordance = dx[upper] * dy[upper]
    concordant = float((concordance > 0).sum())
    discordant = float((concordance < 0).sum())
    n0 = len(x) * (len(x) - 1) / 2.0
    ties_x = n0 - float((dx[upper] != 0).sum())
    ties_y = n0 - float((dy[upper] != 0).sum())
    denom = np.sqrt((n0 - ties_x) * (n0 - ties_y))
    return float((concordant - discordant) / denom)


def correlations(x, y) -> MetricReport:
    """PLCC, SRCC, KRCC plus RMSE and MAE between two equal-length lists."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError(f"inputs must be equal-length vectors, got {x.shape} / {y.shape}")
    if len(x) < 2:
        raise ValidationError("correlations need at least 2 points")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValidationError("inputs must be finite")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise UndefinedCorrelationError("zero variance: correlation undefined")
    return MetricReport(
        plcc=_pearson(x, y),
        srcc=_pearson(average_ranks(x), average_ranks(y)),
        krcc=_kendall_tau_b(x, y),
        rmse=float(np.sqrt(np.mean((x - y) ** 2))),
        mae=float(np.mean(np.abs(x - y))),
        n=len(x),
    )


def reference_results() -> dict:
    """Full-scale reference metrics recorded from the original food/room
    dataset runs; desk-scale runs cannot reproduce them and should compare
    shapes, not values."""
    path = resources.files("appeal.data") / "reference_results.json"
    return json.loads(path.read_text(encoding="utf-8"))
