"""Displacement metrics, best-of-K reduction, the MSE search objective and
the per-index win histogram fed back into prompts.

An *instance* is one agent in one window. Best-of-K is taken per instance.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import NonFiniteValue, ShapeMismatch, TrajforgeError

K_SAMPLES = 20


class EmptySampleAxis(TrajforgeError, ValueError):
    pass


class IndexOutOfRange(TrajforgeError, ValueError):
    pass


@dataclass
class ScoreReport:
    min_ade: float
    min_fde: float
    objective_j: float
    per_agent_best_k: list[int] = field(default_factory=list)

    def to_record(self) -> dict:
        """Flat key-value form used in the run log (best-k list omitted)."""
        return {
            "min_ade": self.min_ade,
            "min_fde": self.min_fde,
            "objective_j": self.objective_j,
            "instances": len(self.per_agent_best_k),
        }


@dataclass(frozen=True)
class SflHistogram:
    counts: tuple[int, ...]
    total: int

    def __post_init__(self):
        if sum(self.counts) != self.total:
            raise ValueError("histogram counts must sum to total")

    def to_dict(self) -> dict:
        return {"counts": list(self.counts), "total": self.total}

    @classmethod
    def from_dict(cls, d: dict) -> "SflHistogram":
        return cls(tuple(int(c) for c in d["counts"]), int(d["total"]))


def _check_pair(pred: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape[-truth.ndim:] != truth.shape or pred.shape[-1] != 2:
        raise ShapeMismatch(f"prediction shape {pred.shape} does not match truth {truth.shape}")
    if not (np.isfinite(pred).all() and np.isfinite(truth).all()):
        raise NonFiniteValue("non-finite coordinate in prediction or truth")
    return pred, truth


def ade(pred, truth) -> np.ndarray:
    """Per-agent mean Euclidean displacement over the horizon.

    Leading sample axes on ``pred`` broadcast, so ``[K, A, T, 2]`` against
    ``[A, T, 2]`` gives ``[K, A]``.
    """
    pred, truth = _check_pair(pred, truth)
    return np.linalg.norm(pred - truth, axis=-1).mean(axis=-1)


def fde(pred, truth) -> np.ndarray:
    pred, truth = _check_pair(pred, truth)
    return np.linalg.norm(pred[..., -1, :] - truth[..., -1, :], axis=-1)


def mse(pred, truth) -> np.ndarray:
    """Per-agent mean squared displacement over the horizon."""
    pred, truth = _check_pair(pred, truth)
    return ((pred - truth) ** 2).sum(axis=-1).mean(axis=-1)


def min_over_k(scores) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=float)
    if scores.ndim == 0 or scores.shape[0] == 0:
        raise EmptySampleAxis("need at least one sample along axis 0")
    # np.argmin returns the first minimum: ties resolve to the lowest k.
    arg = np.argmin(scores, axis=0)
    return np.min(scores, axis=0), arg


def objective_j(predictions, truth) -> float:
    """Mean over agents of the best-of-K mean squared displacement."""
    best, _ = min_over_k(mse(predictions, truth))
    return float(best.mean())


def sfl_histogram(argmins: Iterable[int], k: int = K_SAMPLES) -> SflHistogram:
    idx = np.asarray(list(argmins), dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= k):
        raise IndexOutOfRange(f"best-sample index outside [0, {k})")
    counts = np.bincount(idx, minlength=k) if idx.size else np.zeros(k, dtype=int)
    return SflHistogram(tuple(int(c) for c in counts), int(idx.size))


def render_sfl_text(hist: SflHistogram) -> str:
    lines = []
    for i, c in enumerate(hist.counts):
        pct = 100.0 * c / hist.total if hist.total else 0.0
        lines.append(f"k={i}: {c} ({pct:.1f}%)")
    return "\n".join(lines)


@dataclass
class _Accumulator:
    ade: list = field(default_factory=list)
    fde: list = field(default_factory=list)
    mse: list = field(default_factory=list)
    best_k: list = field(default_factory=list)


def score_windows(predictions: Sequence[np.ndarray], truths: Sequence[np.ndarray]) -> ScoreReport:
    """Aggregate best-of-K metrics over many windows.

    ``predictions[i]`` is ``[K, A_i, T, 2]`` and ``truths[i]`` is ``[A_i, T, 2]``.
    Each metric is minimised over K independently per instance, then averaged
    over all instances. ``per_agent_best_k`` records the min-ADE winner.
    """
    if len(predictions) != len(truths):
        raise ShapeMismatch(f"{len(predictions)} prediction sets for {len(truths)} windows")
    acc = _Accumulator()
    for pred, truth in zip(predictions, truths):
        ade_min, ade_arg = min_over_k(ade(pred, truth))
        acc.ade.append(ade_min)
        acc.best_k.append(ade_arg)
        acc.fde.append(min_over_k(fde(pred, truth))[0])
        acc.mse.append(min_over_k(mse(pred, truth))[0])
    if not acc.ade:
        return ScoreReport(0.0, 0.0, 0.0, [])
    return ScoreReport(
        min_ade=float(np.concatenate(acc.ade).mean()),
        min_fde=float(np.concatenate(acc.fde).mean()),
        objective_j=float(np.concatenate(acc.mse).mean()),
        per_agent_best_k=[int(k) for k in np.concatenate(acc.best_k)],
    )
