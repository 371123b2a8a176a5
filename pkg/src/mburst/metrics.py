"""Mask-quality metrics and the firing-rate energy measure."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .tensor import DimensionError, DomainError, as_tensor

CSV_HEADER = ("epoch", "split", "f1", "accuracy", "energy_rate")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    split: str
    f1: float
    accuracy: float
    energy_rate: float

    def __post_init__(self):
        vals = (self.f1, self.accuracy, self.energy_rate)
        if not all(np.isfinite(vals)):
            raise DomainError(f"non-finite metric in {self}")
        if not (0 <= self.f1 <= 1 and 0 <= self.accuracy <= 100 and 0 <= self.energy_rate <= 1):
            raise DomainError(f"metric out of range in {self}")


def _binary_pair(pred, true):
    p, t = as_tensor(pred), as_tensor(true)
    if p.shape != t.shape:
        raise DimensionError(f"pred {p.shape} vs true {t.shape}")
    for name, x in (("pred", p), ("true", t)):
        if not np.isin(x, (0.0, 1.0)).all():
            raise DomainError(f"{name} mask is not binary")
    return p.astype(bool), t.astype(bool)


def f1_score(pred_mask, true_mask) -> float:
    p, t = _binary_pair(pred_mask, true_mask)
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def accuracy(pred_mask, true_mask) -> float:
    """Percentage of matching mask entries."""
    p, t = _binary_pair(pred_mask, true_mask)
    return 100.0 * np.count_nonzero(p == t) / p.size


def energy_rate(activations) -> float:
    """Fraction of hidden units with a strictly positive event rate.

    ``activations`` is a list of per-layer event-rate tensors (head excluded);
    every unit of every sample counts once.
    """
    acts = list(activations)
    if not acts:
        raise DomainError("energy_rate needs at least one layer")
    active = sum(int(np.count_nonzero(as_tensor(a) > 0)) for a in acts)
    total = sum(as_tensor(a).size for a in acts)
    return active / total


class ActivityCounter:
    """Accumulates :func:`energy_rate` numerators/denominators across batches."""

    def __init__(self):
        self.active = 0
        self.total = 0

    def add(self, activations) -> None:
        for a in activations:
            self.active += int(np.count_nonzero(a > 0))
            self.total += a.size

    @property
    def rate(self) -> float:
        if not self.total:
            raise DomainError("no activity recorded")
        return self.active / self.total


def auc_energy(records) -> float:
    """Trapezoidal area under energy_rate over the epoch index."""
    recs = list(records)
    if len(recs) < 2:
        raise DomainError("auc_energy needs at least two epochs")
    x = np.array([r.epoch for r in recs], dtype=np.float64)
    if np.any(np.diff(x) <= 0):
        raise DomainError("records must be sorted by strictly increasing epoch")
    y = np.array([r.energy_rate for r in recs], dtype=np.float64)
    return float(np.trapezoid(y, x))


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow([r.epoch, r.split, f"{r.f1:.6f}", f"{r.accuracy:.4f}", f"{r.energy_rate:.6f}"])
    return buf.getvalue()


def records_from_csv(text: str) -> list[EpochRecord]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return [EpochRecord(int(r["epoch"]), r["split"], float(r["f1"]), float(r["accuracy"]), float(r["energy_rate"])) for r in rows]
