"""Per-area RMSE/MAE on held-out entries."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import AREAS, AreaSplit, InputBuilder, SparseRatings
from .errors import NoDataError


def rmse(residuals) -> float:
    r = np.asarray(residuals, dtype=np.float64)
    if r.size == 0:
        raise NoDataError("rmse of an empty residual list")
    return float(np.sqrt(np.mean(r * r)))


def mae(residuals) -> float:
    r = np.asarray(residuals, dtype=np.float64)
    if r.size == 0:
        raise NoDataError("mae of an empty residual list")
    return float(np.mean(np.abs(r)))


@dataclass(frozen=True)
class AreaResult:
    count: int
    rmse: float | None
    mae: float | None


@dataclass(frozen=True)
class AreaMetrics:
    areas: dict  # label -> AreaResult

    def __getitem__(self, label) -> AreaResult:
        return self.areas[label]

    def to_csv(self) -> str:
        lines = ["area,rmse,mae,count"]
        for label in AREAS:
            res = self.areas[label]
            fmt = lambda v: "" if v is None else f"{v:.6f}"
            lines.append(f"{label},{fmt(res.rmse)},{fmt(res.mae)},{res.count}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())

    def table(self) -> str:
        out = [f"{'area':<6}{'RMSE':>10}{'MAE':>10}{'count':>10}"]
        for label in AREAS:
            res = self.areas[label]
            r = "-" if res.rmse is None else f"{res.rmse:.4f}"
            m = "-" if res.mae is None else f"{res.mae:.4f}"
            out.append(f"{label:<6}{r:>10}{m:>10}{res.count:>10}")
        return "\n".join(out)


def metrics_from_predictions(data: SparseRatings, split: AreaSplit, idx, preds) -> AreaMetrics:
    """Aggregate residuals of entries ``idx`` (predicted as ``preds``) by area."""
    idx = np.asarray(idx, dtype=np.int64)
    resid = np.asarray(preds, dtype=np.float64) - data.values[idx]
    areas = split.area[idx]
    out = {}
    for a, label in enumerate(AREAS):
        r = resid[areas == a]
        if r.size:
            out[label] = AreaResult(int(r.size), rmse(r), mae(r))
        else:
            out[label] = AreaResult(0, None, None)
    return AreaMetrics(out)


def evaluate(model, data: SparseRatings, split: AreaSplit) -> AreaMetrics:
    """Predict every held-out entry with all held-out entries masked from the inputs.

    ``model`` is anything with a ``predict_entries(data, split, rows, cols,
    exclude=..., builder=...)`` method: the neural model or a baseline.
    """
    split.check_compatible(data)
    heldout = split.heldout
    idx = np.flatnonzero(heldout)
    builder = InputBuilder(data, split, heldout)
    preds = model.predict_entries(data, split, data.rows[idx], data.cols[idx],
                                  exclude=heldout, builder=builder)
    return metrics_from_predictions(data, split, idx, preds)
