"""Regression metrics reported for each data split."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np

from .errors import DataError

COLUMNS = ("loss", "mae", "rmse", "mape", "msle", "smape", "r2")
_EPS = 1e-7


@dataclass
class MetricsRow:
    loss: float
    mae: float
    rmse: float
    mape: float
    msle: float
    smape: float
    r2: float
    split: str = ""
    msle_shift: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def huber(err: np.ndarray, delta: float = 1.0) -> float:
    a = np.abs(err)
    return float(np.mean(np.where(a <= delta, 0.5 * a * a, delta * (a - 0.5 * delta))))


def compute_metrics(y_true, y_pred, huber_delta: float = 1.0, split: str = "") -> MetricsRow:
    """Huber loss, MAE, RMSE, MAPE (%), MSLE, sMAPE (%) and R^2.

    MSLE shifts both series by ``1 + |min|`` of the pooled values (recorded as
    ``msle_shift``) so that scaled data with negative values stays in the
    log domain.
    """
    y = np.asarray(y_true, dtype=np.float64).ravel()
    p = np.asarray(y_pred, dtype=np.float64).ravel()
    if y.shape != p.shape:
        raise DataError(f"length mismatch: {y.size} true vs {p.size} predicted")
    if y.size == 0:
        raise DataError("metrics need at least one value")
    if not (np.isfinite(y).all() and np.isfinite(p).all()):
        raise DataError("metrics need finite values")
    err = y - p
    mse = float(np.mean(err * err))
    shift = 1.0 + abs(float(min(y.min(), p.min())))
    msle = float(np.mean(np.square(np.log1p(y + shift) - np.log1p(p + shift))))
    ss_tot = float(np.sum(np.square(y - y.mean())))
    r2 = 1.0 - float(np.sum(err * err)) / ss_tot if ss_tot > 0 else float("nan")
    return MetricsRow(
        loss=huber(err, huber_delta),
        mae=float(np.mean(np.abs(err))),
        rmse=float(np.sqrt(mse)),
        mape=100.0 * float(np.mean(np.abs(err) / np.maximum(np.abs(y), _EPS))),
        msle=msle,
        smape=100.0 * float(np.mean(2.0 * np.abs(err) / np.maximum(np.abs(y) + np.abs(p), _EPS))),
        r2=r2,
        split=split,
        msle_shift=shift,
    )


def format_table(rows: Iterable[MetricsRow], label: str = "split") -> str:
    rows = list(rows)
    head = f"{label:<12}" + "".join(f"{c:>12}" for c in COLUMNS)
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r.split:<12}" + "".join(f"{getattr(r, c):>12.4f}" for c in COLUMNS))
    return "\n".join(lines)
