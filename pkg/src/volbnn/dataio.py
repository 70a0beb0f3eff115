"""Price-series ingestion, descriptive statistics, robust scaling and windowing."""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError

__all__ = [
    "PriceSeries",
    "DescriptiveStats",
    "RobustScalerParams",
    "WindowedSplit",
    "load_csv",
    "write_csv",
    "descriptive_stats",
    "fit_robust_scaler",
    "scale",
    "inverse_scale",
    "make_windows",
    "split_sizes",
    "chrono_split",
    "build_windowed_split",
    "acf",
    "pacf",
    "naive_forecast",
    "synthetic_ar2_series",
]


@dataclass(frozen=True)
class PriceSeries:
    dates: tuple[dt.date, ...]
    closes: np.ndarray

    def __post_init__(self):
        closes = np.asarray(self.closes, dtype=np.float64)
        object.__setattr__(self, "closes", closes)
        object.__setattr__(self, "dates", tuple(self.dates))
        if closes.ndim != 1 or len(closes) != len(self.dates):
            raise DataError("dates and closes must be 1-d and of equal length")
        if len(closes) == 0:
            raise DataError("empty series")
        if not np.all(np.isfinite(closes)) or np.any(closes <= 0):
            raise DataError("closes must be finite and positive")
        for a, b in zip(self.dates, self.dates[1:]):
            if b <= a:
                raise DataError(f"dates not increasing: {a} followed by {b}")

    def __len__(self) -> int:
        return len(self.closes)


@dataclass(frozen=True)
class DescriptiveStats:
    count: int
    mean: float
    std: float
    min: float
    q25: float
    q50: float
    q75: float
    max: float
    iqr: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RobustScalerParams:
    median: float
    iqr: float

    def __post_init__(self):
        if not self.iqr > 0:
            raise DataError("robust scaler requires iqr > 0")


@dataclass
class WindowedSplit:
    window_size: int
    x_train: np.ndarray
    y_train: np.ndarray
    x_valid: np.ndarray
    y_valid: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    scaler: RobustScalerParams
    # position of each target in the original series
    idx_train: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    idx_valid: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    idx_test: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    def sizes(self) -> tuple[int, int, int]:
        return len(self.y_train), len(self.y_valid), len(self.y_test)

    def part(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        if name not in ("train", "valid", "test"):
            raise KeyError(name)
        return getattr(self, f"x_{name}"), getattr(self, f"y_{name}")


def load_csv(path: str | Path) -> PriceSeries:
    """Read a ``Date``/``Close`` CSV (extra columns are ignored)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    dates, closes = [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"Date", "Close"} <= set(reader.fieldnames):
            raise DataError(f"{path}: header must contain Date and Close columns")
        for lineno, row in enumerate(reader, start=2):
            raw_date, raw_close = (row["Date"] or "").strip(), (row["Close"] or "").strip()
            try:
                d = dt.date.fromisoformat(raw_date)
            except ValueError:
                raise DataError(f"{path}:{lineno}: unparsable date {raw_date!r}") from None
            try:
                c = float(raw_close)
            except ValueError:
                raise DataError(f"{path}:{lineno}: unparsable number {raw_close!r}") from None
            if not math.isfinite(c):
                raise DataError(f"{path}:{lineno}: missing or non-finite close")
            if dates and d <= dates[-1]:
                raise DataError(f"{path}:{lineno}: dates not increasing ({dates[-1]} then {d})")
            dates.append(d)
            closes.append(c)
    if not dates:
        raise DataError(f"{path}: empty series")
    return PriceSeries(tuple(dates), np.array(closes))


def write_csv(series: PriceSeries, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["Date", "Close"])
        for d, c in zip(series.dates, series.closes):
            w.writerow([d.isoformat(), repr(float(c))])


def _as_values(series) -> np.ndarray:
    if isinstance(series, PriceSeries):
        return series.closes
    return np.asarray(series, dtype=np.float64)


def descriptive_stats(series) -> DescriptiveStats:
    """Location/dispersion summary; quantiles use linear interpolation
    between order statistics and ``std`` the n-1 denominator (0 for n=1)."""
    v = _as_values(series)
    if v.size == 0:
        raise DataError("empty series")
    q25, q50, q75 = np.quantile(v, [0.25, 0.5, 0.75], method="linear")
    std = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
    return DescriptiveStats(
        count=int(v.size),
        mean=float(np.mean(v)),
        std=std,
        min=float(np.min(v)),
        q25=float(q25),
        q50=float(q50),
        q75=float(q75),
        max=float(np.max(v)),
        iqr=float(q75 - q25),
    )


def fit_robust_scaler(train_values) -> RobustScalerParams:
    v = _as_values(train_values)
    if v.size < 4:
        raise DataError("robust scaler needs at least 4 training values")
    q25, q50, q75 = np.quantile(v, [0.25, 0.5, 0.75], method="linear")
    iqr = float(q75 - q25)
    if iqr <= 0:
        raise DataError("training segment has zero interquartile range")
    return RobustScalerParams(median=float(q50), iqr=iqr)


def scale(values, params: RobustScalerParams):
    return (np.asarray(values, dtype=np.float64) - params.median) / params.iqr


def inverse_scale(scaled, params: RobustScalerParams):
    return np.asarray(scaled, dtype=np.float64) * params.iqr + params.median


def make_windows(series, window_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Row ``i`` is ``values[i:i+w]``; its target is ``values[i+w]``."""
    v = _as_values(series)
    if window_size < 1:
        raise DataError("window_size must be positive")
    if v.size <= window_size:
        raise DataError(f"series too short: {v.size} values for window {window_size}")
    n = v.size - window_size
    inputs = np.lib.stride_tricks.sliding_window_view(v, window_size)[:n].copy()
    return inputs, v[window_size:].copy()


def split_sizes(n: int, fractions: Sequence[float] = (0.8, 0.1, 0.1)) -> tuple[int, int, int]:
    """floor(n*f) for valid and test; the remainder goes to train."""
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise DataError("fractions must be three nonnegative numbers")
    if not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise DataError(f"fractions must sum to 1, got {sum(fractions)}")
    if n < 3:
        raise DataError("need at least 3 items to split")
    # small epsilon keeps 0.1*2500 from flooring to 249
    n_valid = int(math.floor(n * fractions[1] + 1e-9))
    n_test = int(math.floor(n * fractions[2] + 1e-9))
    n_train = n - n_valid - n_test
    if min(n_train, n_valid, n_test) < 1:
        raise DataError(f"split of {n} items by {tuple(fractions)} leaves an empty part")
    return n_train, n_valid, n_test


def chrono_split(
    inputs: np.ndarray,
    targets: np.ndarray,
    fractions: Sequence[float] = (0.8, 0.1, 0.1),
    scaler: RobustScalerParams | None = None,
) -> WindowedSplit:
    """Split already-built windows into contiguous chronological blocks."""
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if len(inputs) != len(targets):
        raise DataError("inputs and targets differ in length")
    if len(inputs) < 3:
        raise DataError("fewer than 3 windows")
    n_tr, n_va, _ = split_sizes(len(inputs), fractions)
    idx = np.arange(len(inputs))
    a, b = n_tr, n_tr + n_va
    return WindowedSplit(
        window_size=inputs.shape[1],
        x_train=inputs[:a], y_train=targets[:a],
        x_valid=inputs[a:b], y_valid=targets[a:b],
        x_test=inputs[b:], y_test=targets[b:],
        scaler=scaler if scaler is not None else RobustScalerParams(0.0, 1.0),
        idx_train=idx[:a], idx_valid=idx[a:b], idx_test=idx[b:],
    )


def build_windowed_split(
    series,
    window_size: int = 20,
    fractions: Sequence[float] = (0.8, 0.1, 0.1),
) -> WindowedSplit:
    """Full preprocessing: split observations, fit the scaler on train, window.

    Observations are split first (2500 -> 2000/250/250).  A window belongs to
    the part that holds its target; validation and test windows may look back
    into the preceding part for their inputs, so they keep every target.  The
    first ``window_size`` training observations only serve as inputs.
    """
    v = _as_values(series)
    n_tr, n_va, n_te = split_sizes(v.size, fractions)
    if n_tr <= window_size:
        raise DataError(f"training part ({n_tr}) not longer than window {window_size}")
    params = fit_robust_scaler(v[:n_tr])
    scaled = scale(v, params)
    inputs, targets = make_windows(scaled, window_size)
    tgt_pos = np.arange(window_size, v.size)
    tr = tgt_pos < n_tr
    va = (tgt_pos >= n_tr) & (tgt_pos < n_tr + n_va)
    te = tgt_pos >= n_tr + n_va
    return WindowedSplit(
        window_size=window_size,
        x_train=inputs[tr], y_train=targets[tr],
        x_valid=inputs[va], y_valid=targets[va],
        x_test=inputs[te], y_test=targets[te],
        scaler=params,
        idx_train=tgt_pos[tr], idx_valid=tgt_pos[va], idx_test=tgt_pos[te],
    )


def acf(series, max_lag: int) -> np.ndarray:
    x = _as_values(series)
    if max_lag >= x.size:
        raise DataError("max_lag must be smaller than the series length")
    d = x - x.mean()
    denom = float(d @ d)
    if denom == 0:
        raise DataError("zero-variance series")
    return np.array([float(d[: x.size - k] @ d[k:]) / denom for k in range(max_lag + 1)])


def pacf(series, max_lag: int) -> np.ndarray:
    """Partial autocorrelations by the Durbin-Levinson recursion."""
    r = acf(series, max_lag)
    out = np.zeros(max_lag + 1)
    out[0] = 1.0
    if max_lag == 0:
        return out
    phi = np.zeros(max_lag + 1)
    phi[1] = r[1]
    out[1] = r[1]
    v = 1.0 - r[1] ** 2
    for k in range(2, max_lag + 1):
        prev = phi[1:k].copy()
        a = (r[k] - prev @ r[k - 1:0:-1]) / v
        phi[1:k] = prev - a * prev[::-1]
        phi[k] = a
        out[k] = a
        v *= 1.0 - a * a
    return out


def naive_forecast(series) -> np.ndarray:
    """Persistence forecast: the prediction for t is the value at t-1 (t >= 1)."""
    v = _as_values(series)
    if v.size < 2:
        raise DataError("naive forecast needs at least 2 values")
    return v[:-1].copy()


def synthetic_ar2_series(
    n: int = 2500,
    phi: tuple[float, float] = (1.2, -0.25),
    noise: float = 1.0,
    level: float = 18.0,
    seed: int = 0,
    start: dt.date = dt.date(2013, 8, 22),
) -> PriceSeries:
    """Positive AR(2) series on business days, for tests and demos."""
    rng = np.random.default_rng(seed)
    burn = 200
    x = np.zeros(n + burn)
    eps = rng.normal(0.0, noise, n + burn)
    for t in range(2, n + burn):
        x[t] = phi[0] * x[t - 1] + phi[1] * x[t - 2] + eps[t]
    x = x[burn:]
    closes = level + x
    if closes.min() <= 0:
        closes += 1.0 - closes.min()
    dates = []
    d = start
    while len(dates) < n:
        if d.weekday() < 5:
            dates.append(d)
        d += dt.timedelta(days=1)
    return PriceSeries(tuple(dates), closes)
