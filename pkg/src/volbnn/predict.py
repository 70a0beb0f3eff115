"""Monte-Carlo predictive distribution and its aleatoric/epistemic split."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import NumericalError
from .nets import VAR_FLOOR, ForecastModel, split_output

DEFAULT_MC_SAMPLES = 500


@dataclass
class PredictiveSamples:
    mu: np.ndarray  # [T, n]
    sigma2: np.ndarray  # [T, n]

    def __post_init__(self):
        self.mu = np.atleast_2d(np.asarray(self.mu, dtype=np.float64))
        self.sigma2 = np.atleast_2d(np.asarray(self.sigma2, dtype=np.float64))
        if self.mu.shape != self.sigma2.shape:
            raise ValueError("mu and sigma2 must have the same [T, n] shape")
        if self.mu.shape[0] < 1:
            raise ValueError("need at least one Monte-Carlo pass")

    @property
    def T(self) -> int:
        return self.mu.shape[0]


@dataclass
class UncertaintyReport:
    mean: np.ndarray
    aleatoric: np.ndarray
    epistemic: np.ndarray
    total: np.ndarray

    @property
    def total_std(self) -> np.ndarray:
        return np.sqrt(self.total)


def mc_predict(
    model: ForecastModel,
    x,
    T: int = DEFAULT_MC_SAMPLES,
    generator: torch.Generator | None = None,
    batch_size: int = 4096,
) -> PredictiveSamples:
    """T stochastic passes, each with a fresh draw of the variational layer.

    Only the output layer is stochastic (dropout is off in eval mode), so the
    backbone features are computed once and the head is resampled ``T`` times.
    Point-mode models report the variance floor as their aleatoric variance.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    dtype = next(model.parameters()).dtype
    xs = torch.as_tensor(np.asarray(x), dtype=dtype)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            feats = torch.cat([model.backbone.features(xs[i:i + batch_size])
                               for i in range(0, len(xs), batch_size)])
            mus, vars_ = [], []
            for _ in range(T):
                out = model.apply_head(feats, generator)
                if model.head_mode == "distributional":
                    m, v = split_output(out)
                else:
                    m, v = out[:, 0], torch.full_like(out[:, 0], VAR_FLOOR)
                mus.append(m)
                vars_.append(v)
    finally:
        model.train(was_training)
    mu = torch.stack(mus).numpy().astype(np.float64)
    # float32 rounding can land just below the floor
    sigma2 = np.maximum(torch.stack(vars_).numpy().astype(np.float64), VAR_FLOOR)
    if not (np.isfinite(mu).all() and np.isfinite(sigma2).all()):
        raise NumericalError("non-finite Monte-Carlo predictions")
    return PredictiveSamples(mu, sigma2)


def decompose_uncertainty(samples: PredictiveSamples) -> UncertaintyReport:
    """Mean of the per-pass variances (aleatoric) plus the population
    variance of the per-pass means (epistemic)."""
    mean = samples.mu.mean(axis=0)
    aleatoric = samples.sigma2.mean(axis=0)
    epistemic = np.square(samples.mu - mean).mean(axis=0)
    return UncertaintyReport(mean=mean, aleatoric=aleatoric, epistemic=epistemic, total=aleatoric + epistemic)
