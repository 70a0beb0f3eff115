"""Variational dense layers (reparameterization, Flipout, MNF) and prior KL terms.

All KL helpers return the divergence itself, i.e. the penalty that is *added*
to the loss.  Weights have shape ``[in, out]``; the multiplicative factor
``z`` of MNF scales row ``i`` of the weight mean.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import torch
from torch import Tensor, nn
import torch.nn.functional as F

from .errors import ConfigError, NumericalError
from .flows import FlowStack

METHODS = ("rt", "flipout", "mnf")
PRIORS = ("standard_normal", "standard_cauchy", "log_uniform")

# sigmoid fit of the log-uniform KL; C is chosen so that -KL -> 0 as tau -> inf
LOG_UNIFORM_K1 = 0.63576
LOG_UNIFORM_K2 = 1.87320
LOG_UNIFORM_K3 = 1.48695
LOG_UNIFORM_C = -LOG_UNIFORM_K1
LOG_TAU_CAP = math.log(1e8)

_LOG_2PI = math.log(2 * math.pi)


def _scaled_mean(mu: Tensor, z: Tensor | None) -> Tensor:
    return mu if z is None else z.unsqueeze(-1) * mu


def kl_standard_normal(mu: Tensor, sigma: Tensor, z: Tensor | None = None) -> Tensor:
    """KL(N(z*mu, sigma^2) || N(0, 1)) summed over all weights."""
    m = _scaled_mean(mu, z)
    s2 = sigma.square()
    return 0.5 * (-torch.log(s2) + s2 + m.square() - 1).sum()


def kl_standard_cauchy(mu: Tensor, sigma: Tensor, z: Tensor | None = None) -> Tensor:
    """Closed-form penalty used for a standard Cauchy prior.

    ``log(pi/2) + (-log sigma^2 + sigma^2 + z^2 mu^2)/2`` per weight.  This is
    an upper bound on the exact Gaussian-to-Cauchy divergence (gap >= 0.53
    nats per weight) rather than the divergence itself.
    """
    m = _scaled_mean(mu, z)
    s2 = sigma.square()
    return (math.log(math.pi / 2) + 0.5 * (-torch.log(s2) + s2 + m.square())).sum()


def log_tau(mu: Tensor, sigma: Tensor, z: Tensor | None = None) -> Tensor:
    """log of the per-weight noise ratio sigma^2 / (z*mu)^2, capped above."""
    m = _scaled_mean(mu, z)
    lt = torch.log(sigma.square()) - torch.log(m.square().clamp_min(torch.finfo(m.dtype).tiny))
    return lt.clamp(max=LOG_TAU_CAP)


def neg_kl_log_uniform_from_log_tau(lt: Tensor) -> Tensor:
    """Per-weight approximate -KL against the log-uniform prior."""
    return (
        LOG_UNIFORM_K1 * torch.sigmoid(LOG_UNIFORM_K2 + LOG_UNIFORM_K3 * lt)
        - 0.5 * F.softplus(-lt)  # log(1 + 1/tau)
        + LOG_UNIFORM_C
    )


def kl_log_uniform(mu: Tensor, sigma: Tensor, z: Tensor | None = None) -> Tensor:
    return -neg_kl_log_uniform_from_log_tau(log_tau(mu, sigma, z)).sum()


_KL = {
    "standard_normal": kl_standard_normal,
    "standard_cauchy": kl_standard_cauchy,
    "log_uniform": kl_log_uniform,
}


def prior_kl(prior: str, mu: Tensor, sigma: Tensor, z: Tensor | None = None) -> Tensor:
    try:
        return _KL[prior](mu, sigma, z)
    except KeyError:
        raise ConfigError(f"unknown prior {prior!r}; expected one of {PRIORS}") from None


def elbo_loss(nll, kl, kl_weight: float):
    """Negated ELBO per example: ``nll + kl_weight * kl`` with ``kl_weight = 1/N``."""
    if not kl_weight > 0:
        raise ConfigError("kl_weight must be positive")
    return nll + kl_weight * kl


def gaussian_nll(y: Tensor, mean: Tensor, var: Tensor) -> Tensor:
    return 0.5 * (_LOG_2PI + torch.log(var) + (y - mean).square() / var).mean()


def _rho_for(sigma: float) -> float:
    # inverse softplus
    return math.log(math.expm1(sigma))


class VariationalDense(nn.Module):
    """Mean-field Gaussian dense layer; biases stay deterministic."""

    method = ""

    def __init__(
        self,
        in_features: int,
        out_features: int,
        prior: str = "standard_normal",
        kl_weight: float = 1.0,
        init_sigma: float = 0.05,
    ):
        super().__init__()
        if prior not in PRIORS:
            raise ConfigError(f"unknown prior {prior!r}; expected one of {PRIORS}")
        if not kl_weight > 0:
            raise ConfigError("kl_weight must be positive")
        self.in_features = in_features
        self.out_features = out_features
        self.prior = prior
        self.kl_weight = float(kl_weight)
        bound = 1.0 / math.sqrt(in_features)
        self.mu = nn.Parameter(torch.empty(in_features, out_features).uniform_(-bound, bound))
        self.rho = nn.Parameter(torch.full((in_features, out_features), _rho_for(init_sigma)))
        self.bias = nn.Parameter(torch.empty(out_features).uniform_(-bound, bound))

    @property
    def sigma(self) -> Tensor:
        return F.softplus(self.rho)

    def _noise(self, shape, ref: Tensor, generator: torch.Generator | None) -> Tensor:
        return torch.randn(shape, generator=generator, dtype=ref.dtype, device=ref.device)

    def kl(self, generator: torch.Generator | None = None) -> Tensor:
        return prior_kl(self.prior, self.mu, self.sigma)

    def extra_repr(self) -> str:
        return f"in={self.in_features}, out={self.out_features}, prior={self.prior}"


class DenseReparameterization(VariationalDense):
    """One weight draw ``mu + sigma * eps`` per forward pass, shared by the batch."""

    method = "rt"

    def forward(self, x: Tensor, generator: torch.Generator | None = None, eps: Tensor | None = None) -> Tensor:
        if eps is None:
            eps = self._noise(self.mu.shape, self.mu, generator)
        w = self.mu + self.sigma * eps
        return x @ w + self.bias


class DenseFlipout(VariationalDense):
    """Shared perturbation decorrelated across examples by random sign flips."""

    method = "flipout"

    def forward(self, x: Tensor, generator: torch.Generator | None = None, eps: Tensor | None = None) -> Tensor:
        if eps is None:
            eps = self._noise(self.mu.shape, self.mu, generator)
        delta = self.sigma * eps
        n = x.shape[0]
        s = self._signs((n, self.in_features), x, generator)
        r = self._signs((n, self.out_features), x, generator)
        return x @ self.mu + ((x * s) @ delta) * r + self.bias

    @staticmethod
    def _signs(shape, ref: Tensor, generator) -> Tensor:
        bits = torch.randint(0, 2, shape, generator=generator, device=ref.device)
        return (2 * bits - 1).to(ref.dtype)


class MNFSample(NamedTuple):
    output: Tensor
    z: Tensor
    log_det: Tensor
    z0: Tensor
    weight: Tensor


class DenseMNF(VariationalDense):
    """Dense layer with multiplicative normalizing-flow posterior.

    ``z_0 ~ N(q_mean, q_std^2)`` is pushed through ``flow_q``; weights are drawn
    as ``N(z_K[i] * mu[i, j], sigma[i, j]^2)``.  The auxiliary posterior
    ``r(z_K | W)`` is a Gaussian whose parameters come from ``tanh(W @ c)``,
    evaluated after the auxiliary flow ``flow_r``.
    """

    method = "mnf"

    def __init__(
        self,
        in_features: int,
        out_features: int,
        prior: str = "standard_normal",
        kl_weight: float = 1.0,
        init_sigma: float = 0.05,
        n_flows: int = 2,
        flow_hidden: Sequence[int] = (50, 50),
        n_flows_r: int | None = None,
    ):
        super().__init__(in_features, out_features, prior, kl_weight, init_sigma)
        self.q_mean = nn.Parameter(1.0 + 0.1 * torch.randn(in_features))
        self.q_log_var = nn.Parameter(torch.full((in_features,), math.log(0.05**2)))
        self.flow_q = FlowStack(in_features, n_flows, flow_hidden)
        self.flow_r = FlowStack(in_features, n_flows if n_flows_r is None else n_flows_r, flow_hidden)
        self.r_c = nn.Parameter(0.1 * torch.randn(out_features))
        self.r_b1 = nn.Parameter(0.1 * torch.randn(in_features))
        self.r_b2 = nn.Parameter(0.1 * torch.randn(in_features))
        self.r_d1 = nn.Parameter(torch.ones(in_features))
        self.r_d2 = nn.Parameter(torch.full((in_features,), math.log(0.05**2)))

    def sample_z(
        self,
        generator: torch.Generator | None = None,
        eps_z: Tensor | None = None,
        z0: Tensor | None = None,
    ) -> tuple[Tensor, Tensor, Tensor]:
        """Return ``(z_K, log_det, z_0)``."""
        if z0 is None:
            if eps_z is None:
                eps_z = self._noise(self.q_mean.shape, self.q_mean, generator)
            z0 = self.q_mean + torch.exp(0.5 * self.q_log_var) * eps_z
        z, log_det = self.flow_q(z0)
        if not torch.isfinite(log_det).all():
            raise NumericalError("non-finite flow log-determinant (flow collapse)")
        return z, log_det, z0

    def sample(
        self,
        x: Tensor,
        generator: torch.Generator | None = None,
        eps_z: Tensor | None = None,
        z0: Tensor | None = None,
        eps: Tensor | None = None,
    ) -> MNFSample:
        z, log_det, z0 = self.sample_z(generator, eps_z, z0)
        if eps is None:
            eps = self._noise(self.mu.shape, self.mu, generator)
        w = z.unsqueeze(-1) * self.mu + self.sigma * eps
        return MNFSample(x @ w + self.bias, z, log_det, z0, w)

    def forward(self, x: Tensor, generator: torch.Generator | None = None, **overrides) -> Tensor:
        return self.sample(x, generator, **overrides).output

    def log_q_z(self, z0: Tensor, log_det: Tensor) -> Tensor:
        """log q(z_K) = log q(z_0) - sum_k log|det df_k/dz_{k-1}|."""
        var = torch.exp(self.q_log_var)
        log_q0 = -0.5 * (_LOG_2PI + self.q_log_var + (z0 - self.q_mean).square() / var).sum(-1)
        return log_q0 - log_det

    def log_r_z(self, z: Tensor, weight: Tensor) -> Tensor:
        """Auxiliary log-density log r(z_K | W)."""
        h = torch.tanh(weight @ self.r_c)
        mean = self.r_b1 * h + self.r_d1
        log_var = (self.r_b2 * h + self.r_d2).clamp(-20.0, 10.0)
        zb, log_det_r = self.flow_r(z)
        ll = -0.5 * (_LOG_2PI + log_var + (zb - mean).square() / torch.exp(log_var)).sum(-1)
        return ll + log_det_r

    def kl_bound(
        self,
        generator: torch.Generator | None = None,
        z: Tensor | None = None,
        log_det: Tensor | None = None,
        z0: Tensor | None = None,
        weight: Tensor | None = None,
    ) -> Tensor:
        """Single-sample lower bound on -KL(q(W) || p(W)).

        ``-KL[q(W|z_K) || p(W)] - log q(z_K) + log r(z_K | W)``; any argument
        left as ``None`` is sampled afresh.
        """
        if z is None:
            z, log_det, z0 = self.sample_z(generator)
        elif log_det is None or z0 is None:
            raise ValueError("z requires matching log_det and z0")
        if weight is None:
            eps = self._noise(self.mu.shape, self.mu, generator)
            weight = z.unsqueeze(-1) * self.mu + self.sigma * eps
        bound = -prior_kl(self.prior, self.mu, self.sigma, z) - self.log_q_z(z0, log_det) + self.log_r_z(z, weight)
        if not torch.isfinite(bound):
            raise NumericalError("non-finite MNF KL bound")
        return bound

    def kl(self, generator: torch.Generator | None = None) -> Tensor:
        return -self.kl_bound(generator)


_LAYERS = {"rt": DenseReparameterization, "flipout": DenseFlipout, "mnf": DenseMNF}


def make_variational_dense(
    method: str,
    in_features: int,
    out_features: int,
    prior: str = "standard_normal",
    kl_weight: float = 1.0,
    n_flows: int = 2,
    flow_hidden: Sequence[int] = (50, 50),
    init_sigma: float = 0.05,
) -> VariationalDense:
    if method not in _LAYERS:
        raise ConfigError(f"unknown variational method {method!r}; expected one of {METHODS}")
    if method == "mnf":
        return DenseMNF(in_features, out_features, prior, kl_weight, init_sigma, n_flows, flow_hidden)
    return _LAYERS[method](in_features, out_features, prior, kl_weight, init_sigma)
