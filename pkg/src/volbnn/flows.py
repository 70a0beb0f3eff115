"""Masked affine coupling flows for the multiplicative weight noise."""

from __future__ import annotations

from typing import Sequence

import torch
from torch import Tensor, nn
import torch.nn.functional as F


class MaskedAffineCoupling(nn.Module):
    """One invertible step ``y = m*z + (1-m)*(z*g + (1-g)*s)``.

    ``g`` (a sigmoid gate) and ``s`` (a shift) are computed from the masked
    coordinates ``m*z`` only, so the Jacobian is triangular and
    ``log|det| = sum((1-m) * log g)``.
    """

    def __init__(self, dim: int, mask: Tensor, hidden_sizes: Sequence[int] = (50, 50)):
        super().__init__()
        self.dim = dim
        self.register_buffer("mask", mask.to(torch.get_default_dtype()))
        layers: list[nn.Module] = []
        width = dim
        for h in hidden_sizes:
            layers += [nn.Linear(width, h), nn.Tanh()]
            width = h
        self.trunk = nn.Sequential(*layers)
        self.shift = nn.Linear(width, dim)
        self.gate = nn.Linear(width, dim)
        # start close to the identity map
        nn.init.normal_(self.gate.weight, std=0.01)
        nn.init.constant_(self.gate.bias, 3.0)
        nn.init.normal_(self.shift.weight, std=0.01)
        nn.init.zeros_(self.shift.bias)

    def _params(self, masked: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        h = self.trunk(masked)
        pre = self.gate(h)
        return self.shift(h), torch.sigmoid(pre), F.logsigmoid(pre)

    def forward(self, z: Tensor) -> tuple[Tensor, Tensor]:
        m = self.mask
        shift, g, log_g = self._params(m * z)
        y = m * z + (1 - m) * (z * g + (1 - g) * shift)
        return y, ((1 - m) * log_g).sum(-1)

    def inverse(self, y: Tensor) -> tuple[Tensor, Tensor]:
        m = self.mask
        shift, g, log_g = self._params(m * y)
        z = m * y + (1 - m) * (y - (1 - g) * shift) / g
        return z, -((1 - m) * log_g).sum(-1)


class FlowStack(nn.Module):
    """Composition ``f_K o ... o f_1`` with alternating even/odd masks."""

    def __init__(self, dim: int, n_steps: int = 2, hidden_sizes: Sequence[int] = (50, 50)):
        super().__init__()
        self.dim = dim
        self.n_steps = n_steps
        self.hidden_sizes = tuple(hidden_sizes)
        idx = torch.arange(dim)
        self.steps = nn.ModuleList(
            MaskedAffineCoupling(dim, (idx % 2 == k % 2), hidden_sizes) for k in range(n_steps)
        )

    def forward(self, z: Tensor) -> tuple[Tensor, Tensor]:
        log_det = z.new_zeros(z.shape[:-1])
        for step in self.steps:
            z, ld = step(z)
            log_det = log_det + ld
        return z, log_det

    def inverse(self, y: Tensor) -> tuple[Tensor, Tensor]:
        log_det = y.new_zeros(y.shape[:-1])
        for step in reversed(self.steps):
            y, ld = step.inverse(y)
            log_det = log_det + ld
        return y, log_det
