"""WaveNet, TCN and Transformer backbones with point or distributional heads."""

from __future__ import annotations

import copy
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import Tensor, nn
import torch.nn.functional as F

from .dataio import WindowedSplit
from .errors import ConfigError, NumericalError
from .vblayers import VariationalDense, elbo_loss, gaussian_nll, make_variational_dense

HEAD_MODES = ("point", "distributional")
VAR_FLOOR = 1e-6


@dataclass
class WaveNetConfig:
    n_blocks: int = 7
    layers_per_block: int = 5
    n_filters: int = 96
    kernel_size: int = 2
    dilation_base: int = 2

    def validate(self) -> None:
        for name, v in asdict(self).items():
            if not (isinstance(v, int) and v > 0):
                raise ConfigError(f"wavenet {name} must be a positive integer, got {v!r}")

    @property
    def dilations(self) -> list[int]:
        block = [self.dilation_base**layer for layer in range(self.layers_per_block)]
        return block * self.n_blocks

    @property
    def receptive_field(self) -> int:
        return 1 + (self.kernel_size - 1) * sum(self.dilations)


@dataclass
class TCNConfig:
    nb_stacks: int = 1
    nb_filters: int = 64
    dilations: list[int] = field(default_factory=lambda: [1, 2, 4, 8, 16])
    kernel_size: int = 3
    recurrent_head_units: int = 64
    dropout: float = 0.0

    def validate(self) -> None:
        for name in ("nb_stacks", "nb_filters", "kernel_size", "recurrent_head_units"):
            v = getattr(self, name)
            if not (isinstance(v, int) and v > 0):
                raise ConfigError(f"tcn {name} must be a positive integer, got {v!r}")
        d = list(self.dilations)
        if not d or any(x < 1 or x & (x - 1) for x in d) or any(b <= a for a, b in zip(d, d[1:])):
            raise ConfigError(f"tcn dilations must be strictly increasing powers of two, got {d}")
        if not 0 <= self.dropout < 1:
            raise ConfigError("tcn dropout must lie in [0, 1)")

    @property
    def receptive_field(self) -> int:
        return 1 + 2 * (self.kernel_size - 1) * self.nb_stacks * sum(self.dilations)


@dataclass
class TransformerConfig:
    key_dim: int = 256
    num_heads: int = 8
    attn_dropout: float = 0.10
    ff_dim: int = 8
    n_blocks: int = 8
    mlp_head_units: int = 264
    mlp_dropout: float = 0.10
    d_model: int = 16
    window_size: int = 20

    def validate(self) -> None:
        for name in ("key_dim", "num_heads", "ff_dim", "n_blocks", "mlp_head_units", "d_model", "window_size"):
            v = getattr(self, name)
            if not (isinstance(v, int) and v > 0):
                raise ConfigError(f"transformer {name} must be a positive integer, got {v!r}")
        for name in ("attn_dropout", "mlp_dropout"):
            if not 0 <= getattr(self, name) < 1:
                raise ConfigError(f"transformer {name} must lie in [0, 1)")


class CausalConv1d(nn.Conv1d):
    """Conv1d left-padded so that output ``t`` only sees inputs ``<= t``."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, dilation: int = 1):
        super().__init__(in_channels, out_channels, kernel_size, dilation=dilation)
        self.left_pad = (kernel_size - 1) * dilation

    def forward(self, x: Tensor) -> Tensor:
        return super().forward(F.pad(x, (self.left_pad, 0)))


class Backbone(nn.Module):
    """Maps ``[n, window]`` to a feature matrix ``[n, feature_dim]``."""

    arch = ""
    feature_dim: int

    def features(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def forward(self, x: Tensor) -> Tensor:
        return self.features(x)


class WaveNet(Backbone):
    arch = "wavenet"

    def __init__(self, config: WaveNetConfig):
        super().__init__()
        config.validate()
        self.config = config
        c = config.n_filters
        self.convs = nn.ModuleList(
            CausalConv1d(1 if i == 0 else c, c, config.kernel_size, d)
            for i, d in enumerate(config.dilations)
        )
        self.feature_dim = c

    def conv_stack(self, x: Tensor) -> Tensor:
        """``[n, window]`` -> ``[n, filters, window]``; residual after the first layer."""
        h = x.unsqueeze(1)
        for i, conv in enumerate(self.convs):
            out = F.relu(conv(h))
            h = out if i == 0 else h + out
        return h

    def features(self, x: Tensor) -> Tensor:
        return self.conv_stack(x)[:, :, -1]


class TCNResidualBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, kernel_size: int, dilation: int, dropout: float):
        super().__init__()
        self.conv1 = CausalConv1d(in_ch, out_ch, kernel_size, dilation)
        self.conv2 = CausalConv1d(out_ch, out_ch, kernel_size, dilation)
        self.drop = nn.Dropout(dropout)
        self.match = nn.Conv1d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        h = self.drop(F.relu(self.conv1(x)))
        h = self.drop(F.relu(self.conv2(h)))
        return F.relu(self.match(x) + h), h


class TCN(Backbone):
    """Residual dilated causal blocks with summed skips, then an LSTM head."""

    arch = "tcn"

    def __init__(self, config: TCNConfig):
        super().__init__()
        config.validate()
        self.config = config
        blocks = []
        in_ch = 1
        for _ in range(config.nb_stacks):
            for d in config.dilations:
                blocks.append(TCNResidualBlock(in_ch, config.nb_filters, config.kernel_size, d, config.dropout))
                in_ch = config.nb_filters
        self.blocks = nn.ModuleList(blocks)
        self.lstm = nn.LSTM(config.nb_filters, config.recurrent_head_units, batch_first=True)
        self.feature_dim = config.recurrent_head_units

    def conv_stack(self, x: Tensor) -> Tensor:
        h = x.unsqueeze(1)
        skips = 0
        for block in self.blocks:
            h, skip = block(h)
            skips = skips + skip
        return skips

    def features(self, x: Tensor) -> Tensor:
        seq = self.conv_stack(x).transpose(1, 2)
        _, (h_n, _) = self.lstm(seq)
        return h_n[-1]


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, num_heads: int, key_dim: int, dropout: float):
        super().__init__()
        self.num_heads = num_heads
        self.key_dim = key_dim
        inner = num_heads * key_dim
        self.q = nn.Linear(d_model, inner)
        self.k = nn.Linear(d_model, inner)
        self.v = nn.Linear(d_model, inner)
        self.o = nn.Linear(inner, d_model)
        self.drop = nn.Dropout(dropout)
        self.last_weights: Tensor | None = None

    def forward(self, x: Tensor) -> Tensor:
        n, length, _ = x.shape

        def heads(t: Tensor) -> Tensor:
            return t.view(n, length, self.num_heads, self.key_dim).transpose(1, 2)

        q, k, v = heads(self.q(x)), heads(self.k(x)), heads(self.v(x))
        weights = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(self.key_dim), dim=-1)
        self.last_weights = weights.detach()
        out = (self.drop(weights) @ v).transpose(1, 2).reshape(n, length, -1)
        return self.o(out)


class EncoderBlock(nn.Module):
    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model, eps=1e-6)
        self.attn = MultiHeadAttention(cfg.d_model, cfg.num_heads, cfg.key_dim, cfg.attn_dropout)
        self.drop = nn.Dropout(cfg.attn_dropout)
        self.norm2 = nn.LayerNorm(cfg.d_model, eps=1e-6)
        self.ff1 = nn.Conv1d(cfg.d_model, cfg.ff_dim, 1)
        self.ff2 = nn.Conv1d(cfg.ff_dim, cfg.d_model, 1)

    def forward(self, x: Tensor) -> Tensor:
        res = x + self.drop(self.attn(self.norm1(x)))
        h = self.norm2(res).transpose(1, 2)
        h = self.ff2(self.drop(F.relu(self.ff1(h)))).transpose(1, 2)
        return res + h


class Transformer(Backbone):
    """Pre-norm encoder blocks, global average pooling over time, MLP head."""

    arch = "transformer"

    def __init__(self, config: TransformerConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.embed = nn.Linear(1, config.d_model)
        self.pos = nn.Parameter(0.02 * torch.randn(config.window_size, config.d_model))
        self.blocks = nn.ModuleList(EncoderBlock(config) for _ in range(config.n_blocks))
        self.mlp = nn.Linear(config.d_model, config.mlp_head_units)
        self.mlp_drop = nn.Dropout(config.mlp_dropout)
        self.feature_dim = config.mlp_head_units

    def encode(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.config.window_size:
            raise ConfigError(f"window length {x.shape[1]} != configured {self.config.window_size}")
        h = self.embed(x.unsqueeze(-1)) + self.pos
        for block in self.blocks:
            h = block(h)
        return h

    def attention_weights(self) -> list[Tensor]:
        return [b.attn.last_weights for b in self.blocks]

    def features(self, x: Tensor) -> Tensor:
        pooled = self.encode(x).mean(dim=1)
        return self.mlp_drop(F.relu(self.mlp(pooled)))


class ForecastModel(nn.Module):
    """Backbone plus an output layer (deterministic or variational).

    Output is ``[n, 1]`` in point mode and ``[n, 2]`` = (mean, raw variance)
    in distributional mode.
    """

    def __init__(self, backbone: Backbone, head_mode: str = "point", bayes: dict | None = None):
        super().__init__()
        if head_mode not in HEAD_MODES:
            raise ConfigError(f"head mode must be one of {HEAD_MODES}, got {head_mode!r}")
        self.backbone = backbone
        self.head_mode = head_mode
        self.bayes = dict(bayes) if bayes else None
        out = 1 if head_mode == "point" else 2
        if self.bayes:
            self.head = make_variational_dense(in_features=backbone.feature_dim, out_features=out, **self.bayes)
        else:
            self.head = nn.Linear(backbone.feature_dim, out)

    @property
    def arch(self) -> str:
        return self.backbone.arch

    @property
    def is_bayesian(self) -> bool:
        return isinstance(self.head, VariationalDense)

    def apply_head(self, feats: Tensor, generator: torch.Generator | None = None) -> Tensor:
        if self.is_bayesian:
            return self.head(feats, generator)
        return self.head(feats)

    def forward(self, x: Tensor, generator: torch.Generator | None = None) -> Tensor:
        return self.apply_head(self.backbone.features(x), generator)

    def kl(self, generator: torch.Generator | None = None) -> Tensor:
        if not self.is_bayesian:
            return torch.zeros(())
        return self.head.kl(generator)


def split_output(out: Tensor) -> tuple[Tensor, Tensor]:
    """(mean, variance) from a distributional output; variance = softplus + floor."""
    return out[:, 0], F.softplus(out[:, 1]) + VAR_FLOOR


def _check_receptive_field(rf: int, window_size: int | None) -> None:
    if window_size is not None and rf > window_size:
        warnings.warn(f"receptive field {rf} exceeds window size {window_size}", UserWarning, stacklevel=3)


def build_wavenet(config: WaveNetConfig | None = None, head: str = "point", bayes: dict | None = None,
                  window_size: int | None = None) -> ForecastModel:
    config = config or WaveNetConfig()
    config.validate()
    _check_receptive_field(config.receptive_field, window_size)
    return ForecastModel(WaveNet(config), head, bayes)


def build_tcn(config: TCNConfig | None = None, head: str = "point", bayes: dict | None = None,
              window_size: int | None = None) -> ForecastModel:
    config = config or TCNConfig()
    config.validate()
    _check_receptive_field(config.receptive_field, window_size)
    return ForecastModel(TCN(config), head, bayes)


def build_transformer(config: TransformerConfig | None = None, head: str = "point",
                      bayes: dict | None = None) -> ForecastModel:
    return ForecastModel(Transformer(config or TransformerConfig()), head, bayes)


def forward(model: ForecastModel, batch, generator: torch.Generator | None = None) -> np.ndarray:
    """Evaluate ``model`` on a numpy batch ``[n, window]`` in eval mode."""
    x = np.asarray(batch)
    if x.ndim != 2:
        raise ConfigError(f"expected a [n, window] batch, got shape {x.shape}")
    dtype = next(model.parameters()).dtype
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            out = model(torch.as_tensor(x, dtype=dtype), generator)
    finally:
        model.train(was_training)
    if not torch.isfinite(out).all():
        raise NumericalError("non-finite model output (diverged training?)")
    return out.numpy()


@dataclass
class TrainOptions:
    lr: float = 1e-3
    epochs: int = 200
    patience: int = 10
    batch_size: int = 32
    huber_delta: float = 1.0
    seed: int = 0


def _batch_loss(model: ForecastModel, x: Tensor, y: Tensor, opts: TrainOptions, kl_weight: float,
                gen: torch.Generator) -> Tensor:
    out = model(x, gen)
    if model.head_mode == "distributional":
        mean, var = split_output(out)
        data = gaussian_nll(y, mean, var)
    else:
        data = F.huber_loss(out[:, 0], y, delta=opts.huber_delta)
    if model.is_bayesian:
        return elbo_loss(data, model.kl(gen), kl_weight)
    return data


def train(model: ForecastModel, split: WindowedSplit, opts: TrainOptions | None = None,
          log=None) -> dict:
    """Minibatch Adam with early stopping; the best-validation weights are kept.

    Deterministic point heads minimise the Huber loss; distributional heads the
    Gaussian NLL; variational heads add ``KL / N_train``.
    """
    opts = opts or TrainOptions()
    if len(split.y_train) == 0 or len(split.y_valid) == 0:
        raise ConfigError("training needs nonempty train and valid sets")
    dtype = next(model.parameters()).dtype
    xt = torch.as_tensor(split.x_train, dtype=dtype)
    yt = torch.as_tensor(split.y_train, dtype=dtype)
    xv = torch.as_tensor(split.x_valid, dtype=dtype)
    yv = torch.as_tensor(split.y_valid, dtype=dtype)
    n = len(yt)
    kl_weight = 1.0 / n
    gen = torch.Generator().manual_seed(opts.seed)
    optim = torch.optim.Adam(model.parameters(), lr=opts.lr)

    history = {"train_loss": [], "valid_loss": [], "best_epoch": 0, "kl_weight": kl_weight}
    best_state = copy.deepcopy(model.state_dict())
    best_val = math.inf
    stale = 0
    for epoch in range(opts.epochs):
        model.train()
        perm = torch.randperm(n, generator=gen)
        total = 0.0
        for start in range(0, n, opts.batch_size):
            idx = perm[start:start + opts.batch_size]
            loss = _batch_loss(model, xt[idx], yt[idx], opts, kl_weight, gen)
            if not torch.isfinite(loss):
                raise NumericalError(f"non-finite training loss at epoch {epoch}")
            optim.zero_grad()
            loss.backward()
            optim.step()
            total += loss.item() * len(idx)
        model.eval()
        with torch.no_grad():
            val = float(_batch_loss(model, xv, yv, opts, kl_weight, gen))
        if not math.isfinite(val):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        history["train_loss"].append(total / n)
        history["valid_loss"].append(val)
        if log is not None:
            log(f"epoch {epoch + 1}: train {total / n:.5f} valid {val:.5f}")
        if val < best_val:
            best_val, stale = val, 0
            best_state = copy.deepcopy(model.state_dict())
            history["best_epoch"] = epoch
        else:
            stale += 1
            if stale >= opts.patience:
                break
    model.load_state_dict(best_state)
    model.eval()
    return history


def train_deterministic(model: ForecastModel, split: WindowedSplit, opts: TrainOptions | None = None,
                        log=None) -> dict:
    if model.is_bayesian:
        raise ConfigError("train_deterministic called on a model with a variational head")
    return train(model, split, opts, log)


def count_causal_convs(model: nn.Module) -> int:
    return sum(isinstance(m, CausalConv1d) for m in model.modules())
