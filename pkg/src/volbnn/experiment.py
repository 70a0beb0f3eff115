"""Experiment configuration, run directories and the pipeline commands."""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

from . import calibrate, dataio, metrics, nets, plots, predict, vblayers
from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

BACKBONES = ("wavenet", "tcn", "transformer")
BAYES = ("none", "rt", "flipout", "mnf")
SYNTHETIC = "synthetic-ar2"
CHECKPOINT_FORMAT = "volbnn-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ExperimentConfig:
    data: str | None = None
    window_size: int = 20
    train_frac: float = 0.8
    valid_frac: float = 0.1
    test_frac: float = 0.1
    synthetic_n: int = 2500
    synthetic_seed: int = 0

    backbone: str = "tcn"
    wavenet_n_blocks: int = 7
    wavenet_layers_per_block: int = 5
    wavenet_n_filters: int = 96
    wavenet_kernel_size: int = 2
    wavenet_dilation_base: int = 2
    tcn_nb_stacks: int = 1
    tcn_nb_filters: int = 64
    tcn_dilations: list[int] = field(default_factory=lambda: [1, 2, 4, 8, 16])
    tcn_kernel_size: int = 3
    tcn_recurrent_head_units: int = 64
    tcn_dropout: float = 0.0
    transformer_key_dim: int = 256
    transformer_num_heads: int = 8
    transformer_attn_dropout: float = 0.10
    transformer_ff_dim: int = 8
    transformer_n_blocks: int = 8
    transformer_mlp_head_units: int = 264
    transformer_mlp_dropout: float = 0.10
    transformer_d_model: int = 16

    bayes: str = "none"
    prior: str = "standard_normal"
    head: str = "auto"
    flow_steps: int = 2
    flow_hidden: list[int] = field(default_factory=lambda: [50, 50])
    init_sigma: float = 0.05

    lr: float = 1e-3
    epochs: int = 200
    patience: int = 10
    batch_size: int = 32
    huber_delta: float = 1.0
    mc_samples: int = 500
    seed: int | None = None
    threads: int = 1

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            cfg = cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a flat JSON object")
        return cls.from_dict(raw)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        if self.backbone not in BACKBONES:
            raise ConfigError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.bayes not in BAYES:
            raise ConfigError(f"bayes must be one of {BAYES}, got {self.bayes!r}")
        if self.prior not in vblayers.PRIORS:
            raise ConfigError(f"prior must be one of {vblayers.PRIORS}, got {self.prior!r}")
        if self.head not in ("auto",) + nets.HEAD_MODES:
            raise ConfigError(f"head must be auto, point or distributional, got {self.head!r}")
        for name in ("window_size", "epochs", "batch_size", "mc_samples", "patience", "threads", "synthetic_n"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.seed is not None and (not isinstance(self.seed, int) or isinstance(self.seed, bool)):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        if not self.lr >= 0 or not self.huber_delta > 0 or not self.init_sigma > 0:
            raise ConfigError("lr must be >= 0; huber_delta and init_sigma must be > 0")
        if self.flow_steps < 0 or any(h < 1 for h in self.flow_hidden):
            raise ConfigError("flow_steps must be >= 0 and flow_hidden entries positive")
        if any(f <= 0 for f in self.fractions) or abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must be positive and sum to 1, got {self.fractions}")
        self.net_config().validate()

    @property
    def fractions(self) -> tuple[float, float, float]:
        return (self.train_frac, self.valid_frac, self.test_frac)

    @property
    def head_mode(self) -> str:
        if self.head != "auto":
            return self.head
        return "point" if self.bayes == "none" else "distributional"

    @property
    def label(self) -> str:
        return f"{self.backbone}-{self.bayes}" + (f"-{self.prior}" if self.bayes != "none" else "")

    def net_config(self):
        def pick(prefix):
            return {k[len(prefix):]: v for k, v in self.to_dict().items() if k.startswith(prefix)}

        if self.backbone == "wavenet":
            return nets.WaveNetConfig(**pick("wavenet_"))
        if self.backbone == "tcn":
            kw = pick("tcn_")
            kw["dilations"] = list(kw["dilations"])
            return nets.TCNConfig(**kw)
        return nets.TransformerConfig(window_size=self.window_size, **pick("transformer_"))

    def bayes_kwargs(self) -> dict | None:
        if self.bayes == "none":
            return None
        return {
            "method": self.bayes,
            "prior": self.prior,
            "n_flows": self.flow_steps,
            "flow_hidden": tuple(self.flow_hidden),
            "init_sigma": self.init_sigma,
        }

    def train_options(self) -> nets.TrainOptions:
        return nets.TrainOptions(lr=self.lr, epochs=self.epochs, patience=self.patience,
                                 batch_size=self.batch_size, huber_delta=self.huber_delta,
                                 seed=self.require_seed())

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("a seed is required (config key 'seed' or --seed)")
        return self.seed


def load_series(cfg: ExperimentConfig) -> dataio.PriceSeries:
    if cfg.data is None:
        raise DataError("no data path given (config key 'data' or --data)")
    if cfg.data == SYNTHETIC:
        return dataio.synthetic_ar2_series(cfg.synthetic_n, seed=cfg.synthetic_seed)
    return dataio.load_csv(cfg.data)


def build_model(cfg: ExperimentConfig) -> nets.ForecastModel:
    net_cfg = cfg.net_config()
    head, bayes = cfg.head_mode, cfg.bayes_kwargs()
    if cfg.backbone == "wavenet":
        return nets.build_wavenet(net_cfg, head, bayes, window_size=cfg.window_size)
    if cfg.backbone == "tcn":
        return nets.build_tcn(net_cfg, head, bayes, window_size=cfg.window_size)
    return nets.build_transformer(net_cfg, head, bayes)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _setup_torch(cfg: ExperimentConfig) -> None:
    torch.set_num_threads(cfg.threads)
    torch.manual_seed(cfg.require_seed())


# ---------------------------------------------------------------- stats


def cmd_stats(cfg: ExperimentConfig, out_dir: str | Path, max_lag: int = 40) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    series = load_series(cfg)
    stats = dataio.descriptive_stats(series)
    lag = min(max_lag, len(series) - 1)
    a, p = dataio.acf(series, lag), dataio.pacf(series, lag)
    doc = stats.to_dict()
    _write_json(out / "stats.json", doc)
    _write_json(out / "autocorrelation.json", {"acf": a.tolist(), "pacf": p.tolist()})
    plots.series_plot(series.dates, series.closes, out / "series.png")
    plots.histogram(series.closes, out / "histogram.png")
    plots.boxplot(series.closes, out / "box.png")
    plots.correlogram(a, out / "acf.png", len(series), "Autocorrelation")
    plots.correlogram(p, out / "pacf.png", len(series), "Partial autocorrelation")
    return doc


# ---------------------------------------------------------------- train


def _check_run_dir(out: Path, cfg: ExperimentConfig) -> bool:
    """True if ``out`` already holds a finished run of this exact config."""
    snap = out / "config.json"
    if not snap.exists():
        return False
    if _read_json(snap) != cfg.to_dict():
        raise ConfigError(f"{out} already holds a run with a different config")
    return (out / "run.json").exists() and (out / "checkpoint.pt").exists()


def _point_predictions(model, cfg, x, generator) -> np.ndarray:
    if model.is_bayesian:
        samples = predict.mc_predict(model, x, cfg.mc_samples, generator)
        return samples.mu.mean(axis=0)
    out = nets.forward(model, x)
    return out[:, 0].astype(np.float64)


def evaluate(model, cfg: ExperimentConfig, split: dataio.WindowedSplit) -> dict:
    gen = torch.Generator().manual_seed(cfg.require_seed() + 1)
    scaled, unscaled = [], []
    for name in ("train", "valid", "test"):
        x, y = split.part(name)
        pred = _point_predictions(model, cfg, x, gen)
        scaled.append(metrics.compute_metrics(y, pred, cfg.huber_delta, split=name).to_dict())
        y_u, p_u = dataio.inverse_scale(y, split.scaler), dataio.inverse_scale(pred, split.scaler)
        unscaled.append(metrics.compute_metrics(y_u, p_u, cfg.huber_delta, split=name).to_dict())
    return {"label": cfg.label, "scaled": scaled, "unscaled": unscaled}


def naive_baseline(series: dataio.PriceSeries, split: dataio.WindowedSplit, huber_delta: float = 1.0) -> dict:
    """Persistence forecast on the test targets, in scaled and price units."""
    v = series.closes
    preds = dataio.naive_forecast(v)[split.idx_test - 1]
    truth = v[split.idx_test]
    return {
        "unscaled": metrics.compute_metrics(truth, preds, huber_delta, split="test").to_dict(),
        "scaled": metrics.compute_metrics(dataio.scale(truth, split.scaler), dataio.scale(preds, split.scaler),
                                          huber_delta, split="test").to_dict(),
    }


def save_checkpoint(path: Path, model: nets.ForecastModel, cfg: ExperimentConfig,
                    scaler: dataio.RobustScalerParams) -> None:
    layer = None
    if model.is_bayesian:
        layer = {
            "method": model.head.method,
            "prior": model.head.prior,
            "constants": {"k1": vblayers.LOG_UNIFORM_K1, "k2": vblayers.LOG_UNIFORM_K2,
                          "k3": vblayers.LOG_UNIFORM_K3, "C": vblayers.LOG_UNIFORM_C},
        }
    torch.save({
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "scaler": dataclasses.asdict(scaler),
        "variational_layer": layer,
        "state_dict": model.state_dict(),
    }, path)


def load_checkpoint(path: str | Path) -> tuple[nets.ForecastModel, ExperimentConfig, dataio.RobustScalerParams]:
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise ConfigError(f"checkpoint not found: {path}") from None
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not a volbnn checkpoint")
    if blob.get("version", 0) > CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: checkpoint version {blob['version']} is newer than supported")
    cfg = ExperimentConfig.from_dict(blob["config"])
    torch.manual_seed(cfg.require_seed())
    model = build_model(cfg)
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model, cfg, dataio.RobustScalerParams(**blob["scaler"])


def cmd_train(cfg: ExperimentConfig, out_dir: str | Path) -> dict:
    out = Path(out_dir)
    cfg.require_seed()
    if _check_run_dir(out, cfg):
        log.info("run in %s already complete; nothing to do", out)
        return _read_json(out / "run.json")
    out.mkdir(parents=True, exist_ok=True)
    _setup_torch(cfg)
    series = load_series(cfg)
    split = dataio.build_windowed_split(series, cfg.window_size, cfg.fractions)
    _write_json(out / "config.json", cfg.to_dict())
    started = _now()

    model = build_model(cfg)
    history = nets.train(model, split, cfg.train_options(), log=log.info)
    save_checkpoint(out / "checkpoint.pt", model, cfg, split.scaler)
    result = evaluate(model, cfg, split)
    result["naive"] = naive_baseline(series, split, cfg.huber_delta)
    result["split_sizes"] = list(split.sizes())
    _write_json(out / "metrics.json", result)
    _write_json(out / "history.json", history)
    (out / "metrics.txt").write_text(
        metrics.format_table(metrics.MetricsRow(**r) for r in result["scaled"]) + "\n", encoding="utf-8")

    record = {
        "config": cfg.to_dict(),
        "label": cfg.label,
        "checkpoint": "checkpoint.pt",
        "metrics": result,
        "calibration": None,
        "started": started,
        "finished": _now(),
    }
    _write_json(out / "run.json", record)
    return record


# ---------------------------------------------------------------- predict


PREDICTION_COLUMNS = ("date", "split", "y_true", "mean", "aleatoric", "epistemic", "total",
                      "y_true_price", "mean_price", "total_std_price")


def _load_run(run_dir: Path):
    if not (run_dir / "run.json").exists():
        raise ConfigError(f"{run_dir} does not contain a finished training run")
    model, cfg, scaler = load_checkpoint(run_dir / "checkpoint.pt")
    return model, cfg, scaler


def cmd_predict(run_dir: str | Path, out_dir: str | Path | None = None) -> Path:
    """Monte-Carlo predictions for the validation and test windows."""
    run = Path(run_dir)
    out = Path(out_dir) if out_dir is not None else run
    out.mkdir(parents=True, exist_ok=True)
    model, cfg, scaler = _load_run(run)
    torch.set_num_threads(cfg.threads)
    series = load_series(cfg)
    split = dataio.build_windowed_split(series, cfg.window_size, cfg.fractions)
    gen = torch.Generator().manual_seed(cfg.require_seed() + 2)
    rows = []
    for name in ("valid", "test"):
        x, y = split.part(name)
        rep = predict.decompose_uncertainty(predict.mc_predict(model, x, cfg.mc_samples, gen))
        idx = getattr(split, f"idx_{name}")
        y_price, m_price = dataio.inverse_scale(y, scaler), dataio.inverse_scale(rep.mean, scaler)
        std_price = rep.total_std * scaler.iqr
        for i in range(len(y)):
            rows.append((series.dates[idx[i]].isoformat(), name, y[i], rep.mean[i], rep.aleatoric[i],
                         rep.epistemic[i], rep.total[i], y_price[i], m_price[i], std_price[i]))
        if name == "test":
            plots.prediction_plot([series.dates[j] for j in idx], y_price, m_price, std_price,
                                  out / "prediction.png", title=f"{cfg.label} (test)")
    path = out / "predictions.csv"
    write_predictions(path, rows)
    return path


def write_predictions(path: Path, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(PREDICTION_COLUMNS)
        for r in rows:
            w.writerow([r[0], r[1]] + [repr(float(v)) for v in r[2:]])


def read_predictions(path: Path) -> dict[str, dict[str, np.ndarray]]:
    parts: dict[str, dict[str, list]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            d = parts.setdefault(row["split"], {"y_true": [], "mean": [], "total": []})
            for k in d:
                d[k].append(float(row[k]))
    return {s: {k: np.array(v) for k, v in d.items()} for s, d in parts.items()}


# ---------------------------------------------------------------- calibrate


def cmd_calibrate(run_dir: str | Path, out_dir: str | Path | None = None) -> dict:
    """Fit the std scale factor on validation predictions, report it on test."""
    run = Path(run_dir)
    out = Path(out_dir) if out_dir is not None else run
    out.mkdir(parents=True, exist_ok=True)
    pred_path = out / "predictions.csv"
    if not pred_path.exists():
        pred_path = run / "predictions.csv"
    if not pred_path.exists():
        pred_path = cmd_predict(run, out)
    parts = read_predictions(pred_path)
    if "valid" not in parts or "test" not in parts:
        raise DataError(f"{pred_path} must hold both valid and test rows")
    v, t = parts["valid"], parts["test"]
    fit = calibrate.fit_scale_factor(v["y_true"], v["mean"], np.sqrt(v["total"]))
    test = calibrate.evaluate_scale_factor(t["y_true"], t["mean"], np.sqrt(t["total"]), fit.scale_factor)
    doc = test.to_dict()
    doc["valid"] = fit.to_dict()
    _write_json(out / "calibration.json", doc)
    plots.calibration_diagram(test.curve_before.levels, test.curve_before.observed, test.curve_after.observed,
                              test.scale_factor, out / "calibration.png")
    record_path = run / "run.json"
    if record_path.exists():
        record = _read_json(record_path)
        record["calibration"] = doc
        _write_json(record_path, record)
    return doc


# ---------------------------------------------------------------- report


METHOD_ORDER = {m: i for i, m in enumerate(BAYES)}
BACKBONE_ORDER = {b: i for i, b in enumerate(BACKBONES)}


def collect_runs(root: str | Path) -> list[dict]:
    root = Path(root)
    runs = []
    for path in sorted(root.glob("**/run.json")):
        rec = _read_json(path)
        rec["path"] = str(path.parent)
        runs.append(rec)
    runs.sort(key=lambda r: (BACKBONE_ORDER.get(r["config"]["backbone"], 99),
                             METHOD_ORDER.get(r["config"]["bayes"], 99),
                             r["config"]["prior"], r["path"]))
    return runs


def cmd_report(root: str | Path) -> dict:
    """Metrics table (test split) and calibration table over all runs under ``root``."""
    root = Path(root)
    runs = collect_runs(root)
    if not runs:
        raise DataError(f"no runs found under {root}")
    metric_rows, calib_rows = [], []
    for r in runs:
        cfg = r["config"]
        test = next(m for m in r["metrics"]["scaled"] if m["split"] == "test")
        metric_rows.append({"backbone": cfg["backbone"], "method": cfg["bayes"], "prior": cfg["prior"],
                            **{c: test[c] for c in metrics.COLUMNS}})
        cal = r.get("calibration")
        if cfg["bayes"] != "none":
            calib_rows.append({"backbone": cfg["backbone"], "method": cfg["bayes"], "prior": cfg["prior"],
                               "scale_factor": cal["scale_factor"] if cal else None,
                               "rmsce": cal["rmsce_after"] if cal else None})
    doc = {"metrics": metric_rows, "calibration": calib_rows}
    _write_json(root / "report.json", doc)
    (root / "report.txt").write_text(render_report(doc), encoding="utf-8")
    return doc


def render_report(doc: dict) -> str:
    lines = ["Test-set metrics (scaled units)"]
    head = f"{'model':<22}" + "".join(f"{c:>11}" for c in ("loss", "mae", "rmse", "mape", "msle"))
    lines += [head, "-" * len(head)]
    for r in doc["metrics"]:
        name = f"{r['backbone']} {r['method']}"
        lines.append(f"{name:<22}" + "".join(f"{r[c]:>11.3f}" for c in ("loss", "mae", "rmse", "mape", "msle")))
    lines += ["", "Calibration (factor fitted on validation, RMSCE on test)"]
    head = f"{'model':<22}{'prior':<18}{'factor':>10}{'rmsce':>10}"
    lines += [head, "-" * len(head)]
    current = None
    for r in doc["calibration"]:
        if r["backbone"] != current:
            current = r["backbone"]
            lines.append(f"[{current}]")
        fmt = (lambda v: f"{v:>10.4f}" if v is not None else f"{'-':>10}")
        lines.append(f"  {r['method']:<20}{r['prior']:<18}{fmt(r['scale_factor'])}{fmt(r['rmsce'])}")
    return "\n".join(lines) + "\n"
