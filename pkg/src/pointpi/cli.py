"""Command-line entry point: ``pointpi {synth,train,eval,predict,report}``.

Exit status is 0 only when a command completed; usage and configuration errors
exit with 2, data and runtime failures with 1. ``POINTPI_THREADS`` caps the
BLAS thread pool.
"""

from __future__ import annotations

import argparse
import csv
import os
import shutil
import sys
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from .data import (
    SPLIT_NAMES,
    TIME_FORMAT,
    DataError,
    Normalization,
    SplitSpec,
    SynthConfig,
    WindowBatch,
    build_windows,
    fill_gaps,
    load_csv,
    split_dayblocks,
    synth_generate,
    write_csv,
)
from .losses import BarrierState, LossConfig
from .metrics import MetricReport, evaluate
from .model import ModelConfig, load_checkpoint, predict, save_checkpoint
from .trainer import AdamConfig, TrainConfig, TrainingError, train

THREADS_ENV = "POINTPI_THREADS"
# the window builder always produces these channel counts
LAG_FEATURES = 3
FUTURE_FEATURES = 3


class ConfigError(ValueError):
    pass


class CommandError(RuntimeError):
    pass


@dataclass
class DataSection:
    path: str | None = None
    max_gap_hours: float = 6.0

    def __post_init__(self):
        if self.max_gap_hours < 0:
            raise ValueError("max_gap_hours must be >= 0")


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelConfig = field(default_factory=lambda: ModelConfig(horizon=8))
    train: TrainConfig = field(default_factory=TrainConfig)
    split: SplitSpec = field(default_factory=SplitSpec)

    @property
    def loss(self) -> LossConfig:
        return self.train.loss_config

    @classmethod
    def from_dict(cls, raw) -> "RunConfig":
        raw = {} if raw is None else raw
        _expect_mapping(raw, "config")
        _reject_unknown(raw, {"data", "model", "train", "loss", "split"}, "")
        data = _build(DataSection, raw.get("data", {}), "data")
        model = _build(ModelConfig, raw.get("model", {}), "model", defaults=ModelConfig(horizon=8))
        if model.n_lag_features != LAG_FEATURES or model.n_future_features != FUTURE_FEATURES:
            raise ConfigError(
                f"model: the data pipeline yields {LAG_FEATURES} lag and {FUTURE_FEATURES} future features"
            )
        loss = _build(LossConfig, raw.get("loss", {}), "loss", exclude={"r_q"})
        train_raw = raw.get("train")
        train_raw = {} if train_raw is None else train_raw
        _expect_mapping(train_raw, "train")
        train_raw = dict(train_raw)
        adam = _build(AdamConfig, train_raw.pop("adam", {}), "train.adam")
        train_cfg = _build(TrainConfig, train_raw, "train", exclude={"adam", "loss_config"},
                           extra={"adam": adam, "loss_config": loss})
        split = _build(SplitSpec, raw.get("split", {}), "split")
        return cls(data, model, train_cfg, split)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML: {exc}") from None
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        train = asdict(self.train)
        loss = train.pop("loss_config")
        loss.pop("r_q")
        model = asdict(self.model)
        return {
            "data": asdict(self.data),
            "model": model,
            "train": train,
            "loss": loss,
            "split": asdict(self.split),
        }

    def dump(self, path):
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


def _expect_mapping(raw, path):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(raw).__name__}")


def _reject_unknown(raw, allowed, path):
    for key in raw:
        if key not in allowed:
            where = f"{path}.{key}" if path else str(key)
            raise ConfigError(f"{where}: unknown key (allowed: {', '.join(sorted(allowed))})")


def _coerce(value, default, where):
    """Check ``value`` against the type of the field default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list) or any(isinstance(v, bool) or not isinstance(v, int) for v in value):
            raise ConfigError(f"{where}: expected a list of integers, got {value!r}")
        return value
    if default is None:
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string or null, got {value!r}")
        return value
    raise ConfigError(f"{where}: unsupported setting")


def _build(cls, raw, path, exclude=frozenset(), extra=None, defaults=None):
    raw = {} if raw is None else raw
    _expect_mapping(raw, path)
    names = [f.name for f in fields(cls) if f.name not in exclude]
    _reject_unknown(raw, set(names), path)
    base = defaults if defaults is not None else cls(**(extra or {}))
    kwargs = dict(extra or {})
    for name in names:
        default = getattr(base, name)
        kwargs[name] = _coerce(raw[name], default, f"{path}.{name}") if name in raw else default
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


# shared plumbing

def _split_windows(data_path, run: RunConfig, r_q: float | None = None):
    table = fill_gaps(load_csv(data_path), pd.Timedelta(hours=run.data.max_gap_hours))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        split = split_dayblocks(table, run.split)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    norm = Normalization.fit(split.train) if r_q is None else Normalization(r_q)
    m = run.model
    windows = {name: build_windows(part, m.lag_window, m.horizon, norm) for name, part in zip(SPLIT_NAMES, split[:3])}
    return split, norm, windows


def _select(windows: dict, name: str) -> WindowBatch:
    batch = WindowBatch.concatenate(windows.values()) if name == "all" else windows[name]
    if len(batch) == 0:
        raise CommandError(f"split '{name}' has no complete windows to score")
    return batch


def _evaluate_batch(model_config, params, batch: WindowBatch, r_q, p, daytime_only) -> MetricReport:
    lower, point, upper = predict(model_config, params, batch.lag, batch.future)
    return evaluate(batch.target * r_q, lower * r_q, point * r_q, upper * r_q, r_q,
                    hours=batch.hours, p=p, daytime_only=daytime_only)


def _load_model(path):
    path = Path(path)
    if not path.is_file():
        raise CommandError(f"checkpoint not found: {path}")
    params, model_config, meta = load_checkpoint(path)
    if "run_config" not in meta or "r_q" not in meta:
        raise CommandError(f"{path}: checkpoint lacks run metadata (r_q, run_config)")
    return params, model_config, meta, RunConfig.from_dict(meta["run_config"])


def _require_file(path, what="data file"):
    if path is None:
        raise CommandError(f"no {what} given")
    if not Path(path).is_file():
        raise CommandError(f"{what} not found: {path}")
    return Path(path)


def _fmt(v):
    return repr(float(v))


# commands

def cmd_synth(args):
    mix = args.regime_mix
    cfg = SynthConfig(sites=args.sites, days=args.days, seed=args.seed, regime_mix=mix, start=args.start)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(synth_generate(cfg), out)
    print(f"wrote {cfg.days * cfg.sites * 96} rows to {out}")


def cmd_train(args):
    run = RunConfig.load(args.config)
    if args.loss is not None:
        run.train.loss = args.loss
    data_path = _require_file(args.data or run.data.path)
    run.data.path = str(data_path)
    out = Path(args.out_dir)
    if out.exists() and (not out.is_dir() or any(out.iterdir())) and not args.force:
        raise CommandError(f"output directory {out} already exists and is not empty; pass --force to overwrite")

    split, norm, windows = _split_windows(data_path, run)
    for name in ("train", "val"):
        if len(windows[name]) < 2:
            raise CommandError(f"split '{name}' yields {len(windows[name])} windows; need at least 2")

    def log(row):
        if not args.quiet:
            print(
                f"epoch {row['epoch']:3d}  L_point {row['l_point_train']:.4f}  L_PI {row['l_pi_train']:.4f}  "
                f"L_val {row['l_val']:.4f}  gamma1 {row['gamma1_mean']:.3f}  r_day {row['r_day_mean']:.1f}  "
                f"lr {row['lr']:.2e} {row['stop_reason']}",
                file=sys.stderr, flush=True,
            )

    best, report, barrier, last = train(run.model, windows["train"], windows["val"], run.train, log=log)

    tmp = out.parent / f".{out.name}.partial"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    try:
        base_meta = {"r_q": norm.r_q, "run_config": run.to_dict(), "best_epoch": report.best_epoch,
                     "best_l_val": report.best_l_val, "stop_reason": report.stop_reason}
        save_checkpoint(tmp / "best.npz", best, run.model,
                        {**base_meta, "which": "best", "barrier": _barrier_dict(barrier)})
        last_barrier = BarrierState(report.r_day[-1], report.r_night[-1])
        save_checkpoint(tmp / "last.npz", last, run.model,
                        {**base_meta, "which": "last", "barrier": _barrier_dict(last_barrier)})
        report.to_csv(tmp / "report.csv")
        report.batches_to_csv(tmp / "batches.csv")
        report.r_to_csv(tmp / "r_history.csv")
        run.dump(tmp / "config.resolved.yaml")
        split.manifest.to_csv(tmp / "split_manifest.csv", index=False, lineterminator="\n")
        train_metrics = _evaluate_batch(run.model, best, windows["train"], norm.r_q, run.loss.p_day, True)
        train_metrics.to_csv(tmp / "train_metrics.csv")
        if out.exists():
            shutil.rmtree(out) if out.is_dir() else out.unlink()
        tmp.rename(out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    print(f"best epoch {report.best_epoch} (L_val {report.best_l_val:.6f}), stopped by {report.stop_reason}; outputs in {out}")


def _barrier_dict(barrier: BarrierState):
    return {"r_day": [float(v) for v in barrier.r_day], "r_night": [float(v) for v in barrier.r_night]}


def cmd_eval(args):
    params, model_config, meta, run = _load_model(args.checkpoint)
    if args.horizon is not None and args.horizon != model_config.horizon:
        raise CommandError(f"checkpoint horizon is {model_config.horizon}, requested {args.horizon}")
    data_path = _require_file(args.data or run.data.path)
    _, _, windows = _split_windows(data_path, run, r_q=meta["r_q"])
    batch = _select(windows, args.split)
    p = run.loss.p_day
    report = _evaluate_batch(model_config, params, batch, meta["r_q"], p, args.daytime_only)
    if not args.daytime_only:
        report.notes.append("note: night hours included; zero-irradiance targets are trivially covered, inflating PICP")
    reports = [("model", args.checkpoint, report)]
    if args.baseline:
        b_params, b_config, b_meta, _ = _load_model(args.baseline)
        if (b_config.horizon, b_config.lag_window) != (model_config.horizon, model_config.lag_window):
            raise CommandError(
                f"baseline horizon/lag ({b_config.horizon}, {b_config.lag_window}) differ from "
                f"({model_config.horizon}, {model_config.lag_window})"
            )
        if not np.isclose(b_meta["r_q"], meta["r_q"], rtol=1e-12):
            raise CommandError("baseline was normalized with a different R_Q; train both on the same data")
        b_report = _evaluate_batch(b_config, b_params, batch, meta["r_q"], p, args.daytime_only)
        b_report.notes.extend(report.notes[-1:] if not args.daytime_only else [])
        reports.append(("baseline", args.baseline, b_report))
    for label, path, rep in reports:
        print(f"[{label}] {path} on split '{args.split}'")
        print(rep.to_table())
        print()
    if args.baseline:
        print(_comparison(report, reports[1][2], p))
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        report.to_csv(out)
        if args.baseline:
            reports[1][2].to_csv(out.with_name(f"{out.stem}_baseline{out.suffix}"))


def _comparison(a: MetricReport, b: MetricReport, p: float) -> str:
    lines = ["PINALW comparison (model vs baseline) on steps where both PICP >= p - 0.03:",
             f"{'step':>5} {'PICP':>7} {'PICP_b':>7} {'PINALW%':>8} {'PINALW_b%':>9}  narrower"]
    for ra, rb in zip(a.step_rows(), b.step_rows()):
        eligible = ra["picp"] >= p - 0.03 and rb["picp"] >= p - 0.03
        verdict = ("yes" if ra["pinalw"] < rb["pinalw"] else "no") if eligible else "n/a"
        lines.append(f"{ra['step']:>5} {ra['picp']:7.3f} {rb['picp']:7.3f} {100 * ra['pinalw']:8.2f} "
                     f"{100 * rb['pinalw']:9.2f}  {verdict}")
    return "\n".join(lines)


PREDICTION_COLUMNS = ["timestamp", "site_id", "step", "l_hat", "y_hat", "u_hat", "y_obs"]


def cmd_predict(args):
    params, model_config, meta, run = _load_model(args.checkpoint)
    if args.horizon is not None and args.horizon != model_config.horizon:
        raise CommandError(f"checkpoint horizon is {model_config.horizon}, requested {args.horizon}")
    data_path = _require_file(args.data or run.data.path)
    _, _, windows = _split_windows(data_path, run, r_q=meta["r_q"])
    batch = _select(windows, args.split)
    r_q = meta["r_q"]
    lower, point, upper = (a * r_q for a in predict(model_config, params, batch.lag, batch.future))
    y_obs = batch.target * r_q
    stamps = pd.DatetimeIndex(batch.target_time.ravel()).strftime(TIME_FORMAT).to_numpy().reshape(batch.target_time.shape)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PREDICTION_COLUMNS)
        for i in range(len(batch)):
            for k in range(batch.horizon):
                writer.writerow([stamps[i, k], batch.site[i], k + 1, _fmt(lower[i, k]), _fmt(point[i, k]),
                                 _fmt(upper[i, k]), _fmt(y_obs[i, k])])
    print(f"wrote {len(batch) * batch.horizon} forecasts ({len(batch)} windows x {batch.horizon} steps) to {out}")


def cmd_report(args):
    from . import plots

    eval_rows = _read_csv(args.eval_csv, ["step", "picp", "pinaw", "pinalw"])
    epochs = _read_csv(args.train_report, ["epoch", "l_point_train", "l_pi_train", "l_val", "gamma1_mean",
                                           "r_day_mean", "r_night_mean"])
    preds = _read_csv(args.predictions, PREDICTION_COLUMNS) if args.predictions else None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = plots.write_all(out, epochs, eval_rows, preds, target=args.target, step=args.step)
    for path in written:
        print(path)


def _read_csv(path, required):
    path = _require_file(path, "CSV file")
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise CommandError(f"{path}: malformed CSV: {exc}") from None
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise CommandError(f"{path}: malformed CSV, missing columns {missing}")
    return frame


# argument parsing

def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _regime_mix(text):
    try:
        parts = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three comma-separated weights, got {text!r}") from None
    if len(parts) != 3 or min(parts) < 0 or sum(parts) <= 0:
        raise argparse.ArgumentTypeError("regime mix needs three non-negative weights clear,partly_cloudy,cloudy")
    return parts


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pointpi", description="Joint point and interval irradiance forecasting.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic irradiance CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--days", type=_positive_int, default=30)
    p.add_argument("--sites", type=_positive_int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--regime-mix", type=_regime_mix, default=(1 / 3, 1 / 3, 1 / 3),
                   help="weights for clear,partly_cloudy,cloudy days (default equal)")
    p.add_argument("--start", default="2023-01-01", help="first local date")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="split, window and train; writes checkpoints and reports")
    p.add_argument("--config", required=True)
    p.add_argument("--data", help="CSV in the external schema (overrides data.path)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--loss", choices=("solarpointpi", "pinball"), help="overrides train.loss")
    p.add_argument("--force", action="store_true", help="replace an existing output directory")
    p.add_argument("--quiet", action="store_true", help="no per-epoch progress on stderr")
    p.set_defaults(func=cmd_train)

    for name, func, help_ in (("eval", cmd_eval, "per-step metrics for a checkpoint"),
                              ("predict", cmd_predict, "write denormalized interval forecasts")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", help="CSV in the external schema (default: path recorded at training)")
        p.add_argument("--split", choices=(*SPLIT_NAMES, "all"), default="test")
        p.add_argument("--horizon", type=_positive_int, help="expected forecast horizon; checked against the checkpoint")
        if name == "eval":
            p.add_argument("--daytime-only", action=argparse.BooleanOptionalAction, default=True,
                           help="score 06:00-18:00 targets only")
            p.add_argument("--baseline", help="second checkpoint to compare against, e.g. pinball-trained")
            p.add_argument("--out", help="write the metric CSV here")
        else:
            p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="render SVG panels from training and evaluation CSVs")
    p.add_argument("--eval-csv", required=True)
    p.add_argument("--train-report", required=True)
    p.add_argument("--predictions", help="forecast CSV from 'predict' for the time-series panel")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--target", type=float, default=0.9, help="nominal coverage line on the PICP panel")
    p.add_argument("--step", type=_positive_int, default=1, help="forecast step shown in the time-series panel")
    p.set_defaults(func=cmd_report)
    return parser


def _limit_threads():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return None
    try:
        n = int(value)
        if n < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {value!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _limit_threads()
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (CommandError, DataError, TrainingError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
