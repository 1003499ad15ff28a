"""Command-line entry point: ``netload {generate,train,evaluate,compare,sensitivity}``.

Every command resolves a :class:`~netload.config.RunConfig` from defaults, an
optional ``--config`` file and flag overrides, runs to completion in memory,
and only then writes its outputs into ``--out``. A failing command leaves no
partial output directory behind and exits with status 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import shutil
import sys
import tempfile
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from .dataset import (DataError, Normalizer, build_dataset, dataset_stats, ingest_csv,
                      write_csv)
from .metrics import MetricError, ape_stats, metric_report, relative_threshold
from .models import ShapeError, init_params, load_checkpoint, predict, save_checkpoint
from .pipeline import (METHOD_ORDER, SENSITIVITY_COLUMNS, SUMMARY_COLUMNS, SUB_TARGETS,
                       TRACE_COLUMNS, PipelineError, compare_methods, sensitivity_lookahead,
                       write_rows)
from .synthgen import generate_series
from .training import TrainingError, train_model

log = logging.getLogger("netload")

TRACE_VIEW_HOURS = 300
DEFAULT_OUT = {"generate": "data", "train": "runs/train", "evaluate": "runs/evaluate",
               "compare": "runs/compare", "sensitivity": "runs/sensitivity"}

# flag dest -> config key
_FLAG_KEYS = {
    "seed": "seed", "data": "data", "out": "out", "checkpoint": "checkpoint",
    "epochs": "train.epochs", "n_years": "synth.n_years", "model": "model.kind",
    "method": "method.kind", "target": "method.target", "look_back": "method.look_back",
    "look_ahead": "method.look_ahead", "routing": "method.routing", "horizons": "sensitivity.horizons",
}


class CommandError(RuntimeError):
    """A user-facing failure that is not a module error contract."""


# config resolution


def resolve_config(args: argparse.Namespace) -> cfgmod.RunConfig:
    cfg = cfgmod.RunConfig()
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise CommandError(f"config file not found: {path}")
        cfg = cfgmod.load(path, cfg)
    for item in args.set or ():
        if "=" not in item:
            raise cfgmod.ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        cfg = cfgmod.apply(cfg, key, value)
    for dest, key in _FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            cfg = cfgmod.apply(cfg, key, str(value))
    if cfg.out is None:
        cfg = replace(cfg, out=DEFAULT_OUT[args.command])
    return cfg


def load_frame(cfg: cfgmod.RunConfig):
    """The configured CSV, or freshly generated synthetic data when none is given."""
    if cfg.data is None:
        log.info("no --data given; generating synthetic data (seed %d)", cfg.seed)
        return generate_series(cfg.synth_config())
    path = Path(cfg.data)
    if not path.is_file():
        raise CommandError(f"data file not found: {path}")
    return ingest_csv(path)


# output staging


class Outputs:
    """Collects files in a scratch directory and moves them into place at the end."""

    def __init__(self, out: str):
        self.final = Path(out)
        self.final.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=".netload-", dir=self.final.parent))

    def path(self, name: str) -> Path:
        p = self.tmp / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def write_json(self, name: str, obj) -> None:
        with open(self.path(name), "w") as fh:
            json.dump(obj, fh, indent=1, sort_keys=True)
            fh.write("\n")

    def commit(self) -> Path:
        self.final.mkdir(parents=True, exist_ok=True)
        for src in sorted(self.tmp.rglob("*")):
            if src.is_file():
                dst = self.final / src.relative_to(self.tmp)
                dst.parent.mkdir(parents=True, exist_ok=True)
                src.replace(dst)
        self.discard()
        return self.final

    def discard(self) -> None:
        shutil.rmtree(self.tmp, ignore_errors=True)


def _run_metadata(command: str, cfg, started: float, fixed: bool) -> dict:
    meta = {"command": command, "version": __version__, "seed": cfg.seed}
    if not fixed:
        meta.update(wall_seconds=round(time.perf_counter() - started, 3),
                    finished_at=time.strftime("%Y-%m-%dT%H:%M:%S"),
                    python=platform.python_version(), numpy=np.__version__)
    return meta


# commands


def cmd_generate(cfg, out: Outputs) -> str:
    frame = generate_series(cfg.synth_config())
    write_csv(frame, out.path("data.csv"))
    stats = dataset_stats(frame)
    out.write_json("stats.json", stats)
    return f"wrote {stats['rows']} rows"


def _train_dataset(cfg, frame):
    spec = cfg.method_spec(method="direct")
    target = cfg.method.target
    if target != "net_load" and target not in SUB_TARGETS:
        raise cfgmod.ConfigError(f"method.target must be net_load or one of {SUB_TARGETS}")
    ds = build_dataset(frame, target, spec.features_for(target), spec.look_back, spec.look_ahead)
    return spec, ds


def cmd_train(cfg, out: Outputs) -> str:
    frame = load_frame(cfg)
    spec, ds = _train_dataset(cfg, frame)
    seed = spec.sub_seed(ds.target)
    x_train, _ = ds.arrays("train")
    size = x_train.shape[2] if spec.model_kind == "lstm" else x_train.shape[1] * x_train.shape[2]
    params = init_params(spec.model_kind, size, spec.hidden, 1, seed)
    result = train_model(params, ds, replace(spec.train, seed=seed))
    meta = {"target": ds.target, "features": list(ds.features), "look_back": ds.look_back,
            "look_ahead": ds.look_ahead, "normalizer": ds.normalizer.to_dict(),
            "split_hash": ds.split_hash(), "seed": seed, "epochs": result.report.epochs}
    save_checkpoint(out.path("model.ckpt"), result.params, meta)
    save_checkpoint(out.path("model_best.ckpt"), result.best_params,
                    dict(meta, best_epoch=result.best_epoch))
    result.report.to_csv(out.path("loss.csv"))
    rep = result.report
    last = f", final val_mae {rep.val_mae[-1]:.5f}" if rep.epochs else ""
    return f"trained {spec.model_kind} on {ds.target} for {rep.epochs} epochs{last}"


def cmd_evaluate(cfg, out: Outputs) -> str:
    if cfg.checkpoint is None:
        raise CommandError("evaluate needs --checkpoint")
    path = Path(cfg.checkpoint)
    if not path.is_file():
        raise CommandError(f"checkpoint not found: {path}")
    params, meta = load_checkpoint(path)
    frame = load_frame(cfg)
    ds = build_dataset(frame, meta["target"], meta["features"], meta["look_back"],
                       meta["look_ahead"])
    ds = replace(ds, normalizer=Normalizer.from_dict(meta["normalizer"]), _cache={})
    x, _ = ds.arrays("test")
    predicted = ds.denormalize_target(predict(params, x, batch_size=256))
    actual = ds.actual("test")
    threshold = relative_threshold(actual, cfg.method.near_zero_fraction)
    report = metric_report(actual, predicted, threshold)
    stats = ape_stats(actual, predicted, threshold)
    out.write_json("metrics.json", {"target": ds.target, "checkpoint": path.name,
                                    "metrics": report.to_dict(), "ape_stats": stats.to_dict(),
                                    "near_zero_threshold": threshold})
    stamps = [str(t) for t in ds.target_timestamps("test").astype("datetime64[m]")]
    with np.errstate(divide="ignore", invalid="ignore"):
        pct = (predicted - actual) / actual * 100.0
    write_rows(out.path("trace.csv"), TRACE_COLUMNS,
               ((s, float(a), float(p), float(e) if np.isfinite(e) else None)
                for s, a, p, e in zip(stamps, actual, predicted, pct)))
    return f"{ds.target}: MAPE {report.mape:.3f}%  RMSPE {report.rmspe:.3f}%  R2 {report.r2:.4f}"


def _write_comparison(comparison, out: Outputs) -> None:
    write_rows(out.path("summary.csv"), SUMMARY_COLUMNS, comparison.summary())
    # one measures-by-method table per model family
    for kind in ("fcnn", "lstm"):
        reps = {r.method: r for r in comparison.reports if r.model_kind == kind}
        rows = [(m, *(getattr(reps[d].metrics, a) for d in ("direct", "indirect")))
                for m, a in (("mape", "mape"), ("rmspe", "rmspe"), ("r2", "r2"))]
        rows.append(("normalized_mse", reps["direct"].normalized_mse,
                     reps["indirect"].normalized_mse))
        write_rows(out.path(f"table_{kind}.csv"), ("measure", "direct", "indirect"), rows)
    for r in comparison.reports:
        r.write_trace(out.path(f"traces/{r.name}.csv"))
        for target, tr in r.train_reports.items():
            if tr is not None:
                tr.to_csv(out.path(f"loss/{r.name}_{target}.csv"))
        out.write_json(f"reports/{r.name}.json",
                       {k: v for k, v in r.to_dict().items() if k not in ("trace", "train_reports")})
    # overlay view: first test hours, all methods side by side
    first = comparison.reports[0]
    n = min(TRACE_VIEW_HOURS, len(first.actual))
    header = ["timestamp", "actual"]
    for r in comparison.reports:
        header += [f"{r.name}_predicted", f"{r.name}_pct_error"]
    rows = []
    for k in range(n):
        row = [first.timestamps[k], float(first.actual[k])]
        for r in comparison.reports:
            pe = r.pct_error[k]
            row += [float(r.predicted[k]), float(pe) if np.isfinite(pe) else None]
        rows.append(row)
    write_rows(out.path(f"trace_first{TRACE_VIEW_HOURS}.csv"), header, rows)
    out.write_json("comparison.json", {"routing": comparison.routing,
                                       "split_hash": first.split_hash,
                                       "best_by_median_ape": comparison.best_by_median_ape(),
                                       "features": {r.name: r.features for r in comparison.reports}})


def cmd_compare(cfg, out: Outputs, jobs: int = 1) -> str:
    frame = load_frame(cfg)
    spec = cfg.method_spec()
    comparison = compare_methods(frame, spec, progress=lambda n: log.info("running %s", n),
                                 jobs=jobs)
    _write_comparison(comparison, out)
    lines = [f"{row['method']:<14} MAPE {row['mape']:6.3f}%  R2 {row['r2']:.4f}  "
             f"median APE {row['ape_median']:.3f}%" for row in comparison.summary()]
    return "\n".join(lines)


def cmd_sensitivity(cfg, out: Outputs) -> str:
    frame = load_frame(cfg)
    rows = sensitivity_lookahead(frame, cfg.method_spec(), cfg.sensitivity.horizons)
    write_rows(out.path("sensitivity.csv"), SENSITIVITY_COLUMNS, rows)
    return "\n".join(f"look-ahead {r['lookahead']}: MAPE {r['mape']:.3f}%" for r in rows)


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate,
            "compare": cmd_compare, "sensitivity": cmd_sensitivity}


# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int, help="master seed for data, init and shuffling")
    common.add_argument("--out", help="output directory")
    common.add_argument("--data", help="input CSV; synthetic data is generated when omitted")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key, e.g. --set train.batch_size=32")
    common.add_argument("--fixed-metadata", action="store_true",
                        help="omit wall time and host details from run.json")
    common.add_argument("-v", "--verbose", action="count", default=0)

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--model", choices=("fcnn", "lstm"))
    model.add_argument("--epochs", type=int)
    model.add_argument("--look-back", type=int)
    model.add_argument("--look-ahead", type=int)

    parser = argparse.ArgumentParser(prog="netload", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write a synthetic hourly dataset")
    p.add_argument("--n-years", type=int)

    p = sub.add_parser("train", parents=[common, model], help="train one model")
    p.add_argument("--target", choices=("net_load",) + SUB_TARGETS)

    p = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on the test split")
    p.add_argument("--checkpoint", help="checkpoint written by train")

    p = sub.add_parser("compare", parents=[common, model],
                       help="run all four method/model combinations")
    p.add_argument("--routing", choices=("routed", "all"))
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    p = sub.add_parser("sensitivity", parents=[common, model], help="sweep the look-ahead horizon")
    p.add_argument("--method", choices=("direct", "indirect"))
    p.add_argument("--horizons", help="comma-separated horizons, e.g. 1,2,4")
    return parser


ERRORS = (DataError, PipelineError, TrainingError, MetricError, ShapeError, CommandError,
          ValueError, OSError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s")
    started = time.perf_counter()
    out = None
    try:
        cfg = resolve_config(args)
        out = Outputs(cfg.out)
        fn = COMMANDS[args.command]
        if args.command == "compare":
            message = fn(cfg, out, jobs=args.jobs)
        else:
            message = fn(cfg, out)
        (out.path("config.txt")).write_text(cfgmod.dump(cfg))
        out.write_json("run.json", _run_metadata(args.command, cfg, started, args.fixed_metadata))
        final = out.commit()
    except ERRORS as exc:
        if out is not None:
            out.discard()
        print(f"netload {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except BaseException:
        if out is not None:
            out.discard()
        raise
    print(message)
    print(f"outputs in {final}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
