"""``sskan`` command line: generate, train, eval, slice, bla.

All commands share ``--out DIR``, the run directory. ``generate`` writes the
resolved ``config.json`` there and later commands read it back, so a run is
reproducible from its directory alone. Flags override the config file,
which overrides the preset.

Files in a run directory::

    config.json  manifest.json  train.csv  test.csv        (generate)
    checkpoint.json  train_report.csv                      (train)
    metrics.json  timeseries_train.csv  timeseries_test.csv  (eval)
    slice.csv  slice.json                                  (slice)
    bla_checkpoint.json  bla_metrics.json                  (bla)

Errors print one line ``error[<code>]: <message>`` to stderr and exit 1.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


from . import checkpoint
from .datagen import Dataset, load_csv, save_csv
from .errors import InvalidConfigError, IOFailureError, SsKanError
from .experiment import (
    PRESETS,
    ExperimentConfig,
    evaluate,
    generate,
    load_config_file,
    resolve_config,
    slice_analysis,
    train_bla,
    train_model,
)
from .interp import emit_plot_data, emit_timeseries


def _dump(path: Path, obj) -> None:
    try:
        path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise IOFailureError(f"cannot write {path}: {exc}") from exc


def _outdir(args, create: bool = False) -> Path:
    out = Path(args.out)
    if create:
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IOFailureError(f"cannot create {out}: {exc}") from exc
    elif not out.is_dir():
        raise IOFailureError(f"run directory {out} does not exist")
    return out


def _config(args, out: Path) -> ExperimentConfig:
    if args.config:
        doc = load_config_file(args.config)
    elif (out / "config.json").exists():
        doc = load_config_file(out / "config.json")
    else:
        doc = {}
    return resolve_config(args.preset, doc, args.seed)


def _manifest(out: Path) -> dict:
    path = out / "manifest.json"
    if not path.exists():
        raise IOFailureError(f"{path} missing; run `sskan generate` first")
    return json.loads(path.read_text())


def _datasets(out: Path, manifest: dict):
    fs = float(manifest.get("sample_rate", 1.0))
    return load_csv(out / "train.csv", fs, manifest.get("system", "csv")), load_csv(out / "test.csv", fs, manifest.get("system", "csv"))


def cmd_generate(args) -> int:
    out = _outdir(args, create=True)
    cfg = _config(args, out)
    tr, te, manifest = generate(cfg)
    save_csv(tr, out / "train.csv")
    save_csv(te, out / "test.csv")
    _dump(out / "manifest.json", manifest)
    _dump(out / "config.json", cfg.to_dict())
    print(f"wrote {len(tr)} training and {len(te)} test samples to {out}")
    return 0


def cmd_train(args) -> int:
    out = _outdir(args)
    cfg = _config(args, out)
    manifest = _manifest(out)
    tr, te = _datasets(out, manifest)

    def progress(report):
        if args.verbose:
            print(f"epoch {report.epoch[-1]:4d}  loss {report.loss[-1]:.6g}  train {report.train_rmse[-1]:.6g}  val {report.val_rmse[-1]:.6g}")

    try:
        model, report = train_model(cfg, tr, manifest, progress=progress)
    except SsKanError as exc:
        if getattr(exc, "report", None) is not None:
            exc.report.to_csv(out / "train_report.csv")
        raise
    checkpoint.save(model, out / "checkpoint.json", cfg.to_dict(), cfg.seed)
    report.to_csv(out / "train_report.csv")
    train_m, _ = evaluate(model, tr)
    test_m, _ = evaluate(model, te)
    print(f"train rmse {train_m['rmse']:.6g} (normalized)  {train_m['rmse_physical']:.6g} (physical)")
    print(f"test  rmse {test_m['rmse']:.6g} (normalized)  {test_m['rmse_physical']:.6g} (physical)")
    return 0


def _load_checkpoint(args, out: Path, default: str = "checkpoint.json"):
    path = Path(args.checkpoint) if getattr(args, "checkpoint", None) else out / default
    return checkpoint.load(path)[0]


def cmd_eval(args) -> int:
    out = _outdir(args)
    model = _load_checkpoint(args, out)
    tr, te = _datasets(out, _manifest(out))
    for name, ds in (("train", tr), ("test", te)):
        if len(ds) == 0:
            raise InvalidConfigError(f"{name} dataset is empty")
    metrics = {}
    for name, ds in (("train", tr), ("test", te)):
        m, y_hat = evaluate(model, ds)
        metrics[name] = m
        emit_timeseries(out / f"timeseries_{name}.csv", ds.y.ravel(), model.normalization.invert_y(y_hat).ravel())
    n_fit = model.meta.get("n_fit")
    if n_fit:
        fit_part, _ = evaluate(model, Dataset(tr.u[:n_fit], tr.y[:n_fit], tr.sample_rate))
        metrics["train"]["rmse_fit_part"] = fit_part["rmse"]
    _dump(out / "metrics.json", metrics)
    print(f"train rmse {metrics['train']['rmse']:.6g}  test rmse {metrics['test']['rmse']:.6g} (normalized)")
    return 0


def cmd_slice(args) -> int:
    out = _outdir(args)
    model = _load_checkpoint(args, out)
    manifest = _manifest(out)
    tr, _ = _datasets(out, manifest)
    report, summary = slice_analysis(model, tr, manifest, varied=args.varied, degree=args.degree, channel=args.channel)
    emit_plot_data(report, out / "slice.csv")
    shares = ", ".join(f"{s:.3f}" for s in summary["dominance"])
    print(f"slice of {summary['varied']} -> channel {summary['channel']}: coefficients {summary['coefficients']}")
    print(f"dominance shares (ascending powers): {shares}")
    if "alignment" in summary:
        print(f"aligned sup error vs oracle: {summary['alignment']['error']:.4g}  monotone: {summary['monotone']}")
    return 0


def cmd_bla(args) -> int:
    out = _outdir(args)
    cfg = _config(args, out)
    manifest = _manifest(out)
    tr, te = _datasets(out, manifest)
    model, _ = train_bla(cfg, tr, te, manifest)
    checkpoint.save(model, out / "bla_checkpoint.json", cfg.to_dict(), cfg.seed)
    metrics = {name: evaluate(model, ds)[0] for name, ds in (("train", tr), ("test", te))}
    _dump(out / "bla_metrics.json", metrics)
    print(f"BLA test rmse {metrics['test']['rmse']:.6g} (normalized)")
    return 0


def _apply_threads():
    raw = os.environ.get("SSKAN_THREADS")
    if not raw:
        return
    try:
        n = int(raw)
    except ValueError:
        raise InvalidConfigError(f"SSKAN_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise InvalidConfigError(f"SSKAN_THREADS must be a positive integer, got {raw!r}")
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


class _Parser(argparse.ArgumentParser):
    """Usage errors in the same one-line format as every other failure."""

    def error(self, message):
        self.exit(2, f"error[usage]: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sskan", description="State-space KAN system identification experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _Parser(add_help=False)
    common.add_argument("--out", required=True, help="run directory")
    common.add_argument("--config", help="JSON experiment config (overrides the preset)")
    common.add_argument("--preset", help=f"one of {', '.join(sorted(PRESETS))} (default: from config, else silverbox-desk)")
    common.add_argument("--seed", type=int, help="experiment seed (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")
    for name, func, text in (
        ("generate", cmd_generate, "synthesise train/test records"),
        ("train", cmd_train, "train the SS-KAN or cascade model"),
        ("eval", cmd_eval, "free-run evaluation and error time series"),
        ("slice", cmd_slice, "slice the learned KAN and fit a polynomial"),
        ("bla", cmd_bla, "fit the linear baseline"),
    ):
        p = sub.add_parser(name, parents=[common], help=text)
        p.set_defaults(func=func)
        if name in ("eval", "slice"):
            p.add_argument("--checkpoint", help="checkpoint path (default: <out>/checkpoint.json)")
        if name == "slice":
            p.add_argument("--varied", type=int, default=0, help="index of the varied KAN input")
            p.add_argument("--degree", type=int, default=3, help="polynomial fit degree")
            p.add_argument("--channel", type=int, default=None, help="output channel to fit")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _apply_threads()
        return args.func(args)
    except SsKanError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
