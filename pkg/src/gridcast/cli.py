"""Command-line entry point: ``gridcast {convert,run,report,schedule-dump,grad-check}``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import ConfigParse, GridcastError, NoResults
from .evaluation import (load_reference_results, read_results_csv, results_table,
                         results_table_csv)
from .experiment import (DATA_DIR_ENV, RunnerOptions, dump_schedule, load_config,
                         resolve_data_path, run_experiment, summarize)
from .ingest import Region, SourceFormat, load_raw_csv, resample_hourly, split_dataset
from .training import TrainConfig

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def cmd_convert(args):
    path = resolve_data_path(args.input)
    raw = load_raw_csv(path, SourceFormat(args.format))
    ds = resample_hourly(raw, Region(args.region))
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    ds.to_csv(out)
    split = split_dataset(ds)
    sidecar = {
        "source": str(path),
        "format": args.format,
        "region": ds.region.value,
        "n_hours": ds.n_hours,
        "start": ds.timestamps[0].isoformat(),
        "end": ds.timestamps[-1].isoformat(),
        "clients": list(ds.client_ids),
        "dropped": ds.dropped,
        "split": {"train": [0, split.train_end], "val": [split.train_end, split.val_end],
                  "test": [split.val_end, ds.n_hours]},
        "fingerprint": ds.fingerprint(),
    }
    out.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))
    print(f"wrote {out} ({ds.n_hours} hours x {ds.n_clients} clients, "
          f"{len(ds.dropped)} dropped)")
    return EXIT_OK


def cmd_run(args):
    cfg = load_config(args.config)
    out = Path(args.output_dir) if args.output_dir else Path(args.config).with_suffix("")
    opts = RunnerOptions(out, force=args.force, workers=args.workers, seed=args.seed,
                         max_epochs=args.max_epochs, eval_interval=args.eval_interval,
                         causal_decoder=args.causal_decoder, clip_norm=args.clip_norm,
                         holiday_file=args.holiday_file, save_models=not args.no_checkpoints,
                         with_timing=args.with_timing)
    outcomes, csv_path = run_experiment(cfg, opts)
    print(summarize(outcomes))
    print(f"results: {csv_path}")
    bad = [o for o in outcomes if o.status in ("failed", "partial")]
    return EXIT_FAILED if bad else EXIT_OK


def cmd_report(args):
    src = Path(args.results)
    csv_path = src / "results.csv" if src.is_dir() else src
    if not csv_path.exists():
        raise NoResults(f"no results file at {csv_path}")
    runs = read_results_csv(csv_path)
    if not runs:
        raise NoResults(f"{csv_path} holds no runs")
    ref = None if args.no_reference else load_reference_results(tuple(args.provenance))
    render = results_table_csv if args.format == "csv" else results_table
    for layout in ("MAE", "MSE"):
        print(f"{layout}\n")
        print(render(runs, layout, ref))
    return EXIT_OK


def _train_config_from_args(args):
    cfg = {}
    if args.config:
        cfg.update(load_config(args.config).train)
    for name in ("base_lr", "warmup_steps", "decay_gamma", "schedule", "max_epochs", "max_steps"):
        v = getattr(args, name)
        if v is not None:
            cfg[name] = v
    return TrainConfig(**cfg)


def cmd_schedule_dump(args):
    cfg = _train_config_from_args(args)
    rows = dump_schedule(cfg, args.steps, args.steps_per_epoch)
    fh = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "lr"])
        for step, lr in rows:
            w.writerow([step, repr(lr)])
    finally:
        if args.output:
            fh.close()
    return EXIT_OK


def cmd_grad_check(args):
    from .checks import check_models, check_ops
    ok = True
    if not args.models_only:
        for name, rep in check_ops(args.seeds, tol=args.tol).items():
            ok &= rep.passed
            print(f"op {name:<16} {rep}")
    if not args.ops_only:
        for name, rep in check_models(tuple(args.families), args.seeds, tol=args.tol).items():
            ok &= rep.passed
            print(f"model {name:<13} {rep}")
    return EXIT_OK if ok else EXIT_FAILED


def build_parser():
    p = argparse.ArgumentParser(
        prog="gridcast",
        description="Hourly load forecasting benchmark: multivariate, local and global strategies.",
        epilog=f"Relative dataset paths are also looked up under ${DATA_DIR_ENV}.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("convert", help="convert a raw load file to the canonical hourly wide CSV")
    c.add_argument("--input", required=True, help="raw CSV file")
    c.add_argument("--format", choices=[f.value for f in SourceFormat], default="wide")
    c.add_argument("--output", required=True, help="output CSV; a .json sidecar is written next to it")
    c.add_argument("--region", choices=[r.value for r in Region], default="Custom")
    c.set_defaults(func=cmd_convert)

    r = sub.add_parser("run", help="run every (family, strategy, horizon) tuple of a config")
    r.add_argument("config", help="INI or JSON experiment config")
    r.add_argument("--output-dir", help="artifact directory (default: config path without suffix)")
    r.add_argument("--force", action="store_true", help="rerun tuples that already completed")
    r.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    r.add_argument("--seed", type=int, help="override the config seed")
    r.add_argument("--max-epochs", type=int, help="cap on training epochs")
    r.add_argument("--eval-interval", type=int, help="validation interval in optimizer steps")
    r.add_argument("--causal-decoder", action="store_true", default=None,
                   help="mask future decoder positions in self-attention")
    r.add_argument("--clip-norm", type=float, help="clip the global gradient norm")
    r.add_argument("--holiday-file", help="date,name CSV replacing the region holiday calendar")
    r.add_argument("--no-checkpoints", action="store_true", help="do not save model checkpoints")
    r.add_argument("--with-timing", action="store_true",
                   help="fill train_seconds in results.csv (breaks byte-identical reruns)")
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="render MAE and MSE tables from results")
    rep.add_argument("results", help="results directory or results.csv")
    rep.add_argument("--format", choices=["markdown", "csv"], default="markdown")
    rep.add_argument("--no-reference", action="store_true", help="omit the published reference rows")
    rep.add_argument("--provenance", nargs="+", default=["external"],
                     help="reference rows to merge (external, published)")
    rep.set_defaults(func=cmd_report)

    s = sub.add_parser("schedule-dump", help="print the learning rate for each step as CSV")
    s.add_argument("--config", help="take [train] settings from an experiment config")
    s.add_argument("--steps", type=int, default=5000, help="last step to emit")
    s.add_argument("--steps-per-epoch", type=int, default=1000)
    s.add_argument("--base-lr", type=float)
    s.add_argument("--warmup-steps", type=int)
    s.add_argument("--decay-gamma", type=float)
    s.add_argument("--schedule", choices=["epoch_cosine", "cosine", "step", "constant"])
    s.add_argument("--max-epochs", type=int)
    s.add_argument("--max-steps", type=int)
    s.add_argument("--output", help="write CSV here instead of stdout")
    s.set_defaults(func=cmd_schedule_dump)

    g = sub.add_parser("grad-check", help="finite-difference check of every op and model family")
    g.add_argument("--seeds", type=int, default=20, help="random instances per op and family")
    g.add_argument("--tol", type=float, default=1e-4)
    g.add_argument("--families", nargs="+", default=["mlp", "lstm", "transformer"])
    only = g.add_mutually_exclusive_group()
    only.add_argument("--ops-only", action="store_true")
    only.add_argument("--models-only", action="store_true")
    g.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigParse as exc:
        print(f"config error: {exc}" + (f" [field: {exc.field}]" if exc.field else ""),
              file=sys.stderr)
        return EXIT_CONFIG
    except (GridcastError, FileNotFoundError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
