"""Experiment configs and the resumable benchmark runner.

Config grammar (INI with sections; ``#`` and ``;`` start comments)::

    [data]
    source = csv              # csv or synthetic
    path = electricity.csv    # relative to the config file or $GRIDCAST_DATA_DIR
    format = wide             # wide or ausgrid
    region = Portugal         # Portugal, NewSouthWales or Custom
    name = electricity        # dataset label in results; defaults to the file stem
    holiday_file =            # optional date,name CSV replacing the region calendar
    clients =                 # optional cap on the number of clients (first N columns)
    n_clients = 8             # synthetic only
    n_days = 60               # synthetic only
    data_seed = 0             # synthetic only

    [experiment]
    families = persistence, linreg
    strategies = local, global
    horizons = 24, 96, 720
    seed = 0

    [lookback]
    linreg = 336              # per family, or per family.strategy
    transformer.global = 168

    [model]                   # ModelSpec overrides shared by every run
    d_model = 16

    [train]                   # TrainConfig overrides
    max_epochs = 5

The same structure is accepted as JSON: an object mapping section names to
objects. List values may be JSON arrays or comma-separated strings.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .calendar import HolidayCalendar, build_feature_matrix
from .errors import ConfigParse, GridcastError
from .evaluation import (RunResult, load_reference_results, results_table, score,
                         write_results_csv)
from .ingest import RawDataset, Region, SourceFormat, load_raw_csv, prepare, resample_hourly
from .models import DEFAULT_LOOKBACK, Family, ModelSpec
from .models.spec import UNIVARIATE_ONLY
from .synthetic import make_synthetic_dataset
from .training import TrainConfig, _jsonable, default_train_config, run_strategy
from .windows import Strategy

log = logging.getLogger(__name__)

DATA_DIR_ENV = "GRIDCAST_DATA_DIR"
SECTIONS = ("data", "experiment", "lookback", "model", "train")
MODEL_FIELDS = {f.name: f for f in dataclasses.fields(ModelSpec)
                if f.name not in ("family", "strategy", "lookback", "horizon", "n_clients")}
TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig) if f.name != "seed"}


@dataclass(frozen=True)
class ExperimentConfig:
    data: dict
    families: tuple
    strategies: tuple
    horizons: tuple
    seed: int = 0
    lookbacks: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    source_text: str = ""
    base_dir: str = "."

    @property
    def config_hash(self):
        return hashlib.sha256(self.source_text.encode()).hexdigest()

    def lookback_for(self, family, strategy):
        for key in (f"{family.value}.{strategy.value}", f"{family.value}.{strategy.short.lower()}",
                    family.value):
            if key in self.lookbacks:
                return self.lookbacks[key]
        return DEFAULT_LOOKBACK[family]

    def tuples(self):
        return [(f, s, h) for f in self.families for s in self.strategies for h in self.horizons]

    @property
    def dataset_name(self):
        if self.data.get("name"):
            return self.data["name"]
        if self.data.get("source", "csv") == "synthetic":
            return "synthetic"
        return Path(self.data["path"]).stem


# --------------------------------------------------------------------------
# parsing


def _line_of(text, section, key):
    """1-based line of ``key`` inside ``[section]`` in INI text, if found."""
    current = None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
        elif current == section and line.split("=", 1)[0].split(":", 1)[0].strip().lower() == key:
            return i
    return None


def _split_list(value):
    if isinstance(value, (list, tuple)):
        return [str(v).strip() for v in value]
    return [v.strip() for v in str(value).replace("\n", ",").split(",") if v.strip()]


def _coerce(value, target, field_name, line):
    """Convert a config string to the type of a dataclass field default."""
    if isinstance(value, str):
        value = value.strip()
    try:
        if isinstance(target, bool):
            if isinstance(value, bool):
                return value
            low = str(value).lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(target, int):
            return int(value)
        if isinstance(target, float):
            return float(value)
        if isinstance(target, tuple):
            return tuple(float(v) for v in _split_list(value))
        if target is None:
            if value in ("", None) or str(value).lower() == "none":
                return None
            num = float(value)
            return int(num) if num.is_integer() and "." not in str(value) else num
        return str(value)
    except (TypeError, ValueError):
        raise ConfigParse(f"invalid value {value!r} for {field_name}", field_name, line) from None


def _read_sections(text, path):
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigParse(f"{path}: {exc.msg}", None, exc.lineno) from None
        if not all(isinstance(v, dict) for v in obj.values()):
            raise ConfigParse("JSON config must map section names to objects")
        return {k.lower(): {kk.lower(): vv for kk, vv in v.items()} for k, v in obj.items()}, False
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigParse(f"{path}: {exc.message.splitlines()[0]}", None,
                          getattr(exc, "lineno", None)) from None
    return {s.lower(): dict(cp[s]) for s in cp.sections()}, True


def parse_config(text, path="<config>", base_dir="."):
    sections, ini = _read_sections(text, path)

    def line(section, key):
        return _line_of(text, section, key) if ini else None

    for name in sections:
        if name not in SECTIONS:
            raise ConfigParse(f"unknown section [{name}]", name, None)
    data = {k: v for k, v in sections.get("data", {}).items()}
    exp = sections.get("experiment", {})
    for key in ("families", "strategies", "horizons"):
        if key not in exp:
            raise ConfigParse(f"missing required field experiment.{key}", f"experiment.{key}")

    source = str(data.get("source", "csv")).strip().lower()
    if source not in ("csv", "synthetic"):
        raise ConfigParse(f"unknown data source {source!r}", "data.source", line("data", "source"))
    data["source"] = source
    if source == "csv":
        if not data.get("path"):
            raise ConfigParse("missing required field data.path", "data.path")
        try:
            data["format"] = SourceFormat(str(data.get("format", "wide")).strip().lower()).value
        except ValueError:
            raise ConfigParse(f"unknown data format {data.get('format')!r}", "data.format",
                              line("data", "format")) from None
    try:
        data["region"] = Region(str(data.get("region", "Custom")).strip()).value
    except ValueError:
        raise ConfigParse(f"unknown region {data.get('region')!r}", "data.region",
                          line("data", "region")) from None
    for key in ("clients", "n_clients", "n_days", "data_seed"):
        if data.get(key) not in (None, ""):
            data[key] = _coerce(data[key], 0, f"data.{key}", line("data", key))
        else:
            data.pop(key, None)

    families = []
    for v in _split_list(exp["families"]):
        try:
            families.append(Family.parse(v))
        except ValueError:
            raise ConfigParse(f"unknown family {v!r}", "experiment.families",
                              line("experiment", "families")) from None
    strategies = []
    for v in _split_list(exp["strategies"]):
        try:
            strategies.append(Strategy.parse(v))
        except ValueError:
            raise ConfigParse(f"unknown strategy {v!r}", "experiment.strategies",
                              line("experiment", "strategies")) from None
    horizons = []
    for v in _split_list(exp["horizons"]):
        h = _coerce(v, 0, "experiment.horizons", line("experiment", "horizons"))
        if h < 1:
            raise ConfigParse(f"horizon must be >= 1, got {h}", "experiment.horizons",
                              line("experiment", "horizons"))
        horizons.append(h)
    if not families or not strategies or not horizons:
        raise ConfigParse("families, strategies and horizons must be non-empty", "experiment")
    seed = _coerce(exp.get("seed", 0), 0, "experiment.seed", line("experiment", "seed"))
    extra = set(exp) - {"families", "strategies", "horizons", "seed"}
    if extra:
        key = sorted(extra)[0]
        raise ConfigParse(f"unknown field experiment.{key}", f"experiment.{key}", line("experiment", key))

    lookbacks = {}
    for key, v in sections.get("lookback", {}).items():
        fam = key.split(".", 1)[0]
        try:
            Family.parse(fam)
        except ValueError:
            raise ConfigParse(f"unknown family {fam!r} in lookback", f"lookback.{key}",
                              line("lookback", key)) from None
        lookbacks[key] = _coerce(v, 0, f"lookback.{key}", line("lookback", key))

    model = {}
    for key, v in sections.get("model", {}).items():
        if key not in MODEL_FIELDS:
            raise ConfigParse(f"unknown field model.{key}", f"model.{key}", line("model", key))
        model[key] = _coerce(v, MODEL_FIELDS[key].default, f"model.{key}", line("model", key))
    train = {}
    for key, v in sections.get("train", {}).items():
        if key not in TRAIN_FIELDS:
            raise ConfigParse(f"unknown field train.{key}", f"train.{key}", line("train", key))
        train[key] = _coerce(v, TRAIN_FIELDS[key].default, f"train.{key}", line("train", key))
    try:
        TrainConfig(**train)
    except ValueError as exc:
        raise ConfigParse(str(exc), "train") from None

    return ExperimentConfig(data, tuple(families), tuple(strategies), tuple(horizons), seed,
                            lookbacks, model, train, text, str(base_dir))


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigParse(f"config file {path} not found", "path")
    return parse_config(path.read_text(encoding="utf-8"), path, path.parent)


# --------------------------------------------------------------------------
# dataset


def resolve_data_path(path, base_dir="."):
    p = Path(path).expanduser()
    if p.is_absolute():
        return p
    candidates = [Path(base_dir) / p]
    if os.environ.get(DATA_DIR_ENV):
        candidates.append(Path(os.environ[DATA_DIR_ENV]) / p)
    candidates.append(p)
    for c in candidates:
        if c.exists():
            return c
    return candidates[0]


def load_dataset(cfg: ExperimentConfig):
    data = cfg.data
    region = Region(data.get("region", "Custom"))
    if data["source"] == "synthetic":
        ds = make_synthetic_dataset(n_clients=data.get("n_clients", 8), n_days=data.get("n_days", 60),
                                    seed=data.get("data_seed", 0), region=region)
    else:
        path = resolve_data_path(data["path"], cfg.base_dir)
        raw = load_raw_csv(path, SourceFormat(data["format"]))
        ds = resample_hourly(raw, region)
    if data.get("clients"):
        ds = ds.select_clients(ds.client_ids[: data["clients"]])
    return ds


BENCHMARKS = {
    # name: (canonical wide file, raw file glob, raw format, region)
    "electricity": ("electricity.csv", None, SourceFormat.WIDE, Region.PORTUGAL),
    "ausgrid": ("ausgrid.csv", "ausgrid/*.csv", SourceFormat.AUSGRID, Region.NEW_SOUTH_WALES),
}


def benchmark_dataset(name, data_dir=None):
    """Load a benchmark dataset from ``data_dir`` (default ``$GRIDCAST_DATA_DIR``).

    A canonical wide file (as written by ``gridcast convert``) is preferred.
    For Ausgrid the yearly raw files under ``ausgrid/`` are merged otherwise.
    Raises ``FileNotFoundError`` when neither is present.
    """
    wide, raw_glob, fmt, region = BENCHMARKS[name]
    root = Path(data_dir or os.environ.get(DATA_DIR_ENV) or ".")
    if (root / wide).exists():
        return resample_hourly(load_raw_csv(root / wide, SourceFormat.WIDE), region)
    files = sorted(root.glob(raw_glob)) if raw_glob else []
    if not files:
        raise FileNotFoundError(f"{name}: no {wide} under {root}; set {DATA_DIR_ENV}")
    raws = [load_raw_csv(f, fmt) for f in files]
    frame = pd.concat([r.frame for r in raws], ignore_index=True)
    report = {}
    for r in raws:
        report.update(r.report)
    merged = RawDataset(frame.sort_values(["client_id", "timestamp"], kind="stable"), fmt, report)
    return resample_hourly(merged, region)


def calendar_for(region, holiday_file=None, base_dir="."):
    if holiday_file:
        return HolidayCalendar.from_csv(resolve_data_path(holiday_file, base_dir), region)
    return HolidayCalendar.for_region(region)


def code_version():
    """Content hash of the package sources plus the version string."""
    h = hashlib.sha256(__version__.encode())
    root = Path(__file__).parent
    for p in sorted(root.rglob("*.py")):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


# --------------------------------------------------------------------------
# runner


@dataclass
class RunOutcome:
    name: str
    status: str
    result: RunResult | None = None
    message: str = ""


def run_name(dataset, family, strategy, h):
    return f"{dataset}_{family.value}_{strategy.value}_h{h}"


def _build_spec(cfg, family, strategy, h, n_clients, overrides):
    model = dict(cfg.model)
    model.update(overrides)
    return ModelSpec(family=family, strategy=strategy, lookback=cfg.lookback_for(family, strategy),
                     horizon=h, n_clients=n_clients, **model)


def _execute(job):
    """Train and score one (family, strategy, horizon) tuple; returns a manifest dict."""
    (cfg, family, strategy, h, split, features, scaler_hash, dataset_hash, run_dir,
     overrides, train_overrides, inner_workers, save_models) = job
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    spec = _build_spec(cfg, family, strategy, h, split.dataset.n_clients, overrides)
    tcfg = default_train_config(family, strategy, spec.lookback, h,
                                **{**cfg.train, **train_overrides, "seed": cfg.seed})
    started = time.perf_counter()
    run = run_strategy(spec, split, features, tcfg, workers=inner_workers, scaler_hash=scaler_hash)
    train_seconds = time.perf_counter() - started
    mae, mse = score(run.models, spec.window, split, features)
    with open(run_dir / "loss.jsonl", "w") as fh:
        for key, m in run.models.items():
            for step, loss in enumerate(m.history.get("train_loss", [])):
                fh.write(json.dumps({"model": key, "kind": "train", "step": step + 1,
                                     "loss": loss}) + "\n")
            for step, loss in m.history.get("val_loss", []):
                fh.write(json.dumps({"model": key, "kind": "val", "step": step, "loss": loss}) + "\n")
    if save_models:
        for key, m in run.models.items():
            m.save(run_dir / "checkpoints" / str(key))
    return {
        "status": "completed",
        "spec": spec.to_dict(),
        "train_config": tcfg.to_dict(),
        "dataset_hash": dataset_hash,
        "scaler_hash": scaler_hash,
        "mae": mae,
        "mse": mse,
        "train_seconds": train_seconds,
        "strategy_run": _jsonable(run.manifest()),
    }


@dataclass
class RunnerOptions:
    output_dir: Path
    force: bool = False
    workers: int = 1
    seed: int | None = None
    max_epochs: int | None = None
    eval_interval: int | None = None
    causal_decoder: bool | None = None
    clip_norm: float | None = None
    holiday_file: str | None = None
    save_models: bool = True
    with_timing: bool = False


def run_experiment(cfg: ExperimentConfig, opts: RunnerOptions):
    """Run every configured tuple; returns ``(outcomes, results_csv_path)``.

    Tuples whose manifest is already completed under the same config hash are
    skipped unless ``opts.force``.
    """
    if opts.seed is not None:
        cfg = dataclasses.replace(cfg, seed=opts.seed)
    out = Path(opts.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.source_text)

    train_overrides, overrides = {}, {}
    if opts.max_epochs is not None:
        train_overrides["max_epochs"] = opts.max_epochs
    if opts.eval_interval is not None:
        train_overrides["eval_interval_steps"] = opts.eval_interval
    if opts.clip_norm is not None:
        train_overrides["clip_norm"] = opts.clip_norm
    if opts.causal_decoder is not None:
        overrides["causal_decoder"] = opts.causal_decoder
    # run-level flags take part in the identity of a run
    identity = hashlib.sha256(json.dumps(
        [cfg.config_hash, cfg.seed, sorted(train_overrides.items()), sorted(overrides.items()),
         opts.holiday_file], default=str).encode()).hexdigest()

    ds = load_dataset(cfg)
    region = Region(cfg.data.get("region", "Custom"))
    holiday_file = opts.holiday_file or cfg.data.get("holiday_file") or None
    cal = calendar_for(region, holiday_file, cfg.base_dir)
    features = build_feature_matrix(ds.timestamps, cal)
    split, params = prepare(ds)
    dataset_hash, scaler_hash = ds.fingerprint(), params.fingerprint()
    name = cfg.dataset_name
    version = code_version()

    outcomes, pending = {}, []
    for family, strategy, h in cfg.tuples():
        rname = run_name(name, family, strategy, h)
        run_dir = out / "runs" / rname
        manifest_path = run_dir / "manifest.json"
        if family in UNIVARIATE_ONLY and strategy is Strategy.MULTIVARIATE:
            outcomes[rname] = RunOutcome(rname, "not_applicable",
                                         message=f"{family.value} has no multivariate variant")
            continue
        if manifest_path.exists() and not opts.force:
            try:
                prev = json.loads(manifest_path.read_text())
            except json.JSONDecodeError:
                prev = {}
            if prev.get("status") == "completed" and prev.get("run_identity") == identity:
                outcomes[rname] = RunOutcome(rname, "skipped", _result_from(prev, out, manifest_path))
                continue
        pending.append((rname, manifest_path, (cfg, family, strategy, h, split, features,
                                               scaler_hash, dataset_hash, str(run_dir), overrides,
                                               train_overrides, None, opts.save_models)))
    # tuples in parallel, or a single tuple with parallel local clients
    parallel = opts.workers > 1 and len(pending) > 1
    inner = 1 if parallel else opts.workers
    pending = [(r, m, j[:11] + (inner,) + j[12:]) for r, m, j in pending]

    def finish(rname, manifest_path, job, manifest=None, error=None):
        cfg_, family, strategy, h = job[:4]
        base = {
            "run": rname,
            "dataset": name,
            "family": family.value,
            "strategy": strategy.value,
            "h": h,
            "seed": cfg.seed,
            "config_hash": cfg.config_hash,
            "run_identity": identity,
            "code_version": version,
            "holiday_file": holiday_file,
        }
        manifest_path.parent.mkdir(parents=True, exist_ok=True)
        if error is not None:
            base.update(status="failed", error=f"{type(error).__name__}: {error}")
            manifest_path.write_text(json.dumps(_jsonable(base), indent=2, sort_keys=True))
            outcomes[rname] = RunOutcome(rname, "failed", message=base["error"])
            return
        base.update(manifest)
        failures = manifest.get("strategy_run", {}).get("failures") or {}
        manifest_path.write_text(json.dumps(_jsonable(base), indent=2, sort_keys=True))
        status = "completed" if not failures else "partial"
        outcomes[rname] = RunOutcome(rname, status, _result_from(base, out, manifest_path),
                                     f"{len(failures)} client models failed" if failures else "")

    if parallel:
        with ProcessPoolExecutor(max_workers=opts.workers) as pool:
            futures = [(r, m, j, pool.submit(_execute, j)) for r, m, j in pending]
            for rname, mpath, job, fut in futures:
                try:
                    finish(rname, mpath, job, fut.result())
                except (GridcastError, ValueError, ArithmeticError) as exc:
                    finish(rname, mpath, job, error=exc)
    else:
        for rname, mpath, job in pending:
            log.info("running %s", rname)
            try:
                finish(rname, mpath, job, _execute(job))
            except (GridcastError, ValueError, ArithmeticError) as exc:
                finish(rname, mpath, job, error=exc)

    ordered = [outcomes[run_name(name, f, s, h)] for f, s, h in cfg.tuples()]
    results = [o.result for o in ordered if o.result is not None]
    csv_path = out / "results.csv"
    write_results_csv(results, csv_path, with_timing=opts.with_timing)
    if results:
        write_tables(results, out)
    return ordered, csv_path


def _result_from(manifest, out_dir, manifest_path):
    return RunResult(manifest["dataset"], manifest["family"], manifest["strategy"], int(manifest["h"]),
                     float(manifest["mae"]), float(manifest["mse"]), manifest.get("train_seconds"),
                     Path(manifest_path).relative_to(out_dir).as_posix())


def write_tables(results, out_dir, reference=True):
    ref = load_reference_results() if reference else None
    paths = []
    for layout in ("MAE", "MSE"):
        p = Path(out_dir) / f"table_{layout.lower()}.md"
        p.write_text(results_table(results, layout, ref))
        paths.append(p)
    return paths


def summarize(outcomes):
    width = max((len(o.name) for o in outcomes), default=0)
    lines = []
    for o in outcomes:
        extra = ""
        if o.result is not None:
            extra = f"mae={o.result.mae:.4f} mse={o.result.mse:.4f}"
        if o.message:
            extra = f"{extra} {o.message}".strip()
        lines.append(f"{o.name:<{width}}  {o.status:<14} {extra}".rstrip())
    return "\n".join(lines)


def dump_schedule(cfg: TrainConfig, n_steps, steps_per_epoch):
    from .training import lr_at
    steps = np.arange(n_steps + 1)
    return [(int(s), lr_at(int(s), cfg, steps_per_epoch)) for s in steps]
