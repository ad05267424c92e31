"""Command-line entry point: ingest, inject, train, simulate, report.

Every flag can also come from an environment variable named
``THEFTWATCH_<FLAG>`` (``--train-first`` -> ``THEFTWATCH_TRAIN_FIRST``).
Precedence is flag, then environment, then config file.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import ExperimentConfig, load_config
from .energy import external_sampler, reduction_fraction
from .errors import DataError, TheftwatchError, UsageError
from .harness import (
    WITH,
    WITHOUT,
    PairedReport,
    SimConfig,
    filtered_percent,
    run_paired_instance,
    run_simulation,
)
from .lstm import load_weights, save_weights
from .meter_data import format_timestamp, write_metadata, write_meter_series
from .pipeline import prepare_data, train_model
from .reporting import emit_report, flatten, load_report, summary_rows, write_events
from .theft import SCENARIO_CODES, build_scenario, scenario_spec

log = logging.getLogger("theftwatch")

ENV_PREFIX = "THEFTWATCH_"
SUBCOMMANDS = ("ingest", "inject", "train", "simulate", "report")
MODE_CHOICES = ("paired", "with", "without")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--scenario", choices=SCENARIO_CODES, help="run one scenario code instead of the config list")
    common.add_argument("--mode", choices=MODE_CHOICES, help="simulation mode (default paired)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--train-first", action="store_true", default=None, help="train before simulating")
    common.add_argument("--workers", type=int, help="parallel scenario workers (default: cores)")
    common.add_argument("--power-sampler", help="command to run around each simulation, e.g. 'powerstat -R 1 3600'")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = _Parser(prog="theftwatch", description="Watchdog-gated LSTM energy-theft detection experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("ingest", parents=[common], help="load or synthesize meters and group them").add_argument(
        "--export-data", action="store_true", help="also write per-meter CSVs and metadata.csv"
    )
    sub.add_parser("inject", parents=[common], help="materialize scenario manifests")
    sub.add_parser("train", parents=[common], help="train the prediction unit")
    sub.add_parser("simulate", parents=[common], help="run paired with/without-watchdog simulations")
    sub.add_parser("report", parents=[common], help="re-emit CSVs and render figures from report.json")
    return parser


def _env(name):
    return os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"))


def _option(args, name, cast=str):
    value = getattr(args, name.replace("-", "_"), None)
    if value is not None:
        return value
    raw = _env(name)
    if raw is None or raw == "":
        return None
    try:
        return cast(raw)
    except ValueError:
        raise UsageError(f"{ENV_PREFIX}{name.upper().replace('-', '_')}={raw!r} is not a valid {cast.__name__}") from None


def _flag(args, name) -> bool:
    if getattr(args, name.replace("-", "_"), None):
        return True
    return (_env(name) or "").lower() in ("1", "true", "yes", "on")


def resolve_config(args) -> ExperimentConfig:
    path = _option(args, "config")
    cfg = load_config(path) if path else ExperimentConfig()
    seed = _option(args, "seed", int)
    if seed is not None:
        cfg.seed = seed
    out = _option(args, "out")
    if out is not None:
        cfg.out = out
    scenario = _option(args, "scenario")
    if scenario is not None:
        if scenario not in SCENARIO_CODES:
            raise UsageError(f"unknown scenario {scenario!r}; valid codes: {', '.join(SCENARIO_CODES)}")
        cfg.scenarios = [scenario]
    workers = _option(args, "workers", int)
    if workers is not None:
        cfg.workers = workers
    sampler = _option(args, "power-sampler")
    if sampler is not None:
        cfg.power_sampler = sampler
    return cfg


def cmd_ingest(cfg: ExperimentConfig, args) -> int:
    data = prepare_data(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    groups = [
        {"parent_id": g.parent_id, "zip": g.zip, "child_ids": list(g.child_ids),
         "tl_assumed": g.tl_assumed, "tl_actual": g.tl_actual}
        for g in data.full.groups
    ]
    any_series = next(iter(data.full.series.values()))
    summary = {
        "meters": len(data.full.series),
        "groups": len(groups),
        "start": format_timestamp(any_series.start),
        "hours": len(any_series),
        "train_hours": len(next(iter(data.train.series.values()))),
        "eval_hours": len(next(iter(data.eval.series.values()))),
        "imputed_readings": int(sum(s.imputed.sum() for s in data.full.series.values())),
    }
    (out / "groups.json").write_text(json.dumps({"summary": summary, "groups": groups}, indent=2) + "\n")
    if getattr(args, "export_data", False):
        data_dir = out / "data"
        data_dir.mkdir(exist_ok=True)
        for s in data.full.series.values():
            write_meter_series(s, data_dir / f"{s.meter_id}.csv")
        write_metadata([replace(r, data_path=f"{r.meter_id}.csv") for r in data.records], data_dir / "metadata.csv")
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_inject(cfg: ExperimentConfig, args) -> int:
    data = prepare_data(cfg)
    out = Path(cfg.out) / "scenarios"
    out.mkdir(parents=True, exist_ok=True)
    for code in cfg.scenarios:
        instance = build_scenario(data.eval.groups, data.eval.series, scenario_spec(code, cfg.seed))
        path = out / f"{code}.json"
        path.write_text(json.dumps(instance.manifest(), indent=2, sort_keys=True) + "\n")
        print(f"{code}\tthieves={len(instance.thieves)}\ttampered_steps={instance.tampered_steps()}\t{path}")
    return 0


def _train_and_save(cfg, data):
    model, trace = train_model(cfg, data)
    path = cfg.weights_path
    path.parent.mkdir(parents=True, exist_ok=True)
    save_weights(model, path)
    with open(path.parent / "train_loss.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss"])
        writer.writerows([k, f"{v:.6f}"] for k, v in enumerate(trace))
    log.info("saved weights to %s (final loss %.4f)", path, trace[-1] if trace else float("nan"))
    return model, trace


def cmd_train(cfg: ExperimentConfig, args) -> int:
    _, trace = _train_and_save(cfg, prepare_data(cfg))
    print(f"epochs={len(trace)}\tfinal_loss={trace[-1]:.6f}\tweights={cfg.weights_path}")
    return 0


def _run_scenario(job):
    """One scenario in one process; top-level so worker pools can pickle it."""
    cfg, code, mode, model, data = job
    instance = build_scenario(data.eval.groups, data.eval.series, scenario_spec(code, cfg.seed))
    sim = SimConfig(cfg.watchdog, log_events=True)
    if mode == "paired" and not cfg.power_sampler:
        return run_paired_instance(instance, model, sim)
    results = {}
    for m in ((WITHOUT, WITH) if mode == "paired" else (WITH if mode == "with" else WITHOUT,)):
        if cfg.power_sampler:
            sampler = external_sampler(cfg.power_sampler, Path(cfg.out) / "power")
            with sampler:
                results[m] = run_simulation(instance, model, m, sim)
            sampler.apply(results[m].cost)
        else:
            results[m] = run_simulation(instance, model, m, sim)
    if mode != "paired":
        return next(iter(results.values()))
    w, o = results[WITH], results[WITHOUT]
    fp = filtered_percent(w.positives, o.positives)
    red = reduction_fraction(w.cost, o.cost) if o.cost.macs else None
    for r in (w, o):
        r.filtered_percent, r.mac_reduction = fp, red
    return PairedReport(code, w, o, fp, red)


def simulate_all(cfg: ExperimentConfig, mode: str = "paired", train_first: bool = False) -> int:
    data = prepare_data(cfg)
    if train_first:
        model, _ = _train_and_save(cfg, data)
    else:
        if not cfg.weights_path.is_file():
            raise DataError(f"no weights at {cfg.weights_path}; run 'theftwatch train' or pass --train-first")
        model = load_weights(cfg.weights_path, expected_hidden=cfg.train.hidden_size)
    jobs = [(cfg, code, mode, model, data) for code in cfg.scenarios]
    workers = cfg.workers or os.cpu_count() or 1
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(min(workers, len(jobs))) as pool:
            results = list(pool.map(_run_scenario, jobs))
    else:
        results = [_run_scenario(j) for j in jobs]

    out = Path(cfg.out)
    emit_report(results, out)
    events = [e for r in flatten(results) if r.mode == WITH for e in r.events]
    write_events(events, out / "watchdog_events.csv")
    for row in summary_rows(flatten(results)):
        print("\t".join(row))
    return 0


def cmd_simulate(cfg: ExperimentConfig, args) -> int:
    return simulate_all(cfg, _option(args, "mode") or "paired", _flag(args, "train-first"))


def cmd_report(cfg: ExperimentConfig, args) -> int:
    from .plotting import render_figures

    out = Path(cfg.out)
    reports = load_report(out / "report.json")
    emit_report(reports, out, formats=("csv",))
    for path in render_figures(reports, out / "figures"):
        print(path)
    return 0


COMMANDS = {"ingest": cmd_ingest, "inject": cmd_inject, "train": cmd_train, "simulate": cmd_simulate, "report": cmd_report}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"theftwatch: usage error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"theftwatch: error: {exc}", file=sys.stderr)
        return 1
    except TheftwatchError as exc:
        print(f"theftwatch: error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run_cli())
