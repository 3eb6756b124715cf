"""Command-line pipeline.

Each subcommand reads and writes plain files in ``--out-dir``:

    gen-data        dataset.csv (train + calibration), test.csv (fresh test designs)
    train           model.json
    calibrate       calibration.json
    coverage-curve  coverage.csv
    synthesize      controllers.json, trace_<i>.csv
    evaluate        trials.csv
    report          report.json
    run             all of the above in one go

Settings come from ``--config`` (INI) and are then overridden by flags.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import harness as hz
from .conformal import ALPHA_GRID, CalibrationResult, conformal_quantile, coverage_csv, coverage_curve
from .datagen import load_dataset, save_dataset
from .errors import CPCError
from .predictor import load_model, save_model
from .synthesis import trace_csv
from .systems import TASK_NAMES

DATASET, TESTSET = "dataset.csv", "test.csv"
MODEL, CALIB, CONTROLLERS = "model.json", "calibration.json", "controllers.json"
TRIALS, REPORT, COVERAGE = "trials.csv", "report.json", "coverage.csv"


def build_config(args) -> hz.ExperimentConfig:
    parser = hz.new_parser()
    if args.config:
        with open(args.config) as fh:
            parser.read_file(fh)
    if args.task:
        if not parser.has_section("task"):
            parser.add_section("task")
        parser["task"]["name"] = args.task
    cfg = hz.config_from_parser(parser)
    changes = {}
    for flag, name in (("seed", "seed"), ("alpha", "alpha"), ("n", "N"), ("cal_size", "cal_size"),
                       ("test_size", "test_size"), ("desk_scale", "desk_scale"), ("workers", "workers")):
        v = getattr(args, flag)
        if v is not None:
            changes[name] = v
    if args.methods:
        changes["methods"] = hz.parse_methods(args.methods)
    return replace(cfg, **changes) if changes else cfg


def _path(args, name):
    return os.path.join(args.out_dir, name)


def _check_task(cfg, ds, path):
    if ds.task_name != cfg.task.name:
        raise CPCError(f"{path} holds task {ds.task_name!r} but the config selects {cfg.task.name!r}")


def _load_data(args, cfg):
    ds = load_dataset(_path(args, DATASET))
    test = load_dataset(_path(args, TESTSET))
    _check_task(cfg, ds, DATASET)
    return ds, test


def _save_calibration(calib: CalibrationResult, path):
    hz.write_text(path, hz.dumps_json({"alpha": calib.alpha, "q_hat": calib.q_hat,
                                       "quantile_index": calib.quantile_index, "scores": list(calib.scores)}))


def _load_calibration(path) -> CalibrationResult:
    with open(path) as fh:
        d = json.load(fh)
    return conformal_quantile(d["scores"], float(d["alpha"]))


def cmd_gen_data(args, cfg):
    ds, test = hz.generate_data(cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    save_dataset(ds, _path(args, DATASET))
    save_dataset(test, _path(args, TESTSET))
    print(f"wrote {len(ds.records)} records to {DATASET} and {len(test.records)} test designs to {TESTSET}")


def cmd_train(args, cfg):
    ds = load_dataset(_path(args, DATASET))
    _check_task(cfg, ds, DATASET)
    model = hz.fit_model(cfg, ds)
    save_model(model, _path(args, MODEL))
    print(f"trained {model.kind} predictor: loss {model.initial_loss:.4g} -> {model.final_loss:.4g}")


def cmd_calibrate(args, cfg):
    ds = load_dataset(_path(args, DATASET))
    model = load_model(_path(args, MODEL))
    calib = hz.run_calibration(cfg, model, ds)
    _save_calibration(calib, _path(args, CALIB))
    print(f"alpha={calib.alpha} index={calib.quantile_index}/{calib.n} q_hat={calib.q_hat!r}")


def cmd_coverage(args, cfg):
    ds, test = _load_data(args, cfg)
    model = load_model(_path(args, MODEL))
    rows = coverage_curve(model, ds.calibration, test.records, ALPHA_GRID)
    hz.write_text(_path(args, COVERAGE), coverage_csv(rows))
    worst = min(r["empirical_coverage_true_C"] - r["target_coverage"] for r in rows)
    print(f"wrote {COVERAGE}; smallest coverage minus target over the grid: {worst:+.4f}")


def cmd_synthesize(args, cfg):
    _, test = _load_data(args, cfg)
    model = load_model(_path(args, MODEL))
    calib = _load_calibration(_path(args, CALIB))
    if calib.alpha != cfg.alpha:
        calib = conformal_quantile(calib.scores, cfg.alpha)
    designs, skipped = [], []
    for i, r in enumerate(test.records):
        try:
            hz._nominal_on_truth(r.C_true, cfg.task)
        except CPCError:
            skipped.append(i)
            continue
        ctrls = [hz.synthesize_controller(m, r.theta, model, calib, cfg.task, cfg, i) for m in cfg.methods]
        designs.append({"index": i, "controllers": [
            {"method": c.method, "K": None if c.K is None else np.asarray(c.K).tolist(), "note": c.note}
            for c in ctrls]})
        for c in ctrls:
            if c.trace is not None:
                hz.write_text(_path(args, f"trace_{i}.csv"), trace_csv(c.trace))
    hz.write_text(_path(args, CONTROLLERS), hz.dumps_json({"designs": designs, "skipped": skipped,
                                                           "methods": list(cfg.methods)}))
    print(f"synthesized {len(designs)} designs ({len(skipped)} skipped)")


def cmd_evaluate(args, cfg):
    _, test = _load_data(args, cfg)
    with open(_path(args, CONTROLLERS)) as fh:
        d = json.load(fh)
    trials = []
    for entry in d["designs"]:
        i = entry["index"]
        ctrls = [hz.Controller(c["method"], None if c["K"] is None else np.array(c["K"], dtype=float), c["note"])
                 for c in entry["controllers"]]
        trials.extend(hz.score_controllers(i, test.records[i].C_true, ctrls, cfg.task))
    hz.write_text(_path(args, TRIALS), hz.trials_csv(trials))
    print(f"wrote {len(trials)} trial rows to {TRIALS}")


def cmd_report(args, cfg):
    with open(_path(args, TRIALS)) as fh:
        trials = hz.parse_trials_csv(fh.read())
    calib = _load_calibration(_path(args, CALIB)) if os.path.exists(_path(args, CALIB)) else None
    if calib is not None and calib.alpha != cfg.alpha:
        calib = conformal_quantile(calib.scores, cfg.alpha)
    coverage = []
    if os.path.exists(_path(args, COVERAGE)):
        with open(_path(args, COVERAGE)) as fh:
            coverage = [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]
    skipped = []
    n_designs = len({t.design_index for t in trials})
    if os.path.exists(_path(args, CONTROLLERS)):
        with open(_path(args, CONTROLLERS)) as fh:
            skipped = json.load(fh)["skipped"]
    methods = tuple(dict.fromkeys(t.method for t in trials)) or cfg.methods
    report = hz.build_report(replace(cfg, methods=methods), trials, calib, coverage, skipped,
                             n_designs + len(skipped))
    hz.write_text(_path(args, REPORT), hz.dumps_json(report))
    print(format_summary(report))


def cmd_run(args, cfg):
    outcome = hz.run_experiment(cfg, args.out_dir)
    print(format_summary(outcome.report))


def format_summary(report) -> str:
    lines = [f"{'method':24s} {'median (MAD)':>22s} {'unstable':>9s} {'p vs CPC':>10s}"]
    tests = report.get("paired_t_tests_vs_cpc", {})
    for slug, e in report["methods"].items():
        if e["reported"]:
            med = f"{e['median_normalized_regret']:.4f} ({e['mad_normalized_regret']:.4f})"
        else:
            med = "---"
        p = tests.get(slug, {}).get("p_value", "")
        p = f"{p:.3g}" if isinstance(p, float) else str(p)
        lines.append(f"{e['display']:24s} {med:>22s} {e['unstable_fraction']:9.3f} {p:>10s}")
    for name in report.get("absent_methods", []):
        lines.append(f"{name:24s} {'absent':>22s}")
    return "\n".join(lines)


COMMANDS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "calibrate": cmd_calibrate,
    "coverage-curve": cmd_coverage, "synthesize": cmd_synthesize, "evaluate": cmd_evaluate,
    "report": cmd_report, "run": cmd_run,
}


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [experiment] [task] [distributions] [predictor] "
                                         "[synthesis] [baselines] sections")
    common.add_argument("--task", choices=TASK_NAMES)
    common.add_argument("--seed", type=int)
    common.add_argument("--alpha", type=float)
    common.add_argument("--n", type=int, help="number of designs in the train+calibration dataset")
    common.add_argument("--cal-size", type=int)
    common.add_argument("--test-size", type=int, help="number of fresh test designs")
    common.add_argument("--methods", help="comma-separated method ids or display names")
    common.add_argument("--desk-scale", type=float, help="multiply N, calibration and test sizes")
    common.add_argument("--workers", type=int)
    common.add_argument("--out-dir", default=".")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="cpcontrol", description="Conformal robust LQR experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
        COMMANDS[args.command](args, cfg)
    except (CPCError, OSError, ValueError) as exc:
        phase = getattr(exc, "phase", args.command)
        print(f"error [{phase}]: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
