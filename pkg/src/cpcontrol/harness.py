"""End-to-end experiments: data, predictor, calibration, synthesis and evaluation.

Every method designs its controller from the predicted dynamics f(theta) (CPC
additionally uses the conformal radius) and is scored on the true dynamics.
All randomness derives from one master seed via :mod:`cpcontrol.rng`, keyed by
phase name and design index, so results do not depend on the worker count.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.special import stdtr

from . import baselines as bl
from . import rng as rngmod
from .conformal import ALPHA_GRID, CalibrationResult, calibrate, coverage_csv, coverage_curve, make_region
from .datagen import (DEFAULT_EXCITATION, DEFAULT_GAIN_SCALE, DEFAULT_NOISE, DEFAULT_T, build_dataset)
from .errors import ConfigError, CPCError, NoConvergence, PhaseError
from .numkernel import solve_discrete_are
from .predictor import PredictorConfig, predict, train_predictor
from .synthesis import SynthesisConfig, lqr_cost, nominal_lqr, robust_synthesize, trace_csv
from .systems import TaskSpec, get_task, task_from_config

log = logging.getLogger(__name__)

UNREPORTED_UNSTABLE = 0.8
MIN_PAIR_FRACTION = 0.2


# --------------------------------------------------------------------------
# methods

@dataclass(frozen=True)
class Method:
    slug: str
    display: str
    variant: str | None = None
    strategy: str | None = None
    implemented: bool = True


METHODS = (
    Method("random_critical", "Random Critical", bl.RANDOM, bl.CRITICAL),
    Method("random_ol_mss_weak", "Random OL MSS (Weak)", bl.RANDOM, bl.OL_MSS_WEAK),
    Method("random_ol_msus", "Random OL MSUS", bl.RANDOM, bl.OL_MSUS),
    Method("rowcol_critical", "Row-Col Critical", bl.ROW_COL, bl.CRITICAL),
    Method("rowcol_ol_mss_weak", "Row-Col OL MSS (Weak)", bl.ROW_COL, bl.OL_MSS_WEAK),
    Method("rowcol_ol_msus", "Row-Col OL MSUS", bl.ROW_COL, bl.OL_MSUS),
    Method("cpc", "CPC"),
    Method("shared_lyapunov", "Shared Lyapunov", implemented=False),
    Method("auxiliary_stabilizer", "Auxiliary Stabilizer", implemented=False),
    Method("hinf", "H-infinity"),
    Method("nominal", "Nominal LQR"),
)
_BY_KEY = {}
for _m in METHODS:
    _BY_KEY[_m.slug] = _m
    _BY_KEY[_m.display.lower()] = _m
_BY_KEY["h_inf"] = _BY_KEY["h∞"] = _BY_KEY["hinf"]
DEFAULT_METHODS = ("random_critical", "random_ol_mss_weak", "random_ol_msus", "rowcol_critical",
                   "rowcol_ol_mss_weak", "rowcol_ol_msus", "cpc", "hinf")


def resolve_method(name: str) -> Method:
    key = name.strip().lower()
    if key not in _BY_KEY:
        raise ConfigError(f"unknown method {name!r}; choose from {[m.slug for m in METHODS]}")
    return _BY_KEY[key]


def parse_methods(text) -> tuple[str, ...]:
    items = text.split(",") if isinstance(text, str) else list(text)
    out = []
    for item in items:
        if item.strip():
            slug = resolve_method(item).slug
            if slug not in out:
                out.append(slug)
    if not out:
        raise ConfigError("no methods selected")
    return tuple(out)


# --------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class BaselineConfig:
    rho: float = 1.1
    nu: float = 0.5
    gamma_lo: float = bl.GAMMA_LO
    gamma_hi: float = bl.GAMMA_HI
    lqrm_T_K: int = 500


@dataclass(frozen=True)
class ExperimentConfig:
    task: TaskSpec = field(default_factory=lambda: get_task("load_positioning"))
    seed: int = 0
    N: int = 2000
    cal_size: int = 400
    test_size: int = 1000
    alpha: float = 0.1
    methods: tuple = DEFAULT_METHODS
    desk_scale: float = 1.0
    workers: int = 1
    T: int = DEFAULT_T
    excitation_std: float = DEFAULT_EXCITATION
    noise_std: float = DEFAULT_NOISE
    gain_scale: float = DEFAULT_GAIN_SCALE
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    baselines: BaselineConfig = field(default_factory=BaselineConfig)

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.desk_scale <= 0:
            raise ConfigError("desk_scale must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        n, cal, test = self.sizes
        if cal < 1 or test < 1 or n - cal < 10:
            raise ConfigError(f"sizes too small after desk scaling: N={n}, cal={cal}, test={test}")

    @property
    def sizes(self) -> tuple[int, int, int]:
        """(N, calibration, test) after desk scaling."""
        s = self.desk_scale
        return (max(1, round(self.N * s)), max(1, round(self.cal_size * s)), max(1, round(self.test_size * s)))


_EXPERIMENT_KEYS = {"seed": int, "n": int, "cal_size": int, "test_size": int, "alpha": float,
                    "methods": parse_methods, "desk_scale": float, "workers": int, "t": int,
                    "excitation_std": float, "noise_std": float, "gain_scale": float}
_EXPERIMENT_FIELD = {"n": "N", "t": "T"}
_SECTIONS = {"experiment", "task", "distributions", "predictor", "synthesis", "baselines"}


def _parse_bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _coerce_section(sec, cls, extra=None):
    """Build keyword arguments for a config dataclass from an INI section."""
    types = {f.name: f.type for f in fields(cls)}
    kw = {}
    for key, raw in sec.items():
        if key not in types:
            raise ConfigError(f"unknown key {key!r} in [{sec.name}]")
        if extra and key in extra:
            kw[key] = extra[key](raw)
            continue
        default = getattr(cls(), key)
        if isinstance(default, bool):
            kw[key] = _parse_bool(raw)
        elif isinstance(default, int):
            kw[key] = int(raw)
        elif isinstance(default, float):
            kw[key] = float(raw)
        else:
            kw[key] = raw.strip()
    return kw


def _widths(text: str) -> tuple:
    return tuple(int(w) for w in text.replace(" ", "").split(",") if w)


def config_from_parser(parser: configparser.ConfigParser) -> ExperimentConfig:
    unknown = set(parser.sections()) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    task = task_from_config(parser, default_name="load_positioning")
    kw = {"task": task}
    if parser.has_section("experiment"):
        for key, raw in parser["experiment"].items():
            k = key.lower()
            if k not in _EXPERIMENT_KEYS:
                raise ConfigError(f"unknown key {key!r} in [experiment]")
            kw[_EXPERIMENT_FIELD.get(k, k)] = _EXPERIMENT_KEYS[k](raw)
    if parser.has_section("predictor"):
        kw["predictor"] = PredictorConfig(**_coerce_section(parser["predictor"], PredictorConfig,
                                                            {"widths": _widths}))
    if parser.has_section("synthesis"):
        kw["synthesis"] = SynthesisConfig(**_coerce_section(parser["synthesis"], SynthesisConfig))
    if parser.has_section("baselines"):
        kw["baselines"] = BaselineConfig(**_coerce_section(parser["baselines"], BaselineConfig))
    return ExperimentConfig(**kw)


def new_parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # parameter names are case sensitive (M_p vs m_p)
    return parser


def load_config(path=None, text: str | None = None) -> ExperimentConfig:
    parser = new_parser()
    if path is not None:
        with open(path) as fh:
            parser.read_file(fh)
    if text is not None:
        parser.read_string(text)
    return config_from_parser(parser)


def config_echo(cfg: ExperimentConfig) -> dict:
    t = cfg.task
    return {
        "task": {"name": t.name, "dt": t.dt, "n": t.n, "m": t.m, "design_dim": t.design_dim,
                 "overrides": {k: str(v) for k, v in sorted(t.overrides.items())}},
        "seed": cfg.seed, "N": cfg.N, "cal_size": cfg.cal_size, "test_size": cfg.test_size,
        "desk_scale": cfg.desk_scale, "effective_sizes": list(cfg.sizes), "alpha": cfg.alpha,
        "methods": list(cfg.methods), "T": cfg.T, "excitation_std": cfg.excitation_std,
        "noise_std": cfg.noise_std, "gain_scale": cfg.gain_scale,
        "predictor": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg.predictor).items()},
        "synthesis": asdict(cfg.synthesis),
        "baselines": asdict(cfg.baselines),
    }


# --------------------------------------------------------------------------
# data phases

def generate_data(cfg: ExperimentConfig):
    """(train+calibration dataset, fresh test records)."""
    N, n_cal, n_test = cfg.sizes
    common = dict(T=cfg.T, excitation_std=cfg.excitation_std, noise_std=cfg.noise_std, seed=cfg.seed,
                  gain_scale=cfg.gain_scale, workers=cfg.workers)
    try:
        ds = build_dataset(cfg.task, N, cal_size=n_cal, test_size=0, phase="data", **common)
        test = build_dataset(cfg.task, n_test, cal_size=0, test_size=n_test, phase="test", **common)
    except CPCError as exc:
        raise PhaseError("data", str(exc)) from exc
    return ds, test


def fit_model(cfg: ExperimentConfig, ds):
    try:
        return train_predictor(ds.train, cfg.predictor)
    except CPCError as exc:
        raise PhaseError("predict", str(exc)) from exc


def run_calibration(cfg: ExperimentConfig, model, ds) -> CalibrationResult:
    try:
        return calibrate(model, ds.calibration, cfg.alpha)
    except (CPCError, ValueError) as exc:
        raise PhaseError("calibrate", str(exc)) from exc


# --------------------------------------------------------------------------
# synthesis and evaluation

@dataclass(frozen=True)
class TrialResult:
    design_index: int
    method: str
    stabilized: bool
    regret: float | None
    normalized_regret: float | None
    nominal_cost: float
    robust_cost: float
    note: str = ""


TRIAL_COLUMNS = ("design_index", "method", "stabilized", "regret", "normalized_regret",
                 "nominal_cost", "robust_cost", "note")


@dataclass
class Controller:
    method: str
    K: np.ndarray | None
    note: str = ""
    trace: list | None = None


def synthesize_controller(method: str, theta, model, calib, task: TaskSpec, cfg: ExperimentConfig,
                          index: int) -> Controller:
    """Design one method's controller from the prediction f(theta). Errors become notes."""
    m = resolve_method(method)
    if not m.implemented:
        return Controller(m.slug, None, "absent")
    C_hat = predict(model, theta)
    try:
        if m.slug == "cpc":
            ball = make_region(model, theta, calib)
            res = robust_synthesize(ball, task.Q, task.R, task.X0, cfg.synthesis,
                                    rngmod.child(cfg.seed, "synthesize", index))
            return Controller(m.slug, res.K, res.stop_reason, res.trace)
        if m.slug == "hinf":
            gamma = bl.GAMMA_BACKOFF * bl.hinf_min_gamma(C_hat, task.Q, task.R, cfg.baselines.gamma_lo,
                                                        cfg.baselines.gamma_hi)
            return Controller(m.slug, bl.hinf_gain(C_hat, task.Q, task.R, gamma))
        if m.slug == "nominal":
            return Controller(m.slug, nominal_lqr(C_hat, task.Q, task.R))
        rng = rngmod.child(cfg.seed, "baseline:" + m.slug, index)
        K, scales = bl.margin_method(C_hat, m.variant, m.strategy, task.Q, task.R, task.X0, rng,
                                     cfg.baselines.rho, cfg.baselines.nu, cfg.baselines.lqrm_T_K)
        return Controller(m.slug, K, "saturated" if scales.saturated else "")
    except (CPCError, np.linalg.LinAlgError) as exc:
        return Controller(m.slug, None, type(exc).__name__)


def score_controllers(index: int, C_true, controllers, task: TaskSpec) -> list[TrialResult]:
    _, K_star = _nominal_on_truth(C_true, task)
    J_star = lqr_cost(K_star, C_true, task.Q, task.R, task.X0)
    out = []
    for c in controllers:
        J = math.inf if c.K is None else lqr_cost(c.K, C_true, task.Q, task.R, task.X0)
        if math.isfinite(J):
            regret = max(J - J_star, 0.0)
            out.append(TrialResult(index, c.method, True, regret, regret / J_star, J_star, J, c.note))
        else:
            out.append(TrialResult(index, c.method, False, None, None, J_star, math.inf, c.note or "unstable"))
    return out


def _nominal_on_truth(C_true, task):
    return solve_discrete_are(C_true.A, C_true.B, task.Q, task.R)


def evaluate_trial(theta, C_true, methods, model, calib, task: TaskSpec, cfg: ExperimentConfig,
                   index: int = 0, return_controllers: bool = False):
    """Synthesize every method for one design and score it on the true dynamics.

    Raises NoConvergence when the ARE on the true dynamics fails; callers skip
    such designs.
    """
    _nominal_on_truth(C_true, task)
    controllers = [synthesize_controller(mth, theta, model, calib, task, cfg, index) for mth in methods]
    results = score_controllers(index, C_true, controllers, task)
    return (results, controllers) if return_controllers else results


_WORKER = {}


def _init_worker(model, calib, cfg):
    _WORKER.update(model=model, calib=calib, cfg=cfg)


def _trial_job(args):
    index, theta, C_true = args
    w = _WORKER
    try:
        return evaluate_trial(theta, C_true, w["cfg"].methods, w["model"], w["calib"], w["cfg"].task,
                              w["cfg"], index, return_controllers=True)
    except NoConvergence:
        return None


def run_trials(cfg: ExperimentConfig, model, calib, test_records):
    """(trial results, controllers per design, skipped design indices)."""
    jobs = [(i, r.theta, r.C_true) for i, r in enumerate(test_records)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers, initializer=_init_worker, initargs=(model, calib, cfg)) as ex:
            outs = list(ex.map(_trial_job, jobs, chunksize=4))
    else:
        _init_worker(model, calib, cfg)
        outs = [_trial_job(j) for j in jobs]
    trials, controllers, skipped = [], {}, []
    for (i, _, _), out in zip(jobs, outs):
        if out is None:
            log.warning("design %d skipped: ARE on true dynamics failed", i)
            skipped.append(i)
            continue
        trials.extend(out[0])
        controllers[i] = out[1]
    return trials, controllers, skipped


# --------------------------------------------------------------------------
# statistics and report

def paired_t_test_one_sided(a, b) -> float:
    """p-value for H1: mean(a - b) < 0 from a paired t-test.

    Pairs with a missing (None or non-finite) value are dropped. When every
    difference is identical the t statistic is undefined; the p-value is 0.5
    if that difference is zero and 0 or 1 according to its sign otherwise.
    """
    if len(a) != len(b):
        raise ValueError("paired samples need equal lengths")
    d = np.array([x - y for x, y in zip(a, b)
                  if x is not None and y is not None and math.isfinite(x) and math.isfinite(y)], dtype=float)
    if d.size < 2:
        raise ValueError("need at least two complete pairs")
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        return 0.5 if mean == 0 else (0.0 if mean < 0 else 1.0)
    t = mean / (sd / math.sqrt(d.size))
    return float(stdtr(d.size - 1, t))


def median_abs_deviation(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.median(np.abs(x - np.median(x))))


def summarize(trials, methods, n_designs: int) -> dict:
    by = {m: {} for m in methods}
    for t in trials:
        by.setdefault(t.method, {})[t.design_index] = t
    summary = {}
    for m in methods:
        res = list(by[m].values())
        regrets = [t.normalized_regret for t in res if t.stabilized]
        n = len(res)
        unstable = (n - len(regrets)) / n if n else math.nan
        entry = {"display": resolve_method(m).display, "trials": n, "stabilized": len(regrets),
                 "unstable_fraction": unstable,
                 "median_normalized_regret": float(np.median(regrets)) if regrets else None,
                 "mad_normalized_regret": median_abs_deviation(regrets) if regrets else None,
                 "reported": bool(regrets) and unstable <= UNREPORTED_UNSTABLE}
        summary[m] = entry
    tests = {}
    if "cpc" in by:
        for m in methods:
            if m == "cpc":
                continue
            idx = sorted(set(by["cpc"]) & set(by[m]))
            pairs = [(by["cpc"][i].normalized_regret, by[m][i].normalized_regret) for i in idx
                     if by["cpc"][i].stabilized and by[m][i].stabilized]
            usable = summary[m]["reported"] and len(pairs) >= max(2, MIN_PAIR_FRACTION * max(n_designs, 1))
            if usable:
                p = paired_t_test_one_sided([x for x, _ in pairs], [y for _, y in pairs])
                tests[m] = {"pairs": len(pairs), "p_value": p}
            else:
                tests[m] = {"pairs": len(pairs), "p_value": "---"}
    return {"methods": summary, "paired_t_tests_vs_cpc": tests}


def _jsonable(x):
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return _jsonable(x.item())
    return x


def dumps_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def build_report(cfg: ExperimentConfig, trials, calib: CalibrationResult | None, coverage_rows, skipped,
                 n_designs: int) -> dict:
    report = summarize(trials, cfg.methods, n_designs - len(skipped))
    report["absent_methods"] = [m.display for m in METHODS if not m.implemented]
    report["interpretation_notes"] = [
        "margin methods: the found scales are used as multiplicative-noise standard deviations in an LQRm design",
    ]
    report["calibration"] = None if calib is None else {
        "alpha": calib.alpha, "n_calibration": calib.n, "quantile_index": calib.quantile_index, "q_hat": calib.q_hat}
    report["coverage_curve"] = coverage_rows
    report["skipped_designs"] = list(skipped)
    report["config"] = config_echo(cfg)
    report["master_seed"] = cfg.seed
    return report


# --------------------------------------------------------------------------
# CSV helpers

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def trials_csv(trials) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRIAL_COLUMNS)
    for t in trials:
        w.writerow([_fmt(getattr(t, c)) for c in TRIAL_COLUMNS])
    return buf.getvalue()


def _opt_float(s: str):
    return None if s == "" else float(s)


def parse_trials_csv(text: str) -> list[TrialResult]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != TRIAL_COLUMNS:
        raise ValueError("not a trials CSV")
    out = []
    for r in rows[1:]:
        out.append(TrialResult(int(r[0]), r[1], r[2] == "1", _opt_float(r[3]), _opt_float(r[4]),
                               float(r[5]), float(r[6]), r[7]))
    return out


def write_text(path, text: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)


# --------------------------------------------------------------------------
# full run

@dataclass
class ExperimentOutcome:
    report: dict
    trials: list
    coverage: list
    traces: dict
    calib: CalibrationResult
    model: object = None


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> ExperimentOutcome:
    """Execute every phase; write outputs to out_dir when given."""
    ds, test = generate_data(cfg)
    model = fit_model(cfg, ds)
    calib = run_calibration(cfg, model, ds)
    try:
        cov = coverage_curve(model, ds.calibration, test.records, ALPHA_GRID)
    except (CPCError, ValueError) as exc:
        raise PhaseError("calibrate", str(exc)) from exc
    try:
        trials, controllers, skipped = run_trials(cfg, model, calib, test.records)
    except CPCError as exc:
        raise PhaseError("synthesize", str(exc)) from exc
    traces = {i: c.trace for i, cs in controllers.items() for c in cs if c.trace is not None}
    try:
        report = build_report(cfg, trials, calib, cov, skipped, len(test.records))
    except (CPCError, ValueError) as exc:
        raise PhaseError("evaluate", str(exc)) from exc
    outcome = ExperimentOutcome(report, trials, cov, traces, calib, model)
    if out_dir is not None:
        write_outputs(outcome, out_dir)
    return outcome


def write_outputs(outcome: ExperimentOutcome, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_text(os.path.join(out_dir, "trials.csv"), trials_csv(outcome.trials))
    write_text(os.path.join(out_dir, "report.json"), dumps_json(outcome.report))
    write_text(os.path.join(out_dir, "coverage.csv"), coverage_csv(outcome.coverage))
    for i, trace in sorted(outcome.traces.items()):
        write_text(os.path.join(out_dir, f"trace_{i}.csv"), trace_csv(trace))
