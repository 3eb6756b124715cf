"""Benchmark dynamical systems parameterized by a design vector theta.

Five linearized plants are provided: ``airfoil`` (aircraft lateral dynamics),
``load_positioning``, ``furuta_pendulum``, ``dc_microgrid`` and
``fusion_plant``. Each task knows how to sample a design vector from its
parameter distribution and how to assemble the continuous-time (A, B) from it.
Experiments run in discrete time, so :func:`discretize` applies a zero-order
hold.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import ConfigError, DegenerateParameters
from .numkernel import STABILITY_EPS, expm, spectral_radius

CONTINUOUS = "continuous"
DISCRETE = "discrete"

DIVISOR_EPS = 1e-9
POSITIVE_MAX_ATTEMPTS = 100
POSITIVE_CLAMP = 1e-6

GRAVITY = 9.81
GAS_CONSTANT = 8.314
TEMPERATURE = 298.15
FARADAY = 96485.0
DC_FLOW_RATE = 1.0  # u_0 in the microgrid model; not a design parameter


@dataclass(frozen=True)
class DynamicsPair:
    """The dynamics matrix C = [A, B] of a linear system."""

    A: np.ndarray
    B: np.ndarray
    time_base: str = DISCRETE

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise ValueError(f"inconsistent shapes A{A.shape} B{B.shape}")
        if self.time_base not in (CONTINUOUS, DISCRETE):
            raise ValueError(f"unknown time base {self.time_base!r}")
        # Contiguous storage: BLAS results depend on memory layout, and pickled
        # copies in worker processes are always contiguous.
        object.__setattr__(self, "A", np.ascontiguousarray(A))
        object.__setattr__(self, "B", np.ascontiguousarray(B))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def C(self) -> np.ndarray:
        return np.hstack([self.A, self.B])

    @classmethod
    def from_C(cls, C, n: int, time_base: str = DISCRETE) -> "DynamicsPair":
        C = np.atleast_2d(np.asarray(C, dtype=float))
        return cls(C[:, :n], C[:, n:], time_base)


# --------------------------------------------------------------------------
# distributions

@dataclass(frozen=True)
class Distribution:
    """Scalar sampling distribution usable as a per-parameter override.

    ``kind`` is one of ``fixed``, ``normal``, ``halfnormal``, ``uniform`` and
    ``inverse_uniform`` (the reciprocal of a uniform draw).
    """

    kind: str
    args: tuple

    _ARITY = {"fixed": 1, "normal": 2, "halfnormal": 2, "uniform": 2, "inverse_uniform": 2}

    def __post_init__(self):
        if self.kind not in self._ARITY:
            raise ConfigError(f"unknown distribution kind {self.kind!r}")
        if len(self.args) != self._ARITY[self.kind]:
            raise ConfigError(f"{self.kind} takes {self._ARITY[self.kind]} arguments, got {len(self.args)}")

    def __call__(self, rng: np.random.Generator) -> float:
        a = self.args
        if self.kind == "fixed":
            return float(a[0])
        if self.kind == "normal":
            return float(rng.normal(a[0], a[1]))
        if self.kind == "halfnormal":
            return float(abs(rng.normal(a[0], a[1])))
        if self.kind == "uniform":
            return float(rng.uniform(a[0], a[1]))
        return float(1.0 / rng.uniform(a[0], a[1]))

    @classmethod
    def parse(cls, text: str) -> "Distribution":
        parts = text.split()
        if not parts:
            raise ConfigError("empty distribution specification")
        try:
            args = tuple(float(p) for p in parts[1:])
        except ValueError as exc:
            raise ConfigError(f"bad distribution arguments in {text!r}") from exc
        return cls(parts[0], args)


class _Drawer:
    """Draws named parameters, applying overrides and positivity resampling."""

    def __init__(self, rng, overrides, positive):
        self.rng = rng
        self.overrides = overrides
        self.positive = positive
        self.values: dict[str, float] = {}

    def __call__(self, name: str, default: Callable[[np.random.Generator], float]) -> float:
        sampler = self.overrides.get(name, default)
        value = sampler(self.rng)
        if name in self.positive:
            attempts = 1
            while value <= 0.0 and attempts < POSITIVE_MAX_ATTEMPTS:
                value = sampler(self.rng)
                attempts += 1
            if value <= 0.0:
                value = POSITIVE_CLAMP
        self.values[name] = float(value)
        return float(value)

    def group(self, names, vector):
        """Store a jointly drawn group, then replace overridden members."""
        for name, v in zip(names, vector):
            if name in self.overrides:
                self(name, self.overrides[name])
            else:
                self.values[name] = float(v)


def _normal(mu, sigma):
    return lambda rng: rng.normal(mu, sigma)


def _halfnormal(mu, sigma):
    return lambda rng: abs(rng.normal(mu, sigma))


def _scaled_uniform(lo, hi, scale):
    return lambda rng: rng.uniform(lo, hi) * scale


# --------------------------------------------------------------------------
# airfoil (aircraft lateral control)

_AIRFOIL_SUFFIX = ("beta", "p", "r", "delta_r", "delta_a")
AIRFOIL_PARAMS = tuple(f"{g}_{s}" for g in ("gamma", "L", "N") for s in _AIRFOIL_SUFFIX)


def _sample_airfoil(draw: _Drawer) -> None:
    rng = draw.rng
    for g in ("gamma", "L", "N"):
        mu = rng.uniform(0.0, 1.0, size=5)
        F = rng.uniform(0.0, 1.0, size=(5, 5))
        # x = mu + F z has covariance F F^T.
        x = mu + F @ rng.standard_normal(5)
        draw.group([f"{g}_{s}" for s in _AIRFOIL_SUFFIX], x)


def _build_airfoil(p):
    g = [p[f"gamma_{s}"] for s in _AIRFOIL_SUFFIX]
    L = [p[f"L_{s}"] for s in _AIRFOIL_SUFFIX]
    N = [p[f"N_{s}"] for s in _AIRFOIL_SUFFIX]
    A = np.array([
        [g[0], g[1], g[2], 1.0],
        [L[0], L[1], L[2], 0.0],
        [N[0], N[1], N[2], 0.0],
        [0.0, 1.0, 0.0, 0.0],
    ])
    B = np.array([
        [g[3], g[4]],
        [L[3], L[4]],
        [N[3], N[4]],
        [0.0, 0.0],
    ])
    return A, B, []


# --------------------------------------------------------------------------
# load positioning

LOAD_PARAMS = ("m_B", "m_L", "d_L", "k_B", "d_B")


def _sample_load(draw: _Drawer) -> None:
    m_B = draw("m_B", lambda rng: 1.0 / rng.uniform(0.04, 0.0667))
    m_L = draw("m_L", lambda rng: 1.0 / rng.uniform(0.3333, 1.0))
    # d_L has no published distribution; it mirrors d_B relative to the load mass.
    draw("d_L", _scaled_uniform(0.004, 0.0667, m_L))
    draw("k_B", _scaled_uniform(0.4, 1.3333, m_B))
    draw("d_B", _scaled_uniform(0.004, 0.0667, m_B))


def _build_load(p):
    m_B, m_L, d_L, k_B, d_B = (p[k] for k in LOAD_PARAMS)
    divisors = [m_B, m_L]
    if min(abs(v) for v in divisors) < DIVISOR_EPS:
        return None, None, divisors
    A = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [0.0, -d_L / m_L - d_L / m_B, k_B / m_B, d_B / m_B],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, d_L / m_B, -k_B / m_B, -d_B / m_B],
    ])
    B = np.array([[0.0], [1.0 / m_L + 1.0 / m_B], [0.0], [-1.0 / m_B]])
    return A, B, divisors


# --------------------------------------------------------------------------
# Furuta pendulum

FURUTA_PARAMS = ("M_p", "m_p", "L_p", "L_r", "J_T", "J_p", "J_r", "D_p", "D_r")
_FURUTA_MEANS = {"M_p": 0.024, "m_p": 0.095, "L_p": 0.129, "L_r": 0.085, "D_p": 0.0005, "D_r": 0.0015}


def _furuta_total_inertia(m_p, L_p, L_r, J_r, J_p):
    # Determinant of the 2x2 inertia matrix of the linearized rotor/pendulum pair.
    return J_p * J_r + J_p * m_p * L_r ** 2 + 0.25 * m_p * L_p ** 2 * J_r


def _sample_furuta(draw: _Drawer) -> None:
    rng = draw.rng
    v = {}
    for name in ("M_p", "m_p", "L_p", "L_r"):
        v[name] = draw(name, _halfnormal(_FURUTA_MEANS[name], rng.uniform(0.0, 1.0)))
    # Inertia parameters are drawn after the masses/lengths they depend on.
    sig_JT = rng.uniform(0.0, 1.0)
    mu_Jp = v["M_p"] * v["L_p"] ** 2 / 12.0
    mu_Jr = v["m_p"] * v["L_r"] ** 2 / 12.0
    mu_JT = _furuta_total_inertia(_FURUTA_MEANS["m_p"], _FURUTA_MEANS["L_p"], _FURUTA_MEANS["L_r"], mu_Jr, mu_Jp)
    draw("J_T", _halfnormal(mu_JT, sig_JT))
    draw("J_p", _halfnormal(mu_Jp, rng.uniform(0.0, 1.0)))
    draw("J_r", _halfnormal(mu_Jr, rng.uniform(0.0, 1.0)))
    for name in ("D_p", "D_r"):
        draw(name, _halfnormal(_FURUTA_MEANS[name], rng.uniform(0.0, 1.0)))


def _build_furuta(p):
    M_p, m_p, L_p, L_r, J_T, J_p, J_r, D_p, D_r = (p[k] for k in FURUTA_PARAMS)
    if abs(J_T) < DIVISOR_EPS:
        return None, None, [J_T]
    g = GRAVITY
    a = J_p + 0.25 * m_p * L_p ** 2
    c = J_r + m_p * L_r ** 2
    A = np.array([
        [0.0, 0.0, J_T, 0.0],
        [0.0, 0.0, 0.0, J_T],
        [0.0, 0.25 * M_p * L_p ** 2 * L_r * g, -a * D_r, 0.5 * m_p * L_p * L_r * D_p],
        [0.0, -0.5 * m_p * L_p * g * c, 0.5 * m_p * L_p * L_r * D_r, -c * D_p],
    ]) / J_T
    B = np.array([[0.0], [0.0], [a], [-0.5 * m_p * L_p * L_r]]) / J_T
    return A, B, [J_T]


# --------------------------------------------------------------------------
# DC microgrid

DC_PARAMS = ("V_s", "V_t", "S", "d", "N", "K_2", "K_3", "K_4", "K_5",
             "Cc_2", "Cc_3", "Cc_4", "Cc_5", "Ct_2", "Ct_3", "Ct_4", "Ct_5")
_DC_DIST = {
    "V_s": (40.0, 26.67), "V_t": (500.0, 333.33), "S": (24.0, 16.0),
    "d": (1.27e-3, 8.47e-4), "N": (37.0, 24.67),
    "K_2": (8.768e-10, 5.845e-10), "K_3": (3.222e-10, 2.148e-10),
    "K_4": (6.825e-10, 4.550e-10), "K_5": (5.897e-10, 3.931e-10),
    **{f"C{t}_{i}": (1.0, 0.667) for t in ("c", "t") for i in (2, 3, 4, 5)},
}


def _sample_dc(draw: _Drawer) -> None:
    for name in DC_PARAMS:
        draw(name, _normal(*_DC_DIST[name]))


def _build_dc(p):
    V_s, V_t, S, d, N = (p[k] for k in ("V_s", "V_t", "S", "d", "N"))
    K = [p[f"K_{i}"] for i in (2, 3, 4, 5)]
    Cc = [p[f"Cc_{i}"] for i in (2, 3, 4, 5)]
    Ct = [p[f"Ct_{i}"] for i in (2, 3, 4, 5)]
    F = FARADAY
    divisors = [V_s, V_t, V_s * d] + [F * c for c in Cc]
    if min(abs(v) for v in divisors) < DIVISOR_EPS:
        return None, None, divisors
    u0 = DC_FLOW_RATE
    vsd = V_s * d
    diag = [2.0 * (-u0 * d - N * K[i] * S) / vsd for i in range(4)]
    nrt = N * GAS_CONSTANT * TEMPERATURE
    A = np.zeros((9, 9))
    A[0, :4] = [diag[0], 0.0, -2 * N * K[2] * S / vsd, -4 * N * K[3] * S / vsd]
    A[1, :4] = [0.0, diag[1], 4 * N * K[2] * S / vsd, 6 * N * K[3] * S / vsd]
    A[2, :4] = [6 * N * K[0] * S / vsd, 4 * N * K[1] * S / vsd, diag[2], 0.0]
    A[3, :4] = [-4 * N * K[0] * S / vsd, -2 * N * K[1] * S / vsd, 0.0, diag[3]]
    for i in range(4):
        A[i, 4 + i] = 2.0 * u0 / V_s
        A[4 + i, i] = u0 / V_t
        A[4 + i, 4 + i] = -u0 / V_t
    A[8, :4] = [nrt / (F * Cc[0]), -nrt / (F * Cc[1]), nrt / (F * Cc[2]), nrt / (F * Cc[3])]
    B = np.zeros((9, 1))
    for i in range(4):
        B[i, 0] = (Ct[i] - Cc[i]) / (V_s / 2.0)
        B[4 + i, 0] = (Cc[i] - Ct[i]) / V_t
    return A, B, divisors


# --------------------------------------------------------------------------
# fusion (nuclear) plant

FUSION_PARAMS = ("alpha_c", "alpha_f", "beta", "beta_1", "beta_2", "beta_3", "Lambda",
                 "lambda_I", "lambda_X", "lambda_1", "lambda_2", "lambda_3", "mu_f", "mu_c",
                 "gamma_X", "gamma_I", "sigma_X", "Sigma_f", "nu", "epsilon_f", "Omega", "M",
                 "theta", "P_0", "phi_0", "X_0")
_FUSION_DIST = {
    "alpha_c": (-2.0, 2.0), "alpha_f": (-14.0, 14.0), "beta": (0.0065, 0.0065),
    "beta_1": (0.00021, 0.00021), "beta_2": (0.00225, 0.00225), "beta_3": (0.00404, 0.00404),
    "Lambda": (2.1, 2.1), "lambda_I": (10.0, 10.0), "lambda_X": (2.9, 2.9),
    "lambda_1": (0.0124, 0.0124), "lambda_2": (0.0369, 0.0369), "lambda_3": (0.632, 0.632),
    "mu_f": (0.0263, 0.0263), "mu_c": (1.0, 1.0), "gamma_X": (0.003, 0.003),
    "gamma_I": (0.059, 0.059), "sigma_X": (3.5e-18, 3.5e-18), "Sigma_f": (0.3358, 0.3358),
    "nu": (1.0, 1.0), "epsilon_f": (0.92, 0.92), "Omega": (1.0, 1.0), "M": (1.0, 1.0),
    "theta": (1.0, 1.0), "P_0": (3.0, math.sqrt(3.0)), "phi_0": (1.0, 1.0), "X_0": (1.0, 1.0),
}


def _sample_fusion(draw: _Drawer) -> None:
    for name in FUSION_PARAMS:
        draw(name, _normal(*_FUSION_DIST[name]))


def _build_fusion(p):
    g = p.__getitem__
    lam = g("Lambda")
    th = g("theta")
    divisors = [lam, g("mu_f"), g("mu_c"), g("nu") * g("Sigma_f") * lam]
    if min(abs(v) for v in divisors) < DIVISOR_EPS:
        return None, None, divisors
    mu_f, mu_c, P0, phi0 = g("mu_f"), g("mu_c"), g("P_0"), g("phi_0")
    Om = g("Omega")
    A = np.zeros((8, 8))
    A[0, :7] = [-g("beta") / lam, g("beta_1") / lam, g("beta_2") / lam, g("beta_3") / lam,
                g("alpha_f") * th / lam, g("alpha_c") * th / (2 * lam),
                -g("sigma_X") * th / (g("nu") * g("Sigma_f") * lam)]
    for i, k in enumerate(("lambda_1", "lambda_2", "lambda_3"), start=1):
        A[i, 0] = g(k)
        A[i, i] = -g(k)
    A[4, [0, 4, 5]] = [g("epsilon_f") * P0 / mu_f, -Om / mu_f, Om / mu_f]
    A[5, [0, 4, 5]] = [(1 - g("epsilon_f")) * P0 / mu_c, Om / mu_c, (2 * g("M") + Om) / (2 * mu_c)]
    A[6, [0, 6, 7]] = [(g("gamma_X") * g("Sigma_f") - g("sigma_X") * g("X_0")) * phi0 * P0,
                       -(g("lambda_X") + phi0 * P0 * th), g("lambda_I")]
    A[7, [0, 7]] = [g("gamma_I") * g("Sigma_f") * phi0 * P0, -g("lambda_I")]
    B = np.zeros((8, 1))
    B[0, 0] = -th / lam
    return A, B, divisors


# --------------------------------------------------------------------------
# task registry

@dataclass(frozen=True)
class _TaskDef:
    n: int
    m: int
    params: tuple
    positive: frozenset
    dt: float
    sample: Callable
    build: Callable


_TASKS = {
    "airfoil": _TaskDef(4, 2, AIRFOIL_PARAMS, frozenset(), 0.01, _sample_airfoil, _build_airfoil),
    "load_positioning": _TaskDef(4, 1, LOAD_PARAMS, frozenset(LOAD_PARAMS), 0.1, _sample_load, _build_load),
    "furuta_pendulum": _TaskDef(4, 1, FURUTA_PARAMS, frozenset(FURUTA_PARAMS), 0.01, _sample_furuta, _build_furuta),
    "dc_microgrid": _TaskDef(9, 1, DC_PARAMS, frozenset(DC_PARAMS), 0.001, _sample_dc, _build_dc),
    "fusion_plant": _TaskDef(8, 1, FUSION_PARAMS, frozenset(FUSION_PARAMS) - {"alpha_c", "alpha_f"},
                             0.001, _sample_fusion, _build_fusion),
}
TASK_NAMES = tuple(_TASKS)


@dataclass(frozen=True, eq=False)
class TaskSpec:
    name: str
    n: int
    m: int
    design_dim: int
    dt: float
    Q: np.ndarray
    R: np.ndarray
    X0: np.ndarray
    param_names: tuple
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        for label, M, strict in (("Q", self.Q, False), ("R", self.R, True), ("X0", self.X0, False)):
            w = np.linalg.eigvalsh(0.5 * (M + M.T))
            if (strict and w.min() <= 0) or w.min() < -1e-12:
                raise ConfigError(f"{label} must be {'positive definite' if strict else 'PSD'}")
        unknown = set(self.overrides) - set(self.param_names)
        if unknown:
            raise ConfigError(f"overrides for unknown parameters: {sorted(unknown)}")


def get_task(name: str, dt: float | None = None, q_scale: float = 1.0, r_scale: float = 1.0,
             x0_scale: float = 1.0, overrides: dict | None = None) -> TaskSpec:
    """Task specification with default cost weights Q = I, R = I, X0 = I (scaled)."""
    if name not in _TASKS:
        raise ConfigError(f"unknown task {name!r}; choose from {TASK_NAMES}")
    t = _TASKS[name]
    return TaskSpec(
        name=name, n=t.n, m=t.m, design_dim=len(t.params),
        dt=t.dt if dt is None else float(dt),
        Q=q_scale * np.eye(t.n), R=r_scale * np.eye(t.m), X0=x0_scale * np.eye(t.n),
        param_names=t.params, overrides=dict(overrides or {}),
    )


TASK_CONFIG_KEYS = {"name", "dt", "q_scale", "r_scale", "x0_scale"}


def task_from_config(parser: configparser.ConfigParser, default_name: str | None = None) -> TaskSpec:
    """Build a TaskSpec from the ``[task]`` and ``[distributions]`` sections.

    ``[task]`` accepts ``name``, ``dt``, ``q_scale``, ``r_scale``, ``x0_scale``.
    ``[distributions]`` maps a parameter name to ``<kind> <args...>``, see
    :class:`Distribution`. Parameter names are case-sensitive (``M_p`` and
    ``m_p`` differ), so the parser must be created with ``optionxform = str``.
    """
    sec = parser["task"] if parser.has_section("task") else {}
    unknown = set(sec) - TASK_CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown keys in [task]: {sorted(unknown)}")
    name = sec.get("name", default_name)
    if name is None:
        raise ConfigError("task name missing")
    try:
        kw = {k: float(sec[k]) for k in ("dt", "q_scale", "r_scale", "x0_scale") if k in sec}
    except ValueError as exc:
        raise ConfigError(f"non-numeric value in [task]: {exc}") from exc
    overrides = {}
    if parser.has_section("distributions"):
        for key, text in parser["distributions"].items():
            overrides[key] = Distribution.parse(text)
    return get_task(name, overrides=overrides, **kw)


def with_overrides(task: TaskSpec, **changes) -> TaskSpec:
    return replace(task, **changes)


def sample_design(task: TaskSpec, rng: np.random.Generator) -> np.ndarray:
    """Draw a design vector theta from the task's parameter distribution."""
    t = _TASKS[task.name]
    draw = _Drawer(rng, task.overrides, t.positive)
    t.sample(draw)
    return np.array([draw.values[p] for p in t.params])


def build_dynamics(task: TaskSpec, theta) -> DynamicsPair:
    """Continuous-time (A, B) of the task's linearized model at design theta."""
    t = _TASKS[task.name]
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.size != len(t.params):
        raise ValueError(f"{task.name} expects a design vector of length {len(t.params)}, got {theta.size}")
    p = dict(zip(t.params, theta.tolist()))
    A, B, divisors = t.build(p)
    if A is None:
        raise DegenerateParameters(f"{task.name}: divisor below {DIVISOR_EPS} in {divisors}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise DegenerateParameters(f"{task.name}: non-finite dynamics entries")
    return DynamicsPair(A, B, CONTINUOUS)


def discretize(sys: DynamicsPair, dt: float) -> DynamicsPair:
    """Zero-order-hold discretization via the augmented matrix exponential."""
    if sys.time_base != CONTINUOUS:
        raise ValueError("discretize expects a continuous-time system")
    if dt <= 0:
        raise ValueError("dt must be positive")
    n, m = sys.n, sys.m
    Maug = np.zeros((n + m, n + m))
    Maug[:n, :n] = sys.A
    Maug[:n, n:] = sys.B
    E = expm(dt * Maug)
    return DynamicsPair(E[:n, :n], E[:n, n:], DISCRETE)


def design_system(task: TaskSpec, theta) -> DynamicsPair:
    """Discrete-time dynamics of a design: build then discretize at ``task.dt``."""
    return discretize(build_dynamics(task, theta), task.dt)


def is_stabilizing(K, sys: DynamicsPair, eps: float = STABILITY_EPS) -> bool:
    if sys.time_base != DISCRETE:
        raise ValueError("is_stabilizing expects a discrete-time system")
    K = np.atleast_2d(np.asarray(K, dtype=float))
    return spectral_radius(sys.A - sys.B @ K) < 1.0 - eps
