"""Training-corpus generation and least-squares system identification.

Each design theta is paired with a random stabilizing gain K. One trajectory
is rolled out under ``u_t = -K x_t + e_t`` where ``e_t`` is a small Gaussian
input excitation. Without it the regressor ``[x_t; u_t]`` lies in an
n-dimensional subspace and (A, B) cannot be separated. Least squares on the
trajectory then gives the estimate C_tilde = [A_tilde, B_tilde].
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .errors import (CPCError, Diverged, NoConvergence, NoStabilizer, RankDeficient)
from .numkernel import solve_discrete_are
from .systems import DynamicsPair, TaskSpec, design_system, is_stabilizing, sample_design

TRAIN, CALIBRATION, TEST = "train", "calibration", "test"
SPLIT_TAGS = (TRAIN, CALIBRATION, TEST)

DIVERGENCE_NORM = 1e12
ID_RIDGE = 1e-10
ID_MIN_SINGULAR = 1e-8
GAIN_MAX_ATTEMPTS = 200
DESIGN_MAX_ATTEMPTS = 100

DEFAULT_T = 200
DEFAULT_EXCITATION = 1.0
DEFAULT_NOISE = 1e-4
DEFAULT_GAIN_SCALE = 0.1


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray   # (T + 1, n)
    inputs: np.ndarray   # (T, m)
    design_index: int = -1


@dataclass(frozen=True)
class Record:
    theta: np.ndarray
    C_tilde: DynamicsPair
    C_true: DynamicsPair
    split: str = TRAIN


@dataclass
class IdentifiedDataset:
    task_name: str
    n: int
    m: int
    records: list = field(default_factory=list)

    def indices(self, split: str) -> list[int]:
        return [i for i, r in enumerate(self.records) if r.split == split]

    def subset(self, split: str) -> list[Record]:
        return [r for r in self.records if r.split == split]

    @property
    def train(self):
        return self.subset(TRAIN)

    @property
    def calibration(self):
        return self.subset(CALIBRATION)

    @property
    def test(self):
        return self.subset(TEST)


def sample_stabilizing_gain(sys: DynamicsPair, rng: np.random.Generator, scale: float,
                            Q=None, R=None) -> np.ndarray:
    """Random perturbation of the LQR gain that still stabilizes ``sys``.

    Falls back to the LQR gain itself after ``GAIN_MAX_ATTEMPTS`` rejected draws.
    """
    Q = np.eye(sys.n) if Q is None else Q
    R = np.eye(sys.m) if R is None else R
    try:
        _, K_are = solve_discrete_are(sys.A, sys.B, Q, R)
    except NoConvergence as exc:
        raise NoStabilizer(str(exc)) from exc
    if scale == 0:
        return K_are
    for _ in range(GAIN_MAX_ATTEMPTS):
        K = K_are + scale * rng.standard_normal(K_are.shape)
        if is_stabilizing(K, sys):
            return K
    return K_are


def simulate_trajectory(sys: DynamicsPair, K, x0, T: int, excitation_std: float,
                        rng: np.random.Generator | None = None, noise_std: float = 0.0,
                        design_index: int = -1) -> Trajectory:
    """Roll out ``x_{t+1} = A x_t + B u_t + w_t`` with ``u_t = -K x_t + e_t``.

    ``e_t ~ N(0, excitation_std^2)`` and ``w_t ~ N(0, noise_std^2)`` entrywise.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    n, m = sys.n, sys.m
    xs = np.empty((T + 1, n))
    us = np.empty((T, m))
    xs[0] = np.asarray(x0, dtype=float).reshape(n)
    for t in range(T):
        u = -K @ xs[t]
        if excitation_std > 0:
            u = u + excitation_std * rng.standard_normal(m)
        x = sys.A @ xs[t] + sys.B @ u
        if noise_std > 0:
            x = x + noise_std * rng.standard_normal(n)
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE_NORM:
            raise Diverged(f"state norm exceeded {DIVERGENCE_NORM:g} at step {t + 1}")
        us[t] = u
        xs[t + 1] = x
    return Trajectory(xs, us, design_index)


def identify_dynamics(trajectories) -> DynamicsPair:
    """Least-squares estimate of C = [A, B] from stacked ``(x_t, u_t) -> x_{t+1}`` data."""
    if isinstance(trajectories, Trajectory):
        trajectories = [trajectories]
    Z = np.vstack([np.hstack([tr.states[:-1], tr.inputs]) for tr in trajectories])  # (N, n+m)
    Y = np.vstack([tr.states[1:] for tr in trajectories])                          # (N, n)
    n = Y.shape[1]
    d = Z.shape[1]
    if Z.shape[0] < d or np.linalg.svd(Z, compute_uv=False)[-1] < ID_MIN_SINGULAR:
        raise RankDeficient("regressor [x; u] is rank deficient; add input excitation")
    G = Z.T @ Z + ID_RIDGE * np.eye(d)
    C = np.linalg.solve(G, Z.T @ Y).T
    return DynamicsPair.from_C(C, n)


def split_sizes(N: int, cal_size: int | None = None, test_size: int | None = None) -> tuple[int, int, int]:
    """(train, calibration, test) counts; defaults are 50/20/30 percent."""
    cal = N // 5 if cal_size is None else int(cal_size)
    test = (3 * N) // 10 if test_size is None else int(test_size)
    train = N - cal - test
    if N < 0 or min(train, cal, test) < 0:
        raise ValueError(f"invalid split for N={N}: cal={cal}, test={test}")
    return train, cal, test


def _make_record(task: TaskSpec, index: int, seed: int, phase: str, T: int, excitation_std: float,
                 noise_std: float, gain_scale: float, split: str) -> Record:
    rng = rngmod.child(seed, phase, index)
    last_error = None
    for _ in range(DESIGN_MAX_ATTEMPTS):
        theta = sample_design(task, rng)
        try:
            sys = design_system(task, theta)
            K = sample_stabilizing_gain(sys, rng, gain_scale, task.Q, task.R)
        except CPCError as exc:
            # Only non-stabilizable designs are redrawn.
            last_error = exc
            continue
        x0 = rng.multivariate_normal(np.zeros(task.n), task.X0, method="cholesky") \
            if np.any(task.X0) else np.zeros(task.n)
        traj = simulate_trajectory(sys, K, x0, T, excitation_std, rng, noise_std, index)
        C_tilde = identify_dynamics([traj])
        return Record(theta, C_tilde, sys, split)
    raise NoStabilizer(f"record {index}: no stabilizable design in {DESIGN_MAX_ATTEMPTS} draws ({last_error})")


def _record_job(args):
    task, rest = args
    return _make_record(task, *rest)


def build_dataset(task: TaskSpec, N: int, T: int = DEFAULT_T, excitation_std: float = DEFAULT_EXCITATION,
                  noise_std: float = DEFAULT_NOISE, seed: int = 0, cal_size: int | None = None,
                  test_size: int | None = None, gain_scale: float = DEFAULT_GAIN_SCALE,
                  phase: str = "data", workers: int = 1) -> IdentifiedDataset:
    """Sample N designs, roll out one trajectory each and identify C_tilde.

    Splits are contiguous index ranges (train, then calibration, then test);
    records are i.i.d. so this is an exchangeable split. Every record uses its
    own child generator derived from ``(seed, phase, index)``, so the result
    does not depend on ``workers``.
    """
    n_train, n_cal, n_test = split_sizes(N, cal_size, test_size)
    tags = [TRAIN] * n_train + [CALIBRATION] * n_cal + [TEST] * n_test
    jobs = [(i, seed, phase, T, excitation_std, noise_std, gain_scale, tags[i]) for i in range(N)]
    records = []
    if workers <= 1:
        for job in jobs:
            try:
                records.append(_make_record(task, *job))
            except CPCError as exc:
                raise type(exc)(f"record {job[0]}: {exc}") from exc
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            records = list(ex.map(_record_job, [(task, j) for j in jobs], chunksize=16))
    return IdentifiedDataset(task.name, task.n, task.m, records)


# --------------------------------------------------------------------------
# serialization

def _header(ds: IdentifiedDataset, design_dim: int) -> list[str]:
    n, m = ds.n, ds.m
    cols = [f"theta_{i}" for i in range(design_dim)]
    cols += [f"ctilde_{i}_{j}" for i in range(n) for j in range(n + m)]
    cols += [f"c_{i}_{j}" for i in range(n) for j in range(n + m)]
    return cols + ["split"]


def dumps_dataset(ds: IdentifiedDataset) -> str:
    """Serialize to CSV text: one record per line.

    The first line is a comment ``# task=<name> n=<n> m=<m> design_dim=<d>``;
    the second is the column header. Floats are written with ``repr`` so the
    round trip is bit-exact.
    """
    d = len(ds.records[0].theta) if ds.records else 0
    buf = io.StringIO()
    buf.write(f"# task={ds.task_name} n={ds.n} m={ds.m} design_dim={d}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_header(ds, d))
    for r in ds.records:
        row = [repr(float(v)) for v in r.theta]
        row += [repr(float(v)) for v in r.C_tilde.C.reshape(-1)]
        row += [repr(float(v)) for v in r.C_true.C.reshape(-1)]
        w.writerow(row + [r.split])
    return buf.getvalue()


def loads_dataset(text: str) -> IdentifiedDataset:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValueError("missing dataset header comment")
    meta = dict(tok.split("=", 1) for tok in lines[0][1:].split())
    n, m, d = int(meta["n"]), int(meta["m"]), int(meta["design_dim"])
    k = n * (n + m)
    ds = IdentifiedDataset(meta["task"], n, m)
    reader = csv.reader(lines[1:])
    next(reader)
    for row in reader:
        vals = np.array([float(v) for v in row[:-1]])
        theta = vals[:d]
        Ct = vals[d:d + k].reshape(n, n + m)
        C = vals[d + k:d + 2 * k].reshape(n, n + m)
        if row[-1] not in SPLIT_TAGS:
            raise ValueError(f"unknown split tag {row[-1]!r}")
        ds.records.append(Record(theta, DynamicsPair.from_C(Ct, n), DynamicsPair.from_C(C, n), row[-1]))
    return ds


def save_dataset(ds: IdentifiedDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(dumps_dataset(ds))


def load_dataset(path) -> IdentifiedDataset:
    with open(path) as fh:
        return loads_dataset(fh.read())
