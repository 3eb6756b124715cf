"""Design-to-dynamics regressors f(theta) -> C_hat.

Two model kinds share one container: ``linear`` (least squares on
standardized features) and ``mlp`` (tanh network trained full-batch with
Adam). Inputs are z-scored per feature. Outputs are centered per entry and
divided by one shared scale (the largest entry std), so the squared loss
weighs errors in the raw units of C, which is what the operator-norm score
measures. ``output_scaling="per_entry"`` z-scores every output separately.
Zero-variance columns get std 1 so constant targets are reproduced exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .systems import DynamicsPair

LINEAR, MLP = "linear", "mlp"
SHARED, PER_ENTRY = "shared", "per_entry"


@dataclass(frozen=True)
class PredictorConfig:
    kind: str = MLP
    widths: tuple = (64, 64)
    lr: float = 1e-3
    steps: int = 1000
    seed: int = 0
    output_scaling: str = SHARED

    def __post_init__(self):
        if self.kind not in (LINEAR, MLP):
            raise ConfigError(f"unknown predictor kind {self.kind!r}")
        if self.output_scaling not in (SHARED, PER_ENTRY):
            raise ConfigError(f"unknown output scaling {self.output_scaling!r}")
        if self.steps <= 0 or any(int(w) <= 0 for w in self.widths):
            raise ConfigError("widths and steps must be positive")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")


@dataclass
class PredictorModel:
    kind: str
    n: int
    m: int
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)
    initial_loss: float = float("nan")
    final_loss: float = float("nan")

    @property
    def input_dim(self) -> int:
        return self.x_mean.size

    @property
    def output_dim(self) -> int:
        return self.n * (self.n + self.m)

    @property
    def widths(self) -> tuple:
        return tuple(W.shape[1] for W in self.weights[:-1])


def _standardize_stats(X, shared: bool = False):
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    if shared:
        top = float(std.max()) if std.size else 0.0
        std = np.full_like(std, top)
    std = np.where(std > 0, std, 1.0)
    return mean, std


def _forward(weights, biases, Z):
    """Returns the output and the list of hidden activations."""
    hs = []
    h = Z
    for W, b in zip(weights[:-1], biases[:-1]):
        h = np.tanh(h @ W + b)
        hs.append(h)
    return h @ weights[-1] + biases[-1], hs


def _mse(out, Y):
    return float(np.mean((out - Y) ** 2))


def _fit_mlp(Zx, Zy, cfg: PredictorConfig):
    rng = np.random.default_rng(cfg.seed)
    sizes = [Zx.shape[1], *[int(w) for w in cfg.widths], Zy.shape[1]]
    weights, biases = [], []
    for a, b in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (a + b))
        weights.append(rng.uniform(-lim, lim, size=(a, b)))
        biases.append(np.zeros(b))
    params = weights + biases
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    N = Zx.shape[0]
    initial = _mse(_forward(weights, biases, Zx)[0], Zy)
    L = len(weights)
    for step in range(1, cfg.steps + 1):
        out, hs = _forward(weights, biases, Zx)
        delta = 2.0 * (out - Zy) / (N * Zy.shape[1])
        gW = [None] * L
        gb = [None] * L
        for layer in range(L - 1, -1, -1):
            inp = Zx if layer == 0 else hs[layer - 1]
            gW[layer] = inp.T @ delta
            gb[layer] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ weights[layer].T) * (1.0 - hs[layer - 1] ** 2)
        grads = gW + gb
        c1 = 1.0 - beta1 ** step
        c2 = 1.0 - beta2 ** step
        for i, (p, g) in enumerate(zip(params, grads)):
            m1[i] = beta1 * m1[i] + (1 - beta1) * g
            m2[i] = beta2 * m2[i] + (1 - beta2) * g * g
            p -= cfg.lr * (m1[i] / c1) / (np.sqrt(m2[i] / c2) + eps)
    final = _mse(_forward(weights, biases, Zx)[0], Zy)
    return weights, biases, initial, final


def train_predictor(records, config: PredictorConfig | None = None, **overrides) -> PredictorModel:
    """Fit f(theta) -> vec(C_tilde) on training records by mean squared error."""
    cfg = config or PredictorConfig()
    if overrides:
        cfg = PredictorConfig(**{**cfg.__dict__, **overrides})
    if len(records) < 10:
        raise ConfigError("at least 10 training records are required")
    n, m = records[0].C_tilde.n, records[0].C_tilde.m
    X = np.array([np.asarray(r.theta, dtype=float) for r in records])
    Y = np.array([r.C_tilde.C.reshape(-1) for r in records])
    x_mean, x_std = _standardize_stats(X)
    y_mean, y_std = _standardize_stats(Y, shared=cfg.output_scaling == SHARED)
    Zx = (X - x_mean) / x_std
    Zy = (Y - y_mean) / y_std
    if cfg.kind == LINEAR:
        F = np.hstack([Zx, np.ones((Zx.shape[0], 1))])
        coef, *_ = np.linalg.lstsq(F, Zy, rcond=None)
        weights, biases = [coef[:-1]], [coef[-1]]
        initial = _mse(np.zeros_like(Zy), Zy)
        final = _mse(F @ coef, Zy)
    else:
        weights, biases, initial, final = _fit_mlp(Zx, Zy, cfg)
    return PredictorModel(cfg.kind, n, m, x_mean, x_std, y_mean, y_std,
                          weights, biases, initial, final)


def predict_vectors(model: PredictorModel, thetas) -> np.ndarray:
    """Vectorized C_hat for a batch of designs, shape (batch, n*(n+m))."""
    X = np.atleast_2d(np.asarray(thetas, dtype=float))
    if X.shape[1] != model.input_dim:
        raise ValueError(f"design dimension {X.shape[1]} != model input dimension {model.input_dim}")
    Z = (X - model.x_mean) / model.x_std
    out, _ = _forward(model.weights, model.biases, Z)
    return out * model.y_std + model.y_mean


def predict(model: PredictorModel, theta) -> DynamicsPair:
    vec = predict_vectors(model, np.asarray(theta, dtype=float).reshape(1, -1))[0]
    return DynamicsPair.from_C(vec.reshape(model.n, model.n + model.m), model.n)


# --------------------------------------------------------------------------
# persistence: JSON with every float written by repr (exact round trip)

def model_to_dict(model: PredictorModel) -> dict:
    return {
        "format": "cpcontrol-predictor/1",
        "kind": model.kind,
        "n": model.n,
        "m": model.m,
        "x_mean": model.x_mean.tolist(),
        "x_std": model.x_std.tolist(),
        "y_mean": model.y_mean.tolist(),
        "y_std": model.y_std.tolist(),
        "layers": [{"shape": list(W.shape), "weight": W.reshape(-1).tolist(), "bias": b.tolist()}
                   for W, b in zip(model.weights, model.biases)],
        "initial_loss": model.initial_loss,
        "final_loss": model.final_loss,
    }


def model_from_dict(d: dict) -> PredictorModel:
    if d.get("format") != "cpcontrol-predictor/1":
        raise ValueError("not a cpcontrol predictor file")
    weights = [np.array(L["weight"], dtype=float).reshape(L["shape"]) for L in d["layers"]]
    biases = [np.array(L["bias"], dtype=float) for L in d["layers"]]
    return PredictorModel(d["kind"], int(d["n"]), int(d["m"]),
                          np.array(d["x_mean"]), np.array(d["x_std"]),
                          np.array(d["y_mean"]), np.array(d["y_std"]),
                          weights, biases, float(d["initial_loss"]), float(d["final_loss"]))


def save_model(model: PredictorModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=1)
        fh.write("\n")


def load_model(path) -> PredictorModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
