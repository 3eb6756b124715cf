"""Split-conformal calibration with the operator-norm score.

The score of a design/dynamics pair is ``||f(theta) - C||_op``. Calibration
scores give the radius q_hat of an operator-norm ball around the prediction;
under exchangeability the ball contains the identified dynamics with
probability at least 1 - alpha.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .numkernel import op_norm
from .predictor import PredictorModel, predict, predict_vectors
from .systems import DynamicsPair

# Guards the ceiling against (n+1)(1-alpha) landing a hair above an integer.
_CEIL_SLACK = 1e-9
ALPHA_GRID = tuple(round(0.05 * k, 2) for k in range(1, 20))


@dataclass(frozen=True)
class UncertaintyBall:
    center: DynamicsPair
    radius: float
    alpha: float = float("nan")

    def __post_init__(self):
        if not self.radius >= 0:
            raise ValueError("radius must be nonnegative")

    def distance(self, C) -> float:
        C = C.C if isinstance(C, DynamicsPair) else np.asarray(C, dtype=float)
        return op_norm(C - self.center.C)

    def contains(self, C) -> bool:
        return self.distance(C) <= self.radius


@dataclass(frozen=True)
class CalibrationResult:
    scores: tuple
    q_hat: float
    alpha: float
    quantile_index: int

    @property
    def n(self) -> int:
        return len(self.scores)


def score(model: PredictorModel, theta, C) -> float:
    C = C.C if isinstance(C, DynamicsPair) else np.asarray(C, dtype=float)
    return op_norm(predict(model, theta).C - C)


def scores_for(model: PredictorModel, records, use_true_C: bool = False) -> np.ndarray:
    """Scores of many records at once (C_tilde by default, the true C if asked)."""
    if not records:
        return np.zeros(0)
    preds = predict_vectors(model, np.array([r.theta for r in records]))
    out = np.empty(len(records))
    for i, r in enumerate(records):
        target = r.C_true if use_true_C else r.C_tilde
        out[i] = op_norm(preds[i].reshape(model.n, model.n + model.m) - target.C)
    return out


def quantile_index(n: int, alpha: float) -> int:
    return int(math.ceil((n + 1) * (1.0 - alpha) - _CEIL_SLACK))


def conformal_quantile(scores, alpha: float) -> CalibrationResult:
    """The ceil((n+1)(1-alpha))-th smallest score, or +inf when that exceeds n."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    s = np.sort(np.asarray(scores, dtype=float).reshape(-1))
    if s.size == 0:
        raise ValueError("at least one calibration score is required")
    if np.any(s < 0) or not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite and nonnegative")
    k = quantile_index(s.size, alpha)
    q = math.inf if k > s.size else float(s[max(k, 1) - 1])
    return CalibrationResult(tuple(float(v) for v in s), q, float(alpha), k)


def calibrate(model: PredictorModel, records, alpha: float) -> CalibrationResult:
    """Calibrate on estimated dynamics C_tilde, the only quantity observable in practice."""
    return conformal_quantile(scores_for(model, records), alpha)


def with_alpha(calib: CalibrationResult, alpha: float) -> CalibrationResult:
    return conformal_quantile(calib.scores, alpha)


def make_region(model: PredictorModel, theta, calib: CalibrationResult) -> UncertaintyBall:
    return UncertaintyBall(predict(model, theta), calib.q_hat, calib.alpha)


def empirical_coverage(model: PredictorModel, calib: CalibrationResult, test, use_true_C: bool = True) -> float:
    if not test:
        raise ValueError("test set is empty")
    if math.isinf(calib.q_hat):
        return 1.0
    return float(np.mean(scores_for(model, test, use_true_C) <= calib.q_hat))


def coverage_curve(model: PredictorModel, cal_records, test_records, alphas=ALPHA_GRID) -> list[dict]:
    """Rows of (alpha, target, coverage against true C, coverage against C_tilde)."""
    cal_scores = scores_for(model, cal_records)
    s_true = scores_for(model, test_records, use_true_C=True)
    s_est = scores_for(model, test_records, use_true_C=False)
    rows = []
    for a in alphas:
        q = conformal_quantile(cal_scores, a).q_hat
        rows.append({
            "alpha": float(a),
            "target_coverage": 1.0 - float(a),
            "empirical_coverage_true_C": float(np.mean(s_true <= q)),
            "empirical_coverage_estimated_C": float(np.mean(s_est <= q)),
        })
    return rows


COVERAGE_COLUMNS = ("alpha", "target_coverage", "empirical_coverage_true_C", "empirical_coverage_estimated_C")


def coverage_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COVERAGE_COLUMNS)
    for r in rows:
        w.writerow([repr(float(r[c])) for c in COVERAGE_COLUMNS])
    return buf.getvalue()
