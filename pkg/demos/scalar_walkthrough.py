"""Scalar walkthrough of the robust LQR pieces.

Plant x+ = a x + b u with a = 1, b = 1 and unit weights. Every number printed
here can be checked by hand:

  * the LQR gain is the golden-ratio conjugate 0.618...
  * the margin certificate gives the perturbation radius the gain tolerates
  * the inner maximization pushes a to the edge of the uncertainty ball
  * the conformal min-max design trades nominal cost for robustness

Run with ``python3 demos/scalar_walkthrough.py``.
"""

import numpy as np

from cpcontrol.conformal import UncertaintyBall
from cpcontrol.numkernel import solve_discrete_are
from cpcontrol.synthesis import (SynthesisConfig, inner_max_C, lqr_cost, margin_certificate,
                                 robust_synthesize)
from cpcontrol.systems import DynamicsPair

ONE = np.eye(1)


def main():
    plant = DynamicsPair([[1.0]], [[1.0]])
    P, K = solve_discrete_are(plant.A, plant.B, ONE, ONE)
    print(f"LQR: P = {P[0, 0]:.6f}, K = {K[0, 0]:.6f}, closed loop a - bK = {1 - K[0, 0]:.6f}")

    cert = margin_certificate(plant, K)
    print(f"margin certificate: any ||Delta||_op < {cert.r:.6f} keeps a - bK stable")

    for radius in (0.05, 0.2, 0.4):
        ball = UncertaintyBall(plant, radius)
        worst, J = inner_max_C(K, ball, SynthesisConfig(T_C=200), ONE, ONE, ONE, return_value=True)
        print(f"radius {radius:4.2f}: worst case [a, b] = {np.round(worst.C.ravel(), 4)}, "
              f"worst cost of the LQR gain {J:.4f}")

    ball = UncertaintyBall(plant, 0.2)
    res = robust_synthesize(ball, ONE, ONE, ONE, SynthesisConfig(T_K=2000), np.random.default_rng(0))
    K_rob = res.K
    print(f"robust gain over radius 0.2: K = {K_rob[0, 0]:.6f} ({res.stop_reason}, {len(res.trace)} iterates)")
    print(f"  worst-case cost {res.phi[0]:.4f} -> {res.phi[-1]:.4f}")
    print(f"  nominal cost {lqr_cost(K, plant, ONE, ONE, ONE):.4f} (LQR) vs "
          f"{lqr_cost(K_rob, plant, ONE, ONE, ONE):.4f} (robust)")


if __name__ == "__main__":
    main()
