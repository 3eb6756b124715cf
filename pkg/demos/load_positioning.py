"""Desk-scale load-positioning experiment through the library API.

Draws designs, identifies each plant from a closed-loop rollout, fits the
predictor theta -> C, calibrates the conformal radius and compares CPC with
H-infinity and the nominal LQR on fresh designs.

Run with ``python3 demos/load_positioning.py [desk_scale]`` (default 0.05).
"""

import sys
import time
from dataclasses import replace

from cpcontrol import harness as hz
from cpcontrol.cli import format_summary
from cpcontrol.conformal import ALPHA_GRID, coverage_curve


def main(desk_scale=0.05):
    cfg = replace(hz.ExperimentConfig(), desk_scale=desk_scale, methods=("cpc", "hinf", "nominal"))
    n, cal, test_n = cfg.sizes
    print(f"designs: {n} (train {n - cal}, calibration {cal}), test {test_n}")

    t0 = time.perf_counter()
    ds, test = hz.generate_data(cfg)
    model = hz.fit_model(cfg, ds)
    print(f"predictor loss {model.initial_loss:.4g} -> {model.final_loss:.4g}")

    calib = hz.run_calibration(cfg, model, ds)
    print(f"alpha {calib.alpha}: q_hat = {calib.q_hat:.5f} (order statistic {calib.quantile_index} of {calib.n})")

    print("\ntarget  empirical coverage")
    for row in coverage_curve(model, ds.calibration, test.records, ALPHA_GRID):
        print(f"{row['target_coverage']:6.2f}  {row['empirical_coverage_true_C']:.3f}")

    trials, _, skipped = hz.run_trials(cfg, model, calib, test.records)
    report = hz.build_report(cfg, trials, calib, [], skipped, len(test.records))
    print("\nnormalized regret on the true plants")
    print(format_summary(report))
    print(f"\nelapsed {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main(float(sys.argv[1]) if len(sys.argv) > 1 else 0.05)
