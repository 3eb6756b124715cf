import math

import numpy as np
import pytest

from cpcontrol import harness as hz
from cpcontrol.conformal import conformal_quantile
from cpcontrol.errors import ConfigError
from cpcontrol.numkernel import solve_discrete_are
from cpcontrol.systems import design_system, get_task, sample_design

from .test_conformal import constant_model

TASK = get_task("load_positioning")


def truth(seed=0):
    theta = sample_design(TASK, np.random.default_rng(seed))
    return theta, design_system(TASK, theta)


def test_t_test_examples(rng):
    a = list(rng.uniform(size=10))
    assert hz.paired_t_test_one_sided(a, a) == 0.5
    b = list(rng.uniform(1, 2, size=30))
    small = [x - 1.0 + 0.01 * rng.standard_normal() for x in b]
    assert hz.paired_t_test_one_sided(small, b) < 1e-3
    assert hz.paired_t_test_one_sided(b, small) > 1 - 1e-3
    p = hz.paired_t_test_one_sided([0.0, 0.0], [1.0, 1.0 - 1e-12])
    assert math.isfinite(p) and 0 <= p < 0.5


def test_t_test_matches_reference_cdf(rng):
    from scipy.stats import ttest_rel
    a, b = rng.standard_normal(15), rng.standard_normal(15) + 0.3
    ref = ttest_rel(a, b, alternative="less").pvalue
    assert hz.paired_t_test_one_sided(list(a), list(b)) == pytest.approx(ref, rel=1e-10)


def test_t_test_drops_incomplete_pairs():
    p = hz.paired_t_test_one_sided([1.0, None, 2.0, 3.0], [2.0, 1.0, math.inf, 5.0])
    assert p == pytest.approx(hz.paired_t_test_one_sided([1.0, 3.0], [2.0, 5.0]))
    with pytest.raises(ValueError):
        hz.paired_t_test_one_sided([1.0], [2.0])
    with pytest.raises(ValueError):
        hz.paired_t_test_one_sided([1.0, 2.0], [1.0])


def test_median_abs_deviation():
    assert hz.median_abs_deviation([1, 2, 3, 4, 100]) == 1.0


def test_oracle_controller_has_zero_regret():
    _, sys = truth()
    _, K = solve_discrete_are(sys.A, sys.B, TASK.Q, TASK.R)
    ctrls = [hz.Controller("nominal", K), hz.Controller("hinf", -10 * K), hz.Controller("cpc", None, "Boom")]
    res = hz.score_controllers(3, sys, ctrls, TASK)
    assert res[0].stabilized and res[0].regret == 0.0 and res[0].normalized_regret == 0.0
    assert not res[1].stabilized and res[1].regret is None and res[1].note == "unstable"
    assert not res[2].stabilized and res[2].note == "Boom"


def test_cpc_with_perfect_predictor_and_zero_radius():
    theta, sys = truth(1)
    model = constant_model(sys.C, d=TASK.design_dim)
    calib = conformal_quantile([0.0] * 19, 0.5)
    cfg = hz.ExperimentConfig(methods=("cpc", "nominal"))
    res = hz.evaluate_trial(theta, sys, cfg.methods, model, calib, TASK, cfg)
    for r in res:
        assert r.stabilized and r.normalized_regret <= 1e-9


def test_unimplemented_methods_are_absent():
    theta, sys = truth()
    model = constant_model(sys.C, d=TASK.design_dim)
    c = hz.synthesize_controller("shared_lyapunov", theta, model, conformal_quantile([0.0], 0.5), TASK,
                                 hz.ExperimentConfig(), 0)
    assert c.K is None and c.note == "absent"


def test_method_resolution():
    assert hz.resolve_method("H-infinity").slug == "hinf"
    assert hz.resolve_method("Row-Col OL MSUS").slug == "rowcol_ol_msus"
    assert hz.parse_methods("cpc, hinf,cpc") == ("cpc", "hinf")
    with pytest.raises(ConfigError):
        hz.parse_methods("cpc,magic")
    with pytest.raises(ConfigError):
        hz.parse_methods(" , ")


def _trial(i, method, regret):
    if regret is None:
        return hz.TrialResult(i, method, False, None, None, 1.0, math.inf, "unstable")
    return hz.TrialResult(i, method, True, regret, regret, 1.0, 1.0 + regret)


def test_summary_rules():
    trials = []
    for i in range(10):
        trials.append(_trial(i, "cpc", 0.01 * (i + 1)))
        trials.append(_trial(i, "hinf", 0.02 * (i + 1)))
        trials.append(_trial(i, "nominal", 0.5 if i == 0 else None))
    s = hz.summarize(trials, ("cpc", "hinf", "nominal"), 10)
    m = s["methods"]
    assert m["cpc"]["median_normalized_regret"] == pytest.approx(0.055)
    assert m["cpc"]["unstable_fraction"] == 0.0 and m["cpc"]["reported"]
    assert m["nominal"]["unstable_fraction"] == 0.9 and not m["nominal"]["reported"]
    for e in m.values():
        assert e["stabilized"] + round(e["unstable_fraction"] * e["trials"]) == e["trials"]
    tests = s["paired_t_tests_vs_cpc"]
    assert tests["hinf"]["pairs"] == 10 and tests["hinf"]["p_value"] < 0.001
    assert tests["nominal"]["p_value"] == "---"


def test_trials_csv_round_trip():
    trials = [_trial(0, "cpc", 0.1), _trial(0, "hinf", None)]
    back = hz.parse_trials_csv(hz.trials_csv(trials))
    assert back == trials
    with pytest.raises(ValueError):
        hz.parse_trials_csv("a,b\n")


def test_json_writer_handles_infinities():
    text = hz.dumps_json({"b": math.inf, "a": [np.float64(1.5), None]})
    assert text.index('"a"') < text.index('"b"') and '"inf"' in text


def test_config_file_parsing(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text("[experiment]\nseed = 4\nN = 500\ncal_size = 100\ntest_size = 50\nmethods = cpc, hinf\n"
                    "[task]\nname = load_positioning\ndt = 0.1\n[predictor]\nwidths = 32, 16\nsteps = 10\n"
                    "[synthesis]\neta_K = 0.002\nrestart_on_instability = no\n[baselines]\nrho = 1.2\n")
    cfg = hz.load_config(path)
    assert (cfg.seed, cfg.N, cfg.cal_size, cfg.methods) == (4, 500, 100, ("cpc", "hinf"))
    assert cfg.predictor.widths == (32, 16) and cfg.predictor.steps == 10
    assert cfg.synthesis.eta_K == 0.002 and cfg.synthesis.restart_on_instability is False
    assert cfg.baselines.rho == 1.2
    for bad in ("[experiment]\nbogus = 1\n", "[extra]\nx = 1\n", "[predictor]\nlayers = 3\n",
                "[synthesis]\nrestart_on_instability = maybe\n"):
        with pytest.raises(ConfigError):
            hz.load_config(text=bad)


def test_desk_scaling_and_validation():
    cfg = hz.ExperimentConfig(desk_scale=0.1)
    assert cfg.sizes == (200, 40, 100)
    with pytest.raises(ConfigError):
        hz.ExperimentConfig(alpha=1.5)
    with pytest.raises(ConfigError):
        hz.ExperimentConfig(N=20, cal_size=15)
    with pytest.raises(ConfigError):
        hz.ExperimentConfig(workers=0)
    echo = hz.config_echo(cfg)
    assert echo["effective_sizes"] == [200, 40, 100] and echo["task"]["name"] == "load_positioning"


def test_rng_children_are_independent_and_stable():
    from cpcontrol.rng import child
    a = child(0, "data", 1).standard_normal(3)
    assert np.array_equal(a, child(0, "data", 1).standard_normal(3))
    assert not np.array_equal(a, child(0, "data", 2).standard_normal(3))
    assert not np.array_equal(a, child(0, "test", 1).standard_normal(3))
