import csv
import json
import math
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest
from scipy import stats

from symheckman import simulate, symdist
from symheckman.exceptions import SpecError, StudyError, SymHeckmanError, UnsupportedGeneratorError
from symheckman.selmodel import LinearPredictors


def test_scenario_presets():
    s1 = simulate.scenario("1")
    assert s1.beta == (1.1, 0.7, 0.1)
    assert s1.gamma == (0.9, 0.5, 1.1, 0.6)
    assert s1.lam == (-0.4, 0.7)
    assert s1.kappa == (0.3, 0.5)
    assert s1.nu == 4.0 and s1.generator == "t"
    assert simulate.scenario("3").gamma[0] == 0.0
    with pytest.raises(SpecError):
        simulate.scenario("9")


def test_config_from_mapping():
    cfg = simulate.config_from_mapping({"scenario": "2", "n": 300, "lambda": [0.1, 0.2]})
    assert cfg.n == 300 and cfg.lam == (0.1, 0.2) and cfg.beta == (1.0, 0.7, 1.1)
    with pytest.raises(SpecError):
        simulate.config_from_mapping({"sample_size": 3})
    with pytest.raises(SpecError):
        simulate.config_from_mapping({"beta": [1, 2]})


# -- sampling --------------------------------------------------------------------

def _pred(n, mu1=0.0, mu2=0.0, sigma=1.0, rho=0.0):
    return LinearPredictors(*(np.full(n, v, dtype=float) for v in (mu1, mu2, sigma, rho)))


def test_gaussian_independence():
    rng = np.random.default_rng(1)
    y, u = simulate.sample_bivariate(100_000, _pred(100_000), symdist.gaussian(), rng)
    assert abs(np.corrcoef(y, u)[0, 1]) < 0.01


def test_gaussian_means():
    n = 100_000
    rng = np.random.default_rng(2)
    y, u = simulate.sample_bivariate(n, _pred(n, mu1=1.3, mu2=-0.4, sigma=2.0, rho=0.6),
                                     symdist.gaussian(), rng)
    assert abs(y.mean() - 1.3) < 3 * 2.0 / math.sqrt(n)
    assert abs(u.mean() + 0.4) < 3 / math.sqrt(n)


def test_student_t_marginal_ks():
    n = 100_000
    rng = np.random.default_rng(3)
    y, _ = simulate.sample_bivariate(n, _pred(n, rho=0.5), symdist.student_t(4.0), rng)
    res = stats.kstest(y, lambda x: symdist.t_cdf(x, 4.0))
    assert res.pvalue > 0.01


def test_student_t_correlation():
    n = 100_000
    rng = np.random.default_rng(4)
    y, u = simulate.sample_bivariate(n, _pred(n, rho=0.5), symdist.student_t(4.0), rng)
    assert abs(np.corrcoef(y, u)[0, 1] - 0.5) < 0.02


def test_tabulated_needs_radial_sampler():
    tab = symdist.gaussian().as_tabulated()
    with pytest.raises(UnsupportedGeneratorError):
        simulate.sample_standardized(10, tab, np.random.default_rng(0))


def test_tabulated_radial_representation():
    radial = lambda rng, n: np.sqrt(rng.chisquare(2, n))   # noqa: E731
    tab = symdist.tabulated(lambda u: np.exp(-u / 2), radial_sampler=radial)
    z1, z2 = simulate.sample_standardized(100_000, tab, np.random.default_rng(5))
    assert stats.kstest(z1, "norm").pvalue > 0.01
    assert abs(np.corrcoef(z1, z2)[0, 1]) < 0.01


@pytest.mark.parametrize("seed", range(10))
def test_selection_probability_matches_H(seed):
    rng = np.random.default_rng(seed)
    rho, mu2, nu = rng.uniform(-0.9, 0.9), rng.uniform(-1.5, 1.5), rng.uniform(2.0, 15.0)
    g = symdist.student_t(nu)
    n = 100_000
    _, u = simulate.sample_bivariate(n, _pred(n, mu2=mu2, rho=rho), g, rng)
    assert abs(np.mean(u > 0) - symdist.H_function(mu2, rho, g)) < 0.005


# -- datasets ----------------------------------------------------------------------

def _mean_censoring(cfg, reps=20):
    return np.mean([simulate.generate_dataset(cfg, simulate.replicate_rng(cfg.seed, r)).censoring
                    for r in range(reps)])


def test_scenario2_censoring():
    assert abs(_mean_censoring(simulate.scenario("2", n=1000)) - 0.31) < 0.02


def test_scenario3_censoring():
    assert abs(_mean_censoring(simulate.scenario("3", n=1000)) - 0.50) < 0.02


def test_infinite_threshold_censors_everything():
    cfg = simulate.scenario("1", n=200, threshold=math.inf)
    data = simulate.generate_dataset(cfg, np.random.default_rng(0))
    assert data.n_observed == 0


def test_dataset_layout():
    cfg = simulate.scenario("1", n=300)
    data = simulate.generate_dataset(cfg, np.random.default_rng(0))
    assert data.dims == (3, 4, 2, 2)
    np.testing.assert_array_equal(data.X[:, 0], 1.0)
    np.testing.assert_array_equal(data.X[:, 1], data.W[:, 1])
    np.testing.assert_array_equal(data.Z, data.V)


def test_covariate_laws():
    for law, lo, hi in (("uniform", 0.0, 1.0), ("truncnorm", 0.0, 1.0)):
        data = simulate.generate_dataset(simulate.scenario("1", n=500, covariate_law=law),
                                         np.random.default_rng(1))
        x = data.W[:, 1:]
        assert x.min() > lo and x.max() < hi


def test_replicates_independent_of_order():
    cfg = simulate.scenario("1", n=100, seed=77)
    late = simulate.generate_dataset(cfg, simulate.replicate_rng(77, 2))
    for rep in (0, 1):
        simulate.generate_dataset(cfg, simulate.replicate_rng(77, rep))
    again = simulate.generate_dataset(cfg, simulate.replicate_rng(77, 2))
    np.testing.assert_array_equal(late.W, again.W)
    np.testing.assert_array_equal(late.u, again.u)


# -- threshold calibration ----------------------------------------------------------

def test_calibrate_symmetric_median():
    cfg = simulate.scenario("1", gamma=(0.0, 0.0, 0.0, 0.0))
    a = simulate.calibrate_threshold(cfg, 0.5, np.random.default_rng(0))
    assert abs(a) < 0.02


def test_calibrate_scenario1_half():
    cfg = simulate.scenario("1", n=2000)
    a = simulate.calibrate_threshold(cfg, 0.5, np.random.default_rng(1))
    assert a > 0
    realized = _mean_censoring(simulate.scenario("1", n=2000, threshold=a), reps=5)
    assert abs(realized - 0.5) < 0.03


def test_calibrate_meps_like_target():
    cfg = simulate.ScenarioConfig(n=3328, beta=(6.0, 0.2, 0.3), gamma=(1.2, 0.3, 0.4, -0.2),
                                  lam=(0.2, 0.1), kappa=(0.6, 0.1), nu=12.0)
    a = simulate.calibrate_threshold(cfg, 0.158, np.random.default_rng(2))
    realized = _mean_censoring(replace(cfg, threshold=a), reps=5)
    assert abs(realized - 0.158) < 0.01


def test_calibrate_rejects_bad_target():
    with pytest.raises(SpecError):
        simulate.calibrate_threshold(simulate.scenario("1"), 1.0, np.random.default_rng(0))


# -- studies ---------------------------------------------------------------------------

def test_study_with_truth_stub_has_zero_error():
    cfg = simulate.scenario("1", n=200, nrep=1)

    def stub(spec, data, start):
        return SimpleNamespace(params=cfg.true_params(spec.nu_free), converged=True)

    summary = simulate.run_study(cfg, fitter=stub)
    np.testing.assert_array_equal(summary.bias, 0.0)
    np.testing.assert_array_equal(summary.mse, 0.0)
    assert summary.names[-1] == "nu" and summary.true[-1] == 4.0


def test_study_failures_counted_and_fatal():
    cfg = simulate.scenario("1", n=200, nrep=10)
    calls = {"n": 0}

    def flaky(spec, data, start):
        calls["n"] += 1
        if calls["n"] == 1:
            raise SymHeckmanError("boom")
        return SimpleNamespace(params=cfg.true_params(), converged=calls["n"] != 2)

    summary = simulate.run_study(cfg, fitter=flaky)
    assert summary.failures == 2
    assert np.isnan(summary.estimates[:2]).all() and not np.isnan(summary.estimates[2:]).any()

    def broken(spec, data, start):
        raise SymHeckmanError("always")

    with pytest.raises(StudyError):
        simulate.run_study(cfg, fitter=broken)


def test_study_deterministic(tmp_path):
    cfg = simulate.scenario("1", n=300, nrep=3, seed=5)
    a, b = simulate.run_study(cfg), simulate.run_study(cfg)
    np.testing.assert_array_equal(a.estimates, b.estimates)
    simulate.write_summary(a, tmp_path / "a.csv", tmp_path / "a.json")
    simulate.write_summary(b, tmp_path / "b.csv", tmp_path / "b.json")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    with open(tmp_path / "a.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["name"] for r in rows] == a.names
    assert set(rows[0]) == {"name", "true", "bias", "mse"}
    meta = json.loads((tmp_path / "a.json").read_text())
    assert {"seed", "nrep", "censoring", "failures"} <= set(meta)
