import csv
import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import gammaln

from ysm import csbp
from ysm.oracle import borel_pmf, geometric_pmf
from ysm.rng import make_rng


def two_jump_path(b=0.0):
    times = np.array([0.0, 0.3, 0.9])
    values = [1.0]
    for d in np.diff(times):
        values.append(values[-1] * math.exp(-b * d) + 1)
    return csbp.CsbpPath(b, times, np.array(values), 2.0)


def test_count_births_examples():
    path = two_jump_path()
    assert path.count_births(0.0) == 1
    assert path.count_births(0.5) == 2
    assert csbp.count_births(path, 2.0) == 3


def test_integral_examples():
    assert csbp.CsbpPath(0.0, np.array([0.0]), np.array([1.0]), 1.0).integrated_z(1.0) == 1.0
    assert csbp.CsbpPath(2.0, np.array([0.0]), np.array([1.0]), math.inf).integrated_z(math.inf) == 0.5


def test_martingale_at_zero(rng):
    assert csbp.simulate_z(0.5, 3.0, rng).martingale_value(0.0) == 1.0


@pytest.mark.parametrize("b", [0.0, 0.4, 1.0, 2.5])
def test_path_shape(b, rng):
    path = csbp.simulate_z(b, 4.0, rng)
    t, v = path.jump_times, path.values_after_jump
    before = v[:-1] * np.exp(-b * np.diff(t))
    np.testing.assert_allclose(v[1:] - before, 1.0, rtol=0, atol=1e-12)
    np.testing.assert_allclose(path.z_at(t[1:] - 1e-13), before, rtol=1e-9)
    grid = np.linspace(0, 4, 50)
    assert np.all(path.z_at(grid) > 0)
    assert path.birth_identity_error(grid).max() < 1e-9


def test_no_further_jump_probability(rng):
    """From z = 1 with b = 2 the total jump intensity is 1/b."""
    m = 40_000
    single = sum(csbp.extinction_stats(2.0, rng).births == 1 for _ in range(m))
    q = math.exp(-0.5)
    assert abs(single / m - q) <= 4 * math.sqrt(q * (1 - q) / m)


def test_total_births_follow_borel_law(rng):
    """For b > 1 the population is a Galton-Watson tree with Poisson(1/b)
    offspring, so B(inf) is Borel(1/b)."""
    sample = csbp.sample_at_horizons(2.0, np.full(200_000, np.inf), rng)
    top = 8
    observed = np.array([np.sum(sample.births == k) for k in range(1, top)] + [np.sum(sample.births >= top)])
    probs = borel_pmf(0.5, np.arange(1, top))
    probs = np.append(probs, 1 - probs.sum())
    assert stats.chisquare(observed, probs * sample.births.size).pvalue > 0.001
    np.testing.assert_allclose(sample.births, 2.0 * sample.integral, rtol=0, atol=1e-9)


def test_exponential_moment_of_borel_law():
    """E[e^{cB}] = b holds for the exact law; the series converges slowly."""
    b = 2.0
    c = math.log(b) + 1 / b - 1
    k = np.arange(1, 10**6 + 1, dtype=float)
    mu = 1 / b
    log_pmf = -mu * k + (k - 1) * np.log(mu * k) - gammaln(k + 1)
    partial = np.cumsum(np.exp(c * k + log_pmf))
    # terms decay like k^{-3/2}: the remainder after K terms is O(K^{-1/2})
    assert 2.0 - 5 / math.sqrt(k[-1]) < partial[-1] < 2.0
    assert np.all(np.diff(partial) > 0)


@pytest.mark.parametrize("b", [1.5, 2.0, 4.0])
def test_matched_lamperti_extinction_time(b):
    for s in range(30):
        path = csbp.simulate_z(b, math.inf, make_rng(9, s))
        lp = csbp.simulate_lamperti(b, make_rng(9, s))
        assert lp.zeta == pytest.approx(path.integrated_z(math.inf), rel=1e-12, abs=1e-12)
        assert path.count_births(math.inf) == pytest.approx(b * lp.zeta, abs=1e-9)


@pytest.mark.parametrize("b", [0.0, 2 / 3])
def test_matched_lamperti_path(b):
    for s in range(20):
        path = csbp.simulate_z(b, 3.0, make_rng(4, s))
        lp = csbp.simulate_lamperti(b, make_rng(4, s), z_horizon=3.0)
        for t in np.linspace(0, 3, 31):
            assert lp.z_at(float(t)) == pytest.approx(float(path.z_at(t)), rel=1e-10)


def test_lamperti_without_drift_never_hits_zero(rng):
    lp = csbp.simulate_lamperti(0.0, rng, xi_horizon=50.0)
    assert lp.zeta == math.inf
    assert np.all(np.diff(lp.eta(np.linspace(0, 50, 200))) >= 0)


def test_cmj_empty_horizon(rng):
    assert csbp.simulate_cmj(0.7, 0.0, rng).births_at(0.0) == 1


def test_cmj_yule_case(rng):
    m = 20_000
    births = np.array([csbp.simulate_cmj(0.0, 1.0, rng).births_at(1.0) for _ in range(m)])
    top = 7
    observed = np.array([np.sum(births == k) for k in range(1, top)] + [np.sum(births >= top)])
    probs = np.array([geometric_pmf(1.0, k) for k in range(1, top)])
    probs = np.append(probs, 1 - probs.sum())
    assert stats.chisquare(observed, probs * m).pvalue > 0.001


@pytest.mark.parametrize("b", [0.0, 1 / 3, 2 / 3])
def test_martingale_mean(b, rng):
    for t in (1.0, 2.0, 4.0):
        z = csbp.sample_at_horizons(b, np.full(20_000, t), rng).z
        w = math.exp(-(1 - b) * t) * z
        assert abs(w.mean() - 1) <= 4 * w.std(ddof=1) / math.sqrt(w.size)
        assert w.var(ddof=1) == pytest.approx(csbp.martingale_variance(b, t), rel=0.15)


def test_batch_matches_scalar_simulator_in_law(rng):
    b, t = 2 / 3, 2.0
    batch = csbp.sample_at_horizons(b, np.full(5000, t), rng).births
    scalar = np.array([csbp.simulate_z(b, t, rng).count_births(t) for _ in range(5000)])
    assert stats.mannwhitneyu(batch, scalar).pvalue > 0.001


def test_moments_yule_closed_form():
    m = csbp.moment_ode(0.0, 2, 1.0)
    e = math.e
    assert m[0] == pytest.approx(e, rel=1e-10)
    assert m[1] == pytest.approx(2 * e**2 - e, rel=1e-10)


@pytest.mark.parametrize("t", [0.5, 2.0, 6.0])
def test_first_moment_exact(t):
    b = 2 / 3
    assert csbp.moment_ode(b, 3, t)[0] == pytest.approx(math.exp((1 - b) * t), rel=1e-9)


def test_moment_growth_rate():
    b = 2 / 3
    ratios = np.array([csbp.moment_ode(b, 3, t) / np.exp(np.arange(1, 4) * (1 - b) * t)
                       for t in (5, 10, 20, 40)])
    # m_l(t) e^{-l(1-b)t} increases to a finite limit
    assert np.all(np.diff(ratios, axis=0) >= -1e-9)
    assert np.all(ratios[-1] / ratios[-2] - 1 < 5e-3)


def test_monte_carlo_moments(rng):
    b, t = 1 / 3, 1.5
    z = csbp.sample_at_horizons(b, np.full(100_000, t), rng).z
    m = csbp.moment_ode(b, 3, t)
    for ell in (1, 2, 3):
        x = z**ell
        assert abs(x.mean() - m[ell - 1]) <= 4 * x.std(ddof=1) / math.sqrt(x.size)


def test_hybrid_martingale_limit_is_exponential_at_b0(rng):
    ms = csbp.sample_martingale(0.0, 40.0, 20_000, rng)
    assert ms.n_continued > 0
    assert stats.kstest(ms.w, "expon").pvalue > 0.001


def test_batch_horizon_zero(rng):
    s = csbp.sample_at_horizons(0.5, np.zeros(10), rng)
    assert np.all(s.births == 1) and np.all(s.z == 1)


def test_event_cap_reports_truncation(rng):
    s = csbp.sample_at_horizons(0.0, np.full(100, 5.0), rng, event_cap=3)
    assert s.n_truncated > 0
    assert csbp.simulate_z(0.0, 10.0, rng, event_cap=3).truncated


def test_errors(rng):
    with pytest.raises(ValueError):
        csbp.simulate_z(-1.0, 1.0, rng)
    with pytest.raises(ValueError):
        csbp.simulate_z(0.5, math.inf, rng)
    with pytest.raises(ValueError):
        csbp.extinction_stats(1.0, rng)
    with pytest.raises(ValueError):
        csbp.simulate_lamperti(0.5, rng)
    with pytest.raises(ValueError):
        two_jump_path().z_at(3.0)


def test_path_csv(tmp_path):
    path = two_jump_path()
    csbp.write_path_csv(path, tmp_path / "z.csv", {"b": 0.0})
    lines = (tmp_path / "z.csv").read_text().splitlines()
    assert lines[1] == "t_jump,z_after"
    rows = list(csv.reader(lines[2:]))
    assert [float(r[0]) for r in rows] == [0.0, 0.3, 0.9]
