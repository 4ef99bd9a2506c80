import numpy as np
import pytest
import scipy.integrate
import scipy.stats
from hypothesis import given, settings, strategies as st

from iongate.noise import (OUParams, analytic_coherence, fit_t2, make_rng, ou_from_T2, ou_initial, ou_path,
                           ou_phase_paths, ou_step, phase_variance, simulate_coherence)


def test_from_t2_example():
    p = ou_from_T2(5e-3)
    assert p.tau == pytest.approx(0.5e-3)
    assert p.c == pytest.approx(1.6e9, rel=1e-12)
    assert p.T2 == pytest.approx(5e-3)


@settings(max_examples=20, deadline=None)
@given(st.floats(1e-4, 1.0), st.floats(0.01, 0.5))
def test_c_scales_as_inverse_cube_of_t2(T2, ratio):
    a, b = ou_from_T2(T2, ratio), ou_from_T2(2 * T2, ratio)
    assert a.c / b.c == pytest.approx(8.0, rel=1e-12)
    assert a.T2 == pytest.approx(T2, rel=1e-12)


def test_infinite_t2_is_noiseless():
    p = ou_from_T2(np.inf)
    assert p.c == 0 and p.T2 == np.inf
    np.testing.assert_array_equal(ou_path(p, 1e-6, 10), np.zeros(11))
    np.testing.assert_array_equal(analytic_coherence([0, 1, 10], p), [1, 1, 1])


def test_invalid_parameters():
    with pytest.raises(ValueError):
        OUParams(-1.0, 1e-3)
    with pytest.raises(ValueError):
        OUParams(1.0, 0.0)
    with pytest.raises(ValueError):
        ou_from_T2(-1.0)
    with pytest.raises(ValueError):
        ou_step(ou_initial(ou_from_T2(1e-3)), ou_from_T2(1e-3), -1e-9)


def test_zero_step_leaves_value_unchanged():
    p = ou_from_T2(5e-3)
    s = ou_initial(p, stream=3)
    F0 = s.F
    assert ou_step(s, p, 0.0).F == F0


def test_long_step_forgets_the_past():
    p = ou_from_T2(5e-3)
    vals = []
    for k in range(4000):
        s = ou_initial(p, stream=k, stationary=False)
        s.F = 1e6  # far outside the stationary spread
        vals.append(ou_step(s, p, 50 * p.tau).F)
    vals = np.asarray(vals)
    assert abs(vals.mean()) < 4 * p.stationary_std / np.sqrt(len(vals))
    assert vals.std() == pytest.approx(p.stationary_std, rel=0.05)


def test_stationary_autocorrelation():
    p = OUParams(2.0, 1.0, seed=4)
    dt = 0.1
    F = ou_path(p, dt, 100_000)
    var = p.c * p.tau / 2
    assert F.var() == pytest.approx(var, rel=0.05)
    for lag in (1, 5, 10):
        r = np.mean(F[:-lag] * F[lag:]) / var
        # correlation length ~ tau / dt samples reduces the effective count
        n_eff = len(F) * dt / (2 * p.tau)
        assert abs(r - np.exp(-lag * dt / p.tau)) < 3 / np.sqrt(n_eff)


def test_stationary_marginal_is_gaussian():
    p = ou_from_T2(5e-3, seed=9)
    F = np.array([ou_path(p, 1e-5, 5, stream=k)[-1] for k in range(5000)])
    assert scipy.stats.kstest(F / p.stationary_std, "norm").pvalue > 0.01


def test_two_half_steps_match_one_step_in_distribution():
    p = ou_from_T2(1e-3, seed=2)
    dt = 0.3 * p.tau
    one = np.array([ou_step(ou_initial(p, k, False), p, dt).F for k in range(4000)])
    two = np.array([ou_step(ou_step(ou_initial(p, k, False), p, dt / 2), p, dt / 2).F
                    for k in range(4000, 8000)])
    assert scipy.stats.ks_2samp(one, two).pvalue > 0.01
    expect = np.sqrt(0.5 * p.c * p.tau * (1 - np.exp(-2 * dt / p.tau)))
    assert two.std() == pytest.approx(expect, rel=0.05)


def test_path_matches_repeated_steps():
    p = ou_from_T2(2e-3, seed=5)
    path = ou_path(p, 1e-6, 50, stream=(7, 1))
    s = ou_initial(p, (7, 1))
    steps = [s.F] + [ou_step(s, p, 1e-6).F for _ in range(50)]
    np.testing.assert_allclose(path, steps, rtol=1e-14, atol=0)


def test_seeded_streams_are_reproducible_and_distinct():
    p = ou_from_T2(5e-3, seed=123)
    np.testing.assert_array_equal(ou_path(p, 1e-6, 20, 4), ou_path(p, 1e-6, 20, 4))
    assert not np.array_equal(ou_path(p, 1e-6, 20, 4), ou_path(p, 1e-6, 20, 5))
    a = make_rng(1, (2, 3)).standard_normal(3)
    np.testing.assert_array_equal(a, make_rng(1, (2, 3)).standard_normal(3))


def test_coherence_examples():
    p = ou_from_T2(5e-3)
    assert analytic_coherence(0.0, p) == 1.0
    # once t >> tau the decay is exp(-(t - tau)/T2)
    t = 20 * p.tau
    assert analytic_coherence(t, p) == pytest.approx(np.exp(-(t - p.tau) / p.T2), rel=1e-8)
    assert phase_variance(1e-9, p) == pytest.approx(0.5 * p.c * p.tau * 1e-18, rel=1e-6)


@pytest.mark.parametrize("initial", ["stationary", "zero"])
def test_phase_variance_against_double_integral(initial):
    c, tau = 3.0, 0.7

    def corr(s, u):
        d = np.exp(-abs(s - u) / tau)
        if initial == "zero":
            d -= np.exp(-(s + u) / tau)
        return 0.5 * c * tau * d

    p = OUParams(c, tau)
    for t in (0.1, 0.7, 3.0):
        # symmetric kernel: twice the smooth triangle u < s
        ref, _ = scipy.integrate.dblquad(corr, 0, t, 0, lambda u: u, epsabs=1e-13, epsrel=1e-11)
        ref *= 2
        assert phase_variance(t, p, initial) == pytest.approx(ref, rel=1e-7)


def test_short_correlation_limit_is_exponential():
    T2 = 1e-3
    t = np.linspace(0, 3 * T2, 7)
    p = ou_from_T2(T2, tau_ratio=1e-4)
    np.testing.assert_allclose(analytic_coherence(t, p), np.exp(-t / T2), atol=1e-3)


def test_phase_paths_variance():
    p = ou_from_T2(5e-3, seed=8)
    times = np.array([0.0, 0.1e-3, 1e-3, 5e-3])
    phi = ou_phase_paths(p, times, 20000)
    var = phi.var(axis=0)
    expect = phase_variance(times, p)
    assert var[0] == 0
    np.testing.assert_allclose(var[1:], expect[1:], rtol=0.05)
    zero = ou_phase_paths(p, times, 20000, stationary=False)
    np.testing.assert_allclose(zero.var(axis=0)[1:], phase_variance(times, p, "zero")[1:], rtol=0.05)


def test_fit_recovers_exponential():
    t = np.linspace(0, 10e-3, 50)
    T2, err = fit_t2(t, 0.9 * np.exp(-t / 4e-3))
    assert T2 == pytest.approx(4e-3, rel=1e-8)


def test_simulated_coherence_tracks_analytic_curve():
    p = ou_from_T2(5e-3, seed=1)
    r = simulate_coherence(p, num_traj=3000, num_points=60)
    assert r.mean[0] == 1.0
    z = np.abs(r.mean - r.analytic)[1:] / np.maximum(r.stderr[1:], 1e-12)
    assert np.mean(z < 3) > 0.95
    assert r.T2_fit == pytest.approx(5e-3, rel=0.1)
