import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from scipy.optimize import least_squares

from ionlab.analysis import (FitError, binomial_stderr, coherence_lower_bound_to_t2, combine_runs,
                             fit_baseline_drift, fit_exponential_decay, fit_fringe, fit_sinusoid,
                             sinusoid)
from ionlab.lm import levenberg_marquardt

X = np.linspace(-5, 5, 13)


def test_binomial_values():
    assert binomial_stderr(250, 500) == pytest.approx(0.02236, abs=1e-5)
    # add-one smoothing keeps the error finite at the boundary
    assert binomial_stderr(500, 500) == pytest.approx(0.001994, abs=1e-6)
    with pytest.raises(ValueError):
        binomial_stderr(5, 4)


@pytest.mark.parametrize("p", [0.3, 0.5, 0.8])
def test_binomial_coverage_exact(p):
    n = 500
    k = np.arange(n + 1)
    inside = np.abs(k / n - p) <= binomial_stderr(k, n)
    assert stats.binom.pmf(k[inside], n, p).sum() == pytest.approx(0.68, abs=0.02)


def test_binomial_coverage_monte_carlo():
    rng = np.random.default_rng(1)
    p = rng.uniform(0.1, 0.9, 20000)
    ups = rng.binomial(500, p)
    cover = np.mean(np.abs(ups / 500 - p) <= binomial_stderr(ups, 500))
    assert cover == pytest.approx(0.68, abs=0.02)


def test_lm_matches_scipy():
    rng = np.random.default_rng(3)
    t = np.linspace(0, 3, 30)
    y = 2.0 * np.exp(-t / 0.7) + 0.1 + rng.normal(0, 0.02, t.size)

    def res(p):
        return p[0] * np.exp(-t / p[1]) + p[2] - y

    def fun(p):
        e = np.exp(-t / p[1])
        return res(p), np.column_stack([e, p[0] * t * e / p[1] ** 2, np.ones_like(t)])

    ours = levenberg_marquardt(fun, [1.0, 1.0, 0.0])
    ref = least_squares(res, [1.0, 1.0, 0.0], method="lm", xtol=1e-14, ftol=1e-14)
    assert ours.converged
    np.testing.assert_allclose(ours.params, ref.x, rtol=1e-7)


@pytest.mark.parametrize("truth", [(0.5, 0.9, 5.0, 0.3), (0.45, 0.6, 7.1, -2.0), (0.5, 1.0, 4.2, 3.0)])
def test_sinusoid_exact_recovery(truth):
    y = sinusoid(X, *truth)
    fit = fit_sinusoid(X, y, np.full(X.size, 0.02))
    np.testing.assert_allclose(fit.values[:3], truth[:3], rtol=1e-6)
    assert np.angle(np.exp(1j * (fit["phase"] - truth[3]))) == pytest.approx(0, abs=1e-6)


def test_exponential_exact_recovery():
    t = np.array([0.0002, 0.05, 0.1, 0.2, 0.3])
    fit = fit_exponential_decay(t, 0.98 * np.exp(-t / 1.2), np.full(t.size, 0.02))
    assert fit["intercept"] == pytest.approx(0.98, rel=1e-6)
    assert fit["decay_constant"] == pytest.approx(1.2, rel=1e-6)


def test_exponential_rejects_and_flags():
    t = np.array([0.1, 0.2, 0.3])
    with pytest.raises(ValueError):
        fit_exponential_decay(t, [0.9, -0.1, 0.5], np.full(3, 0.1))
    rising = fit_exponential_decay(t, [0.5, 0.6, 0.7], np.full(3, 0.01))
    assert "non_decaying" in rising.flags


def test_sinusoid_needs_points():
    with pytest.raises(ValueError):
        fit_sinusoid(X[:4], X[:4], np.ones(4))


def test_chi_square_mean_equals_dof():
    rng = np.random.default_rng(11)
    truth = (0.5, 0.8, 5.0, 0.4)
    sig = np.full(X.size, 0.03)
    chis = []
    for _ in range(200):
        y = sinusoid(X, *truth) + rng.normal(0, 0.03, X.size)
        chis.append(fit_sinusoid(X, y, sig, period_guess=5.0).chi_sq)
    dof = X.size - 4
    assert np.mean(chis) == pytest.approx(dof, abs=3 * np.sqrt(2 * dof / 200))


def test_fringe_amplitude_unbiased():
    rng = np.random.default_rng(5)
    n = np.full(X.size, 70)
    p = sinusoid(X, 0.5, 0.85, 5.0, 0.2)
    amps = [fit_fringe(X, n, rng.binomial(70, p), period_guess=5.0)["amplitude"] for _ in range(100)]
    assert np.mean(amps) == pytest.approx(0.85, abs=3 * np.std(amps) / np.sqrt(100) + 0.003)


@settings(max_examples=25, deadline=None)
@given(scale=st.floats(0.01, 100.0))
def test_normalization_invariance(scale):
    # fitting y*c with errors*c rescales amplitude and baseline only
    y = sinusoid(X, 0.5, 0.7, 5.5, 1.0) + 0.01 * np.sin(7 * X)
    s = np.full(X.size, 0.02)
    a = fit_sinusoid(X, y, s, period_guess=5.5)
    b = fit_sinusoid(X, y * scale, s * scale, period_guess=5.5)
    assert b["amplitude"] / scale == pytest.approx(a["amplitude"], rel=1e-9)
    assert b["period"] == pytest.approx(a["period"], rel=1e-9)
    assert b.chi_sq == pytest.approx(a.chi_sq, rel=1e-7)


def test_lower_bound():
    assert coherence_lower_bound_to_t2(0.98, 1.0) == pytest.approx(49.498, abs=1e-3)
    with pytest.raises(ValueError):
        coherence_lower_bound_to_t2(1.2, 1.0)


def test_baseline_drift_linear():
    t = np.array([0.0, 0.1, 0.2, 0.3])
    fit = fit_baseline_drift(t, 0.52 + 0.08 * t, np.full(4, 0.01), amplitude=0.8)
    assert fit["slope"] == pytest.approx(0.1)
    assert fit["offset"] == pytest.approx(0.52)


def test_combine_runs():
    c = combine_runs([(0.99, 0.02)] * 4, name="r")
    assert c["r"] == pytest.approx(0.99)
    assert c.error("r") == pytest.approx(0.01)
    assert c.chi_sq == pytest.approx(0.0)


def test_report_schema():
    rep = fit_sinusoid(X, sinusoid(X, 0.5, 0.9, 5.0, 0.3), np.full(X.size, 0.02)).to_report("abc")
    assert set(rep) == {"model", "params", "reduced_chi_sq", "n_points", "inputs_digest"}
    assert set(rep["params"]["amplitude"]) == {"value", "stderr"}


def test_fit_error_is_runtime_error():
    assert issubclass(FitError, RuntimeError)
