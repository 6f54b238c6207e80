import math
import warnings

import numpy as np
import pytest

from probekit.errors import InsufficientSignalError
from probekit.fitting import (
    fit_biexponential,
    goodness_of_fit,
    initial_guess,
    model_counts,
    nll_gradient,
)
from probekit.kinetics import RateSet, solve_decay
from probekit.synth import AcquisitionConfig, DecayHistogram, bin_integrals, expected_curve, sample_histogram

from conftest import REFERENCE, reference_acq

TRUE_F, TRUE_S = 1.16502273, 0.06497727


def noiseless(rates=REFERENCE, **kw):
    acq = reference_acq(**kw)
    return DecayHistogram(acq.bin_start_times, expected_curve(rates, acq), acq)


def test_guess_on_noiseless_single_exponential():
    rates = RateSet(1.0, 0.0, 0.0, 1.0, 0.0)
    acq = AcquisitionConfig(25.0, 0.025, 1000, 1e5, 0.0)
    hist = DecayHistogram(acq.bin_start_times, expected_curve(rates, acq), acq)
    guess = initial_guess(hist)
    assert guess.degenerate
    assert guess.params[1] == pytest.approx(1.0, rel=0.01)


@pytest.mark.parametrize("seed", range(5))
def test_guess_within_30_percent(seed):
    hist = sample_histogram(REFERENCE, reference_acq(seed=seed))
    g = initial_guess(hist).params
    assert abs(g[0] / TRUE_F - 1) < 0.3
    assert abs(g[1] / TRUE_S - 1) < 0.3


def test_guess_rejects_empty_histogram():
    with pytest.raises(InsufficientSignalError):
        initial_guess(DecayHistogram(np.arange(100) * 0.1, np.zeros(100, dtype=int)))


def test_guess_rejects_flat_histogram():
    with pytest.raises(InsufficientSignalError):
        initial_guess(DecayHistogram(np.arange(100) * 0.1, np.full(100, 50)))


def test_noiseless_reference_recovered():
    fit = fit_biexponential(noiseless(background_frac=0.0))
    assert fit.converged
    assert fit.solution.gamma_f == pytest.approx(TRUE_F, rel=1e-6)
    assert fit.solution.gamma_s == pytest.approx(TRUE_S, rel=1e-6)


def test_label_swap_gives_same_optimum():
    hist = sample_histogram(REFERENCE, reference_acq(seed=4))
    g = initial_guess(hist).params
    swapped = g[[1, 0, 3, 2, 4]]
    a = fit_biexponential(hist, g)
    b = fit_biexponential(hist, swapped)
    assert b.solution.gamma_f >= b.solution.gamma_s
    np.testing.assert_allclose(a.params, b.params, rtol=1e-6)
    assert a.nll == pytest.approx(b.nll, rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_nll_never_increases(seed):
    hist = sample_histogram(REFERENCE, reference_acq(seed=seed))
    fit = fit_biexponential(hist)
    h = np.array(fit.history)
    assert np.all(np.diff(h) <= 1e-12 * np.abs(h[1:]))


def _central_difference(p, k, c, t, w, rel=1e-6):
    # sum per-bin differences; differencing the ~1e7 total NLL would lose the last digits
    h = rel * abs(p[k])
    up, dn = p.copy(), p.copy()
    up[k] += h
    dn[k] -= h
    mu_up, mu_dn = model_counts(up, t, w), model_counts(dn, t, w)
    d_mu = mu_up - mu_dn
    return float(np.sum(d_mu - c * np.log1p(d_mu / mu_dn))) / (2 * h)


def test_gradient_matches_finite_differences():
    hist = sample_histogram(REFERENCE, reference_acq(seed=9))
    t, c, w = hist.bin_start_times, hist.counts.astype(float), hist.bin_width
    truth = fit_biexponential(hist).params
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        p = truth * np.exp(rng.uniform(-0.7, 0.7, 5))
        g = nll_gradient(p, c, t, w)
        fd = np.array([_central_difference(p, k, c, t, w) for k in range(5)])
        worst = max(worst, np.max(np.abs(g - fd) / np.abs(fd)))
    assert worst <= 1e-5


def test_scale_equivariance():
    base = noiseless(photons=1e6)
    fit1 = fit_biexponential(base)
    k = 7.3
    fitk = fit_biexponential(DecayHistogram(base.bin_start_times, base.counts * k, base.config))
    np.testing.assert_allclose(fitk.params[:2], fit1.params[:2], rtol=1e-8)
    np.testing.assert_allclose(fitk.params[2:4], k * fit1.params[2:4], rtol=1e-8)
    assert fitk.background == pytest.approx(k * fit1.background, rel=1e-6)


def test_covariance_symmetric_psd():
    fit = fit_biexponential(sample_histogram(REFERENCE, reference_acq(seed=2)))
    np.testing.assert_allclose(fit.covariance, fit.covariance.T, rtol=0, atol=0)
    assert np.all(np.linalg.eigvalsh(fit.covariance) >= -1e-12 * np.abs(fit.covariance).max())


def test_errors_consistent_with_information_matrix():
    # the fit should be efficient: observed scatter matches the reported standard errors
    err, sd = [], []
    for seed in range(100):
        fit = fit_biexponential(sample_histogram(REFERENCE, reference_acq(seed=seed)))
        err.append(fit.params[:2] / [TRUE_F, TRUE_S] - 1)
        sd.append(fit.stderr[:2] / fit.params[:2])
    err, sd = np.array(err), np.array(sd)
    assert np.median(np.abs(err[:, 0])) <= 0.01
    ratio = np.std(err, axis=0) / np.median(sd, axis=0)
    assert np.all((ratio > 0.75) & (ratio < 1.3))


def test_reduced_chi2_near_one():
    red = []
    for seed in range(20):
        hist = sample_histogram(REFERENCE, reference_acq(seed=seed, n_bins=1000))
        gof = goodness_of_fit(hist, fit_biexponential(hist))
        assert gof.dof > 0
        red.append(gof.reduced_chi2)
    assert 0.9 <= np.median(red) <= 1.1


def test_single_exponential_force_fit_accepted():
    rates = RateSet(1.0, 0.05, 0.0, 1.0, 0.0)
    hist = sample_histogram(rates, reference_acq(rates=rates, seed=3))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = fit_biexponential(hist)
    assert not goodness_of_fit(hist, fit).lack_of_fit


def test_third_component_flagged():
    flagged = 0
    n = 20
    for seed in range(n):
        acq = reference_acq(seed=seed, background_frac=0.0)
        # extra bright-state population 0.3 decaying at 10 ns^-1
        extra = acq.c0 * REFERENCE.gamma_rad * 0.3 / -math.expm1(-10.0 * acq.rep_period) \
            * bin_integrals(10.0, acq.bin_start_times, acq.bin_width)
        mu = expected_curve(REFERENCE, acq) + extra
        counts = np.random.Generator(np.random.PCG64(seed)).poisson(mu)
        hist = DecayHistogram(acq.bin_start_times, counts, acq)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            flagged += goodness_of_fit(hist, fit_biexponential(hist)).lack_of_fit
    assert flagged >= 0.9 * n


def test_bad_guess_rejected():
    hist = noiseless()
    with pytest.raises(ValueError):
        fit_biexponential(hist, [1.0, -0.1, 1.0, 1.0, 0.0])


def test_model_counts_matches_expected_curve():
    acq = reference_acq()
    sol = solve_decay(REFERENCE)
    from probekit.synth import wraparound_amplitudes
    w = wraparound_amplitudes(sol, acq.rep_period)
    scale = acq.c0 * REFERENCE.gamma_rad
    p = [w.gamma_f, w.gamma_s, scale * w.a_f, scale * w.a_s, acq.background]
    np.testing.assert_allclose(model_counts(p, acq.bin_start_times, acq.bin_width),
                               expected_curve(REFERENCE, acq), rtol=1e-12)
