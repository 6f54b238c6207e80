import pytest

from probekit.kinetics import RateSet
from probekit.synth import AcquisitionConfig, c0_for_total_counts, expected_curve

REFERENCE = RateSet(1.1, 0.06, 0.005)


def reference_acq(photons=1e6, background_frac=1e-4, seed=0, rep_period=25.0, n_bins=1000, rates=REFERENCE):
    """Acquisition giving ``photons`` signal counts and background as a fraction of the peak."""
    acq = AcquisitionConfig(rep_period, rep_period / n_bins, n_bins, 1.0, 0.0, seed)
    c0 = c0_for_total_counts(rates, acq, photons)
    peak = float(expected_curve(rates, AcquisitionConfig(rep_period, rep_period / n_bins, n_bins, c0)).max())
    return AcquisitionConfig(rep_period, rep_period / n_bins, n_bins, c0, background_frac * peak, seed)


@pytest.fixture
def reference_rates():
    return REFERENCE


def random_ratesets(rng, n, beta_max=0.0):
    """Rates log-uniform in [1e-3, 10] ns^-1; beta uniform in [0, beta_max] when beta_max > 0."""
    out = []
    while len(out) < n:
        g = 10 ** rng.uniform(-3, 1, size=3)
        if beta_max > 0:
            beta = rng.uniform(0, beta_max)
            rho_b = 1.0 / (1.0 + beta)
            out.append(RateSet(g[0], g[1], g[2], rho_b, 1.0 - rho_b))
        else:
            out.append(RateSet(*g))
    return out
