"""Synthetic TCSPC decay histograms from exciton rates.

Counts are Poisson draws from bin-integrated expected intensities. The
excitation is a periodic pulse train, so population left over from earlier
pulses adds to each period; in steady state this only rescales the two
amplitudes (a geometric series per component).

Random numbers come from numpy's PCG64 bit generator seeded with the
integer ``AcquisitionConfig.seed``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .kinetics import BiExpSolution, RateSet, solve_decay

__all__ = [
    "AcquisitionConfig",
    "DecayHistogram",
    "wraparound_amplitudes",
    "bin_integrals",
    "expected_curve",
    "sample_histogram",
    "c0_for_total_counts",
    "make_rng",
]


@dataclass(frozen=True)
class AcquisitionConfig:
    rep_period: float = 25.0
    bin_width: float = 0.025
    n_bins: int = 1000
    c0: float = 1.0
    background: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.rep_period > 0:
            raise ValueError("rep_period must be positive")
        if not self.bin_width > 0:
            raise ValueError("bin_width must be positive")
        if self.n_bins < 1:
            raise ValueError("n_bins must be >= 1")
        # small slack for float products like 1000 * 0.025
        if self.n_bins * self.bin_width > self.rep_period * (1 + 1e-12):
            raise ValueError("histogram window exceeds the repetition period")
        if self.c0 < 0 or self.background < 0:
            raise ValueError("c0 and background must be non-negative")

    @property
    def bin_start_times(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.bin_width


@dataclass
class DecayHistogram:
    """Photon counts per delay bin within one excitation period."""

    bin_start_times: np.ndarray
    counts: np.ndarray
    config: AcquisitionConfig | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bin_start_times = np.asarray(self.bin_start_times, dtype=float)
        self.counts = np.asarray(self.counts)
        if self.bin_start_times.shape != self.counts.shape or self.counts.ndim != 1:
            raise ValueError("bin_start_times and counts must be 1-D and equal length")
        if self.counts.size >= 2:
            steps = np.diff(self.bin_start_times)
            if np.any(steps <= 0):
                raise ValueError("bin_start_times must be strictly increasing")
            if not np.allclose(steps, steps[0], rtol=1e-6, atol=0):
                raise ValueError("bins must be uniformly spaced")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")

    @property
    def bin_width(self) -> float:
        if self.config is not None:
            return self.config.bin_width
        if self.counts.size < 2:
            raise ValueError("cannot infer bin width from a single bin")
        return float((self.bin_start_times[-1] - self.bin_start_times[0]) / (self.counts.size - 1))

    @property
    def n_bins(self) -> int:
        return int(self.counts.size)

    @property
    def total(self) -> float:
        return float(np.sum(self.counts))


def _wrap_factor(gamma: float, tau: float) -> float:
    return -math.expm1(-gamma * tau)


def wraparound_amplitudes(sol: BiExpSolution, rep_period: float) -> BiExpSolution:
    """Steady-state amplitudes under periodic excitation with period ``rep_period``.

    Each amplitude is divided by ``1 - exp(-gamma * rep_period)``. A
    component with zero amplitude stays zero.
    """
    if not rep_period > 0:
        raise ValueError("rep_period must be positive")
    amps = []
    for a, g in ((sol.a_f, sol.gamma_f), (sol.a_s, sol.gamma_s)):
        if a == 0.0:
            amps.append(0.0)
            continue
        if not g > 0:
            raise ValueError("wrap-around requires positive rates for non-zero amplitudes")
        amps.append(a / _wrap_factor(g, rep_period))
    return replace(sol, a_f=amps[0], a_s=amps[1])


def bin_integrals(gamma, t, width):
    """Integral of ``exp(-gamma s)`` over ``[t, t + width]``, vectorised over ``t``."""
    t = np.asarray(t, dtype=float)
    if gamma == 0.0:
        return np.full_like(t, width)
    return np.exp(-gamma * t) * (-math.expm1(-gamma * width) / gamma)


def _signal_per_c0(rates: RateSet, acq: AcquisitionConfig) -> np.ndarray:
    sol = wraparound_amplitudes(solve_decay(rates), acq.rep_period)
    t = acq.bin_start_times
    pop = np.zeros_like(t)
    for a, g in ((sol.a_f, sol.gamma_f), (sol.a_s, sol.gamma_s)):
        if a != 0.0:
            pop += a * bin_integrals(g, t, acq.bin_width)
    return rates.gamma_rad * pop


def expected_curve(rates: RateSet, acq: AcquisitionConfig) -> np.ndarray:
    """Expected counts per bin: ``c0 * gamma_rad * <rho_b>_bin + background``."""
    return acq.c0 * _signal_per_c0(rates, acq) + acq.background


def c0_for_total_counts(rates: RateSet, acq: AcquisitionConfig, total: float) -> float:
    """Detection scale that puts ``total`` signal photons (background excluded) in the histogram."""
    return total / float(np.sum(_signal_per_c0(rates, acq)))


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator; ``seed`` may be an int or a ``numpy.random.SeedSequence``."""
    return np.random.Generator(np.random.PCG64(seed))


def sample_histogram(rates: RateSet, acq: AcquisitionConfig) -> DecayHistogram:
    mu = expected_curve(rates, acq)
    counts = make_rng(acq.seed).poisson(mu)
    return DecayHistogram(acq.bin_start_times, counts.astype(np.int64), acq)
