"""Three-level bright/dark/ground exciton kinetics.

The bright state decays radiatively and non-radiatively and exchanges
population with the dark state through a single spin-flip rate. The dark
state decays only non-radiatively, at the same rate as the bright state.
All rates are in ns^-1 and all times in ns.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import DegenerateRatesError, StepSizeUnderflowError

__all__ = [
    "BOLTZMANN_UEV_PER_K",
    "DEGENERACY_THRESHOLD",
    "RateSet",
    "BiExpSolution",
    "solve_decay",
    "bright_population",
    "ode_oracle",
    "detailed_balance_factor",
]

#: Boltzmann constant in micro-eV per kelvin.
BOLTZMANN_UEV_PER_K = 86.173
#: Smallest allowed gap between fast and slow rates (ns^-1).
DEGENERACY_THRESHOLD = 1e-9


@dataclass(frozen=True)
class RateSet:
    """Physical rates of one exciton state and its initial populations."""

    gamma_rad: float
    gamma_nrad: float
    gamma_db: float
    rho_b0: float = 0.5
    rho_d0: float = 0.5

    def __post_init__(self):
        if not self.gamma_rad > 0:
            raise ValueError(f"gamma_rad must be > 0, got {self.gamma_rad}")
        if not self.gamma_nrad >= 0:
            raise ValueError(f"gamma_nrad must be >= 0, got {self.gamma_nrad}")
        if not self.gamma_db >= 0:
            raise ValueError(f"gamma_db must be >= 0, got {self.gamma_db}")
        if not (self.rho_b0 >= 0 and self.rho_d0 >= 0):
            raise ValueError("initial populations must be non-negative")
        if self.rho_b0 + self.rho_d0 > 1 + 1e-12:
            raise ValueError("initial populations must sum to at most 1")

    @property
    def beta(self) -> float:
        """Dark-to-bright initial population ratio."""
        return self.rho_d0 / self.rho_b0


@dataclass(frozen=True)
class BiExpSolution:
    """Bi-exponential decay ``a_f exp(-gamma_f t) + a_s exp(-gamma_s t)``.

    ``gamma_s`` may be zero only for a mono-exponential decay whose slow
    amplitude vanishes (a dark state that is never fed).
    """

    gamma_f: float
    gamma_s: float
    a_f: float
    a_s: float

    def __post_init__(self):
        if not self.gamma_f >= self.gamma_s:
            raise ValueError("expected gamma_f >= gamma_s")
        if not self.gamma_s >= 0:
            raise ValueError("gamma_s must be non-negative")

    @property
    def is_mono_exponential(self) -> bool:
        return self.a_s == 0.0 or self.gamma_s == 0.0

    @property
    def total_amplitude(self) -> float:
        return self.a_f + self.a_s


def solve_decay(rates: RateSet) -> BiExpSolution:
    """Closed-form bi-exponential solution for the bright population.

    Cancellation-prone differences are rewritten in equivalent forms that
    only add positive terms, so tiny spin-flip rates keep full precision.

    Raises
    ------
    DegenerateRatesError
        If ``gamma_f - gamma_s`` falls below :data:`DEGENERACY_THRESHOLD`.
    """
    g_rad, g_nrad, g_db = rates.gamma_rad, rates.gamma_nrad, rates.gamma_db
    half = 0.5 * g_rad
    root = math.hypot(g_db, half)
    gap = 2.0 * root
    if gap < DEGENERACY_THRESHOLD:
        raise DegenerateRatesError(f"gamma_f - gamma_s = {gap:.3g} below threshold")
    gamma_f = g_nrad + half + g_db + root
    # (half + g_db) - root == g_rad * g_db / (half + g_db + root)
    gamma_s = g_nrad + g_rad * g_db / (half + g_db + root)
    # 1 - g_rad/gap == 4 g_db^2 / (gap (gap + g_rad))
    a_s = 0.5 * rates.rho_b0 * 4.0 * g_db * g_db / (gap * (gap + g_rad)) + rates.rho_d0 * g_db / gap
    a_f = rates.rho_b0 - a_s
    return BiExpSolution(gamma_f, gamma_s, a_f, a_s)


def bright_population(sol: BiExpSolution, t):
    """Evaluate the bright-state population at time(s) ``t`` (ns)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    out = sol.a_f * np.exp(-sol.gamma_f * t) + sol.a_s * np.exp(-sol.gamma_s * t)
    return float(out) if out.ndim == 0 else out


def _rate_matrix(rates: RateSet) -> np.ndarray:
    g_rad, g_nrad, g_db = rates.gamma_rad, rates.gamma_nrad, rates.gamma_db
    return np.array([
        [-(g_rad + g_nrad + g_db), g_db],
        [g_db, -(g_nrad + g_db)],
    ])


def ode_oracle(rates: RateSet, t_grid, rtol: float = 1e-12, atol: float = 1e-15) -> np.ndarray:
    """Integrate the coupled bright/dark rate equations numerically.

    Independent check on :func:`solve_decay`. Uses LSODA (adaptive
    Adams/BDF switching) with the exact Jacobian: strong spin-flip coupling
    with slow bright decay makes the system stiff, and explicit
    Runge-Kutta dense output then drifts by ~1e-8 over 200 ns.

    Returns
    -------
    ndarray, shape (len(t_grid), 2)
        Columns are (rho_b, rho_d).
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0:
        raise ValueError("t_grid must be a non-empty 1-D sequence")
    if np.any(t_grid < 0) or np.any(np.diff(t_grid) < 0):
        raise ValueError("t_grid must be sorted and non-negative")
    m = _rate_matrix(rates)
    y0 = [rates.rho_b0, rates.rho_d0]
    t_end = float(t_grid[-1])
    if t_end == 0.0:
        return np.tile(y0, (t_grid.size, 1))
    sol = solve_ivp(lambda _t, y: m @ y, (0.0, t_end), y0, method="LSODA",
                    t_eval=t_grid, rtol=rtol, atol=atol, jac=lambda _t, y: m)
    if sol.status != 0:
        raise StepSizeUnderflowError(sol.message)
    return sol.y.T.copy()


def detailed_balance_factor(delta_bd: float, temperature: float) -> float:
    """Ratio gamma_bd / gamma_db for a bright-dark splitting in micro-eV."""
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    return math.exp(delta_bd / (BOLTZMANN_UEV_PER_K * temperature))
