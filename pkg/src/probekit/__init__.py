"""probekit: quantum dots as probes of the local density of optical states.

Three-level bright/dark exciton kinetics, synthetic TCSPC decays, Poisson
maximum-likelihood bi-exponential fitting, inversion to radiative,
non-radiative and spin-flip rates, and LDOS maps versus normalised frequency.
"""

__version__ = "0.1.0"

from .kinetics import BiExpSolution, RateSet, bright_population, detailed_balance_factor, ode_oracle, solve_decay
from .synth import AcquisitionConfig, DecayHistogram, expected_curve, sample_histogram, wraparound_amplitudes
from .fitting import FitResult, fit_biexponential, goodness_of_fit, initial_guess
from .extraction import (
    ExtractedRates,
    bootstrap_uncertainty,
    correct_amplitudes,
    extract,
    invert_rates,
    naive_total_rate,
)
from .ldos import QDRecord, TheoryOverlay, assemble_map, homogeneous_dos, inhibition_factor, ldos_ratio, reference_aggregate

__all__ = [
    "__version__",
    "RateSet", "BiExpSolution", "solve_decay", "bright_population", "ode_oracle", "detailed_balance_factor",
    "AcquisitionConfig", "DecayHistogram", "expected_curve", "sample_histogram", "wraparound_amplitudes",
    "FitResult", "initial_guess", "fit_biexponential", "goodness_of_fit",
    "ExtractedRates", "correct_amplitudes", "invert_rates", "extract", "bootstrap_uncertainty", "naive_total_rate",
    "QDRecord", "TheoryOverlay", "homogeneous_dos", "ldos_ratio", "inhibition_factor", "reference_aggregate",
    "assemble_map",
]
