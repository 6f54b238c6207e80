"""Projected LDOS from radiative rates, inhibition factors and the frequency map."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyMapError,
    InvalidRateError,
    InvalidRecordWarning,
    OverlayRangeWarning,
    TooFewReferencesError,
)
from .extraction import RATE_NAMES, ExtractedRates

__all__ = [
    "SPEED_OF_LIGHT",
    "QDRecord",
    "LDOSPoint",
    "TheoryOverlay",
    "MapSummary",
    "homogeneous_dos",
    "ldos_ratio",
    "inhibition_factor",
    "reference_aggregate",
    "assemble_map",
]

SPEED_OF_LIGHT = 2.99792458e8  # m/s


@dataclass(frozen=True)
class QDRecord:
    id: str
    dipole: str
    lattice_a: float  # nm
    wavelength: float  # nm, vacuum
    rep_period: float  # ns
    rates: ExtractedRates | None
    location: str = "in_crystal"

    def __post_init__(self):
        if self.dipole not in ("X", "Y"):
            raise ValueError(f"dipole must be X or Y, got {self.dipole!r}")
        if self.location not in ("in_crystal", "reference"):
            raise ValueError(f"location must be in_crystal or reference, got {self.location!r}")

    @property
    def norm_freq(self) -> float:
        return self.lattice_a / self.wavelength

    @property
    def usable(self) -> bool:
        return self.rates is not None and self.rates.valid


@dataclass(frozen=True)
class LDOSPoint:
    id: str
    dipole: str
    norm_freq: float
    ldos_ratio: float
    ldos_abs: float
    inhibition: float
    ci: tuple = (math.nan, math.nan)
    residual: float = math.nan


@dataclass
class TheoryOverlay:
    """Calculated LDOS ratio versus normalised frequency for one dipole."""

    dipole: str
    norm_freq: np.ndarray
    ratio: np.ndarray

    def __post_init__(self):
        self.norm_freq = np.asarray(self.norm_freq, dtype=float)
        self.ratio = np.asarray(self.ratio, dtype=float)
        order = np.argsort(self.norm_freq, kind="stable")
        self.norm_freq = self.norm_freq[order]
        self.ratio = self.ratio[order]

    def remapped(self, scale: float = 1.0, offset: float = 0.0) -> "TheoryOverlay":
        """Affine stretch of the frequency axis, e.g. to widen the band gap."""
        return TheoryOverlay(self.dipole, self.norm_freq * scale + offset, self.ratio)

    def covers(self, x: float) -> bool:
        return self.norm_freq[0] <= x <= self.norm_freq[-1]

    def __call__(self, x):
        return np.interp(x, self.norm_freq, self.ratio)


@dataclass
class MapSummary:
    n_points: int
    n_by_dipole: dict
    min_ratio: float
    max_ratio: float
    max_inhibition: float
    gap_window: tuple | None = None
    gap_stats: dict = field(default_factory=dict)
    out_of_overlay: list = field(default_factory=list)


def _check_positive(**rates):
    for name, v in rates.items():
        if not (v > 0 and math.isfinite(v)):
            raise InvalidRateError(f"{name} must be positive and finite, got {v}")


def homogeneous_dos(wavelength_nm: float, n: float) -> float:
    """Projected LDOS of a homogeneous medium, ``n w^2 / (3 pi^2 c^3)``, in s m^-3."""
    if not (wavelength_nm > 0 and n > 0):
        raise ValueError("wavelength and refractive index must be positive")
    omega = 2.0 * math.pi * SPEED_OF_LIGHT / (wavelength_nm * 1e-9)
    return n * omega * omega / (3.0 * math.pi ** 2 * SPEED_OF_LIGHT ** 3)


def ldos_ratio(gamma_rad: float, gamma_rad_hom: float) -> float:
    _check_positive(gamma_rad=gamma_rad, gamma_rad_hom=gamma_rad_hom)
    return gamma_rad / gamma_rad_hom


def inhibition_factor(gamma_rad_hom: float, gamma_rad: float) -> float:
    _check_positive(gamma_rad=gamma_rad, gamma_rad_hom=gamma_rad_hom)
    return gamma_rad_hom / gamma_rad


def reference_aggregate(records) -> dict:
    """Sample mean and standard deviation of each rate over reference records.

    Records without a valid extraction are dropped with an
    :class:`InvalidRecordWarning`.

    Returns
    -------
    dict
        ``{rate_name: (mean, std)}`` plus ``"n"``, the number of records used.
    """
    refs = [r for r in records if r.location == "reference"]
    good = []
    for rec in refs:
        if rec.usable:
            good.append(rec)
        else:
            warnings.warn(f"reference {rec.id} has no valid rates; excluded",
                          InvalidRecordWarning, stacklevel=2)
    if len(good) < 2:
        raise TooFewReferencesError(f"need >= 2 valid reference records, have {len(good)}")
    values = np.array([rec.rates.as_array() for rec in good])
    mean = values.mean(axis=0)
    std = values.std(axis=0, ddof=1)
    out = {name: (float(m), float(s)) for name, m, s in zip(RATE_NAMES, mean, std)}
    out["n"] = len(good)
    return out


def _point(rec: QDRecord, gamma_rad_hom: float, hom_dos: float) -> LDOSPoint:
    g = rec.rates.gamma_rad
    ratio = ldos_ratio(g, gamma_rad_hom)
    ci = rec.rates.ci.get("gamma_rad")
    ci_ratio = (ci[0] / gamma_rad_hom, ci[1] / gamma_rad_hom) if ci else (math.nan, math.nan)
    return LDOSPoint(rec.id, rec.dipole, rec.norm_freq, ratio, ratio * hom_dos,
                     inhibition_factor(gamma_rad_hom, g), ci_ratio)


def assemble_map(records, gamma_rad_hom: float, n: float = 3.5, overlays=None,
                 gap_window=None, wavelength_window=(965.0, 975.0),
                 lattice_range=(200.0, 385.0)):
    """Build the LDOS-versus-normalised-frequency map from in-crystal records.

    Parameters
    ----------
    records : iterable of QDRecord
        References are ignored; in-crystal records with invalid rates, or
        outside the wavelength/lattice windows, are skipped.
    gamma_rad_hom : float
        Homogeneous-medium radiative rate, normally the reference mean.
    overlays : dict, optional
        ``{"X": TheoryOverlay, "Y": TheoryOverlay}``; residuals are
        ``measured - theory`` with linear interpolation.
    gap_window : (float, float), optional
        Normalised-frequency bounds used for in-gap summary statistics.

    Returns
    -------
    (list of LDOSPoint, MapSummary)
        Points sorted by ``(norm_freq, dipole, id)`` so the output does not
        depend on input order.
    """
    _check_positive(gamma_rad_hom=gamma_rad_hom)
    overlays = overlays or {}
    lo_wl, hi_wl = wavelength_window
    points = []
    out_of_overlay = []
    for rec in records:
        if rec.location != "in_crystal" or not rec.usable:
            continue
        if not (lo_wl <= rec.wavelength <= hi_wl):
            continue
        if not (lattice_range[0] <= rec.lattice_a <= lattice_range[1]):
            continue
        pt = _point(rec, gamma_rad_hom, homogeneous_dos(rec.wavelength, n))
        ov = overlays.get(rec.dipole)
        if ov is not None:
            if not ov.covers(pt.norm_freq):
                out_of_overlay.append(rec.id)
            pt = LDOSPoint(**{**pt.__dict__, "residual": float(pt.ldos_ratio - ov(pt.norm_freq))})
        points.append(pt)
    if not points:
        raise EmptyMapError("no valid in-crystal records to map")
    if out_of_overlay:
        warnings.warn(f"{len(out_of_overlay)} point(s) outside overlay range",
                      OverlayRangeWarning, stacklevel=2)
    points.sort(key=lambda p: (p.norm_freq, p.dipole, p.id))
    ratios = np.array([p.ldos_ratio for p in points])
    gap_stats = {}
    if gap_window is not None:
        inside = np.array([gap_window[0] <= p.norm_freq <= gap_window[1] for p in points])
        if inside.any():
            r_in = ratios[inside]
            gap_stats = {"n": int(inside.sum()), "mean_ratio": float(r_in.mean()),
                         "max_ratio": float(r_in.max()), "min_ratio": float(r_in.min())}
        else:
            gap_stats = {"n": 0}
    summary = MapSummary(
        n_points=len(points),
        n_by_dipole={d: sum(p.dipole == d for p in points) for d in ("X", "Y")},
        min_ratio=float(ratios.min()),
        max_ratio=float(ratios.max()),
        max_inhibition=float(max(p.inhibition for p in points)),
        gap_window=tuple(gap_window) if gap_window is not None else None,
        gap_stats=gap_stats,
        out_of_overlay=sorted(out_of_overlay),
    )
    return points, summary
