"""Plain-text file formats: decay histograms, theory overlays and pipeline config.

Histogram files::

    # id: qd017
    # dipole: X
    # lattice_a_nm: 260
    # wavelength_nm: 970.2
    # rep_period_ns: 200
    # location: in_crystal
    time_ns,counts
    0,1532
    0.05,1498
    ...

Overlay files carry a ``# dipole: X|Y`` header and ``norm_freq,ldos_ratio``
rows. Config files are ``key = value`` lines with ``#`` comments.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError, MalformedHeaderError, NegativeCountError, NonUniformBinsError
from .ldos import TheoryOverlay
from .synth import DecayHistogram

__all__ = [
    "HEADER_KEYS",
    "PipelineConfig",
    "parse_histogram_file",
    "write_histogram_file",
    "read_overlay_file",
    "write_overlay_file",
    "read_config",
    "format_config",
    "fmt",
]

HEADER_KEYS = ("id", "dipole", "lattice_a_nm", "wavelength_nm", "rep_period_ns", "location")
_FLOAT_KEYS = ("lattice_a_nm", "wavelength_nm", "rep_period_ns", "bin_width_ns")
_BIN_RTOL = 1e-6


def fmt(x) -> str:
    """Nine significant digits, the precision used in every output file."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return "nan"
    return f"{x:.9g}"


def _parse_header_line(line, path, lineno):
    body = line[1:].strip()
    if not body:
        return None
    key, sep, value = body.partition(":")
    key = key.strip()
    if not sep or not key or " " in key:
        raise MalformedHeaderError(f"expected '# key: value', got {line.rstrip()!r}", path, lineno)
    return key, value.strip()


def parse_histogram_file(path):
    """Read a histogram file.

    Returns
    -------
    (DecayHistogram, dict)
        The histogram and its header metadata. Numeric header values are
        converted to float.

    Raises
    ------
    MalformedHeaderError, NonUniformBinsError, NegativeCountError
        With the offending line number.
    """
    meta = {}
    times, counts = [], []
    first_row = None
    step = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if times:
                    raise MalformedHeaderError("header line after data", path, lineno)
                kv = _parse_header_line(line, path, lineno)
                if kv is None:
                    continue
                key, value = kv
                if key in _FLOAT_KEYS:
                    try:
                        value = float(value)
                    except ValueError:
                        raise MalformedHeaderError(f"{key} is not a number: {value!r}", path, lineno) from None
                meta[key] = value
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 2:
                raise MalformedHeaderError(f"expected two columns, got {line!r}", path, lineno)
            if not times and first_row is None:
                first_row = lineno
                try:
                    float(parts[0])
                except ValueError:
                    # column-name row
                    continue
            try:
                tval = float(parts[0])
                cval = float(parts[1])
            except ValueError:
                raise MalformedHeaderError(f"non-numeric data row {line!r}", path, lineno) from None
            if cval < 0:
                raise NegativeCountError(f"negative count {parts[1]}", path, lineno)
            if cval != int(cval):
                raise MalformedHeaderError(f"count is not an integer: {parts[1]}", path, lineno)
            if times:
                d = tval - times[-1]
                if step is None:
                    if d <= 0:
                        raise NonUniformBinsError("time column not increasing", path, lineno)
                    step = d
                elif not abs(d - step) <= _BIN_RTOL * step:
                    raise NonUniformBinsError(
                        f"bin spacing {d:.9g} differs from {step:.9g}", path, lineno)
            times.append(tval)
            counts.append(int(cval))
    for key in ("id", "dipole", "location"):
        if key not in meta:
            raise MalformedHeaderError(f"missing header key {key!r}", path, 1)
    if meta["dipole"] not in ("X", "Y"):
        raise MalformedHeaderError(f"dipole must be X or Y, got {meta['dipole']!r}", path, 1)
    if meta["location"] not in ("in_crystal", "reference"):
        raise MalformedHeaderError(f"unknown location {meta['location']!r}", path, 1)
    if meta["location"] == "in_crystal" and "lattice_a_nm" not in meta:
        raise MalformedHeaderError("in_crystal file lacks lattice_a_nm", path, 1)
    if "wavelength_nm" not in meta:
        raise MalformedHeaderError("missing header key 'wavelength_nm'", path, 1)
    if len(times) < 2:
        raise MalformedHeaderError("need at least two data rows", path, first_row or 1)
    hist = DecayHistogram(np.array(times), np.array(counts, dtype=np.int64), None, dict(meta))
    return hist, meta


def write_histogram_file(path, hist: DecayHistogram, meta: dict):
    """Write ``hist`` with ``meta`` as header; inverse of :func:`parse_histogram_file`."""
    lines = []
    for key in HEADER_KEYS:
        if key in meta and meta[key] is not None:
            lines.append(f"# {key}: {fmt(meta[key]) if key in _FLOAT_KEYS else meta[key]}")
    for key in sorted(k for k in meta if k not in HEADER_KEYS):
        v = meta[key]
        lines.append(f"# {key}: {fmt(v) if isinstance(v, float) else v}")
    lines.append("time_ns,counts")
    t = hist.bin_start_times
    for tv, cv in zip(t, hist.counts):
        lines.append(f"{tv:.12g},{int(cv)}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_overlay_file(path, scale: float = 1.0, offset: float = 0.0) -> TheoryOverlay:
    """Two-column ``norm_freq,ldos_ratio`` overlay; ``scale``/``offset`` remap frequency."""
    dipole = None
    xs, ys = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                kv = _parse_header_line(line, path, lineno)
                if kv and kv[0] == "dipole":
                    dipole = kv[1]
                continue
            parts = [p.strip() for p in line.split(",")]
            try:
                x, y = float(parts[0]), float(parts[1])
            except (ValueError, IndexError):
                if not xs:
                    continue  # column-name row
                raise MalformedHeaderError(f"bad overlay row {line!r}", path, lineno) from None
            xs.append(x)
            ys.append(y)
    if dipole not in ("X", "Y"):
        raise MalformedHeaderError("overlay needs '# dipole: X' or '# dipole: Y'", path, 1)
    if len(xs) < 2:
        raise MalformedHeaderError("overlay needs at least two rows", path, 1)
    return TheoryOverlay(dipole, xs, ys).remapped(scale, offset)


def write_overlay_file(path, overlay: TheoryOverlay):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# dipole: {overlay.dipole}\nnorm_freq,ldos_ratio\n")
        for x, y in zip(overlay.norm_freq, overlay.ratio):
            fh.write(f"{fmt(x)},{fmt(y)}\n")


@dataclass
class PipelineConfig:
    rep_period: float | None = None  # ns; fallback when a file has no rep_period_ns
    wavelength_window: tuple = (965.0, 975.0)
    beta: float = 1.0
    n_index: float = 3.5
    n_boot: int = 200
    gap_window: tuple = (0.25, 0.32)
    seed: int = 0
    overlay_x: str | None = None
    overlay_y: str | None = None
    overlay_scale: float = 1.0
    overlay_offset: float = 0.0
    lattice_range: tuple = (200.0, 385.0)
    jobs: int = 1

    def __post_init__(self):
        for name in ("wavelength_window", "gap_window", "lattice_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ConfigError(f"{name} must be ordered (lo <= hi)")
            setattr(self, name, (float(lo), float(hi)))
        if self.n_boot < 0:
            raise ConfigError("n_boot must be >= 0")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    @property
    def rho(self) -> tuple:
        """Initial (bright, dark) populations implied by ``beta``."""
        return 1.0 / (1.0 + self.beta), self.beta / (1.0 + self.beta)


_PAIR_KEYS = ("wavelength_window", "gap_window", "lattice_range")
_INT_KEYS = ("n_boot", "seed", "jobs")
_STR_KEYS = ("overlay_x", "overlay_y")


def _convert(key, value, path=None, lineno=None):
    try:
        if key in _PAIR_KEYS:
            parts = [float(p) for p in value.replace(",", " ").split()]
            if len(parts) != 2:
                raise ValueError
            return tuple(parts)
        if key in _INT_KEYS:
            return int(value)
        if key in _STR_KEYS:
            return value or None
        if key == "rep_period" and value.lower() in ("", "none"):
            return None
        return float(value)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}", path, lineno) from None


def read_config(path, **overrides) -> PipelineConfig:
    """Parse a ``key = value`` config file; keyword overrides win over the file."""
    known = {f.name for f in fields(PipelineConfig)}
    values = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                key, sep, value = line.partition("=")
                key = key.strip()
                if not sep:
                    raise ConfigError(f"expected 'key = value', got {raw.rstrip()!r}", path, lineno)
                if key not in known:
                    raise ConfigError(f"unknown key {key!r}", path, lineno)
                values[key] = _convert(key, value.strip(), path, lineno)
                if key in _STR_KEYS and values[key] and not os.path.isabs(values[key]):
                    # overlay paths are relative to the config file
                    values[key] = os.path.join(os.path.dirname(os.path.abspath(path)), values[key])
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in known:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _convert(key, value) if isinstance(value, str) else value
    return PipelineConfig(**values)


def format_config(cfg: PipelineConfig) -> str:
    """Canonical ``key = value`` rendering, stable across runs."""
    out = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            s = ", ".join(fmt(x) for x in v)
        elif v is None:
            s = "none"
        elif isinstance(v, str):
            s = v
        else:
            s = fmt(v)
        out.append(f"{f.name} = {s}")
    return "\n".join(out) + "\n"
