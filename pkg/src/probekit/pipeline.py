"""Batch orchestration: histogram files in, rates / LDOS map / comparison tables out."""
from __future__ import annotations

import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import ProbeKitError, UnwritablePathError
from .extraction import RATE_NAMES, ExtractedRates, bootstrap_uncertainty, naive_total_rate
from .fitting import FitResult, GoodnessOfFit, fit_biexponential, goodness_of_fit, initial_guess
from .io import (
    PipelineConfig,
    fmt,
    format_config,
    parse_histogram_file,
    read_overlay_file,
    write_histogram_file,
    write_overlay_file,
)
from .kinetics import RateSet, solve_decay
from .ldos import QDRecord, TheoryOverlay, assemble_map, inhibition_factor, reference_aggregate
from .synth import AcquisitionConfig, c0_for_total_counts, expected_curve, sample_histogram

__all__ = [
    "QDResult",
    "PipelineResult",
    "FatalPipelineError",
    "process_histogram",
    "run_pipeline",
    "emit_outputs",
    "compare_rates",
    "synthetic_ldos_ratio",
    "write_synthetic_dataset",
]

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_PARTIAL, EXIT_FATAL = 0, 1, 2


class FatalPipelineError(ProbeKitError):
    pass


@dataclass
class QDResult:
    path: str
    meta: dict
    fit: FitResult
    gof: GoodnessOfFit
    rates: ExtractedRates
    naive_rate: float
    rep_period: float

    def record(self) -> QDRecord:
        m = self.meta
        return QDRecord(
            id=str(m["id"]),
            dipole=m["dipole"],
            lattice_a=float(m.get("lattice_a_nm", math.nan)),
            wavelength=float(m["wavelength_nm"]),
            rep_period=self.rep_period,
            rates=self.rates,
            location=m["location"],
        )


@dataclass
class PipelineResult:
    config: PipelineConfig
    paths: list
    results: list
    quarantine: list  # (path, reason)
    mode: str = "fit-only"
    reference: dict | None = None
    gamma_rad_hom: float | None = None
    points: list = field(default_factory=list)
    summary: object = None
    notes: list = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return EXIT_PARTIAL if self.quarantine else EXIT_OK


def _seed_for(master: int, index: int) -> int:
    child = np.random.SeedSequence(master).spawn(index + 1)[index]
    return int(child.generate_state(1, dtype=np.uint32)[0])


def process_histogram(hist, meta, cfg: PipelineConfig, seed: int, path: str = "<memory>") -> QDResult:
    """Fit, check, correct, invert and bootstrap one histogram."""
    rep_period = meta.get("rep_period_ns", cfg.rep_period)
    if rep_period is None:
        raise ProbeKitError("no repetition period in file header or config")
    rep_period = float(rep_period)
    rho_b0, rho_d0 = cfg.rho
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = fit_biexponential(hist, initial_guess(hist))
    gof = goodness_of_fit(hist, fit)
    rates = bootstrap_uncertainty(hist, fit, rep_period, n_boot=cfg.n_boot, seed=seed,
                                  rho_b0=rho_b0, rho_d0=rho_d0)
    if gof.lack_of_fit:
        rates = ExtractedRates(**{**rates.__dict__, "flags": rates.flags + ("lack-of-fit",)})
    return QDResult(path, meta, fit, gof, rates, naive_total_rate(fit), rep_period)


def _process_path(args):
    path, cfg, seed = args
    try:
        hist, meta = parse_histogram_file(path)
        return process_histogram(hist, meta, cfg, seed, path)
    except (ProbeKitError, ValueError, OSError, np.linalg.LinAlgError) as exc:
        return (path, f"{type(exc).__name__}: {exc}")


def _load_overlays(cfg):
    overlays = {}
    for dipole, p in (("X", cfg.overlay_x), ("Y", cfg.overlay_y)):
        if p:
            ov = read_overlay_file(p, cfg.overlay_scale, cfg.overlay_offset)
            if ov.dipole != dipole:
                raise ProbeKitError(f"overlay {p} declares dipole {ov.dipole}, expected {dipole}")
            overlays[dipole] = ov
    return overlays


def run_pipeline(cfg: PipelineConfig, paths, jobs: int | None = None) -> PipelineResult:
    """Process every file, then aggregate references and assemble the map.

    Files that fail are quarantined with their error message; the batch only
    fails outright when references are present but none of them survive.
    Results keep input order whatever the completion order, and each file's
    bootstrap seed depends only on ``cfg.seed`` and its position.
    """
    paths = [str(p) for p in paths]
    jobs = cfg.jobs if jobs is None else jobs
    tasks = [(p, cfg, _seed_for(cfg.seed, i)) for i, p in enumerate(paths)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_process_path, tasks))
    else:
        outcomes = [_process_path(t) for t in tasks]
    results = [o for o in outcomes if isinstance(o, QDResult)]
    quarantine = [o for o in outcomes if not isinstance(o, QDResult)]
    res = PipelineResult(cfg, paths, results, quarantine)

    refs = [r for r in results if r.meta["location"] == "reference"]
    crystal = [r for r in results if r.meta["location"] == "in_crystal"]
    had_refs = any(_location_of(p) == "reference" for p in paths)
    if had_refs and not any(r.rates.valid for r in refs):
        raise FatalPipelineError("all reference files failed")
    if not refs or not crystal:
        return res

    res.mode = "map"
    records = [r.record() for r in results]
    valid_refs = [r for r in refs if r.rates.valid]
    if len(valid_refs) >= 2:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res.reference = reference_aggregate(records)
        res.gamma_rad_hom = res.reference["gamma_rad"][0]
    else:
        only = valid_refs[0].rates
        res.reference = {name: (getattr(only, name), math.nan) for name in RATE_NAMES}
        res.reference["n"] = 1
        res.gamma_rad_hom = only.gamma_rad
        res.notes.append("single valid reference: homogeneous rate taken from it directly")
    overlays = _load_overlays(cfg)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res.points, res.summary = assemble_map(
            records, res.gamma_rad_hom, cfg.n_index, overlays, cfg.gap_window,
            cfg.wavelength_window, cfg.lattice_range)
    res.notes.extend(str(w.message) for w in caught)
    return res


def _location_of(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.startswith("#"):
                    break
                if line[1:].strip().startswith("location:"):
                    return line.split(":", 1)[1].strip()
    except OSError:
        pass
    return None


def compare_rates(gamma_rad_hom: float, rates: RateSet) -> dict:
    """Inhibition from the extracted radiative rate versus from the fast decay rate."""
    naive = solve_decay(rates).gamma_f
    return {
        "gamma_rad": rates.gamma_rad,
        "naive_rate": naive,
        "inhibition_extracted": inhibition_factor(gamma_rad_hom, rates.gamma_rad),
        "inhibition_naive": inhibition_factor(gamma_rad_hom, naive),
    }


# ---------------------------------------------------------------------------
# outputs

RATES_COLUMNS = (
    ["id", "dipole", "gamma_rad", "gamma_nrad", "gamma_db"]
    + [f"ci_{end}_{n}" for n in RATE_NAMES for end in ("lo", "hi")]
    + [f"sigma_{n}" for n in RATE_NAMES]
    + ["location", "lattice_a_nm", "wavelength_nm", "norm_freq", "rep_period_ns",
       "gamma_f", "gamma_s", "a_f_measured", "a_s_measured", "background", "r_asym",
       "naive_rate", "reduced_chi2", "dof", "converged", "n_boot", "n_boot_failed", "valid", "flags"]
)
MAP_COLUMNS = ["id", "dipole", "norm_freq", "ldos_ratio", "ldos_abs", "inhibition",
               "ci_lo", "ci_hi", "residual"]
COMPARISON_COLUMNS = ["id", "dipole", "norm_freq", "gamma_rad", "naive_rate",
                      "inhibition_extracted", "inhibition_naive", "in_gap"]


def _rates_row(r: QDResult):
    rec = r.record()
    ci = r.rates.ci
    row = [rec.id, rec.dipole, r.rates.gamma_rad, r.rates.gamma_nrad, r.rates.gamma_db]
    for n in RATE_NAMES:
        lo, hi = ci.get(n, (math.nan, math.nan))
        row += [lo, hi]
    row += [r.rates.sigma.get(n, math.nan) for n in RATE_NAMES]
    s = r.fit.solution
    row += [rec.location, rec.lattice_a, rec.wavelength, rec.norm_freq, r.rep_period,
            s.gamma_f, s.gamma_s, s.a_f, s.a_s, r.fit.background, r.rates.r_asym,
            r.naive_rate, r.gof.reduced_chi2, r.gof.dof, r.fit.converged, r.rates.n_boot,
            r.rates.n_boot_failed, r.rates.valid, ";".join(r.rates.flags)]
    return row


def _write_csv(path, columns, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else fmt(v) for v in row) + "\n")


def comparison_rows(res: PipelineResult):
    by_id = {str(r.meta["id"]): r for r in res.results}
    rows = []
    lo, hi = res.config.gap_window
    for p in res.points:
        r = by_id[p.id]
        rows.append([p.id, p.dipole, p.norm_freq, r.rates.gamma_rad, r.naive_rate,
                     p.inhibition, inhibition_factor(res.gamma_rad_hom, r.naive_rate),
                     lo <= p.norm_freq <= hi])
    return rows


def emit_outputs(res: PipelineResult, out_dir) -> list:
    """Write rates.csv, ldos_map.csv, inhibition_comparison.csv and summary.txt.

    Map and comparison tables only exist in map mode. Returns written paths.
    """
    try:
        os.makedirs(out_dir, exist_ok=True)
        probe = os.path.join(out_dir, ".probekit-write-test")
        with open(probe, "w") as fh:
            fh.write("")
        os.remove(probe)
    except OSError as exc:
        raise UnwritablePathError(f"cannot write to {out_dir}: {exc}") from None
    written = []
    p = os.path.join(out_dir, "rates.csv")
    _write_csv(p, RATES_COLUMNS, [_rates_row(r) for r in res.results])
    written.append(p)
    if res.mode == "map":
        p = os.path.join(out_dir, "ldos_map.csv")
        _write_csv(p, MAP_COLUMNS, [[q.id, q.dipole, q.norm_freq, q.ldos_ratio, q.ldos_abs,
                                     q.inhibition, q.ci[0], q.ci[1], q.residual] for q in res.points])
        written.append(p)
        p = os.path.join(out_dir, "inhibition_comparison.csv")
        _write_csv(p, COMPARISON_COLUMNS, comparison_rows(res))
        written.append(p)
    p = os.path.join(out_dir, "summary.txt")
    with open(p, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(summary_text(res))
    written.append(p)
    return written


def summary_text(res: PipelineResult) -> str:
    lines = [f"probekit {__version__} run summary", "", "[config]", format_config(res.config).rstrip(), ""]
    lines.append("[inputs]")
    lines.append(f"files = {len(res.paths)}")
    lines.append(f"processed = {len(res.results)}")
    lines.append(f"quarantined = {len(res.quarantine)}")
    lines.append(f"mode = {res.mode}")
    lines.append("")
    if res.reference:
        lines.append("[reference]")
        lines.append(f"n = {res.reference['n']}")
        for n in RATE_NAMES:
            m, s = res.reference[n]
            lines.append(f"{n} = {fmt(m)} +- {fmt(s)}")
        lines.append("")
    if res.summary is not None:
        s = res.summary
        lines.append("[map]")
        lines.append(f"points = {s.n_points}")
        lines.append(f"points_X = {s.n_by_dipole['X']}")
        lines.append(f"points_Y = {s.n_by_dipole['Y']}")
        lines.append(f"min_ratio = {fmt(s.min_ratio)}")
        lines.append(f"max_ratio = {fmt(s.max_ratio)}")
        lines.append(f"max_inhibition = {fmt(s.max_inhibition)}")
        for k in sorted(s.gap_stats):
            lines.append(f"gap_{k} = {fmt(s.gap_stats[k])}")
        if s.out_of_overlay:
            lines.append(f"outside_overlay = {' '.join(s.out_of_overlay)}")
        lines.append("")
    if res.notes:
        lines.append("[notes]")
        lines.extend(res.notes)
        lines.append("")
    lines.append("[quarantine]")
    for path, reason in res.quarantine:
        lines.append(f"{path}: {reason}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# synthetic data

REFERENCE_RATES = RateSet(1.1, 0.06, 0.005)


def synthetic_ldos_ratio(norm_freq: float, dipole: str = "X", gap_window=(0.25, 0.32)) -> float:
    """Toy LDOS ratio used to generate test datasets; not a photonic calculation.

    Inside the gap the ratio dips to 0.02 (X) or 0.03 (Y) at the centre and
    rises as a quartic to about 0.3 at the edges; outside it is enhanced
    near the band edges and relaxes to 1 away from them.
    """
    lo, hi = gap_window
    if lo <= norm_freq <= hi:
        u = (norm_freq - 0.5 * (lo + hi)) / (0.5 * (hi - lo))
        floor = 0.02 if dipole == "X" else 0.03
        return floor + 0.28 * u ** 4
    d = lo - norm_freq if norm_freq < lo else norm_freq - hi
    return 1.0 + 0.7 * math.exp(-d / 0.015)


def _rep_period_for(gamma_rad: float) -> float:
    return 200.0 if gamma_rad < 0.5 else 50.0


def write_synthetic_dataset(out_dir, seed: int = 0, n_crystal: int = 88, n_reference: int = 5,
                            photons: float = 1e6, background_frac: float = 1e-4,
                            gap_window=(0.25, 0.32), gamma_rad_hom: float = 1.1,
                            n_bins: int = 2000) -> list:
    """Write a synthetic batch mirroring the measurement campaign.

    References sit at the reference rates with a 25 ns period. In-crystal
    dots cycle through lattice constants 200-385 nm (5 nm steps),
    alternate X/Y dipoles, draw a wavelength in 970 +- 5 nm, and get a
    radiative rate from :func:`synthetic_ldos_ratio`. Also writes toy
    overlay files and a config. Returns the histogram paths in order.
    """
    os.makedirs(out_dir, exist_ok=True)
    ss = np.random.SeedSequence(seed)
    children = ss.spawn(n_crystal + n_reference + 1)
    layout_rng = np.random.Generator(np.random.PCG64(children[-1]))
    lattice = np.arange(200.0, 385.0 + 1e-9, 5.0)
    paths = []
    dots = []
    for i in range(n_reference):
        dots.append(dict(id=f"ref{i + 1:02d}", dipole="XY"[i % 2], location="reference",
                          wavelength_nm=float(np.round(layout_rng.uniform(965, 975), 3)),
                          rep_period_ns=25.0, rates=REFERENCE_RATES))
    for i in range(n_crystal):
        a = float(lattice[i % lattice.size])
        dip = "XY"[(i // lattice.size + i) % 2]
        wl = float(np.round(layout_rng.uniform(965, 975), 3))
        ratio = synthetic_ldos_ratio(a / wl, dip, gap_window)
        rates = RateSet(ratio * gamma_rad_hom, REFERENCE_RATES.gamma_nrad, REFERENCE_RATES.gamma_db)
        dots.append(dict(id=f"qd{i + 1:03d}", dipole=dip, location="in_crystal", lattice_a_nm=a,
                          wavelength_nm=wl, rep_period_ns=_rep_period_for(rates.gamma_rad),
                          rates=rates, true_ratio=ratio))
    for dot, child in zip(dots, children):
        tau = dot["rep_period_ns"]
        n = n_bins if tau > 25 else 1000
        acq = AcquisitionConfig(tau, tau / n, n, 1.0, 0.0, 0)
        c0 = c0_for_total_counts(dot["rates"], acq, photons)
        peak = float(expected_curve(dot["rates"], AcquisitionConfig(tau, tau / n, n, c0, 0.0, 0)).max())
        acq = AcquisitionConfig(tau, tau / n, n, c0, background_frac * peak,
                                int(child.generate_state(1, dtype=np.uint32)[0]))
        hist = sample_histogram(dot["rates"], acq)
        meta = {k: dot[k] for k in ("id", "dipole", "lattice_a_nm", "wavelength_nm",
                                     "rep_period_ns", "location") if k in dot}
        r = dot["rates"]
        meta["true_gamma_rad"] = float(r.gamma_rad)
        meta["true_gamma_nrad"] = float(r.gamma_nrad)
        meta["true_gamma_db"] = float(r.gamma_db)
        path = os.path.join(out_dir, f"{dot['id']}.csv")
        write_histogram_file(path, hist, meta)
        paths.append(path)
    grid = np.linspace(0.18, 0.42, 241)
    for dip in "XY":
        ov = TheoryOverlay(dip, grid, [synthetic_ldos_ratio(x, dip, gap_window) for x in grid])
        write_overlay_file(os.path.join(out_dir, f"overlay_{dip}.csv"), ov)
    with open(os.path.join(out_dir, "probekit.cfg"), "w", encoding="utf-8") as fh:
        fh.write("# synthetic dataset config\n")
        fh.write(f"seed = {seed}\n")
        fh.write(f"gap_window = {gap_window[0]}, {gap_window[1]}\n")
        fh.write("overlay_x = overlay_X.csv\noverlay_y = overlay_Y.csv\n")
    return paths
