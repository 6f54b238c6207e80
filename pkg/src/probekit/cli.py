"""Command-line interface: ``probekit simulate|fit|extract|map|compare``.

Exit codes: 0 success, 1 some files quarantined, 2 fatal error.
"""
from __future__ import annotations

import argparse
import glob
import logging
import math
import os
import sys
import warnings

from . import __version__
from .errors import ProbeKitError
from .extraction import RATE_NAMES, naive_total_rate
from .fitting import fit_biexponential, goodness_of_fit, initial_guess
from .io import fmt, parse_histogram_file, read_config, write_histogram_file
from .kinetics import RateSet
from .pipeline import (
    EXIT_FATAL,
    EXIT_OK,
    compare_rates,
    emit_outputs,
    process_histogram,
    run_pipeline,
    write_synthetic_dataset,
)
from .synth import AcquisitionConfig, c0_for_total_counts, expected_curve, sample_histogram

log = logging.getLogger("probekit")


def _add_config_flags(p):
    g = p.add_argument_group("pipeline config (overrides --config)")
    g.add_argument("--config", help="key = value config file")
    g.add_argument("--rep-period", type=float, help="ns; used when a file header lacks rep_period_ns")
    g.add_argument("--wavelength-window", type=float, nargs=2, metavar=("LO", "HI"))
    g.add_argument("--beta", type=float, help="initial dark/bright population ratio")
    g.add_argument("--n-index", type=float, help="refractive index of the homogeneous medium")
    g.add_argument("--n-boot", type=int, help="bootstrap resamples per file")
    g.add_argument("--gap-window", type=float, nargs=2, metavar=("LO", "HI"))
    g.add_argument("--seed", type=int)
    g.add_argument("--overlay-x")
    g.add_argument("--overlay-y")
    g.add_argument("--overlay-scale", type=float)
    g.add_argument("--overlay-offset", type=float)
    g.add_argument("--lattice-range", type=float, nargs=2, metavar=("LO", "HI"))
    g.add_argument("--jobs", type=int)


def _config_from_args(args):
    keys = ("rep_period", "wavelength_window", "beta", "n_index", "n_boot", "gap_window", "seed",
            "overlay_x", "overlay_y", "overlay_scale", "overlay_offset", "lattice_range", "jobs")
    overrides = {}
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            overrides[k] = tuple(v) if isinstance(v, list) else v
    return read_config(args.config, **overrides)


def _expand_inputs(inputs):
    """Directories expand to their ``*.csv`` files, skipping ``overlay_*``."""
    paths = []
    for item in inputs:
        if os.path.isdir(item):
            found = sorted(glob.glob(os.path.join(item, "*.csv")))
            paths.extend(p for p in found if not os.path.basename(p).startswith("overlay_"))
        else:
            paths.append(item)
    return paths


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="probekit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write synthetic histogram file(s)")
    p.add_argument("--dataset", metavar="DIR", help="write a full 88 + 5 synthetic batch into DIR")
    p.add_argument("--out", metavar="FILE", help="single histogram output file")
    p.add_argument("--gamma-rad", type=float, default=1.1)
    p.add_argument("--gamma-nrad", type=float, default=0.06)
    p.add_argument("--gamma-db", type=float, default=0.005)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--rep-period", type=float, default=25.0)
    p.add_argument("--n-bins", type=int, default=1000)
    p.add_argument("--photons", type=float, default=1e6)
    p.add_argument("--background", type=float, default=1e-4, help="background as a fraction of the peak")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--id", default="qd001")
    p.add_argument("--dipole", choices=("X", "Y"), default="X")
    p.add_argument("--location", choices=("in_crystal", "reference"), default="reference")
    p.add_argument("--lattice-a", type=float)
    p.add_argument("--wavelength", type=float, default=970.0)
    p.add_argument("--n-crystal", type=int, default=88)
    p.add_argument("--n-reference", type=int, default=5)

    p = sub.add_parser("fit", help="fit one histogram file")
    p.add_argument("file")

    p = sub.add_parser("extract", help="fit one file and extract rates")
    p.add_argument("file")
    _add_config_flags(p)

    p = sub.add_parser("map", help="full pipeline over a batch")
    p.add_argument("inputs", nargs="+", help="histogram files or directories")
    p.add_argument("-o", "--out", required=True, help="output directory")
    _add_config_flags(p)

    p = sub.add_parser("compare", help="extracted versus naive inhibition for one rate set")
    p.add_argument("--gamma-rad-hom", type=float, default=1.1)
    p.add_argument("--gamma-rad", type=float, required=True)
    p.add_argument("--gamma-nrad", type=float, required=True)
    p.add_argument("--gamma-db", type=float, required=True)
    return parser


def _cmd_simulate(args):
    if args.dataset:
        paths = write_synthetic_dataset(args.dataset, seed=args.seed, n_crystal=args.n_crystal,
                                        n_reference=args.n_reference, photons=args.photons,
                                        background_frac=args.background)
        print(f"wrote {len(paths)} histograms to {args.dataset}")
        return EXIT_OK
    if not args.out:
        raise ProbeKitError("simulate needs --out FILE or --dataset DIR")
    rho_b = 1.0 / (1.0 + args.beta)
    rates = RateSet(args.gamma_rad, args.gamma_nrad, args.gamma_db, rho_b, 1.0 - rho_b)
    tau, n = args.rep_period, args.n_bins
    acq = AcquisitionConfig(tau, tau / n, n, 1.0, 0.0, args.seed)
    c0 = c0_for_total_counts(rates, acq, args.photons)
    peak = float(expected_curve(rates, AcquisitionConfig(tau, tau / n, n, c0, 0.0, 0)).max())
    acq = AcquisitionConfig(tau, tau / n, n, c0, args.background * peak, args.seed)
    meta = {"id": args.id, "dipole": args.dipole, "wavelength_nm": args.wavelength,
            "rep_period_ns": tau, "location": args.location}
    if args.lattice_a is not None:
        meta["lattice_a_nm"] = args.lattice_a
    write_histogram_file(args.out, sample_histogram(rates, acq), meta)
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_fit(args):
    hist, meta = parse_histogram_file(args.file)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = fit_biexponential(hist, initial_guess(hist))
    gof = goodness_of_fit(hist, fit)
    s = fit.solution
    sd = fit.stderr
    print(f"id = {meta['id']}")
    for name, v, e in zip(("gamma_f", "gamma_s", "a_f", "a_s", "background"),
                          (s.gamma_f, s.gamma_s, s.a_f, s.a_s, fit.background), sd):
        print(f"{name} = {fmt(v)} +- {fmt(e)}")
    print(f"reduced_chi2 = {fmt(gof.reduced_chi2)} (dof {gof.dof})")
    print(f"converged = {fit.converged} after {fit.n_iter} iterations")
    if fit.flags:
        print("flags = " + ";".join(fit.flags))
    return EXIT_OK if fit.converged else 1


def _cmd_extract(args):
    cfg = _config_from_args(args)
    hist, meta = parse_histogram_file(args.file)
    res = process_histogram(hist, meta, cfg, cfg.seed, args.file)
    r = res.rates
    print(f"id = {meta['id']}")
    for name in RATE_NAMES:
        lo, hi = r.ci.get(name, (math.nan, math.nan))
        print(f"{name} = {fmt(getattr(r, name))}  [{fmt(lo)}, {fmt(hi)}]  sigma {fmt(r.sigma.get(name))}")
    print(f"naive_rate = {fmt(naive_total_rate(res.fit))}")
    print(f"valid = {r.valid}")
    if r.flags:
        print("flags = " + ";".join(r.flags))
    return EXIT_OK if r.valid else 1


def _cmd_map(args):
    cfg = _config_from_args(args)
    paths = _expand_inputs(args.inputs)
    if not paths:
        raise ProbeKitError("no input files")
    res = run_pipeline(cfg, paths)
    for path, reason in res.quarantine:
        log.warning("quarantined %s: %s", path, reason)
    written = emit_outputs(res, args.out)
    print(f"{len(res.results)} processed, {len(res.quarantine)} quarantined, mode {res.mode}")
    for p in written:
        print(f"wrote {p}")
    return res.exit_code


def _cmd_compare(args):
    rates = RateSet(args.gamma_rad, args.gamma_nrad, args.gamma_db)
    out = compare_rates(args.gamma_rad_hom, rates)
    for k in ("gamma_rad", "naive_rate", "inhibition_extracted", "inhibition_naive"):
        print(f"{k} = {fmt(out[k])}")
    return EXIT_OK


COMMANDS = {"simulate": _cmd_simulate, "fit": _cmd_fit, "extract": _cmd_extract,
            "map": _cmd_map, "compare": _cmd_compare}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ProbeKitError, OSError, ValueError) as exc:
        print(f"probekit: error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
