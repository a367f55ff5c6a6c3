"""Command-line pipeline.

Each subcommand reads its inputs from the run directory (``--out``) unless
an explicit path is given, writes its outputs there and updates
``manifest.json``. Exit codes: 0 success, 2 validation failure, 3
numerical failure, 4 I/O failure.
"""

import argparse
import math
import os
import sys
import time

import numpy as np

from . import io
from .calibration import fit_linear_coupling, predict_phi, synthesize_samples
from .config import RunConfig
from .continuity import GaussianHistogramFitter, continuity_report, fd_bin_edges
from .dynamics import effective_mass_sq, integrate_many, seed_trajectories, velocity_field
from .exceptions import (
    DegenerateDesignError,
    FitFailureError,
    MaskedRegionError,
    NoSignalError,
    OutOfGridError,
    ValidationError,
)
from .field import analytic_weak_values
from .inversion import invert_scan
from .pointer import run_scan
from .presets import REFERENCE_RATIO, REFERENCE_SIGMA_RE, REFERENCE_SIGMA_RN

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

FILES = {
    "config": "run_config.ini",
    "measurements": "measurements.csv",
    "fringe": "fringe.csv",
    "samples": "calibration_samples.csv",
    "coefficients": "coefficients.json",
    "weak_values": "weak_values.csv",
    "trajectories": "trajectories.csv",
    "heatmap": "heatmap.ppm",
    "mass": "mass.csv",
    "mass_histogram": "mass_histogram.csv",
    "mass_summary": "mass_summary.json",
    "residuals": "residuals.csv",
    "hist_e": "residual_histogram_e.csv",
    "hist_n": "residual_histogram_n.csv",
    "continuity_fit": "continuity_fit.json",
    "report": "report.txt",
}


class Context:
    def __init__(self, args):
        self.args = args
        self.out = args.out
        os.makedirs(self.out, exist_ok=True)
        self.config = RunConfig.load(args.config, args.seed)
        self.threads = max(1, int(args.threads))

    def path(self, key, override=None):
        return override or os.path.join(self.out, FILES[key])

    def finish(self, stage, t0, keys):
        names = [FILES[k] for k in keys]
        io.Manifest(self.out).record(stage, self.config, round(time.perf_counter() - t0, 6), names)


def cmd_simulate(ctx):
    t0 = time.perf_counter()
    cfg = ctx.config
    with open(ctx.path("config"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(cfg.to_ini())
    noise, rate, T, slit = cfg.noise()
    ms = run_scan(cfg.interferometer(), cfg.plates(), cfg.grid(), rate, noise, T=T,
                  slit_width=slit, threads=ctx.threads)
    io.write_measurements(ctx.path("measurements"), ms)
    io.write_fringe(ctx.path("fringe"), ms.grid, ms.fringe_counts())
    ctx.finish("simulate", t0, ["config", "measurements", "fringe"])
    print(f"simulated {ms.grid.size} sites x {len(ms.plates)} plates "
          f"({ms.metadata['n_clamped']} clamped records)")


def cmd_calibrate(ctx):
    t0 = time.perf_counter()
    cfg = ctx.config
    keys = ["coefficients"]
    if ctx.args.samples:
        groups = io.read_calibration_samples(ctx.args.samples)
    else:
        plates = cfg.plates()
        triples = {}
        for p in plates:
            triples.setdefault(p.optic_axis, (p.a, p.b, p.c))
        rng = np.random.default_rng(cfg.seed)
        groups = {axis: synthesize_samples(t, phi_noise=ctx.args.phi_noise, rng=rng)
                  for axis, t in triples.items()}
        io.write_calibration_samples(ctx.path("samples"), groups)
        keys.insert(0, "samples")
    omega = cfg.interferometer().omega
    k0 = cfg.interferometer().wavenumber
    result = {}
    for label, samples in groups.items():
        fit = fit_linear_coupling(samples)
        result[label] = {
            "a_rad_m": fit.a, "b_rad_s": fit.b, "c_rad": fit.c,
            "a_se": fit.a_se, "b_se": fit.b_se, "c_se": fit.c_se,
            "residual_rms_rad": fit.residual_rms, "n_samples": len(samples),
            "phi_at_normal_incidence_rad": float(predict_phi(fit, k0, omega)),
        }
    io.write_json(ctx.path("coefficients"), result)
    ctx.finish("calibrate", t0, keys)
    for label, r in result.items():
        print(f"{label}: a={r['a_rad_m']!r} b={r['b_rad_s']!r} c={r['c_rad']!r}")


def cmd_invert(ctx):
    t0 = time.perf_counter()
    cfg = ctx.config
    _, _, T, _ = cfg.noise()
    ms = io.read_measurements(ctx.path("measurements", ctx.args.measurements), cfg.plates(), T,
                              grid=cfg.grid())
    wv = invert_scan(ms, weighting=cfg.get("inversion", "weighting"))
    io.write_weak_values(ctx.path("weak_values"), wv)
    ctx.finish("invert", t0, ["weak_values"])
    print(f"inverted {int((~wv.mask).sum())} of {wv.grid.size} sites")


def _load_wv(ctx):
    return io.read_weak_values(ctx.path("weak_values", ctx.args.weak_values), grid=ctx.config.grid())


def _load_fringe(ctx):
    _, N = io.read_fringe(ctx.path("fringe", ctx.args.fringe), grid=ctx.config.grid())
    return N


def cmd_trajectories(ctx):
    t0 = time.perf_counter()
    opts = ctx.config.trajectory()
    wv = _load_wv(ctx)
    N = _load_fringe(ctx)
    vm = velocity_field(wv)
    seeds = seed_trajectories(N, wv.grid, opts["n_seeds"], opts["entry_edge"])
    trajs = integrate_many(vm, seeds, opts["h"], opts["max_steps"], opts["normalize"],
                           threads=ctx.threads)
    io.write_trajectories(ctx.path("trajectories"), trajs)
    img = io.render_heatmap(wv.grid, N, [t.as_array() for t in trajs])
    io.write_ppm(ctx.path("heatmap"), img)
    ctx.finish("trajectories", t0, ["trajectories", "heatmap"])
    reasons = {}
    for t in trajs:
        reasons[t.termination] = reasons.get(t.termination, 0) + 1
    print(f"{len(trajs)} trajectories: {reasons}")


def cmd_mass(ctx):
    t0 = time.perf_counter()
    wv = _load_wv(ctx)
    mm = effective_mass_sq(wv)
    vm = velocity_field(wv, omega0=mm.omega0)
    io.write_mass(ctx.path("mass"), mm)
    good = mm.m2[~mm.mask]
    bins = ctx.config.get("output", "mass_histogram_bins")
    if bins == "fd":
        edges = fd_bin_edges(good)
    else:
        try:
            nb = int(bins)
        except ValueError as exc:
            raise ValidationError("[output] mass_histogram_bins must be 'fd' or an integer") from exc
        edges = np.linspace(good.min(), good.max(), nb + 1)
    counts, edges = np.histogram(good, edges)
    io.write_histogram(ctx.path("mass_histogram"), edges, counts)
    both = ~mm.mask & ~vm.mask
    superluminal = vm.speed[both] > 1
    negative = mm.m2[both] < 0
    summary = {
        "omega0_rad_per_s": mm.omega0,
        "n_unmasked": int(good.size),
        "m2_min": float(good.min()),
        "m2_max": float(good.max()),
        "fraction_negative": float(np.mean(good < 0)),
        "n_below_minus_one": int(np.sum(good < -1)),
        "tachyonic_sites_match_superluminal": bool(np.array_equal(negative, superluminal)),
    }
    io.write_json(ctx.path("mass_summary"), summary)
    ctx.finish("mass", t0, ["mass", "mass_histogram", "mass_summary"])
    print(f"m2 range [{summary['m2_min']:.4g}, {summary['m2_max']:.4g}], "
          f"{summary['fraction_negative']:.1%} negative")


def cmd_continuity(ctx):
    t0 = time.perf_counter()
    opts = ctx.config.continuity()
    wv = _load_wv(ctx)
    N = _load_fringe(ctx)
    omega = ctx.config.interferometer().omega
    rep = continuity_report(N, wv, velocity_field(wv), omega, opts["count_floor"],
                            opts["smoothing_sigma"])
    io.write_residuals(ctx.path("residuals"), wv.grid, rep.R_e, rep.R_n)
    io.write_histogram(ctx.path("hist_e"), rep.fit_e.bin_edges_, rep.fit_e.counts_)
    io.write_histogram(ctx.path("hist_n"), rep.fit_n.bin_edges_, rep.fit_n.counts_)
    fits = {"R_e": rep.fit_e.summary(), "R_n": rep.fit_n.summary(), "sigma_ratio": rep.sigma_ratio}
    for name, R in (("R_e", rep.R_e), ("R_n", rep.R_n)):
        fits[name]["rms"] = float(np.sqrt(np.nanmean(R**2)))
    io.write_json(ctx.path("continuity_fit"), fits)
    ctx.finish("continuity", t0, ["residuals", "hist_e", "hist_n", "continuity_fit"])
    print(f"sigma(R_e)={rep.fit_e.sigma_:.6g} 1/s  sigma(R_n)={rep.fit_n.sigma_:.6g} 1/s  "
          f"ratio={rep.sigma_ratio:.4g}")


def _report_lines(ctx):
    cfg = ctx.config
    grid = cfg.grid()
    lines = [f"run directory: {ctx.out}", f"config hash: {cfg.digest()}", f"seed: {cfg.seed}",
             f"grid: {grid.nx} x {grid.nz} = {grid.size} sites"]
    wv_path = ctx.path("weak_values")
    if os.path.exists(wv_path):
        wv = io.read_weak_values(wv_path, grid=grid)
        truth = analytic_weak_values(cfg.interferometer(), grid)
        ok = ~wv.mask & ~truth.mask
        k_true = np.hypot(truth.kx, truth.kz)[ok]
        dev_k = max(np.max(np.abs(wv.kx - truth.kx)[ok] / k_true),
                    np.max(np.abs(wv.kz - truth.kz)[ok] / k_true))
        dev_w = np.max(np.abs(wv.omega[ok] - truth.omega[ok]) / truth.omega[ok])
        lines += [
            f"weak values: {int(ok.sum())} sites compared with the analytic field"
            + ("" if cfg.noise_enabled() else " (noise off)"),
            f"  max relative momentum deviation: {dev_k:.3e}",
            f"  max relative energy deviation:   {dev_w:.3e}",
        ]
    path = ctx.path("mass_summary")
    if os.path.exists(path):
        m = io.read_json(path)
        lines += [
            f"effective squared mass: range [{m['m2_min']:.4g}, {m['m2_max']:.4g}]"
            f" (upper bound 1), {m['fraction_negative']:.1%} negative,"
            f" {m['n_below_minus_one']} sites below -1",
            f"  negative m2 coincides with |v| > 1: {m['tachyonic_sites_match_superluminal']}",
        ]
    path = ctx.path("continuity_fit")
    if os.path.exists(path):
        c = io.read_json(path)
        e, n = c["R_e"], c["R_n"]
        lines += [
            f"continuity R_e: sigma = {e['sigma']:.6g} +/- {e['sigma_uncertainty']:.3g} 1/s,"
            f" mu/sigma = {e['mu'] / e['sigma']:.3g}  (reference sigma {REFERENCE_SIGMA_RE})",
            f"continuity R_n: sigma = {n['sigma']:.6g} +/- {n['sigma_uncertainty']:.3g} 1/s,"
            f" mu/sigma = {n['mu'] / n['sigma']:.3g}  (reference sigma {REFERENCE_SIGMA_RN})",
            f"sigma(R_n)/sigma(R_e) = {c['sigma_ratio']:.4g}"
            f"  (reference {REFERENCE_SIGMA_RN}/{REFERENCE_SIGMA_RE} = {REFERENCE_RATIO:.4g})",
        ]
    path = ctx.path("trajectories")
    if os.path.exists(path):
        trajs = io.read_trajectories(path)
        lines.append(f"trajectories: {len(trajs)}, mean length {np.mean([len(t) for t in trajs]):.1f} points")
    path = ctx.path("coefficients")
    if os.path.exists(path):
        for label, r in io.read_json(path).items():
            lines.append(
                f"calibration {label}: a={r['a_rad_m']:.4g}+/-{r['a_se']:.2g}"
                f" b={r['b_rad_s']:.4g}+/-{r['b_se']:.2g} c={r['c_rad']:.4g}+/-{r['c_se']:.2g};"
                f" phi at normal incidence {r['phi_at_normal_incidence_rad']:.4f} rad"
                f" (pi/2 = {math.pi / 2:.4f})"
            )
    return lines


def cmd_report(ctx):
    t0 = time.perf_counter()
    lines = _report_lines(ctx)
    text = "\n".join(lines) + "\n"
    with open(ctx.path("report"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    ctx.finish("report", t0, ["report"])
    sys.stdout.write(text)


COMMANDS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "invert": cmd_invert,
    "trajectories": cmd_trajectories,
    "mass": cmd_mass,
    "continuity": cmd_continuity,
    "report": cmd_report,
}


def _u64(text):
    val = int(text)
    if not 0 <= val < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return val


def _positive_int(text):
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return val


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS)
    common.add_argument("--seed", metavar="U64", type=_u64, default=argparse.SUPPRESS)
    common.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS)
    common.add_argument("--threads", metavar="N", type=_positive_int, default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="relbohm", parents=[common],
                                     description="Weak-measurement Bohmian trajectory pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate counts for every site and plate")
    p = sub.add_parser("calibrate", parents=[common], help="fit plate coupling coefficients")
    p.add_argument("--samples", metavar="CSV", help="calibration samples (default: synthesize)")
    p.add_argument("--phi-noise", type=float, default=0.01, help="angle noise of synthesized samples, rad")
    p = sub.add_parser("invert", parents=[common], help="recover weak values from counts")
    p.add_argument("--measurements", metavar="CSV")
    for name, helptext in (("trajectories", "integrate streamlines and draw the heatmap"),
                           ("mass", "effective squared mass map and histogram"),
                           ("continuity", "continuity residuals and Gaussian fits")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--weak-values", metavar="CSV")
        p.add_argument("--fringe", metavar="CSV")
    sub.add_parser("report", parents=[common], help="summarize a run directory")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("out", "."), ("threads", 1)):
        if not hasattr(args, name):
            setattr(args, name, default)
    for name in ("samples", "measurements", "weak_values", "fringe"):
        if not hasattr(args, name):
            setattr(args, name, None)
    try:
        ctx = Context(args)
        COMMANDS[args.command](ctx)
    except (DegenerateDesignError, FitFailureError, MaskedRegionError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValidationError, NoSignalError, OutOfGridError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
