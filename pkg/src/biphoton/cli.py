"""Command line front end.

Each subcommand simulates one bench procedure and writes its results as
'#'-commented CSV tables plus one plain-text gnuplot script per figure,
all under --out.  Configuration comes from shipped presets (--preset) with
optional key=value overrides from a file (--config); --seed overrides the
configured seed.  Exit status: 0 on success, 1 for configuration errors,
2 when a simulation aborts partway (whatever rows completed are still
written).
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import serialize
from .config import ConfigError, Settings, load_config, load_preset
from .detection import sca_count, tac_histogram
from .optics import (
    C_LIGHT,
    coincidence_density,
    coincidence_map,
    fringe_spacing,
    fringe_visibility,
    marginal_singles,
)
from .scan import (
    SimulationError,
    build_bench,
    build_discriminator_config,
    build_scan_config,
    run_calibration,
    run_discriminator,
    run_scan,
    scan_fit,
    singles_ratio_report,
)

SCAN_PRESETS = ("phase1", "phase2", "phase3")


def _load_settings(args, default_preset: str | None) -> tuple[Settings, str]:
    """Merge preset and config-file values; the file wins on conflicts."""
    values: dict[str, str] = {}
    preset = getattr(args, "preset", None) or default_preset
    if preset:
        values.update(load_preset(preset))
    if args.config:
        values.update(load_config(args.config))
    return Settings(values), (preset or "none")


def _finish(settings: Settings) -> None:
    for key in settings.unused():
        print(f"warning: unused configuration key {key!r}", file=sys.stderr)


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------


def cmd_pattern(args) -> int:
    """Analytic counting densities: joint map, diagonal slice, marginals."""
    from .config import build_geometry, build_optics

    settings, preset = _load_settings(args, None)
    geom = build_geometry(settings)
    opt = build_optics(settings)
    span = settings.get_float("pattern.span_rad", 0.08)
    n_pts = settings.get_int("pattern.n_points", 241)
    _finish(settings)
    out = _outdir(args)
    meta = {"command": "pattern", "preset": preset,
            "span_rad": span, "n_points": n_pts,
            "fringe_spacing_m": fringe_spacing(geom, opt)}

    grid = np.linspace(-span, span, n_pts)
    cmap = coincidence_map(grid, grid.copy(), geom, opt)
    serialize.write_coincidence_map(out / "pattern_map.csv", cmap, meta)
    serialize.write_plot_script(
        out / "pattern_map.plt",
        title="joint counting density",
        csv_name="pattern_map.csv",
        xlabel="theta1 (rad)",
        ylabel="theta2 (rad)",
        series=[("1:2:3", "C(theta1, theta2)", "image")],
        extra=["set view map", "set size ratio -1"],
    )

    theta = np.linspace(-span, span, 4 * n_pts + 1)
    anti = coincidence_density(theta, -theta, geom, opt)
    rows = zip(
        theta,
        anti,
        marginal_singles(theta, "A", geom, opt),
        marginal_singles(theta, "B", geom, opt),
    )
    serialize.write_table(
        out / "pattern_profiles.csv",
        ["theta_rad", "antidiagonal_density", "singles_a", "singles_b"],
        rows, meta,
    )
    serialize.write_plot_script(
        out / "pattern_profiles.plt",
        title="anti-diagonal coincidence slice and fringe-free marginals",
        csv_name="pattern_profiles.csv",
        xlabel="theta (rad)",
        ylabel="density",
        series=[
            ("1:2", "C(theta, -theta)", "lines"),
            ("1:3", "singles A", "lines"),
            ("1:4", "singles B", "lines"),
        ],
    )

    from .optics import fringe_period_rad

    print(f"fringe spacing on the screen: {fringe_spacing(geom, opt) * 1e3:.3f} mm")
    print(f"coincidence fringe visibility near the axis: "
          f"{fringe_visibility(cmap, 0.0, fringe_period_rad(geom, opt)):.4f}")
    print(f"wrote pattern_map.csv and pattern_profiles.csv to {out}")
    return 0


def cmd_scan(args) -> int:
    settings, preset = _load_settings(args, "phase1")
    cfg = build_scan_config(settings)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    _finish(settings)
    out = _outdir(args)
    meta = {
        "command": "scan", "preset": preset, "seed": cfg.seed,
        "fixed_position_m": cfg.fixed_detector_position_m,
        "pair_rate_hz": cfg.gain.pair_rate_hz,
    }
    try:
        rows = run_scan(cfg, workers=args.workers)
    except SimulationError as exc:
        serialize.write_scan_rows(out / "scan.csv", exc.rows, meta)
        print(f"partial results ({len(exc.rows)} rows) written to "
              f"{out / 'scan.csv'}", file=sys.stderr)
        raise
    serialize.write_scan_rows(out / "scan.csv", rows, meta)
    serialize.write_plot_script(
        out / "scan.plt",
        title=f"coincidence scan ({preset})",
        csv_name="scan.csv",
        xlabel="moving detector position (m)",
        ylabel="background-subtracted coincidences",
        series=[
            ("2:8", "effective", "points pt 7"),
            ("2:9", "drift corrected", "lines"),
        ],
    )
    total = sum(r.effective for r in rows)
    print(f"{len(rows)} positions, {total:.0f} effective coincidences total")
    if len(rows) >= 2:
        fit = scan_fit(rows, cfg)
        print(f"window-integrated density fit: scale {fit.scale_factor:.4g}, "
              f"reduced chi2 {fit.reduced_chi2:.3f} "
              f"over {fit.degrees_of_freedom} dof")
    print(f"wrote scan.csv to {out}")
    return 0


def cmd_calibrate(args) -> int:
    settings, preset = _load_settings(args, "calibration")
    bench = build_bench(settings)
    seed = args.seed if args.seed is not None \
        else settings.get_int("calibration.seed", 0)
    _finish(settings)
    out = _outdir(args)
    profile = run_calibration(bench, seed)
    serialize.write_calibration_profile(
        out / "calibration.csv", profile,
        {"command": "calibrate", "preset": preset, "seed": seed,
         "true_efficiency": bench.scanned.quantum_efficiency},
    )
    serialize.write_plot_script(
        out / "calibration.plt",
        title="heralded efficiency across the collection lens",
        csv_name="calibration.csv",
        xlabel="scanned detector position (m)",
        ylabel="corrected efficiency",
        series=[("1:2:3", "eta +- sigma", "yerrorbars")],
    )
    from .calibration import profile_fwhm

    i = profile.argmax
    print(f"peak efficiency {profile.eta[i]:.4f} +- {profile.sigma[i]:.4f} "
          f"at {profile.positions_m[i] * 1e3:+.2f} mm "
          f"(configured {bench.scanned.quantum_efficiency:.3f})")
    print(f"profile FWHM {profile_fwhm(profile.positions_m, profile.eta) * 1e3:.2f} mm "
          f"(lens {bench.scanned.lens_diameter_m * 1e3:.1f} mm)")
    print(f"wrote calibration.csv to {out}")
    return 0


def cmd_bohm(args) -> int:
    from .bohm import (
        GridSpec,
        ScaledFarField,
        build_twoslit_field,
        default_t_star,
        ensemble_run,
        ergodicity_probe,
    )
    from .config import build_geometry, build_optics

    settings, preset = _load_settings(args, None)
    geom = build_geometry(settings)
    opt = build_optics(settings)
    n_traj = settings.get_int("bohm.n_traj", 200)
    n_steps = settings.get_int("bohm.n_steps", 400)
    sampling = settings.get_str("bohm.sampling", "mirror")
    write_max = settings.get_int("bohm.write_max", 50)
    seed = args.seed if args.seed is not None else settings.get_int("bohm.seed", 0)
    _finish(settings)
    out = _outdir(args)

    grid = GridSpec()
    field0 = build_twoslit_field(geom, opt, grid)
    evolution = ScaledFarField(field0, default_t_star(grid))
    t_screen = geom.screen_distance_m / C_LIGHT
    ensemble = ensemble_run(
        evolution, n_traj, sampling=sampling, seed=seed,
        t_final=evolution.tau_of(t_screen), n_steps=n_steps,
    )

    meta = {"command": "bohm", "preset": preset, "seed": seed,
            "sampling": sampling, "n_traj": n_traj, "n_steps": n_steps}
    serialize.write_trajectories(out / "bohm_trajectories.csv", ensemble,
                                 meta, max_trajectories=write_max)
    serialize.write_plot_script(
        out / "bohm_trajectories.plt",
        title=f"paired trajectories ({sampling} starts)",
        csv_name="bohm_trajectories.csv",
        xlabel="time (s)",
        ylabel="screen coordinate (m)",
        series=[("2:3", "photon 1", "dots"), ("2:4", "photon 2", "dots")],
    )
    e1, e2 = ensemble.physical_endpoints()
    serialize.write_table(out / "bohm_endpoints.csv", ["y1_m", "y2_m"],
                          zip(e1, e2), meta)
    serialize.write_plot_script(
        out / "bohm_endpoints.plt",
        title="trajectory endpoints at the screen plane",
        csv_name="bohm_endpoints.csv",
        xlabel="y1 (m)",
        ylabel="y2 (m)",
        series=[("1:2", "pairs", "points pt 6 ps 0.4")],
        extra=["set size ratio -1"],
    )

    span = float(grid.axis()[-1] - grid.axis()[0])
    drift = float(np.max(np.abs(ensemble.y1_m + ensemble.y2_m))) if sampling == "mirror" else float("nan")
    sign0 = np.sign(ensemble.y1_m[0])
    crossings = int(np.any(np.sign(ensemble.y1_m) != sign0[None, :], axis=0).sum())
    print(f"{n_traj} paired trajectories, {n_steps} steps to the screen plane")
    if sampling == "mirror":
        print(f"max |y1 + y2| drift: {drift:.3e} m ({drift / span:.2e} of the span)")
        print(f"symmetry-axis crossings: {crossings}")
        erg = ergodicity_probe(ensemble)
        print(f"half-plane ergodicity discrepancy: min "
              f"{erg.min_discrepancy:.3f} over all trajectories")
    print(f"exited through the grid edge: {int(ensemble.exited.sum())}")
    print(f"wrote bohm_trajectories.csv and bohm_endpoints.csv to {out}")
    return 0


def cmd_discriminate(args) -> int:
    settings, preset = _load_settings(args, "discriminator")
    cfg = build_discriminator_config(settings)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    _finish(settings)
    out = _outdir(args)
    reports = run_discriminator(cfg)
    rows = [
        (
            "primary" if r.discriminating else "control",
            r.position_a_m, r.position_b_m, r.acceptance_halfwidth_m,
            r.duration_s, r.sqm_peak, r.sqm_shifted, r.sqm_effective,
            r.sqm_sigma, r.sqm_expected, r.dbb_count, r.n_traj,
        )
        for r in reports
    ]
    serialize.write_table(
        out / "discriminator.csv",
        ["placement", "position_a_m", "position_b_m", "halfwidth_m",
         "duration_s", "sqm_peak", "sqm_shifted", "sqm_effective",
         "sqm_sigma", "sqm_expected", "dbb_count", "n_traj"],
        rows,
        {"command": "discriminate", "preset": preset, "seed": cfg.seed,
         "pair_rate_hz": cfg.pair_rate_hz},
    )
    for r in reports:
        print(r.summary())
        if r.discriminating:
            print(f"  -> counting chain sees a {r.significance:.1f} sigma "
                  f"coincidence excess where the paired-trajectory model "
                  f"predicts exactly zero")
    print(f"wrote discriminator.csv to {out}")
    return 0


def cmd_singles_ratio(args) -> int:
    settings, preset = _load_settings(args, "phase2")
    cfg = build_scan_config(settings)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    _finish(settings)
    out = _outdir(args)
    rows = run_scan(cfg, workers=args.workers)
    rep = singles_ratio_report(rows, cfg)
    serialize.write_table(
        out / "singles_ratio.csv",
        ["position_m", "ratio", "ratio_sigma"],
        zip(rep.positions_m, rep.ratio, rep.ratio_sigma),
        {"command": "singles-ratio", "preset": preset, "seed": cfg.seed,
         "slope_per_m": rep.slope_per_m,
         "slope_sigma_per_m": rep.slope_sigma_per_m,
         "fringe_amplitude_rel": rep.fringe_amplitude_rel},
    )
    serialize.write_plot_script(
        out / "singles_ratio.plt",
        title="envelope-normalized singles ratio",
        csv_name="singles_ratio.csv",
        xlabel="moving detector position (m)",
        ylabel="ratio (arb.)",
        series=[("1:2:3", "ratio +- sigma", "yerrorbars")],
    )
    print(f"singles ratio slope: {rep.slope_per_m:.4g} +- "
          f"{rep.slope_sigma_per_m:.4g} per m "
          f"({rep.slope_significance:.2f} sigma from flat)")
    print(f"analytic fringe component of the marginal profile: "
          f"{rep.fringe_amplitude_rel:.3e} of the mean")
    print(f"wrote singles_ratio.csv to {out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="biphoton",
        description="Simulated biphoton double-slit bench: counting "
                    "electronics, calibration and trajectory comparisons.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value configuration file")
    common.add_argument("--seed", type=int, default=None,
                        help="override the configured master seed")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--format", choices=["csv"], default="csv",
                        help="output table format")
    common.add_argument("--workers", type=int, default=1,
                        help="parallel workers (results are identical "
                             "for any value)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pattern", parents=[common],
                       help="analytic joint density, slice and marginals")
    p.set_defaults(func=cmd_pattern)

    p = sub.add_parser("scan", parents=[common],
                       help="simulate a detector sweep with coincidences")
    p.add_argument("--preset", choices=SCAN_PRESETS,
                   help="shipped scan preset (default phase1)")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("calibrate", parents=[common],
                       help="heralded-efficiency lens scan")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("bohm", parents=[common],
                       help="integrate paired guided trajectories")
    p.set_defaults(func=cmd_bohm)

    p = sub.add_parser("discriminate", parents=[common],
                       help="same-side counting chain vs trajectory model")
    p.set_defaults(func=cmd_discriminate)

    p = sub.add_parser("singles-ratio", parents=[common],
                       help="flatness test of the marginal singles")
    p.set_defaults(func=cmd_singles_ratio)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except SimulationError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
