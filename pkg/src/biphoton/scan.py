"""Scan orchestration: detector sweeps, fits, calibration and discriminator runs.

This module wires the physics layers into the procedures actually run at
the bench: translate one detector in fixed steps while the other sits
still, count singles and windowed coincidences at every stop, correct the
coincidences against the monitor channel's drift, and compare the profile
with the window-integrated counting density.  It also hosts the two
standalone procedures (heralded-efficiency calibration, same-side
detector-pair discriminator) and the Settings -> config builders used by
the command line front end.

Bookkeeping rules that the rest of the package relies on:

* positions are recomputed as start + index * step at every use -- never
  accumulated -- so repeated evaluation is bit-identical;
* per-position random seeds are spawned from the master seed once, up
  front, so results do not depend on execution order or worker count;
* the start channel of the timing converter is the detector with the lower
  expected rate (computed analytically from the configuration, not from
  the data, again to keep parallel runs deterministic).
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .calibration import CalibrationBench, CalibrationProfile, efficiency_scan
from .config import (
    Settings,
    build_detector,
    build_gain,
    build_geometry,
    build_optics,
    build_tac,
)
from .detection import (
    AngularWindow,
    DetectorModel,
    TacScaConfig,
    angular_window,
    detect,
    drift_correct,
    sca_count,
    tac_histogram,
)
from .optics import (
    C_LIGHT,
    OpticalConfig,
    SlitGeometry,
    coincidence_density,
    fringe_period_rad,
    fringe_projection,
    marginal_singles,
)
from .source import FourthOrderSampler, GainParam, generate_pairs

__all__ = [
    "SimulationError",
    "ScanConfig",
    "ScanRow",
    "FitReport",
    "SinglesRatioReport",
    "DiscriminatorRunReport",
    "run_scan",
    "scan_fit",
    "chi2_normalize",
    "integrated_coincidence_prediction",
    "window_singles_fraction",
    "singles_ratio_report",
    "run_calibration",
    "run_discriminator",
    "build_scan_config",
    "build_bench",
    "build_discriminator_config",
]


class SimulationError(Exception):
    """A run failed partway; `rows` holds the positions finished so far."""

    def __init__(self, message: str, rows: list["ScanRow"] | None = None):
        super().__init__(message)
        self.rows = rows if rows is not None else []


@dataclass(frozen=True)
class ScanConfig:
    """One detector-translation sweep, fully specified."""

    fixed_detector_position_m: float
    start_position_m: float
    step_m: float
    n_steps: int
    acquisition_s: float
    geometry: SlitGeometry = field(default_factory=SlitGeometry)
    optics: OpticalConfig = field(default_factory=OpticalConfig)
    gain: GainParam = field(default_factory=GainParam)
    detector_moving: DetectorModel = field(
        default_factory=lambda: DetectorModel("a", 0.400, 700.0)
    )
    detector_fixed: DetectorModel = field(
        default_factory=lambda: DetectorModel("b", 0.275, 35.0)
    )
    tac: TacScaConfig = field(default_factory=TacScaConfig)
    rotation_arm_m: float = 0.5
    start_role: str = "auto"  # "auto" | "moving" | "fixed"
    drift_monitor: str = "fixed"  # "fixed" | "none"
    position_sigma_m: float = 0.0
    drift_times_s: tuple[float, ...] | None = None
    drift_factors: tuple[float, ...] | None = None
    seed: int = 0
    output_path: str | None = None

    def __post_init__(self):
        if self.step_m == 0:
            raise ValueError("step must be nonzero")
        if self.n_steps < 1:
            raise ValueError("a scan needs at least one position")
        if self.acquisition_s <= 0:
            raise ValueError("acquisition time must be positive")
        if self.rotation_arm_m <= 0:
            raise ValueError("rotation arm length must be positive")
        if self.start_role not in ("auto", "moving", "fixed"):
            raise ValueError("start_role must be 'auto', 'moving' or 'fixed'")
        if self.drift_monitor not in ("fixed", "none"):
            raise ValueError("drift_monitor must be 'fixed' or 'none'")
        if self.position_sigma_m < 0:
            raise ValueError("position uncertainty must be >= 0")
        if (self.drift_times_s is None) != (self.drift_factors is None):
            raise ValueError("drift times and factors must be given together")
        if self.drift_times_s is not None:
            t = np.asarray(self.drift_times_s, dtype=float)
            f = np.asarray(self.drift_factors, dtype=float)
            if len(t) != len(f) or len(t) < 2:
                raise ValueError("drift tables need >= 2 matching entries")
            if np.any(np.diff(t) <= 0):
                raise ValueError("drift times must be strictly increasing")
            if np.any(f <= 0):
                raise ValueError("drift factors must be positive")

    def position_m(self, index: int) -> float:
        return self.start_position_m + index * self.step_m

    def rotation_rad(self, index: int) -> float:
        # the mount pivots about the source, so translating the detector by
        # d turns the collection axis by arctan(d / arm)
        return math.atan(index * self.step_m / self.rotation_arm_m)

    def drift_factor(self, index: int) -> float:
        if self.drift_times_s is None:
            return 1.0
        t_mid = (index + 0.5) * self.acquisition_s
        return float(np.interp(t_mid, self.drift_times_s, self.drift_factors))

    def moving_window(self, index: int) -> AngularWindow:
        return angular_window(
            self.position_m(index),
            self.geometry.screen_distance_m,
            self.detector_moving.aperture_diameter_m,
        )

    def fixed_window(self) -> AngularWindow:
        return angular_window(
            self.fixed_detector_position_m,
            self.geometry.screen_distance_m,
            self.detector_fixed.aperture_diameter_m,
        )


@dataclass(frozen=True)
class ScanRow:
    """Counting record of one scan position."""

    index: int
    moving_detector_position_m: float
    rotation_rad: float
    n_a: int
    n_b: int
    n_coinc_peak: int
    n_coinc_shifted: int
    effective: float
    corrected: float
    duration_s: float

    def __post_init__(self):
        if min(self.n_a, self.n_b, self.n_coinc_peak, self.n_coinc_shifted) < 0:
            raise ValueError("counts must be >= 0")
        if self.duration_s <= 0:
            raise ValueError("duration must be positive")


@dataclass(frozen=True)
class FitReport:
    """Weighted single-parameter normalization of a prediction to data."""

    scale_factor: float
    reduced_chi2: float
    degrees_of_freedom: int
    residuals: np.ndarray


# ---------------------------------------------------------------------------
# window integrals of the counting density


def window_singles_fraction(
    window: AngularWindow,
    geom: SlitGeometry,
    opt: OpticalConfig,
    *,
    sampler: FourthOrderSampler | None = None,
    norm: float | None = None,
    n_win: int = 129,
    n_dom: int = 2001,
) -> float:
    """Probability that one photon of a pair lands inside `window`.

    Marginalizes the joint counting density over the partner's full
    truncated domain, normalized the same way the pair generator is, so
    the fraction matches the Monte Carlo chain.  Numerator and denominator
    share the quadrature density (n_dom points) so their discretization
    biases cancel in the ratio.
    """
    if sampler is None:
        sampler = FourthOrderSampler(geom, opt)
    if norm is None:
        norm = sampler.norm(n_quad=n_dom)
    th_w = np.linspace(window.lo_rad, window.hi_rad, n_win)
    th_d = np.linspace(sampler.theta_lo, sampler.theta_hi, n_dom)
    dens = coincidence_density(th_w[:, None], th_d[None, :], geom, opt)
    num = np.trapezoid(np.trapezoid(dens, th_d, axis=1), th_w)
    return float(num / norm)


def integrated_coincidence_prediction(
    positions_m: np.ndarray,
    fixed_position_m: float,
    geom: SlitGeometry,
    opt: OpticalConfig,
    *,
    aperture_moving_m: float,
    aperture_fixed_m: float,
    norm: float | None = None,
    n_theta: int = 96,
) -> np.ndarray:
    """Pair fraction collected by the two acceptance windows, per position.

    Either photon can satisfy either window, and the counting density is
    exchange symmetric, so for disjoint windows the probability is twice
    the single-assignment window integral.  Returned as the fraction of all
    generated pairs (normalized over the truncated generation domain).
    """
    positions = np.asarray(positions_m, dtype=float)
    if norm is None:
        norm = FourthOrderSampler(geom, opt).norm()
    L = geom.screen_distance_m
    win_f = angular_window(fixed_position_m, L, aperture_fixed_m)
    th_f = np.linspace(win_f.lo_rad, win_f.hi_rad, n_theta)
    out = np.empty(len(positions))
    for i, pos in enumerate(positions):
        win_m = angular_window(pos, L, aperture_moving_m)
        th_m = np.linspace(win_m.lo_rad, win_m.hi_rad, n_theta)
        dens = coincidence_density(th_m[:, None], th_f[None, :], geom, opt)
        out[i] = np.trapezoid(np.trapezoid(dens, th_f, axis=1), th_m)
    return 2.0 * out / norm


# ---------------------------------------------------------------------------
# the sweep itself


def _expected_click_rate(
    cfg: ScanConfig, window: AngularWindow, det: DetectorModel, fraction_cache: dict
) -> float:
    """Analytic mean click rate for the start/stop role decision."""
    key = (window.lo_rad, window.hi_rad)
    if key not in fraction_cache:
        fraction_cache[key] = window_singles_fraction(
            window, cfg.geometry, cfg.optics,
            sampler=fraction_cache["sampler"], norm=fraction_cache["norm"],
        )
    p_keep = det.quantum_efficiency * det.transmittance
    # both photons of each pair reach the screen, so either can fall in
    return 2.0 * cfg.gain.pair_rate_hz * fraction_cache[key] * p_keep \
        + det.dark_rate_hz


def _resolve_start_role(cfg: ScanConfig, sampler: FourthOrderSampler) -> str:
    if cfg.start_role != "auto":
        return cfg.start_role
    cache = {"sampler": sampler, "norm": sampler.norm()}
    # compare at the scan midpoint; the decision must not depend on data
    mid = cfg.n_steps // 2
    rate_moving = _expected_click_rate(cfg, cfg.moving_window(mid),
                                       cfg.detector_moving, cache)
    rate_fixed = _expected_click_rate(cfg, cfg.fixed_window(),
                                      cfg.detector_fixed, cache)
    return "moving" if rate_moving <= rate_fixed else "fixed"


def _count_position(
    cfg: ScanConfig,
    index: int,
    seed_ints: tuple[int, int, int],
    start_role: str,
    sampler: FourthOrderSampler,
) -> tuple:
    """Generate, detect and count one stop of the sweep."""
    gain = replace(
        cfg.gain,
        pair_rate_hz=cfg.gain.pair_rate_hz * cfg.drift_factor(index),
        duration_s=cfg.acquisition_s,
    )
    stream = generate_pairs(gain, cfg.geometry, cfg.optics, seed_ints[0],
                            sampler=sampler)
    clicks_m = detect(stream, "both", cfg.detector_moving,
                      cfg.moving_window(index), seed_ints[1])
    clicks_f = detect(stream, "both", cfg.detector_fixed,
                      cfg.fixed_window(), seed_ints[2])
    start, stop = (clicks_m, clicks_f) if start_role == "moving" \
        else (clicks_f, clicks_m)
    peak = sca_count(tac_histogram(start, stop, cfg.tac), cfg.tac)
    shifted = sca_count(
        tac_histogram(start, stop, cfg.tac,
                      extra_stop_delay_s=cfg.tac.background_shift_s),
        cfg.tac,
    )
    return index, len(clicks_m), len(clicks_f), peak, shifted


def _assemble_rows(cfg: ScanConfig, counted: list[tuple]) -> list[ScanRow]:
    """Attach positions, rotations and the drift correction to raw counts."""
    counted = sorted(counted)
    monitor = np.array(
        [n_b - cfg.detector_fixed.dark_rate_hz * cfg.acquisition_s
         for _, _, n_b, _, _ in counted]
    )
    effective = np.array([float(pk - sh) for _, _, _, pk, sh in counted])
    if cfg.drift_monitor == "none" or not len(counted):
        corrected = effective.copy()
    elif np.all(monitor > 0):
        corrected = drift_correct(effective, monitor)
    else:
        # the monitor lost its beam somewhere; publish raw values rather
        # than dividing by a nonpositive singles estimate
        warnings.warn(
            "monitor singles not positive at every position; "
            "drift correction skipped",
            UserWarning,
            stacklevel=2,
        )
        corrected = effective.copy()
    rows = []
    for (idx, n_a, n_b, peak, shifted), eff, corr in zip(counted, effective,
                                                         corrected):
        rows.append(ScanRow(
            index=idx,
            moving_detector_position_m=cfg.position_m(idx),
            rotation_rad=cfg.rotation_rad(idx),
            n_a=n_a,
            n_b=n_b,
            n_coinc_peak=peak,
            n_coinc_shifted=shifted,
            effective=float(eff),
            corrected=float(corr),
            duration_s=cfg.acquisition_s,
        ))
    return rows


def _overlap_indices(cfg: ScanConfig) -> list[int]:
    reach = 0.5 * (cfg.detector_moving.aperture_diameter_m
                   + cfg.detector_fixed.aperture_diameter_m)
    return [i for i in range(cfg.n_steps)
            if abs(cfg.position_m(i) - cfg.fixed_detector_position_m) < reach]


def run_scan(cfg: ScanConfig, workers: int = 1) -> list[ScanRow]:
    """Execute the sweep and return one row per position, in scan order.

    Results are independent of `workers`: every position gets its own seed
    stream spawned from the master seed, and rows are assembled by index.
    On a failure partway the exception carries the completed rows.
    """
    overlaps = _overlap_indices(cfg)
    if overlaps:
        warnings.warn(
            f"acceptance windows of the two detectors overlap at scan "
            f"indices {overlaps}; physically the detectors would collide "
            f"there, and the independent-detection click model double "
            f"counts photons shared by both windows",
            UserWarning,
            stacklevel=2,
        )
    sampler = FourthOrderSampler(cfg.geometry, cfg.optics)
    start_role = _resolve_start_role(cfg, sampler)
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_steps)
    seed_ints = [tuple(int(s) for s in child.generate_state(3, dtype=np.uint64))
                 for child in children]

    counted: list[tuple] = []
    try:
        if workers <= 1:
            for i in range(cfg.n_steps):
                counted.append(
                    _count_position(cfg, i, seed_ints[i], start_role, sampler)
                )
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = [
                    pool.submit(_count_position, cfg, i, seed_ints[i],
                                start_role, sampler)
                    for i in range(cfg.n_steps)
                ]
                for fut in futures:
                    counted.append(fut.result())
    except Exception as exc:
        raise SimulationError(
            f"scan aborted after {len(counted)} of {cfg.n_steps} positions: "
            f"{exc}",
            rows=_assemble_rows(cfg, counted),
        ) from exc
    return _assemble_rows(cfg, counted)


# ---------------------------------------------------------------------------
# normalization fit


def chi2_normalize(
    measured: np.ndarray, sigma: np.ndarray, predicted: np.ndarray
) -> FitReport:
    """Fit data = a * prediction by weighted least squares (closed form).

    The single scale parameter is a = sum(w d p) / sum(w p^2) with
    w = 1/sigma^2; the report carries the reduced chi-square over n - 1
    degrees of freedom and the standardized residuals.
    """
    d = np.asarray(measured, dtype=float)
    s = np.asarray(sigma, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if not (d.shape == s.shape == p.shape):
        raise ValueError("measured, sigma and predicted must share one shape")
    if d.ndim != 1 or len(d) < 2:
        raise ValueError("need at least two points to normalize and test")
    if np.any(s <= 0):
        raise ValueError("sigmas must be positive")
    w = 1.0 / s**2
    denom = float(np.sum(w * p * p))
    if denom == 0.0:
        raise ValueError("prediction is identically zero; nothing to scale")
    a = float(np.sum(w * d * p)) / denom
    residuals = (d - a * p) / s
    dof = len(d) - 1
    return FitReport(
        scale_factor=a,
        reduced_chi2=float(np.sum(residuals**2)) / dof,
        degrees_of_freedom=dof,
        residuals=residuals,
    )


def scan_fit(
    rows: list[ScanRow],
    cfg: ScanConfig,
    *,
    norm: float | None = None,
) -> FitReport:
    """Normalize the window-integrated density to the corrected profile.

    Sigma per point is the counting uncertainty sqrt(peak + shifted)
    (floored at one count), carried through the same drift factor applied
    to the data; when cfg.position_sigma_m > 0 the stated placement
    uncertainty is folded in through the local slope of the profile.
    """
    if len(rows) < 2:
        raise ValueError("need at least two rows to fit")
    positions = np.array([r.moving_detector_position_m for r in rows])
    corrected = np.array([r.corrected for r in rows])
    effective = np.array([r.effective for r in rows])
    sigma = np.sqrt(np.array(
        [r.n_coinc_peak + r.n_coinc_shifted for r in rows], dtype=float,
    ))
    sigma = np.maximum(sigma, 1.0)
    if cfg.drift_monitor == "fixed":
        # the correction rescales each point by mean(monitor)/monitor_i,
        # so the counting sigma scales with it and the monitor's own
        # Poisson noise enters multiplicatively
        n_b = np.array([r.n_b for r in rows], dtype=float)
        monitor = n_b - cfg.detector_fixed.dark_rate_hz \
            * np.array([r.duration_s for r in rows])
        if np.all(monitor > 0):
            sigma = sigma * (monitor.mean() / monitor)
            sigma = np.sqrt(sigma**2 + (corrected * np.sqrt(n_b) / monitor) ** 2)
    if cfg.position_sigma_m > 0 and len(rows) >= 3:
        slope = np.gradient(corrected, positions)
        sigma = np.sqrt(sigma**2 + (slope * cfg.position_sigma_m) ** 2)
    fractions = integrated_coincidence_prediction(
        positions,
        cfg.fixed_detector_position_m,
        cfg.geometry,
        cfg.optics,
        aperture_moving_m=cfg.detector_moving.aperture_diameter_m,
        aperture_fixed_m=cfg.detector_fixed.aperture_diameter_m,
        norm=norm,
    )
    durations = np.array([r.duration_s for r in rows])
    return chi2_normalize(corrected, sigma, fractions * durations)


# ---------------------------------------------------------------------------
# singles flatness


@dataclass(frozen=True)
class SinglesRatioReport:
    """Envelope-normalized singles ratio across the sweep, with a line fit."""

    positions_m: np.ndarray
    ratio: np.ndarray
    ratio_sigma: np.ndarray
    slope_per_m: float
    slope_sigma_per_m: float
    intercept: float
    fringe_amplitude_rel: float

    @property
    def slope_significance(self) -> float:
        return abs(self.slope_per_m) / self.slope_sigma_per_m


def singles_ratio_report(rows: list[ScanRow], cfg: ScanConfig) -> SinglesRatioReport:
    """Test the moving detector's singles for structure beyond the envelope.

    The raw singles follow the diffraction envelope as the detector moves
    and the source's slow drifts; dividing by the monitor channel and then
    by the predicted window fraction removes both, so the result should be
    a flat line.  A residual component at the coincidence-fringe frequency
    would signal second-order interference, which the marginal density
    forbids: the analytic projection is also reported.
    """
    if len(rows) < 3:
        raise ValueError("need at least three positions for a slope test")
    positions = np.array([r.moving_detector_position_m for r in rows])
    durations = np.array([r.duration_s for r in rows])
    n_a = np.array([r.n_a for r in rows], dtype=float)
    n_b = np.array([r.n_b for r in rows], dtype=float)
    sig_a = n_a - cfg.detector_moving.dark_rate_hz * durations
    sig_b = n_b - cfg.detector_fixed.dark_rate_hz * durations
    if np.any(sig_a <= 0) or np.any(sig_b <= 0):
        raise ValueError("dark-subtracted singles must be positive everywhere")

    sampler = FourthOrderSampler(cfg.geometry, cfg.optics)
    norm = sampler.norm()
    model = np.array([
        window_singles_fraction(cfg.moving_window(r.index), cfg.geometry,
                                cfg.optics, sampler=sampler, norm=norm)
        for r in rows
    ])
    model = model / model.mean()
    ratio = (sig_a / sig_b) / model
    # Poisson noise of the raw totals, levered by the dark subtraction:
    # sigma(n - dark T) = sqrt(n), relative to the subtracted signal
    ratio_sigma = ratio * np.sqrt(n_a / sig_a**2 + n_b / sig_b**2)

    w = 1.0 / ratio_sigma**2
    sw = w.sum()
    x0 = (w * positions).sum() / sw
    xc = positions - x0
    sxx = (w * xc * xc).sum()
    slope = (w * xc * ratio).sum() / sxx
    intercept = (w * ratio).sum() / sw - slope * x0
    slope_sigma = math.sqrt(1.0 / sxx)

    # analytic certificate: the marginal carries no fringe component, and
    # the statement is about the profile everywhere, so evaluate it over a
    # generous span (many fringe periods) rather than just the scanned strip
    theta = np.linspace(-0.15, 0.15, 8001)
    profile = marginal_singles(theta, "A", cfg.geometry, cfg.optics) \
        + marginal_singles(theta, "B", cfg.geometry, cfg.optics)
    fringe = fringe_projection(profile, np.sin(theta),
                               fringe_period_rad(cfg.geometry, cfg.optics))

    return SinglesRatioReport(
        positions_m=positions,
        ratio=ratio,
        ratio_sigma=ratio_sigma,
        slope_per_m=float(slope),
        slope_sigma_per_m=float(slope_sigma),
        intercept=float(intercept),
        fringe_amplitude_rel=float(fringe),
    )


# ---------------------------------------------------------------------------
# calibration and discriminator front doors


def run_calibration(bench: CalibrationBench, seed: int) -> CalibrationProfile:
    """Heralded-efficiency scan across the collection lens (thin wrapper)."""
    return efficiency_scan(bench, seed)


@dataclass(frozen=True)
class DiscriminatorConfig:
    """Same-side detector-pair comparison, fully specified."""

    position_a_m: float = -0.055
    position_b_m: float = -0.017
    control_position_a_m: float = -0.017
    control_position_b_m: float = 0.017
    acceptance_halfwidth_m: float = 3e-3
    pair_rate_hz: float = 200.0
    duration_s: float = 35 * 1800.0
    n_traj: int = 2000
    n_steps: int = 400
    geometry: SlitGeometry = field(default_factory=SlitGeometry)
    optics: OpticalConfig = field(default_factory=OpticalConfig)
    detector_a: DetectorModel = field(
        default_factory=lambda: DetectorModel("a", 0.400, 700.0)
    )
    detector_b: DetectorModel = field(
        default_factory=lambda: DetectorModel("b", 0.275, 35.0)
    )
    tac: TacScaConfig = field(default_factory=TacScaConfig)
    seed: int = 0
    chunk_events: float = 5e6

    def __post_init__(self):
        if self.acceptance_halfwidth_m <= 0:
            raise ValueError("acceptance half-width must be positive")
        if self.pair_rate_hz <= 0 or self.duration_s <= 0:
            raise ValueError("rate and duration must be positive")
        if self.n_traj < 1 or self.n_steps < 1:
            raise ValueError("trajectory count and steps must be >= 1")


@dataclass(frozen=True)
class DiscriminatorRunReport:
    """Counted (not just predicted) outcome of one discriminator placement."""

    position_a_m: float
    position_b_m: float
    acceptance_halfwidth_m: float
    duration_s: float
    discriminating: bool
    sqm_peak: int
    sqm_shifted: int
    sqm_effective: float
    sqm_sigma: float
    sqm_expected: float
    dbb_count: int
    n_traj: int

    @property
    def significance(self) -> float:
        return self.sqm_effective / max(self.sqm_sigma, 1.0)

    def summary(self) -> str:
        kind = "same-side" if self.discriminating else "control"
        return (
            f"{kind} placement ({self.position_a_m * 100:+.1f} cm, "
            f"{self.position_b_m * 100:+.1f} cm): counting chain "
            f"{self.sqm_effective:.1f} +- {self.sqm_sigma:.1f} effective "
            f"coincidences ({self.significance:.1f} sigma, expected "
            f"{self.sqm_expected:.1f}); paired trajectories predict "
            f"{self.dbb_count} of {self.n_traj}"
        )


def _counting_chain_windows(
    cfg: DiscriminatorConfig, y_a: float, y_b: float
) -> tuple[AngularWindow, AngularWindow]:
    L = cfg.geometry.screen_distance_m
    hw = cfg.acceptance_halfwidth_m
    return (
        AngularWindow(math.atan2(y_a - hw, L), math.atan2(y_a + hw, L)),
        AngularWindow(math.atan2(y_b - hw, L), math.atan2(y_b + hw, L)),
    )


def _chain_coincidences(
    cfg: DiscriminatorConfig,
    y_a: float,
    y_b: float,
    sampler: FourthOrderSampler,
    seed_seq: np.random.SeedSequence,
) -> tuple[int, int]:
    """Run the full generation/detection/counting chain, in time blocks.

    Long acquisitions are split into independent blocks of at most
    `chunk_events` expected pairs; the coincidence window (tens of ns) is
    so much shorter than a block that pairs never straddle a boundary.
    """
    win_a, win_b = _counting_chain_windows(cfg, y_a, y_b)
    block_s = max(cfg.chunk_events / cfg.pair_rate_hz, 1e-6)
    n_blocks = max(1, math.ceil(cfg.duration_s / block_s))
    block_s = cfg.duration_s / n_blocks
    peak = shifted = 0
    for child in seed_seq.spawn(n_blocks):
        s_gen, s_a, s_b = (int(x) for x in child.generate_state(3, dtype=np.uint64))
        gain = GainParam(pair_rate_hz=cfg.pair_rate_hz, duration_s=block_s)
        stream = generate_pairs(gain, cfg.geometry, cfg.optics, s_gen,
                                sampler=sampler)
        clicks_a = detect(stream, "both", cfg.detector_a, win_a, s_a)
        clicks_b = detect(stream, "both", cfg.detector_b, win_b, s_b)
        # start on the sparser channel: the window around each start click
        # is what the converter actually digitizes
        start, stop = (clicks_a, clicks_b) if len(clicks_a) <= len(clicks_b) \
            else (clicks_b, clicks_a)
        peak += sca_count(tac_histogram(start, stop, cfg.tac), cfg.tac)
        shifted += sca_count(
            tac_histogram(start, stop, cfg.tac,
                          extra_stop_delay_s=cfg.tac.background_shift_s),
            cfg.tac,
        )
    return peak, shifted


def run_discriminator(
    cfg: DiscriminatorConfig,
    *,
    ensemble=None,
    evolution=None,
    placements: tuple[str, ...] = ("primary", "control"),
) -> list[DiscriminatorRunReport]:
    """Counting-chain versus paired-trajectory comparison at each placement.

    "primary" puts both detectors on the same side of the symmetry axis,
    where symmetric-start paired trajectories never produce a coincidence;
    "control" straddles the axis, where both models count.  The quantum
    side is a full Monte Carlo chain (source, detection, timing converter,
    background subtraction), not just the analytic window integral, so the
    two predictions come from genuinely independent routes.
    """
    from .bohm import (
        GridSpec,
        ScaledFarField,
        build_twoslit_field,
        default_t_star,
        ensemble_run,
        half_plane_discriminator,
    )

    if evolution is None:
        grid = GridSpec()
        field0 = build_twoslit_field(cfg.geometry, cfg.optics, grid)
        evolution = ScaledFarField(field0, default_t_star(grid))
    if ensemble is None:
        t_screen = cfg.geometry.screen_distance_m / C_LIGHT
        tau_final = evolution.tau_of(t_screen)
        ensemble = ensemble_run(
            evolution, cfg.n_traj, sampling="mirror", seed=cfg.seed,
            t_final=tau_final, n_steps=cfg.n_steps,
        )

    sampler = FourthOrderSampler(cfg.geometry, cfg.optics)
    master = np.random.SeedSequence(cfg.seed)
    chain_seeds = master.spawn(len(placements))

    reports = []
    for name, chain_seed in zip(placements, chain_seeds):
        if name == "primary":
            y_a, y_b = cfg.position_a_m, cfg.position_b_m
        elif name == "control":
            y_a, y_b = cfg.control_position_a_m, cfg.control_position_b_m
        else:
            raise ValueError(f"unknown placement {name!r}")
        analytic = half_plane_discriminator(
            cfg.geometry, cfg.optics, (y_a, y_b), cfg.acceptance_halfwidth_m,
            ensemble=ensemble, evolution=evolution,
            pair_rate_hz=cfg.pair_rate_hz, duration_s=cfg.duration_s,
            efficiency_a=cfg.detector_a.quantum_efficiency,
            efficiency_b=cfg.detector_b.quantum_efficiency,
        )
        peak, shifted = _chain_coincidences(cfg, y_a, y_b, sampler, chain_seed)
        effective = float(peak - shifted)
        sigma = math.sqrt(peak + shifted)
        reports.append(DiscriminatorRunReport(
            position_a_m=y_a,
            position_b_m=y_b,
            acceptance_halfwidth_m=cfg.acceptance_halfwidth_m,
            duration_s=cfg.duration_s,
            discriminating=analytic.discriminating,
            sqm_peak=peak,
            sqm_shifted=shifted,
            sqm_effective=effective,
            sqm_sigma=sigma,
            sqm_expected=analytic.sqm_rate_prediction,
            dbb_count=analytic.dbb_count_prediction,
            n_traj=analytic.n_traj,
        ))
    return reports


# ---------------------------------------------------------------------------
# Settings -> run configuration builders


def build_scan_config(s: Settings) -> ScanConfig:
    """Assemble a sweep configuration from flat key/value settings."""
    drift_times = s.get_float_list("scan.drift_times_s")
    drift_factors = s.get_float_list("scan.drift_factors")
    try:
        return ScanConfig(
            fixed_detector_position_m=s.get_float("scan.fixed_position_m", -0.055),
            start_position_m=s.get_float("scan.start_m", -0.038),
            step_m=s.get_float("scan.step_m", 3.51e-3),
            n_steps=s.get_int("scan.n_steps", 13),
            acquisition_s=s.get_float("scan.acquisition_s", 600.0),
            geometry=build_geometry(s),
            optics=build_optics(s),
            gain=build_gain(s),
            detector_moving=build_detector(s, "a"),
            detector_fixed=build_detector(s, "b"),
            tac=build_tac(s),
            rotation_arm_m=s.get_float("scan.rotation_arm_m", 0.5),
            start_role=s.get_str("scan.start_role", "auto"),
            drift_monitor=s.get_str("scan.drift_monitor", "fixed"),
            position_sigma_m=s.get_float("scan.position_sigma_m", 0.0),
            drift_times_s=drift_times,
            drift_factors=drift_factors,
            seed=s.get_int("scan.seed", 0),
            output_path=s.get_str("scan.output"),
        )
    except ValueError as exc:
        from .config import ConfigError

        raise ConfigError(f"invalid scan configuration: {exc}") from exc


def build_bench(s: Settings) -> CalibrationBench:
    """Assemble the no-slit calibration bench from flat settings."""
    try:
        return CalibrationBench(
            pair_rate_hz=s.get_float("calibration.pair_rate_hz", 2e4),
            acquisition_s=s.get_float("calibration.acquisition_s", 5.0),
            trigger=build_detector(s, "b"),
            scanned=build_detector(s, "a"),
            tac=build_tac(s),
            background_rate_hz=s.get_float("calibration.background_hz", 200.0),
            residual_pair_rate_hz=s.get_float("calibration.residual_pair_hz", 0.0),
            beam_sigma_m=s.get_float("calibration.beam_sigma_m", 0.4e-3),
            step_m=s.get_float("calibration.step_m", 850e-6),
            n_positions=s.get_int("calibration.n_positions", 15),
            signal_transmittance=s.get_float("calibration.transmittance", 1.0),
        )
    except ValueError as exc:
        from .config import ConfigError

        raise ConfigError(f"invalid calibration configuration: {exc}") from exc


def build_discriminator_config(s: Settings) -> DiscriminatorConfig:
    """Assemble the discriminator comparison from flat settings."""
    gain = build_gain(s)
    try:
        return DiscriminatorConfig(
            position_a_m=s.get_float("discriminator.position_a_m", -0.055),
            position_b_m=s.get_float("discriminator.position_b_m", -0.017),
            control_position_a_m=s.get_float(
                "discriminator.control_a_m", -0.017),
            control_position_b_m=s.get_float(
                "discriminator.control_b_m", 0.017),
            acceptance_halfwidth_m=s.get_float(
                "discriminator.halfwidth_m", 3e-3),
            pair_rate_hz=gain.pair_rate_hz,
            duration_s=s.get_float("discriminator.duration_s", 35 * 1800.0),
            n_traj=s.get_int("discriminator.n_traj", 2000),
            n_steps=s.get_int("discriminator.n_steps", 400),
            geometry=build_geometry(s),
            optics=build_optics(s),
            detector_a=build_detector(s, "a"),
            detector_b=build_detector(s, "b"),
            tac=build_tac(s),
            seed=s.get_int("discriminator.seed", 0),
        )
    except ValueError as exc:
        from .config import ConfigError

        raise ConfigError(f"invalid discriminator configuration: {exc}") from exc
