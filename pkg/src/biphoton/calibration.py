"""Absolute detector calibration from coincidence counting.

A pair source lets one detector herald photons at the other: the ratio of
coincidences to trigger singles is the tested detector's efficiency, with
no reference standard.  Corrections: accidental coincidences (shifted
window), trigger background (pump-suppressed acquisition), signal-path
transmission, delay-line pile-up (alpha) and dead time (gamma).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .detection import DetectorModel, TacScaConfig, detect, sca_count, tac_histogram
from .optics import OpticalConfig, SlitGeometry
from .source import GainParam, PairStream, generate_pairs


@dataclass(frozen=True)
class CalibrationInputs:
    """Measured counts plus the ingredients of the rate corrections.

    n_c / n_cfp are the coincidence counts in the peak and shifted windows;
    n_t / n_l the trigger singles with the pump on and suppressed.  The
    signal channel (the detector under test) contributes its optical
    transmission, its measured rate, the delay-line transit and its dead
    time, from which the alpha and gamma corrections follow.
    """

    n_c: float
    n_cfp: float
    n_t: float
    n_l: float
    transmittance_signal: float = 1.0
    n_signal_rate_hz: float = 0.0
    t_delay_s: float = 0.0
    dead_time_signal_s: float = 0.0
    duration_s: float = 1.0

    def __post_init__(self):
        if min(self.n_c, self.n_cfp, self.n_t, self.n_l) < 0:
            raise ValueError("counts must be >= 0")
        if not (0.0 < self.transmittance_signal <= 1.0):
            raise ValueError("signal transmission must lie in (0, 1]")
        if self.n_signal_rate_hz < 0:
            raise ValueError("signal rate must be >= 0")
        if self.duration_s <= 0:
            raise ValueError("duration must be positive")
        # n_c - n_cfp may fluctuate <= 0 when there is no real signal; the
        # estimate is then ~0 with a finite uncertainty.  The trigger channel
        # has no such excuse.
        if self.n_t - self.n_l <= 0:
            raise ValueError("background exceeds trigger counts; nothing to calibrate")


@dataclass(frozen=True)
class CalibrationReport:
    """Efficiency estimate, its corrections and counting uncertainty."""

    eta_basic: float
    alpha: float
    gamma: float
    eta_corrected: float
    statistical_uncertainty: float
    inputs: CalibrationInputs


def klyshko_basic(n_c: float, n_trigger: float) -> float:
    """Uncorrected heralded efficiency, coincidences over trigger singles."""
    if n_trigger <= 0:
        raise ValueError("trigger counts must be positive")
    if n_c < 0:
        raise ValueError("coincidence counts must be >= 0")
    eta = n_c / n_trigger
    if eta > 1.0:
        warnings.warn(
            f"basic efficiency {eta:.3f} exceeds 1; inputs are inconsistent",
            UserWarning,
            stacklevel=2,
        )
    return eta


def alpha_correction(n_signal_rate_hz: float, t_delay_s: float) -> float:
    """Delay-line pile-up factor 1 - rate * t_delay."""
    if n_signal_rate_hz < 0 or t_delay_s < 0:
        raise ValueError("rate and delay must be >= 0")
    alpha = 1.0 - n_signal_rate_hz * t_delay_s
    if alpha <= 0.0:
        raise ValueError("rate * t_delay >= 1; correction formula out of range")
    return alpha


def gamma_correction(n_signal_rate_hz: float, dead_time_s: float) -> float:
    """Dead-time loss factor 1 - rate * tau."""
    if n_signal_rate_hz < 0 or dead_time_s < 0:
        raise ValueError("rate and dead time must be >= 0")
    gamma = 1.0 - n_signal_rate_hz * dead_time_s
    if gamma <= 0.0:
        raise ValueError("rate * dead_time >= 1; correction formula out of range")
    return gamma


def full_efficiency(inputs: CalibrationInputs) -> CalibrationReport:
    """Corrected heralded efficiency.

    eta = (n_c - n_cfp) / (n_t - n_l) / (T_signal * alpha * gamma); the
    uncertainty propagates Poisson errors of the four counts (corrections
    treated as exact).  With zero counts in both coincidence windows the
    coincidence variance is floored at one count (least-count sensitivity).
    """
    alpha = alpha_correction(inputs.n_signal_rate_hz, inputs.t_delay_s)
    gamma = gamma_correction(inputs.n_signal_rate_hz, inputs.dead_time_signal_s)
    numer = inputs.n_c - inputs.n_cfp
    denom = inputs.n_t - inputs.n_l
    eta_basic = klyshko_basic(inputs.n_c, inputs.n_t)
    scale = 1.0 / (denom * inputs.transmittance_signal * alpha * gamma)
    eta = numer * scale
    # absolute propagation stays finite when the net signal fluctuates to 0
    var_coinc = max(inputs.n_c + inputs.n_cfp, 1.0)
    var = scale**2 * var_coinc + eta**2 * (inputs.n_t + inputs.n_l) / denom**2
    return CalibrationReport(
        eta_basic=eta_basic,
        alpha=alpha,
        gamma=gamma,
        eta_corrected=eta,
        statistical_uncertainty=math.sqrt(var),
        inputs=inputs,
    )


def lens_coverage(offset_m: float, lens_diameter_m: float, beam_sigma_m: float) -> float:
    """Fraction of a Gaussian beam spot captured by a displaced lens."""
    half = 0.5 * lens_diameter_m
    if beam_sigma_m <= 0:
        return 1.0 if abs(offset_m) <= half else 0.0
    a = (half - offset_m) / (math.sqrt(2.0) * beam_sigma_m)
    b = (-half - offset_m) / (math.sqrt(2.0) * beam_sigma_m)
    return 0.5 * (math.erf(a) - math.erf(b))


@dataclass(frozen=True)
class CalibrationBench:
    """No-slit coincidence bench for scanning one detector across its lens."""

    pair_rate_hz: float = 2e4
    acquisition_s: float = 5.0
    trigger: DetectorModel = field(
        default_factory=lambda: DetectorModel(
            detector_id="b", quantum_efficiency=0.275, dark_rate_hz=35.0
        )
    )
    scanned: DetectorModel = field(
        default_factory=lambda: DetectorModel(detector_id="a", quantum_efficiency=0.400)
    )
    tac: TacScaConfig = field(default_factory=TacScaConfig)
    background_rate_hz: float = 200.0
    residual_pair_rate_hz: float = 0.0
    beam_sigma_m: float = 0.4e-3
    step_m: float = 850e-6
    n_positions: int = 15
    signal_transmittance: float = 1.0

    def __post_init__(self):
        if self.n_positions < 3:
            raise ValueError("a scan needs at least 3 positions")
        if self.step_m <= 0:
            raise ValueError("step must be positive")

    def positions(self) -> np.ndarray:
        span = (self.n_positions - 1) * self.step_m
        return np.linspace(-0.5 * span, 0.5 * span, self.n_positions)


@dataclass(frozen=True)
class CalibrationProfile:
    """Efficiency versus scanned-detector position."""

    positions_m: np.ndarray
    reports: list[CalibrationReport]

    @property
    def eta(self) -> np.ndarray:
        return np.array([r.eta_corrected for r in self.reports])

    @property
    def sigma(self) -> np.ndarray:
        return np.array([r.statistical_uncertainty for r in self.reports])

    @property
    def argmax(self) -> int:
        return int(np.argmax(self.eta))

    @property
    def argmax_position_m(self) -> float:
        return float(self.positions_m[self.argmax])


def _bench_stream(bench: CalibrationBench, pair_rate_hz: float, seed: int) -> PairStream:
    gain = GainParam(pair_rate_hz=pair_rate_hz, duration_s=bench.acquisition_s)
    # geometry/optics are irrelevant on the bench (no slits, acceptance=None)
    return generate_pairs(gain, SlitGeometry(), OpticalConfig(), seed, angles="aimed")


def _one_position(
    bench: CalibrationBench, coverage: float, seed: int
) -> CalibrationInputs:
    """Simulate peak, shifted and pump-off acquisitions at one lens offset."""
    sids = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(8)]
    t_acq = bench.acquisition_s

    # background fluorescence enters each detector like an extra dark channel
    trig_model = replace(
        bench.trigger, dark_rate_hz=bench.trigger.dark_rate_hz + bench.background_rate_hz
    )
    scan_model = replace(
        bench.scanned,
        dark_rate_hz=bench.scanned.dark_rate_hz + bench.background_rate_hz,
        quantum_efficiency=bench.scanned.quantum_efficiency * coverage,
        transmittance=bench.signal_transmittance,
    )

    stream = _bench_stream(bench, bench.pair_rate_hz, sids[0])
    trig = detect(stream, "B", trig_model, None, sids[1])
    scan = detect(stream, "A", scan_model, None, sids[2])
    n_t = len(trig)
    n_c = sca_count(tac_histogram(trig, scan, bench.tac), bench.tac)

    stream_bg = _bench_stream(bench, bench.pair_rate_hz, sids[3])
    trig_bg = detect(stream_bg, "B", trig_model, None, sids[4])
    scan_bg = detect(stream_bg, "A", scan_model, None, sids[5])
    hist_bg = tac_histogram(
        trig_bg, scan_bg, bench.tac, extra_stop_delay_s=bench.tac.background_shift_s
    )
    n_cfp = sca_count(hist_bg, bench.tac)

    # pump suppressed: any residual pairs plus darks and fluorescence
    if bench.residual_pair_rate_hz > 0:
        stream_l = _bench_stream(bench, bench.residual_pair_rate_hz, sids[6])
        n_l = len(detect(stream_l, "B", trig_model, None, sids[7]))
    else:
        rng_l = np.random.default_rng(sids[7])
        n_l = int(rng_l.poisson(trig_model.dark_rate_hz * t_acq))

    return CalibrationInputs(
        n_c=n_c,
        n_cfp=n_cfp,
        n_t=n_t,
        n_l=n_l,
        transmittance_signal=bench.signal_transmittance,
        n_signal_rate_hz=len(scan) / t_acq,
        t_delay_s=bench.tac.stop_delay_s,
        dead_time_signal_s=bench.scanned.dead_time_s,
        duration_s=t_acq,
    )


def efficiency_scan(bench: CalibrationBench, seed: int) -> CalibrationProfile:
    """Translate the scanned detector across its lens in fixed steps.

    Runs the full counting chain at each position against the lens-edge
    acceptance profile (Gaussian beam spot clipped by the lens disc).  The
    recovered efficiency tracks lens coverage: full at the center, falling
    to zero at the edges, with support matching the lens diameter.
    """
    positions = bench.positions()
    seeds = np.random.SeedSequence(seed).spawn(len(positions))
    reports: list[CalibrationReport] = []
    for pos, sub in zip(positions, seeds):
        coverage = lens_coverage(pos, bench.scanned.lens_diameter_m, bench.beam_sigma_m)
        inputs = _one_position(bench, coverage, int(sub.generate_state(1)[0]))
        reports.append(full_efficiency(inputs))
    return CalibrationProfile(positions_m=positions, reports=reports)


def profile_fwhm(positions: np.ndarray, values: np.ndarray) -> float:
    """Full width at half maximum by linear interpolation of the crossings."""
    v = np.asarray(values, dtype=float)
    p = np.asarray(positions, dtype=float)
    if len(v) < 3:
        raise ValueError("need at least 3 points for a width estimate")
    half = 0.5 * v.max()
    above = v >= half
    if not above.any():
        raise ValueError("profile never reaches half maximum")
    idx = np.flatnonzero(above)
    i_lo, i_hi = idx[0], idx[-1]

    def crossing(i_out, i_in):
        if i_out < 0 or i_out >= len(v):
            return p[i_in]
        f = (half - v[i_out]) / (v[i_in] - v[i_out])
        return p[i_out] + f * (p[i_in] - p[i_out])

    left = crossing(i_lo - 1, i_lo)
    right = crossing(i_hi + 1, i_hi)
    return float(right - left)
