"""Counting electronics: detectors, time-to-amplitude conversion, windows.

Models the photon-counting chain: avalanche photodiode modules with quantum
efficiency, dark counts and non-paralyzable dead time; a time-to-amplitude
converter (TAC) started by one detector and stopped by the other, read out
through a multichannel analyzer; and a single-channel analyzer (SCA) window
that selects the coincidence peak.  Background (accidental) coincidences
are measured in a second acquisition with the stop line delayed so the true
peak leaves the SCA window.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .source import PairStream


class SaturationWarning(UserWarning):
    """Input rate at or beyond the detector's maximum counting rate."""


@dataclass(frozen=True)
class DetectorModel:
    """One photon-counting module plus its collection optic."""

    detector_id: str = "a"
    quantum_efficiency: float = 0.4
    dark_rate_hz: float = 700.0
    dead_time_s: float = 50e-9
    max_rate_hz: float = 1e7
    lens_diameter_m: float = 6e-3
    iris_diameter_m: float | None = None
    transmittance: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.quantum_efficiency <= 1.0):
            raise ValueError("quantum efficiency must lie in [0, 1]")
        if not (0.0 <= self.transmittance <= 1.0):
            raise ValueError("transmittance must lie in [0, 1]")
        if self.dark_rate_hz < 0 or self.dead_time_s < 0:
            raise ValueError("dark rate and dead time must be >= 0")
        if self.max_rate_hz <= 0:
            raise ValueError("max rate must be positive")
        if self.iris_diameter_m is not None and not (
            0 < self.iris_diameter_m <= self.lens_diameter_m
        ):
            raise ValueError("iris must be smaller than the lens and positive")

    @property
    def aperture_diameter_m(self) -> float:
        """Limiting aperture: the iris when mounted, else the lens."""
        return self.iris_diameter_m if self.iris_diameter_m is not None else self.lens_diameter_m


@dataclass(frozen=True)
class AngularWindow:
    """Half-open-free angular acceptance [lo, hi] on the screen."""

    lo_rad: float
    hi_rad: float

    def __post_init__(self):
        if not (self.hi_rad > self.lo_rad):
            raise ValueError("window upper edge must exceed lower edge")

    def contains(self, theta) -> np.ndarray:
        t = np.asarray(theta)
        return (t >= self.lo_rad) & (t <= self.hi_rad)

    @property
    def width_rad(self) -> float:
        return self.hi_rad - self.lo_rad


def angular_window(
    position_m: float, screen_distance_m: float, aperture_diameter_m: float
) -> AngularWindow:
    """Acceptance of an aperture centered at a screen position."""
    half = 0.5 * aperture_diameter_m
    lo = math.atan2(position_m - half, screen_distance_m)
    hi = math.atan2(position_m + half, screen_distance_m)
    return AngularWindow(lo, hi)


@dataclass(frozen=True)
class TacScaConfig:
    """TAC ramp, MCA binning and SCA window settings (times in seconds)."""

    full_window_s: float = 20e-9
    mca_channels: int = 8196
    sca_window_s: float = 5e-9
    sca_center_s: float = 2.5e-9
    stop_delay_s: float = 2.5e-9
    background_shift_s: float = 16e-9

    def __post_init__(self):
        if self.full_window_s <= 0:
            raise ValueError("TAC full window must be positive")
        if self.mca_channels < 1:
            raise ValueError("MCA needs at least one channel")
        if not (0 < self.sca_window_s <= self.full_window_s):
            raise ValueError("SCA window must be positive and fit the TAC range")
        lo = self.sca_center_s - 0.5 * self.sca_window_s
        hi = self.sca_center_s + 0.5 * self.sca_window_s
        if lo < -1e-15 or hi > self.full_window_s + 1e-15:
            raise ValueError("SCA window must lie inside [0, full_window]")
        if self.stop_delay_s < 0 or self.background_shift_s < 0:
            raise ValueError("delays must be >= 0")
        if self.stop_delay_s + self.background_shift_s > self.full_window_s:
            raise ValueError(
                "background shift must keep the delayed peak on the TAC scale: "
                "stop_delay + background_shift <= full_window"
            )

    @property
    def channel_width_s(self) -> float:
        return self.full_window_s / self.mca_channels

    def channel_of(self, delta_t_s: float) -> int:
        return int(delta_t_s / self.full_window_s * self.mca_channels)

    def sca_channel_span(self) -> tuple[int, int]:
        """[lo, hi) channel range of the SCA window."""
        width_ch = int(round(self.sca_window_s / self.full_window_s * self.mca_channels))
        center_ch = self.sca_center_s / self.full_window_s * self.mca_channels
        lo = int(round(center_ch - 0.5 * width_ch))
        return lo, lo + width_ch


@dataclass
class ClickStream:
    """Timestamps produced by one detector over one acquisition."""

    click_times_s: np.ndarray
    detector_id: str
    duration_s: float
    saturated: bool = False

    def __post_init__(self):
        if len(self.click_times_s) and np.any(np.diff(self.click_times_s) < 0):
            raise ValueError("click times must be sorted")

    def __len__(self) -> int:
        return len(self.click_times_s)

    @property
    def rate_hz(self) -> float:
        return len(self.click_times_s) / self.duration_s if self.duration_s > 0 else 0.0


@dataclass(frozen=True)
class CountReport:
    """Single-position counting summary: singles plus peak/background windows."""

    n_start: int
    n_stop: int
    n_coinc_peak: int
    n_coinc_shifted: int
    duration_s: float

    def __post_init__(self):
        if min(self.n_start, self.n_stop, self.n_coinc_peak, self.n_coinc_shifted) < 0:
            raise ValueError("counts must be >= 0")
        if self.duration_s <= 0:
            raise ValueError("duration must be positive")

    @property
    def effective(self) -> float:
        return float(self.n_coinc_peak - self.n_coinc_shifted)


def _dead_time_filter(times: np.ndarray, dead_time_s: float) -> np.ndarray:
    """Non-paralyzable dead time: drop clicks within tau of the last kept one.

    A click whose predecessor is at least tau away can never be shadowed, so
    only runs of closely spaced clicks need the sequential scan.
    """
    tau = dead_time_s
    n = len(times)
    if tau <= 0.0 or n == 0:
        return times
    clear = np.empty(n, dtype=bool)
    clear[0] = True
    np.greater_equal(np.diff(times), tau, out=clear[1:])
    if clear.all():
        return times
    keep = clear.copy()
    tl = times.tolist()
    run_starts = np.flatnonzero(~clear)
    i = 0
    while i < len(run_starts):
        j = run_starts[i]
        last = tl[j - 1]  # predecessor is kept: its own gap is clear
        while j < n and not clear[j]:
            if tl[j] - last >= tau:
                keep[j] = True
                last = tl[j]
            else:
                keep[j] = False
            j += 1
        while i < len(run_starts) and run_starts[i] < j:
            i += 1
    return times[keep]


def detect(
    stream: PairStream,
    arm: str,
    model: DetectorModel,
    acceptance: AngularWindow | None,
    seed: int,
) -> ClickStream:
    """One detector watching the pair stream.

    arm selects what the detector can see.  "A"/"B" watch one labeled beam,
    as on the calibration bench where the two beams travel separate paths.
    "both" models a detector on the screen behind the double slit: both
    photons of a pair diffract over the whole screen, so either one can land
    in the acceptance window (a pair with both photons inside contributes
    two candidate clicks).  Each candidate photon is kept with probability
    efficiency * transmittance when its angle falls inside the acceptance
    (None accepts everything).  Dark counts are added as an independent
    Poisson stream, then the non-paralyzable dead time is applied to the
    merged record.
    """
    arm_key = str(arm).strip().lower()
    if arm_key in ("a", "b"):
        angle_sets = [stream.angle_signal_rad if arm_key == "a"
                      else stream.angle_idler_rad]
    elif arm_key == "both":
        angle_sets = [stream.angle_signal_rad, stream.angle_idler_rad]
    else:
        raise ValueError(f"arm must be 'A', 'B' or 'both', got {arm!r}")
    rng = np.random.default_rng(seed)
    p_keep = model.quantum_efficiency * model.transmittance
    kept = []
    for angles in angle_sets:
        times = stream.times_s
        if acceptance is not None:
            times = times[acceptance.contains(angles)]
        kept.append(times[rng.random(len(times)) < p_keep])
    times = kept[0] if len(kept) == 1 else np.concatenate(kept)
    duration = stream.duration_s
    n_dark = rng.poisson(model.dark_rate_hz * duration)
    dark_times = rng.uniform(0.0, duration, size=n_dark)
    merged = np.sort(np.concatenate([times, dark_times]))
    saturated = False
    if duration > 0 and len(merged) / duration > model.max_rate_hz:
        saturated = True
        warnings.warn(
            f"detector {model.detector_id}: input rate "
            f"{len(merged) / duration:.3g}/s exceeds max {model.max_rate_hz:.3g}/s",
            SaturationWarning,
            stacklevel=2,
        )
    kept = _dead_time_filter(merged, model.dead_time_s)
    return ClickStream(
        click_times_s=kept,
        detector_id=model.detector_id,
        duration_s=duration,
        saturated=saturated,
    )


def tac_histogram(
    start: ClickStream, stop: ClickStream, cfg: TacScaConfig,
    extra_stop_delay_s: float = 0.0,
) -> np.ndarray:
    """MCA histogram of start->stop delays.

    Semantics: a start opens a ramp unless one is already open (such starts
    are lost, TAC busy); the first delayed stop inside the full window closes
    the ramp and increments its channel; with no stop the ramp times out at
    the full window.  Total histogram content never exceeds the number of
    starts.

    extra_stop_delay_s models the removable delay line used for background
    acquisitions: it pushes the true-coincidence peak out of the SCA window
    while accidentals keep filling it uniformly.
    """
    stops = stop.click_times_s + cfg.stop_delay_s + extra_stop_delay_s
    starts = start.click_times_s
    full = cfg.full_window_s
    n = len(starts)
    if n == 0:
        return np.zeros(cfg.mca_channels, dtype=np.int64)

    # First stop at or after each start; ramps close at that stop or time out.
    idx = np.searchsorted(stops, starts, side="left")
    has_stop = idx < len(stops)
    delta = np.full(n, np.inf)
    delta[has_stop] = stops[idx[has_stop]] - starts[has_stop]
    stopped = delta < full
    close = np.where(stopped, starts + delta, starts + full)

    # A start can only find the TAC busy when the previous start is closer
    # than the full ramp; resolve those rare clusters sequentially.
    clear = np.empty(n, dtype=bool)
    clear[0] = True
    np.greater_equal(np.diff(starts), full, out=clear[1:])
    keep = clear.copy()
    if not clear.all():
        starts_l = starts.tolist()
        close_l = close.tolist()
        run_starts = np.flatnonzero(~clear)
        i = 0
        while i < len(run_starts):
            j = run_starts[i]
            busy_until = close_l[j - 1]  # predecessor of a run head is kept
            while j < n and not clear[j]:
                if starts_l[j] >= busy_until:
                    keep[j] = True
                    busy_until = close_l[j]
                else:
                    keep[j] = False
                j += 1
            while i < len(run_starts) and run_starts[i] < j:
                i += 1

    counted = keep & stopped
    channels = (delta[counted] / full * cfg.mca_channels).astype(np.int64)
    np.clip(channels, 0, cfg.mca_channels - 1, out=channels)
    return np.bincount(channels, minlength=cfg.mca_channels).astype(np.int64)


def sca_count(hist: np.ndarray, cfg: TacScaConfig, center_channel: int | None = None) -> int:
    """Counts inside the SCA window of an MCA histogram.

    center_channel overrides the configured window center when given.
    """
    lo, hi = cfg.sca_channel_span()
    if center_channel is not None:
        width = hi - lo
        lo = int(center_channel - width // 2)
        hi = lo + width
    if lo < 0 or hi > len(hist):
        raise ValueError("SCA window does not fit inside the histogram")
    return int(np.sum(hist[lo:hi]))


def accidental_estimate(rate_a_hz: float, rate_b_hz: float, window_s: float) -> float:
    """Expected accidental coincidence rate N_a * N_b * t (per second)."""
    if rate_a_hz < 0 or rate_b_hz < 0 or window_s < 0:
        raise ValueError("rates and window must be >= 0")
    return rate_a_hz * rate_b_hz * window_s


def effective_coincidences(report: CountReport) -> tuple[float, float]:
    """Background-subtracted coincidences and their Poisson uncertainty.

    Peak and shifted-window acquisitions of the report share one duration by
    construction; sigma = sqrt(N_peak + N_shifted).
    """
    value = report.effective
    sigma = math.sqrt(report.n_coinc_peak + report.n_coinc_shifted)
    return value, sigma


def drift_correct(
    effective_coinc: np.ndarray, effective_singles: np.ndarray
) -> np.ndarray:
    """Rescale a scan's coincidences against one channel's singles drift.

    corrected_i = (C_i / A_i) * mean_j(A_j), with A the background-subtracted
    singles of the monitor detector.  Invariant under a common rate factor.
    """
    coinc = np.asarray(effective_coinc, dtype=float)
    singles = np.asarray(effective_singles, dtype=float)
    if coinc.shape != singles.shape:
        raise ValueError("coincidences and singles must have matching shapes")
    if np.any(singles <= 0):
        raise ValueError("monitor singles must be positive for drift correction")
    return coinc / singles * singles.mean()


def coincidence_counts(
    start: ClickStream,
    stop: ClickStream,
    cfg: TacScaConfig,
) -> int:
    """SCA counts of one acquisition (histogram + window in one step)."""
    return sca_count(tac_histogram(start, stop, cfg), cfg)
