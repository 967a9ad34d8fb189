"""Down-conversion pair source: statistics, emission times, screen angles.

A pump photon splits into a simultaneous signal/idler pair.  Per coherence
cell the pair number is thermal (Bose-Einstein); across many cells the
emission times form a (bunched) Poisson stream.  Energy conservation ties
the two wavelengths to the pump: 1/l_s + 1/l_i = 1/l_pump.

Pair angle convention: each generated event carries the pair's two screen
angles.  In the default "diffracted" mode they are drawn jointly from the
fourth-order density C(theta1, theta2), so detector-pair statistics carry
the coincidence fringes while single-channel marginals stay fringe-free.
The two slots are stored in sampled order; C is exchange symmetric, so the
slots are statistically interchangeable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .optics import (
    C_LIGHT,
    OpticalConfig,
    SlitGeometry,
    conjugate_wavelength,
    path_length,
    sinc_amplitude,
)

# Default coherence time follows the 4 nm interference filter ahead of the
# counters: tau_c ~ lambda^2 / (c * d_lambda).
DEFAULT_FILTER_FWHM_M = 4e-9

PARAMETRIC_GAIN_CAP = 0.5

ENVELOPE_ZEROS_KEPT = 5  # angular domain truncated at this many sinc zeros


def coherence_time_from_filter(wavelength_m: float, fwhm_m: float = DEFAULT_FILTER_FWHM_M) -> float:
    """Coherence time of filtered down-conversion light, lambda^2/(c * dl)."""
    if fwhm_m <= 0:
        raise ValueError("filter FWHM must be positive to define a coherence time")
    return wavelength_m**2 / (C_LIGHT * fwhm_m)


@dataclass(frozen=True)
class GainParam:
    """Interaction strength and desk-scale operating point of the source.

    x is the dimensionless gain g|v0|t of the two-mode squeezing interaction;
    the analytic moments below are exact in x.  pair_rate_hz and duration_s
    set the simulated collected-pair stream (collection and filtering losses
    make the collected rate an independent knob at desk scale).
    """

    x: float = 0.1
    pair_rate_hz: float = 2.0e5
    duration_s: float = 1.0
    coherence_time_s: float | None = None
    allow_high_gain: bool = False

    def __post_init__(self):
        if self.x < 0:
            raise ValueError("gain x must be >= 0")
        if self.x > PARAMETRIC_GAIN_CAP and not self.allow_high_gain:
            raise ValueError(
                f"gain x={self.x} exceeds the parametric-approximation cap "
                f"{PARAMETRIC_GAIN_CAP}; set allow_high_gain=True to override"
            )
        if self.pair_rate_hz < 0 or self.duration_s < 0:
            raise ValueError("pair rate and duration must be >= 0")
        if self.coherence_time_s is not None and self.coherence_time_s <= 0:
            raise ValueError("coherence time must be positive")

    def coherence_time(self, opt: OpticalConfig) -> float:
        if self.coherence_time_s is not None:
            return self.coherence_time_s
        return coherence_time_from_filter(opt.degenerate_wavelength_m)


def mean_pair_number(x: float) -> float:
    """Mean pair number per mode, sinh^2(x)."""
    if x < 0:
        raise ValueError("gain must be >= 0")
    return math.sinh(x) ** 2


def factorial_moment(r: int, x: float) -> float:
    """r-th normally-ordered factorial moment, r! * sinh(x)^(2r) (thermal)."""
    if not isinstance(r, (int, np.integer)) or r < 1:
        raise ValueError("moment order r must be an integer >= 1")
    return math.factorial(int(r)) * math.sinh(x) ** (2 * int(r))


def cross_correlation(x: float) -> float:
    """Normally-ordered signal-idler cross correlation <n> + 2<n>^2."""
    n = mean_pair_number(x)
    return n + 2.0 * n * n


class PairEvent(NamedTuple):
    emission_time_s: float
    angle_signal_rad: float
    angle_idler_rad: float
    lambda_signal_m: float
    lambda_idler_m: float


@dataclass
class PairStream:
    """Column store of generated pair events, sorted by emission time."""

    times_s: np.ndarray
    angle_signal_rad: np.ndarray
    angle_idler_rad: np.ndarray
    lambda_signal_m: np.ndarray
    lambda_idler_m: np.ndarray
    duration_s: float
    seed: int
    gain_x: float

    def __post_init__(self):
        n = len(self.times_s)
        for name in ("angle_signal_rad", "angle_idler_rad", "lambda_signal_m", "lambda_idler_m"):
            if len(getattr(self, name)) != n:
                raise ValueError("pair stream columns must share one length")
        if n and np.any(np.diff(self.times_s) < 0):
            raise ValueError("emission times must be non-decreasing")

    def __len__(self) -> int:
        return len(self.times_s)

    def __getitem__(self, i: int) -> PairEvent:
        return PairEvent(
            float(self.times_s[i]),
            float(self.angle_signal_rad[i]),
            float(self.angle_idler_rad[i]),
            float(self.lambda_signal_m[i]),
            float(self.lambda_idler_m[i]),
        )

    def energy_conservation_residual(self, pump_wavelength_m: float) -> float:
        """Max relative residual of 1/l_s + 1/l_i - 1/l_pump."""
        if len(self) == 0:
            return 0.0
        lhs = 1.0 / self.lambda_signal_m + 1.0 / self.lambda_idler_m
        return float(np.max(np.abs(lhs * pump_wavelength_m - 1.0)))


def sample_pair_counts(mean_n: float, n_cells: int, rng: np.random.Generator) -> np.ndarray:
    """Thermal (geometric) pair numbers for n_cells coherence cells.

    P(n) = mean^n / (1 + mean)^(n+1), the Bose-Einstein law with the given
    mean; moments match factorial_moment for mean = sinh^2(x).
    """
    if mean_n < 0:
        raise ValueError("mean pair number must be >= 0")
    if mean_n == 0.0:
        return np.zeros(n_cells, dtype=np.int64)
    p = 1.0 / (1.0 + mean_n)
    return rng.geometric(p, size=n_cells).astype(np.int64) - 1


def _draw_emission_times(
    rng: np.random.Generator, rate_hz: float, duration_s: float, coherence_time_s: float
) -> np.ndarray:
    """Bunched emission times: occupied coherence cells carry thermal multiplicity.

    Occupied cells arrive as a Poisson process of rate (1/tau_c) * m/(1+m)
    with m = rate * tau_c; each occupied cell holds 1 + geometric extras.
    Exact for all m, and O(events) even when cells are astronomically many.
    """
    if rate_hz == 0.0 or duration_s == 0.0:
        return np.zeros(0)
    m = rate_hz * coherence_time_s
    occupied_rate = (m / (1.0 + m)) / coherence_time_s
    k = rng.poisson(occupied_rate * duration_s)
    if k == 0:
        return np.zeros(0)
    cell_times = rng.uniform(0.0, duration_s, size=k)
    multiplicity = rng.geometric(1.0 / (1.0 + m), size=k)
    times = np.repeat(cell_times, multiplicity)
    times.sort()
    return times


class FourthOrderSampler:
    """Draws screen-angle pairs from C(theta1, theta2) by rejection.

    Proposal: symmetrized product of the two single-slit envelope densities,
    tabulated on a dense grid over the truncated angular domain (5 envelope
    zeros each side).  The bound C <= 2(t_direct + t_exchanged) is exact at
    any wavelength pair, so acceptance ratios never exceed 1; with a per-pair
    wavelength spread the proposal tables (built at the degenerate
    wavelength) are mismatched at relative order d_lambda/lambda, far below
    the statistical resolution of any acceptance quantity.
    """

    def __init__(
        self,
        geom: SlitGeometry,
        opt: OpticalConfig,
        theta_max_rad: float | None = None,
        n_table: int = 65537,
    ):
        self.geom = geom
        self.opt = opt
        lam0 = opt.degenerate_wavelength_m
        k0 = 2.0 * math.pi / lam0
        zero_span = ENVELOPE_ZEROS_KEPT * lam0 / geom.slit_width_m
        if theta_max_rad is None:
            sin_lo = min(
                math.sin(geom.incidence_angle_a_rad), math.sin(geom.incidence_angle_b_rad)
            ) - zero_span
            sin_hi = max(
                math.sin(geom.incidence_angle_a_rad), math.sin(geom.incidence_angle_b_rad)
            ) + zero_span
            sin_lo = max(sin_lo, -0.95)
            sin_hi = min(sin_hi, 0.95)
        else:
            sin_lo, sin_hi = -math.sin(theta_max_rad), math.sin(theta_max_rad)
        self.theta_lo = math.asin(sin_lo)
        self.theta_hi = math.asin(sin_hi)
        self._k0 = k0
        thetas = np.linspace(self.theta_lo, self.theta_hi, n_table)
        self._thetas = thetas
        self._cdf_a = self._build_cdf(thetas, geom.incidence_angle_a_rad, k0)
        self._cdf_b = self._build_cdf(thetas, geom.incidence_angle_b_rad, k0)

    def _build_cdf(self, thetas: np.ndarray, theta_inc: float, k: float) -> np.ndarray:
        dens = sinc_amplitude(thetas, theta_inc, k, self.geom.slit_width_m) ** 2
        mids = 0.5 * (dens[1:] + dens[:-1]) * np.diff(thetas)
        cdf = np.concatenate([[0.0], np.cumsum(mids)])
        cdf /= cdf[-1]
        return cdf

    def _sample_envelope(self, cdf: np.ndarray, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.interp(rng.uniform(0.0, 1.0, size=n), cdf, self._thetas)

    def _density_and_bound(self, t1, t2, k_a, k_b):
        geom = self.geom
        w = geom.slit_width_m
        L = geom.screen_distance_m
        g_a1 = sinc_amplitude(t1, geom.incidence_angle_a_rad, k_a, w)
        g_a2 = sinc_amplitude(t2, geom.incidence_angle_a_rad, k_a, w)
        g_b1 = sinc_amplitude(t1, geom.incidence_angle_b_rad, k_b, w)
        g_b2 = sinc_amplitude(t2, geom.incidence_angle_b_rad, k_b, w)
        r_a1 = path_length(geom.slit_center_a_m, t1, L)
        r_a2 = path_length(geom.slit_center_a_m, t2, L)
        r_b1 = path_length(geom.slit_center_b_m, t1, L)
        r_b2 = path_length(geom.slit_center_b_m, t2, L)
        amp = g_a1 * g_b2 * np.exp(-1j * (k_a * r_a1 + k_b * r_b2)) + g_a2 * g_b1 * np.exp(
            -1j * (k_a * r_a2 + k_b * r_b1)
        )
        density = np.abs(amp) ** 2
        bound = 2.0 * ((g_a1 * g_b2) ** 2 + (g_a2 * g_b1) ** 2)
        return density, bound

    def sample_joint(
        self,
        rng: np.random.Generator,
        n: int,
        k_a: np.ndarray | float | None = None,
        k_b: np.ndarray | float | None = None,
        max_rounds: int = 200,
    ) -> tuple[np.ndarray, np.ndarray]:
        if k_a is None:
            k_a = self._k0
        if k_b is None:
            k_b = self._k0
        k_a = np.broadcast_to(np.asarray(k_a, dtype=float), (n,))
        k_b = np.broadcast_to(np.asarray(k_b, dtype=float), (n,))
        out1 = np.empty(n)
        out2 = np.empty(n)
        pending = np.arange(n)
        for _ in range(max_rounds):
            m = len(pending)
            if m == 0:
                break
            th_a = self._sample_envelope(self._cdf_a, rng, m)
            th_b = self._sample_envelope(self._cdf_b, rng, m)
            swap = rng.random(m) < 0.5
            t1 = np.where(swap, th_b, th_a)
            t2 = np.where(swap, th_a, th_b)
            density, bound = self._density_and_bound(t1, t2, k_a[pending], k_b[pending])
            accept = rng.random(m) * bound < density
            taken = pending[accept]
            out1[taken] = t1[accept]
            out2[taken] = t2[accept]
            pending = pending[~accept]
        if len(pending):
            raise RuntimeError("rejection sampling failed to converge")
        return out1, out2

    def norm(self, n_quad: int = 2001) -> float:
        """Integral of C over the truncated angle domain (degenerate k)."""
        t = np.linspace(self.theta_lo, self.theta_hi, n_quad)
        dens, _ = self._density_and_bound(t[:, None], t[None, :], self._k0, self._k0)
        return float(np.trapezoid(np.trapezoid(dens, t, axis=1), t))


def generate_pairs(
    gain: GainParam,
    geom: SlitGeometry,
    opt: OpticalConfig,
    seed: int,
    *,
    angles: str = "diffracted",
    jitter_rad: float = 0.0,
    wavelength_fwhm_m: float = 0.0,
    source_distance_m: float = 0.5,
    theta_max_rad: float | None = None,
    sampler: FourthOrderSampler | None = None,
) -> PairStream:
    """Simulate the collected pair stream over gain.duration_s.

    angles="diffracted": events carry post-slit screen angles drawn jointly
    from C(theta1, theta2); pairs whose jittered aim misses a slit are
    absorbed by the mask (the surviving partner is not tracked).
    angles="aimed": events keep their pre-slit beam angles (no slits in the
    path), as on the calibration bench.

    Wavelengths are degenerate (2 * pump) unless wavelength_fwhm_m > 0, in
    which case the signal wavelength is Gaussian and the idler follows from
    energy conservation with the pump.
    """
    if angles not in ("diffracted", "aimed"):
        raise ValueError("angles must be 'diffracted' or 'aimed'")
    if jitter_rad < 0 or wavelength_fwhm_m < 0:
        raise ValueError("jitter and wavelength spread must be >= 0")
    rng = np.random.default_rng(seed)
    coherence = gain.coherence_time(opt)
    times = _draw_emission_times(rng, gain.pair_rate_hz, gain.duration_s, coherence)

    aim_a = math.atan2(geom.slit_center_a_m, source_distance_m)
    aim_b = math.atan2(geom.slit_center_b_m, source_distance_m)
    n = len(times)
    if jitter_rad > 0.0:
        off_a = rng.normal(0.0, jitter_rad, size=n)
        off_b = rng.normal(0.0, jitter_rad, size=n)
    else:
        off_a = np.zeros(n)
        off_b = np.zeros(n)

    if angles == "diffracted" and jitter_rad > 0.0:
        half_admit = 0.5 * geom.slit_width_m / source_distance_m
        keep = (np.abs(off_a) <= half_admit) & (np.abs(off_b) <= half_admit)
        times = times[keep]
        off_a = off_a[keep]
        off_b = off_b[keep]
        n = len(times)

    lam_deg = opt.degenerate_wavelength_m
    if wavelength_fwhm_m > 0.0:
        sigma = wavelength_fwhm_m / (2.0 * math.sqrt(2.0 * math.log(2.0)))
        lam_signal = rng.normal(lam_deg, sigma, size=n)
        lam_signal = np.clip(lam_signal, 0.5 * lam_deg, 1.9 * lam_deg)
        lam_idler = 1.0 / (1.0 / opt.pump_wavelength_m - 1.0 / lam_signal)
    else:
        lam_signal = np.full(n, lam_deg)
        lam_idler = np.full(n, lam_deg)

    if angles == "aimed":
        ang1 = aim_a + off_a
        ang2 = aim_b + off_b
    else:
        if sampler is None:
            sampler = FourthOrderSampler(geom, opt, theta_max_rad=theta_max_rad)
        k_a = 2.0 * math.pi / lam_signal
        k_b = 2.0 * math.pi / lam_idler
        ang1, ang2 = sampler.sample_joint(rng, n, k_a=k_a, k_b=k_b)

    return PairStream(
        times_s=times,
        angle_signal_rad=np.asarray(ang1),
        angle_idler_rad=np.asarray(ang2),
        lambda_signal_m=lam_signal,
        lambda_idler_m=lam_idler,
        duration_s=gain.duration_s,
        seed=seed,
        gain_x=gain.x,
    )


def count_correlation(
    times_a: np.ndarray,
    times_b: np.ndarray,
    duration_s: float,
    window_s: float,
) -> float:
    """Pearson correlation of the two channels' counts in shared time bins.

    Needs at least 30 full bins; raises on zero variance in either channel.
    """
    if window_s <= 0 or duration_s <= 0:
        raise ValueError("duration and window must be positive")
    n_bins = int(duration_s / window_s)
    if n_bins < 30:
        raise ValueError(f"need >= 30 bins, got {n_bins}; shrink the window")
    edges = np.arange(n_bins + 1) * window_s
    counts_a, _ = np.histogram(times_a, bins=edges)
    counts_b, _ = np.histogram(times_b, bins=edges)
    var_a = counts_a.var()
    var_b = counts_b.var()
    if var_a == 0.0 or var_b == 0.0:
        raise ValueError("zero count variance; correlation undefined")
    cov = np.mean((counts_a - counts_a.mean()) * (counts_b - counts_b.mean()))
    return float(cov / math.sqrt(var_a * var_b))


def correlation_coefficient(stream: PairStream, window_s: float) -> float:
    """Normalized cross-correlation of the stream's two arms (1 when lossless)."""
    return count_correlation(stream.times_s, stream.times_s, stream.duration_s, window_s)


def thin_times(times: np.ndarray, keep_prob: float, rng: np.random.Generator) -> np.ndarray:
    """Independently keep each click with probability keep_prob (loss model)."""
    if not (0.0 <= keep_prob <= 1.0):
        raise ValueError("keep probability must lie in [0, 1]")
    return times[rng.random(len(times)) < keep_prob]
