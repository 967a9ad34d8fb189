"""Closed-form fourth-order interference for a two-photon double slit.

One photon transits each slit. Coincidence detection at two screen angles
(theta1, theta2) interferes the two ways the pair can reach the detectors,
giving fringes in the angle difference; single-channel (second-order)
detection carries which-slit information and shows no fringes.

Conventions: angles are measured from the slit symmetry axis at the slit
plane, positive toward positive transverse coordinate y (left of axis is
negative). A detector at screen position y sits at theta = arctan(y / L).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

C_LIGHT = 299_792_458.0

# L must exceed s^2/lambda by this factor before the sinc far-field model
# is trustworthy; below it results carry a FraunhoferWarning.
FRAUNHOFER_MARGIN = 10.0


class FraunhoferWarning(UserWarning):
    """Geometry too close to the slits for the far-field sinc model."""


@dataclass(frozen=True)
class SlitGeometry:
    """Double-slit layout. Slit A is centered at +s/2, slit B at -s/2."""

    slit_width_m: float = 10e-6
    slit_separation_m: float = 100e-6
    screen_distance_m: float = 1.0
    incidence_angle_a_rad: float = 0.0
    incidence_angle_b_rad: float = 0.0

    def __post_init__(self):
        if not (self.slit_width_m > 0):
            raise ValueError("slit width must be positive")
        if not (self.slit_separation_m > self.slit_width_m):
            raise ValueError("slit separation must exceed slit width")
        if not (self.screen_distance_m > 0):
            raise ValueError("screen distance must be positive")

    @property
    def slit_center_a_m(self) -> float:
        return +0.5 * self.slit_separation_m

    @property
    def slit_center_b_m(self) -> float:
        return -0.5 * self.slit_separation_m

    def fraunhofer_ok(self, wavelength_m: float) -> bool:
        near_field_scale = self.slit_separation_m**2 / wavelength_m
        return self.screen_distance_m > FRAUNHOFER_MARGIN * near_field_scale


@dataclass(frozen=True)
class OpticalConfig:
    """Nominal pair wavelength and the pump that produced it."""

    wavelength_m: float = 702e-9
    pump_wavelength_m: float = 351.1e-9
    degenerate_tolerance: float = 1e-3

    def __post_init__(self):
        if not (self.wavelength_m > 0 and self.pump_wavelength_m > 0):
            raise ValueError("wavelengths must be positive")
        if self.pump_wavelength_m >= self.wavelength_m:
            raise ValueError("pump wavelength must be below the pair wavelength")

    @property
    def wavenumber(self) -> float:
        return 2.0 * math.pi / self.wavelength_m

    @property
    def degenerate_wavelength_m(self) -> float:
        """Exact degenerate pair wavelength, 2 * pump."""
        return 2.0 * self.pump_wavelength_m

    def is_degenerate(self) -> bool:
        rel = abs(self.wavelength_m - self.degenerate_wavelength_m) / self.wavelength_m
        return rel <= self.degenerate_tolerance


@dataclass(frozen=True)
class FilterSpec:
    """Gaussian interference filter in front of one arm."""

    center_wavelength_m: float = 702e-9
    fwhm_m: float = 4e-9
    transmission_peak: float = 1.0

    def __post_init__(self):
        if self.fwhm_m < 0:
            raise ValueError("filter FWHM must be >= 0")
        if not (0.0 <= self.transmission_peak <= 1.0):
            raise ValueError("transmission_peak must lie in [0, 1]")

    @property
    def sigma_m(self) -> float:
        return self.fwhm_m / (2.0 * math.sqrt(2.0 * math.log(2.0)))


@dataclass(frozen=True)
class CoincidenceMap:
    """Sampled C(theta1, theta2); density[i, j] = C(theta1[i], theta2[j])."""

    theta1_rad: np.ndarray
    theta2_rad: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.density)
        if d.shape != (len(self.theta1_rad), len(self.theta2_rad)):
            raise ValueError("density shape does not match the angle grids")
        if not np.all(np.isfinite(d)):
            raise ValueError("density contains non-finite values")
        if np.any(d < 0):
            raise ValueError("density must be non-negative")

    def row_near(self, theta1: float) -> tuple[int, np.ndarray]:
        i = int(np.argmin(np.abs(np.asarray(self.theta1_rad) - theta1)))
        return i, np.asarray(self.density)[i, :]


def sinc_amplitude(theta, theta_inc: float, k: float, slit_width_m: float):
    """Single-slit far-field amplitude sin(x)/x, x = (k w / 2)(sin t - sin t_i).

    Continuous at x = 0 (value 1). Vectorized over theta.
    """
    if np.any(np.asarray(k) <= 0) or slit_width_m <= 0:
        raise ValueError("wavenumber and slit width must be positive")
    x = 0.5 * np.asarray(k) * slit_width_m * (np.sin(theta) - math.sin(theta_inc))
    # np.sinc is sin(pi u)/(pi u)
    return np.sinc(x / math.pi)


def path_length(slit_center_m: float, theta, screen_distance_m: float):
    """Exact Euclidean distance from a slit center to the screen point of theta."""
    L = screen_distance_m
    return np.hypot(L, L * np.tan(theta) - slit_center_m)


def _warn_if_near_field(geom: SlitGeometry, opt: OpticalConfig):
    if not geom.fraunhofer_ok(opt.wavelength_m):
        warnings.warn(
            "screen distance is within the near-field scale s^2/lambda; "
            "sinc envelope model is unreliable here",
            FraunhoferWarning,
            stacklevel=3,
        )


def _amplitude_k(theta1, theta2, geom: SlitGeometry, k_a: float, k_b: float):
    """Two-path coincidence amplitude with per-slit wavenumbers.

    k_a is the wavenumber of the photon transiting slit A (it may end up at
    either detector), k_b of the photon transiting slit B.
    """
    w = geom.slit_width_m
    L = geom.screen_distance_m
    g_a1 = sinc_amplitude(theta1, geom.incidence_angle_a_rad, k_a, w)
    g_a2 = sinc_amplitude(theta2, geom.incidence_angle_a_rad, k_a, w)
    g_b1 = sinc_amplitude(theta1, geom.incidence_angle_b_rad, k_b, w)
    g_b2 = sinc_amplitude(theta2, geom.incidence_angle_b_rad, k_b, w)
    r_a1 = path_length(geom.slit_center_a_m, theta1, L)
    r_a2 = path_length(geom.slit_center_a_m, theta2, L)
    r_b1 = path_length(geom.slit_center_b_m, theta1, L)
    r_b2 = path_length(geom.slit_center_b_m, theta2, L)
    term_direct = g_a1 * g_b2 * np.exp(-1j * (k_a * r_a1 + k_b * r_b2))
    term_exchanged = g_a2 * g_b1 * np.exp(-1j * (k_a * r_a2 + k_b * r_b1))
    return term_direct + term_exchanged


def biphoton_amplitude(theta1, theta2, geom: SlitGeometry, opt: OpticalConfig):
    """Coincidence amplitude at degenerate wavelength. Symmetric in (t1, t2)."""
    _warn_if_near_field(geom, opt)
    k = opt.wavenumber
    return _amplitude_k(theta1, theta2, geom, k, k)


def coincidence_density(theta1, theta2, geom: SlitGeometry, opt: OpticalConfig):
    """Unnormalized fourth-order counting density |amplitude|^2."""
    amp = biphoton_amplitude(theta1, theta2, geom, opt)
    return np.abs(amp) ** 2


def coincidence_density_k(theta1, theta2, geom: SlitGeometry, k_a: float, k_b: float):
    """Like coincidence_density but with explicit per-slit wavenumbers."""
    return np.abs(_amplitude_k(theta1, theta2, geom, k_a, k_b)) ** 2


def envelope_bounds(theta1, theta2, geom: SlitGeometry, opt: OpticalConfig):
    """(I1, I2) with I1 <= C <= I2: squared difference / sum of path envelopes."""
    k = opt.wavenumber
    w = geom.slit_width_m
    g_a1 = sinc_amplitude(theta1, geom.incidence_angle_a_rad, k, w)
    g_a2 = sinc_amplitude(theta2, geom.incidence_angle_a_rad, k, w)
    g_b1 = sinc_amplitude(theta1, geom.incidence_angle_b_rad, k, w)
    g_b2 = sinc_amplitude(theta2, geom.incidence_angle_b_rad, k, w)
    direct = np.abs(g_a1 * g_b2)
    exchanged = np.abs(g_a2 * g_b1)
    i_lo = (direct - exchanged) ** 2
    i_hi = (direct + exchanged) ** 2
    return i_lo, i_hi


def fringe_spacing(geom: SlitGeometry, opt: OpticalConfig) -> float:
    """Fringe period on the screen, L * lambda / s."""
    return geom.screen_distance_m * opt.wavelength_m / geom.slit_separation_m


def fringe_period_rad(geom: SlitGeometry, opt: OpticalConfig) -> float:
    """Fringe period in sin(theta), lambda / s."""
    return opt.wavelength_m / geom.slit_separation_m


def marginal_singles(theta, arm: str, geom: SlitGeometry, opt: OpticalConfig):
    """Second-order (single-channel) density: the designated slit's envelope only.

    The photon of each arm transits one known slit, so singles carry full
    which-path information and show no fringes.
    """
    arm_key = str(arm).strip().upper()[:1]
    if arm_key == "A":
        theta_inc = geom.incidence_angle_a_rad
    elif arm_key == "B":
        theta_inc = geom.incidence_angle_b_rad
    else:
        raise ValueError(f"arm must be 'A' or 'B', got {arm!r}")
    _warn_if_near_field(geom, opt)
    g = sinc_amplitude(theta, theta_inc, opt.wavenumber, geom.slit_width_m)
    return g**2


def coincidence_map(
    theta1_rad,
    theta2_rad,
    geom: SlitGeometry,
    opt: OpticalConfig,
) -> CoincidenceMap:
    """Sample C over the outer product of two angle grids (row-major in theta1)."""
    t1 = np.asarray(theta1_rad, dtype=float)
    t2 = np.asarray(theta2_rad, dtype=float)
    density = coincidence_density(t1[:, None], t2[None, :], geom, opt)
    return CoincidenceMap(theta1_rad=t1, theta2_rad=t2, density=density)


def _parabolic_refine(y: np.ndarray, i: int) -> float:
    """Value of the parabola through (i-1, i, i+1) at its extremum."""
    if i <= 0 or i >= len(y) - 1:
        return float(y[i])
    a, b, c = float(y[i - 1]), float(y[i]), float(y[i + 1])
    denom = a - 2.0 * b + c
    if denom == 0.0:
        return b
    return b - 0.125 * (a - c) ** 2 / denom


def fringe_visibility(
    cmap: CoincidenceMap, fixed_theta1: float, period_rad: float
) -> float:
    """(Cmax - Cmin)/(Cmax + Cmin) over one central fringe along theta2.

    The row nearest fixed_theta1 is scanned around its global maximum.  If no
    interior local minimum exists within the fringe window the profile is not
    oscillating and the visibility is 0.  Requires >= 8 samples per period.
    """
    if period_rad <= 0:
        raise ValueError("fringe period must be positive")
    _, row = cmap.row_near(fixed_theta1)
    u = np.sin(np.asarray(cmap.theta2_rad, dtype=float))
    j0 = int(np.argmax(row))
    in_window = np.abs(u - u[j0]) <= 0.5 * period_rad * (1 + 1e-12)
    if int(np.count_nonzero(in_window)) < 8:
        raise ValueError(
            "coincidence map undersampled: need >= 8 samples per fringe period"
        )
    # search slightly beyond half a period so both adjacent minima are seen
    search = np.abs(u - u[j0]) <= 0.75 * period_rad
    idx = np.flatnonzero(search)
    minima = [
        j
        for j in idx
        if 0 < j < len(row) - 1 and row[j] < row[j - 1] and row[j] < row[j + 1]
    ]
    if not minima:
        return 0.0
    c_max = _parabolic_refine(row, j0)
    c_min = max(0.0, min(_parabolic_refine(row, j) for j in minima))
    if c_max + c_min == 0.0:
        return 0.0
    return (c_max - c_min) / (c_max + c_min)


def conjugate_wavelength(lambda_m: float, pump_wavelength_m: float) -> float:
    """Partner wavelength from energy conservation 1/l1 + 1/l2 = 1/pump."""
    inv = 1.0 / pump_wavelength_m - 1.0 / lambda_m
    if inv <= 0:
        raise ValueError("wavelength incompatible with pump energy conservation")
    return 1.0 / inv


def spectral_convolution(
    cmap: CoincidenceMap,
    filt: FilterSpec,
    geom: SlitGeometry,
    opt: OpticalConfig,
    n_nodes: int = 21,
) -> CoincidenceMap:
    """Average C over one photon's wavelength under a Gaussian filter.

    The filtered photon is the one transiting slit A; its partner's wavelength
    follows from energy conservation with the fixed pump.  Gauss weights are
    normalized, so the output is shape-only (transmission_peak is a detection
    property, not applied here).  fwhm = 0 returns the input map unchanged.
    """
    if filt.fwhm_m == 0.0:
        return replace(cmap)
    if n_nodes < 21:
        raise ValueError("spectral quadrature needs at least 21 nodes over +-3 sigma")
    sigma = filt.sigma_m
    lam = filt.center_wavelength_m + np.linspace(-3.0, 3.0, n_nodes) * sigma
    if np.any(lam <= 0):
        raise ValueError("filter window reaches non-physical wavelengths")
    weights = np.exp(-0.5 * ((lam - filt.center_wavelength_m) / sigma) ** 2)
    weights /= weights.sum()
    _warn_if_near_field(geom, opt)
    t1 = np.asarray(cmap.theta1_rad, dtype=float)
    t2 = np.asarray(cmap.theta2_rad, dtype=float)
    acc = np.zeros((len(t1), len(t2)))
    for lam_a, w_q in zip(lam, weights):
        lam_b = conjugate_wavelength(lam_a, opt.pump_wavelength_m)
        k_a = 2.0 * math.pi / lam_a
        k_b = 2.0 * math.pi / lam_b
        acc += w_q * coincidence_density_k(t1[:, None], t2[None, :], geom, k_a, k_b)
    return CoincidenceMap(theta1_rad=t1, theta2_rad=t2, density=acc)


def fringe_projection(values: np.ndarray, u: np.ndarray, period_rad: float) -> float:
    """Fringe visibility of a profile at spatial frequency 1/period.

    Projects values(u) onto e^(2 pi i u / period) under a Gaussian taper
    (sigma = one tenth of the evaluated span) and returns 2|num|/den, which
    for values = m(u) (1 + V cos(2 pi u / period + phi)) recovers V up to
    the slow variation of m across one period.

    The taper is what makes the zero side of the certificate meaningful: a
    bare finite-window projection of a smooth envelope leaks at the window
    sinc sidelobe level (~1e-2 here), whereas the Gaussian's spectrum dies
    off fast enough that a band-limited fringe-free profile projects below
    1e-6 of its mean, provided the evaluated span covers at least a few
    fringe periods with room to spare.
    """
    if period_rad <= 0:
        raise ValueError("fringe period must be positive")
    u = np.asarray(u, dtype=float)
    v = np.asarray(values, dtype=float)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError("values and u must be matching 1-d arrays")
    if len(u) < 16:
        raise ValueError("need a dense profile for a spectral estimate")
    span = float(u[-1] - u[0])
    if span <= 0:
        raise ValueError("u must be increasing")
    center = 0.5 * float(u[-1] + u[0])
    sigma = span / 10.0
    taper = np.exp(-0.5 * ((u - center) / sigma) ** 2)
    omega = 2.0 * math.pi / period_rad
    den = float(np.trapezoid(v * taper, u))
    if den == 0.0:
        raise ValueError("profile has zero tapered mean; projection undefined")
    c = float(np.trapezoid(v * taper * np.cos(omega * u), u))
    s = float(np.trapezoid(v * taper * np.sin(omega * u), u))
    return 2.0 * math.hypot(c, s) / abs(den)
