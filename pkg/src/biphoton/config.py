"""Flat key=value experiment configuration.

One preset file per experiment.  Lines are `dotted.key = value`, `#` starts
a comment, blank lines are ignored.  Times on the counting electronics are
in nanoseconds and dark rates in counts per second (`tac.full_window_ns`,
`detector.a.dark_cps`, ...); everything else carries an explicit SI suffix
in the key name (`_m`, `_s`, `_hz`, `_rad`).
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .detection import DetectorModel, TacScaConfig
from .optics import OpticalConfig, SlitGeometry
from .source import GainParam


class ConfigError(Exception):
    """Malformed or inconsistent configuration input."""


def parse_config_text(text: str, origin: str = "<string>") -> dict[str, str]:
    """Parse `key = value` lines into a flat string map."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip().lower()
        value = value.strip()
        if not key or not value:
            raise ConfigError(f"{origin}:{lineno}: empty key or value")
        if key in out:
            raise ConfigError(f"{origin}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path: str | Path) -> dict[str, str]:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_config_text(text, origin=str(p))


def preset_names() -> list[str]:
    root = resources.files("biphoton") / "presets"
    return sorted(p.name[: -len(".cfg")] for p in root.iterdir()
                  if p.name.endswith(".cfg"))


def load_preset(name: str) -> dict[str, str]:
    """Load a shipped preset by bare name (phase1, calibration, ...)."""
    res = resources.files("biphoton") / "presets" / f"{name}.cfg"
    try:
        text = res.read_text(encoding="utf-8")
    except (FileNotFoundError, OSError) as exc:
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(preset_names())}"
        ) from exc
    return parse_config_text(text, origin=f"preset:{name}")


class Settings:
    """Typed access to a flat key map, tracking which keys were consumed."""

    def __init__(self, values: dict[str, str]):
        self._values = dict(values)
        self._used: set[str] = set()

    def _raw(self, key: str) -> str | None:
        v = self._values.get(key)
        if v is not None:
            self._used.add(key)
        return v

    def get_str(self, key: str, default: str | None = None) -> str | None:
        v = self._raw(key)
        return default if v is None else v

    def get_float(self, key: str, default: float | None = None) -> float | None:
        v = self._raw(key)
        if v is None:
            return default
        try:
            return float(v)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected a number, got {v!r}") from exc

    def get_int(self, key: str, default: int | None = None) -> int | None:
        v = self._raw(key)
        if v is None:
            return default
        try:
            return int(v)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected an integer, got {v!r}") from exc

    def get_bool(self, key: str, default: bool | None = None) -> bool | None:
        v = self._raw(key)
        if v is None:
            return default
        low = v.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {v!r}")

    def get_float_list(self, key: str, default: tuple[float, ...] | None = None
                       ) -> tuple[float, ...] | None:
        v = self._raw(key)
        if v is None:
            return default
        try:
            return tuple(float(x) for x in v.split(","))
        except ValueError as exc:
            raise ConfigError(f"{key}: expected comma-separated numbers, got {v!r}") from exc

    def unused(self) -> list[str]:
        return sorted(set(self._values) - self._used)


def _build(factory, kind: str, /, **kwargs):
    try:
        return factory(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"invalid {kind}: {exc}") from exc


def build_geometry(s: Settings) -> SlitGeometry:
    return _build(
        SlitGeometry, "slit geometry",
        slit_width_m=s.get_float("slit.width_m", 10e-6),
        slit_separation_m=s.get_float("slit.separation_m", 100e-6),
        screen_distance_m=s.get_float("slit.screen_distance_m", 1.0),
        incidence_angle_a_rad=s.get_float("slit.incidence_a_rad", 0.0),
        incidence_angle_b_rad=s.get_float("slit.incidence_b_rad", 0.0),
    )


def build_optics(s: Settings) -> OpticalConfig:
    return _build(
        OpticalConfig, "optical config",
        wavelength_m=s.get_float("optics.wavelength_m", 702e-9),
        pump_wavelength_m=s.get_float("optics.pump_wavelength_m", 351.1e-9),
    )


def build_gain(s: Settings) -> GainParam:
    return _build(
        GainParam, "source gain",
        x=s.get_float("source.gain_x", 0.1),
        pair_rate_hz=s.get_float("source.pair_rate_hz", 2.0e4),
        duration_s=s.get_float("source.duration_s", 1.0),
    )


def build_detector(s: Settings, which: str) -> DetectorModel:
    p = f"detector.{which}"
    defaults = {
        "a": dict(eff=0.400, dark=700.0),
        "b": dict(eff=0.275, dark=35.0),
    }
    if which not in defaults:
        raise ConfigError(f"unknown detector id {which!r}")
    d = defaults[which]
    iris = s.get_float(f"{p}.iris_m")
    return _build(
        DetectorModel, f"detector {which}",
        detector_id=which,
        quantum_efficiency=s.get_float(f"{p}.efficiency", d["eff"]),
        dark_rate_hz=s.get_float(f"{p}.dark_cps", d["dark"]),
        dead_time_s=s.get_float(f"{p}.dead_time_ns", 50.0) * 1e-9,
        lens_diameter_m=s.get_float(f"{p}.lens_m", 6e-3),
        iris_diameter_m=iris,
        transmittance=s.get_float(f"{p}.transmittance", 1.0),
    )


def build_tac(s: Settings) -> TacScaConfig:
    return _build(
        TacScaConfig, "TAC/SCA config",
        full_window_s=s.get_float("tac.full_window_ns", 20.0) * 1e-9,
        mca_channels=s.get_int("tac.mca_channels", 8196),
        sca_window_s=s.get_float("tac.sca_window_ns", 5.0) * 1e-9,
        sca_center_s=s.get_float("tac.sca_center_ns", 2.5) * 1e-9,
        stop_delay_s=s.get_float("tac.stop_delay_ns", 2.5) * 1e-9,
        background_shift_s=s.get_float("tac.background_shift_ns", 16.0) * 1e-9,
    )
