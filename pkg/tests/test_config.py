"""Flat key = value config parsing and the bundled presets."""

import pytest

from biphoton.config import (
    ConfigError,
    Settings,
    build_detector,
    build_gain,
    build_geometry,
    build_tac,
    load_preset,
    parse_config_text,
    preset_names,
)


def test_parse_basic_and_comments():
    text = """
# a comment
key.one = 1.5
key.two = hello   # trailing comment


key.three=  spaced
"""
    vals = parse_config_text(text)
    assert vals == {"key.one": "1.5", "key.two": "hello", "key.three": "spaced"}


def test_parse_rejects_duplicates_and_junk():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_text("a = 1\na = 2\n")
    with pytest.raises(ConfigError):
        parse_config_text("line without equals\n")


def test_settings_typed_getters():
    s = Settings({"f": "2.5", "i": "7", "b": "yes", "lst": "1,2,3"})
    assert s.get_float("f") == 2.5
    assert s.get_int("i") == 7
    assert s.get_bool("b") is True
    assert s.get_float_list("lst") == (1.0, 2.0, 3.0)
    assert s.get_float("missing", 9.0) == 9.0
    assert s.unused() == []
    with pytest.raises(ConfigError):
        Settings({"x": "abc"}).get_float("x")


def test_settings_tracks_unused_keys():
    s = Settings({"used": "1", "dangling": "2"})
    s.get_int("used")
    assert s.unused() == ["dangling"]


def test_all_presets_parse_and_build():
    names = preset_names()
    assert {"phase1", "phase2", "phase3", "calibration", "discriminator"} <= set(names)
    for name in names:
        s = Settings(load_preset(name))
        build_geometry(s)
        build_gain(s)
        build_detector(s, "a")
        build_tac(s)


def test_unknown_preset_raises():
    with pytest.raises(ConfigError):
        load_preset("phase9")


def test_detector_builder_validates():
    with pytest.raises(ConfigError):
        build_detector(Settings({"detector.a.efficiency": "1.5"}), "a")
    with pytest.raises(ConfigError):
        build_detector(Settings({}), "q")
