"""Flat key=value run configuration."""

import pytest

from protvecgen.config import (ConfigError, DEFAULTS, RunConfig, load_config,
                               parse_config)


def test_parse_with_comments_and_blanks():
    cfg = parse_config("# a comment\n\nseed = 7  # trailing\nstride=30\n")
    assert cfg.get_int("seed") == 7
    assert cfg.get_int("stride") == 30


def test_defaults_fill_missing_keys():
    cfg = RunConfig({})
    assert cfg.get("segment_sizes") == "100,120,140"
    assert cfg.get_float("dropout") == 0.3
    assert cfg.get_int_list("bucket_edges") == \
        [100, 200, 300, 500, 700, 1000, 1300, 1600]


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown config key"):
        RunConfig({"sedd": "1"})
    with pytest.raises(ConfigError, match="line 1"):
        parse_config("just some words\n")


def test_typed_getters_validate():
    cfg = RunConfig({"seed": "abc", "dropout": "x", "segment_sizes": "1,q"})
    with pytest.raises(ConfigError, match="seed"):
        cfg.get_int("seed")
    with pytest.raises(ConfigError, match="dropout"):
        cfg.get_float("dropout")
    with pytest.raises(ConfigError, match="segment_sizes"):
        cfg.get_int_list("segment_sizes")


def test_hash_covers_defaults_and_changes():
    base = RunConfig({}).hash()
    assert len(base) == 16
    assert RunConfig({}).hash() == base
    assert RunConfig({"seed": "1"}).hash() != base
    # explicit default == implicit default
    assert RunConfig({"seed": "0"}).hash() == base


def test_load_config_with_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("seed = 4\nworkdir = out\n")
    cfg = load_config(path, overrides={"seed": "9"})
    assert cfg.get_int("seed") == 9
    assert cfg.get("workdir") == "out"
    with pytest.raises(ConfigError):
        load_config(path, overrides={"bogus": "1"})


def test_every_default_key_parses_by_its_type():
    cfg = RunConfig({})
    for key in DEFAULTS:
        cfg.get(key)  # at minimum retrievable
