from pathlib import Path

import pytest

from hjhomog.config import ConfigError, load_config, parse_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

MINIMAL = """
[medium]
kind = "periodic"
"""


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_configs_parse(path):
    cfg, h, doc = load_config(path)
    assert len(h) == 32
    assert cfg.medium.kind in ("periodic", "quasi-periodic", "metric")


def test_defaults_and_hash_stability():
    cfg, h1, _ = parse_config(MINIMAL)
    _, h2, _ = parse_config("\n\n" + MINIMAL + "# comment\n")
    assert h1 == h2
    assert cfg.lattice.dx == 0.05 and cfg.schedule.horizons == [4, 8, 16]
    assert cfg.converge.hopf_lax_step == 1 / 32


def test_unknown_key_named():
    with pytest.raises(ConfigError, match="unknown key 'lattice.bogus'"):
        parse_config(MINIMAL + "[lattice]\nbogus = 1\n")


def test_missing_kind_named():
    with pytest.raises(ConfigError, match="missing required key 'medium.kind'"):
        parse_config("[medium]\ndim = 1\n")


def test_toml_syntax_error():
    with pytest.raises(ConfigError, match="syntax"):
        parse_config("[medium\n")


@pytest.mark.parametrize("extra,needle", [
    ("[schedule]\nhorizons = [8, 4]\n", "schedule.horizons"),
    ("[schedule]\neps = [0.1, 0.2]\n", "schedule.eps"),
    ("[schedule]\nseeds = [-1]\n", "schedule.seeds"),
    ("[grids.K]\ntimes = [0.0, 1.0]\n", "grids.K.times"),
    ("[lattice]\ndx = -0.1\n", "lattice.dx"),
    ("[stable_norm]\nresolution = 10\n", "stable_norm.resolution"),
])
def test_invalid_values_named(extra, needle):
    with pytest.raises(ConfigError, match=needle.replace(".", r"\.")):
        parse_config(MINIMAL + extra)


def test_kind_specific_fields():
    with pytest.raises(ConfigError, match="alpha"):
        parse_config('[medium]\nkind = "quasi-periodic"\n')
    with pytest.raises(ConfigError, match="only meaningful"):
        parse_config(MINIMAL + "alpha = [0.3]\n")
    with pytest.raises(ConfigError, match="metric"):
        parse_config('[medium]\nkind = "metric"\ndim = 2\n')


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.toml")
