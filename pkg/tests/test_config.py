import pytest

from kmclr.config import TrainConfig, load_config, parse_overrides
from kmclr.errors import ConfigError


def test_defaults_round_trip(tmp_path):
    cfg = TrainConfig(dim=16, alpha=0.3, disable_mcl=True)
    cfg.save(tmp_path / "r.conf")
    again = load_config(tmp_path / "r.conf")
    assert again == cfg and again.digest() == cfg.digest()


def test_relative_paths_resolve_against_file(tmp_path):
    (tmp_path / "sub").mkdir()
    (tmp_path / "sub" / "c.conf").write_text("# comment\ninteractions = data/x.tsv\nkg = /abs/kg.tsv\nlayers = 3\n")
    cfg = load_config(tmp_path / "sub" / "c.conf")
    assert cfg.interactions == str((tmp_path / "sub" / "data" / "x.tsv").resolve())
    assert cfg.kg == "/abs/kg.tsv" and cfg.layers == 3


@pytest.mark.parametrize("pairs", [
    [("nope", "1")], [("dim", "x")], [("dim", "0")], [("alpha", "1.5")], [("norm", "other")],
    [("a", "0.9"), ("b", "0.5")], [("disable_kcl", "maybe")],
])
def test_bad_values_rejected(pairs):
    with pytest.raises(ConfigError):
        parse_overrides(pairs)


def test_bool_spellings():
    assert parse_overrides([("disable_kcl", "yes")]).disable_kcl
    assert not parse_overrides([("disable_kcl", "0")]).disable_kcl


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/x.conf")
