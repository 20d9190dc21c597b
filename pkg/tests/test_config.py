import pytest

from kslab.config import ConfigError, load_config, parse_config
from kslab.field import Params


def test_defaults_are_valid():
    cfg = parse_config({})
    assert cfg.make_grid().n == 256
    assert cfg.make_params() == Params(1.0, 0.0)
    assert cfg.make_measure().is_empty


def test_full_config_from_file(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(
        """
seed = 7
[grid]
n = 64
l = 20
[params]
tau = 2
[init]
atoms = [{ mass = 1.5, x = 1.0, y = -2.0, width = 0.8 }]
[time]
t_end = 2.0
[output]
snapshot_times = [0.5, 2]
"""
    )
    cfg = load_config(path)
    assert cfg.seed == 7 and cfg.grid.l == 20.0 and isinstance(cfg.grid.l, float)
    atom = cfg.make_measure().atoms[0]
    assert (atom.mass, atom.x, atom.y, atom.width) == (1.5, 1.0, -2.0, 0.8)
    assert cfg.output.snapshot_times == [0.5, 2.0]
    assert cfg.to_dict()["init"]["atoms"][0]["mass"] == 1.5


@pytest.mark.parametrize(
    "data, match",
    [
        ({"grid": {"size": 3}}, "unknown key"),
        ({"extra": 1}, "unknown top-level"),
        ({"grid": {"n": 64.5}}, "integer"),
        ({"params": {"tau": 0.0}}, "tau must be positive"),
        ({"init": {"atoms": [{"x": 1.0}]}}, "needs a mass"),
        ({"init": {"atoms": [{"mass": 1.0, "colour": 2}]}}, "unknown key"),
        ({"grid": {"l": 10.0}, "init": {"atoms": [{"mass": 1.0, "x": 7.0}]}}, "atom 0 .* outside the box"),
        ({"time": {"cfl": 1.5}}, "cfl"),
        ({"solver": {"mode": "magic"}}, "solver.mode"),
        ({"solver": {"mode": "picard", "q": 7.0}}, "inadmissible exponents"),
        ({"output": {"formats": ["hdf5"]}}, "unknown output formats"),
        ({"time": {"t_end": 1.0}, "output": {"snapshot_times": [2.0]}}, "snapshot time"),
        ({"seed": "x"}, "seed"),
        ({"init": {"background": "missing.ksf"}}, "does not exist"),
    ],
)
def test_invalid_configs_raise_specific_errors(data, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(data)


def test_unreadable_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[grid\nn = 3")
    with pytest.raises(ConfigError, match="bad.toml"):
        load_config(bad)


def test_background_snapshot_is_added(tmp_path):
    from kslab.field import Grid2D, gaussian_kernel
    from kslab.snapshot import write_snapshot

    g = Grid2D(64, 20.0)
    write_snapshot(tmp_path / "bg.ksf", gaussian_kernel(g, 1.0, 2.0), None, 0.0, Params())
    path = tmp_path / "run.toml"
    path.write_text('[grid]\nn = 64\nl = 20.0\n[init]\nbackground = "bg.ksf"\n')
    m = load_config(path).make_measure()
    assert m.background.integral() == pytest.approx(2.0)
