import numpy as np
import pytest

from kslab.evolution import EvolutionState
from kslab.field import Grid2D, Params, SpectralField, gaussian_kernel
from kslab.mild import TimeGrid, heat_kernel_slab
from kslab.snapshot import SnapshotError, read_slab, read_snapshot, read_state, write_slab, write_snapshot, write_state


@pytest.fixture
def fields():
    g = Grid2D(32, 10.0)
    return g, gaussian_kernel(g, 0.5, 2.0), gaussian_kernel(g, 1.0, -1.0, (1.0, 1.0))


def test_roundtrip_is_bit_exact(tmp_path, fields):
    g, u, v = fields
    path = write_snapshot(tmp_path / "a.ksf", u, v, 1.25, Params(3.0, 0.5))
    u2, v2, t, params = read_snapshot(path)
    assert np.array_equal(u2.values, u.values) and np.array_equal(v2.values, v.values)
    assert t == 1.25 and params == Params(3.0, 0.5) and u2.grid == g


def test_file_size_matches_layout(tmp_path, fields):
    g, u, v = fields
    path = write_snapshot(tmp_path / "a.ksf", u, None, 0.0, Params())
    assert path.stat().st_size == 4 + 8 * 5 + 16 * g.n**2


def test_state_roundtrip(tmp_path, fields):
    g, u, v = fields
    s = EvolutionState(u, v, 2.0, Params(2.0))
    s2 = read_state(write_state(tmp_path / "s.ksf", s))
    assert s2.t == 2.0 and np.array_equal(s2.u.values, u.values)


@pytest.mark.parametrize(
    "mutate, reason",
    [
        (lambda b: b[:10], "shorter than"),
        (lambda b: b"XXXX" + b[4:], "bad magic"),
        (lambda b: b[:-8], "expected"),
        (lambda b: b[:60] + np.array([np.nan]).tobytes() + b[68:], "non-finite"),
    ],
)
def test_corrupt_files_raise_and_name_the_file(tmp_path, fields, mutate, reason):
    g, u, v = fields
    path = write_snapshot(tmp_path / "bad.ksf", u, v, 0.0, Params())
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(SnapshotError, match=reason) as info:
        read_snapshot(path)
    assert "bad.ksf" in str(info.value)


def test_missing_file(tmp_path):
    with pytest.raises(SnapshotError, match="cannot read"):
        read_snapshot(tmp_path / "none.ksf")


def test_write_leaves_no_temporary_files(tmp_path, fields):
    g, u, v = fields
    write_snapshot(tmp_path / "a.ksf", u, v, 0.0, Params())
    assert sorted(p.name for p in tmp_path.iterdir()) == ["a.ksf"]


def test_slab_checkpoint_roundtrip(tmp_path):
    g = Grid2D(32, 10.0)
    tg = TimeGrid(1.0, 8)
    slab = heat_kernel_slab(tg, g, 1.0, 0.1)
    files = write_slab(tmp_path / "slab", slab, Params())
    assert files[-1].name == "index.txt" and len(files) == 9
    back = read_slab(tmp_path / "slab", tg)
    for a, b in zip(slab.fields, back.fields):
        assert np.array_equal(a.values, b.values)


def test_slab_index_must_match_time_grid(tmp_path):
    g = Grid2D(32, 10.0)
    slab = heat_kernel_slab(TimeGrid(1.0, 8), g, 1.0, 0.1)
    write_slab(tmp_path, slab, Params())
    with pytest.raises(SnapshotError, match="expected nodes"):
        read_slab(tmp_path, TimeGrid(1.0, 10))
    with pytest.raises(SnapshotError, match="does not match"):
        read_slab(tmp_path, TimeGrid(2.0, 8))


def test_mismatched_grids_rejected(tmp_path):
    u = SpectralField.zeros(Grid2D(32, 10.0))
    v = SpectralField.zeros(Grid2D(32, 12.0))
    with pytest.raises(ValueError):
        write_snapshot(tmp_path / "x.ksf", u, v, 0.0, Params())
