import csv
import math

import numpy as np
import pytest

from kslab.evolution import (
    TIMESERIES_HEADER,
    BlowupDetector,
    EvolutionState,
    Status,
    StepController,
    detect_blowup,
    run,
    spectral_tail_fraction,
    step,
    write_timeseries,
)
from kslab.field import (
    Grid2D,
    MollifiedMeasure,
    Params,
    SpectralField,
    gaussian_kernel,
    heat_propagate,
    lp_norm,
    screened_propagate,
)


@pytest.fixture
def grid():
    return Grid2D(64, 20.0)


def test_zero_state_stays_zero(grid):
    s = EvolutionState.initial(SpectralField.zeros(grid), grid, Params())
    ctrl = StepController(dt=1e-2)
    for _ in range(5):
        s = step(s, ctrl)
    assert lp_norm(s.u, math.inf) == 0 and lp_norm(s.v, math.inf) == 0


def test_uncoupled_step_is_exact_heat_flow(grid):
    params = Params(tau=3.0, gamma=0.7)
    u0 = gaussian_kernel(grid, 0.5, 2.0)
    v0 = gaussian_kernel(grid, 1.0, 1.0, (2.0, 0.0))
    s = EvolutionState(u0, v0, 0.0, params)
    ctrl = StepController(dt=0.05, dt_max=0.05)
    for _ in range(10):
        s = step(s, ctrl, dt=0.05, coupling=False)
    assert np.allclose(s.u.values, heat_propagate(u0, 0.5).values, atol=1e-13)
    assert np.allclose(s.v.values, screened_propagate(v0, 0.5, params).values, atol=1e-13)


def test_uniform_density_feeds_screened_source_ode(grid):
    # u = c everywhere: grad v stays zero, tau v' = -gamma v + c
    c, tau, gamma = 2.0, 2.0, 0.5
    params = Params(tau=tau, gamma=gamma)
    u0 = SpectralField(grid, values=np.full((64, 64), c))
    states, verdict = run(u0, 1.0, params, StepController(dt=1e-3, dt_max=1e-3))
    v = states[-1].v.values
    exact = c / gamma * (1 - math.exp(-gamma / tau))
    assert verdict.status is Status.COMPLETED
    assert np.max(np.abs(v - exact)) < 1e-6
    assert np.allclose(states[-1].u.values, c, atol=1e-13)


def test_mass_is_conserved_in_coupled_run(grid):
    params = Params(tau=1.0)
    series = []
    states, verdict = run(MollifiedMeasure.single(4.0, 1.0), 1.0, params, StepController(dt=5e-3), grid=grid, series=series)
    masses = np.array([r[1] for r in series])
    assert verdict.status is Status.COMPLETED
    assert np.max(np.abs(masses - 4.0)) < 1e-11


def test_small_mass_solution_stays_positive(grid):
    states, _ = run(MollifiedMeasure.single(1.0, 0.8), 2.0, Params(tau=0.5), StepController(dt=5e-3), grid=grid)
    assert states[-1].u.values.min() > -1e-10


def test_time_stepping_is_second_order(grid):
    params = Params(tau=0.5)
    s0 = EvolutionState.initial(MollifiedMeasure.single(6.0, 1.0), grid, params)

    def advance(dt, horizon=0.4):
        s = s0
        ctrl = StepController(dt=dt, dt_max=dt)
        for _ in range(int(round(horizon / dt))):
            s = step(s, ctrl, dt=dt)
        return s.u

    ref = advance(0.4 / 640)
    errs = [lp_norm(advance(0.4 / k) - ref, 2) for k in (20, 40, 80)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.9)


def test_run_returns_requested_snapshots(grid):
    series = []
    states, _ = run(
        MollifiedMeasure.single(1.0, 1.0), 1.0, Params(), StepController(dt=0.03), snapshots=[0.0, 0.25, 1.0], grid=grid, series=series
    )
    assert [s.t for s in states] == pytest.approx([0.0, 0.25, 1.0], abs=1e-12)
    assert series[0][0] == 0.0 and series[-1][0] == pytest.approx(1.0)


def test_run_continues_from_a_state(grid):
    params = Params()
    s0 = EvolutionState.initial(MollifiedMeasure.single(1.0, 1.0), grid, params, t=1.0)
    states, _ = run(s0, 0.5, params, StepController(dt=0.05))
    assert states[-1].t == pytest.approx(1.5)


def test_timeseries_file_has_header_and_rows(tmp_path, grid):
    series = []
    run(MollifiedMeasure.single(1.0, 1.0), 0.1, Params(), StepController(dt=0.05), grid=grid, series=series)
    path = tmp_path / "ts.csv"
    write_timeseries(path, series)
    rows = list(csv.reader(open(path)))
    assert tuple(rows[0]) == TIMESERIES_HEADER
    assert len(rows) == len(series) + 1


def test_detector_zero_and_smooth_fields_complete(grid):
    params = Params()
    zero = EvolutionState.initial(SpectralField.zeros(grid), grid, params)
    assert detect_blowup(zero).status is Status.COMPLETED
    smooth = EvolutionState.initial(gaussian_kernel(grid, 1.0), grid, params)
    assert detect_blowup(smooth, 1.0).status is Status.COMPLETED
    assert spectral_tail_fraction(smooth.u) < 1e-10


def test_detector_flags_grid_scale_oscillation_as_resolution_loss(grid):
    x, y = grid.mesh
    k = 2 * math.pi / grid.l * 30
    f = SpectralField(grid, values=1 + 0.5 * np.cos(k * x))
    s = EvolutionState.initial(f, grid, Params())
    v = detect_blowup(s, float(np.abs(f.values).max()))
    assert v.status is Status.RESOLUTION_LOST
    assert v.exit_code == 3


def test_detector_flags_peak_growth_as_blowup(grid):
    f = gaussian_kernel(grid, 0.01)
    s = EvolutionState.initial(f, grid, Params())
    v = detect_blowup(s, 1e-9)
    assert v.status is Status.BLOWUP_SUSPECTED
    assert v.exit_code == 2


def test_concentration_with_tail_overflow_counts_as_blowup(grid):
    f = gaussian_kernel(grid, 0.02)
    s = EvolutionState.initial(f, grid, Params())
    peak = float(f.values.max())
    assert spectral_tail_fraction(f) > 0.01
    assert detect_blowup(s, peak / 10).status is Status.BLOWUP_SUSPECTED
    assert detect_blowup(s, peak, BlowupDetector()).status is Status.RESOLUTION_LOST


def test_step_controller_validates():
    with pytest.raises(ValueError):
        StepController(cfl_target=1.5)
    with pytest.raises(ValueError):
        StepController(dt_min=1.0, dt_max=0.1)


def test_run_rejects_non_positive_horizon(grid):
    with pytest.raises(ValueError):
        run(SpectralField.zeros(grid), 0.0, Params())
