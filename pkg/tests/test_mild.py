import math

import numpy as np
import pytest

from kslab.field import Grid2D, MollifiedMeasure, Params, SpectralField, gaussian_kernel, lp_norm
from kslab.mild import (
    NonContractionError,
    TimeGrid,
    TimeSlab,
    apply_B,
    apply_L,
    bilinear,
    duhamel_rhs,
    free_evolution,
    heat_kernel_slab,
    operator_L,
    picard_solve,
    suggest_tau,
    tau_grid,
    triple_norm,
)

GRID = Grid2D(32, 2 * math.pi)
K = 2.0


def _mode(grid=GRID):
    x, _ = grid.mesh
    return SpectralField(grid, values=np.cos(K * x))


def _exact_L_amplitude(t, mu, tau, power):
    # tau^-1 int_0^t exp(-mu (t-s)) s^power ds, closed forms for power 0, 1, 2
    e = math.exp(-mu * t)
    if power == 0:
        val = (1 - e) / mu
    elif power == 1:
        val = t / mu - (1 - e) / mu**2
    else:
        val = t**2 / mu - 2 * t / mu**2 + 2 * (1 - e) / mu**3
    return val / tau


@pytest.mark.parametrize("power", [0, 1])
def test_L_is_exact_for_piecewise_linear_time_dependence(power):
    params = Params(tau=2.0, gamma=0.5)
    tg = TimeGrid(1.0, 16, 2.0)
    z = TimeSlab.from_function(tg, lambda t: _mode() * t**power, _mode() * (1.0 if power == 0 else 0.0))
    Lz = operator_L(z, params)
    mu = (K**2 + params.gamma) / params.tau
    x, _ = GRID.mesh
    for j in (4, 16):
        amp = _exact_L_amplitude(tg.nodes[j], mu, params.tau, power)
        expected = -K * np.sin(K * x) * amp
        assert np.max(np.abs(Lz[j - 1].x.values - expected)) < 1e-12
        assert np.max(np.abs(Lz[j - 1].y.values)) < 1e-12


def test_L_quadrature_converges_at_second_order():
    params = Params(tau=1.0)
    mu = K**2
    x, _ = GRID.mesh
    errs = []
    for count in (8, 16, 32, 64):
        tg = TimeGrid(1.0, count, 1.0)
        z = TimeSlab.from_function(tg, lambda t: _mode() * t**2, SpectralField.zeros(GRID))
        got = apply_L(z, 1.0, params).x.values
        expected = -K * np.sin(K * x) * _exact_L_amplitude(1.0, mu, 1.0, 2)
        errs.append(np.max(np.abs(got - expected)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.8)


def test_bilinear_is_linear_in_each_slot():
    g = Grid2D(32, 16.0)
    tg = TimeGrid(1.0, 16)
    params = Params(tau=1.0)
    u = heat_kernel_slab(tg, g, 1.0, 0.5)
    z1 = heat_kernel_slab(tg, g, 1.0, 0.3, (1.0, 0.0))
    z2 = heat_kernel_slab(tg, g, 2.0, 0.8, (-1.0, 1.0))
    lhs = bilinear(u, z1 * 2.0 + z2, params)
    rhs = bilinear(u, z1, params) * 2.0 + bilinear(u, z2, params)
    assert triple_norm(lhs - rhs, 1.5) < 1e-12 * triple_norm(rhs, 1.5)
    lhs = bilinear(u * 3.0, z1, params)
    rhs = bilinear(u, z1, params) * 3.0
    assert triple_norm(lhs - rhs, 1.5) < 1e-12 * triple_norm(rhs, 1.5)


def test_apply_B_matches_full_slab_at_a_node():
    g = Grid2D(32, 16.0)
    tg = TimeGrid(1.0, 16)
    params = Params(tau=1.0)
    u = heat_kernel_slab(tg, g, 1.0, 0.5)
    full = bilinear(u, u, params)
    t5 = tg.nodes[5]
    assert np.allclose(apply_B(u, u, t5, params).values, full.at(5).values, atol=1e-15)


def test_B_preserves_zero_mean():
    g = Grid2D(32, 16.0)
    tg = TimeGrid(1.0, 16)
    u = heat_kernel_slab(tg, g, 2.0, 0.5)
    b = bilinear(u, u, Params(tau=1.0))
    assert max(abs(f.integral()) for f in b.fields) < 1e-13


def test_apply_L_rejects_off_grid_times():
    tg = TimeGrid(1.0, 16)
    z = TimeSlab.zeros(tg, GRID)
    with pytest.raises(ValueError, match="not a node"):
        apply_L(z, 0.123, Params())


@pytest.mark.parametrize("kwargs", [dict(horizon=0.0), dict(horizon=1.0, count=4), dict(horizon=1.0, kappa=0.5)])
def test_time_grid_validation(kwargs):
    with pytest.raises(ValueError):
        TimeGrid(**kwargs)


def test_graded_nodes_are_increasing_and_end_at_horizon():
    t = TimeGrid(3.0, 20, 2.5).nodes
    assert t[0] == 0.0 and t[-1] == 3.0
    assert np.all(np.diff(t) > 0)


def test_triple_norm_of_heat_kernel_matches_closed_form():
    g = Grid2D(256, 40.0)
    tg = TimeGrid(4.0, 32)
    slab = free_evolution(MollifiedMeasure.single(1.0, 2 * g.spacing), g, tg)
    p = 1.5
    exact = (4 * math.pi) ** (1 / p - 1) * p ** (-1 / p)
    # mollified start sits slightly below the Dirac value
    assert triple_norm(slab, p) == pytest.approx(exact, rel=0.05)
    assert triple_norm(slab, p) <= exact


def test_free_evolution_of_empty_measure_is_zero():
    tg = TimeGrid(1.0, 8)
    slab = free_evolution(MollifiedMeasure(()), GRID, tg)
    assert all(lp_norm(f, math.inf) == 0 for f in slab.fields)


def test_picard_with_zero_data_converges_to_zero_immediately():
    tg = TimeGrid(1.0, 8)
    u, rep = picard_solve(MollifiedMeasure(()), Grid2D(32, 16.0), tg, Params())
    assert rep.converged and rep.iterates == 1
    assert triple_norm(u, 1.5) == 0.0


@pytest.fixture(scope="module")
def small_problem():
    g = Grid2D(64, 24.0)
    tg = TimeGrid(2.0, 24)
    params = Params(tau=2.0)
    u0 = MollifiedMeasure.single(1.0, 1.0)
    u, rep = picard_solve(u0, g, tg, params, tol=1e-12)
    return g, tg, params, u0, u, rep


def test_picard_fixed_point_residual(small_problem):
    g, tg, params, u0, u, rep = small_problem
    assert rep.converged
    assert rep.contraction_ratio < 1
    assert triple_norm(duhamel_rhs(u0, u, params) - u, 1.5) < 1e-11


def test_small_data_fixed_point_is_unique_from_several_starts(small_problem):
    g, tg, params, u0, u, rep = small_problem
    starts = [
        TimeSlab.zeros(tg, g),
        heat_kernel_slab(tg, g, 3.0, 0.5, (2.0, -1.0)),
        heat_kernel_slab(tg, g, -1.0, 1.0),
    ]
    for s in starts:
        w, r = picard_solve(u0, g, tg, params, tol=1e-12, start=s)
        assert r.converged
        assert triple_norm(w - u, 1.5) < 1e-10


def test_picard_report_text_lists_history(small_problem):
    rep = small_problem[-1]
    text = rep.to_text()
    assert "converged = true" in text
    assert text.count("e") >= len(rep.residual_history)


def test_large_mass_small_tau_does_not_contract():
    g = Grid2D(64, 20.0)
    tg = TimeGrid(1.0, 16)
    u0 = MollifiedMeasure.single(10 * math.pi, 0.8)
    with pytest.raises(NonContractionError) as info:
        picard_solve(u0, g, tg, Params(tau=0.05), max_iter=40)
    assert info.value.ratio > 1


def test_picard_rejects_p_outside_window():
    with pytest.raises(ValueError):
        picard_solve(None, GRID, TimeGrid(1.0, 8), Params(), p=2.5)


class _PowerModel:
    def __call__(self, tau):
        return 0.2 * tau ** (-0.5)


@pytest.mark.parametrize("mass", [0.5, 2.0, 10.0, 40.0])
def test_suggest_tau_is_smallest_grid_point_below_threshold(mass):
    model = _PowerModel()
    p = 1.5
    c = (4 * math.pi) ** (1 / p - 1) * p ** (-1 / p) * mass
    tau = suggest_tau(MollifiedMeasure.single(mass, 1.0), p, 4.0, model)
    grid = tau_grid()
    assert tau in grid
    assert c * model(tau) < 0.25
    k = int(np.searchsorted(grid, tau))
    if k > 0:
        assert c * model(grid[k - 1]) >= 0.25


def test_suggest_tau_grows_with_mass():
    model = _PowerModel()
    taus = [suggest_tau(MollifiedMeasure.single(m, 1.0), model=model) for m in (1, 5, 25, 125)]
    assert taus == sorted(taus)
    assert taus[-1] > taus[0]


def test_suggest_tau_uses_total_variation_for_signed_fields():
    g = Grid2D(64, 20.0)
    f = gaussian_kernel(g, 1.0, 5.0, (3.0, 0.0)) - gaussian_kernel(g, 1.0, 5.0, (-3.0, 0.0))
    model = _PowerModel()
    assert suggest_tau(f, model=model) == suggest_tau(MollifiedMeasure.single(10.0, 1.0), model=model)
