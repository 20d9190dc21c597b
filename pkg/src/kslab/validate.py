"""Acceptance suite: twelve end-to-end checks at desk scale.

Each check returns a :class:`CheckResult`.  ``quick=True`` swaps in
coarser grids for the expensive checks; tolerances are then widened by
the factors listed in the result's warnings.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .estimates import (
    ExponentSet,
    QuadraticToy,
    TestFunction,
    beta_constant,
    eta_empirical,
    quadratic_roots,
    singular_time_integral,
    toy_picard,
    weak_attainment_probe,
)
from .evolution import StepController, Status, run, self_similarity_residual
from .field import (
    DomainSaturationWarning,
    Grid2D,
    MollifiedMeasure,
    Params,
    SpectralField,
    gaussian_kernel,
    heat_propagate,
    l2_distance,
    lp_norm,
    realize_measure,
)
from .mild import (
    TimeGrid,
    bilinear,
    duhamel_rhs,
    heat_kernel_slab,
    operator_L,
    picard_solve,
    triple_norm,
    weighted_norm_curve,
)
from .selfsim import (
    EIGHT_PI,
    OdeSettings,
    find_tau_star,
    integrate_profile,
    lower_bound_m_tau,
    mass_curve,
    m_tau_trend,
    profile_mass,
    profile_to_initial_state,
)


@dataclass
class CheckResult:
    passed: bool
    detail: str
    warnings: List[str] = field(default_factory=list)
    seconds: float = 0.0


@dataclass(frozen=True)
class Criterion:
    number: int
    name: str
    func: Callable[..., CheckResult]


def _fmt(x: float) -> str:
    return f"{x:.4g}"


def check_heat_exactness(quick: bool = False) -> CheckResult:
    g = Grid2D(256, 40.0)
    s0 = 1.0  # per-axis variance of the input Gaussian
    f = gaussian_kernel(g, s0 / 2)
    t = 1.0
    out = heat_propagate(f, t)
    exact = gaussian_kernel(g, (s0 + 2 * t) / 2)
    err = np.abs(out.values - exact.values).max() / np.abs(exact.values).max()
    two = heat_propagate(heat_propagate(f, 0.3), 0.7)
    one = heat_propagate(f, 1.0)
    semi = np.abs(two.values - one.values).max() / np.abs(one.values).max()
    ok = err < 1e-8 and semi < 1e-13
    return CheckResult(ok, f"gaussian max rel err {_fmt(err)} (< 1e-8), semigroup {_fmt(semi)} (< 1e-13)")


def check_gaussian_norm(quick: bool = False) -> CheckResult:
    g = Grid2D(1024, 64.0)
    eps = 2 * g.spacing
    u0 = realize_measure(MollifiedMeasure.single(1.0, eps), g)
    t = 32.0
    val = math.sqrt(t) * lp_norm(heat_propagate(u0, t), 2)
    target = (8 * math.pi) ** -0.5
    err = abs(val - target)
    return CheckResult(err < 1e-4, f"t^(1/2)||e^(tD) delta_eps||_2 = {val:.6f} vs {target:.6f}, |diff| {_fmt(err)} (< 1e-4)")


def check_beta_identity(quick: bool = False) -> CheckResult:
    e = ExponentSet(1.5, 4.0)
    c = beta_constant(*e.beta_arguments)
    worst = 0.0
    for t in (0.5, 1.0, 2.0):
        ref = singular_time_integral(e.p, e.q, t)
        worst = max(worst, abs(c * t ** (1 / e.p - 1) - ref) / ref)
    return CheckResult(worst < 1e-6, f"C(p,q) = {c:.10f}, worst rel diff {_fmt(worst)} (< 1e-6)")


def _slope(t, y, lo, hi):
    keep = (t >= lo - 1e-12) & (t <= hi + 1e-12)
    return float(np.polyfit(np.log(t[keep]), np.log(y[keep]), 1)[0])


def check_scaling_laws(quick: bool = False) -> CheckResult:
    p, q = 1.5, 4.0
    if quick:
        g, tg, tol = Grid2D(256, 40.0), TimeGrid(4.0, 64), 5e-3
    else:
        g, tg, tol = Grid2D(512, 40.0), TimeGrid(4.0, 128), 1e-3
    z = heat_kernel_slab(tg, g, 1.0, 0.0)
    params = Params(1.0, 0.0)
    t = tg.nodes
    pick = [j for j in range(1, len(t)) if t[j] >= 0.25 - 1e-12]
    times = t[pick]
    L = operator_L(z, params)
    Ln = np.array([lp_norm(SpectralField(g, values=L[j - 1].magnitude()), q) for j in pick])
    B = bilinear(z, z, params)
    Bn = np.array([lp_norm(B.at(j), p) for j in pick])
    sl_L = _slope(times, Ln, 0.25, 4.0)
    sl_B = _slope(times, Bn, 0.25, 4.0)
    eL, eB = abs(sl_L - (1 / q - 0.5)), abs(sl_B - (1 / p - 1))
    warn = ["quick mode: coarse grid, tolerance 5e-3"] if quick else []
    return CheckResult(
        eL < tol and eB < tol,
        f"L slope {sl_L:.6f} (target {1 / q - 0.5:.6f}), B slope {sl_B:.6f} (target {1 / p - 1:.6f}), tol {tol:g}",
        warn,
    )


def check_eta_decay(quick: bool = False) -> CheckResult:
    e = ExponentSet(1.5, 4.0)
    taus = [1.0, 3.0, 10.0, 30.0, 100.0]
    kw = dict(space=Grid2D(128, 40.0), tgrid=TimeGrid(4.0, 32)) if quick else {}
    m = eta_empirical(e, taus, **kw)
    target = e.decay_exponent
    ok_slope = abs(m.slope - target) <= 0.15 * abs(target)
    ok = ok_slope and m.strictly_decreasing()
    return CheckResult(
        ok,
        f"fitted slope {m.slope:.4f} +- {m.slope_stderr:.3f} vs {target:.4f} +- 15%; "
        f"strictly decreasing: {m.strictly_decreasing()}",
        ["quick mode: 128^2 grid"] if quick else [],
    )


def check_picard_cross(quick: bool = False) -> CheckResult:
    g = Grid2D(128 if quick else 256, 40.0 if not quick else 20.0)
    tg = TimeGrid(1.0, 64)
    m = MollifiedMeasure.single(0.1)
    params = Params(1.0, 0.0)
    tol = 1e-10
    u, rep = picard_solve(m, g, tg, params, p=1.5, tol=tol)
    fixed = triple_norm(u - duhamel_rhs(m, u, params), 1.5)
    states, _ = run(m, 1.0, params, StepController(dt=1e-3, dt_max=1e-3), grid=g)
    dist = l2_distance(u.at(tg.count), states[-1].u)
    mass = max(abs(f.integral() - 0.1) / 0.1 for f in u.fields)
    ok = rep.converged and 0 < rep.contraction_ratio < 1 and fixed < 2 * tol and dist < 1e-4 and mass < 1e-8
    return CheckResult(
        ok,
        f"{rep.iterates} iterations, ratio {_fmt(rep.contraction_ratio)}, fixed-point residual {_fmt(fixed)}, "
        f"L2 to IMEX {_fmt(dist)}, mass err {_fmt(mass)}",
    )


def check_smoothing(quick: bool = False) -> CheckResult:
    g = Grid2D(128 if quick else 256, 80.0)
    tg = TimeGrid(10.0, 64)
    m = MollifiedMeasure.single(1.0, 1.0)
    u, rep = picard_solve(m, g, tg, Params(1.0, 0.0), tol=1e-10)
    curves = {p: weighted_norm_curve(u, p) for p in (1.0, 1.5, 2.0, 4.0, math.inf)}
    finite = all(np.all(np.isfinite(c)) for c in curves.values())
    inf_curve = curves[math.inf]
    ratio = inf_curve.max() / np.median(inf_curve)
    ok = rep.converged and finite and ratio <= 3
    sups = ", ".join(f"p={p:g}: {c.max():.4g}" for p, c in curves.items())
    return CheckResult(ok, f"sup_t t^(1-1/p)||u||_p: {sups}; p=inf max/median {ratio:.3f} (<= 3)")


def check_large_tau(quick: bool = False) -> CheckResult:
    g = Grid2D(128 if quick else 256, 80.0)
    M = 10 * math.pi
    rows: list = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DomainSaturationWarning)
        states, verdict = run(
            MollifiedMeasure.single(M), 10.0, Params(50.0, 0.0), StepController(dt=1e-3, dt_max=1e-2),
            grid=g, series=rows, check_every=10,
        )
    drift = max(abs(r[1] - M) / M for r in rows)
    ok = verdict.status is Status.COMPLETED and drift < 1e-8 and abs(verdict.t_event - 10.0) < 1e-9
    return CheckResult(ok, f"status {verdict.status.value} at t={verdict.t_event:.4g}, max mass drift {_fmt(drift)}")


def check_selfsim_suite(quick: bool = False) -> CheckResult:
    s = OdeSettings()
    parts = []
    ok = True
    # (a) small-a mass law, uniformly in tau
    worst = max(abs(profile_mass(1e-3, tau, s) / (4 * math.pi * 1e-3) - 1) for tau in (0.5, 1.0, 10.0, 100.0))
    a01 = abs(profile_mass(0.01, 1.0, s) / (4 * math.pi * 0.01) - 1)
    ok_a = worst < 0.02 and a01 < 0.02
    parts.append(f"(a) M/4pi a - 1: {_fmt(worst)} at a=1e-3, {_fmt(a01)} at a=0.01")
    # (b) tau = 0.5 stays below 8 pi
    c05 = mass_curve(0.5, settings=s)
    ok_b = c05.m_tau <= EIGHT_PI + 0.1
    parts.append(f"(b) tau=0.5 max M - 8pi = {c05.m_tau - EIGHT_PI:.4f}")
    # (c) tau = 10: mass above 8 pi, pairs above 8 pi, residuals
    c10 = mass_curve(10.0, settings=s)
    above = [pr for pr in c10.pairs if pr[2] > EIGHT_PI and pr[0] != pr[1]]
    res = max(max(integrate_profile(a, 10.0, s).residuals()) for a, _ in c10.samples)
    if above:
        res = max(res, *(max(integrate_profile(a, 10.0, s).residuals()) for pr in above[:3] for a in pr[:2]))
    ok_c = c10.m_tau > EIGHT_PI and bool(above) and res < 1e-8
    parts.append(f"(c) tau=10 m_tau {c10.m_tau:.4f}, {len(above)} pairs above 8pi, max residual {_fmt(res)}")
    # (d) tau*
    ts = find_tau_star(0.5, 0.8, s)
    ok_d = 0.55 < ts < 0.75
    parts.append(f"(d) tau* = {ts:.4f}")
    # (e) tau = 100 lower bound
    c100 = mass_curve(100.0, settings=s)
    # stated threshold 99.39; the closed form evaluates to 99.381
    lb = max(lower_bound_m_tau(100.0), 99.39)
    ok_e = c100.m_tau >= lb
    parts.append(f"(e) tau=100 m_tau {c100.m_tau:.3f} >= {lb:.2f} (bound formula {lower_bound_m_tau(100.0):.3f})")
    # (f) strict growth over tau = 2, 10, 100
    try:
        trend = m_tau_trend([2.0, 10.0, 100.0], s)
        ok_f = True
        parts.append("(f) m_tau " + " < ".join(f"{m:.3f}" for _, m in trend))
    except AssertionError as exc:
        ok_f = False
        parts.append(f"(f) {exc}")
    flags = dict(a=ok_a, b=ok_b, c=ok_c, d=ok_d, e=ok_e, f=ok_f)
    ok = all(flags.values())
    failed = [k for k, v in flags.items() if not v]
    tail = f"; failed parts: {','.join(failed)}" if failed else ""
    return CheckResult(ok, "; ".join(parts) + tail)


def check_nonuniqueness(quick: bool = False) -> CheckResult:
    from scipy.optimize import brentq

    tau = 10.0
    s = OdeSettings()
    # the pair sharing the mass of a = 62.2 on the falling branch
    a2 = 62.22570836730231
    M = profile_mass(a2, tau, s)
    a1 = brentq(lambda a: profile_mass(a, tau, s) - M, 25.0, 45.0, xtol=1e-13)
    g = Grid2D(256 if quick else 512, 32.0)
    dt = 0.002
    finals = []
    resid = []
    for a in (a1, a2):
        prof = integrate_profile(a, tau, s)
        st = profile_to_initial_state(prof, g)
        states, verdict = run(st, 3.0, Params(tau, 0.0), StepController(dt=dt, dt_max=dt), snapshots=[2.0, 3.0, 4.0])
        if verdict.status is not Status.COMPLETED:
            return CheckResult(False, f"profile a={a:.4f} run stopped: {verdict.status.value}")
        resid.append(self_similarity_residual(states, prof))
        finals.append(states)
    gap = min(l2_distance(x.u, y.u) for x, y in zip(*finals))
    tol = 2e-3 if quick else 1e-3
    ok = M > EIGHT_PI and max(resid) < tol and gap > 0.05
    return CheckResult(
        ok,
        f"M = {M:.4f} at a = {a1:.4f}, {a2:.4f}; self-similarity residuals {_fmt(resid[0])}, {_fmt(resid[1])} "
        f"(< {tol:g}); min relative L2 gap {gap:.4f} (> 0.05)",
        ["quick mode: 256^2 grid, residual tolerance 2e-3"] if quick else [],
    )


def check_quadratic_toy(quick: bool = False) -> CheckResult:
    toy = QuadraticToy(3 / 16, 1.0)
    roots = quadratic_roots(toy)
    val, _, conv = toy_picard(toy, 0.0)
    _, _, conv_hi = toy_picard(toy, 0.75 + 1e-6)
    ok = (
        roots is not None
        and abs(roots[0] - 0.25) < 1e-14
        and abs(roots[1] - 0.75) < 1e-14
        and conv
        and abs(val - 0.25) < 1e-12
        and not conv_hi
    )
    return CheckResult(ok, f"roots {roots}, Picard from 0 -> {val:.15f}, start above 3/4 diverges: {not conv_hi}")


def check_weak_attainment(quick: bool = False) -> CheckResult:
    g = Grid2D(128 if quick else 256, 20.0)
    eps = 2 * g.spacing
    m = MollifiedMeasure.single(0.1, eps)
    tg = TimeGrid(1.0, 64)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DomainSaturationWarning)
        u, rep = picard_solve(m, g, tg, Params(1.0, 0.0), tol=1e-12)
    bump = TestFunction("bump", 6.0, name="bump")
    # the Lipschitz cone is where the sqrt(t) rate is sharp; reported for comparison
    cone = TestFunction("cone", 6.0, name="cone")
    r = weak_attainment_probe(u, m, [bump, cone])
    expo = r.fitted_exponent("bump", 0.01, 1.0)
    c = r.rate_constant("bump", bump, eps)
    expo_cone = r.fitted_exponent("cone", 0.01, 1.0)
    ok = 0.4 <= expo <= 0.6 and c <= 10
    return CheckResult(
        ok,
        f"bump: fitted exponent {expo:.4f} over t in [0.01, 1] (need [0.4, 0.6]), rate constant {c:.3f} (<= 10); "
        f"cone for comparison: exponent {expo_cone:.4f}",
    )


CRITERIA: List[Criterion] = [
    Criterion(1, "heat propagator exactness", check_heat_exactness),
    Criterion(2, "closed-form Gaussian norm", check_gaussian_norm),
    Criterion(3, "Beta-constant identity", check_beta_identity),
    Criterion(4, "bilinear scaling laws", check_scaling_laws),
    Criterion(5, "eta(tau) decay slope", check_eta_decay),
    Criterion(6, "Picard contraction and cross-solver agreement", check_picard_cross),
    Criterion(7, "smoothing estimate along the solution", check_smoothing),
    Criterion(8, "large-tau global run", check_large_tau),
    Criterion(9, "self-similar profile suite", check_selfsim_suite),
    Criterion(10, "non-uniqueness exhibit", check_nonuniqueness),
    Criterion(11, "quadratic toy", check_quadratic_toy),
    Criterion(12, "weak attainment rate", check_weak_attainment),
]


def run_criterion(c: Criterion, quick: bool = False) -> CheckResult:
    start = time.perf_counter()
    try:
        res = c.func(quick=quick)
    except Exception as exc:  # reported as a failure, never swallowed silently
        res = CheckResult(False, f"raised {type(exc).__name__}: {exc}")
    res.seconds = time.perf_counter() - start
    return res


def format_line(c: Criterion, res: CheckResult) -> str:
    mark = "PASS" if res.passed else "FAIL"
    return f"[{mark}] {c.number:2d}. {c.name}: {res.detail} ({res.seconds:.1f}s)"


def run_suite(only: Optional[Sequence[int]] = None, quick: bool = False, echo: Callable[[str], None] = print) -> Dict[int, CheckResult]:
    results = {}
    for c in CRITERIA:
        if only and c.number not in only:
            continue
        res = run_criterion(c, quick)
        results[c.number] = res
        echo(format_line(c, res))
        for w in res.warnings:
            echo(f"       warning: {w}")
    n_pass = sum(r.passed for r in results.values())
    echo(f"{n_pass}/{len(results)} criteria passed")
    return results
