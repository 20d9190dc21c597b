"""Radial self-similar profiles ``u = U(|x|/sqrt t)/t``, ``v = V(|x|/sqrt t)`` (gamma = 0).

Substituting the ansatz into the system gives

    V'' + (1/xi + tau*xi/2) V' + U = 0,
    U' = U (V' - xi/2)   =>   U = a * exp(V - xi**2/4),  V(0) = 0,

so a profile is fixed by the central density ``a = U(0)``.  The ODE is
integrated in ``s = log(xi)`` with state ``(V, W = xi V', m)`` where ``m``
is the enclosed mass; near the origin a fourth-order series is used.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .field import Grid2D, Params, SpectralField

log = logging.getLogger(__name__)

EIGHT_PI = 8 * math.pi


class ProfileError(RuntimeError):
    def __init__(self, a: float, tau: float, xi_last: float, message: str):
        self.a, self.tau, self.xi_last = a, tau, xi_last
        super().__init__(f"profile a={a:g}, tau={tau:g} failed at xi={xi_last:.4g}: {message}")


@dataclass(frozen=True)
class OdeSettings:
    xi_start: float = 1e-3
    xi_max: float = 20.0
    rel_tol: float = 1e-12
    abs_tol: float = 1e-15
    n_xi: int = 2001

    def __post_init__(self):
        if not 0 < self.xi_start < 1 < self.xi_max:
            raise ValueError("need 0 < xi_start < 1 < xi_max")


def default_a_grid(points: int = 200, lo: float = 1e-3, hi: float = 1e3) -> np.ndarray:
    return np.logspace(math.log10(lo), math.log10(hi), points)


@dataclass
class RadialProfile:
    a: float
    tau: float
    xi: np.ndarray
    U: np.ndarray
    V: np.ndarray
    mass: float
    v_inf: float
    xi_min: float = 0.0
    _sol: Optional[object] = field(default=None, repr=False, compare=False)

    @property
    def xi_max(self) -> float:
        return float(self.xi[-1]) if len(self.xi) else 0.0

    def V_at(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        if self.a == 0:
            return np.zeros_like(xi)
        out = np.empty_like(xi)
        a, tau = self.a, self.tau
        core = xi < self.xi_min
        far = xi > self.xi_max
        mid = ~core & ~far
        x = xi[core]
        out[core] = -a * x**2 / 4 + a * (a + 1 + tau) * x**4 / 64
        if mid.any():
            out[mid] = self._sol(np.log(xi[mid]))[0]
        out[far] = self.v_inf
        return out

    def U_at(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        return self.a * np.exp(self.V_at(xi) - xi**2 / 4)

    def density_field(self, grid: Grid2D, t: float = 1.0) -> SpectralField:
        """``U(|x|/sqrt t)/t`` on ``grid``."""
        need = needed_range(grid, t)
        if self.a > 0 and self.xi_max < need:
            raise ValueError(f"profile reaches xi={self.xi_max:g}, the grid needs {need:g}")
        return SpectralField(grid, values=self.U_at(grid.radius / math.sqrt(t)) / t)

    def potential_field(self, grid: Grid2D, t: float = 1.0, shift: Optional[float] = None) -> SpectralField:
        """``V(|x|/sqrt t) - shift``; the default shift is ``V(infinity)``."""
        ref = self.v_inf if shift is None else shift
        return SpectralField(grid, values=self.V_at(grid.radius / math.sqrt(t)) - ref)

    def quadrature_mass(self, points: Optional[int] = None) -> float:
        """Composite Simpson mass on a log-uniform grid, plus core and tail pieces."""
        if self.a == 0:
            return 0.0
        n = len(self.xi) if points is None else points
        if n % 2 == 0:
            n += 1
        s = np.linspace(math.log(self.xi_min), math.log(self.xi_max), n)
        x = np.exp(s)
        f = 2 * math.pi * x**2 * self.U_at(x)
        h = s[1] - s[0]
        body = h / 3 * (f[0] + f[-1] + 4 * f[1:-1:2].sum() + 2 * f[2:-1:2].sum())
        core = math.pi * self.a * self.xi_min**2 * (1 - (self.a + 1) * self.xi_min**2 / 8)
        return body + core + self.tail_mass()

    def tail_mass(self) -> float:
        return 4 * math.pi * self.a * math.exp(self.v_inf - self.xi_max**2 / 4)

    def residuals(self, points: int = 400) -> Tuple[float, float]:
        """Relative max-norm residuals of the radial system and of the first integral.

        Derivatives come from fourth-order central differences in ``log xi``
        applied to the interpolated solution ``(V, xi V')``, independently
        of the right-hand side used by the integrator.  Each residual is
        scaled by the largest of its terms along the profile.
        """
        if self.a == 0:
            return 0.0, 0.0
        d = 5e-3
        s = np.linspace(math.log(self.xi_min) + 3 * d, math.log(self.xi_max) - 3 * d, points)
        W = lambda ss: self._sol(ss)[1]
        U = lambda ss: self.U_at(np.exp(ss))
        x = np.exp(s)
        Vs = W(s)
        Vss = (-W(s + 2 * d) + 8 * W(s + d) - 8 * W(s - d) + W(s - 2 * d)) / (12 * d)
        Us = (-U(s + 2 * d) + 8 * U(s + d) - 8 * U(s - d) + U(s - 2 * d)) / (12 * d)
        u = U(s)
        # xi**2 * (V'' + (1/xi + tau xi/2) V' + U) in log variables
        sys_terms = np.abs(Vss) + np.abs(self.tau * x**2 * Vs / 2) + np.abs(x**2 * u)
        sys_res = Vss + self.tau * x**2 * Vs / 2 + x**2 * u
        # xi U' - xi U V' + xi**2 U / 2 in log variables
        fi_terms = np.abs(Us) + np.abs(u * Vs) + np.abs(x**2 * u / 2)
        fi_res = Us - u * Vs + x**2 * u / 2
        scale_s = max(float(sys_terms.max()), 1e-300)
        scale_f = max(float(fi_terms.max()), 1e-300)
        return float(np.abs(sys_res).max() / scale_s), float(np.abs(fi_res).max() / scale_f)


def _zero_profile(tau: float, settings: OdeSettings) -> RadialProfile:
    xi = np.geomspace(settings.xi_start, settings.xi_max, settings.n_xi)
    z = np.zeros_like(xi)
    return RadialProfile(0.0, tau, xi, z, z.copy(), 0.0, 0.0, settings.xi_start)


def integrate_profile(a: float, tau: float, settings: OdeSettings = OdeSettings()) -> RadialProfile:
    if a < 0 or not tau > 0:
        raise ValueError("need a >= 0 and tau > 0")
    if a == 0:
        return _zero_profile(tau, settings)
    # the core has width ~ a**-1/2; keep the series argument a*xi**2 small
    x0 = settings.xi_start * min(1.0, 1.0 / math.sqrt(a))
    w4 = a * (a + 1 + tau) / 16
    y0 = [-a * x0**2 / 4 + w4 * x0**4 / 4, -a * x0**2 / 2 + w4 * x0**4, math.pi * a * x0**2 * (1 - (a + 1) * x0**2 / 8)]
    half_tau = 0.5 * tau
    two_pi = 2 * math.pi
    exp = math.exp

    def rhs(s, y):
        x2 = exp(2 * s)
        V, W = y[0], y[1]
        U = a * exp(V - 0.25 * x2)
        return [W, -half_tau * x2 * W - x2 * U, two_pi * x2 * U]

    s0, s1 = math.log(x0), math.log(settings.xi_max)
    # the whole state is O(a) for small a, so the absolute tolerance follows it
    atol = settings.abs_tol * min(1.0, a)
    sol = solve_ivp(rhs, (s0, s1), y0, method="DOP853", rtol=settings.rel_tol, atol=atol, dense_output=True)
    if not sol.success:
        raise ProfileError(a, tau, math.exp(sol.t[-1]), sol.message)
    V_end, _, m_end = sol.y[:, -1]
    xi = np.geomspace(x0, settings.xi_max, settings.n_xi)
    V = sol.sol(np.log(xi))[0]
    U = a * np.exp(V - xi**2 / 4)
    tail = 4 * math.pi * a * math.exp(V_end - settings.xi_max**2 / 4)
    return RadialProfile(a, tau, xi, U, V, float(m_end + tail), float(V_end), x0, sol.sol)


def needed_range(grid: Grid2D, t: float = 1.0) -> float:
    """Radius in ``xi`` the profile must cover for ``grid`` at time ``t``.

    Beyond ``xi = 12.2`` the Gaussian factor is below ``1e-16``, so the
    analytic tail is exact to double precision.
    """
    corner = grid.l / math.sqrt(2) / math.sqrt(t)
    return min(corner, 12.2)


def profile_to_initial_state(profile: RadialProfile, grid: Grid2D):
    """Evolution state at ``t = 1``: ``u = U(|x|)``, ``v = V(|x|) - V(inf)``.

    With ``gamma = 0`` the dynamics ignore constant shifts of ``v``, and the
    shift makes the boxed ``v`` vanish at the boundary.
    """
    from .evolution import EvolutionState

    if profile.a > 0 and profile.xi_max < needed_range(grid):
        raise ValueError(f"profile reaches xi={profile.xi_max:g}, the grid needs {needed_range(grid):g}")
    params = Params(profile.tau, 0.0)
    if profile.a == 0:
        z = SpectralField.zeros(grid)
        return EvolutionState(z, z, 1.0, params)
    return EvolutionState(profile.density_field(grid, 1.0), profile.potential_field(grid, 1.0), 1.0, params)


def profile_mass(a: float, tau: float, settings: OdeSettings = OdeSettings()) -> float:
    return integrate_profile(a, tau, settings).mass


@dataclass
class MassCurve:
    tau: float
    samples: List[Tuple[float, float]]
    m_tau: float
    pairs: List[Tuple[float, float, float]]
    failures: List[Tuple[float, str]] = field(default_factory=list)

    @property
    def a(self) -> np.ndarray:
        return np.array([s[0] for s in self.samples])

    @property
    def M(self) -> np.ndarray:
        return np.array([s[1] for s in self.samples])

    def max_drop(self) -> float:
        """Largest decrease of ``M`` below its running maximum."""
        M = self.M
        if M.size == 0:
            return 0.0
        return float(np.max(np.maximum.accumulate(M) - M))

    def argmax(self) -> float:
        return float(self.a[int(np.argmax(self.M))])


def _mass_task(args):
    a, tau, settings = args
    try:
        return a, integrate_profile(a, tau, settings).mass, None
    except ProfileError as exc:
        return a, math.nan, str(exc)


def _sweep(tau: float, a_grid: Sequence[float], settings: OdeSettings, workers: int = 1):
    tasks = [(float(a), tau, settings) for a in a_grid]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(_mass_task, tasks, chunksize=8))
    return [_mass_task(t) for t in tasks]


def _monotone_runs(M: np.ndarray) -> List[Tuple[int, int, int]]:
    """Maximal monotone index runs ``(start, stop, sign)`` with ``stop`` inclusive."""
    runs = []
    i = 0
    n = len(M)
    while i < n - 1:
        sign = 1 if M[i + 1] >= M[i] else -1
        j = i
        while j < n - 1 and (1 if M[j + 1] >= M[j] else -1) == sign:
            j += 1
        runs.append((i, j, sign))
        i = j
    return runs


def mass_curve(
    tau: float,
    a_grid: Optional[Sequence[float]] = None,
    settings: OdeSettings = OdeSettings(),
    pair_tol: float = 1e-3,
    max_pairs: int = 12,
    workers: int = 1,
) -> MassCurve:
    """Sweep ``M(a, tau)`` over ``a_grid`` and collect equal-mass pairs.

    Pairs match sampled points on a falling branch with a partner on a
    rising branch found by root bracketing, down to ``pair_tol`` in mass.
    At most ``max_pairs`` levels, evenly spread over the falling samples,
    are resolved.
    """
    a_grid = default_a_grid() if a_grid is None else np.asarray(a_grid, dtype=float)
    if np.any(a_grid <= 0) or np.any(np.diff(a_grid) <= 0):
        raise ValueError("a_grid must be positive and increasing")
    results = _sweep(tau, a_grid, settings, workers)
    samples = [(a, m) for a, m, err in results if err is None]
    failures = [(a, err) for a, m, err in results if err is not None]
    if not samples:
        return MassCurve(tau, [], 0.0, [], failures)
    A = np.array([s[0] for s in samples])
    M = np.array([s[1] for s in samples])
    runs = _monotone_runs(M)
    rising = [(i, j) for i, j, sg in runs if sg > 0]
    falling = [k for i, j, sg in runs if sg < 0 for k in range(i + 1, j + 1)]
    if len(falling) > max_pairs:
        idx = np.linspace(0, len(falling) - 1, max_pairs).round().astype(int)
        falling = [falling[i] for i in sorted(set(idx))]
    pairs = []
    for k in falling:
        target = M[k]
        for i, j in rising:
            if not M[i] <= target <= M[j]:
                continue
            seg = np.searchsorted(M[i : j + 1], target)
            lo = i + max(seg - 1, 0)
            hi = min(lo + 1, j)
            f = lambda a: profile_mass(a, tau, settings) - target
            flo, fhi = M[lo] - target, M[hi] - target
            if flo == 0:
                a1 = A[lo]
            elif fhi == 0:
                a1 = A[hi]
            else:
                a1 = brentq(f, A[lo], A[hi], xtol=1e-14, rtol=1e-13)
            if abs(f(a1)) < pair_tol and not math.isclose(a1, A[k]):
                pairs.append((float(a1), float(A[k]), float(target)))
    return MassCurve(tau, samples, float(M.max()), pairs, failures)


def lower_bound_m_tau(tau: float) -> float:
    """``(4 pi / e) (tau - 1) / log(tau)`` for ``tau > 1``."""
    if tau <= 1:
        return 0.0
    return 4 * math.pi / math.e * (tau - 1) / math.log(tau)


def tau_star_grid() -> np.ndarray:
    """Sweep used for the monotonicity test: 33 points per decade on ``[0.1, 1e6]``.

    The excess of ``M`` over ``8 pi`` on the falling branch sits at very
    large ``a`` near the transition, so this grid reaches much further than
    the default sweep.
    """
    return np.logspace(-1, 6, 232)


def is_non_monotone(tau: float, settings: OdeSettings = OdeSettings(), a_grid=None, pair_tol: float = 1e-3, workers: int = 1) -> bool:
    a_grid = tau_star_grid() if a_grid is None else a_grid
    res = _sweep(tau, a_grid, settings, workers)
    M = np.array([m for _, m, err in res if err is None])
    return bool(np.max(np.maximum.accumulate(M) - M) > pair_tol)


def find_tau_star(
    tau_lo: float = 0.5,
    tau_hi: float = 0.8,
    settings: OdeSettings = OdeSettings(),
    a_grid=None,
    pair_tol: float = 1e-3,
    tol: float = 5e-3,
    workers: int = 1,
) -> float:
    """Bisect for the smallest ``tau`` whose mass curve is non-monotone."""
    if not tau_lo < tau_hi:
        raise ValueError("need tau_lo < tau_hi")
    check = lambda t: is_non_monotone(t, settings, a_grid, pair_tol, workers)
    lo_v, hi_v = check(tau_lo), check(tau_hi)
    if lo_v == hi_v:
        raise ValueError(
            f"no change of monotonicity in [{tau_lo}, {tau_hi}]: "
            f"non-monotone({tau_lo}) = {lo_v}, non-monotone({tau_hi}) = {hi_v}"
        )
    lo, hi = tau_lo, tau_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if check(mid) == hi_v:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def m_tau_trend(tau_list: Sequence[float], settings: OdeSettings = OdeSettings(), a_grid=None, workers: int = 1):
    """``[(tau, m_tau)]`` for increasing ``tau``; raises if ``m_tau`` fails to increase."""
    taus = list(tau_list)
    if any(b <= a for a, b in zip(taus, taus[1:])):
        raise ValueError("tau_list must be increasing")
    out = []
    for tau in taus:
        res = _sweep(tau, default_a_grid() if a_grid is None else a_grid, settings, workers)
        out.append((tau, float(max(m for _, m, err in res if err is None))))
    for (t1, m1), (t2, m2) in zip(out, out[1:]):
        if not m2 > m1:
            raise AssertionError(f"m_tau does not increase: M({t1})={m1:.6g}, M({t2})={m2:.6g}")
    return out


def write_curve_csv(path, curves: Iterable[MassCurve], settings: OdeSettings = OdeSettings(), residuals: bool = False):
    """One row per profile: ``a,tau,M,V_infinity,residual_max``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["a", "tau", "M", "V_infinity", "residual_max"])
        for c in curves:
            for a, _ in c.samples:
                p = integrate_profile(a, c.tau, settings)
                r = max(p.residuals(100)) if residuals else float("nan")
                w.writerow([repr(float(a)), repr(float(c.tau)), repr(float(p.mass)), repr(float(p.v_inf)), repr(float(r))])


def write_trend_csv(path, trend: Sequence[Tuple[float, float]]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "m_tau", "lower_bound"])
        for tau, m in trend:
            w.writerow([repr(float(tau)), repr(float(m)), repr(float(lower_bound_m_tau(tau)))])


def write_profile_columns(profile: RadialProfile, u_path, v_path):
    np.savetxt(u_path, np.column_stack([profile.xi, profile.U]), delimiter=",", header="xi,U", comments="")
    np.savetxt(v_path, np.column_stack([profile.xi, profile.V]), delimiter=",", header="xi,V", comments="")
