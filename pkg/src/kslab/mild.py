"""Mild formulation: the operators L and B, the Duhamel map and Picard iteration.

Time integrals are evaluated by product integration on a graded grid.  On
each subinterval the field factor of the integrand is interpolated
linearly in ``s`` and the semigroup factor is integrated exactly mode by
mode, so the ``(t - s)**(-1/2)`` type singularities never meet a
quadrature weight.  Both ``L`` and ``B`` come from a one-pass recursion
over the nodes:

    S(t_j) = exp(-lam d_j) S(t_{j-1}) + w_a(lam, d_j) z(t_{j-1}) + w_b(lam, d_j) z(t_j)
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .field import (
    Grid2D,
    MollifiedMeasure,
    Params,
    SpectralField,
    VectorField2D,
    dealiased_vector_product,
    heat_propagate,
    lp_norm,
    realize_measure,
)

log = logging.getLogger(__name__)

Initial = Union[MollifiedMeasure, SpectralField, None]


class NonContractionError(RuntimeError):
    """Picard iteration stopped contracting."""

    def __init__(self, ratio: float, iterations: int, message: Optional[str] = None):
        self.ratio = ratio
        self.iterations = iterations
        super().__init__(
            message
            or (
                f"Picard iteration is not contracting: measured ratio {ratio:.3g} > 1 "
                f"after {iterations} iterations; try a larger tau"
            )
        )


@dataclass(frozen=True)
class TimeGrid:
    """Graded nodes ``t_j = horizon * (j / count)**kappa``."""

    horizon: float
    count: int = 64
    kappa: float = 2.0

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("time horizon must be positive")
        if self.count < 8:
            raise ValueError("time grid needs at least 8 intervals")
        if self.kappa < 1:
            raise ValueError("grading exponent must be >= 1")

    @property
    def nodes(self) -> np.ndarray:
        j = np.arange(self.count + 1)
        t = self.horizon * (j / self.count) ** self.kappa
        t[-1] = self.horizon
        return t

    @property
    def midpoints(self) -> np.ndarray:
        t = self.nodes
        return 0.5 * (t[1:] + t[:-1])

    def index(self, t: float, rtol: float = 1e-12) -> int:
        """Index ``j`` of the node equal to ``t``; raises if ``t`` is not a node."""
        nodes = self.nodes
        j = int(np.argmin(np.abs(nodes - t)))
        if abs(nodes[j] - t) > rtol * max(1.0, abs(t)):
            raise ValueError(f"t = {t} is not a node of the time grid")
        return j


@dataclass(frozen=True)
class TimeSlab:
    """Field-valued function of time: one field per node ``j >= 1``.

    ``initial`` optionally records the data at ``t = 0``; it is never used
    as a quadrature node.
    """

    tgrid: TimeGrid
    fields: Tuple[SpectralField, ...]
    initial: Initial = None

    def __post_init__(self):
        fields = tuple(self.fields)
        if len(fields) != self.tgrid.count:
            raise ValueError(f"slab has {len(fields)} fields, grid has {self.tgrid.count} nodes after t=0")
        g = fields[0].grid
        for f in fields:
            if f.grid != g:
                raise ValueError("all slab fields must share one spatial grid")
        object.__setattr__(self, "fields", fields)

    @property
    def space(self) -> Grid2D:
        return self.fields[0].grid

    @property
    def times(self) -> np.ndarray:
        return self.tgrid.nodes[1:]

    def at(self, j: int) -> SpectralField:
        """Field at node ``j >= 1``."""
        if j < 1:
            raise IndexError("node 0 holds initial data, not a field")
        return self.fields[j - 1]

    @classmethod
    def zeros(cls, tgrid: TimeGrid, space: Grid2D, initial: Initial = None) -> "TimeSlab":
        z = SpectralField.zeros(space)
        return cls(tgrid, (z,) * tgrid.count, initial)

    @classmethod
    def from_function(cls, tgrid: TimeGrid, func: Callable[[float], SpectralField], initial: Initial = None):
        return cls(tgrid, tuple(func(t) for t in tgrid.nodes[1:]), initial)

    def map(self, func: Callable[[SpectralField], SpectralField]) -> "TimeSlab":
        return TimeSlab(self.tgrid, tuple(func(f) for f in self.fields), self.initial)

    def __mul__(self, c: float) -> "TimeSlab":
        init = self.initial
        if isinstance(init, MollifiedMeasure):
            init = init.scaled(c)
        elif isinstance(init, SpectralField):
            init = init * c
        return TimeSlab(self.tgrid, tuple(f * c for f in self.fields), init)

    __rmul__ = __mul__

    def __add__(self, other: "TimeSlab") -> "TimeSlab":
        self._check(other)
        init = _sum_initial(self, other, 1.0)
        return TimeSlab(self.tgrid, tuple(a + b for a, b in zip(self.fields, other.fields)), init)

    def __sub__(self, other: "TimeSlab") -> "TimeSlab":
        self._check(other)
        init = _sum_initial(self, other, -1.0)
        return TimeSlab(self.tgrid, tuple(a - b for a, b in zip(self.fields, other.fields)), init)

    def _check(self, other: "TimeSlab"):
        if other.tgrid != self.tgrid or other.space != self.space:
            raise ValueError("slabs live on different grids")


def _sum_initial(a: TimeSlab, b: TimeSlab, sign: float) -> Initial:
    """Initial data of ``a + sign * b``; ``None`` when neither slab carries any.

    A slab without initial data is frozen at ``t_1`` on the first interval,
    so its first field stands in for it.
    """
    if a.initial is None and b.initial is None:
        return None
    fa = _initial_field(a)
    fb = _initial_field(b)
    fa = a.fields[0] if fa is None else fa
    fb = b.fields[0] if fb is None else fb
    return fa + fb * sign


@dataclass
class PicardReport:
    iterates: int
    residual_history: List[float]
    contraction_ratio: float
    converged: bool
    p: float = 1.5

    def to_text(self) -> str:
        lines = [
            f"iterates = {self.iterates}",
            f"converged = {str(self.converged).lower()}",
            f"contraction_ratio = {self.contraction_ratio:.6e}",
            f"p = {self.p}",
            "residual_history = [" + ", ".join(f"{r:.6e}" for r in self.residual_history) + "]",
        ]
        return "\n".join(lines) + "\n"


def _weights(mu: np.ndarray, d: float) -> Tuple[np.ndarray, np.ndarray]:
    """Exact weights of a linear-in-``s`` integrand against ``exp(-mu (b - s))``.

    For ``f`` linear on ``[a, b]`` with ``d = b - a``:
    ``int_a^b exp(-mu (b-s)) f(s) ds = w_a f(a) + w_b f(b)``.
    """
    x = mu * d
    small = x < 1e-2
    xs = np.where(small, 1.0, x)
    em = np.exp(-xs)
    phi1 = np.where(small, 1 - x / 2 + x**2 / 6 - x**3 / 24 + x**4 / 120, -np.expm1(-xs) / xs)
    psi = np.where(small, 0.5 - x / 3 + x**2 / 8 - x**3 / 30 + x**4 / 144, (-np.expm1(-xs) - xs * em) / xs**2)
    return d * psi, d * (phi1 - psi)


def _initial_field(z: TimeSlab) -> Optional[SpectralField]:
    init = z.initial
    if isinstance(init, MollifiedMeasure):
        return realize_measure(init, z.space)
    return init


def _screened_potential(z: TimeSlab, params: Params, upto: Optional[int] = None):
    """Coefficients of ``S(t) = tau^-1 int_0^t exp((t-s)(Lap-gamma)/tau) z(s) ds`` at nodes.

    ``z`` is interpolated linearly in ``s`` between nodes.  On the first
    interval the initial data is used when the slab carries it, otherwise
    ``z`` is frozen at ``t_1``.  The recursion is causal, so stopping
    early at ``upto`` gives the same numbers.
    """
    space = z.space
    mu = (space.k2 + params.gamma) / params.tau
    t = z.tgrid.nodes
    n = z.tgrid.count if upto is None else upto
    z0 = _initial_field(z)
    prev = z.fields[0].coeffs if z0 is None else z0.coeffs
    S = np.zeros(mu.shape, dtype=complex)
    nodes = []
    for j in range(1, n + 1):
        d = t[j] - t[j - 1]
        cur = z.fields[j - 1].coeffs
        wa, wb = _weights(mu, d)
        S = np.exp(-mu * d) * S + (wa * prev + wb * cur) / params.tau
        nodes.append(S)
        prev = cur
    return nodes


def _grad_coeffs(space: Grid2D, c: np.ndarray) -> VectorField2D:
    dx, dy = space.derivative_symbols
    return VectorField2D(SpectralField(space, coeffs=dx * c), SpectralField(space, coeffs=dy * c))


def operator_L(z: TimeSlab, params: Params) -> List[VectorField2D]:
    """``Lz`` at every node ``j = 1..n``."""
    return [_grad_coeffs(z.space, c) for c in _screened_potential(z, params)]


def apply_L(z: TimeSlab, t: float, params: Params) -> VectorField2D:
    """``L z(t) = tau^-1 int_0^t grad exp((t-s)(Lap-gamma)/tau) z(s) ds`` at node ``t``."""
    if not params.tau > 0:
        raise ValueError("tau must be positive")
    j = z.tgrid.index(t)
    if j == 0:
        return VectorField2D.zeros(z.space)
    return _grad_coeffs(z.space, _screened_potential(z, params, upto=j)[-1])


def bilinear(u: TimeSlab, z: TimeSlab, params: Params, upto: Optional[int] = None) -> TimeSlab:
    """``B(u, z)`` at every node, as a slab.

    ``B(u,z)(t) = -int_0^t div exp((t-s)Lap) (u(s) Lz(s)) ds``.  The flux
    ``u * Lz`` is formed at the nodes with 2/3-rule dealiasing and
    interpolated linearly in ``s``; it vanishes at ``s = 0`` because
    ``Lz(0) = 0``.
    """
    if u.tgrid != z.tgrid or u.space != z.space:
        raise ValueError("u and z must share time and space grids")
    space = u.space
    k2 = space.k2
    t = u.tgrid.nodes
    n = u.tgrid.count if upto is None else upto
    pot = _screened_potential(z, params, upto=n)
    Hx = np.zeros(k2.shape, dtype=complex)
    Hy = np.zeros(k2.shape, dtype=complex)
    Fx_prev = np.zeros(k2.shape, dtype=complex)
    Fy_prev = np.zeros(k2.shape, dtype=complex)
    dx, dy = space.derivative_symbols
    out = []
    for j in range(1, n + 1):
        d = t[j] - t[j - 1]
        F = dealiased_vector_product(u.fields[j - 1], _grad_coeffs(space, pot[j - 1]))
        wa, wb = _weights(k2, d)
        decay = np.exp(-k2 * d)
        Hx = decay * Hx + wa * Fx_prev + wb * F.x.coeffs
        Hy = decay * Hy + wa * Fy_prev + wb * F.y.coeffs
        Fx_prev, Fy_prev = F.x.coeffs, F.y.coeffs
        out.append(SpectralField(space, coeffs=-(dx * Hx + dy * Hy)))
    if n < u.tgrid.count:
        out.extend([SpectralField.zeros(space)] * (u.tgrid.count - n))
    return TimeSlab(u.tgrid, tuple(out), None)


def apply_B(u: TimeSlab, z: TimeSlab, t: float, params: Params) -> SpectralField:
    """``B(u, z)`` at node ``t``."""
    if u.space != z.space or u.tgrid != z.tgrid:
        raise ValueError("u and z must share time and space grids")
    j = u.tgrid.index(t)
    if j == 0:
        return SpectralField.zeros(u.space)
    return bilinear(u, z, params, upto=j).at(j)


def free_evolution(u0: Initial, space: Grid2D, tgrid: TimeGrid) -> TimeSlab:
    """Slab of ``exp(t Lap) u0`` at the nodes."""
    if u0 is None:
        return TimeSlab.zeros(tgrid, space)
    f0 = realize_measure(u0, space) if isinstance(u0, MollifiedMeasure) else u0
    return TimeSlab(tgrid, tuple(heat_propagate(f0, t) for t in tgrid.nodes[1:]), u0)


def duhamel_rhs(u0: Initial, u: TimeSlab, params: Params, free: Optional[TimeSlab] = None) -> TimeSlab:
    """Node-wise ``exp(t Lap) u0 + B(u, u)(t)``.

    Pass ``free`` to reuse a precomputed free evolution of ``u0``.
    """
    if free is None:
        free = free_evolution(u0, u.space, u.tgrid)
    elif free.tgrid != u.tgrid or free.space != u.space:
        raise ValueError("free evolution lives on a different grid")
    b = bilinear(u, u, params)
    return TimeSlab(u.tgrid, tuple(f + g for f, g in zip(free.fields, b.fields)), u0)


def triple_norm(slab: TimeSlab, p: float) -> float:
    """``max_j t_j**(1 - 1/p) * ||slab(t_j)||_p`` over nodes ``j >= 1``."""
    if not slab.fields:
        raise ValueError("empty slab")
    if p < 1:
        raise ValueError("p must be >= 1")
    w = 1.0 if math.isinf(p) else 1.0 - 1.0 / p
    weights = slab.times**w if not math.isinf(p) else slab.times
    return float(max(wt * lp_norm(f, p) for wt, f in zip(weights, slab.fields)))


def weighted_norm_curve(slab: TimeSlab, p: float) -> np.ndarray:
    """``t_j**(1 - 1/p) * ||slab(t_j)||_p`` for each node ``j >= 1``."""
    e = 1.0 if math.isinf(p) else 1.0 - 1.0 / p
    return np.array([t**e * lp_norm(f, p) for t, f in zip(slab.times, slab.fields)])


def _fit_ratio(history: Sequence[float]) -> float:
    r = np.asarray(history, dtype=float)
    r = r[r > 1e-14 * max(r.max(), 1e-300)] if r.size else r
    r = r[r > 0]
    if r.size < 2:
        return 0.0
    k = np.arange(r.size)
    slope = np.polyfit(k, np.log(r), 1)[0]
    return float(math.exp(slope))


def picard_solve(
    u0: Initial,
    space: Grid2D,
    tgrid: TimeGrid,
    params: Params,
    p: float = 1.5,
    tol: float = 1e-10,
    max_iter: int = 60,
    start: Optional[TimeSlab] = None,
) -> Tuple[TimeSlab, PicardReport]:
    """Solve ``u = exp(t Lap) u0 + B(u, u)`` by Picard iteration.

    Iteration starts from the free evolution unless ``start`` is given and
    stops once the ``E_p`` distance between successive iterates drops
    below ``tol``.  Three consecutive growth ratios above one raise
    :class:`NonContractionError`.
    """
    if not 4.0 / 3.0 < p < 2.0:
        raise ValueError(f"p must lie in (4/3, 2), got {p}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    free = free_evolution(u0, space, tgrid)
    u = free if start is None else start
    history: List[float] = []
    growth = 0
    for it in range(1, max_iter + 1):
        try:
            new = duhamel_rhs(u0, u, params, free=free)
            res = triple_norm(new - u, p)
        except FloatingPointError as exc:
            ratio = history[-1] / history[-2] if len(history) > 1 else math.inf
            raise NonContractionError(ratio, it) from exc
        if not math.isfinite(res):
            raise NonContractionError(math.inf, it)
        history.append(res)
        u = new
        log.debug("picard iteration %d: residual %.3e", it, res)
        if res < tol:
            return u, PicardReport(it, history, _fit_ratio(history), True, p)
        if len(history) > 1 and history[-2] > 0 and res > history[-2]:
            growth += 1
            if growth >= 3:
                raise NonContractionError(res / history[-2], it)
        else:
            growth = 0
    return u, PicardReport(max_iter, history, _fit_ratio(history), False, p)


def heat_kernel_slab(tgrid: TimeGrid, space: Grid2D, mass: float = 1.0, shift: float = 0.0, center=(0.0, 0.0)) -> TimeSlab:
    """Slab ``mass * G(., t + shift)`` built exactly in Fourier space.

    With ``shift = 0`` this is the solution of the heat equation from a
    Dirac mass, which scales exactly under ``x -> lambda x, t -> lambda^2 t``.
    """
    from .field import spectral_heat_kernel

    init = spectral_heat_kernel(space, shift, mass, center)
    return TimeSlab(tgrid, tuple(spectral_heat_kernel(space, t + shift, mass, center) for t in tgrid.nodes[1:]), init)


_ETA_CACHE: dict = {}


def default_eta_model(p: float = 1.5, q: float = 4.0):
    """Empirical ``eta(tau)`` model on the standard probe family, cached per ``(p, q)``."""
    from .estimates import ExponentSet, eta_empirical

    key = (float(p), float(q))
    if key not in _ETA_CACHE:
        _ETA_CACHE[key] = eta_empirical(ExponentSet(p, q), [1.0, 3.0, 10.0, 30.0, 100.0])
    return _ETA_CACHE[key]


def tau_grid() -> np.ndarray:
    """Log grid searched by :func:`suggest_tau`: 20 points per decade on ``[1e-2, 1e4]``."""
    return np.logspace(-2, 4, 121)


def suggest_tau(u0: Initial, p: float = 1.5, q: float = 4.0, model=None) -> float:
    """Smallest grid ``tau`` with ``C ||u0|| eta(tau) < 1/4``.

    ``C = (4 pi)**(1/p-1) p**(-1/p)`` is the exact constant of
    ``|||exp(t Lap) delta|||_p``, ``||u0||`` the total variation, and
    ``eta`` the fitted empirical model.  The result is a heuristic: the
    model is a lower envelope of the true operator constant.
    """
    from .estimates import ExponentSet, gaussian_norm_constant

    ExponentSet(p, q)
    model = default_eta_model(p, q) if model is None else model
    if u0 is None:
        size = 0.0
    elif isinstance(u0, MollifiedMeasure):
        size = u0.total_variation()
    else:
        size = lp_norm(u0, 1)
    c = gaussian_norm_constant(p) * size
    grid = tau_grid()
    for tau in grid:
        if c * model(tau) < 0.25:
            return float(tau)
    return float(grid[-1])
