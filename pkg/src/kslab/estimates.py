"""Numerical checks of the functional inequalities behind the mild theory.

Covers the Lebesgue exponent windows, Beta-function constants, the
empirical decay of the bilinear constant eta(tau), linear smoothing
ratios, weak attainment of initial data, and a scalar quadratic model of
the fixed-point problem.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, special, stats

from .field import (
    Grid2D,
    MollifiedMeasure,
    Params,
    SpectralField,
    gradient,
    heat_propagate,
    lp_norm,
)
from .mild import TimeGrid, TimeSlab, bilinear, heat_kernel_slab, triple_norm

__all__ = [
    "ExponentSet",
    "admissible_window",
    "beta_constant",
    "beta_quadrature",
    "singular_time_integral",
    "EtaModel",
    "eta_empirical",
    "LinearEstimateReport",
    "verify_linear_estimates",
    "triple_norm",
    "TestFunction",
    "WeakAttainmentReport",
    "weak_attainment_probe",
    "QuadraticToy",
    "quadratic_roots",
    "toy_picard",
    "gaussian_norm_constant",
    "write_eta_csv",
    "write_constants_csv",
    "write_defect_csv",
]


def admissible_window(p: float) -> Tuple[float, float]:
    """Open window ``(p/(p-1), 2p/(2-p))`` for ``q``, defined for ``4/3 < p < 2``."""
    if not 4.0 / 3.0 < p < 2.0:
        raise ValueError(f"p = {p} lies outside (4/3, 2)")
    return p / (p - 1), 2 * p / (2 - p)


@dataclass(frozen=True)
class ExponentSet:
    """Exponents ``p``, ``q`` with ``1/r = 1/p + 1/q`` and the ladder target ``sigma``."""

    p: float = 1.5
    q: float = 4.0
    sigma: Optional[float] = None

    def __post_init__(self):
        lo, hi = admissible_window(self.p)
        if not self.q > lo:
            raise ValueError(f"q = {self.q} violates q > p/(p-1) = {lo:.6g}")
        if not self.q < hi:
            raise ValueError(f"q = {self.q} violates q < 2p/(2-p) = {hi:.6g}")
        if self.sigma is not None and not self.sigma >= 1:
            raise ValueError("sigma must be >= 1")

    @property
    def p_conj(self) -> float:
        return self.p / (self.p - 1)

    @property
    def r(self) -> float:
        return 1.0 / (1.0 / self.p + 1.0 / self.q)

    @property
    def decay_exponent(self) -> float:
        """``-1/2 - 1/q + 1/p``, the tau exponent of the bilinear bound."""
        return -0.5 - 1.0 / self.q + 1.0 / self.p

    @property
    def l1_exponent(self) -> float:
        """``2/p - 3/2``, the tau exponent in the L1 estimate of the flux."""
        return 2.0 / self.p - 1.5

    @property
    def beta_arguments(self) -> Tuple[float, float]:
        return 0.5 - 1.0 / self.q, 1.0 / self.p + 1.0 / self.q - 0.5

    @property
    def beta(self) -> float:
        return beta_constant(*self.beta_arguments)


def beta_constant(a: float, b: float) -> float:
    """``B(a, b) = int_0^1 s**(a-1) (1-s)**(b-1) ds`` from log-Gamma values."""
    if not (a > 0 and b > 0):
        raise ValueError("Beta arguments must be positive")
    return float(math.exp(special.betaln(a, b)))


def beta_quadrature(a: float, b: float, nodes: int = 64) -> float:
    """Independent Beta value by graded Gauss-Legendre quadrature.

    Splitting at 1/2 and substituting ``s = w**(1/a)`` (resp. ``1 - s =
    w**(1/b)``) removes both endpoint singularities, leaving smooth
    integrands on each half.  Arguments ``>= 1`` carry no singularity and
    are integrated without substitution.
    """
    if not (a > 0 and b > 0):
        raise ValueError("Beta arguments must be positive")
    x, w = np.polynomial.legendre.leggauss(nodes)

    def half(alpha, beta):
        # int_0^{1/2} s**(alpha-1) (1-s)**(beta-1) ds with s = v**(1/alpha)
        if alpha >= 1:
            s = 0.25 * (x + 1)
            return 0.25 * np.sum(w * s ** (alpha - 1) * (1 - s) ** (beta - 1))
        top = 0.5**alpha
        v = 0.5 * top * (x + 1)
        s = v ** (1.0 / alpha)
        return 0.5 * top * np.sum(w * (1 - s) ** (beta - 1)) / alpha

    return float(half(a, b) + half(b, a))


def singular_time_integral(p: float, q: float, t: float) -> float:
    """``int_0^t (t-s)**(-1/2-1/q) s**(1/q+1/p-3/2) ds`` by algebraic-weight quadrature."""
    alpha = 1.0 / q + 1.0 / p - 1.5
    beta = -0.5 - 1.0 / q
    val, _ = integrate.quad(lambda s: 1.0, 0.0, t, weight="alg", wvar=(alpha, beta), epsabs=0, epsrel=1e-13)
    return float(val)


def gaussian_norm_constant(p: float) -> float:
    """``t**(1-1/p) ||G(., t)||_p = (4 pi)**(1/p-1) p**(-1/p)``."""
    if math.isinf(p):
        return 1.0 / (4 * math.pi)
    return (4 * math.pi) ** (1.0 / p - 1.0) * p ** (-1.0 / p)


@dataclass
class EtaModel:
    """Empirical lower envelope ``eta(tau) ~ c_fit * tau**slope`` of the bilinear constant.

    ``decay_exponent`` is the exponent of the analytic bound; ``slope`` is
    the least-squares fit, ``slope_stderr`` its standard error.  The
    calibrated prefactor belongs to the probe family, not to the bound.
    """

    exponents: ExponentSet
    c_fit: float
    slope: float
    slope_stderr: float
    taus: List[float]
    eta_measured: List[float]

    @property
    def decay_exponent(self) -> float:
        return self.exponents.decay_exponent

    def __call__(self, tau: float) -> float:
        return self.c_fit * tau**self.slope

    def strictly_decreasing(self) -> bool:
        e = self.eta_measured
        return all(b < a for a, b in zip(e, e[1:]))


def _probe_slabs(space: Grid2D, tgrid: TimeGrid, masses, shifts) -> List[TimeSlab]:
    return [heat_kernel_slab(tgrid, space, m, s) for m in masses for s in shifts]


def eta_empirical(
    exponents: ExponentSet,
    tau_list: Sequence[float],
    space: Grid2D = Grid2D(256, 40.0),
    tgrid: TimeGrid = TimeGrid(4.0, 64),
    masses: Sequence[float] = (1.0, 3.0),
    shifts: Sequence[float] = (0.0, 0.05, 0.5),
) -> EtaModel:
    """Measure ``max |||B(u,z)|||_p / (|||u|||_p |||z|||_p)`` over heat-kernel probes per tau.

    Probes are ``M G(., t + s)`` for every mass ``M`` and shift ``s``; every
    ordered pair of widths is tried for ``(u, z)``.
    """
    taus = [float(t) for t in tau_list]
    if len(taus) < 3:
        raise ValueError("need at least 3 tau values for a fit")
    if any(b <= a for a, b in zip(taus, taus[1:])):
        raise ValueError("tau_list must be increasing")
    if any(t <= 0 for t in taus):
        raise ValueError("tau must be positive")
    p = exponents.p
    probes = _probe_slabs(space, tgrid, masses, shifts)
    norms = [triple_norm(z, p) for z in probes]
    if any(not n > 0 for n in norms):
        raise ValueError("probe family contains a slab with zero norm")
    # the ratio is invariant under rescaling either probe, so one mass per width suffices
    width_reps = list(range(len(shifts)))
    eta = []
    for tau in taus:
        params = Params(tau, 0.0)
        best = 0.0
        for i in width_reps:
            for k in width_reps:
                b = bilinear(probes[i], probes[k], params)
                best = max(best, triple_norm(b, p) / (norms[i] * norms[k]))
        if len(masses) > 1:
            j = len(shifts)  # second mass, first width: homogeneity check
            b = bilinear(probes[j], probes[0], params)
            best = max(best, triple_norm(b, p) / (norms[j] * norms[0]))
        eta.append(best)
    fit = stats.linregress(np.log(taus), np.log(eta))
    return EtaModel(exponents, float(math.exp(fit.intercept)), float(fit.slope), float(fit.stderr), taus, eta)


@dataclass
class LinearEstimateReport:
    """Sup over probes and times of normalized smoothing ratios.

    Keys are ``("heat", q, r)``, ``("grad", q, r)`` and ``("measure", p)``.
    """

    constants: Dict[tuple, float] = field(default_factory=dict)

    def finite(self) -> bool:
        return all(math.isfinite(c) for c in self.constants.values())


def _ratio(num: float, den: float) -> float:
    if den == 0:
        return 0.0 if num == 0 else math.inf
    return num / den


def verify_linear_estimates(
    probes: Sequence[SpectralField],
    p_list: Sequence[float],
    t_list: Sequence[float],
) -> LinearEstimateReport:
    """Measured constants of the heat, gradient and measure smoothing bounds.

    For ``r <= q`` in ``p_list``:
    ``||e^{tD} z||_q / (t**(1/q-1/r) ||z||_r)`` and
    ``||grad e^{tD} z||_q / (t**(-1/2+1/q-1/r) ||z||_r)``; and for each
    ``p``: ``t**(1-1/p) ||e^{tD} z||_p / ||z||_1``.
    """
    if not probes:
        raise ValueError("need at least one probe")
    rep = LinearEstimateReport()
    inv = lambda p: 0.0 if math.isinf(p) else 1.0 / p
    for z in probes:
        src = {r: lp_norm(z, r) for r in p_list}
        mass = lp_norm(z, 1)
        for t in t_list:
            h = heat_propagate(z, t)
            g = SpectralField(z.grid, values=gradient(h).magnitude())
            for q in p_list:
                hq = lp_norm(h, q)
                gq = lp_norm(g, q)
                for r in p_list:
                    if r > q:
                        continue
                    e = inv(q) - inv(r)
                    key = ("heat", q, r)
                    rep.constants[key] = max(rep.constants.get(key, 0.0), _ratio(hq, t**e * src[r]))
                    key = ("grad", q, r)
                    rep.constants[key] = max(rep.constants.get(key, 0.0), _ratio(gq, t ** (e - 0.5) * src[r]))
                key = ("measure", q)
                rep.constants[key] = max(rep.constants.get(key, 0.0), _ratio(t ** (1 - inv(q)) * hq, mass))
    return rep


@dataclass(frozen=True)
class TestFunction:
    """Compactly supported test function of radius ``radius`` around ``center``.

    ``kind`` is ``"bump"`` (smooth ``exp(1 - 1/(1 - r^2))``), ``"cone"``
    (Lipschitz ``1 - r``, sharp at the centre) or ``"plateau"`` (equal to
    one for ``r <= inner`` with a smooth transition to zero).
    """

    __test__ = False  # keep pytest from collecting this class

    kind: str
    radius: float
    center: Tuple[float, float] = (0.0, 0.0)
    inner: float = 0.5
    name: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("bump", "cone", "plateau"):
            raise ValueError(f"unknown test function kind {self.kind!r}")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.kind == "plateau" and not 0 < self.inner < 1:
            raise ValueError("plateau inner fraction must lie in (0, 1)")

    @property
    def label(self) -> str:
        return self.name or f"{self.kind}{self.radius:g}"

    def profile(self, rho: np.ndarray) -> np.ndarray:
        """Values as a function of ``rho = r / radius``."""
        out = np.zeros_like(rho)
        inside = rho < 1
        x = rho[inside]
        if self.kind == "bump":
            out[inside] = np.exp(1 - 1 / (1 - x**2))
        elif self.kind == "cone":
            out[inside] = 1 - x
        else:
            s = np.clip((x - self.inner) / (1 - self.inner), 0, 1)
            # smooth step from 1 to 0 built from exp(-1/x) pieces
            f = lambda y: np.where(y > 0, np.exp(-1 / np.where(y > 0, y, 1)), 0.0)
            out[inside] = f(1 - s) / (f(1 - s) + f(s))
        return out

    def __call__(self, x, y) -> np.ndarray:
        r = np.hypot(np.asarray(x) - self.center[0], np.asarray(y) - self.center[1])
        return self.profile(r / self.radius)

    def sample(self, grid: Grid2D) -> np.ndarray:
        reach = max(abs(self.center[0]), abs(self.center[1])) + self.radius
        if reach >= grid.l / 2:
            raise ValueError(f"test function {self.label} touches the boundary of the box")
        X, Y = grid.mesh
        return self(X, Y)

    def grad_sup(self) -> float:
        """``||grad phi||_inf``, evaluated on a fine radial grid."""
        rho = np.linspace(0, 1, 200001)
        return float(np.abs(np.gradient(self.profile(rho), rho)).max() / self.radius)


@dataclass
class WeakAttainmentReport:
    rows: List[Tuple[float, str, float]]
    t_shift: float
    mass: float

    def series(self, label: str) -> Tuple[np.ndarray, np.ndarray]:
        t = np.array([r[0] for r in self.rows if r[1] == label])
        d = np.array([r[2] for r in self.rows if r[1] == label])
        return t, d

    def fitted_exponent(self, label: str, t_min: float = 0.0, t_max: float = math.inf) -> float:
        """Slope of ``log d`` against ``log(t + t_shift)`` on ``[t_min, t_max]``.

        ``t_shift = eps**2 / 2`` is the heat time already spent by a
        Gaussian-mollified atom, so for a pure atom the defect is a power of
        ``t + t_shift``.
        """
        t, d = self.series(label)
        keep = (t >= t_min) & (t <= t_max) & (d > 0)
        if keep.sum() < 3:
            raise ValueError("fewer than three usable points for the fit")
        return float(np.polyfit(np.log(t[keep] + self.t_shift), np.log(d[keep]), 1)[0])

    def rate_constant(self, label: str, test: TestFunction, eps: float) -> float:
        """``max_t d(t) / ((sqrt t + eps) ||grad phi||_inf M)``."""
        t, d = self.series(label)
        den = (np.sqrt(t) + eps) * test.grad_sup() * max(self.mass, 1e-300)
        return float(np.max(d / den)) if self.mass > 0 else 0.0


def _point_values(u0, test: TestFunction, grid: Grid2D) -> float:
    if u0 is None:
        return 0.0
    if isinstance(u0, SpectralField):
        return float((u0.values * test.sample(grid)).sum() * grid.spacing**2)
    total = sum(a.mass * float(test(a.x, a.y)) for a in u0.atoms)
    if u0.background is not None:
        total += float((u0.background.values * test.sample(grid)).sum() * grid.spacing**2)
    return total


def weak_attainment_probe(
    slab: TimeSlab,
    u0,
    test_functions: Sequence[TestFunction],
    count: Optional[int] = None,
) -> WeakAttainmentReport:
    """Defects ``|int u(t) phi - <u0, phi>|`` at the first ``count`` nodes (all by default).

    ``<u0, phi>`` pairs the atoms with point values of ``phi`` and the
    background with the grid integral.
    """
    grid = slab.space
    nodes = slab.times if count is None else slab.times[:count]
    rows = []
    for phi in test_functions:
        w = phi.sample(grid) * grid.spacing**2
        ref = _point_values(u0, phi, grid)
        for j, t in enumerate(nodes, start=1):
            rows.append((float(t), phi.label, abs(float((slab.at(j).values * w).sum()) - ref)))
    shift = 0.0
    mass = 0.0
    if isinstance(u0, MollifiedMeasure):
        widths = [a.width if a.width is not None else 5 * grid.spacing for a in u0.atoms]
        shift = max(widths, default=0.0) ** 2 / 2
        mass = u0.total_variation()
    elif isinstance(u0, SpectralField):
        mass = lp_norm(u0, 1)
    return WeakAttainmentReport(rows, shift, mass)


@dataclass(frozen=True)
class QuadraticToy:
    """Scalar model ``u = y0 + eta u**2`` of the fixed-point problem."""

    y0: float
    eta: float

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")

    @property
    def discriminant(self) -> float:
        return 1 - 4 * self.eta * self.y0

    @property
    def small(self) -> bool:
        """``|y0| < 1/(4 eta)``: the regime where iteration from 0 contracts."""
        return abs(self.y0) < 1 / (4 * self.eta)


def toy_picard(toy: QuadraticToy, start: float = 0.0, max_iter: int = 10000, tol: float = 1e-14, cap: float = 1e12):
    """Iterate ``u <- y0 + eta u**2``; returns ``(value, iterations, converged)``.

    Divergence past ``cap`` stops the iteration with ``converged = False``.
    """
    u = start
    for k in range(1, max_iter + 1):
        new = toy.y0 + toy.eta * u * u
        if not math.isfinite(new) or abs(new) > cap:
            return new, k, False
        if abs(new - u) <= tol * max(1.0, abs(new)):
            return new, k, True
        u = new
    return u, max_iter, False


def quadratic_roots(toy: QuadraticToy) -> Optional[Tuple[float, float]]:
    """Both roots ``(1 -+ sqrt(1 - 4 eta y0)) / (2 eta)``, or ``None`` if complex.

    In the small-data regime the Picard iteration from 0 is run as well and
    must land on the smaller root.
    """
    disc = toy.discriminant
    if disc < 0:
        return None
    s = math.sqrt(disc)
    # the smaller root in cancellation-free form
    u1 = 2 * toy.y0 / (1 + s)
    u2 = (1 + s) / (2 * toy.eta)
    if toy.small:
        val, _, ok = toy_picard(toy)
        if not ok or abs(val - u1) > 1e-9 * max(1.0, abs(u1)):
            raise AssertionError(f"Picard from 0 reached {val}, expected the smaller root {u1}")
    return u1, u2


def write_eta_csv(path, model: EtaModel):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "eta_measured"])
        for t, e in zip(model.taus, model.eta_measured):
            w.writerow([repr(float(t)), repr(float(e))])


def write_constants_csv(path, sets: Sequence[ExponentSet]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["p", "q", "C_beta", "decay_exponent"])
        for e in sets:
            w.writerow([repr(float(e.p)), repr(float(e.q)), repr(float(e.beta)), repr(float(e.decay_exponent))])


def write_defect_csv(path, report: WeakAttainmentReport):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "testfn", "defect"])
        for t, name, d in report.rows:
            w.writerow([repr(float(t)), name, repr(float(d))])
