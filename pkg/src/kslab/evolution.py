"""Reference IMEX pseudospectral integrator for the Keller-Segel system.

    u_t = Lap u - div(u grad v)
    tau v_t = Lap v - gamma v + u

Diffusion and the ``-gamma v`` decay are integrated exactly through
Fourier integrating factors; the transport flux and the source ``u/tau``
use the two-stage second-order (Heun) integrating-factor scheme.
"""
from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .field import (
    Grid2D,
    MollifiedMeasure,
    Params,
    SpectralField,
    _irfft2,
    _rfft2,
    lp_norm,
    realize_measure,
)

log = logging.getLogger(__name__)

TIMESERIES_HEADER = ("t", "mass", "l1", "l2", "linf", "min_u", "dt", "tail_fraction")


class ResolutionLostError(RuntimeError):
    def __init__(self, t: float, dt: float):
        self.t = t
        self.dt = dt
        super().__init__(f"step size fell below dt_min ({dt:.3e}) at t = {t:.6g}")


@dataclass(frozen=True)
class EvolutionState:
    u: SpectralField
    v: SpectralField
    t: float
    params: Params
    dt: float = 0.0  # size of the step that produced this state

    def __post_init__(self):
        if self.u.grid != self.v.grid:
            raise ValueError("u and v must share a grid")

    @property
    def grid(self) -> Grid2D:
        return self.u.grid

    @classmethod
    def initial(cls, u0, grid: Grid2D, params: Params, v0: Optional[SpectralField] = None, t: float = 0.0):
        u = realize_measure(u0, grid) if isinstance(u0, MollifiedMeasure) else u0
        v = SpectralField.zeros(grid) if v0 is None else v0
        return cls(u, v, t, params)


@dataclass
class StepController:
    dt: float = 1e-3
    cfl_target: float = 0.5
    dt_min: float = 1e-10
    dt_max: float = 1e-2

    def __post_init__(self):
        if not 0 < self.cfl_target < 1:
            raise ValueError("cfl_target must lie in (0, 1)")
        if not 0 < self.dt_min <= self.dt_max:
            raise ValueError("need 0 < dt_min <= dt_max")
        self.dt = min(max(self.dt, self.dt_min), self.dt_max)


class Status(str, enum.Enum):
    COMPLETED = "completed"
    BLOWUP_SUSPECTED = "blowup_suspected"
    RESOLUTION_LOST = "resolution_lost"


@dataclass(frozen=True)
class BlowupVerdict:
    status: Status
    t_event: float
    peak_norm: float
    spectral_tail_fraction: float

    @property
    def exit_code(self) -> int:
        return {Status.COMPLETED: 0, Status.BLOWUP_SUSPECTED: 2, Status.RESOLUTION_LOST: 3}[self.status]


@dataclass(frozen=True)
class BlowupDetector:
    """Heuristic thresholds; none of these numbers carry theoretical weight.

    ``concentration_multiple`` separates collapse from plain loss of
    resolution: when the spectral tail overflows after the peak has grown
    by that factor, the event is reported as suspected blowup.
    """

    peak_multiple: float = 1e6
    tail_threshold: float = 0.01
    concentration_multiple: float = 2.0


def spectral_tail_fraction(f: SpectralField) -> float:
    """Share of spectral energy in the top third of the retained band.

    Products are dealiased by the 2/3 rule, so the band kept by the solver
    is ``max(|i_x|, |i_y|) < n/3``; the tail is its outer third
    ``max(|i_x|, |i_y|) >= 2n/9`` plus anything beyond the band.
    """
    n = f.grid.n
    c2 = np.abs(f.coeffs) ** 2
    w = np.full(c2.shape[1], 2.0)
    w[0] = 1.0
    w[-1] = 1.0
    c2 = c2 * w
    total = c2.sum()
    if total == 0:
        return 0.0
    ix = np.abs(np.fft.fftfreq(n) * n)[:, None]
    iy = np.arange(c2.shape[1])[None, :]
    tail = np.maximum(ix, iy) >= 2 * n / 9
    return float(c2[tail].sum() / total)


def detect_blowup(
    state: EvolutionState,
    initial_peak: Optional[float] = None,
    detector: BlowupDetector = BlowupDetector(),
) -> BlowupVerdict:
    peak = float(np.abs(state.u.values).max())
    tail = spectral_tail_fraction(state.u)
    ref = initial_peak if initial_peak else None
    if ref is not None and peak > detector.peak_multiple * ref:
        status = Status.BLOWUP_SUSPECTED
    elif tail > detector.tail_threshold:
        grown = ref is not None and peak > detector.concentration_multiple * ref
        status = Status.BLOWUP_SUSPECTED if grown else Status.RESOLUTION_LOST
    else:
        status = Status.COMPLETED
    return BlowupVerdict(status, state.t, peak, tail)


def _transport(uc: np.ndarray, vc: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Coefficients of ``-div(u grad v)`` with 2/3-rule dealiasing."""
    mask = grid.dealias_mask
    dx, dy = grid.derivative_symbols
    n = grid.n
    u = _irfft2(uc * mask, n)
    vx = _irfft2(dx * vc * mask, n)
    vy = _irfft2(dy * vc * mask, n)
    fx = _rfft2(u * vx) * mask
    fy = _rfft2(u * vy) * mask
    return -(dx * fx + dy * fy)


def max_drift_speed(v: SpectralField) -> float:
    dx, dy = v.grid.derivative_symbols
    n = v.grid.n
    gx = _irfft2(dx * v.coeffs, n)
    gy = _irfft2(dy * v.coeffs, n)
    return float(np.sqrt(gx**2 + gy**2).max())


def cfl_step(state: EvolutionState, ctrl: StepController) -> float:
    speed = max_drift_speed(state.v)
    dt = ctrl.dt_max
    if speed > 0:
        dt = min(dt, ctrl.cfl_target * state.grid.spacing / speed)
    return max(dt, ctrl.dt_min)


def _advance(state: EvolutionState, dt: float, coupling: bool):
    g = state.grid
    tau, gamma = state.params.tau, state.params.gamma
    eu = np.exp(-g.k2 * dt)
    ev = np.exp(-(g.k2 + gamma) * dt / tau)
    u0, v0 = state.u.coeffs, state.v.coeffs
    if coupling:
        nu0 = _transport(u0, v0, g)
        nv0 = u0 / tau
    else:
        nu0 = np.zeros_like(u0)
        nv0 = np.zeros_like(v0)
    u1 = eu * (u0 + dt * nu0)
    v1 = ev * (v0 + dt * nv0)
    if coupling:
        nu1 = _transport(u1, v1, g)
        nv1 = u1 / tau
    else:
        nu1 = nu0
        nv1 = nv0
    u2 = eu * u0 + 0.5 * dt * (eu * nu0 + nu1)
    v2 = ev * v0 + 0.5 * dt * (ev * nv0 + nv1)
    return u2, v2


def step(
    state: EvolutionState,
    ctrl: StepController,
    dt: Optional[float] = None,
    coupling: bool = True,
) -> EvolutionState:
    """Advance one IMEX step.

    The step is ``dt`` when given, otherwise ``min(ctrl.dt, CFL limit)``.
    Non-finite results halve the step; going below ``ctrl.dt_min`` raises
    :class:`ResolutionLostError`.  With ``coupling=False`` the transport
    and source terms are switched off, leaving two independent heat flows.
    """
    h = min(ctrl.dt, cfl_step(state, ctrl)) if dt is None else dt
    while True:
        with np.errstate(over="ignore", invalid="ignore"):
            uc, vc = _advance(state, h, coupling)
        if np.all(np.isfinite(uc)) and np.all(np.isfinite(vc)):
            try:
                u = SpectralField(state.grid, coeffs=uc)
                v = SpectralField(state.grid, coeffs=vc)
                u.values, v.values
            except FloatingPointError:
                pass
            else:
                return EvolutionState(u, v, state.t + h, state.params, h)
        h *= 0.5
        if h < ctrl.dt_min:
            raise ResolutionLostError(state.t, h)
        log.info("non-finite step at t=%.6g, retrying with dt=%.3e", state.t, h)


def diagnostics(state: EvolutionState) -> Tuple[float, ...]:
    u = state.u
    return (
        state.t,
        u.integral(),
        lp_norm(u, 1),
        lp_norm(u, 2),
        lp_norm(u, math.inf),
        float(u.values.min()),
        state.dt,
        spectral_tail_fraction(u),
    )


def run(
    u0,
    horizon: float,
    params: Params,
    ctrl: Optional[StepController] = None,
    snapshots: Sequence[float] = (),
    grid: Optional[Grid2D] = None,
    v0: Optional[SpectralField] = None,
    t0: float = 0.0,
    detector: BlowupDetector = BlowupDetector(),
    series: Optional[list] = None,
    coupling: bool = True,
    check_every: int = 1,
) -> Tuple[List[EvolutionState], BlowupVerdict]:
    """Integrate from ``t0`` to ``t0 + horizon``.

    ``u0`` is a :class:`MollifiedMeasure` (realised on ``grid``), a
    :class:`SpectralField`, or an :class:`EvolutionState` to continue.
    States at the requested snapshot times (absolute) are returned, and
    rows of the time series are appended to ``series`` when supplied.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    ctrl = StepController() if ctrl is None else ctrl
    if isinstance(u0, EvolutionState):
        state = u0
        t0 = state.t
    else:
        if grid is None:
            if isinstance(u0, SpectralField):
                grid = u0.grid
            else:
                raise ValueError("a grid is needed to realise the initial measure")
        state = EvolutionState.initial(u0, grid, params, v0, t0)
    t_end = t0 + horizon
    targets = sorted(t for t in snapshots if t0 <= t <= t_end + 1e-12)
    states: List[EvolutionState] = []
    while targets and targets[0] <= t0 + 1e-14:
        states.append(state)
        targets.pop(0)
    initial_peak = float(np.abs(state.u.values).max())
    if series is not None:
        series.append(diagnostics(state))
    verdict = detect_blowup(state, initial_peak, detector)
    if verdict.status is not Status.COMPLETED:
        return states, verdict
    k = 0
    while state.t < t_end - 1e-12 * max(1.0, t_end):
        h = min(ctrl.dt, cfl_step(state, ctrl), t_end - state.t)
        if targets:
            h = min(h, targets[0] - state.t)
        try:
            state = step(state, ctrl, dt=h, coupling=coupling)
        except ResolutionLostError as exc:
            peak = float(np.abs(state.u.values).max())
            return states, BlowupVerdict(Status.RESOLUTION_LOST, exc.t, peak, spectral_tail_fraction(state.u))
        # grow back toward dt_max after a CFL-limited stretch
        ctrl.dt = min(ctrl.dt_max, max(ctrl.dt, 2 * h))
        k += 1
        if series is not None:
            series.append(diagnostics(state))
        while targets and abs(state.t - targets[0]) <= 1e-12 * max(1.0, targets[0]):
            states.append(state)
            targets.pop(0)
        if k % check_every == 0 or state.t >= t_end:
            verdict = detect_blowup(state, initial_peak, detector)
            if verdict.status is not Status.COMPLETED:
                log.warning("run stopped at t=%.6g: %s", state.t, verdict.status.value)
                return states, verdict
    verdict = detect_blowup(state, initial_peak, detector)
    if not snapshots:
        states.append(state)
    return states, verdict


def write_timeseries(path, rows: Sequence[Sequence[float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TIMESERIES_HEADER)
        for r in rows:
            w.writerow([repr(float(x)) for x in r])


def self_similarity_residual(states: Sequence[EvolutionState], profile) -> float:
    """Largest relative L2 gap between ``u(x, t)`` and ``U(|x|/sqrt t)/t``."""
    worst = 0.0
    for s in states:
        if s.t < 1 - 1e-12:
            raise ValueError(f"self-similarity check needs t >= 1, got {s.t}")
        ref = profile.density_field(s.grid, s.t)
        d = lp_norm(s.u - ref, 2)
        n = lp_norm(ref, 2)
        worst = max(worst, d / n if n > 0 else d)
    return worst
