"""Periodic pseudospectral fields on a square box standing in for the plane.

All fields are real and sampled on an ``n x n`` grid covering
``[-l/2, l/2)^2`` with ``values[i, j] = f(x_i, y_j)`` (axis 0 is ``x``).
Fourier coefficients use the unnormalised ``rfft2`` convention, so the
zero mode equals ``sum(values)`` and the integral of the field is
``spacing**2 * coeffs[0, 0]``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Tuple

import numpy as np
import scipy.fft as sfft

_FFT_WORKERS = 1


def set_fft_workers(n: int) -> None:
    """Set the number of threads handed to :mod:`scipy.fft`."""
    global _FFT_WORKERS
    _FFT_WORKERS = max(1, int(n))


class ResolutionError(ValueError):
    """Raised when data cannot be represented on the requested grid."""


class DomainSaturationWarning(UserWarning):
    """Field mass near the box boundary is no longer negligible."""


def _rfft2(a):
    return sfft.rfft2(a, workers=_FFT_WORKERS)


def _irfft2(c, n):
    return sfft.irfft2(c, s=(n, n), workers=_FFT_WORKERS)


@dataclass(frozen=True)
class Grid2D:
    n: int
    l: float

    def __post_init__(self):
        n = int(self.n)
        if n < 16 or n & (n - 1):
            raise ValueError(f"grid size must be a power of two >= 16, got {self.n}")
        if not self.l > 0:
            raise ValueError(f"box length must be positive, got {self.l}")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "l", float(self.l))

    @property
    def spacing(self) -> float:
        return self.l / self.n

    @cached_property
    def axis(self) -> np.ndarray:
        return -0.5 * self.l + self.spacing * np.arange(self.n)

    @cached_property
    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.axis, self.axis, indexing="ij")

    @cached_property
    def radius(self) -> np.ndarray:
        x, y = self.mesh
        return np.hypot(x, y)

    @cached_property
    def wavenumbers(self) -> Tuple[np.ndarray, np.ndarray]:
        """Angular wavenumbers ``(kx, ky)`` broadcast to the rfft2 layout."""
        kx = 2 * np.pi * sfft.fftfreq(self.n, d=self.spacing)
        ky = 2 * np.pi * sfft.rfftfreq(self.n, d=self.spacing)
        return kx[:, None], ky[None, :]

    @cached_property
    def k2(self) -> np.ndarray:
        kx, ky = self.wavenumbers
        return kx**2 + ky**2

    @cached_property
    def derivative_symbols(self) -> Tuple[np.ndarray, np.ndarray]:
        """``i*kx`` and ``i*ky`` with the Nyquist modes zeroed."""
        kx, ky = self.wavenumbers
        kx = kx.copy()
        ky = ky.copy()
        kx[self.n // 2, 0] = 0.0
        ky[0, self.n // 2] = 0.0
        return 1j * kx, 1j * ky

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """Square 2/3-rule mask: keep modes with integer index below n/3."""
        ix = np.abs(sfft.fftfreq(self.n) * self.n)[:, None]
        iy = (sfft.rfftfreq(self.n) * self.n)[None, :]
        return (ix < self.n / 3) & (iy < self.n / 3)

    def shift_phase(self, x0: float, y0: float) -> np.ndarray:
        kx, ky = self.wavenumbers
        return np.exp(-1j * (kx * (x0 + 0.5 * self.l) + ky * (y0 + 0.5 * self.l)))

    def contains(self, x: float, y: float) -> bool:
        h = 0.5 * self.l
        return -h <= x < h and -h <= y < h


class SpectralField:
    """Immutable real field with lazily cached Fourier coefficients."""

    __slots__ = ("grid", "_values", "_coeffs", "__weakref__")

    def __init__(self, grid: Grid2D, values=None, coeffs=None):
        if values is None and coeffs is None:
            raise ValueError("need values or coeffs")
        self.grid = grid
        self._values = None
        self._coeffs = None
        if values is not None:
            v = np.array(values, dtype=float)
            if v.shape != (grid.n, grid.n):
                raise ValueError(f"values have shape {v.shape}, grid wants {(grid.n, grid.n)}")
            if not np.all(np.isfinite(v)):
                raise FloatingPointError("field values must be finite")
            v.flags.writeable = False
            self._values = v
        if coeffs is not None:
            c = np.array(coeffs, dtype=complex)
            if c.shape != grid.k2.shape:
                raise ValueError(f"coefficients have shape {c.shape}, grid wants {grid.k2.shape}")
            c.flags.writeable = False
            self._coeffs = c

    @classmethod
    def zeros(cls, grid: Grid2D) -> "SpectralField":
        return cls(grid, coeffs=np.zeros(grid.k2.shape, dtype=complex))

    @classmethod
    def from_function(cls, grid: Grid2D, func) -> "SpectralField":
        x, y = grid.mesh
        return cls(grid, values=func(x, y))

    @property
    def values(self) -> np.ndarray:
        if self._values is None:
            v = _irfft2(self._coeffs, self.grid.n)
            if not np.all(np.isfinite(v)):
                raise FloatingPointError("field values must be finite")
            v.flags.writeable = False
            # benign race: any thread computes the same array
            self._values = v
        return self._values

    @property
    def coeffs(self) -> np.ndarray:
        if self._coeffs is None:
            c = _rfft2(self._values)
            c.flags.writeable = False
            self._coeffs = c
        return self._coeffs

    @property
    def has_coeffs(self) -> bool:
        return self._coeffs is not None

    def integral(self) -> float:
        return float(self.coeffs[0, 0].real) * self.grid.spacing**2

    def _check(self, other: "SpectralField"):
        if other.grid != self.grid:
            raise ValueError(f"grid mismatch: {self.grid} vs {other.grid}")

    def __add__(self, other):
        if isinstance(other, SpectralField):
            self._check(other)
            return SpectralField(self.grid, values=self.values + other.values)
        return SpectralField(self.grid, values=self.values + other)

    def __sub__(self, other):
        if isinstance(other, SpectralField):
            self._check(other)
            return SpectralField(self.grid, values=self.values - other.values)
        return SpectralField(self.grid, values=self.values - other)

    def __mul__(self, c):
        if isinstance(c, SpectralField):
            raise TypeError("use dealiased_product for field products")
        if self._coeffs is not None and self._values is None:
            return SpectralField(self.grid, coeffs=self._coeffs * c)
        return SpectralField(self.grid, values=self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __repr__(self):
        return f"SpectralField(n={self.grid.n}, l={self.grid.l})"


@dataclass(frozen=True)
class VectorField2D:
    x: SpectralField
    y: SpectralField

    def __post_init__(self):
        if self.x.grid != self.y.grid:
            raise ValueError("vector components must share a grid")

    @property
    def grid(self) -> Grid2D:
        return self.x.grid

    @classmethod
    def zeros(cls, grid: Grid2D) -> "VectorField2D":
        return cls(SpectralField.zeros(grid), SpectralField.zeros(grid))

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.x.values, self.y.values)

    def __add__(self, other: "VectorField2D") -> "VectorField2D":
        return VectorField2D(self.x + other.x, self.y + other.y)

    def __sub__(self, other: "VectorField2D") -> "VectorField2D":
        return VectorField2D(self.x - other.x, self.y - other.y)

    def __mul__(self, c: float) -> "VectorField2D":
        return VectorField2D(self.x * c, self.y * c)

    __rmul__ = __mul__


@dataclass(frozen=True)
class Atom:
    mass: float
    x: float = 0.0
    y: float = 0.0
    width: Optional[float] = None  # None -> 5 grid spacings at realisation time


@dataclass(frozen=True)
class MollifiedMeasure:
    """Gaussian-mollified atoms plus an optional smooth background."""

    atoms: Tuple[Atom, ...] = ()
    background: Optional[SpectralField] = None

    def __post_init__(self):
        atoms = tuple(a if isinstance(a, Atom) else Atom(*a) for a in self.atoms)
        for a in atoms:
            if a.width is not None and not a.width > 0:
                raise ValueError(f"atom width must be positive, got {a.width}")
            if not math.isfinite(a.mass):
                raise ValueError("atom mass must be finite")
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def single(cls, mass: float, width: Optional[float] = None, center=(0.0, 0.0)):
        return cls((Atom(mass, center[0], center[1], width),))

    @property
    def is_empty(self) -> bool:
        return not self.atoms and self.background is None

    def total_mass(self) -> float:
        m = sum(a.mass for a in self.atoms)
        if self.background is not None:
            m += self.background.integral()
        return m

    def total_variation(self) -> float:
        tv = sum(abs(a.mass) for a in self.atoms)
        if self.background is not None:
            tv += lp_norm(self.background, 1)
        return tv

    def scaled(self, c: float) -> "MollifiedMeasure":
        atoms = tuple(Atom(c * a.mass, a.x, a.y, a.width) for a in self.atoms)
        bg = None if self.background is None else self.background * c
        return MollifiedMeasure(atoms, bg)


@dataclass(frozen=True)
class Params:
    tau: float = 1.0
    gamma: float = 0.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")


def heat_propagate(f: SpectralField, t: float) -> SpectralField:
    """Apply the heat semigroup ``exp(t*Laplacian)`` exactly in Fourier space."""
    if t < 0:
        raise ValueError(f"heat_propagate needs t >= 0, got {t}")
    if t == 0:
        return f
    return SpectralField(f.grid, coeffs=f.coeffs * np.exp(-f.grid.k2 * t))


def screened_propagate(f: SpectralField, dt: float, params: Params) -> SpectralField:
    """Apply ``exp((dt/tau)*(Laplacian - gamma))``."""
    if dt < 0:
        raise ValueError(f"screened_propagate needs dt >= 0, got {dt}")
    if dt == 0:
        return f
    g = f.grid
    return SpectralField(g, coeffs=f.coeffs * np.exp(-(g.k2 + params.gamma) * dt / params.tau))


def gradient(f: SpectralField) -> VectorField2D:
    dx, dy = f.grid.derivative_symbols
    c = f.coeffs
    return VectorField2D(SpectralField(f.grid, coeffs=dx * c), SpectralField(f.grid, coeffs=dy * c))


def divergence(w: VectorField2D) -> SpectralField:
    dx, dy = w.grid.derivative_symbols
    return SpectralField(w.grid, coeffs=dx * w.x.coeffs + dy * w.y.coeffs)


def laplacian(f: SpectralField) -> SpectralField:
    return SpectralField(f.grid, coeffs=-f.grid.k2 * f.coeffs)


def truncate(f: SpectralField) -> SpectralField:
    """Zero every mode outside the 2/3-rule band."""
    return SpectralField(f.grid, coeffs=f.coeffs * f.grid.dealias_mask)


def dealiased_product(f: SpectralField, g: SpectralField) -> SpectralField:
    if f.grid != g.grid:
        raise ValueError(f"grid mismatch: {f.grid} vs {g.grid}")
    grid = f.grid
    mask = grid.dealias_mask
    a = _irfft2(f.coeffs * mask, grid.n)
    b = _irfft2(g.coeffs * mask, grid.n)
    return SpectralField(grid, coeffs=_rfft2(a * b) * mask)


def dealiased_vector_product(f: SpectralField, w: VectorField2D) -> VectorField2D:
    """``f * w`` componentwise, sharing the truncated transform of ``f``."""
    grid = f.grid
    mask = grid.dealias_mask
    a = _irfft2(f.coeffs * mask, grid.n)
    bx = _irfft2(w.x.coeffs * mask, grid.n)
    by = _irfft2(w.y.coeffs * mask, grid.n)
    return VectorField2D(
        SpectralField(grid, coeffs=_rfft2(a * bx) * mask),
        SpectralField(grid, coeffs=_rfft2(a * by) * mask),
    )


def gaussian_kernel(grid: Grid2D, t: float, mass: float = 1.0, center=(0.0, 0.0)) -> SpectralField:
    """Sampled heat kernel ``mass * G(x - center, t)`` for ``t > 0``.

    Periodic images are summed so the field stays consistent with the
    spectral propagators even when the kernel is wide.
    """
    if not t > 0:
        raise ValueError("gaussian_kernel needs t > 0")
    x, y = grid.mesh
    l = grid.l
    x = x - center[0]
    y = y - center[1]
    # wrap displacements into [-l/2, l/2)
    x = (x + 0.5 * l) % l - 0.5 * l
    y = (y + 0.5 * l) % l - 0.5 * l
    images = int(np.ceil(np.sqrt(4 * t * 40) / l))
    gx = sum(np.exp(-((x + m * l) ** 2) / (4 * t)) for m in range(-images, images + 1))
    gy = sum(np.exp(-((y + m * l) ** 2) / (4 * t)) for m in range(-images, images + 1))
    return SpectralField(grid, values=mass * gx * gy / (4 * np.pi * t))


def spectral_heat_kernel(grid: Grid2D, t: float, mass: float = 1.0, center=(0.0, 0.0)) -> SpectralField:
    """Band-limited periodic heat kernel built mode by mode; valid for any ``t >= 0``."""
    if t < 0:
        raise ValueError("spectral_heat_kernel needs t >= 0")
    c = mass * np.exp(-grid.k2 * t) * grid.shift_phase(*center) / grid.spacing**2
    # round-trip through physical space so the Nyquist modes stay Hermitian
    return SpectralField(grid, values=_irfft2(c, grid.n))


def realize_measure(m: MollifiedMeasure, grid: Grid2D) -> SpectralField:
    """Sample a mollified measure on ``grid``.

    Each atom becomes ``mass * G(x - center, width**2 / 2)``, i.e. a
    Gaussian with standard deviation ``width`` per coordinate.
    """
    total = np.zeros((grid.n, grid.n))
    for k, a in enumerate(m.atoms):
        eps = 5 * grid.spacing if a.width is None else a.width
        if not grid.contains(a.x, a.y):
            raise ResolutionError(f"atom {k} at ({a.x}, {a.y}) lies outside the box of side {grid.l}")
        if eps < 2 * grid.spacing:
            raise ResolutionError(
                f"atom {k} width {eps} is below two grid spacings ({2 * grid.spacing}); refine the grid"
            )
        if 3 * eps >= grid.l / 2:
            raise ResolutionError(f"atom {k} width {eps} is too wide for a box of side {grid.l}")
        total += gaussian_kernel(grid, eps**2 / 2, a.mass, (a.x, a.y)).values
    if m.background is not None:
        if m.background.grid != grid:
            raise ValueError("background field lives on a different grid")
        total += m.background.values
    return SpectralField(grid, values=total)


def lp_norm(f: SpectralField, p: float) -> float:
    """Rectangle-rule ``L^p`` norm; ``p = inf`` is the grid maximum."""
    if not p >= 1:
        raise ValueError(f"lp_norm needs p >= 1, got {p}")
    a = np.abs(f.values)
    if math.isinf(p):
        return float(a.max())
    h2 = f.grid.spacing**2
    if p == 1:
        return float(h2 * a.sum())
    m = a.max()
    if m == 0:
        return 0.0
    # scale before powering to avoid overflow for large p
    return float(m * (h2 * np.sum((a / m) ** p)) ** (1.0 / p))


def l2_distance(f: SpectralField, g: SpectralField, relative: bool = True) -> float:
    d = lp_norm(f - g, 2)
    if relative:
        ref = lp_norm(g, 2)
        return d / ref if ref > 0 else d
    return d


def outer_mass_fraction(f: SpectralField, radius: Optional[float] = None) -> float:
    """Fraction of ``|f|`` mass outside ``radius`` (default ``l/4``)."""
    r = f.grid.l / 4 if radius is None else radius
    a = np.abs(f.values)
    total = a.sum()
    if total == 0:
        return 0.0
    return float(a[f.grid.radius > r].sum() / total)


def check_domain(f: SpectralField, tol: float = 1e-8, name: str = "field") -> bool:
    """Warn when more than ``tol`` of the field mass sits outside radius ``l/4``."""
    frac = outer_mass_fraction(f)
    if frac > tol:
        warnings.warn(
            f"domain-saturation: {frac:.2e} of {name} mass lies outside radius l/4",
            DomainSaturationWarning,
            stacklevel=2,
        )
        return False
    return True


def gaussian_lp_norm(t: float, p: float, mass: float = 1.0) -> float:
    """Closed-form ``||mass * G(., t)||_p`` on the plane."""
    if math.isinf(p):
        return abs(mass) / (4 * math.pi * t)
    return abs(mass) * (4 * math.pi * t) ** (-(1 - 1 / p)) * p ** (-1 / p)
