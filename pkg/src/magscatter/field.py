"""Periodic grids, spectral transforms, derivatives and norms.

Every field in the package lives on a :class:`Grid`, a periodic box
``[-L/2, L/2)^dim`` sampled with ``n`` points per axis.  The origin is the
grid node with index ``n // 2`` on each axis.

Spectral coefficients use the unnormalised numpy convention
``F_m = sum_j f_j exp(-i k_m (x_j - x_0))`` so that the trigonometric
interpolant is ``p(x) = (1/n) sum_m F_m exp(i k_m (x - x_0))``.
"""

from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.fft as sfft

from .errors import GridMismatchError, NonZeroMeanError

PHYSICAL = "physical"
SPECTRAL = "spectral"


def fft_workers() -> int:
    """Thread count for FFTs, capped by ``MAGSCATTER_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("MAGSCATTER_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on ``[-L/2, L/2)^dim``."""

    dim: int
    n: int
    L: float

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.n < 4 or self.n % 2:
            raise ValueError(f"n must be even and >= 4, got {self.n}")
        if not self.L > 0:
            raise ValueError(f"box length must be positive, got {self.L}")

    @property
    def h(self) -> float:
        return self.L / self.n

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n ** self.dim

    @property
    def axes(self) -> tuple:
        return tuple(range(-self.dim, 0))

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim

    @property
    def k_nyquist(self) -> float:
        return math.pi / self.h

    @cached_property
    def x1d(self) -> np.ndarray:
        return -self.L / 2 + self.h * np.arange(self.n)

    @cached_property
    def k1d(self) -> np.ndarray:
        """Wavenumbers in FFT order; index ``n//2`` is the Nyquist mode ``-pi/h``."""
        return 2 * np.pi * np.fft.fftfreq(self.n, d=self.h)

    @cached_property
    def k1d_odd(self) -> np.ndarray:
        # Nyquist zeroed for odd-order derivatives so real fields stay real
        k = self.k1d.copy()
        k[self.n // 2] = 0.0
        return k

    def _broadcast(self, v: np.ndarray, axis: int) -> np.ndarray:
        shape = [1] * self.dim
        shape[axis] = self.n
        return v.reshape(shape)

    @cached_property
    def coords(self) -> tuple:
        """Broadcastable coordinate arrays, one per axis."""
        return tuple(self._broadcast(self.x1d, a) for a in range(self.dim))

    @cached_property
    def kvec(self) -> tuple:
        return tuple(self._broadcast(self.k1d, a) for a in range(self.dim))

    @cached_property
    def kvec_odd(self) -> tuple:
        return tuple(self._broadcast(self.k1d_odd, a) for a in range(self.dim))

    @cached_property
    def k2(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for k in self.kvec:
            out = out + k ** 2
        return out

    @cached_property
    def kabs(self) -> np.ndarray:
        return np.sqrt(self.k2)

    @cached_property
    def r2(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for x in self.coords:
            out = out + x ** 2
        return out

    def points(self) -> np.ndarray:
        """All grid points as an array of shape ``(dim, n, ..., n)``."""
        return np.stack(np.broadcast_arrays(*self.coords))

    def contains(self, x: np.ndarray) -> np.ndarray:
        """Mask of points (last axis = coordinate) inside the box."""
        x = np.asarray(x)
        return np.all((x >= -self.L / 2) & (x < self.L / 2), axis=0)


def fft(values: np.ndarray, grid: Grid) -> np.ndarray:
    return sfft.fftn(values, axes=grid.axes, workers=fft_workers())


def ifft(values: np.ndarray, grid: Grid) -> np.ndarray:
    return sfft.ifftn(values, axes=grid.axes, workers=fft_workers())


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Complex samples on a grid, in physical or spectral representation."""

    grid: Grid
    values: np.ndarray
    rep: str = PHYSICAL

    def __post_init__(self):
        if self.rep not in (PHYSICAL, SPECTRAL):
            raise ValueError(f"unknown representation {self.rep!r}")
        vals = np.asarray(self.values)
        if vals.shape != self.grid.shape:
            raise ValueError(f"expected shape {self.grid.shape}, got {vals.shape}")
        object.__setattr__(self, "values", _frozen(vals))

    def physical(self) -> np.ndarray:
        return self.values if self.rep == PHYSICAL else ifft(self.values, self.grid)

    def spectral(self) -> np.ndarray:
        return self.values if self.rep == SPECTRAL else fft(self.values, self.grid)

    def with_values(self, values: np.ndarray, rep: str | None = None) -> "ScalarField":
        return ScalarField(self.grid, values, rep or self.rep)

    def __add__(self, other: "ScalarField") -> "ScalarField":
        _check_same_grid(self, other)
        return ScalarField(self.grid, self.physical() + other.physical())

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        _check_same_grid(self, other)
        return ScalarField(self.grid, self.physical() - other.physical())

    def __mul__(self, c) -> "ScalarField":
        if isinstance(c, ScalarField):
            _check_same_grid(self, c)
            return ScalarField(self.grid, self.physical() * c.physical())
        return ScalarField(self.grid, self.values * c, self.rep)

    __rmul__ = __mul__

    def conj(self) -> "ScalarField":
        return ScalarField(self.grid, np.conj(self.physical()))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "ScalarField":
        """Sample ``fn(*coords)`` at the grid points."""
        vals = np.broadcast_to(fn(*grid.coords), grid.shape)
        return cls(grid, vals)


@dataclass(frozen=True, eq=False)
class VectorField:
    """``dim`` scalar components stacked along a leading axis."""

    grid: Grid
    values: np.ndarray
    rep: str = PHYSICAL

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.shape != (self.grid.dim,) + self.grid.shape:
            raise ValueError(
                f"expected shape {(self.grid.dim,) + self.grid.shape}, got {vals.shape}"
            )
        object.__setattr__(self, "values", _frozen(vals))

    @property
    def components(self) -> tuple:
        return tuple(ScalarField(self.grid, v, self.rep) for v in self.values)

    def physical(self) -> np.ndarray:
        return self.values if self.rep == PHYSICAL else ifft(self.values, self.grid)

    def spectral(self) -> np.ndarray:
        return self.values if self.rep == SPECTRAL else fft(self.values, self.grid)

    def __add__(self, other: "VectorField") -> "VectorField":
        _check_same_grid(self, other)
        return VectorField(self.grid, self.physical() + other.physical())

    def __sub__(self, other: "VectorField") -> "VectorField":
        _check_same_grid(self, other)
        return VectorField(self.grid, self.physical() - other.physical())

    def __mul__(self, c) -> "VectorField":
        return VectorField(self.grid, self.values * c, self.rep)

    __rmul__ = __mul__

    def magnitude(self) -> ScalarField:
        return ScalarField(self.grid, np.sqrt(np.sum(np.abs(self.physical()) ** 2, axis=0)))


def _check_same_grid(*fields) -> None:
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise GridMismatchError(f"grids differ: {g} vs {f.grid}")


@dataclass(frozen=True)
class NormSpec:
    """Which norm to evaluate.

    ``lebesgue``: ``||f||_r``; ``sobolev``: ``sum_{|a|<=k} ||d^a f||_r``;
    ``omega``: ``||omega^s f||_r`` with ``omega = (-Laplacian)^{1/2}``.
    """

    kind: str
    r: float = 2.0
    k: int = 0
    s: float = 0.0

    def __post_init__(self):
        if self.kind not in ("lebesgue", "sobolev", "omega"):
            raise ValueError(f"unknown norm kind {self.kind!r}")
        if not self.r >= 1:
            raise ValueError(f"r must be >= 1, got {self.r}")
        if self.k < 0:
            raise ValueError("Sobolev order must be nonnegative")

    @classmethod
    def lebesgue(cls, r: float = 2.0) -> "NormSpec":
        return cls("lebesgue", r=float(r))

    @classmethod
    def sobolev(cls, k: int, r: float = 2.0) -> "NormSpec":
        return cls("sobolev", r=float(r), k=int(k))

    @classmethod
    def omega(cls, s: float, r: float = 2.0) -> "NormSpec":
        return cls("omega", r=float(r), s=float(s))

    @property
    def label(self) -> str:
        r = "inf" if math.isinf(self.r) else f"{self.r:g}"
        if self.kind == "lebesgue":
            return f"L{r}"
        if self.kind == "sobolev":
            return f"H{self.k}_{r}"
        return f"omega{self.s:g}_L{r}"


def transform(f: ScalarField, target: str) -> ScalarField:
    if target == f.rep:
        return f
    if target == SPECTRAL:
        return ScalarField(f.grid, fft(f.values, f.grid), SPECTRAL)
    if target == PHYSICAL:
        return ScalarField(f.grid, ifft(f.values, f.grid), PHYSICAL)
    raise ValueError(f"unknown representation {target!r}")


def derivative_symbol(grid: Grid, alpha: Sequence[int]) -> np.ndarray:
    """Spectral multiplier ``prod_j (i k_j)^{alpha_j}``."""
    if len(alpha) != grid.dim:
        raise ValueError(f"multiindex {alpha} does not match dim {grid.dim}")
    sym = np.ones(grid.shape, dtype=complex)
    for a, k, kodd in zip(alpha, grid.kvec, grid.kvec_odd):
        if a:
            sym = sym * (1j * (kodd if a % 2 else k)) ** a
    return sym


def derivative(f: ScalarField, alpha: Sequence[int]) -> ScalarField:
    out = derivative_symbol(f.grid, alpha) * f.spectral()
    if f.rep == SPECTRAL:
        return ScalarField(f.grid, out, SPECTRAL)
    return ScalarField(f.grid, ifft(out, f.grid))


def laplacian(f: ScalarField) -> ScalarField:
    out = -f.grid.k2 * f.spectral()
    if f.rep == SPECTRAL:
        return ScalarField(f.grid, out, SPECTRAL)
    return ScalarField(f.grid, ifft(out, f.grid))


def zero_mode_ok(spec_values: np.ndarray, grid: Grid, tol: float = 1e-10) -> bool:
    """True when the mean is negligible relative to the RMS of the field."""
    flat = spec_values.reshape(spec_values.shape[: spec_values.ndim - grid.dim] + (-1,))
    mean = np.abs(flat[..., 0]) / grid.size
    rms = np.sqrt(np.sum(np.abs(flat) ** 2, axis=-1)) / grid.size
    return bool(np.all(mean <= tol * np.maximum(rms, 1e-300)))


def omega_power(f: ScalarField, s: float) -> ScalarField:
    """Apply ``omega^s``; the zero mode is always mapped to 0."""
    spec = f.spectral()
    if s < 0 and not zero_mode_ok(spec, f.grid):
        raise NonZeroMeanError("omega^s with s < 0 needs a mean-free field")
    kabs = f.grid.kabs
    sym = np.zeros_like(kabs)
    nz = kabs > 0
    sym[nz] = kabs[nz] ** s
    out = sym * spec
    if f.rep == SPECTRAL:
        return ScalarField(f.grid, out, SPECTRAL)
    return ScalarField(f.grid, ifft(out, f.grid))


def multiindices(k: int, dim: int) -> list:
    """All multiindices with ``|alpha| <= k``, ordered by total degree."""
    out = []
    for order in range(k + 1):
        for alpha in itertools.product(range(order + 1), repeat=dim):
            if sum(alpha) == order:
                out.append(alpha)
    return out


def lebesgue_norm(values: np.ndarray, grid: Grid, r: float) -> float:
    """``||f||_r`` of physical samples; vector inputs use the pointwise Euclidean modulus."""
    mod = np.abs(values)
    if mod.ndim > grid.dim:
        mod = np.sqrt(np.sum(mod ** 2, axis=tuple(range(mod.ndim - grid.dim))))
    if math.isinf(r):
        return float(mod.max())
    if r == 2:
        return float(math.sqrt(grid.cell_volume * np.sum(mod ** 2)))
    return float((grid.cell_volume * np.sum(mod ** r)) ** (1.0 / r))


def norm(f, spec: NormSpec) -> float:
    """Evaluate ``spec`` on a scalar or vector field."""
    if isinstance(f, VectorField):
        if spec.kind == "lebesgue":
            return lebesgue_norm(f.physical(), f.grid, spec.r)
        if spec.kind == "sobolev":
            total = 0.0
            for alpha in multiindices(spec.k, f.grid.dim):
                sym = derivative_symbol(f.grid, alpha)
                total += lebesgue_norm(ifft(sym * f.spectral(), f.grid), f.grid, spec.r)
            return total
        vals = np.stack([omega_power(c, spec.s).physical() for c in f.components])
        return lebesgue_norm(vals, f.grid, spec.r)
    if spec.kind == "lebesgue":
        return lebesgue_norm(f.physical(), f.grid, spec.r)
    if spec.kind == "sobolev":
        return sum(
            lebesgue_norm(derivative(f, alpha).physical(), f.grid, spec.r)
            for alpha in multiindices(spec.k, f.grid.dim)
        )
    return lebesgue_norm(omega_power(f, spec.s).physical(), f.grid, spec.r)


def inner(f: np.ndarray, g: np.ndarray, grid: Grid) -> complex:
    """Discrete ``<f, g> = h^dim sum conj(f) g`` (conjugate-linear in f)."""
    return complex(grid.cell_volume * np.vdot(f, g))


def gradient(values: np.ndarray, grid: Grid) -> np.ndarray:
    spec = fft(values, grid)
    return np.stack([ifft(1j * k * spec, grid) for k in grid.kvec_odd])


def divergence(vec: np.ndarray, grid: Grid) -> np.ndarray:
    spec = fft(vec, grid)
    out = sum(1j * k * s for k, s in zip(grid.kvec_odd, spec))
    return ifft(out, grid)


def curl(vec: np.ndarray, grid: Grid) -> np.ndarray:
    if grid.dim != 3:
        raise ValueError("curl is defined for dim = 3 only")
    s = fft(vec, grid)
    kx, ky, kz = grid.kvec_odd
    out = np.stack([
        1j * (ky * s[2] - kz * s[1]),
        1j * (kz * s[0] - kx * s[2]),
        1j * (kx * s[1] - ky * s[0]),
    ])
    return ifft(out, grid)


def support_radius(values: np.ndarray, grid: Grid, rel_tol: float = 1e-8) -> float:
    """Largest ``|x|`` where the modulus exceeds ``rel_tol`` times its maximum."""
    mod = np.abs(values)
    if mod.ndim > grid.dim:
        mod = np.sqrt(np.sum(mod ** 2, axis=tuple(range(mod.ndim - grid.dim))))
    peak = mod.max()
    if peak == 0:
        return 0.0
    mask = mod > rel_tol * peak
    return float(np.sqrt(grid.r2[mask].max()))


# --- evaluation at off-grid points ------------------------------------------------


def interpolation_matrix(grid: Grid, targets: np.ndarray) -> np.ndarray:
    """Matrix mapping samples on one axis to the trigonometric interpolant at ``targets``.

    Targets outside the box get a zero row: fields are taken to vanish
    outside ``[-L/2, L/2)``.
    """
    targets = np.asarray(targets, dtype=float)
    x0 = -grid.L / 2
    k = grid.k1d
    phase = np.exp(1j * np.outer(targets - x0, k))
    nyq = grid.n // 2
    phase[:, nyq] = np.cos(k[nyq] * (targets - x0))
    j = np.arange(grid.n)
    dft = np.exp(-2j * np.pi * np.outer(np.arange(grid.n), j) / grid.n)
    mat = phase @ dft / grid.n
    outside = (targets < -grid.L / 2) | (targets >= grid.L / 2)
    mat[outside] = 0.0
    return mat


def fourier_matrix(grid: Grid, xi: np.ndarray) -> np.ndarray:
    """One-axis quadrature for the unitary continuous Fourier transform at ``xi``.

    Frequencies at or beyond the Nyquist wavenumber get a zero row; a
    resolved field has no content there, and the quadrature sum would only
    return an alias.
    """
    xi = np.asarray(xi, dtype=float)
    mat = grid.h / math.sqrt(2 * math.pi) * np.exp(-1j * np.outer(xi, grid.x1d))
    mat[np.abs(xi) >= grid.k_nyquist] = 0.0
    return mat


def apply_separable(values: np.ndarray, mats: Sequence[np.ndarray], grid: Grid) -> np.ndarray:
    """Apply one matrix per spatial axis (the last ``dim`` axes of ``values``)."""
    out = values
    for a, mat in enumerate(mats):
        axis = out.ndim - grid.dim + a
        out = np.moveaxis(np.tensordot(mat, out, axes=([1], [axis])), 0, axis)
    return out


def evaluate_on_scaled_grid(values: np.ndarray, grid: Grid, scale: float) -> np.ndarray:
    """Values of the interpolant at ``scale * x`` for every grid point ``x``."""
    mat = interpolation_matrix(grid, scale * grid.x1d)
    return apply_separable(values, [mat] * grid.dim, grid)


def random_field(grid: Grid, rng: np.random.Generator, smooth: float | None = None,
                 real: bool = False) -> ScalarField:
    """Random test field; ``smooth`` applies a Gaussian spectral filter of that width."""
    vals = rng.standard_normal(grid.shape)
    if not real:
        vals = vals + 1j * rng.standard_normal(grid.shape)
    if smooth is not None:
        vals = ifft(np.exp(-0.5 * (smooth * grid.k2)) * fft(vals, grid), grid)
        if real:
            vals = vals.real
    return ScalarField(grid, vals)


def gaussian(grid: Grid, sigma: float, center: Iterable[float] | None = None,
             amplitude: complex = 1.0, momentum: Iterable[float] | None = None) -> ScalarField:
    """Sampled ``amplitude * exp(-|x-c|^2 / 2 sigma^2 + i p.x)``."""
    c = np.zeros(grid.dim) if center is None else np.asarray(list(center), float)
    p = np.zeros(grid.dim) if momentum is None else np.asarray(list(momentum), float)
    r2 = sum((x - ci) ** 2 for x, ci in zip(grid.coords, c))
    phase = sum(x * pi for x, pi in zip(grid.coords, p))
    return ScalarField(grid, np.broadcast_to(
        amplitude * np.exp(-r2 / (2 * sigma ** 2) + 1j * phase), grid.shape))
