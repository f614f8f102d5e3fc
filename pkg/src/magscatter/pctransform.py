"""Free Schrodinger group, pseudoconformal inversion and the w-side potentials.

Conventions: ``U(t) = exp(i t Delta / 2)``, ``M(t) = exp(i x^2 / 2t)``,
``(D_0(t) f)(x) = f(x/t)``, ``D(t) = (it)^{-dim/2} D_0(t)`` on the principal
branch, and ``F`` is the unitary Fourier transform
``(F f)(xi) = (2 pi)^{-dim/2} int exp(-i xi.x) f(x) dx``.

The inversion is ``u(t) = M(t) D(t) conj(w(1/t))`` together with
``B(t, y) = -t^{-1} A(1/t, y/t)`` and ``Bcheck(t) = -t^{-1} y.B(t)``.  The sign of
``Bcheck`` is the one for which the w-equation reads
``i dw/dt = -(1/2) Delta_B w - Bcheck w`` under ``Delta_A = (grad - i A)^2``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from . import field as fld
from .errors import AnalyticVariantRequiredError, WraparoundError, ZeroTimeError
from .field import Grid, ScalarField, VectorField
from .wavefield import CurlGaussian, WaveData, eval_analytic

SUPPORT_TOL = 1e-8


def free_prop_U(f: ScalarField, t: float) -> ScalarField:
    """Spectral multiplier ``exp(-i t |k|^2 / 2)``."""
    out = np.exp(-0.5j * t * f.grid.k2) * f.spectral()
    if f.rep == fld.SPECTRAL:
        return ScalarField(f.grid, out, fld.SPECTRAL)
    return ScalarField(f.grid, fld.ifft(out, f.grid))


def _nonzero(t: float) -> float:
    t = float(t)
    if t == 0:
        raise ZeroTimeError("the pseudoconformal factors are singular at t = 0")
    return t


def chirp(grid: Grid, t: float) -> np.ndarray:
    return np.exp(0.5j * grid.r2 / _nonzero(t))


def gauge_M(f: ScalarField, t: float) -> ScalarField:
    return ScalarField(f.grid, chirp(f.grid, t) * f.physical())


def dilation_prefactor(t: float, dim: int) -> complex:
    """``(it)^{-dim/2}`` with the principal logarithm of ``it``."""
    return cmath.exp(-0.5 * dim * cmath.log(1j * _nonzero(t)))


def _dilate_values(values: np.ndarray, source: Grid, target: Grid, t: float) -> np.ndarray:
    """Samples of the interpolant of ``values`` at ``x/t`` for ``x`` on ``target``."""
    radius = fld.support_radius(values, source, SUPPORT_TOL)
    if abs(t) * radius > target.L / 2:
        raise WraparoundError(
            f"dilated support {abs(t) * radius:.3g} exceeds the half box {target.L / 2:.3g}")
    mat = fld.interpolation_matrix(source, target.x1d / t)
    return fld.apply_separable(values, [mat] * source.dim, source)


def dilate_D(f: ScalarField, t: float, kind: str = "D", target: Grid | None = None) -> ScalarField:
    """``D_0(t) f`` or ``D(t) f``, sampled on ``target`` (default: the grid of ``f``)."""
    t = _nonzero(t)
    target = target or f.grid
    if target.dim != f.grid.dim:
        raise ValueError("dilation target must have the same dimension")
    vals = _dilate_values(f.physical(), f.grid, target, t)
    if kind == "D":
        vals = dilation_prefactor(t, f.grid.dim) * vals
    elif kind != "D0":
        raise ValueError(f"unknown dilation kind {kind!r}")
    return ScalarField(target, vals)


def natural_grid(grid: Grid, scale: float) -> Grid:
    """Grid whose nodes are ``scale`` times the nodes of ``grid``."""
    return Grid(grid.dim, grid.n, grid.L * abs(scale))


def continuous_ft_at(f: ScalarField, xi_axes) -> np.ndarray:
    """Unitary continuous Fourier transform on a tensor lattice of frequencies."""
    mats = [fld.fourier_matrix(f.grid, xi) for xi in xi_axes]
    return fld.apply_separable(f.physical(), mats, f.grid)


def continuous_ft_on(f: ScalarField, target: Grid) -> ScalarField:
    """``F f`` sampled at the nodes of ``target`` (read as frequencies)."""
    return ScalarField(target, continuous_ft_at(f, [target.x1d] * f.grid.dim))


def inverse_ft_on(g: ScalarField, target: Grid) -> ScalarField:
    """``F^{-1} g`` on ``target``; ``F^{-1} g = conj(F conj(g))``."""
    return ScalarField(target, np.conj(continuous_ft_at(g.conj(), [target.x1d] * g.grid.dim)))


@dataclass
class FactorizationReport:
    discrepancy: float
    relative: float
    norm_direct: float
    norm_factored: float


def factorization_check(f: ScalarField, t: float) -> FactorizationReport:
    """Compare ``U(t) f`` with ``M(t) D(t) F M(t) f`` on the grid of ``f``.

    ``D(t) F g`` is evaluated as ``(it)^{-dim/2} (F g)(x/t)`` with the
    continuous transform computed by grid quadrature.
    """
    t = _nonzero(t)
    g = f.grid
    direct = free_prop_U(f, t).physical()
    mf = gauge_M(f, t)
    fg = continuous_ft_at(mf, [g.x1d / t] * g.dim)
    factored = chirp(g, t) * dilation_prefactor(t, g.dim) * fg
    disc = fld.lebesgue_norm(direct - factored, g, 2)
    fn = fld.lebesgue_norm(f.physical(), g, 2)
    return FactorizationReport(disc, disc / fn, fld.lebesgue_norm(direct, g, 2),
                               fld.lebesgue_norm(factored, g, 2))


@dataclass(frozen=True, eq=False)
class TransformedPair:
    t_u: float
    t_w: float
    u: ScalarField
    w: ScalarField


def w_to_u(w: ScalarField, t_w: float, u_grid: Grid | None = None) -> TransformedPair:
    """``u(t) = M(t) D(t) conj(w(1/t))`` with ``t = 1/t_w``.

    The chirp is applied pointwise after the dilation, so ``u`` is exact at
    the nodes even where its phase is not resolved by ``u_grid``.
    """
    t_u = 1.0 / _nonzero(t_w)
    u_grid = u_grid or natural_grid(w.grid, t_u)
    vals = _dilate_values(np.conj(w.physical()), w.grid, u_grid, t_u)
    vals = chirp(u_grid, t_u) * dilation_prefactor(t_u, u_grid.dim) * vals
    return TransformedPair(t_u, float(t_w), ScalarField(u_grid, vals), w)


def u_to_w(u: ScalarField, t_u: float, w_grid: Grid | None = None) -> TransformedPair:
    """Inverse of :func:`w_to_u`: ``w(1/t) = conj(D(t)^{-1} M(-t) u(t))``."""
    t_u = _nonzero(t_u)
    w_grid = w_grid or natural_grid(u.grid, 1.0 / t_u)
    dechirped = np.conj(chirp(u.grid, t_u)) * u.physical()
    # D(t)^{-1} = (it)^{dim/2} D_0(1/t)
    vals = _dilate_values(dechirped, u.grid, w_grid, 1.0 / t_u)
    vals = vals / dilation_prefactor(t_u, u.grid.dim)
    return TransformedPair(t_u, 1.0 / t_u, u, ScalarField(w_grid, np.conj(vals)))


def w_star(w: ScalarField) -> ScalarField:
    """``w_*(t) = conj(w(1/t))`` as a field; the caller relabels the time."""
    return w.conj()


def interaction_u(u: ScalarField, t_u: float) -> ScalarField:
    """``u~(t) = U(-t) u(t)``."""
    return free_prop_U(u, -t_u)


def identity_1_19(u: ScalarField, w: ScalarField, t_u: float) -> dict:
    """Discrepancies in ``F u~(t) = conj(w~(1/t)) = U(1/t) w_*(t)``.

    ``F u~`` is evaluated on the w-grid by quadrature over the u-grid.
    """
    t_w = 1.0 / t_u
    fu = continuous_ft_on(interaction_u(u, t_u), w.grid).physical()
    wt = np.conj(free_prop_U(w, -t_w).physical())
    uw = free_prop_U(w_star(w), t_w).physical()
    g = w.grid
    scale = fld.lebesgue_norm(wt, g, 2)
    return {
        "ft_vs_wtilde": fld.lebesgue_norm(fu - wt, g, 2) / scale,
        "wtilde_vs_wstar": fld.lebesgue_norm(wt - uw, g, 2) / scale,
    }


def galilei_J(f: ScalarField, t: float, axis: int) -> ScalarField:
    """``(x_j + i t d_j) f``, the Galilei generator component along ``axis``."""
    alpha = [0] * f.grid.dim
    alpha[axis] = 1
    df = fld.derivative(f, alpha).physical()
    return ScalarField(f.grid, f.grid.coords[axis] * f.physical() + 1j * t * df)


# --- w-side potentials -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BSample:
    t: float
    b: VectorField
    bcheck: ScalarField

    def b_squared(self) -> np.ndarray:
        return np.sum(np.abs(self.b.physical()) ** 2, axis=0)


def b_at_points(data: WaveData, t_w: float, points: np.ndarray):
    """``B(t, y)`` and ``Bcheck(t, y)`` at arbitrary points ``y`` (shape ``(3, ...)``)."""
    if not isinstance(data.source, CurlGaussian):
        raise AnalyticVariantRequiredError(
            "B samples A far outside any fixed grid; analytic data are required")
    t_w = float(t_w)
    if t_w <= 0:
        raise ValueError(f"t_w must be positive, got {t_w}")
    vals = eval_analytic(data, 1.0 / t_w, np.asarray(points, dtype=float) / t_w)
    return -vals.a / t_w, vals.x_dot_a / t_w


def B_from_A(data: WaveData, t_w: float, grid: Grid) -> BSample:
    """Sample ``B(t_w)`` and ``Bcheck(t_w)`` on ``grid``."""
    if grid.dim != 3:
        raise ValueError("magnetic potentials live in three dimensions")
    b, bc = b_at_points(data, t_w, grid.points())
    return BSample(float(t_w), VectorField(grid, b), ScalarField(grid, bc))


def _b_symbols(src: CurlGaussian, t_w: float, grid: Grid):
    """Continuum transforms of ``B`` and ``Bcheck`` at the grid wavevectors.

    With ``A_+ = curl(phi e)`` and ``A_dot_+ = 0``,
    ``F B(t, k) = -i t^3 cos|k| (k x e) phi_hat(t k)`` and
    ``F Bcheck(t, k) = i t^3 cos|k| phi_hat(t k) c.(k x e)``.
    Also returns the common factor of their time derivatives.
    """
    k = np.stack(np.broadcast_arrays(*grid.kvec))
    e = np.asarray(src.axis).reshape((3,) + (1,) * 3)
    c = np.asarray(src.center).reshape((3,) + (1,) * 3)
    kxe = np.cross(k, e, axis=0)
    s2 = src.sigma ** 2
    tk2 = t_w ** 2 * grid.k2
    kc = np.sum(k * c, axis=0)
    phi_hat = src.amplitude * (s2 / 2) ** 1.5 * np.exp(-s2 * tk2 / 4 - 1j * t_w * kc)
    common = -1j * np.cos(grid.kabs) * phi_hat
    b_hat = t_w ** 3 * common * kxe
    bc_hat = -t_w ** 3 * common * np.sum(c * kxe, axis=0)
    # d/dt [t^3 phi_hat(t k)] = t^2 phi_hat(t k) (3 - sigma^2 t^2 |k|^2 / 2 - i t k.c)
    dt_factor = (3 - s2 * tk2 / 2 - 1j * t_w * kc) / t_w
    return b_hat, bc_hat, dt_factor


def _coefficients_to_grid(spec: np.ndarray, grid: Grid) -> np.ndarray:
    """Trigonometric polynomial with the given continuum transform, Nyquist planes dropped."""
    phase = np.exp(-0.5j * grid.L * sum(grid.kvec))
    out = spec * phase * (2 * np.pi) ** 1.5 / grid.cell_volume
    nyq = grid.n // 2
    for axis in range(-3, 0):
        idx = [slice(None)] * out.ndim
        idx[axis] = nyq
        out[tuple(idx)] = 0.0
    return fld.ifft(out, grid).real


def B_spectral(data: WaveData, t_w: float, grid: Grid, time_derivative: bool = False) -> BSample:
    """Band-limited ``B(t_w)`` and ``Bcheck(t_w)`` from their exact transforms.

    Point samples of a shell thinner than the mesh alias its high modes onto
    low ones and destroy the vanishing moments of ``B``; truncating the exact
    transform keeps every resolved mode exact and ``div B = 0`` exactly.  With
    ``time_derivative`` the sample holds ``dB/dt`` and ``dBcheck/dt`` instead.
    """
    if grid.dim != 3:
        raise ValueError("magnetic potentials live in three dimensions")
    if not isinstance(data.source, CurlGaussian):
        raise AnalyticVariantRequiredError("spectral B needs CurlGaussian data")
    t_w = float(t_w)
    if t_w <= 0:
        raise ValueError(f"t_w must be positive, got {t_w}")
    b_hat, bc_hat, dt_factor = _b_symbols(data.source, t_w, grid)
    if time_derivative:
        b_hat, bc_hat = b_hat * dt_factor, bc_hat * dt_factor
    b = np.stack([_coefficients_to_grid(bh, grid) for bh in b_hat])
    return BSample(t_w, VectorField(grid, b), ScalarField(grid, _coefficients_to_grid(bc_hat, grid)))


@dataclass(frozen=True, eq=False)
class PoissonResult:
    h: VectorField
    hcheck: ScalarField
    b_mean: np.ndarray
    bcheck_mean: complex
    residual: float  # ||Delta h + 2 (B - mean B)||_2


def poisson_h(b: VectorField, bcheck: ScalarField) -> PoissonResult:
    """Solve ``Delta h = -2 B`` and ``Delta hcheck = -2 Bcheck`` on mean-free data.

    The spatial means of ``B`` and ``Bcheck`` are removed first and returned.
    """
    g = b.grid
    k2 = g.k2
    inv = np.zeros_like(k2)
    inv[k2 > 0] = 1.0 / k2[k2 > 0]
    bs = b.spectral()
    bcs = bcheck.spectral()
    zero = (0,) * g.dim
    b_mean = bs[(slice(None),) + zero] / g.size
    bc_mean = complex(bcs[zero] / g.size)
    hs = 2.0 * inv * bs
    hcs = 2.0 * inv * bcs
    h = VectorField(g, fld.ifft(hs, g))
    hc = ScalarField(g, fld.ifft(hcs, g))
    lap = fld.ifft(-k2 * hs, g)
    b0 = b.physical() - b_mean.reshape((-1,) + (1,) * g.dim)
    res = fld.lebesgue_norm(lap + 2 * b0, g, 2)
    return PoissonResult(h, hc, b_mean, bc_mean, res)


def b_norms_quadrature(data: WaveData, t_w: float, rs) -> dict:
    """``||B(t_w)||_r`` over R^3 via the shell quadrature of the wave at time ``1/t_w``."""
    from .wavefield import ShellQuadrature, quadrature_norm

    q = ShellQuadrature.build(data.source, 1.0 / t_w)
    y = t_w * q.points
    w = q.weights * t_w ** 3
    b, _ = b_at_points(data, t_w, y)
    return {r: quadrature_norm(b, w, r) for r in rs}
