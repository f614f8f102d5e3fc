"""Free divergence-free wave fields and their decay.

Two sources of potentials are supported:

* ``GridPair``: Cauchy data ``(A_+, A_dot_+)`` sampled on a periodic grid and
  propagated exactly mode by mode,
  ``A(t) = cos(omega t) A_+ + omega^{-1} sin(omega t) A_dot_+``.
* ``CurlGaussian``: ``A = curl(psi e)`` where ``psi`` solves the scalar wave
  equation with Gaussian data and zero velocity.  ``psi`` is radial about the
  centre, so d'Alembert's formula gives it in closed form and the field can be
  evaluated at any point of space-time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from . import field as fld
from .errors import NonZeroMeanError, WraparoundError
from .field import Grid, NormSpec, ScalarField, VectorField

SUPPORT_SIGMAS = 6.0
# below this radius (in units of the standard deviation) the closed form loses digits to
# cancellation and the Taylor series in r is used instead
SERIES_RADIUS = 0.2
SERIES_TERMS = 41


@dataclass(frozen=True, eq=False)
class GridPair:
    a_plus: VectorField
    a_dot_plus: VectorField

    def __post_init__(self):
        if self.a_plus.grid != self.a_dot_plus.grid:
            raise ValueError("A_+ and A_dot_+ must share a grid")

    @property
    def grid(self) -> Grid:
        return self.a_plus.grid


@dataclass(frozen=True)
class CurlGaussian:
    """``A_+ = curl(phi e)``, ``phi = amplitude * exp(-|x-c|^2 / sigma^2)``, ``A_dot_+ = 0``.

    ``sigma`` is the 1/e radius of ``phi``; ``std = sigma / sqrt(2)`` is the
    standard deviation used internally.
    """

    amplitude: float = 1.0
    sigma: float = 1.0
    center: tuple = (0.0, 0.0, 0.0)
    axis: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        c = tuple(float(v) for v in self.center)
        e = np.asarray(self.axis, dtype=float)
        if len(c) != 3 or e.shape != (3,):
            raise ValueError("center and axis must be 3-vectors")
        ne = np.linalg.norm(e)
        if ne == 0:
            raise ValueError("axis must be nonzero")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "axis", tuple(float(v) for v in e / ne))

    @property
    def std(self) -> float:
        return self.sigma / math.sqrt(2.0)

    @property
    def support_radius(self) -> float:
        return SUPPORT_SIGMAS * self.sigma


@dataclass(frozen=True, eq=False)
class WaveData:
    source: Union[GridPair, CurlGaussian]
    moment_zero_mean: bool = False

    @property
    def analytic(self) -> bool:
        return isinstance(self.source, CurlGaussian)


@dataclass(frozen=True, eq=False)
class WaveSnapshot:
    t: float
    a: VectorField
    x_dot_a: ScalarField
    pa: VectorField | None = None


@dataclass
class AnalyticValues:
    """Point values of a CurlGaussian wave; arrays have the point shape as trailing axes."""

    a: np.ndarray
    x_dot_a: np.ndarray
    dt_a: np.ndarray | None = None
    dtt_a: np.ndarray | None = None
    grad_a: np.ndarray | None = None  # grad_a[l, i] = d_l A_i
    dt_x_dot_a: np.ndarray | None = None
    grad_x_dot_a: np.ndarray | None = None


# --- projection and grid propagation ------------------------------------------------


def leray_project(v: VectorField) -> VectorField:
    """Spectral ``I - k k^T / |k|^2`` with the zero mode removed."""
    g = v.grid
    spec = v.spectral()
    k = g.kvec_odd
    k2 = sum(kk ** 2 for kk in k)
    inv = np.zeros_like(k2)
    inv[k2 > 0] = 1.0 / k2[k2 > 0]
    kdot = sum(kk * s for kk, s in zip(k, spec))
    out = np.stack([s - kk * kdot * inv for kk, s in zip(k, spec)])
    out[(slice(None),) + (0,) * g.dim] = 0.0
    return VectorField(g, fld.ifft(out, g))


def _require_zero_mean(spec: np.ndarray, grid: Grid, what: str) -> None:
    if not fld.zero_mode_ok(spec, grid):
        raise NonZeroMeanError(f"{what} has a nonzero mean; omega^-1 is undefined there")


def _propagate_spec(a_spec: np.ndarray, adot_spec: np.ndarray, grid: Grid, t: float):
    """Spectral free-wave evolution of position and velocity."""
    w = grid.kabs
    c = np.cos(w * t)
    s_over_w = np.full_like(w, t)
    nz = w > 0
    s_over_w[nz] = np.sin(w[nz] * t) / w[nz]
    ws = w * np.sin(w * t)
    pos = c * a_spec + s_over_w * adot_spec
    vel = -ws * a_spec + c * adot_spec
    return pos, vel


def x_dot(vec: np.ndarray, grid: Grid) -> np.ndarray:
    return sum(x * v for x, v in zip(grid.coords, vec))


def x_dot_grad(vec: np.ndarray, grid: Grid) -> np.ndarray:
    """Componentwise ``(x . grad) v`` with spectral derivatives."""
    spec = fld.fft(vec, grid)
    out = np.zeros(vec.shape, dtype=complex)
    for x, k in zip(grid.coords, grid.kvec_odd):
        out = out + x * fld.ifft(1j * k * spec, grid)
    return out


def _check_interior(values: np.ndarray, grid: Grid, what: str, rel_tol: float = 1e-8) -> None:
    """Raise when ``values`` reach the box faces (``x.grad`` is not periodic)."""
    mod = np.sqrt(np.sum(np.abs(values) ** 2, axis=0)) if values.ndim > grid.dim else np.abs(values)
    peak = mod.max()
    if peak == 0:
        return
    edge = np.zeros(grid.shape, dtype=bool)
    for x in grid.coords:
        edge = edge | (np.abs(np.broadcast_to(x, grid.shape)) >= 0.45 * grid.L)
    if mod[edge].max() > rel_tol * peak:
        raise WraparoundError(f"{what} touches the box boundary; x.grad is not defined there")


def propagate_grid(data: WaveData, t: float, with_p: bool = False) -> WaveSnapshot:
    """Exact discrete free-wave evolution of grid data to time ``t``."""
    src = data.source
    if not isinstance(src, GridPair):
        raise TypeError("propagate_grid needs GridPair data")
    g = src.grid
    a0, a1 = src.a_plus.spectral(), src.a_dot_plus.spectral()
    _require_zero_mean(a0, g, "A_+")
    _require_zero_mean(a1, g, "A_dot_+")
    pos, _ = _propagate_spec(a0, a1, g, t)
    a = fld.ifft(pos, g)
    pa = apply_generator_P(data, t) if with_p else None
    return WaveSnapshot(t, VectorField(g, a), ScalarField(g, x_dot(a, g)), pa)


def velocity_grid(data: WaveData, t: float) -> VectorField:
    """``dA/dt`` of grid data at time ``t``."""
    src = data.source
    g = src.grid
    _, vel = _propagate_spec(src.a_plus.spectral(), src.a_dot_plus.spectral(), g, t)
    return VectorField(g, fld.ifft(vel, g))


def apply_generator_P(data: WaveData, t: float, points: np.ndarray | None = None):
    """``PA = t dA/dt + x.grad A`` at time ``t``.

    Grid data are propagated from the transformed Cauchy data
    ``(x.grad A_+, (1 + x.grad) A_dot_+)``; analytic data are evaluated
    pointwise from the closed-form derivatives at ``points``.
    """
    src = data.source
    if isinstance(src, CurlGaussian):
        if points is None:
            raise ValueError("analytic PA needs evaluation points")
        vals = eval_analytic(data, t, points, derivatives=("dt", "grad"))
        x = np.asarray(points, dtype=float)
        xg = np.einsum("l...,li...->i...", x, vals.grad_a)
        return t * vals.dt_a + xg
    g = src.grid
    a0, a1 = src.a_plus.physical(), src.a_dot_plus.physical()
    _check_interior(a0, g, "A_+")
    _check_interior(a1, g, "A_dot_+")
    p0 = x_dot_grad(a0, g)
    p1 = a1 + x_dot_grad(a1, g)
    s0, s1 = fld.fft(p0, g), fld.fft(p1, g)
    _require_zero_mean(s0, g, "x.grad A_+")
    _require_zero_mean(s1, g, "(1 + x.grad) A_dot_+")
    pos, _ = _propagate_spec(s0, s1, g, t)
    return VectorField(g, fld.ifft(pos, g))


def pair_from_fields(a_plus: np.ndarray, a_dot_plus: np.ndarray, grid: Grid,
                     project: bool = True, moment_zero_mean: bool = False) -> WaveData:
    a = VectorField(grid, a_plus)
    b = VectorField(grid, a_dot_plus)
    if project:
        a, b = leray_project(a), leray_project(b)
    return WaveData(GridPair(a, b), moment_zero_mean)


def sample_curl_gaussian(data: WaveData, grid: Grid, project: bool = False) -> WaveData:
    """Grid data for a CurlGaussian: spectral curl of the sampled ``phi e``."""
    src = data.source
    if grid.dim != 3:
        raise ValueError("CurlGaussian lives in three dimensions")
    phi = fld.gaussian(grid, src.std, src.center, src.amplitude).physical().real
    pot = np.stack([phi * e for e in src.axis])
    a = fld.curl(pot, grid).real
    # remove the (exponentially small) aliasing mean so omega^-1 is defined
    a = a - a.mean(axis=tuple(range(1, 4)), keepdims=True)
    out = pair_from_fields(a, np.zeros_like(a), grid, project=project,
                           moment_zero_mean=data.moment_zero_mean)
    return out


# --- analytic CurlGaussian ------------------------------------------------------------


def _g_derivatives(s: np.ndarray, amp: float, sigma: float, mmax: int) -> list:
    """``g^{(m)}(s)`` for ``g(s) = s phi(s)``, ``m = 0..mmax``.

    With ``G = phi`` one has ``G^{(m)} = amp (-1/sigma)^m He_m(s/sigma) e^{-s^2/2sigma^2}``
    and ``g^{(m)} = s G^{(m)} + m G^{(m-1)}``.
    """
    z = s / sigma
    env = amp * np.exp(-0.5 * z * z)
    he_prev, he = np.zeros_like(z), np.ones_like(z)
    G = []
    for m in range(mmax + 1):
        G.append(env * he * (-1.0 / sigma) ** m)
        he_prev, he = he, z * he - m * he_prev
    out = [s * G[0]]
    for m in range(1, mmax + 1):
        out.append(s * G[m] + m * G[m - 1])
    return out


def _radial_coefficients(src: CurlGaussian, t: float, r: np.ndarray, need_r: bool):
    """``Phi, Phi_t, Phi_tt`` and ``Phi_r / r`` where ``A = Phi (y x e)``, ``y = x - c``.

    ``psi = S / (2r)`` with ``S = g(r+t) + g(r-t)`` and ``Phi = psi_r / r``.
    """
    amp, sig = src.amplitude, src.std
    r = np.asarray(r, dtype=float)
    phi = np.zeros_like(r)
    phi_t = np.zeros_like(r)
    phi_tt = np.zeros_like(r)
    phi_rr = np.zeros_like(r) if need_r else None
    small = r < SERIES_RADIUS * sig
    big = ~small
    if np.any(big):
        rb = r[big]
        gp = _g_derivatives(rb + t, amp, sig, 4)
        gm = _g_derivatives(rb - t, amp, sig, 4)
        S = gp[0] + gm[0]
        Sr = gp[1] + gm[1]
        Srr = gp[2] + gm[2]
        Srrr = gp[3] + gm[3]
        St = gp[1] - gm[1]
        Srt = gp[2] - gm[2]
        r3 = 2 * rb ** 3
        phi[big] = (rb * Sr - S) / r3
        phi_t[big] = (rb * Srt - St) / r3
        phi_tt[big] = (rb * Srrr - Srr) / r3
        if need_r:
            phi_rr[big] = (rb * rb * Srr - 3 * rb * Sr + 3 * S) / (2 * rb ** 5)
    if np.any(small):
        rs = r[small]
        gt = _g_derivatives(np.array(float(t)), amp, sig, SERIES_TERMS + 2)
        for m in range(3, SERIES_TERMS + 1, 2):
            c = (m - 1) / math.factorial(m)
            pw = rs ** (m - 3)
            phi[small] += c * gt[m] * pw
            phi_t[small] += c * gt[m + 1] * pw
            phi_tt[small] += c * gt[m + 2] * pw
            if need_r and m >= 5:
                phi_rr[small] += (m - 1) * (m - 3) / math.factorial(m) * gt[m] * rs ** (m - 5)
    return phi, phi_t, phi_tt, phi_rr


def eval_analytic(data: WaveData, t: float, points: np.ndarray,
                  derivatives: Sequence[str] = ()) -> AnalyticValues:
    """Evaluate a CurlGaussian wave at ``points`` (shape ``(3, ...)``).

    ``derivatives`` may contain ``"dt"``, ``"dtt"`` and ``"grad"``; the
    corresponding fields of the result are filled in, together with the time
    derivative and gradient of ``x.A`` when requested.
    """
    src = data.source
    if not isinstance(src, CurlGaussian):
        raise TypeError("eval_analytic needs CurlGaussian data")
    x = np.asarray(points, dtype=float)
    if x.shape[0] != 3:
        raise ValueError("points must have shape (3, ...)")
    c = np.asarray(src.center).reshape((3,) + (1,) * (x.ndim - 1))
    e = np.asarray(src.axis).reshape((3,) + (1,) * (x.ndim - 1))
    y = x - c
    r = np.sqrt(np.sum(y * y, axis=0))
    need_grad = "grad" in derivatives
    phi, phi_t, phi_tt, phi_rr = _radial_coefficients(src, float(t), r, need_grad)
    yxe = np.cross(y, e, axis=0)
    c_yxe = np.sum(c * yxe, axis=0)
    out = AnalyticValues(a=phi * yxe, x_dot_a=phi * c_yxe)
    if "dt" in derivatives:
        out.dt_a = phi_t * yxe
        out.dt_x_dot_a = phi_t * c_yxe
    if "dtt" in derivatives:
        out.dtt_a = phi_tt * yxe
    if need_grad:
        # d_l A_i = (Phi_r/r) y_l (y x e)_i + Phi eps_{ilk} e_k
        grad = phi_rr[None, None] * y[:, None] * yxe[None, :]
        eps_e = np.zeros((3, 3))
        ev = np.asarray(src.axis)
        eps_e[0, 1], eps_e[0, 2] = -ev[2], ev[1]
        eps_e[1, 0], eps_e[1, 2] = ev[2], -ev[0]
        eps_e[2, 0], eps_e[2, 1] = -ev[1], ev[0]
        # eps_e[l, i] = eps_{ilk} e_k
        grad = grad + phi[None, None] * eps_e.reshape((3, 3) + (1,) * (x.ndim - 1))
        out.grad_a = grad
        exc = np.cross(ev, np.asarray(src.center))
        out.grad_x_dot_a = phi_rr * y * c_yxe + phi * exc.reshape((3,) + (1,) * (x.ndim - 1))
    return out


def analytic_snapshot(data: WaveData, grid: Grid, t: float) -> WaveSnapshot:
    vals = eval_analytic(data, t, grid.points())
    return WaveSnapshot(t, VectorField(grid, vals.a), ScalarField(grid, vals.x_dot_a))


# --- quadrature on R^3 for analytic norms -------------------------------------------


@dataclass(frozen=True)
class ShellQuadrature:
    """Nodes and weights covering the shell where a CurlGaussian wave lives at time ``t``.

    Radial panels of width ``std/2`` with Gauss-Legendre nodes, an odd
    Gauss-Legendre rule in the polar cosine about the axis (so the equator is
    a node), and a uniform azimuthal rule.
    """

    points: np.ndarray  # (3, N)
    weights: np.ndarray  # (N,)

    @classmethod
    def build(cls, src: CurlGaussian, t: float, radial_per_panel: int = 8,
              n_polar: int = 33, n_azimuth: int = 16) -> "ShellQuadrature":
        sig = src.std
        width = 8.0 * sig
        lo = max(0.0, abs(t) - width)
        hi = abs(t) + width
        panels = max(1, int(math.ceil((hi - lo) / (0.5 * sig))))
        gx, gw = np.polynomial.legendre.leggauss(radial_per_panel)
        edges = np.linspace(lo, hi, panels + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        rad = (mid[:, None] + half[:, None] * gx[None, :]).ravel()
        rw = (half[:, None] * gw[None, :]).ravel()
        mu, mw = np.polynomial.legendre.leggauss(n_polar)
        ph = 2 * np.pi * np.arange(n_azimuth) / n_azimuth
        pw = np.full(n_azimuth, 2 * np.pi / n_azimuth)
        e = np.asarray(src.axis)
        # orthonormal frame (e1, e2, e)
        trial = np.array([1.0, 0.0, 0.0]) if abs(e[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = np.cross(e, trial)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(e, e1)
        R, MU, PH = np.meshgrid(rad, mu, ph, indexing="ij")
        W = rw[:, None, None] * R ** 2 * mw[None, :, None] * pw[None, None, :]
        st = np.sqrt(1 - MU ** 2)
        dirs = (st * np.cos(PH))[None] * e1[:, None, None, None] \
            + (st * np.sin(PH))[None] * e2[:, None, None, None] \
            + MU[None] * e[:, None, None, None]
        pts = np.asarray(src.center)[:, None] + (R[None] * dirs).reshape(3, -1)
        return cls(pts, W.ravel())


def quadrature_norm(values: np.ndarray, weights: np.ndarray, r: float) -> float:
    """``L^r`` norm from point values (leading axes are components) and weights."""
    mod = np.abs(values)
    if mod.ndim > 1:
        mod = np.sqrt(np.sum(mod ** 2, axis=tuple(range(mod.ndim - 1))))
    if math.isinf(r):
        return float(mod.max())
    return float(np.sum(weights * mod ** r) ** (1.0 / r))


def analytic_norm(data: WaveData, t: float, r: float, which: str = "a") -> float:
    """``||A(t)||_r`` (or of ``dA/dt``, ``x.A``) over R^3 by shell quadrature."""
    q = ShellQuadrature.build(data.source, t)
    vals = eval_analytic(data, t, q.points, derivatives=("dt",))
    field_vals = {"a": vals.a, "dt_a": vals.dt_a, "x_dot_a": vals.x_dot_a}[which]
    return quadrature_norm(field_vals, q.weights, r)


# --- diagnostics ---------------------------------------------------------------------


@dataclass
class MomentReport:
    integral_a: np.ndarray
    integral_a_dot: np.ndarray
    integral_x_a_dot: np.ndarray  # [i, j] = int x_i A_dot_j
    tolerance: float

    @property
    def max_moment(self) -> float:
        return float(max(np.abs(self.integral_a).max(), np.abs(self.integral_a_dot).max(),
                         np.abs(self.integral_x_a_dot).max()))

    @property
    def passed(self) -> bool:
        return self.max_moment < self.tolerance


def check_moments(data: WaveData, grid: Grid | None = None) -> MomentReport:
    """Integrals ``int A_+``, ``int A_dot_+`` and ``int x A_dot_+`` on the grid.

    Analytic data are sampled on ``grid`` first.
    """
    if isinstance(data.source, CurlGaussian):
        if grid is None:
            raise ValueError("analytic data need a sampling grid")
        vals = eval_analytic(data, 0.0, grid.points())
        a = vals.a
        adot = np.zeros_like(a)
    else:
        grid = data.source.grid
        a = data.source.a_plus.physical()
        adot = data.source.a_dot_plus.physical()
    ax = tuple(range(1, grid.dim + 1))
    dv = grid.cell_volume
    ia = dv * np.sum(a, axis=ax)
    iad = dv * np.sum(adot, axis=ax)
    ixad = np.array([[dv * np.sum(x * comp) for comp in adot] for x in grid.coords])
    return MomentReport(ia, iad, ixad, 1e-10 * grid.L ** grid.dim)


def wraparound_limit(data: WaveData) -> float:
    """Latest time for which grid propagation is free of wraparound."""
    src = data.source
    if isinstance(src, CurlGaussian):
        return math.inf
    g = src.grid
    rs = max(fld.support_radius(src.a_plus.physical(), g),
             fld.support_radius(src.a_dot_plus.physical(), g))
    return g.L / 2 - rs


def decay_profile(data: WaveData, norms: Sequence[NormSpec], times: Sequence[float],
                  which: str = "a") -> dict:
    """Norm traces of ``A(t)`` keyed by norm label.

    Analytic data are measured over R^3 by quadrature (Lebesgue norms only);
    grid data on the torus, inside the wraparound window.
    """
    from .analysis import NormTrace

    times = [float(t) for t in times]
    out = {spec.label: [] for spec in norms}
    if isinstance(data.source, CurlGaussian):
        for spec in norms:
            if spec.kind != "lebesgue":
                raise ValueError("analytic decay profiles support Lebesgue norms only")
        for t in times:
            for spec in norms:
                out[spec.label].append(analytic_norm(data, t, spec.r, which))
    else:
        limit = wraparound_limit(data)
        late = [t for t in times if abs(t) > limit]
        if late:
            raise WraparoundError(f"t = {late[0]:g} exceeds the wraparound window {limit:g}")
        for t in times:
            snap = propagate_grid(data, t)
            for spec in norms:
                out[spec.label].append(fld.norm(snap.a, spec))
    return {k: NormTrace(k, times, v) for k, v in out.items()}
