"""Scattering constructions on the w-side.

The w-equation ``i dw/dt = -(1/2) Delta_B w - Bcheck w`` is solved near
``t = 0`` from asymptotic data, either directly or through the splitting
``w = W + q`` with an explicit profile ``W`` and the remainder equation
``i dq/dt = -(1/2) Delta_B q - Bcheck q - R(W)``, where
``R(W) = i dW/dt + (1/2) Delta_B W + Bcheck W``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence, Union

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from . import field as fld
from . import magschrod as ms
from .analysis import NormTrace, RateFit, fit_power_law
from .errors import MeshMismatchError, NonConvergenceError
from .field import Grid, ScalarField, VectorField
from .pctransform import (BSample, B_from_A, B_spectral, free_prop_U, inverse_ft_on, poisson_h, w_to_u)
from .wavefield import WaveData, eval_analytic, leray_project

RAW = "raw"
MASKED = "annulus_masked"


# --- asymptotic data ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AsymptoticState:
    w_plus: ScalarField
    annulus_eta: float | None = None
    provenance: str = RAW


def smooth_step(z: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for ``z <= 0``, 1 for ``z >= 1``."""
    z = np.asarray(z, dtype=float)

    def bump(x):
        out = np.zeros_like(x)
        pos = x > 0
        out[pos] = np.exp(-1.0 / np.maximum(x[pos], 1e-300))
        return out

    a, b = bump(z), bump(1.0 - z)
    return a / (a + b)


def annulus_mask(grid: Grid, eta: float) -> np.ndarray:
    """0 where ``||x| - 1| <= eta``, 1 where ``||x| - 1| >= 2 eta``, smooth between."""
    dist = np.abs(np.sqrt(grid.r2) - 1.0)
    return smooth_step((dist - eta) / eta)


def make_annular_state(base, eta: float) -> AsymptoticState:
    """Cut ``base`` off smoothly near the unit sphere.

    Passing a state already masked with the same ``eta`` returns it unchanged,
    so masking is idempotent at the level of states.
    """
    if not 0 < eta < 1:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    if isinstance(base, AsymptoticState):
        if base.provenance == MASKED and base.annulus_eta == eta:
            return base
        base = base.w_plus
    mask = annulus_mask(base.grid, eta)
    return AsymptoticState(ScalarField(base.grid, mask * base.physical()), eta, MASKED)


# --- potentials on the w-side -------------------------------------------------------------


class BTrack:
    """``B``, ``Bcheck`` sampled on a w-grid, cached by time.

    With ``project=True`` the sampled ``B`` is Leray-projected.  ``B`` is
    divergence free, but point samples of a shell thinner than the mesh are
    not discretely so, and the spurious divergence would act as a first-order
    potential of size ``|B| / h``.  ``sampling="spectral"`` replaces point
    samples by the band-limited field built from the exact transform; it is
    divergence free by construction and ``project`` is then ignored.
    """

    def __init__(self, data: WaveData, grid: Grid, cache_size: int = 8, project: bool = True,
                 sampling: str = "nodal"):
        if sampling not in ("nodal", "spectral"):
            raise ValueError(f"unknown sampling {sampling!r}")
        self.data, self.grid, self.cache_size = data, grid, cache_size
        self.sampling = sampling
        self.project = project and sampling == "nodal"
        self._cache: dict = {}

    def __call__(self, t: float) -> BSample:
        key = float(t)
        hit = self._cache.get(key)
        if hit is None:
            if self.sampling == "spectral":
                hit = B_spectral(self.data, key, self.grid)
            else:
                hit = B_from_A(self.data, key, self.grid)
            if self.project:
                hit = BSample(hit.t, leray_project(hit.b), hit.bcheck)
            self._cache[key] = hit
            while len(self._cache) > self.cache_size:
                self._cache.pop(next(iter(self._cache)))
        return hit

    def w_track(self, source=None) -> ms.PotentialTrack:
        """Coefficients of the w-equation: ``A = B``, ``V = -Bcheck``."""
        return ms.PotentialTrack(lambda t: self(t).b.physical().real,
                                 lambda t: -self(t).bcheck.physical().real,
                                 source)

    def w0_track(self) -> ms.PotentialTrack:
        """Coefficients of the ``W_0`` equation: ``A = 0``, ``V = B^2 / 2``."""
        return ms.PotentialTrack(None, lambda t: 0.5 * self(t).b_squared())

    def dt_sample(self, t: float):
        """``dB/dt`` and ``dBcheck/dt`` from ``dB/dt = t^{-2} ((1 + P) A)(1/t, y/t)``.

        ``dB/dt`` is projected whenever ``B`` is, so the two stay consistent.
        """
        if self.sampling == "spectral":
            ds = B_spectral(self.data, t, self.grid, time_derivative=True)
            return ds.b.physical(), ds.bcheck.physical()
        tau = 1.0 / t
        x = self.grid.points() * tau
        v = eval_analytic(self.data, tau, x, derivatives=("dt", "grad"))
        pa = tau * v.dt_a + np.einsum("l...,li...->i...", x, v.grad_a)
        pxa = tau * v.dt_x_dot_a + np.sum(x * v.grad_x_dot_a, axis=0)
        db = (v.a + pa) / t ** 2
        if self.project:
            db = leray_project(VectorField(self.grid, db)).physical()
        return db, -(v.x_dot_a + pxa) / t ** 2


# --- remainder ------------------------------------------------------------------------------


def half_delta_b_plus_bcheck(w: np.ndarray, grid: Grid, bs: BSample) -> np.ndarray:
    """``(1/2) Delta_B w + Bcheck w`` with ``Delta_B`` in Coulomb form.

    Sampled shells thinner than the mesh carry a spurious discrete divergence;
    the Coulomb form keeps it out of the remainder.
    """
    b = bs.b.physical().real
    return 0.5 * ms.magnetic_laplacian(w, grid, b, form="coulomb") + bs.bcheck.physical().real * w


def residual_R(W: ScalarField, bs: BSample, i_dt_W: np.ndarray | None = None,
               W_prev: ScalarField | None = None, W_next: ScalarField | None = None,
               dt: float | None = None) -> ScalarField:
    """``R(W) = i dW/dt + (1/2) Delta_B W + Bcheck W``.

    The time derivative is either supplied as ``i_dt_W`` or formed by the
    centered difference of ``W_prev`` and ``W_next`` spaced ``dt`` from ``W``.
    """
    g = W.grid
    if i_dt_W is None:
        if W_prev is None or W_next is None or dt is None:
            raise ValueError("need i dW/dt or two neighbouring time slices")
        i_dt_W = 1j * (W_next.physical() - W_prev.physical()) / (2 * dt)
    return ScalarField(g, i_dt_W + half_delta_b_plus_bcheck(W.physical(), g, bs))


@dataclass(frozen=True, eq=False)
class SimpleProfile:
    """``W(t) = U(t) conj(w_plus)``.

    For this free profile ``i dW/dt = -(1/2) Delta W`` exactly, so
    ``R = -i B.grad W + (Bcheck - B^2/2) W``.
    """

    w_plus: ScalarField

    @cached_property
    def _spectrum(self) -> np.ndarray:
        g = self.w_plus.grid
        return fld.fft(np.conj(self.w_plus.physical()), g)

    def value(self, t: float) -> ScalarField:
        g = self.w_plus.grid
        return ScalarField(g, fld.ifft(np.exp(-0.5j * t * g.k2) * self._spectrum, g))

    def i_dt(self, t: float) -> np.ndarray:
        g = self.w_plus.grid
        return fld.ifft(0.5 * g.k2 * np.exp(-0.5j * t * g.k2) * self._spectrum, g)

    def remainder(self, t: float, bs: BSample) -> ScalarField:
        """Closed form, with ``W`` and ``grad W`` taken from the cached spectrum."""
        g = self.w_plus.grid
        spec = np.exp(-0.5j * t * g.k2) * self._spectrum
        w = fld.ifft(spec, g)
        b = bs.b.physical().real
        b_grad_w = sum(bj * fld.ifft(1j * kj * spec, g) for bj, kj in zip(b, g.kvec_odd))
        pot = bs.bcheck.physical().real - 0.5 * np.sum(b * b, axis=0)
        return ScalarField(g, -1j * b_grad_w + pot * w)


@dataclass(frozen=True, eq=False)
class ModifiedProfile:
    """``W = (1 - i h.grad + hcheck) W_0`` on a common time mesh.

    ``dt_h`` and ``dt_hcheck`` (optional) give the analytic time derivative of
    the corrector; without them only centered differences are available.
    """

    w0: dict
    h: dict
    hcheck: dict
    w0_rhs: dict  # i dW_0/dt on the mesh
    dt_h: dict | None = None
    dt_hcheck: dict | None = None

    @property
    def times(self) -> list:
        return sorted(self.w0)

    def value(self, t: float) -> ScalarField:
        w0 = self.w0[t].physical()
        g = self.w0[t].grid
        grad = fld.gradient(w0, g)
        hv = self.h[t].physical()
        return ScalarField(g, w0 - 1j * np.sum(hv * grad, axis=0) + self.hcheck[t].physical() * w0)

    def i_dt(self, t: float) -> np.ndarray:
        """Analytic ``i dW/dt`` from the corrector derivatives and the ``W_0`` equation."""
        if self.dt_h is None or t not in self.dt_h:
            raise MeshMismatchError(f"no corrector derivative stored at t = {t:g}")
        g = self.w0[t].grid
        w0 = self.w0[t].physical()
        iw0 = self.w0_rhs[t]
        hv, hc = self.h[t].physical(), self.hcheck[t].physical()
        dh, dhc = self.dt_h[t].physical(), self.dt_hcheck[t].physical()
        grad_w0 = fld.gradient(w0, g)
        grad_iw0 = fld.gradient(iw0, g)
        # i d/dt[(1 - i h.grad + hc) W0] = (dh.grad + i dhc) W0 + (1 - i h.grad + hc) i dW0/dt
        return (np.sum(dh * grad_w0, axis=0) + 1j * dhc * w0
                + iw0 - 1j * np.sum(hv * grad_iw0, axis=0) + hc * iw0)

    def expanded_remainder(self, t: float, bs: BSample) -> ScalarField:
        """``R(W)`` with every derivative of a product expanded by the product rule.

        Equal to the definition in the continuum.  Each factor is differentiated
        on its own, so the sharp content of ``h`` never passes through a
        spectral derivative of a product.
        """
        g = self.w0[t].grid
        w0 = self.w0[t].physical()
        hv, hc = self.h[t].physical(), self.hcheck[t].physical()
        b, bc = bs.b.physical().real, bs.bcheck.physical().real
        grad_w0 = fld.gradient(w0, g)
        hess = np.stack([fld.gradient(gw, g) for gw in grad_w0])  # hess[j, l] = d_l d_j W0
        lap_w0 = fld.ifft(-g.k2 * fld.fft(w0, g), g)
        grad_lap_w0 = fld.gradient(lap_w0, g)
        grad_h = np.stack([fld.gradient(hj, g) for hj in hv])  # grad_h[j, l] = d_l h_j
        lap_h = fld.ifft(-g.k2 * fld.fft(hv, g), g)
        grad_hc = fld.gradient(hc, g)
        lap_hc = fld.ifft(-g.k2 * fld.fft(hc, g), g)
        # P = h.grad W0
        lap_p = (np.sum(lap_h * grad_w0, axis=0) + 2 * np.einsum("jl...,jl...->...", grad_h, hess)
                 + np.sum(hv * grad_lap_w0, axis=0))
        b_grad_p = (np.einsum("l...,jl...,j...->...", b, grad_h, grad_w0)
                    + np.einsum("l...,j...,jl...->...", b, hv, hess))
        lap_hc_w0 = lap_hc * w0 + 2 * np.sum(grad_hc * grad_w0, axis=0) + hc * lap_w0
        b_grad_hc_w0 = np.sum(b * grad_hc, axis=0) * w0 + hc * np.sum(b * grad_w0, axis=0)
        lap_w = lap_w0 - 1j * lap_p + lap_hc_w0
        b_grad_w = np.sum(b * grad_w0, axis=0) - 1j * b_grad_p + b_grad_hc_w0
        w = self.value(t).physical()
        out = self.i_dt(t) + 0.5 * lap_w - 1j * b_grad_w + (bc - 0.5 * np.sum(b * b, axis=0)) * w
        return ScalarField(g, out)

    def remainder(self, t: float, bs: BSample, method: str = "analytic") -> ScalarField:
        if method == "analytic":
            return residual_R(self.value(t), bs, i_dt_W=self.i_dt(t))
        if method == "expanded":
            return self.expanded_remainder(t, bs)
        if method != "stencil":
            raise ValueError(f"unknown remainder method {method!r}")
        times = self.times
        i = times.index(t)
        if i == 0 or i == len(times) - 1:
            raise MeshMismatchError(f"t = {t:g} has no neighbours on the mesh")
        tp, tn = times[i - 1], times[i + 1]
        if abs((tn - t) - (t - tp)) > 1e-12:
            raise MeshMismatchError("centered differences need a locally uniform mesh")
        return residual_R(self.value(t), bs, W_prev=self.value(tp), W_next=self.value(tn),
                          dt=tn - t)


Profile = Union[SimpleProfile, ModifiedProfile]


# --- direct solve -----------------------------------------------------------------------------


@dataclass
class ScatterRun:
    config: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict)
    trajectories: dict = field(default_factory=dict)

    def add_fit(self, name: str, window: tuple) -> RateFit:
        fit = fit_power_law(self.traces[name], window)
        self.fits[name] = fit
        return fit


def _check_t0(t0: float) -> None:
    if not 0 < t0 <= 0.125:
        raise ValueError(f"t0 must lie in (0, 1/8], got {t0}")


def solve_w_direct(state: AsymptoticState, btrack: BTrack, t0: float, cfg: ms.IntegratorConfig,
                   t_end: float = 1.0, observe_times: Sequence[float] = (),
                   store_times: Sequence[float] = (), init: str = "conj") -> ScatterRun:
    """Solve the w-equation on ``[t0, t_end]`` starting from asymptotic data.

    ``init="conj"`` starts from ``conj(w_plus)``; ``init="free"`` from
    ``U(t0) conj(w_plus)``.  Both converge to the same solution as ``t0 -> 0``;
    the second removes the ``O(t0)`` initial layer.  Traces
    ``w_minus_wbar`` and ``w_minus_Uwbar`` are recorded at ``observe_times``.
    """
    _check_t0(t0)
    g = state.w_plus.grid
    wbar = state.w_plus.conj()
    if init == "conj":
        w_init = wbar
    elif init == "free":
        w_init = free_prop_U(wbar, t0)
    else:
        raise ValueError(f"unknown init {init!r}")
    wbar_v = wbar.physical()
    wbar_s = fld.fft(wbar_v, g)

    def dist_bar(t, u, ctx):
        return fld.lebesgue_norm(u - wbar_v, g, 2)

    def dist_free(t, u, ctx):
        return fld.lebesgue_norm(u - fld.ifft(np.exp(-0.5j * t * g.k2) * wbar_s, g), g, 2)

    obs = [ms.Observer("w_minus_wbar", dist_bar, list(observe_times)),
           ms.Observer("w_minus_Uwbar", dist_free, list(observe_times))]
    res = ms.evolve(ms.SchrodState(t0, w_init), btrack.w_track(), cfg, t_end, obs,
                    store_times=store_times)
    run = ScatterRun({"t0": t0, "t_end": t_end, "init": init}, dict(res.traces))
    run.trajectories = dict(res.checkpoints)
    run.trajectories["final"] = res.state.u
    return run


# --- remainder equation -----------------------------------------------------------------------


def resolvent_operator(bs: BSample, b: float, t0: float):
    """``T f = (1/t0 + b) f + K f`` with ``K = -(1/2) Delta_B - Bcheck``."""
    g = bs.b.grid
    bv = bs.b.physical().real
    bc = bs.bcheck.physical().real
    shift = 1.0 / t0 + b

    def apply(f: np.ndarray) -> np.ndarray:
        return shift * f - 0.5 * ms.magnetic_laplacian(f, g, bv) - bc * f

    return apply


@dataclass
class ResolventResult:
    q0: ScalarField
    iterations: int
    residual: float
    b: float


def resolvent_init(R_t0: ScalarField, bs: BSample, t0: float, b: float | None = None,
                   tol: float = 1e-9, maxiter: int = 500) -> ResolventResult:
    """Solve ``(1/t0 + b + K(t0)) q0 = R(t0)`` by preconditioned conjugate gradients.

    ``b`` defaults to ``||Bcheck(t0)||_inf + 1``, which makes the operator
    positive definite.  The preconditioner is the free resolvent
    ``(1/t0 + b + |k|^2/2)^{-1}``.
    """
    g = R_t0.grid
    if b is None:
        b = float(np.abs(bs.bcheck.physical()).max()) + 1.0
    apply = resolvent_operator(bs, b, t0)
    shape = g.shape
    size = g.size
    rhs = np.asarray(R_t0.physical(), dtype=complex)
    rnorm = fld.lebesgue_norm(rhs, g, 2)
    if rnorm == 0:
        return ResolventResult(ScalarField(g, np.zeros(shape)), 0, 0.0, b)
    sym = 1.0 / (1.0 / t0 + b + 0.5 * g.k2)
    op = LinearOperator((size, size), matvec=lambda v: apply(v.reshape(shape)).ravel(),
                        dtype=complex)
    pre = LinearOperator((size, size),
                         matvec=lambda v: fld.ifft(sym * fld.fft(v.reshape(shape), g), g).ravel(),
                         dtype=complex)
    count = [0]

    def tick(_):
        count[0] += 1

    x, info = cg(op, rhs.ravel(), rtol=0.05 * tol, atol=0.0, maxiter=maxiter, M=pre,
                 callback=tick)
    q0 = x.reshape(shape)
    res = fld.lebesgue_norm(apply(q0) - rhs, g, 2)
    if info != 0 or res >= tol * rnorm:
        raise NonConvergenceError(
            f"resolvent solve stopped after {count[0]} iterations with relative residual "
            f"{res / rnorm:.2e}")
    return ResolventResult(ScalarField(g, q0), count[0], res / rnorm, b)


def solve_q(profile: Profile, btrack: BTrack, t0: float, init: str, cfg: ms.IntegratorConfig,
            t_end: float = 1.0, observe_times: Sequence[float] = (),
            store_times: Sequence[float] = ()) -> ScatterRun:
    """Solve ``i dq/dt = K q - R(W)`` on ``[t0, t_end]``.

    ``init="zero"`` starts from ``q(t0) = 0``; ``init="resolvent"`` from
    ``(1/t0 + b + K(t0))^{-1} R(t0)``.  Records ``q_norm`` and ``R_norm``.
    """
    return solve_q_many(profile, btrack, t0, (init,), cfg, t_end, observe_times,
                        store_times)[init]


def solve_q_many(profile: Profile, btrack: BTrack, t0: float, inits: Sequence[str],
                 cfg: ms.IntegratorConfig, t_end: float = 1.0,
                 observe_times: Sequence[float] = (),
                 store_times: Sequence[float] = ()) -> dict:
    """:func:`solve_q` for several initial data in one sweep, keyed by init.

    The remainder and the potentials are evaluated once per stage time.
    """
    _check_t0(t0)
    if len(set(inits)) != len(inits):
        raise ValueError(f"repeated init in {inits!r}")
    g = btrack.grid
    if isinstance(profile, ModifiedProfile):
        mesh = set(profile.times)

        def source(t):
            if t not in mesh:
                raise MeshMismatchError(f"stage time {t:g} is not on the profile mesh")
            return -profile.remainder(t, btrack(t)).physical()
    else:
        def source(t):
            return -profile.remainder(t, btrack(t)).physical()

    r0 = ScalarField(g, -source(t0))
    r0_norm = fld.norm(r0, fld.NormSpec.lebesgue(2))
    infos, starts = [], []
    for init in inits:
        info = {"t0": t0, "init": init, "R_t0_norm": r0_norm}
        if init == "zero":
            starts.append(ScalarField(g, np.zeros(g.shape)))
        elif init == "resolvent":
            rr = resolvent_init(r0, btrack(t0), t0)
            starts.append(rr.q0)
            info.update(q0_norm=fld.norm(rr.q0, fld.NormSpec.lebesgue(2)),
                        cg_iterations=rr.iterations, cg_residual=rr.residual, b=rr.b)
        else:
            raise ValueError(f"unknown init {init!r}")
        infos.append(info)

    def q_norm(t, u, ctx):
        return fld.lebesgue_norm(u, g, 2)

    def r_norm(t, u, ctx):
        return fld.lebesgue_norm(ctx.f, g, 2)

    obs = [ms.Observer("q_norm", q_norm, list(observe_times)),
           ms.Observer("R_norm", r_norm, list(observe_times))]
    results = ms.evolve_many(t0, starts, btrack.w_track(source), cfg, t_end, obs,
                             store_times=store_times)
    runs = {}
    for init, info, res in zip(inits, infos, results):
        run = ScatterRun(info, dict(res.traces))
        run.trajectories = dict(res.checkpoints)
        run.trajectories["final"] = res.state.u
        runs[init] = run
    return runs


# --- modified profile --------------------------------------------------------------------------


def solve_W0(v1: ScalarField, btrack: BTrack, t_to: float, cfg: ms.IntegratorConfig,
             t_from: float = 1.0, store_times: Sequence[float] = (),
             observe_times: Sequence[float] = ()) -> ScatterRun:
    """Integrate ``i dW_0/dt = -(1/2) Delta W_0 + (B^2/2) W_0`` backward from ``W_0(t_from) = v1``.

    Records the norm of ``W_0`` and of ``dW_0/dt``, ``Delta W_0`` and
    ``grad Delta W_0`` at ``observe_times``.
    """
    if not 0 < t_to < t_from:
        raise ValueError(f"need 0 < t_to < t_from, got {t_to}, {t_from}")
    g = v1.grid

    def l2(t, u, ctx):
        return fld.lebesgue_norm(u, g, 2)

    def dt_norm(t, u, ctx):
        us = fld.fft(u, g)
        rhs = fld.ifft(0.5 * g.k2 * us, g) + ctx.v * u
        return fld.lebesgue_norm(rhs, g, 2)

    def lap_norm(t, u, ctx):
        return fld.lebesgue_norm(fld.ifft(-g.k2 * fld.fft(u, g), g), g, 2)

    def grad_lap_norm(t, u, ctx):
        s = -g.k2 * fld.fft(u, g)
        return fld.lebesgue_norm(np.stack([fld.ifft(1j * k * s, g) for k in g.kvec_odd]), g, 2)

    times = list(observe_times)
    obs = [ms.Observer("W0_norm", l2, times), ms.Observer("dtW0_norm", dt_norm, times),
           ms.Observer("lapW0_norm", lap_norm, times),
           ms.Observer("gradlapW0_norm", grad_lap_norm, times)]
    res = ms.evolve(ms.SchrodState(t_from, v1), btrack.w0_track(), cfg, t_to, obs,
                    store_times=store_times)
    run = ScatterRun({"t_from": t_from, "t_to": t_to}, dict(res.traces))
    run.trajectories = dict(res.checkpoints)
    run.trajectories["final"] = res.state.u
    return run


def corrector_tracks(btrack: BTrack, times: Sequence[float], with_derivative: bool = True):
    """``h``, ``hcheck`` (and their time derivatives) on a time mesh.

    Returns dictionaries keyed by time plus the Poisson residuals and the
    removed means of ``B`` and ``Bcheck``.
    """
    h, hc, dh, dhc, residuals, means = {}, {}, {}, {}, {}, {}
    for t in times:
        bs = btrack(t)
        pr = poisson_h(bs.b, bs.bcheck)
        h[t], hc[t] = pr.h, pr.hcheck
        residuals[t] = pr.residual
        means[t] = (pr.b_mean, pr.bcheck_mean)
        if with_derivative:
            db, dbc = btrack.dt_sample(t)
            pd = poisson_h(VectorField(btrack.grid, db), ScalarField(btrack.grid, dbc))
            dh[t], dhc[t] = pd.h, pd.hcheck
    return h, hc, (dh if with_derivative else None), (dhc if with_derivative else None), \
        residuals, means


def build_modified_profile(w0_traj: dict, h_track: dict, hcheck_track: dict, btrack: BTrack,
                           dt_h: dict | None = None, dt_hcheck: dict | None = None
                           ) -> ModifiedProfile:
    """Assemble ``W = (1 - i h.grad + hcheck) W_0`` from aligned tracks."""
    keys = set(w0_traj)
    if keys != set(h_track) or keys != set(hcheck_track):
        raise MeshMismatchError("W_0, h and hcheck must be stored on the same time mesh")
    if dt_h is not None and (set(dt_h) != keys or set(dt_hcheck or {}) != keys):
        raise MeshMismatchError("corrector derivatives must share the time mesh")
    grids = {w.grid for w in w0_traj.values()} | {v.grid for v in h_track.values()}
    if len(grids) != 1:
        raise MeshMismatchError("all tracks must live on one grid")
    rhs = {}
    for t, w0 in w0_traj.items():
        g = w0.grid
        u = w0.physical()
        rhs[t] = fld.ifft(0.5 * g.k2 * fld.fft(u, g), g) + 0.5 * btrack(t).b_squared() * u
    return ModifiedProfile(dict(w0_traj), dict(h_track), dict(hcheck_track), rhs, dt_h, dt_hcheck)


# --- back to the u-side ----------------------------------------------------------------------


def compare_asymptotics_u(w_traj: dict, state: AsymptoticState, times_u: Sequence[float],
                          window: tuple | None = None, method: str = "fourier",
                          u_grid: Grid | None = None) -> tuple:
    """Traces of ``||u~(t) - u_+||_2`` (and ``||x^2 (u~ - u_+)||_2``) at ``times_u``.

    ``w_traj`` maps w-times ``1/t`` to fields.  With ``method="fourier"`` the
    distance is evaluated through ``F u~(t) = conj(w~(1/t))`` and ``F u_+ = w_+``
    (F is unitary and turns ``x^2`` into ``-Delta``); with ``method="direct"``
    ``u`` is reconstructed on ``u_grid`` and ``u~ = U(-t) u`` is formed there.
    """
    times_u = sorted(float(t) for t in times_u)
    g = state.w_plus.grid
    wp = state.w_plus.physical()
    dist, xdist = [], []
    for tu in times_u:
        tw = 1.0 / tu
        w = _lookup(w_traj, tw)
        if method == "fourier":
            ft_ut = np.conj(free_prop_U(w, -tw).physical())
            diff = ft_ut - wp
            dist.append(fld.lebesgue_norm(diff, g, 2))
            xdist.append(fld.lebesgue_norm(fld.ifft(-g.k2 * fld.fft(diff, g), g), g, 2))
        elif method == "direct":
            ug = u_grid or Grid(g.dim, g.n, g.L * tu)
            u = w_to_u(w, tw, ug).u
            ut = free_prop_U(u, -tu).physical()
            up = inverse_ft_on(state.w_plus, ug).physical()
            diff = ut - up
            dist.append(fld.lebesgue_norm(diff, ug, 2))
            xdist.append(fld.lebesgue_norm(ug.r2 * diff, ug, 2))
        else:
            raise ValueError(f"unknown method {method!r}")
    tr = NormTrace("utilde_minus_uplus", times_u, dist)
    xtr = NormTrace("x2_utilde_minus_uplus", times_u, xdist)
    fit = fit_power_law(tr, window) if window is not None else None
    return tr, xtr, fit


def _lookup(traj: dict, t: float):
    for k, v in traj.items():
        if isinstance(k, float) and abs(k - t) <= 1e-12 * max(1.0, abs(t)):
            return v
    raise KeyError(f"no stored field at t = {t:g}")
