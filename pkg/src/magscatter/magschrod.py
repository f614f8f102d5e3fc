"""Magnetic Schrodinger evolution ``i dv/dt = K_eta v + f``.

``K_eta = -(1/2)(1 - i eta) Delta_A + V`` with ``Delta_A = (grad - iA)^2``.
The covariant Laplacian is discretised in the skew-symmetric form

    Delta_A u = Delta u - i div(A u) - i A.grad u - |A|^2 u,

which equals ``Delta u - 2i A.grad u - |A|^2 u`` whenever ``div A = 0`` and
keeps the discrete operator exactly Hermitian even when the sampled ``A`` is
only approximately divergence free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from . import field as fld
from .errors import GridMismatchError, StabilityError
from .field import Grid, ScalarField, VectorField

STABILITY_LIMIT = 0.7


def _values(x, grid: Grid, vector: bool = False):
    """Raw array from a field, an array or ``None``."""
    if x is None:
        return None
    if isinstance(x, (ScalarField, VectorField)):
        if x.grid != grid:
            raise GridMismatchError(f"potential on {x.grid}, state on {grid}")
        return x.physical()
    arr = np.asarray(x)
    expected = ((grid.dim,) if vector else ()) + grid.shape
    if arr.shape != expected and arr.ndim != 0:
        raise GridMismatchError(f"potential array of shape {arr.shape}, expected {expected}")
    return arr


@dataclass
class PotentialTrack:
    """Time-dependent coefficients: vector potential, scalar potential and source.

    Each callable maps a time to a field (or raw array) on the state grid;
    ``None`` stands for zero.
    """

    a_of_t: Callable | None = None
    v_of_t: Callable | None = None
    f_of_t: Callable | None = None

    def sample(self, t: float, grid: Grid):
        a = _values(self.a_of_t(t), grid, vector=True) if self.a_of_t else None
        v = _values(self.v_of_t(t), grid) if self.v_of_t else None
        f = _values(self.f_of_t(t), grid) if self.f_of_t else None
        return a, v, f


@dataclass(frozen=True)
class SchrodState:
    t: float
    u: ScalarField


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float
    method: str = "RK4"
    eta: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.method != "RK4":
            raise ValueError(f"unsupported method {self.method!r}")
        if not 0 <= self.eta <= 1:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")

    def check_stability(self, grid: Grid) -> None:
        kmax2 = grid.dim * grid.k_nyquist ** 2
        if self.dt * kmax2 / 2 > STABILITY_LIMIT:
            raise StabilityError(
                f"dt * max|k|^2 / 2 = {self.dt * kmax2 / 2:.3g} exceeds {STABILITY_LIMIT}")


def magnetic_laplacian(u: np.ndarray, grid: Grid, a: np.ndarray | None,
                       form: str = "skew") -> np.ndarray:
    """``Delta_A u`` in the skew form ``Delta u - i div(A u) - i A.grad u - A^2 u``.

    ``form="coulomb"`` uses ``Delta u - 2i A.grad u - A^2 u`` instead, which
    takes ``div A = 0`` from the continuum rather than from the samples.
    ``u`` may carry leading batch axes.
    """
    if form not in ("skew", "coulomb"):
        raise ValueError(f"unknown magnetic Laplacian form {form!r}")
    us = fld.fft(u, grid)
    if a is None:
        return fld.ifft(-grid.k2 * us, grid)
    grad = [fld.ifft(1j * k * us, grid) for k in grid.kvec_odd]
    a_dot_grad = sum(ai * gi for ai, gi in zip(a, grad))
    a2 = np.sum(a * a, axis=0)
    if form == "coulomb":
        return fld.ifft(-grid.k2 * us, grid) - 2j * a_dot_grad - a2 * u
    # -i div(A u) is folded into the Laplacian's inverse transform
    spec = -grid.k2 * us
    for k, ai in zip(grid.kvec_odd, a):
        spec = spec + k * fld.fft(ai * u, grid)
    return fld.ifft(spec, grid) - 1j * a_dot_grad - a2 * u


def covariant_gradient(u: np.ndarray, grid: Grid, a: np.ndarray | None) -> np.ndarray:
    """``(grad - iA) u`` componentwise."""
    us = fld.fft(u, grid)
    grad = np.stack([fld.ifft(1j * k * us, grid) for k in grid.kvec_odd])
    if a is None:
        return grad
    return grad - 1j * a * u


def _apply_k(u: np.ndarray, grid: Grid, a, v, eta: float) -> np.ndarray:
    out = -0.5 * (1 - 1j * eta) * magnetic_laplacian(u, grid, a)
    if v is not None:
        out = out + v * u
    return out


def apply_K(u: ScalarField, a: VectorField | None, v: ScalarField | None,
            eta: float = 0.0) -> ScalarField:
    """``K_eta u = -(1/2)(1 - i eta) Delta_A u + V u``."""
    g = u.grid
    for other in (a, v):
        if other is not None and other.grid != g:
            raise GridMismatchError(f"field on {other.grid}, state on {g}")
    av = None if a is None else a.physical().real
    vv = None if v is None else v.physical()
    return ScalarField(g, _apply_k(u.physical(), g, av, vv, eta))


@dataclass
class Observer:
    """Records ``fn(t, u, ctx)`` at ``times`` (every step when ``times`` is ``None``)."""

    name: str
    fn: Callable
    times: Sequence[float] | None = None


@dataclass
class ObserverContext:
    """Coefficients at the observation time, passed to observer functions."""

    grid: Grid
    a: np.ndarray | None
    v: np.ndarray | None
    f: np.ndarray | None


@dataclass
class IdentityRecord:
    """Per-step scalars for the L^2 identities."""

    eta: float
    times: list = field(default_factory=list)
    norm2: list = field(default_factory=list)
    source: list = field(default_factory=list)  # 2 Im <v, f>
    cov_grad2: list = field(default_factory=list)  # ||grad_A v||^2


@dataclass
class EvolveResult:
    state: SchrodState
    traces: dict
    checkpoints: dict
    identity: IdentityRecord | None = None
    steps: int = 0


class _SampleCache:
    """Keeps the coefficients of the last few stage times."""

    def __init__(self, track: PotentialTrack, grid: Grid, size: int = 4):
        self.track, self.grid, self.size = track, grid, size
        self.data: dict = {}

    def __call__(self, t: float):
        key = float(t)
        hit = self.data.get(key)
        if hit is None:
            hit = self.track.sample(key, self.grid)
            if hit[0] is not None:
                hit = (np.ascontiguousarray(hit[0].real),) + hit[1:]
            self.data[key] = hit
            while len(self.data) > self.size:
                self.data.pop(next(iter(self.data)))
        return hit


def _rhs(u, t, cache, grid, eta):
    a, v, f = cache(t)
    ku = _apply_k(u, grid, a, v, eta)
    if f is not None:
        ku = ku + f
    return -1j * ku


def rk4_step(u: np.ndarray, t: float, h: float, cache, grid: Grid, eta: float) -> np.ndarray:
    k1 = _rhs(u, t, cache, grid, eta)
    k2 = _rhs(u + 0.5 * h * k1, t + 0.5 * h, cache, grid, eta)
    k3 = _rhs(u + 0.5 * h * k2, t + 0.5 * h, cache, grid, eta)
    k4 = _rhs(u + h * k3, t + h, cache, grid, eta)
    return u + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _record_identity(rec: IdentityRecord, t: float, u: np.ndarray, cache, grid: Grid):
    a, _, f = cache(t)
    dv = grid.cell_volume
    rec.times.append(t)
    rec.norm2.append(float(dv * np.vdot(u, u).real))
    rec.source.append(0.0 if f is None else float(2 * dv * np.vdot(u, f).imag))
    if rec.eta > 0:
        cg = covariant_gradient(u, grid, a)
        rec.cov_grad2.append(float(dv * np.sum(np.abs(cg) ** 2)))
    else:
        rec.cov_grad2.append(0.0)


def evolve(state: SchrodState, track: PotentialTrack, cfg: IntegratorConfig, t_end: float,
           observers: Sequence[Observer] = (), store_times: Sequence[float] = (),
           record_identity: bool = False) -> EvolveResult:
    """RK4 integration from ``state.t`` to ``t_end`` (either direction).

    Steps are shortened so that every requested observation and storage time
    is hit exactly; the step never exceeds ``cfg.dt``.
    """
    return evolve_many(state.t, [state.u], track, cfg, t_end, observers, store_times,
                       record_identity)[0]


def evolve_many(t_start: float, fields: Sequence[ScalarField], track: PotentialTrack,
                cfg: IntegratorConfig, t_end: float, observers: Sequence[Observer] = (),
                store_times: Sequence[float] = (),
                record_identity: bool = False) -> list[EvolveResult]:
    """Advance several states under one track in a single RK4 sweep.

    The coefficients are sampled once per stage time and shared; the members
    are stacked along a leading axis, so each result equals the one
    :func:`evolve` would return for that member alone.
    """
    from .analysis import NormTrace

    if not fields:
        raise ValueError("need at least one state")
    grid = fields[0].grid
    for f in fields:
        if f.grid != grid:
            raise GridMismatchError(f"state on {f.grid}, expected {grid}")
    cfg.check_stability(grid)
    t0, t1 = float(t_start), float(t_end)
    direction = 1.0 if t1 >= t0 else -1.0
    if direction < 0 and cfg.eta > 0:
        raise StabilityError("parabolic regularisation is ill-posed backward in time")

    def inside(t):
        return min(t0, t1) - 1e-14 <= t <= max(t0, t1) + 1e-14

    marks = {t1}
    for ob in observers:
        if ob.times is not None:
            marks.update(float(t) for t in ob.times if inside(float(t)))
    marks.update(float(t) for t in store_times if inside(float(t)))
    marks = sorted((m for m in marks if m != t0), key=lambda m: direction * (m - t0))

    m = len(fields)
    cache = _SampleCache(track, grid)
    recs = [{ob.name: ([], []) for ob in observers} for _ in range(m)]
    ident = [IdentityRecord(cfg.eta) if record_identity else None for _ in range(m)]
    checkpoints = [{} for _ in range(m)]
    store = {float(t) for t in store_times}

    def observe(t, u, every_step):
        for ob in observers:
            due = ob.times is None if every_step else (
                ob.times is not None and any(abs(t - float(s)) <= 1e-14 for s in ob.times))
            if due:
                a, v, f = cache(t)
                ctx = ObserverContext(grid, a, v, f)
                for i in range(m):
                    recs[i][ob.name][0].append(t)
                    recs[i][ob.name][1].append(float(ob.fn(t, u[i], ctx)))

    def checkpoint(t, u):
        for i in range(m):
            checkpoints[i][t] = ScalarField(grid, u[i])

    def identity(t, u):
        for i in range(m):
            if ident[i] is not None:
                _record_identity(ident[i], t, u[i], cache, grid)

    u = np.stack([np.asarray(f.physical(), dtype=complex) for f in fields])
    t = t0
    observe(t, u, True)
    observe(t, u, False)
    if t0 in store:
        checkpoint(t0, u)
    identity(t, u)
    steps = 0
    for mark in marks:
        span = mark - t
        nsteps = max(1, int(math.ceil(abs(span) / cfg.dt - 1e-9)))
        h = span / nsteps
        start = t
        for i in range(nsteps):
            u = rk4_step(u, t, h, cache, grid, cfg.eta)
            t = mark if i == nsteps - 1 else start + (i + 1) * h
            steps += 1
            if not np.all(np.isfinite(u)):
                raise StabilityError(f"non-finite values at t = {t:g}")
            observe(t, u, True)
            identity(t, u)
        observe(t, u, False)
        if any(abs(t - s) <= 1e-14 for s in store):
            checkpoint(t, u)

    results = []
    for i in range(m):
        traces = {}
        for name, (ts, vs) in recs[i].items():
            order = np.argsort(ts)
            traces[name] = NormTrace(name, np.asarray(ts)[order], np.asarray(vs)[order])
        results.append(EvolveResult(SchrodState(t, ScalarField(grid, u[i])), traces,
                                    checkpoints[i], ident[i], steps))
    return results


# --- identities and residuals -----------------------------------------------------------


@dataclass
class IdentityReport:
    lhs: float
    rhs: float
    discrepancy: float
    norm_change: float


def _integral(times, values) -> float:
    ts = np.asarray(times)
    vs = np.asarray(values)
    order = np.argsort(ts)
    ts, vs = ts[order], vs[order]
    return float(integrate.simpson(vs, x=ts))


def l2_identity_check(rec: IdentityRecord) -> IdentityReport:
    """``||v(t2)||^2 - ||v(t1)||^2`` against ``int 2 Im <v, f> dt`` (eta = 0)."""
    ts = np.asarray(rec.times)
    i1, i2 = int(np.argmin(ts)), int(np.argmax(ts))
    change = rec.norm2[i2] - rec.norm2[i1]
    rhs = _integral(rec.times, rec.source)
    return IdentityReport(change, rhs, abs(change - rhs), change)


def eta_dissipation_check(rec: IdentityRecord) -> IdentityReport:
    """``||v(t2)||^2 - ||v(t1)||^2 + eta int ||grad_A v||^2`` against ``int 2 Im <v, f>``.

    ``discrepancy`` is the signed excess ``lhs - rhs``; the inequality holds
    when it is at most the tolerance.
    """
    ts = np.asarray(rec.times)
    i1, i2 = int(np.argmin(ts)), int(np.argmax(ts))
    change = rec.norm2[i2] - rec.norm2[i1]
    lhs = change + rec.eta * _integral(rec.times, rec.cov_grad2)
    rhs = _integral(rec.times, rec.source)
    return IdentityReport(lhs, rhs, lhs - rhs, change)


def residual(prev: SchrodState, mid: SchrodState, nxt: SchrodState, track: PotentialTrack,
             eta: float = 0.0) -> ScalarField:
    """Centered-difference residual ``i (u+ - u-)/(2 dt) - K u - f`` at the middle time."""
    g = mid.u.grid
    dt = 0.5 * (nxt.t - prev.t)
    if abs((nxt.t - mid.t) - (mid.t - prev.t)) > 1e-12 * max(1.0, abs(dt)):
        raise ValueError("residual needs equally spaced time samples")
    a, v, f = track.sample(mid.t, g)
    if a is not None:
        a = a.real
    ddt = 1j * (nxt.u.physical() - prev.u.physical()) / (2 * dt)
    out = ddt - _apply_k(mid.u.physical(), g, a, v, eta)
    if f is not None:
        out = out - f
    return ScalarField(g, out)
