"""Power-law fits and standalone inequality checkers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from . import field as fld
from .errors import (ExponentRelationError, InsufficientSamplesError,
                     NonPositiveValueError, WraparoundError)
from .field import Grid, ScalarField

MIN_FIT_SAMPLES = 5


@dataclass
class NormTrace:
    """A named time series of nonnegative norm values."""

    name: str
    times: Sequence[float]
    values: Sequence[float]

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape or self.times.ndim != 1:
            raise ValueError(f"trace {self.name!r}: times and values must be 1-D of equal length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError(f"trace {self.name!r}: times must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"trace {self.name!r}: values must be finite")

    def __len__(self):
        return len(self.times)

    @property
    def samples(self) -> list:
        return list(zip(self.times.tolist(), self.values.tolist()))

    def window(self, t_min: float, t_max: float) -> "NormTrace":
        tol = 1e-12 * max(abs(t_min), abs(t_max), 1.0)
        m = (self.times >= t_min - tol) & (self.times <= t_max + tol)
        return NormTrace(self.name, self.times[m], self.values[m])


@dataclass(frozen=True)
class RateFit:
    exponent: float
    log_amplitude: float
    r_squared: float
    window: tuple

    def predict(self, t):
        return np.exp(self.log_amplitude) * np.asarray(t, dtype=float) ** self.exponent


def fit_power_law(trace: NormTrace, window: tuple | None = None) -> RateFit:
    """Least-squares line through ``(log t, log value)`` inside ``window``."""
    if window is None:
        window = (float(trace.times.min()), float(trace.times.max()))
    sub = trace.window(*window)
    if len(sub) < MIN_FIT_SAMPLES:
        raise InsufficientSamplesError(
            f"trace {trace.name!r}: {len(sub)} samples in window {window}, need {MIN_FIT_SAMPLES}")
    if np.any(sub.times <= 0) or np.any(sub.values <= 0):
        raise NonPositiveValueError(f"trace {trace.name!r}: log-log fit needs positive data")
    lt, lv = np.log(sub.times), np.log(sub.values)
    tm, vm = lt.mean(), lv.mean()
    dt, dv = lt - tm, lv - vm
    slope = float(np.dot(dt, dv) / np.dot(dt, dt))
    intercept = float(vm - slope * tm)
    ss_tot = float(np.dot(dv, dv))
    resid = dv - slope * dt
    ss_res = float(np.dot(resid, resid))
    r2 = 1.0 if ss_tot <= 1e-300 else max(0.0, 1.0 - ss_res / ss_tot)
    return RateFit(slope, intercept, min(r2, 1.0), (float(window[0]), float(window[1])))


# --- Lemma-type inequalities ---------------------------------------------------------


def absorption_bound(a: Sequence[float], alphas: Sequence[float]) -> float:
    """``C sum_j a_j^{1/(1-alpha_j)}`` with ``C = max_j n^{1/(1-alpha_j)}``.

    Any ``y >= 0`` with ``y <= sum_j a_j y^{alpha_j}`` lies below this value.
    """
    a = np.asarray(a, dtype=float)
    al = np.asarray(alphas, dtype=float)
    if a.shape != al.shape:
        raise ValueError("a and alphas must have equal length")
    if np.any(al < 0) or np.any(al >= 1):
        raise ValueError("alphas must lie in [0, 1)")
    if np.any(a < 0):
        raise ValueError("coefficients must be nonnegative")
    n = len(a)
    p = 1.0 / (1.0 - al)
    return float(np.max(float(n) ** p) * np.sum(a ** p))


def absorption_scan(a: Sequence[float], alphas: Sequence[float], y_max: float,
                    points: int = 1_000_000) -> float:
    """Largest ``y`` on a uniform scan of ``[0, y_max]`` with ``y <= sum a_j y^alpha_j``."""
    y = np.linspace(0.0, y_max, points)
    rhs = np.zeros_like(y)
    for aj, alj in zip(a, alphas):
        rhs += aj * y ** alj
    feasible = y <= rhs
    return float(y[feasible].max()) if feasible.any() else 0.0


@dataclass
class TrigCoefficient:
    """Nonnegative coefficient ``c0 + sum_k amp_k sin(freq_k t + phase_k)``."""

    c0: float
    amps: Sequence[float] = ()
    freqs: Sequence[float] = ()
    phases: Sequence[float] = ()

    def __post_init__(self):
        self.amps = np.asarray(self.amps, dtype=float)
        self.freqs = np.asarray(self.freqs, dtype=float)
        self.phases = np.asarray(self.phases, dtype=float)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape, float(self.c0))
        for a, f, p in zip(self.amps, self.freqs, self.phases):
            out = out + a * np.sin(f * t + p)
        return out if out.ndim else float(out)

    def scaled(self, s: float) -> "TrigCoefficient":
        return TrigCoefficient(self.c0 * s, self.amps * s, self.freqs, self.phases)


@dataclass
class GronwallInstance:
    """``|y'| <= a0 y + sum_j a_j y^{alpha_j}`` on ``[t0, t1]`` with ``y(t0) = y0``.

    ``alphas[0]`` is the largest exponent; the others are strictly smaller.
    Coefficients are callables accepting scalar or array times.
    """

    alphas: Sequence[float]
    coeffs: Sequence[Callable]
    a0: Callable
    y0: float
    t0: float
    t1: float

    def __post_init__(self):
        al = list(self.alphas)
        if len(al) != len(self.coeffs) or not al:
            raise ValueError("need one coefficient per exponent")
        if not all(0 <= x < 1 for x in al):
            raise ValueError("exponents must lie in [0, 1)")
        if any(x >= al[0] for x in al[1:]):
            raise ValueError("alphas[0] must be strictly the largest exponent")
        if self.y0 < 0:
            raise ValueError("y0 must be nonnegative")


def _integral(fn: Callable, a: float, b: float) -> float:
    if a == b:
        return 0.0
    val, _ = integrate.quad(fn, a, b, epsabs=1e-12, epsrel=1e-10, limit=200)
    return float(val)


def gronwall_bound(inst: GronwallInstance, t: float) -> float:
    """Upper bound for ``y(t)``:
    ``exp(A0) {y0^{1-a1} + sum_j A_j^{(1-a1)/(1-a_j)}}^{1/(1-a1)}``
    with ``A0 = |int a0|`` and ``A_j = (1-alpha_j) |int a_j|``.
    """
    A0 = abs(_integral(inst.a0, inst.t0, t))
    a1 = inst.alphas[0]
    total = inst.y0 ** (1 - a1)
    for al, fn in zip(inst.alphas, inst.coeffs):
        Aj = (1 - al) * abs(_integral(fn, inst.t0, t))
        total += Aj ** ((1 - a1) / (1 - al))
    return float(math.exp(A0) * total ** (1.0 / (1 - a1)))


def saturated_solution(inst: GronwallInstance, t: float, steps: int = 10_000) -> float:
    """RK4 solution of the comparison ODE that saturates the differential inequality.

    In the rescaled variable ``z = exp(-|int a0|) y`` the equation is
    ``z' = sum_j a_j exp((alpha_j - 1) |s|) z^{alpha_j}`` with ``s' = a0``;
    the returned value is ``exp(|s(t)|) z(t)``.
    """
    if t == inst.t0:
        return float(inst.y0)
    dt = (t - inst.t0) / steps
    stage_t = inst.t0 + dt * np.arange(2 * steps + 1) / 2.0
    a0v = np.asarray(inst.a0(stage_t), dtype=float) * np.ones_like(stage_t)
    cv = [np.asarray(c(stage_t), dtype=float) * np.ones_like(stage_t) for c in inst.coeffs]
    al = list(inst.alphas)
    terms = list(zip(al, [c.tolist() for c in cv]))
    a0l = a0v.tolist()
    exp = math.exp
    sign = 1.0 if dt > 0 else -1.0

    def rhs(i, z, s):
        sa = abs(s)
        acc = 0.0
        for alj, cj in terms:
            acc += cj[i] * exp((alj - 1.0) * sa) * (z ** alj if z > 0 else (1.0 if alj == 0 else 0.0))
        return sign * acc, a0l[i]

    z, s = float(inst.y0), 0.0
    for k in range(steps):
        i0, im, i1 = 2 * k, 2 * k + 1, 2 * k + 2
        k1z, k1s = rhs(i0, z, s)
        k2z, k2s = rhs(im, z + 0.5 * abs(dt) * k1z, s + 0.5 * dt * k1s)
        k3z, k3s = rhs(im, z + 0.5 * abs(dt) * k2z, s + 0.5 * dt * k2s)
        k4z, k4s = rhs(i1, z + abs(dt) * k3z, s + dt * k3s)
        z += abs(dt) / 6.0 * (k1z + 2 * k2z + 2 * k3z + k4z)
        s += dt / 6.0 * (k1s + 2 * k2s + 2 * k3s + k4s)
    return float(exp(abs(s)) * z)


def random_gronwall_instance(rng: np.random.Generator, signed_a0: bool = False) -> GronwallInstance:
    """Random admissible instance with 1 to 3 fractional terms and smooth coefficients."""
    n = int(rng.integers(1, 4))
    a1 = float(rng.uniform(0.05, 0.95))
    others = sorted(rng.uniform(0.0, a1, size=n - 1).tolist(), reverse=True)
    alphas = [a1] + [min(x, a1 * (1 - 1e-9)) for x in others]

    def coeff(scale):
        k = int(rng.integers(0, 3))
        amps = rng.uniform(0, 1, size=k)
        c0 = float(amps.sum() + rng.uniform(0, 1))
        return TrigCoefficient(c0, amps, rng.uniform(0.5, 6, size=k),
                               rng.uniform(0, 2 * np.pi, size=k)).scaled(scale)

    coeffs = [coeff(float(rng.uniform(0.1, 2.0))) for _ in range(n)]
    a0 = coeff(float(rng.uniform(0.0, 1.0)))
    if signed_a0 and rng.uniform() < 0.5:
        a0 = a0.scaled(-1.0)
    t0 = float(rng.uniform(0, 1))
    return GronwallInstance(alphas, coeffs, a0, float(rng.uniform(0, 3)), t0,
                            t0 + float(rng.uniform(0.1, 2.0)))


# --- dispersive estimate ---------------------------------------------------------------


def dual_exponent(r: float) -> float:
    if math.isinf(r):
        return 1.0
    if r == 1:
        return math.inf
    return r / (r - 1.0)


def dispersive_delta(r: float, dim: int) -> float:
    return dim / 2.0 - (0.0 if math.isinf(r) else dim / r)


@dataclass
class DispersiveReport:
    trace: NormTrace
    bound: NormTrace
    fit: RateFit | None
    ratios: np.ndarray

    @property
    def max_ratio(self) -> float:
        return float(self.ratios.max())

    @property
    def passed(self) -> bool:
        return self.max_ratio <= 1.0 + 5e-2


def _free_norm_grid(f: ScalarField, t: float, r: float) -> float:
    from .pctransform import free_prop_U

    ut = free_prop_U(f, t).physical()
    g = f.grid
    edge = np.zeros(g.shape, dtype=bool)
    for x in g.coords:
        edge = edge | (np.abs(np.broadcast_to(x, g.shape)) >= g.L / 2 - 2 * g.h)
    peak = np.abs(ut).max()
    if np.abs(ut[edge]).max() > 1e-8 * peak:
        raise WraparoundError(f"U({t:g})f reaches the box boundary")
    return fld.lebesgue_norm(ut, g, r)


def _free_norm_factorized(f: ScalarField, t: float, r: float, xi_step: float) -> float:
    """``||U(t) f||_r`` on R^dim via ``|U(t)f(x)| = |t|^{-dim/2} |F(M(t) f)(x/t)|``.

    The continuous transform is evaluated by grid quadrature on a frequency
    lattice; no periodic wraparound enters.
    """
    g = f.grid
    x2 = g.r2
    mf = f.physical() * np.exp(1j * x2 / (2 * t))
    kmax = g.k_nyquist
    m = int(math.floor(kmax / xi_step))
    xi = xi_step * np.arange(-m, m + 1)
    mat = fld.fourier_matrix(g, xi)
    G = fld.apply_separable(mf, [mat] * g.dim, g)
    mod = np.abs(G)
    if math.isinf(r):
        gn = float(mod.max())
    else:
        gn = float((xi_step ** g.dim * np.sum(mod ** r)) ** (1.0 / r))
    return abs(t) ** (-dispersive_delta(r, g.dim)) * gn


def dispersive_check(f: ScalarField, r: float, times: Sequence[float],
                     window: tuple | None = None, method: str = "grid",
                     xi_step: float = 0.25, name: str | None = None) -> DispersiveReport:
    """Trace ``||U(t) f||_r`` against ``(2 pi |t|)^{-delta(r)} ||f||_{r'}``.

    ``method="grid"`` evolves on the torus and refuses times at which the
    solution reaches the box faces; ``method="factorized"`` measures the
    norm on R^dim through the ``M D F M`` factorisation of ``U(t)``.
    """
    times = [float(t) for t in times]
    g = f.grid
    delta = dispersive_delta(r, g.dim)
    fnorm = fld.lebesgue_norm(f.physical(), g, dual_exponent(r))
    vals, bounds = [], []
    for t in times:
        if method == "grid":
            vals.append(_free_norm_grid(f, t, r))
        elif method == "factorized":
            vals.append(_free_norm_factorized(f, t, r, xi_step))
        else:
            raise ValueError(f"unknown method {method!r}")
        bounds.append((2 * math.pi * abs(t)) ** (-delta) * fnorm)
    label = name or f"U(t)f_L{'inf' if math.isinf(r) else f'{r:g}'}"
    trace = NormTrace(label, times, vals)
    bound = NormTrace(label + "_bound", times, bounds)
    fit = fit_power_law(trace, window) if len(times) >= MIN_FIT_SAMPLES else None
    return DispersiveReport(trace, bound, fit, np.asarray(vals) / np.asarray(bounds))


# --- Sobolev-type ratio diagnostic -----------------------------------------------------


@dataclass
class SobolevScanReport:
    ratios: np.ndarray
    sigma: float

    @property
    def max_ratio(self) -> float:
        return float(self.ratios.max())


def sobolev_ratio_scan(family: Sequence[ScalarField], j: float, k: float, p: float,
                       q: float, r: float, sigma: float) -> SobolevScanReport:
    """``||omega^j u||_p / (||u||_q^{1-sigma} ||omega^k u||_r^sigma)`` over a family."""
    if not family:
        raise ValueError("empty family")
    n = family[0].grid.dim

    def inv(x):
        return 0.0 if math.isinf(x) else 1.0 / x

    lhs = n * inv(p) - j
    rhs = (1 - sigma) * n * inv(q) + sigma * (n * inv(r) - k)
    if abs(lhs - rhs) > 1e-12:
        raise ExponentRelationError(f"n/p - j = {lhs:g} but the interpolation side gives {rhs:g}")
    lower = 0.0 if k == 0 else j / k
    if not (lower - 1e-12 <= sigma <= 1 + 1e-12):
        raise ExponentRelationError(f"sigma = {sigma:g} outside [j/k, 1] = [{lower:g}, 1]")
    out = []
    for u in family:
        num = fld.norm(u, fld.NormSpec.omega(j, p)) if j else fld.norm(u, fld.NormSpec.lebesgue(p))
        den_q = fld.norm(u, fld.NormSpec.lebesgue(q))
        den_k = fld.norm(u, fld.NormSpec.omega(k, r)) if k else fld.norm(u, fld.NormSpec.lebesgue(r))
        out.append(num / (den_q ** (1 - sigma) * den_k ** sigma))
    return SobolevScanReport(np.asarray(out), sigma)
