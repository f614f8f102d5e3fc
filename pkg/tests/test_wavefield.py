"""Free divergence-free wave fields: projection, propagation, analytic CurlGaussian."""

import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magscatter import field as fld
from magscatter import wavefield as wf
from magscatter.analysis import NormTrace, fit_power_law
from magscatter.errors import NonZeroMeanError, WraparoundError
from magscatter.field import Grid, NormSpec, ScalarField, VectorField
from magscatter.wavefield import CurlGaussian, WaveData


def _rng(seed=0):
    return np.random.default_rng(seed)


def _random_vec(g, seed, smooth=None):
    return VectorField(g, np.stack([fld.random_field(g, _rng(seed + i), smooth, real=True).physical().real
                                    for i in range(g.dim)]))


def _mode_pair(g, k_int=(1, 0, 0), e=(0.0, 1.0, 0.0)):
    k = 2 * np.pi / g.L * np.asarray(k_int, float)
    phase = sum(kk * x for kk, x in zip(k, g.coords))
    a = np.stack([ei * np.sin(phase) * np.ones(g.shape) for ei in e])
    return k, a


class TestLeray:
    def test_annihilates_gradients(self):
        g = Grid(3, 16, 2.0)
        phi = fld.random_field(g, _rng(1), smooth=0.01, real=True).physical().real
        grad = fld.gradient(phi, g).real
        out = wf.leray_project(VectorField(g, grad))
        assert fld.lebesgue_norm(out.physical(), g, 2) < 1e-10

    def test_curl_field_unchanged(self):
        g = Grid(3, 32, 8.0)
        phi = fld.gaussian(g, 0.8).physical().real
        curl = fld.curl(np.stack([0 * phi, 0 * phi, phi]), g).real
        out = wf.leray_project(VectorField(g, curl)).physical()
        assert np.max(np.abs(out - curl)) < 1e-12

    def test_idempotent(self):
        g = Grid(3, 8, 1.0)
        p1 = wf.leray_project(_random_vec(g, 0))
        p2 = wf.leray_project(p1)
        assert np.max(np.abs(p1.physical() - p2.physical())) < 1e-12

    def test_output_divergence_free(self):
        g = Grid(3, 16, 3.0)
        out = wf.leray_project(_random_vec(g, 5))
        assert fld.lebesgue_norm(fld.divergence(out.physical(), g), g, 2) < 1e-10


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31))
def test_leray_orthogonal(seed):
    g = Grid(3, 8, 2.0)
    v = _random_vec(g, seed)
    pv = wf.leray_project(v).physical()
    rest = v.physical() - pv
    scale = fld.lebesgue_norm(v.physical(), g, 2) ** 2
    assert abs(fld.inner(pv, rest, g)) < 1e-10 * scale


class TestGridPropagation:
    def test_eigenmode(self):
        g = Grid(3, 8, 2 * math.pi)
        k, a = _mode_pair(g)
        data = wf.pair_from_fields(a, np.zeros_like(a), g, project=False)
        t = 0.7
        snap = wf.propagate_grid(data, t)
        assert np.max(np.abs(snap.a.physical() - math.cos(np.linalg.norm(k) * t) * a)) < 1e-12

    def test_identity_at_zero(self):
        g = Grid(3, 8, 3.0)
        a = wf.leray_project(_random_vec(g, 1))
        b = wf.leray_project(_random_vec(g, 2))
        data = WaveData(wf.GridPair(a, b))
        assert np.max(np.abs(wf.propagate_grid(data, 0.0).a.physical() - a.physical())) < 1e-12

    def test_energy_constant(self):
        g = Grid(3, 16, 4.0)
        a = wf.leray_project(_random_vec(g, 3, smooth=0.05))
        b = wf.leray_project(_random_vec(g, 4, smooth=0.05))
        data = WaveData(wf.GridPair(a, b))

        def energy(t):
            at = wf.propagate_grid(data, t).a.physical()
            vt = wf.velocity_grid(data, t).physical()
            grad = sum(fld.norm(fld.omega_power(c, 1.0), NormSpec.lebesgue(2)) ** 2
                       for c in wf.propagate_grid(data, t).a.components)
            return grad + fld.lebesgue_norm(vt, g, 2) ** 2

        e0 = energy(0.0)
        for t in (0.3, 1.1, 2.5):
            assert energy(t) == pytest.approx(e0, rel=1e-12)

    def test_nonzero_mean_rejected(self):
        g = Grid(3, 8, 1.0)
        a = np.ones((3,) + g.shape)
        data = wf.pair_from_fields(a, np.zeros_like(a), g, project=False)
        with pytest.raises(NonZeroMeanError):
            wf.propagate_grid(data, 1.0)

    def test_semigroup(self):
        g = Grid(3, 16, 4.0)
        a = wf.leray_project(_random_vec(g, 6, smooth=0.05))
        b = wf.leray_project(_random_vec(g, 7, smooth=0.05))
        data = WaveData(wf.GridPair(a, b))
        t1, t2 = 0.4, 0.9
        mid = WaveData(wf.GridPair(wf.propagate_grid(data, t1).a, wf.velocity_grid(data, t1)))
        two = wf.propagate_grid(mid, t2).a.physical()
        one = wf.propagate_grid(data, t1 + t2).a.physical()
        assert np.max(np.abs(two - one)) < 1e-11 * np.max(np.abs(one))

    def test_decay_profile_outside_window(self):
        g = Grid(3, 16, 8.0)
        data = wf.sample_curl_gaussian(WaveData(CurlGaussian(sigma=0.5)), g)
        with pytest.raises(WraparoundError):
            wf.decay_profile(data, [NormSpec.lebesgue(2)], [10.0])


def _psi_oracle(src, t, r):
    """d'Alembert radial formula in high precision: psi = [(r+t)phi(r+t) + (r-t)phi(r-t)] / 2r."""
    phi = lambda s: src.amplitude * mp.exp(-(s / src.sigma) ** 2)  # noqa: E731
    return ((r + t) * phi(r + t) + (r - t) * phi(r - t)) / (2 * r)


class TestAnalytic:
    src = CurlGaussian(amplitude=1.3, sigma=0.7)

    def test_matches_spectral_curl_at_zero(self):
        g = Grid(3, 64, 8.0)
        data = WaveData(self.src)
        vals = wf.eval_analytic(data, 0.0, g.points()).a
        phi = fld.gaussian(g, self.src.std, amplitude=self.src.amplitude).physical().real
        curl = fld.curl(np.stack([0 * phi, 0 * phi, phi]), g).real
        assert np.max(np.abs(vals - curl)) < 1e-8

    @pytest.mark.parametrize("t", [0.0, 0.5, 2.0])
    @pytest.mark.parametrize("r", [1e-3, 0.05, 0.1, 0.6, 1.7, 2.5])
    def test_radial_profile_against_dalembert(self, t, r):
        # A = Phi (y x e) with Phi = psi_r / r
        mp.mp.dps = 40
        expect = float(mp.diff(lambda s: _psi_oracle(self.src, t, s), r) / r)
        y = np.array([r, 0.0, 0.0]).reshape(3, 1)
        a = wf.eval_analytic(WaveData(self.src), t, y).a[:, 0]
        yxe = np.cross(y[:, 0], self.src.axis)
        got = a[1] / yxe[1]
        assert got == pytest.approx(expect, rel=1e-10, abs=1e-13)

    def test_psi_origin_limit(self):
        # the oracle itself: psi(t, 0) = phi(t) + t phi'(t)
        mp.mp.dps = 40
        t = mp.mpf("0.8")
        phi = lambda s: self.src.amplitude * mp.exp(-(s / self.src.sigma) ** 2)  # noqa: E731
        lim = _psi_oracle(self.src, t, mp.mpf("1e-20"))
        assert float(lim) == pytest.approx(float(phi(t) + t * mp.diff(phi, t)), rel=1e-12)

    def test_divergence_free(self):
        rng = _rng(2)
        pts = rng.uniform(-2, 2, size=(3, 20))
        data = WaveData(CurlGaussian(sigma=0.7, center=(0.1, -0.2, 0.3), axis=(1.0, 1.0, 0.5)))
        g = wf.eval_analytic(data, 1.3, pts, derivatives=("grad",)).grad_a
        div = np.einsum("ii...->...", g)
        assert np.max(np.abs(div)) < 1e-12

    def test_gradient_against_finite_differences(self):
        data = WaveData(CurlGaussian(sigma=0.7, center=(0.1, -0.2, 0.3), axis=(1.0, 1.0, 0.5)))
        pts = _rng(3).uniform(-2, 2, size=(3, 8))
        grad = wf.eval_analytic(data, 0.9, pts, derivatives=("grad",)).grad_a
        h = 1e-5
        for l in range(3):
            dx = np.zeros((3, 1))
            dx[l] = h
            fd = (wf.eval_analytic(data, 0.9, pts + dx).a - wf.eval_analytic(data, 0.9, pts - dx).a) / (2 * h)
            assert np.max(np.abs(fd - grad[l])) < 1e-7

    def test_wave_equation(self):
        data = WaveData(CurlGaussian(sigma=0.7))
        pts = _rng(4).uniform(-2, 2, size=(3, 10))
        t, h = 1.1, 1e-3
        dtt = wf.eval_analytic(data, t, pts, derivatives=("dtt",)).dtt_a
        lap = 0
        for l in range(3):
            dx = np.zeros((3, 1))
            dx[l] = h
            lap = lap + (wf.eval_analytic(data, t, pts + dx).a - 2 * wf.eval_analytic(data, t, pts).a
                         + wf.eval_analytic(data, t, pts - dx).a) / h ** 2
        assert np.max(np.abs(dtt - lap)) < 1e-5

    def test_sup_decay_on_fixed_ball(self):
        # sup over |x| <= 12 of |A(t)|, t in [2 sigma, 10 sigma]
        src = CurlGaussian(sigma=1.0)
        data = WaveData(src)
        times = np.linspace(2, 10, 9)
        sups = []
        for t in times:
            r = np.linspace(max(t - 4, 0.01), t + 4, 800)
            mu = np.linspace(-1, 1, 41)
            R, M = np.meshgrid(r, mu, indexing="ij")
            pts = np.stack([R * np.sqrt(1 - M ** 2), 0 * R, R * M])
            sups.append(np.max(np.linalg.norm(wf.eval_analytic(data, t, pts).a, axis=0)))
        fit = fit_power_law(NormTrace("sup", times, sups))
        assert -1.1 <= fit.exponent <= -0.9

    def test_grid_and_analytic_agree(self):
        src = CurlGaussian(sigma=0.6)
        g = Grid(3, 64, 12.0)
        data = WaveData(src)
        grid_data = wf.sample_curl_gaussian(data, g)
        for t in (0.0, 1.0, 2.0):
            ga = wf.propagate_grid(grid_data, t).a.physical()
            aa = wf.eval_analytic(data, t, g.points()).a
            assert fld.lebesgue_norm(ga - aa, g, 2) < 1e-6

    def test_x_dot_a_consistent(self):
        g = Grid(3, 16, 6.0)
        data = WaveData(CurlGaussian(sigma=0.8, center=(0.3, 0.1, -0.2)))
        snap = wf.analytic_snapshot(data, g, 0.7)
        assert np.max(np.abs(snap.x_dot_a.physical() - wf.x_dot(snap.a.physical(), g))) < 1e-10

    def test_x_dot_a_solves_wave_equation(self):
        g = Grid(3, 48, 12.0)
        data = WaveData(CurlGaussian(sigma=0.8, center=(0.4, -0.3, 0.2), axis=(0.0, 1.0, 1.0)))
        t, dt = 1.5, 1e-3
        xa = [wf.analytic_snapshot(data, g, s).x_dot_a.physical() for s in (t - dt, t, t + dt)]
        dtt = (xa[0] - 2 * xa[1] + xa[2]) / dt ** 2
        lap = fld.laplacian(ScalarField(g, xa[1])).physical()
        assert fld.lebesgue_norm(dtt - lap, g, 2) < 1e-4 * fld.lebesgue_norm(lap, g, 2)

    def test_quadrature_norm_at_zero(self):
        # ||A_+||_2^2 = int |grad phi x e|^2; for phi = a exp(-r^2/s^2), e = z:
        # int (4 a^2 / s^4) (x^2 + y^2) exp(-2 r^2 / s^2) = a^2 pi^{3/2} s / sqrt(2)
        src = CurlGaussian(amplitude=1.3, sigma=0.7)
        expect = math.sqrt(src.amplitude ** 2 * math.pi ** 1.5 * src.sigma / math.sqrt(2))
        assert wf.analytic_norm(WaveData(src), 0.0, 2) == pytest.approx(expect, rel=1e-10)


class TestGeneratorP:
    def test_analytic_against_dilation_flow(self):
        data = WaveData(CurlGaussian(sigma=0.7, center=(0.2, 0.0, -0.1)))
        pts = _rng(5).uniform(-2, 2, size=(3, 10))
        t, h = 1.2, 1e-4
        pa = wf.apply_generator_P(data, t, pts)
        fd = (wf.eval_analytic(data, (1 + h) * t, (1 + h) * pts).a
              - wf.eval_analytic(data, (1 - h) * t, (1 - h) * pts).a) / (2 * h)
        assert np.max(np.abs(pa - fd)) < 1e-6 * np.max(np.abs(pa))

    def test_x_dot_grad_on_mode(self):
        g = Grid(1, 32, 2 * math.pi)
        v = np.sin(2 * g.x1d)[None]
        out = wf.x_dot_grad(v, g)
        assert np.max(np.abs(out[0] - 2 * g.x1d * np.cos(2 * g.x1d))) < 1e-10

    def test_commutes_with_propagation(self):
        g = Grid(3, 64, 14.0)
        grid_data = wf.sample_curl_gaussian(WaveData(CurlGaussian(sigma=0.8)), g)
        t = 1.0
        # apply to the Cauchy data, then propagate
        first = wf.apply_generator_P(grid_data, t).physical()
        # propagate, then apply t d/dt + x.grad to the snapshot
        at = wf.propagate_grid(grid_data, t).a.physical()
        then = t * wf.velocity_grid(grid_data, t).physical() + wf.x_dot_grad(at, g).real
        assert fld.lebesgue_norm(first - then, g, 2) < 1e-9

    def test_boundary_support_rejected(self):
        g = Grid(3, 16, 4.0)
        grid_data = wf.sample_curl_gaussian(WaveData(CurlGaussian(sigma=1.5)), g)
        with pytest.raises(WraparoundError):
            wf.apply_generator_P(grid_data, 0.5)


class TestMoments:
    def test_curl_gaussian(self):
        g = Grid(3, 32, 10.0)
        rep = wf.check_moments(WaveData(CurlGaussian(sigma=0.8)), g)
        assert rep.max_moment < 1e-12
        assert rep.passed

    def test_offset_reported(self):
        g = Grid(3, 8, 2.0)
        a = np.zeros((3,) + g.shape)
        a[0] += 0.5
        rep = wf.check_moments(wf.pair_from_fields(a, np.zeros_like(a), g, project=False))
        assert rep.integral_a[0] == pytest.approx(0.5 * 8.0)
        assert not rep.passed

    def test_projected_random_pair(self):
        g = Grid(3, 8, 2.0)
        data = wf.pair_from_fields(_random_vec(g, 1).physical(), _random_vec(g, 4).physical(), g)
        assert np.max(np.abs(wf.check_moments(data).integral_a)) < 1e-10


class TestDecayProfile:
    def test_l2_norm_bounded(self):
        data = WaveData(CurlGaussian(sigma=1.0))
        tr = wf.decay_profile(data, [NormSpec.lebesgue(2)], np.geomspace(2, 10, 6))["L2"]
        assert -0.1 <= fit_power_law(tr).exponent <= 0.1

    def test_l4_exponent(self):
        data = WaveData(CurlGaussian(sigma=1.0))
        tr = wf.decay_profile(data, [NormSpec.lebesgue(4)], np.geomspace(2, 10, 6))["L4"]
        assert -0.65 <= fit_power_law(tr).exponent <= -0.35

    def test_analytic_rejects_sobolev(self):
        with pytest.raises(ValueError):
            wf.decay_profile(WaveData(CurlGaussian()), [NormSpec.sobolev(1)], [1.0])
