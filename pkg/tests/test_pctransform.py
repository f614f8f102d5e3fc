"""Free group, pseudoconformal inversion and the w-side potentials."""

import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magscatter import field as fld
from magscatter import pctransform as pc
from magscatter import wavefield as wf
from magscatter.errors import AnalyticVariantRequiredError, WraparoundError, ZeroTimeError
from magscatter.field import Grid, ScalarField, VectorField


def _free_gaussian(g, sigma, t, p=0.0):
    """``U(t) exp(-x^2 / 2 sigma^2 + i p x)`` in 1-D, closed form."""
    z = sigma ** 2 + 1j * t
    x = g.x1d
    return np.sqrt(sigma ** 2 / z) * np.exp(-(x - p * t) ** 2 / (2 * z) + 1j * p * x - 0.5j * p * p * t)


def _rel(a, b, g):
    return fld.lebesgue_norm(a - b, g, 2) / fld.lebesgue_norm(b, g, 2)


class TestFreeProp:
    def test_identity_at_zero(self):
        g = Grid(2, 16, 4.0)
        f = fld.random_field(g, np.random.default_rng(0))
        assert np.allclose(pc.free_prop_U(f, 0.0).physical(), f.physical(), atol=1e-14)

    def test_gaussian_closed_form(self):
        g = Grid(1, 256, 60.0)
        f = ScalarField(g, _free_gaussian(g, 1.0, 0.0, p=0.5))
        out = pc.free_prop_U(f, 3.0).physical()
        assert np.max(np.abs(out - _free_gaussian(g, 1.0, 3.0, p=0.5))) < 1e-9

    def test_spectral_rep_preserved(self):
        g = Grid(1, 16, 4.0)
        f = fld.transform(fld.gaussian(g, 0.5), fld.SPECTRAL)
        assert pc.free_prop_U(f, 1.0).rep == fld.SPECTRAL


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 31), t1=st.floats(-5, 5), t2=st.floats(-5, 5))
def test_free_group_law_and_unitarity(seed, t1, t2):
    g = Grid(2, 16, 3.0)
    f = fld.random_field(g, np.random.default_rng(seed))
    two = pc.free_prop_U(pc.free_prop_U(f, t1), t2).physical()
    one = pc.free_prop_U(f, t1 + t2).physical()
    scale = fld.lebesgue_norm(f.physical(), g, 2)
    assert fld.lebesgue_norm(two - one, g, 2) < 1e-12 * scale
    assert abs(fld.lebesgue_norm(one, g, 2) - scale) < 1e-12 * scale


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 31), t=st.floats(-3, 3), alpha=st.tuples(st.integers(0, 2), st.integers(0, 2)))
def test_free_group_commutes_with_derivatives(seed, t, alpha):
    g = Grid(2, 16, 3.0)
    f = fld.random_field(g, np.random.default_rng(seed), smooth=0.05)
    a = fld.derivative(pc.free_prop_U(f, t), alpha).physical()
    b = pc.free_prop_U(fld.derivative(f, alpha), t).physical()
    assert np.max(np.abs(a - b)) <= 1e-12 * max(np.max(np.abs(a)), 1.0)


class TestGauge:
    def test_modulus_and_inverse(self):
        g = Grid(2, 16, 4.0)
        f = fld.random_field(g, np.random.default_rng(1))
        m = pc.gauge_M(f, 0.7)
        assert np.allclose(np.abs(m.physical()), np.abs(f.physical()), rtol=1e-14)
        assert np.allclose(pc.gauge_M(m, -0.7).physical(), f.physical(), atol=1e-14)

    def test_phase_at_node(self):
        L = 8.0
        g = Grid(3, 8, L)
        f = ScalarField(g, np.ones(g.shape))
        i = 8 // 2 + 2  # node x = L/4 on the first axis
        assert g.x1d[i] == pytest.approx(L / 4)
        val = pc.gauge_M(f, 2.0).physical()[i, 4, 4]
        assert val == pytest.approx(cmath.exp(1j * L * L / 64), abs=1e-14)

    def test_zero_time(self):
        g = Grid(1, 8, 1.0)
        with pytest.raises(ZeroTimeError):
            pc.gauge_M(ScalarField(g, np.ones(8)), 0.0)


class TestDilation:
    def test_identity_at_one(self):
        g = Grid(1, 64, 20.0)
        f = fld.gaussian(g, 1.0)
        assert np.allclose(pc.dilate_D(f, 1.0, "D0").physical(), f.physical(), atol=1e-12)

    @pytest.mark.parametrize("t", [0.5, 1.7, -1.3])
    def test_gaussian_width(self, t):
        g = Grid(2, 96, 30.0)
        out = pc.dilate_D(fld.gaussian(g, 1.0), t, "D0").physical()
        assert np.max(np.abs(out - fld.gaussian(g, abs(t)).physical())) < 1e-8

    @pytest.mark.parametrize("t", [0.6, 1.5, -2.0])
    def test_unitary(self, t):
        g = Grid(2, 128, 32.0)
        f = fld.gaussian(g, 1.0, center=(0.5, -0.3), momentum=(0.4, 0.0))
        n0 = fld.lebesgue_norm(f.physical(), g, 2)
        assert fld.lebesgue_norm(pc.dilate_D(f, t).physical(), g, 2) == pytest.approx(n0, rel=1e-8)

    def test_prefactor_principal_branch(self):
        assert pc.dilation_prefactor(1.0, 2) == pytest.approx(-1j)
        assert pc.dilation_prefactor(-1.0, 1) == pytest.approx(cmath.exp(0.25j * math.pi))

    def test_wraparound(self):
        g = Grid(1, 64, 10.0)
        with pytest.raises(WraparoundError):
            pc.dilate_D(fld.gaussian(g, 1.0), 4.0)

    def test_bad_kind(self):
        g = Grid(1, 32, 10.0)
        with pytest.raises(ValueError):
            pc.dilate_D(fld.gaussian(g, 0.5), 1.0, "Dx")


class TestFactorization:
    def test_gaussian_and_refinement(self):
        reps = {n: pc.factorization_check(fld.gaussian(Grid(1, n, 24.0), 1.0), 1.0) for n in (64, 128)}
        assert reps[128].relative < 1e-6
        assert reps[64].relative >= 4 * reps[128].relative
        for r in reps.values():
            assert abs(r.norm_direct - r.norm_factored) < 1e-10

    def test_direct_side_matches_closed_form(self):
        g = Grid(1, 128, 24.0)
        out = pc.free_prop_U(fld.gaussian(g, 1.0), 1.0).physical()
        assert np.max(np.abs(out - _free_gaussian(g, 1.0, 1.0))) < 1e-9


class TestInversion:
    @pytest.mark.parametrize("dim", [1, 2])
    def test_round_trip(self, dim):
        g = Grid(dim, 128 if dim == 1 else 64, 24.0)
        u = fld.gaussian(g, 1.5, center=(0.4,) * dim, momentum=(0.3,) * dim)
        pair = pc.u_to_w(u, 2.0)
        assert pair.t_w == pytest.approx(0.5)
        back = pc.w_to_u(pair.w, pair.t_w, u_grid=g)
        assert _rel(back.u.physical(), u.physical(), g) < 1e-8

    def test_pair_relation_at_nodes(self):
        g = Grid(1, 128, 12.0)
        w = fld.gaussian(g, 1.0, momentum=(0.5,))
        pair = pc.w_to_u(w, 0.5)
        ug = pair.u.grid
        t = pair.t_u
        # u(x) = exp(i x^2 / 2t) (it)^{-1/2} conj(w(x/t)), with w in closed form
        x = ug.x1d
        wx = np.exp(-(x / t) ** 2 / 2 + 0.5j * x / t)
        expect = np.exp(0.5j * x * x / t) * (1j * t) ** -0.5 * np.conj(wx)
        assert np.max(np.abs(pair.u.physical() - expect)) < 1e-8

    def test_identity_ft_interaction(self):
        g = Grid(1, 256, 40.0)
        u = ScalarField(g, _free_gaussian(g, 1.0, 2.0, p=0.4))
        pair = pc.u_to_w(u, 2.0)
        disc = pc.identity_1_19(u, pair.w, 2.0)
        assert disc["ft_vs_wtilde"] < 1e-8
        assert disc["wtilde_vs_wstar"] < 1e-8

    def test_free_solution_maps_to_free_solution(self):
        # u = U(t) u_+ gives w(s) = U(s) conj(F u_+); F u_+ = sigma exp(-sigma^2 (xi - p)^2 / 2) in 1-D
        sigma, p, t_u = 1.0, 0.4, 2.0
        g = Grid(1, 256, 40.0)
        u = ScalarField(g, _free_gaussian(g, sigma, t_u, p=p))
        pair = pc.u_to_w(u, t_u)
        wg = pair.w.grid
        fu = ScalarField(wg, sigma * np.exp(-sigma ** 2 * (wg.x1d - p) ** 2 / 2))
        expect = pc.free_prop_U(fu.conj(), pair.t_w).physical()
        assert _rel(pair.w.physical(), expect, wg) < 1e-7

    def test_zero_time(self):
        g = Grid(1, 16, 4.0)
        with pytest.raises(ZeroTimeError):
            pc.w_to_u(fld.gaussian(g, 0.3), 0.0)


@settings(max_examples=20, deadline=None)
@given(t=st.floats(0.5, 2.0), cx=st.floats(-0.5, 0.5), p=st.floats(-0.5, 0.5))
def test_inversion_is_involution(t, cx, p):
    g = Grid(1, 128, 24.0)
    w = fld.gaussian(g, 1.0, center=(cx,), momentum=(p,))
    u = pc.w_to_u(w, 1.0 / t, u_grid=pc.natural_grid(g, t)).u
    back = pc.u_to_w(u, t, w_grid=g).w
    assert _rel(back.physical(), w.physical(), g) < 1e-8


@settings(max_examples=20, deadline=None)
@given(t=st.floats(-2, 2), seed=st.integers(0, 1000))
def test_galilei_generator(t, seed):
    # (x + i t grad) f = U(t) x U(-t) f
    g = Grid(1, 256, 40.0)
    rng = np.random.default_rng(seed)
    f = fld.gaussian(g, 0.8 + 0.4 * rng.random(), center=(rng.uniform(-1, 1),), momentum=(rng.uniform(-1, 1),))
    lhs = pc.galilei_J(f, t, 0).physical()
    back = pc.free_prop_U(f, -t)
    rhs = pc.free_prop_U(ScalarField(g, g.x1d * back.physical()), t).physical()
    assert np.max(np.abs(lhs - rhs)) < 1e-8


def _data(sigma=1.0, amp=1.0):
    return wf.WaveData(wf.CurlGaussian(amplitude=amp, sigma=sigma))


class TestBFromA:
    def test_unit_time_is_minus_a(self):
        data = _data()
        g = Grid(3, 16, 8.0)
        bs = pc.B_from_A(data, 1.0, g)
        a = wf.eval_analytic(data, 1.0, g.points())
        assert np.allclose(bs.b.physical(), -a.a, atol=1e-14)
        assert np.allclose(bs.bcheck.physical(), a.x_dot_a, atol=1e-14)

    def test_divergence_free(self):
        data = _data()
        # the box must hold the Gaussian tails, or the cut at the faces shows up as divergence
        g = Grid(3, 64, 14.0)
        b = pc.B_from_A(data, 1.0, g).b.physical()
        div = fld.divergence(b, g)
        assert np.max(np.abs(div)) < 1e-9 * max(1.0, np.max(np.abs(b)))

    def test_bcheck_is_minus_y_dot_b_over_t(self):
        g = Grid(3, 16, 4.0)
        t = 0.5
        bs = pc.B_from_A(_data(), t, g)
        ydb = -np.sum(g.points() * bs.b.physical(), axis=0) / t
        assert np.allclose(bs.bcheck.physical(), ydb, atol=1e-12)

    def test_grid_data_rejected(self):
        g = Grid(3, 8, 4.0)
        z = np.zeros((3,) + g.shape)
        with pytest.raises(AnalyticVariantRequiredError):
            pc.B_from_A(wf.WaveData(wf.GridPair(VectorField(g, z), VectorField(g, z))), 0.5, g)

    def test_nonpositive_time(self):
        with pytest.raises(ValueError):
            pc.b_at_points(_data(), 0.0, np.zeros((3, 1)))

    def test_l2_scaling(self):
        # ||B(t)||_2 = t^{1/2} ||A(1/t)||_2 by change of variables
        data = _data()
        for t in (0.25, 0.5):
            lhs = pc.b_norms_quadrature(data, t, [2.0])[2.0]
            assert lhs == pytest.approx(math.sqrt(t) * wf.analytic_norm(data, 1 / t, 2.0), rel=1e-10)


class TestPoisson:
    def test_single_mode(self):
        g = Grid(3, 16, 2 * math.pi)
        k = np.array([1.0, 2.0, 0.0])
        e = np.array([2.0, -1.0, 0.5])
        s = np.sin(sum(ki * x for ki, x in zip(k, g.coords)))
        b = VectorField(g, np.stack([ei * s for ei in e]))
        bc = ScalarField(g, 3.0 + s)
        res = pc.poisson_h(b, bc)
        expect = np.stack([2 / (k @ k) * ei * s for ei in e])
        assert np.max(np.abs(res.h.physical() - expect)) < 1e-12
        assert res.bcheck_mean == pytest.approx(3.0)
        assert np.max(np.abs(res.hcheck.physical() - 2 / (k @ k) * s)) < 1e-12
        assert res.residual < 1e-10

    def test_residual_on_sampled_b(self):
        g = Grid(3, 32, 8.0)
        bs = pc.B_from_A(_data(), 0.5, g)
        assert pc.poisson_h(bs.b, bs.bcheck).residual < 1e-10


class TestBSpectral:
    @pytest.mark.parametrize("center,axis", [((0, 0, 0), (0, 0, 1)), ((0.3, -0.2, 0.1), (0.2, 0.1, 1))])
    def test_matches_point_samples_when_resolved(self, center, axis):
        g = Grid(3, 48, 10.0)
        data = wf.WaveData(wf.CurlGaussian(center=center, axis=axis))
        nodal, spec = pc.B_from_A(data, 0.5, g), pc.B_spectral(data, 0.5, g)
        nb = fld.lebesgue_norm(nodal.b.physical(), g, 2)
        assert fld.lebesgue_norm(nodal.b.physical() - spec.b.physical(), g, 2) < 1e-5 * nb
        assert fld.lebesgue_norm(nodal.bcheck.physical() - spec.bcheck.physical(), g, 2) < 1e-5 * nb

    def test_divergence_free(self):
        g = Grid(3, 24, 8.0)
        b = pc.B_spectral(_data(), 0.125, g).b.physical()
        assert np.max(np.abs(fld.divergence(b, g))) < 1e-12 * np.max(np.abs(b)) * g.k_nyquist

    def test_time_derivative(self):
        g = Grid(3, 24, 8.0)
        data = wf.WaveData(wf.CurlGaussian(center=(0.2, 0.0, -0.1)))
        t, eps = 0.3, 1e-5
        d = pc.B_spectral(data, t, g, time_derivative=True)
        up, dn = pc.B_spectral(data, t + eps, g), pc.B_spectral(data, t - eps, g)
        fd_b = (up.b.physical() - dn.b.physical()) / (2 * eps)
        fd_bc = (up.bcheck.physical() - dn.bcheck.physical()) / (2 * eps)
        scale = np.max(np.abs(d.b.physical()))
        assert np.max(np.abs(fd_b - d.b.physical())) < 1e-7 * scale
        assert np.max(np.abs(fd_bc - d.bcheck.physical())) < 1e-7 * scale

    def test_moments_survive_under_resolution(self):
        # point samples of an unresolved shell inflate Delta^-1 B; the band-limited field does not
        g = Grid(3, 48, 10.0)
        t = 1 / 16
        nodal = pc.B_from_A(_data(), t, g)
        spec = pc.B_spectral(_data(), t, g)
        h_nodal = fld.lebesgue_norm(pc.poisson_h(nodal.b, nodal.bcheck).h.physical(), g, 2)
        h_spec = fld.lebesgue_norm(pc.poisson_h(spec.b, spec.bcheck).h.physical(), g, 2)
        assert h_spec < 0.1 * h_nodal

    def test_invalid(self):
        g = Grid(3, 8, 4.0)
        with pytest.raises(ValueError):
            pc.B_spectral(_data(), 0.0, g)
        with pytest.raises(ValueError):
            pc.B_spectral(_data(), 0.5, Grid(2, 8, 4.0))
