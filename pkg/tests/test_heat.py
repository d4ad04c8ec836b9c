import math

import numpy as np
import pytest

from conelab.fem import ResolutionError
from conelab.heat import (
    CertificationError,
    GridFunction,
    HeatKernel,
    build_cutoff,
    default_t_grid,
    heat_apply,
    kernel_bounds_check,
    smoothing_pipeline,
    subharmonic_monotonicity_check,
)


def grid_from(f, halfwidth=2.0, points=257):
    return GridFunction.from_callable(f, halfwidth, points, n=2)


class TestHeatApply:
    def test_zero(self):
        v = grid_from(lambda p: np.zeros(len(p)))
        assert np.abs(heat_apply(v, 0.01).values).max() == 0.0

    def test_gaussian_variance_oracle(self):
        # closed-form convolution: N(0, s^2) flows to N(0, s^2 + 2t)
        s2, t = 0.05, 0.02
        v = grid_from(lambda p: np.exp(-(p**2).sum(1) / (2 * s2)))
        exact = grid_from(lambda p: s2 / (s2 + 2 * t) * np.exp(-(p**2).sum(1) / (2 * (s2 + 2 * t))))
        vt = heat_apply(v, t)
        win = v.window_mask(0.8)
        assert np.abs(vt.values - exact.values)[win].max() < 1e-12

    def test_linear_invariance(self):
        # harmonic invariance holds away from the zero-padding boundary; the
        # window margin of 12 sqrt(t) keeps the truncation tail below 1e-10
        v = grid_from(lambda p: p[:, 0])
        vt = heat_apply(v, 0.01)
        win = v.window_mask(1.2)
        assert np.abs(vt.values - v.values)[win].max() < 1e-10

    def test_unresolved_time_refused(self):
        v = grid_from(lambda p: p[:, 0], points=65)
        with pytest.raises(ResolutionError) as err:
            heat_apply(v, 1e-5)
        assert err.value.minimum > 1e-5

    def test_l1_contraction(self):
        v = grid_from(lambda p: np.maximum(0.5 - (p**2).sum(1), 0.0) * np.sign(p[:, 0]))
        for t in (1e-3, 1e-2):
            assert heat_apply(v, t).lp_norm(1) <= v.lp_norm(1) + 1e-10

    def test_lp_contractions(self):
        v = grid_from(lambda p: np.maximum(0.4 - (p**2).sum(1), 0.0) ** 2)
        vt = heat_apply(v, 5e-3)
        for p in (1.0, 2.0, math.inf):
            assert vt.lp_norm(p) <= v.lp_norm(p) * (1 + 1e-10)

    def test_semigroup_property(self):
        v = grid_from(lambda p: np.exp(-(p**2).sum(1) / 0.1))
        a = heat_apply(heat_apply(v, 0.004), 0.006)
        b = heat_apply(v, 0.010)
        win = v.window_mask(0.8)
        rel = np.abs(a.values - b.values)[win].max() / np.abs(b.values).max()
        assert rel < 1e-6

    def test_commutes_with_laplacian(self):
        v = grid_from(lambda p: np.exp(-(p**2).sum(1) / 0.2))
        t = 0.01
        lhs = heat_apply(v, t).laplacian()
        rhs = heat_apply(v.like(v.laplacian()), t).values
        win = v.window_mask(0.9)
        scale = np.abs(lhs[win]).max()
        assert np.abs(lhs - rhs)[win].max() < 1e-4 * scale  # O(h^2) differencing

    def test_sup_bound_from_l1(self):
        # ||P_t v||_inf <= (4 pi t)^{-n/2} ||v||_1
        v = grid_from(lambda p: (np.abs(p).max(axis=1) < 0.2).astype(float))
        for t in (2e-3, 2e-2):
            bound = (4 * math.pi * t) ** -1.0 * v.lp_norm(1)
            assert heat_apply(v, t).lp_norm(math.inf) <= bound * (1 + 1e-9)


class TestKernelBounds:
    def test_envelope_and_constants(self):
        rep = kernel_bounds_check(2)
        assert rep.envelope_ok
        # at d = 0 the envelope constant is (4 pi)^{n/2} / omega_n = 4 in 2d
        assert rep.c1_value == pytest.approx(4.0, rel=1e-9)

    def test_mass_unity(self):
        rep = kernel_bounds_check(2, t_grid=(1e-3, 1e-2, 1e-1))
        assert max(rep.mass_errors.values()) <= 1e-8

    def test_kernel_symmetry_and_derivatives(self):
        kern = HeatKernel(2)
        d = np.array([0.0, 0.3, 1.1])
        t = 0.07
        # symmetry is distance-dependence; check time derivative against a
        # finite difference of the closed form
        eps = 1e-6
        fd = (kern(t + eps, d) - kern(t - eps, d)) / (2 * eps)
        assert np.abs(fd - kern.time_derivative(t, d)).max() < 1e-5

    def test_three_dimensional_envelope(self):
        rep = kernel_bounds_check(3, t_grid=(1e-2,))
        assert rep.envelope_ok and rep.mass_ok


class TestCutoff:
    def test_scale_invariance(self):
        consts = []
        for R in (1.0, 2.0, 4.0):
            eta, cr = build_cutoff(np.zeros(2), R, halfwidth=9.0, points=448)
            consts.append(cr.scale_invariant_constant)
            assert cr.plateau_ok and cr.support_ok
            assert cr.drift <= cr.drift_bound
        variation = (max(consts) - min(consts)) / min(consts)
        assert variation < 0.15

    def test_plateau_saturates_exactly(self):
        eta, cr = build_cutoff(np.zeros(2), 1.0, halfwidth=2.6, points=320)
        pts = eta.points()
        inside = np.linalg.norm(pts, axis=1).reshape(eta.values.shape) <= 1.0
        assert np.all(eta.values[inside] == 1.0)

    def test_bakry_ledoux(self):
        _, cr = build_cutoff(np.zeros(2), 1.0, halfwidth=2.6, points=320)
        assert cr.bakry_ledoux_excess <= 1e-6

    def test_coarse_grid_refused(self):
        with pytest.raises((ResolutionError, ValueError)):
            build_cutoff(np.zeros(2), 1.0, halfwidth=9.0, points=40)


class TestSmoothing:
    def setup_method(self):
        R = 4.0

        def harmonic(p):
            chi = np.clip((R - np.linalg.norm(p, axis=1)) / (R / 2), 0, 1)
            return (p[:, 0] ** 2 - p[:, 1] ** 2) * chi

        self.R = R
        self.v = GridFunction.from_callable(harmonic, 5.5, 700, n=2)

    def test_requires_certificate(self):
        with pytest.raises(CertificationError):
            smoothing_pipeline(self.v, default_t_grid(), np.zeros(2), self.R)

    def test_harmonic_bounded_gradient(self):
        rep = smoothing_pipeline(
            self.v, default_t_grid(points=8), np.zeros(2), self.R, allow_uncertified=True
        )
        assert rep.lipschitz
        assert rep.gradient_variation <= 0.10
        assert rep.l1_rate >= 0.5
        # Lipschitz constant approximates sup |grad u| = 2 (R/8) = 1
        assert rep.lipschitz_constant == pytest.approx(1.0, abs=0.05)

    def test_jump_blowup_detected(self):
        def jump(p):
            return (p[:, 0] > 0).astype(float) * (np.linalg.norm(p, axis=1) <= self.R)

        vj = GridFunction.from_callable(jump, 5.5, 700, n=2)
        rep = smoothing_pipeline(
            vj, default_t_grid(points=8), np.zeros(2), self.R, allow_uncertified=True
        )
        assert not rep.lipschitz
        assert rep.gradient_slope == pytest.approx(-0.5, abs=0.1)

    def test_constant_gradient_vanishes(self):
        def const(p):
            return (np.linalg.norm(p, axis=1) <= self.R).astype(float)

        vc = GridFunction.from_callable(const, 5.5, 700, n=2)
        rep = smoothing_pipeline(
            vc, default_t_grid(points=6), np.zeros(2), self.R, allow_uncertified=True
        )
        # inside B_{R/8} the data is constant 1; gradients decay toward 0
        assert rep.sup_gradients[-1] < 1e-6


class TestMonotoneFlow:
    def test_quadratic_exact_drift(self):
        u = GridFunction.from_callable(lambda p: (p**2).sum(1), 2.0, 257, n=2)
        ts = [1e-3, 3e-3, 1e-2]
        rep = subharmonic_monotonicity_check(u, ts, window_margin=1.0)
        assert rep.monotone and rep.subharmonic_certificate
        # P_t |x|^2 = |x|^2 + 2 n t exactly
        w = u.window_mask(1.0)
        for t in ts:
            ut = heat_apply(u, t)
            assert np.abs(ut.values - (u.values + 4 * t))[w].max() < 1e-6

    def test_harmonic_flat(self):
        u = GridFunction.from_callable(lambda p: p[:, 0], 2.0, 257, n=2)
        rep = subharmonic_monotonicity_check(u, [1e-3, 1e-2], window_margin=1.0)
        assert rep.monotone
        ut = heat_apply(u, 1e-2)
        assert np.abs(ut.values - u.values)[u.window_mask(1.0)].max() < 1e-8

    def test_superharmonic_flipped(self):
        u = GridFunction.from_callable(lambda p: -(p**2).sum(1), 2.0, 257, n=2)
        rep = subharmonic_monotonicity_check(u, [1e-3, 1e-2], window_margin=1.0)
        assert not rep.monotone  # negative certificate, not an exception
        assert not rep.subharmonic_certificate
        neg = subharmonic_monotonicity_check(
            u.like(-u.values), [1e-3, 1e-2], window_margin=1.0
        )
        assert neg.monotone

    def test_mass_conservation_compact(self):
        def blob(p):
            return np.maximum(1.0 - (p**2).sum(1), 0.0) ** 3

        u = GridFunction.from_callable(blob, 2.0, 257, n=2)
        rep = subharmonic_monotonicity_check(u, [1e-3, 1e-2], window_margin=0.5)
        assert rep.mass_checked
        assert rep.mass_drift <= 1e-6
