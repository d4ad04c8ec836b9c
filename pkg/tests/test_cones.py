import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conelab.cones import (
    ConeHarmonic,
    check_monotonicity,
    circle_spectrum,
    cone_ball_volume,
    energy_average,
    energy_average_quadrature,
    expand_boundary_data,
    exponent_from_eigenvalue,
    sphere_spectrum,
)


class TestExponent:
    def test_zero(self):
        assert exponent_from_eigenvalue(0.0, 3.0) == 0.0

    def test_threshold(self):
        # lambda = N - 1 is exactly the linear-growth exponent
        for N in (2.0, 3.0, 4.5):
            assert exponent_from_eigenvalue(N - 1, N) == pytest.approx(1.0, abs=1e-14)

    def test_plane_quadratic(self):
        assert exponent_from_eigenvalue(4.0, 2.0) == pytest.approx(2.0)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            exponent_from_eigenvalue(-0.1, 2.0)

    @given(st.floats(0.0, 1e4), st.floats(2.0, 12.0))
    @settings(max_examples=60, deadline=None)
    def test_relation_residual(self, lam, N):
        a = exponent_from_eigenvalue(lam, N)
        assert a >= 0
        assert abs(a * (N + a - 2) - lam) <= 1e-12 * max(1.0, lam)


class TestCircleSpectrum:
    def test_flat_plane(self):
        sp = circle_spectrum(2 * math.pi, kmax=4)
        assert np.allclose(sp.eigenvalues[1:], np.repeat([1, 4, 9, 16], 2))

    def test_half_plane_angle(self):
        sp = circle_spectrum(math.pi)
        assert sp.eigenvalues[1] == pytest.approx(4.0)
        assert sp.exponents[1] == pytest.approx(2.0)

    def test_three_halves(self):
        sp = circle_spectrum(1.5 * math.pi)
        assert sp.exponents[1] == pytest.approx(4.0 / 3.0, abs=1e-12)

    def test_orthonormal(self):
        assert circle_spectrum(2.2, kmax=8).gram_residual() < 1e-8

    def test_angle_rejected(self):
        with pytest.raises(ValueError):
            circle_spectrum(2 * math.pi + 1e-6)

    def test_measure(self):
        sp = circle_spectrum(1.7)
        assert sp.total_measure == pytest.approx(1.7)
        assert sp.weights.sum() == pytest.approx(1.7)


class TestSphereSpectrum:
    def test_unit_sphere_flat(self):
        sp = sphere_spectrum(1.0, lmax=2)
        assert sp.eigenvalues[1] == pytest.approx(2.0)  # = N - 1
        assert sp.exponents[1] == pytest.approx(1.0)

    def test_quadratic_formula_oracle(self):
        sp = sphere_spectrum(1 / math.sqrt(2), lmax=2)
        assert sp.eigenvalues[1] == pytest.approx(4.0)
        assert sp.exponents[1] == pytest.approx((-1 + math.sqrt(17)) / 2, abs=1e-12)

    def test_half_radius_bound(self):
        sp = sphere_spectrum(0.5, lmax=2)
        assert sp.eigenvalues[1] == pytest.approx(8.0)
        assert sp.eigenvalues[1] >= sp.ambient_dimension - 1

    def test_orthonormal(self):
        assert sphere_spectrum(0.8, lmax=4).gram_residual() < 1e-8

    def test_radius_rejected(self):
        with pytest.raises(ValueError):
            sphere_spectrum(1.01)

    def test_gradient_eigen_identity(self):
        # int |grad phi|^2 = lambda for each orthonormal eigenfunction
        sp = sphere_spectrum(0.7, lmax=3)
        grads = sp.mode_gradients(sp.nodes)
        sq = sum(g**2 for g in grads)
        vals = sp.weights @ sq
        assert np.abs(vals - sp.eigenvalues).max() < 1e-6 * max(1, sp.eigenvalues.max())


class TestExpansion:
    def test_single_mode_orthonormality(self):
        sp = circle_spectrum(1.2, kmax=5)
        phi1 = lambda xi: sp.modes(xi)[:, 1]
        h = expand_boundary_data(phi1, sp, truncation=8)
        expect = np.zeros(8)
        expect[1] = 1.0
        assert np.abs(h.coefficients - expect).max() < 1e-12

    def test_cosine_on_full_circle(self):
        # int_0^{2pi} cos^2 = pi, so cos = sqrt(pi) * (cos/sqrt(pi))
        sp = circle_spectrum(2 * math.pi, kmax=3)
        h = expand_boundary_data(np.cos, sp, truncation=7)
        assert h.coefficients[1] == pytest.approx(math.sqrt(math.pi), abs=1e-12)
        assert np.abs(np.delete(h.coefficients, 1)).max() < 1e-12

    def test_parseval_smooth_bump(self):
        sp = circle_spectrum(2 * math.pi, kmax=24)
        g = lambda xi: np.exp(np.cos(xi)) * np.sin(2 * xi)
        h = expand_boundary_data(g, sp, truncation=sp.size)
        norm_sq = float(np.sum(sp.weights * g(sp.nodes) ** 2))
        assert abs(np.sum(h.coefficients**2) - norm_sq) < 1e-6 * norm_sq
        assert abs(h.tail_l2) < 1e-6 * norm_sq


class TestBallVolume:
    def test_unit_disc(self):
        assert cone_ball_volume(1.0, 2, 2 * math.pi) == pytest.approx(math.pi)

    def test_doubling_exact(self):
        for r in (0.1, 0.37, 1.4):
            ratio = cone_ball_volume(2 * r, 3, 4 * math.pi) / cone_ball_volume(r, 3, 4 * math.pi)
            assert ratio == pytest.approx(2**3, rel=1e-14)

    def test_euclidean_ball(self):
        # flat R^3 ball of radius 2
        assert cone_ball_volume(2.0, 3, 4 * math.pi) == pytest.approx(32 * math.pi / 3)


class TestEnergyAverage:
    def test_linear_on_plane(self):
        sp = circle_spectrum(2 * math.pi, kmax=3)
        h = expand_boundary_data(np.cos, sp, truncation=7)  # u = x1
        for r in (0.2, 1.0, 2.5):
            assert energy_average(h, r) == pytest.approx(1.0, rel=1e-12)

    def test_constant_carries_no_energy(self):
        sp = circle_spectrum(math.pi, kmax=3)
        h = ConeHarmonic(sp, np.array([2.5]))
        assert energy_average(h, 0.7) == 0.0

    def test_loglog_slope_two(self):
        sp = circle_spectrum(math.pi, kmax=3)
        h = ConeHarmonic(sp, np.array([0.0, 1.0]))  # r^2 mode
        radii = np.geomspace(0.05, 1.0, 9)
        vals = np.array([energy_average(h, r) for r in radii])
        slope = np.polyfit(np.log(radii), np.log(vals), 1)[0]
        assert slope == pytest.approx(2.0, abs=1e-10)

    def test_limit_at_zero(self):
        sp = sphere_spectrum(1.0, lmax=2)
        c = np.zeros(4)
        c[1] = 2.0  # alpha = 1 mode keeps its density at the vertex
        h = ConeHarmonic(sp, c)
        assert energy_average(h, 0.0) == pytest.approx(energy_average(h, 0.5), rel=1e-12)

    @pytest.mark.parametrize(
        "spec_fn",
        [
            lambda: circle_spectrum(math.pi, kmax=4),
            lambda: circle_spectrum(2 * math.pi, kmax=4),
            lambda: sphere_spectrum(1 / math.sqrt(2), lmax=2),
        ],
    )
    def test_quadrature_cross_validation(self, spec_fn):
        # direct polar quadrature of |d_r u|^2 + r^{-2}|grad_Sigma u|^2
        sp = spec_fn()
        rng = np.random.default_rng(7)
        M = min(8, sp.size)
        c = np.zeros(sp.size)
        c[:M] = rng.normal(size=M) / (1 + np.arange(M))
        h = ConeHarmonic(sp, c[:M])
        for r in (0.4, 1.0):
            closed = energy_average(h, r)
            quad = energy_average_quadrature(h, r)
            assert abs(quad / closed - 1) < 1e-4


class TestMonotonicity:
    def test_flat_linear_constant(self):
        sp = circle_spectrum(2 * math.pi, kmax=2)
        h = expand_boundary_data(np.cos, sp, truncation=5)
        rep = check_monotonicity(h, np.geomspace(0.1, 1.0, 8))
        assert rep.ok
        assert np.allclose(rep.averages, rep.averages[0])

    def test_two_mode_strictly_increasing(self):
        sp = circle_spectrum(math.pi, kmax=4)
        c = np.zeros(5)
        c[1], c[3] = 1.0, 0.3  # r^2 and r^4 modes
        h = ConeHarmonic(sp, c)
        rep = check_monotonicity(h, np.geomspace(0.05, 1.0, 12))
        assert rep.ok and np.all(np.diff(rep.averages) > 0)

    def test_negative_control_flagged(self):
        # inject an exponent-1/2 mode by hand: lambda = alpha(N+alpha-2)
        # with alpha = 1/2, N = 2 gives lambda = 1/4 (an inadmissible
        # cross-section eigenvalue below N - 1)
        from dataclasses import replace

        sp = circle_spectrum(2 * math.pi, kmax=2)
        bad = replace(sp, eigenvalues=np.array([0.0, 0.25, 1.0, 4.0, 4.0]))
        h = ConeHarmonic(bad, np.array([0.0, 1.0]))
        rep = check_monotonicity(h, np.geomspace(0.05, 1.0, 10))
        assert not rep.ok
        assert rep.bad_modes == [1]
        assert rep.violations

    def test_random_harmonics(self):
        rng = np.random.default_rng(123)
        for theta in (math.pi, 1.5 * math.pi, 2 * math.pi):
            sp = circle_spectrum(theta, kmax=6)
            for _ in range(10):
                c = rng.normal(size=9) / (1 + np.arange(9)) ** 2
                h = ConeHarmonic(sp, c)
                assert check_monotonicity(h, np.geomspace(0.02, 1.0, 15)).ok
