import math

import numpy as np
import pytest

from gammabsde.frechet import (
    DiscreteMeasure,
    frechet_gradient,
    frechet_mean,
    jensen_check,
    projected_gradient_norm,
    sturm_mean,
)
from gammabsde.geometry import sample_points
from gammabsde.geodesics import geodesic, geodesic_point, psi
from helpers import grid_search_mean

TWO_ARM = DiscreteMeasure([(1.9, 0.5), (0.5, 1.9)], [0.5, 0.5])


class TestDiscreteMeasure:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            DiscreteMeasure([(0.1, 0.1), (0.2, 0.2)], [0.5, 0.6])

    def test_weights_must_be_positive(self):
        with pytest.raises(ValueError):
            DiscreteMeasure([(0.1, 0.1), (0.2, 0.2)], [1.2, -0.2])

    def test_support_validation(self, lshape):
        m = DiscreteMeasure([(1.5, 1.5)], [1.0])
        from gammabsde.errors import ExteriorPointError

        with pytest.raises(ExteriorPointError):
            m.validate_support(lshape)


class TestFrechetMean:
    def test_symmetric_pair_in_square(self, square):
        cert = frechet_mean(square, DiscreteMeasure([(0.2, 0.2), (0.8, 0.8)], [0.5, 0.5]))
        assert np.allclose(cert.mean, (0.5, 0.5), atol=1e-12)
        assert cert.gradient_norm <= 1e-8 * (1 + square.diameter)

    def test_two_arm_mean_is_reflex_corner(self, lshape):
        cert = frechet_mean(lshape, TWO_ARM)
        assert np.allclose(cert.mean, (1.0, 1.0), atol=1e-9)
        assert cert.objective == pytest.approx(1.06, abs=1e-12)

    def test_two_arm_against_grid_oracle(self, lshape):
        oracle, oracle_q = grid_search_mean(lshape, TWO_ARM, coarse=0.05, fine=5e-3)
        cert = frechet_mean(lshape, TWO_ARM)
        assert np.hypot(*(cert.mean - oracle)) <= 6e-3
        assert cert.objective <= oracle_q + 1e-9

    def test_single_atom(self, lshape):
        cert = frechet_mean(lshape, DiscreteMeasure.single((1.3, 0.4)))
        assert np.allclose(cert.mean, (1.3, 0.4))
        assert cert.gradient_norm == 0.0

    def test_weighted_pair_sits_at_arc_fraction(self, lshape):
        m = DiscreteMeasure([(1.9, 0.5), (0.5, 1.9)], [0.75, 0.25])
        cert = frechet_mean(lshape, m)
        path = geodesic(lshape, (1.9, 0.5), (0.5, 1.9))
        assert np.allclose(cert.mean, geodesic_point(path, 0.25), atol=1e-12)

    def test_convex_reduction(self, square):
        rng = np.random.default_rng(17)
        for _ in range(25):
            m = int(rng.integers(1, 6))
            pts = sample_points(square, m, rng)
            w = rng.random(m) + 0.05
            w /= w.sum()
            w[-1] = 1.0 - w[:-1].sum()
            cert = frechet_mean(square, DiscreteMeasure(pts, w))
            assert np.allclose(cert.mean, w @ pts, atol=1e-9)

    def test_certificate_reproducible(self, lshape):
        rng = np.random.default_rng(23)
        for _ in range(20):
            pts = sample_points(lshape, 3, rng)
            m = DiscreteMeasure(pts, [0.25, 0.35, 0.4])
            cert = frechet_mean(lshape, m, tol=1e-10)
            grad = frechet_gradient(lshape, cert.mean, m)
            res = projected_gradient_norm(lshape, cert.mean, grad)
            assert res <= max(2.0 * cert.gradient_norm, 1e-10) + 1e-12

    def test_sturm_cross_check(self, lshape):
        m = DiscreteMeasure([(1.9, 0.5), (0.5, 1.9), (0.3, 0.3)], [1 / 3] * 3)
        cert = frechet_mean(lshape, m, tol=1e-12)
        inductive = sturm_mean(lshape, m, n_iter=30_000, seed=1)
        assert np.hypot(*(cert.mean - inductive)) <= 2e-2

    def test_mean_contraction(self, lshape):
        rng = np.random.default_rng(31)
        for _ in range(40):
            k = int(rng.integers(1, 5))
            a = sample_points(lshape, k, rng)
            b = sample_points(lshape, k, rng)
            w = rng.random(k) + 0.1
            w /= w.sum()
            w[-1] = 1.0 - w[:-1].sum()
            qa = frechet_mean(lshape, DiscreteMeasure(a, w)).mean
            qb = frechet_mean(lshape, DiscreteMeasure(b, w)).mean
            rhs = sum(wi * psi(lshape, x, y) for wi, x, y in zip(w, a, b))
            assert psi(lshape, qa, qb) <= rhs + 1e-9


class TestFrechetGradient:
    def test_symmetric_cancellation(self, square):
        m = DiscreteMeasure([(0.2, 0.2), (0.8, 0.8)], [0.5, 0.5])
        assert np.allclose(frechet_gradient(square, (0.5, 0.5), m), (0.0, 0.0))

    def test_single_atom_formula(self, lshape):
        from gammabsde.geodesics import log_map

        m = DiscreteMeasure.single((0.5, 1.9))
        x = np.array([1.9, 0.5])
        expected = -2.0 * log_map(lshape, x, (0.5, 1.9))
        assert np.allclose(frechet_gradient(lshape, x, m), expected)

    def test_corner_gradient_lies_in_inward_cone(self, lshape):
        # At the two-arm mean the raw gradient is nonzero but its projection
        # outside the inward corner cone vanishes, certifying optimality.
        g = frechet_gradient(lshape, (1.0, 1.0), TWO_ARM)
        assert np.allclose(g, (-0.4, -0.4), atol=1e-12)
        assert projected_gradient_norm(lshape, (1.0, 1.0), g) <= 1e-12


class TestJensen:
    def test_single_atom_equality(self, lshape):
        m = DiscreteMeasure.single((0.7, 1.3))
        rep = jensen_check(lshape, m, lambda p: psi(lshape, (0.2, 0.2), p))
        assert rep.passed
        assert rep.margin == pytest.approx(0.0, abs=1e-12)

    def test_two_arm_against_corner_center(self, lshape):
        rep = jensen_check(lshape, TWO_ARM, lambda p: psi(lshape, (1.0, 1.0), p))
        assert rep.passed
        assert rep.lhs == pytest.approx(0.0, abs=1e-12)
        assert rep.rhs == pytest.approx(1.06, abs=1e-12)

    def test_linear_function_in_square(self, square):
        m = DiscreteMeasure([(0.2, 0.2), (0.8, 0.8)], [0.5, 0.5])
        rep = jensen_check(square, m, lambda p: float(p[0]))
        assert rep.passed
        assert rep.margin == pytest.approx(0.0, abs=1e-12)
