import math

import numpy as np
import pytest

from gammabsde.geometry import EXTERIOR, contains
from gammabsde.geodesics import psi
from gammabsde.lattice import NodeField, build_lattice
from gammabsde.scheme import refine_and_compare, solve_exogenous, solve_state_dependent
from conftest import two_arm_terminal
from helpers import conditional_expectation_field, grid_search_mean


def smooth_terminal(w):
    return np.array([0.5 + 0.3 * math.tanh(w[0]), 0.5])


class TestSolveExogenous:
    def test_convex_reduction(self, square):
        L = build_lattice(1, 5, 1.0)
        res = solve_exogenous(square, L, smooth_terminal)
        oracle = conditional_expectation_field(L, smooth_terminal)
        for key in oracle.keys():
            assert np.abs(res.Y[key] - oracle[key]).max() <= 1e-10
            if key[0] < L.n_steps:
                assert np.abs(res.K_inc[key]).max() <= 1e-12

    def test_constant_terminal(self, lshape):
        L = build_lattice(1, 4, 1.0)
        c = np.array([0.6, 0.4])
        res = solve_exogenous(lshape, L, lambda w: c)
        for i in res.scheme_slices:
            for nd, v in res.Y.at_slice(i):
                assert np.allclose(v, c)
        for i in res.scheme_slices[:-1]:
            for nd, z in res.Z.at_slice(i):
                assert np.abs(z).max() == 0.0
            for nd, k in res.K_inc.at_slice(i):
                assert np.abs(k).max() == 0.0

    def test_terminal_outside_domain_raises(self, lshape):
        from gammabsde.errors import ExteriorPointError

        L = build_lattice(1, 2, 1.0)
        with pytest.raises(ExteriorPointError):
            solve_exogenous(lshape, L, lambda w: np.array([1.5, 1.5]))

    def test_two_arm_root_matches_terminal_barycenter(self, lshape):
        from gammabsde.frechet import DiscreteMeasure, frechet_mean

        L = build_lattice(1, 6, 1.0)
        res = solve_exogenous(lshape, L, two_arm_terminal)
        p_up = sum(
            L.weight(L.n_steps, nd) for nd in L.states(L.n_steps) if nd[0] > 0
        )
        measure = DiscreteMeasure([(1.9, 0.5), (0.5, 1.9)], [p_up, 1.0 - p_up])
        direct = frechet_mean(lshape, measure)
        assert np.abs(res.root() - direct.mean).max() <= 1e-10

    def test_two_arm_root_against_grid_oracle(self, lshape):
        from gammabsde.frechet import DiscreteMeasure

        L = build_lattice(1, 6, 1.0)
        res = solve_exogenous(lshape, L, two_arm_terminal)
        p_up = sum(
            L.weight(L.n_steps, nd) for nd in L.states(L.n_steps) if nd[0] > 0
        )
        measure = DiscreteMeasure([(1.9, 0.5), (0.5, 1.9)], [p_up, 1.0 - p_up])
        oracle, _ = grid_search_mean(lshape, measure, coarse=0.05, fine=2e-3)
        assert np.hypot(*(res.root() - oracle)) <= 1e-3

    def test_containment_and_balance(self, lshape):
        L = build_lattice(1, 5, 1.0)
        res = solve_exogenous(
            lshape, L, two_arm_terminal, F=lambda i, w: np.array([-0.3, -0.1])
        )
        for i in res.scheme_slices:
            for nd, v in res.Y.at_slice(i):
                assert contains(lshape, v) != EXTERIOR
        h = res.h_step
        for i in res.scheme_slices[:-1]:
            for nd, _ in res.Y.at_slice(i):
                e = np.zeros(2)
                for nd2, p, _dw in L.branches(i, nd):
                    e += p * res.Y[(i + 1, nd2)]
                bal = e - res.Y[(i, nd)] + res.drift[(i, nd)] * h - res.K_inc[(i, nd)]
                assert np.abs(bal).max() <= 1e-10

    def test_sibling_spread_controlled(self, lshape):
        # squared field gap between adjacent states, relative to the state
        # gap, does not grow as the sweep moves backward (zero drift).
        L = build_lattice(1, 6, 1.0)
        res = solve_exogenous(lshape, L, two_arm_terminal)
        ratios = []
        for i in res.scheme_slices:
            worst = 0.0
            states = L.states(i)
            for a, b in zip(states[:-1], states[1:]):
                gap2 = float(
                    np.sum((L.state_value(a) - L.state_value(b)) ** 2)
                )
                ya, yb = res.Y[(i, a)], res.Y[(i, b)]
                if np.allclose(ya, yb):
                    continue
                worst = max(worst, psi(lshape, ya, yb) / gap2)
            ratios.append(worst)
        terminal_ratio = ratios[-1]
        assert max(ratios) <= terminal_ratio * (1.0 + 1e-9)

    def test_discrete_submartingale_zero_drift(self, lshape):
        from gammabsde.verifier import default_centers, submartingale_check

        L = build_lattice(1, 5, 1.0)
        res = solve_exogenous(lshape, L, two_arm_terminal)
        rep = submartingale_check(lshape, L, res, default_centers(lshape, 6, seed=3))
        assert rep.passed
        assert rep.margin >= -1e-12


class TestSolveStateDependent:
    def test_y_independent_equals_exogenous(self, lshape):
        L = build_lattice(1, 4, 1.0)
        drift = np.array([-0.2, 0.1])
        dep = solve_state_dependent(lshape, L, two_arm_terminal, lambda i, w, y: drift)
        exo = solve_exogenous(lshape, L, two_arm_terminal, F=lambda i, w: drift)
        for key in exo.Y.keys():
            assert np.abs(dep.Y[key] - exo.Y[key]).max() <= 1e-12

    def test_stationary_point(self, square):
        L = build_lattice(1, 4, 1.0)
        c = np.array([0.5, 0.5])
        res = solve_state_dependent(
            square, L, lambda w: c, lambda i, w, y: -0.8 * (y - c)
        )
        for i in res.scheme_slices:
            for _nd, v in res.Y.at_slice(i):
                assert np.allclose(v, c, atol=1e-12)

    def test_geometric_gap_decay(self, lshape):
        L = build_lattice(1, 5, 1.0)
        c = np.array([0.5, 0.5])
        res = solve_state_dependent(
            lshape, L, two_arm_terminal, lambda i, w, y: 0.5 * (c - y)
        )
        gaps = res.diagnostics["y_gaps"][0]
        assert gaps[-1] <= 1e-12
        ratios = [b / a for a, b in zip(gaps[:-2], gaps[1:-1]) if a > 0]
        assert all(r < 1.0 for r in ratios)

    def test_windowed_solve_matches_single_window(self, lshape):
        # both routes approach the same fixed point as the inner tolerance
        # tightens (window boundaries otherwise carry the iteration residual)
        L = build_lattice(1, 4, 1.0)
        c = np.array([0.5, 0.5])
        f = lambda i, w, y: 0.5 * (c - y)
        whole = solve_state_dependent(lshape, L, two_arm_terminal, f,
                                      y_gap_tol=1e-22)
        windowed = solve_state_dependent(lshape, L, two_arm_terminal, f,
                                         eta=0.25, y_gap_tol=1e-22)
        assert len(windowed.diagnostics["y_gaps"]) == 4
        for key in whole.Y.keys():
            assert np.abs(whole.Y[key] - windowed.Y[key]).max() <= 1e-9


class TestRefinement:
    def test_constant_terminal_no_gaps(self, lshape):
        tab = refine_and_compare(
            lshape, lambda w: np.array([0.6, 0.4]), None, [2, 3, 4]
        )
        assert all(g == 0.0 for _a, _b, g in tab.gaps)

    def test_convex_zero_drift_consistent(self, square):
        tab = refine_and_compare(square, smooth_terminal, None, [2, 3, 4, 5])
        assert all(g <= 1e-12 for _a, _b, g in tab.gaps)

    def test_drift_scenario_strictly_decreasing(self, lshape):
        F = lambda i, w: np.array([-0.4, -0.2])
        tab = refine_and_compare(lshape, two_arm_terminal, F, [3, 4, 5, 6])
        gaps = [g for _a, _b, g in tab.gaps]
        assert all(b < a for a, b in zip(gaps[:-1], gaps[1:]))
        assert tab.strictly_decreasing
