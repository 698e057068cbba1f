import math

import numpy as np
import pytest

from gammabsde.errors import CapacityError, SliceOrderError
from gammabsde.lattice import (
    NodeField,
    build_lattice,
    conditional_measure,
    node_expectation,
)


class TestBuild:
    def test_two_flips(self):
        L = build_lattice(1, 1, 1.0)
        assert L.n_steps == 2
        states = L.states(2)
        assert states == [(-2,), (0,), (2,)]
        assert [L.weight(2, s) for s in states] == [0.25, 0.5, 0.25]
        assert np.allclose(L.state_value((2,)), 2.0 * math.sqrt(0.5))

    def test_slice_counts(self):
        L = build_lattice(1, 3, 1.0)
        for i in range(L.n_steps + 1):
            assert len(L.states(i)) == i + 1

    def test_product_lattice(self):
        L = build_lattice(2, 1, 1.0)
        states = L.states(1)
        assert len(states) == 4
        assert all(L.weight(1, s) == 0.25 for s in states)

    def test_capacity_guard(self):
        with pytest.raises(CapacityError):
            build_lattice(2, 12, 1.0)

    def test_bad_args(self):
        with pytest.raises(ValueError):
            build_lattice(3, 2, 1.0)
        with pytest.raises(ValueError):
            build_lattice(1, 0, 1.0)
        with pytest.raises(ValueError):
            build_lattice(1, 2, -1.0)

    def test_tree_mode(self):
        L = build_lattice(1, 2, 1.0, tree=True)
        assert len(L.states(2)) == 4
        assert L.weight(2, ((1,), (-1,))) == 0.25
        with pytest.raises(CapacityError):
            build_lattice(1, 13, 1.0, tree=True)

    def test_tree_path_dependent_field(self):
        # running-maximum payoff separates paths that recombine
        L = build_lattice(1, 2, 1.0, tree=True)
        f = NodeField()
        for nd in L.states(2):
            steps = np.cumsum([s[0] for s in nd]) * L.sqrt_h
            f[(2, nd)] = np.array([max(0.0, *steps), 0.0])
        up_down = f[(2, ((1,), (-1,)))]
        down_up = f[(2, ((-1,), (1,)))]
        assert up_down[0] != down_up[0]


class TestBranches:
    def test_moment_match(self):
        for d_prime in (1, 2):
            L = build_lattice(d_prime, 2, 0.7)
            nd = L.states(1)[0]
            mean = np.zeros(d_prime)
            cov = np.zeros((d_prime, d_prime))
            psum = 0.0
            for _nd2, p, dw in L.branches(1, nd):
                mean += p * dw
                cov += p * np.outer(dw, dw)
                psum += p
            assert psum == 1.0
            assert np.abs(mean).max() <= 1e-14
            assert np.abs(cov - L.h * np.eye(d_prime)).max() <= 1e-14

    def test_slice_weights_sum_to_one(self):
        L = build_lattice(1, 4, 1.0)
        for i in range(L.n_steps + 1):
            total = sum(L.weight(i, nd) for nd in L.states(i))
            assert total == pytest.approx(1.0, abs=1e-14)


class TestConditionalMeasure:
    def test_identity_embedding(self):
        L = build_lattice(1, 2, 1.0)
        f = NodeField()
        for nd in L.states(1):
            pass
        for nd in L.states(1 + 1):
            w = L.state_value(nd)
            f[(2, nd)] = np.array([w[0], 0.0])
        m = conditional_measure(L, 1, (1,), f, 2)
        assert len(m.points) == 2
        assert np.allclose(m.weights, [0.5, 0.5])

    def test_constant_field_merges(self):
        L = build_lattice(2, 1, 1.0)
        f = NodeField()
        for nd in L.states(1):
            f[(1, nd)] = np.array([0.3, 0.4])
        m = conditional_measure(L, 0, (0, 0), f, 1)
        assert len(m.points) == 1
        assert m.weights[0] == 1.0

    def test_slice_order_guard(self):
        L = build_lattice(1, 2, 1.0)
        f = NodeField()
        with pytest.raises(SliceOrderError):
            conditional_measure(L, 1, (1,), f, 3)
        with pytest.raises(SliceOrderError):
            L.law(2, (0,), 1)


class TestExpectation:
    def test_centered_increments(self):
        L = build_lattice(1, 2, 1.0)
        f = NodeField()
        for nd in L.states(1):
            f[(1, nd)] = L.state_value(nd)
        out = node_expectation(L, 0, (0,), f)
        assert np.abs(out).max() <= 1e-16

    def test_constant(self):
        L = build_lattice(2, 1, 1.0)
        c = np.array([1.5, -2.0])
        f = NodeField()
        for nd in L.states(1):
            f[(1, nd)] = c
        assert np.allclose(node_expectation(L, 0, (0, 0), f), c)

    def test_two_point_average(self):
        L = build_lattice(1, 1, 1.0)
        f = NodeField()
        f[(1, (1,))] = np.array([3.0, 1.0])
        f[(1, (-1,))] = np.array([1.0, 5.0])
        assert np.allclose(node_expectation(L, 0, (0,), f), (2.0, 3.0))

    def test_tower_property(self):
        L = build_lattice(1, 3, 1.0)
        rng = np.random.default_rng(0)
        f = NodeField()
        n = L.n_steps
        for nd in L.states(n):
            f[(n, nd)] = rng.random(2)
        # compose one-step expectations backward
        comp = NodeField({(n, nd): f[(n, nd)] for nd in L.states(n)})
        for i in range(n - 1, -1, -1):
            for nd in L.states(i):
                comp[(i, nd)] = node_expectation(L, i, nd, comp)
        # direct multi-step weighted average from the root
        direct = np.zeros(2)
        for nd, p in L.law(0, (0,), n):
            direct += p * f[(n, nd)]
        assert np.abs(comp[(0, (0,))] - direct).max() <= 1e-13
