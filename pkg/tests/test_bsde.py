import math

import numpy as np
import pytest

from gammabsde.errors import EvalError, ParseError
from gammabsde.expressions import parse_expression
from gammabsde.bsde import (
    bmo_diagnostic,
    evaluate_generator,
    generator_from_expression,
    load_scenario,
    solve_bsde,
)
from gammabsde.lattice import NodeField, build_lattice
from gammabsde.scheme import solve_state_dependent
from conftest import fixture_text, two_arm_terminal
from helpers import conditional_expectation_field


class TestExpressions:
    def test_literals_and_precedence(self):
        e = parse_expression("1 + 2*3 - 4/8", ["t"])
        assert e({"t": 0.0}) == pytest.approx(6.5)

    def test_unary_minus(self):
        e = parse_expression("-t*-2", ["t"])
        assert e({"t": 3.0}) == pytest.approx(6.0)

    def test_functions(self):
        e = parse_expression("max(sin(t), cos(t), 0.25) + clip(t, 0, 1)", ["t"])
        assert e({"t": 0.0}) == pytest.approx(1.0)
        assert e({"t": 2.0}) == pytest.approx(max(math.sin(2), math.cos(2), 0.25) + 1.0)

    def test_vector_result(self):
        e = parse_expression("(y1 - 0.5, y2 - 0.5)", ["y1", "y2"])
        assert np.allclose(e({"y1": 0.7, "y2": 0.2}), (0.2, -0.3))

    def test_whitespace_insensitive(self):
        a = parse_expression("( 1+t , 2 * t )", ["t"])
        b = parse_expression("(1+t,2*t)", ["t"])
        assert np.allclose(a({"t": 0.3}), b({"t": 0.3}))

    def test_parse_error_reports_position(self):
        with pytest.raises(ParseError) as err:
            parse_expression("1 + @", ["t"])
        assert err.value.line == 1
        assert err.value.column == 5

    def test_unknown_variable(self):
        with pytest.raises(ParseError):
            parse_expression("q + 1", ["t"])

    def test_unknown_function(self):
        with pytest.raises(ParseError):
            parse_expression("frob(1)", ["t"])

    def test_division_by_zero(self):
        e = parse_expression("1/t", ["t"])
        with pytest.raises(EvalError):
            e({"t": 0.0})


class TestGenerator:
    def test_zero(self):
        gen = generator_from_expression("(0, 0)", 1, 0.0, 0.0)
        assert np.allclose(evaluate_generator(gen, 0.1, (0.5, 0.5), [[0.0], [0.0]]), (0, 0))

    def test_affine_in_y(self):
        gen = generator_from_expression("(y1 - 0.5, y2 - 0.5)", 1, 1.0, 0.0)
        out = evaluate_generator(gen, 0.0, (0.7, 0.2), [[0.0], [0.0]])
        assert np.allclose(out, (0.2, -0.3))

    def test_clipped_z(self):
        gen = generator_from_expression("(min(z11, 1), 0)", 1, 0.0, 1.0)
        out = evaluate_generator(gen, 0.0, (0.0, 0.0), [[2.5], [0.0]])
        assert np.allclose(out, (1.0, 0.0))

    def test_z_dependence_detection(self):
        a = generator_from_expression("(0.2*clip(z11,-1,1), 0)", 1, 0.0, 0.2)
        b = generator_from_expression("(y1, y2)", 1, 1.0, 0.0)
        assert a.depends_on_z
        assert not b.depends_on_z

    def test_scalar_generator_rejected(self):
        with pytest.raises(ParseError):
            generator_from_expression("z11", 1, 0.0, 1.0)


class TestScenario:
    def test_load(self, lshape):
        scen = load_scenario(fixture_text("two_arm_zdep.json"))
        assert scen.d_prime == 1
        assert scen.horizon == 1.0
        g = scen.terminal_fn(lshape)
        assert np.allclose(g(np.array([0.4])), (1.9, 0.5))
        assert np.allclose(g(np.array([-0.4])), (0.5, 1.9))

    def test_malformed(self):
        with pytest.raises(ParseError):
            load_scenario("{bad json")
        with pytest.raises(ParseError):
            load_scenario('{"d_prime": 1}')


class TestBmoDiagnostic:
    def test_zero_field(self):
        L = build_lattice(1, 3, 1.0)
        Z = NodeField(
            {(i, nd): np.zeros((2, 1)) for i in range(L.n_steps) for nd in L.states(i)}
        )
        assert bmo_diagnostic(L, Z) == 0.0

    def test_constant_field(self):
        L = build_lattice(1, 4, 2.0)
        c = np.array([[0.7], [-0.4]])
        Z = NodeField(
            {(i, nd): c for i in range(L.n_steps) for nd in L.states(i)}
        )
        expected = float(np.sum(c**2)) * L.horizon
        assert bmo_diagnostic(L, Z) == pytest.approx(expected, abs=1e-12)


class TestSolveBsde:
    def test_z_independent_collapses(self, lshape, two_arm_scenario):
        L = build_lattice(1, 4, 1.0)
        g = two_arm_scenario.terminal_fn(lshape)
        sol = solve_bsde(lshape, L, g, two_arm_scenario.generator)
        exo = solve_state_dependent(lshape, L, g, lambda i, w, y: np.zeros(2))
        assert sol.iterations <= 2
        for key in exo.Y.keys():
            assert np.abs(sol.scheme.Y[key] - exo.Y[key]).max() == 0.0

    def test_zero_generator_convex(self, square):
        L = build_lattice(1, 5, 1.0)
        g = lambda w: np.array([0.5 + 0.3 * math.tanh(w[0]), 0.5])
        sol = solve_bsde(square, L, g, generator_from_expression("(0,0)", 1, 0, 0))
        oracle = conditional_expectation_field(L, g)
        for key in oracle.keys():
            assert np.abs(sol.scheme.Y[key] - oracle[key]).max() <= 1e-10
            if key[0] < L.n_steps:
                assert np.abs(sol.scheme.K_inc[key]).max() <= 1e-12

    def test_zdep_two_inits_agree(self, lshape, zdep_scenario):
        L = build_lattice(1, 4, 1.0)
        g = zdep_scenario.terminal_fn(lshape)
        a = solve_bsde(lshape, L, g, zdep_scenario.generator)
        ones = NodeField(
            {(i, nd): np.ones((2, 1)) for i in range(L.n_steps) for nd in L.states(i)}
        )
        b = solve_bsde(lshape, L, g, zdep_scenario.generator, v0=ones)
        worst = max(
            np.abs(a.scheme.Z[key] - b.scheme.Z[key]).max() for key in a.scheme.Z.keys()
        )
        assert worst <= 1e-8

    def test_identity_holds_with_final_generator(self, lshape, zdep_scenario):
        L = build_lattice(1, 4, 1.0)
        g = zdep_scenario.terminal_fn(lshape)
        sol = solve_bsde(lshape, L, g, zdep_scenario.generator)
        gen = zdep_scenario.generator
        for i in range(L.n_steps):
            for nd in L.states(i):
                key = (i, nd)
                e = np.zeros(2)
                for nd2, p, _ in L.branches(i, nd):
                    e += p * sol.scheme.Y[(i + 1, nd2)]
                f = evaluate_generator(gen, i * L.h, sol.scheme.Y[key], sol.scheme.Z[key])
                resid = sol.scheme.Y[key] - (e + f * L.h - sol.scheme.K_inc[key])
                assert np.abs(resid).max() <= 1e-10

    def test_trace_contracts(self, lshape, zdep_scenario):
        L = build_lattice(1, 4, 1.0)
        g = zdep_scenario.terminal_fn(lshape)
        sol = solve_bsde(lshape, L, g, zdep_scenario.generator)
        assert sol.picard_trace[-1] <= 1e-10
        ratios = [
            b / a for a, b in zip(sol.picard_trace[1:-1], sol.picard_trace[2:])
        ]
        assert all(r < 0.95 for r in ratios)
