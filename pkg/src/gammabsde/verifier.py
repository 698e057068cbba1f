"""Executable checks: submartingale margins, stability, uniqueness, flat-off.

Every check consumes solver output plus a tolerance policy and returns a
:class:`CheckReport`; reports are bit-for-bit reproducible given the same
domain, scenario, resolution and seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bsde import BsdeSolution, Scenario, evaluate_generator, solve_bsde
from .errors import LatticeMismatchError, ParseError
from .frechet import DiscreteMeasure, frechet_mean
from .geometry import Domain, angle_to_cone, boundary_distance, boundary_feature_cones
from .geodesics import geodesic, log_map, psi
from .lattice import Lattice, NodeField
from .scheme import SchemeResult


@dataclass(frozen=True, eq=False)
class TestFunction:
    """Geodesically convex test function: squared distance to a center, or a
    linear functional (only meaningful on convex subdomains)."""

    kind: str  # "psi_o" | "linear"
    domain: Domain
    center: np.ndarray | None = None
    direction: np.ndarray | None = None

    def __call__(self, p):
        if self.kind == "psi_o":
            return psi(self.domain, self.center, p)
        return float(self.direction @ np.asarray(p, float))

    def gradient(self, p):
        if self.kind == "psi_o":
            return -2.0 * log_map(self.domain, p, self.center)
        return np.asarray(self.direction, float)


def psi_center(d: Domain, center) -> TestFunction:
    return TestFunction(kind="psi_o", domain=d, center=np.asarray(center, float))


def linear_function(d: Domain, direction) -> TestFunction:
    return TestFunction(kind="linear", domain=d, direction=np.asarray(direction, float))


def default_centers(d: Domain, n, seed=0) -> np.ndarray:
    """Deterministic grid-ish family of centers for the psi_o test family."""
    from .geometry import sample_points

    rng = np.random.default_rng(seed)
    return sample_points(d, n, rng)


@dataclass(eq=False)
class CheckReport:
    """Uniform result record for a verifier check."""

    name: str
    passed: bool
    margin: float  # worst-case margin; negative means violation before tolerance
    location: object
    tolerances: dict
    details: dict = field(default_factory=dict)

    def as_dict(self):
        def clean(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, (np.floating, np.integer, np.bool_)):
                return v.item()
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            return v

        return {
            "name": self.name,
            "passed": bool(self.passed),
            "margin": clean(self.margin),
            "location": clean(self.location),
            "tolerances": clean(self.tolerances),
            "details": clean(self.details),
        }


def _result_lattice_guard(L: Lattice, result: SchemeResult):
    if result.lattice is not L:
        raise LatticeMismatchError("scheme result was produced on a different lattice")


def submartingale_check(d: Domain, L: Lattice, result: SchemeResult, centers,
                        c_max=1.0) -> CheckReport:
    """Discrete submartingale margins for the squared-distance family.

    For each center o and node, the margin is
    E[psi_o(Y_next) | node] - psi_o(Y_node) + grad psi_o(Y_node) . f_node h,
    which must stay above -c_max * h^(3/2).  The fitted constant
    max(0, -min margin) / h^(3/2) is reported.
    """
    _result_lattice_guard(L, result)
    h = result.h_step
    slices = result.scheme_slices
    tol = c_max * h**1.5
    worst = math.inf
    worst_loc = None
    for o in np.atleast_2d(np.asarray(centers, float)):
        values = {}
        for i in slices:
            for nd in L.states(i):
                values[(i, nd)] = psi(d, o, result.Y[(i, nd)])
        for i, j in zip(slices[:-1], slices[1:]):
            for nd in L.states(i):
                expect = 0.0
                for nd2, p in L.law(i, nd, j):
                    expect += p * values[(j, nd2)]
                margin = expect - values[(i, nd)]
                fvec = result.drift[(i, nd)]
                if fvec[0] != 0.0 or fvec[1] != 0.0:
                    grad = -2.0 * log_map(d, result.Y[(i, nd)], o)
                    margin += float(grad @ fvec) * h
                if margin < worst:
                    worst = margin
                    worst_loc = {"center": o.tolist(), "slice": i, "node": list(nd)}
    fitted_c = max(0.0, -worst) / h**1.5
    return CheckReport(
        name="submartingale",
        passed=worst >= -tol,
        margin=worst,
        location=worst_loc,
        tolerances={"c_max": c_max, "tol": tol, "h": h},
        details={"fitted_c": fitted_c, "n_centers": int(len(np.atleast_2d(centers)))},
    )


def _slice_expectation_psi(d, L, A: NodeField, B: NodeField, i):
    total = 0.0
    for nd in L.states(i):
        a = A[(i, nd)]
        b = B[(i, nd)]
        if a[0] == b[0] and a[1] == b[1]:
            continue
        total += L.weight(i, nd) * psi(d, a, b)
    return total


def _perturbed_terminal(d, L, g, eps, seed):
    rng = np.random.default_rng(seed)
    dirs = {}
    for nd in L.states(L.n_steps):
        a = 2.0 * math.pi * rng.random()
        dirs[nd] = np.array([math.cos(a), math.sin(a)])
    from .geometry import project

    inv_sqrt_h = 1.0 / L.sqrt_h

    def g_eps(w):
        nd = tuple(int(round(float(c) * inv_sqrt_h)) for c in np.atleast_1d(w))
        return project(d, np.asarray(g(w), float) + eps * dirs[nd])

    return g_eps


def stability_check(d: Domain, L: Lattice, scenario: Scenario, scales,
                    ratio_bound=50.0, seed=0, **solve_kw) -> CheckReport:
    """Terminal-perturbation stability of the solved field.

    For each scale eps the terminal map is nudged by eps along a seeded
    per-state direction (then projected back into the domain); the check
    reports sup over slices of E[Psi(Y, Y_eps)] / E[Psi(xi, xi_eps)] and
    passes when every ratio stays below ``ratio_bound``.
    """
    g = scenario.terminal_fn(d)
    base = solve_bsde(d, L, g, scenario.generator, **solve_kw).scheme
    ratios = []
    for eps in scales:
        if eps == 0.0:
            ratios.append(0.0)
            continue
        g_eps = _perturbed_terminal(d, L, g, eps, seed)
        pert = solve_bsde(d, L, g_eps, scenario.generator, **solve_kw).scheme
        term_gap = _slice_expectation_psi(d, L, base.Y, pert.Y, L.n_steps)
        if term_gap == 0.0:
            ratios.append(0.0)
            continue
        sup_gap = max(
            _slice_expectation_psi(d, L, base.Y, pert.Y, i)
            for i in base.scheme_slices
        )
        ratios.append(sup_gap / term_gap)
    worst = max(ratios) if ratios else 0.0
    return CheckReport(
        name="stability",
        passed=worst <= ratio_bound,
        margin=ratio_bound - worst,
        location={"scales": list(scales)},
        tolerances={"ratio_bound": ratio_bound},
        details={"ratios": ratios, "seed": seed},
    )


def zdiff_stability_check(d: Domain, L: Lattice, scenario_a: Scenario,
                          scenario_b: Scenario, c_bound=None, **solve_kw) -> CheckReport:
    """Control of the Z-field gap by terminal and generator gaps.

    lhs = E int |Za - Zb|^2 dt; the controlling quantity combines the
    terminal squared-distance gap and the generator gap evaluated along the
    second solution.  With no ``c_bound`` the fitted constant is reported and
    the check passes unless the controlling quantity vanishes while lhs does
    not.
    """
    ga = scenario_a.terminal_fn(d)
    gb = scenario_b.terminal_fn(d)
    sol_a = solve_bsde(d, L, ga, scenario_a.generator, **solve_kw).scheme
    sol_b = solve_bsde(d, L, gb, scenario_b.generator, **solve_kw).scheme
    lhs = 0.0
    f_gap = 0.0
    h = sol_a.h_step
    for i in sol_a.scheme_slices[:-1]:
        for nd in L.states(i):
            w = L.weight(i, nd)
            dz = sol_a.Z[(i, nd)] - sol_b.Z[(i, nd)]
            lhs += w * float(np.sum(np.square(dz))) * h
            yb = sol_b.Y[(i, nd)]
            zb = sol_b.Z[(i, nd)]
            df = evaluate_generator(scenario_a.generator, i * L.h, yb, zb) - \
                evaluate_generator(scenario_b.generator, i * L.h, yb, zb)
            f_gap += w * float(df @ df) * h
    t_gap = _slice_expectation_psi(d, L, sol_a.Y, sol_b.Y, L.n_steps)
    control = t_gap + f_gap
    control_full = control + math.sqrt(control)
    if control_full <= 1e-18:
        passed = lhs <= 1e-15
        fitted = 0.0
    else:
        fitted = lhs / control_full
        passed = True if c_bound is None else fitted <= c_bound
    return CheckReport(
        name="zdiff_stability",
        passed=passed,
        margin=-lhs if control_full <= 1e-18 else (c_bound - fitted if c_bound else fitted),
        location=None,
        tolerances={"c_bound": c_bound},
        details={"lhs": lhs, "terminal_gap": t_gap, "generator_gap": f_gap,
                 "fitted_constant": fitted},
    )


def uniqueness_probe(d: Domain, L: Lattice, scenario: Scenario, n_inits=3,
                     psi_tol=1e-8, z_tol=1e-6, **solve_kw) -> CheckReport:
    """Solve from several Picard initializations and compare the solutions."""
    if n_inits < 2:
        raise ValueError("n_inits must be >= 2")
    g = scenario.terminal_fn(d)
    seeds = [0.0, 1.0, -1.0, 0.5, -0.5, 2.0]
    solutions = []
    for c in seeds[:n_inits]:
        v0 = NodeField(
            {
                (i, nd): np.full((2, L.d_prime), c)
                for i in range(L.n_steps)
                for nd in L.states(i)
            }
        )
        solutions.append(solve_bsde(d, L, g, scenario.generator, v0=v0, **solve_kw))
    worst_psi = 0.0
    worst_z = 0.0
    for a in range(len(solutions)):
        for b in range(a + 1, len(solutions)):
            Ya, Yb = solutions[a].scheme.Y, solutions[b].scheme.Y
            Za, Zb = solutions[a].scheme.Z, solutions[b].scheme.Z
            for key in Ya.keys():
                pa, pb = Ya[key], Yb[key]
                if not (pa[0] == pb[0] and pa[1] == pb[1]):
                    worst_psi = max(worst_psi, psi(d, pa, pb))
            for key in Za.keys():
                worst_z = max(worst_z, float(np.abs(Za[key] - Zb[key]).max()))
    return CheckReport(
        name="uniqueness",
        passed=worst_psi <= psi_tol and worst_z <= z_tol,
        margin=min(psi_tol - worst_psi, z_tol - worst_z),
        location=None,
        tolerances={"psi_tol": psi_tol, "z_tol": z_tol},
        details={
            "worst_psi": worst_psi,
            "worst_z": worst_z,
            "n_inits": n_inits,
            "picard_iterations": [s.iterations for s in solutions],
        },
    )


def oracle_equivalence_check(d: Domain, n_pairs=200, seed=0, rel_tol=1e-9) -> CheckReport:
    """Funnel vs visibility-graph agreement on random point pairs."""
    from .geodesics import geodesic_oracle
    from .geometry import sample_points

    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_loc = None
    wp_mismatch = 0
    for _ in range(n_pairs):
        x, y = sample_points(d, 2, rng)
        a = geodesic(d, x, y)
        b = geodesic_oracle(d, x, y)
        rel = abs(a.length - b.length) / (1.0 + a.length)
        if rel > worst:
            worst = rel
            worst_loc = {"x": x.tolist(), "y": y.tolist()}
        if a.waypoints.shape != b.waypoints.shape or (
            np.abs(a.waypoints - b.waypoints).max() > 1e-9
        ):
            wp_mismatch += 1
    return CheckReport(
        name="oracle_equivalence",
        passed=worst <= rel_tol and wp_mismatch == 0,
        margin=rel_tol - worst,
        location=worst_loc,
        tolerances={"rel_tol": rel_tol},
        details={"n_pairs": n_pairs, "seed": seed, "worst_rel": worst,
                 "waypoint_mismatches": wp_mismatch},
    )


def projection_check(d: Domain, n_samples=200, seed=0) -> CheckReport:
    """Idempotence and in-band Lipschitz bound of the nearest-point map.

    The Lipschitz comparison is restricted to pairs whose nearest points land
    on the same edge or meet at a convex vertex.  Across a notch bisector the
    nearest-point map of a polygon is discontinuous at every scale (the
    exterior sphere radius vanishes at a reflex vertex), so those pairs carry
    no Lipschitz statement; they are counted and reported instead.
    """
    from .geometry import EXTERIOR, contains, nearest_boundary_point, project

    rng = np.random.default_rng(seed)
    lo, hi = d.bounding_box()
    pad = 0.5 * d.projection_band
    worst_idem = 0.0
    worst_lip = 0.0
    skipped = 0
    got = 0
    attempts = 0
    n = d.n_vertices
    while got < n_samples and attempts < 1000 * n_samples:
        attempts += 1
        p = lo - pad + (hi - lo + 2 * pad) * rng.random(2)
        q = p + 0.5 * pad * (2.0 * rng.random(2) - 1.0)
        pp = project(d, p)
        worst_idem = max(worst_idem, float(np.hypot(*(project(d, pp) - pp))))
        in_band = (
            contains(d, p) == EXTERIOR
            and contains(d, q) == EXTERIOR
            and boundary_distance(d, p) < 0.5 * d.projection_band
            and boundary_distance(d, q) < 0.5 * d.projection_band
        )
        if not in_band:
            continue
        got += 1
        qq = project(d, q)
        _, ep = nearest_boundary_point(d, pp)
        _, eq = nearest_boundary_point(d, qq)
        if ep != eq:
            lo_e, hi_e = min(ep, eq), max(ep, eq)
            adjacent = hi_e - lo_e == 1 or (lo_e == 0 and hi_e == n - 1)
            shared = hi_e if hi_e - lo_e == 1 else 0
            if not adjacent or d.reflex_flags[shared]:
                skipped += 1
                continue
        gap = float(np.hypot(*(p - q)))
        if gap > d.tau:
            worst_lip = max(worst_lip, float(np.hypot(*(pp - qq))) / gap)
    return CheckReport(
        name="projection",
        passed=worst_idem <= d.tau and worst_lip <= 2.0,
        margin=2.0 - worst_lip,
        location=None,
        tolerances={"idempotence_tol": d.tau, "lipschitz_bound": 2.0},
        details={"worst_idempotence_gap": worst_idem, "worst_lipschitz": worst_lip,
                 "n_samples": n_samples, "seed": seed,
                 "skipped_cross_reflex_pairs": skipped},
    )


def jensen_sweep(d: Domain, n_checks=100, seed=0, tol=1e-10) -> CheckReport:
    """Jensen inequality for random measures against random psi_o centers."""
    from .frechet import jensen_check
    from .geometry import sample_points

    rng = np.random.default_rng(seed)
    worst = math.inf
    worst_loc = None
    for idx in range(n_checks):
        m = int(rng.integers(1, 5))
        pts = sample_points(d, m, rng)
        w = rng.random(m) + 0.1
        w = w / w.sum()
        w[-1] = 1.0 - float(w[:-1].sum())
        measure = DiscreteMeasure(pts, w)
        center = sample_points(d, 1, rng)[0]
        rep = jensen_check(d, measure, psi_center(d, center), tol=tol)
        if rep.margin < worst:
            worst = rep.margin
            worst_loc = {"check": idx, "center": center.tolist()}
    return CheckReport(
        name="jensen",
        passed=worst >= -tol,
        margin=worst,
        location=worst_loc,
        tolerances={"tol": tol},
        details={"n_checks": n_checks, "seed": seed},
    )


def mean_contraction_sweep(d: Domain, n_checks=100, seed=0, tol=1e-9) -> CheckReport:
    """Psi(mean, mean') <= coupled expectation of Psi over paired atoms."""
    from .geometry import sample_points

    rng = np.random.default_rng(seed)
    worst = math.inf
    worst_loc = None
    for idx in range(n_checks):
        m = int(rng.integers(1, 5))
        pts_a = sample_points(d, m, rng)
        pts_b = sample_points(d, m, rng)
        w = rng.random(m) + 0.1
        w = w / w.sum()
        w[-1] = 1.0 - float(w[:-1].sum())
        ma = frechet_mean(d, DiscreteMeasure(pts_a, w)).mean
        mb = frechet_mean(d, DiscreteMeasure(pts_b, w)).mean
        lhs = psi(d, ma, mb)
        rhs = sum(wi * psi(d, a, b) for wi, a, b in zip(w, pts_a, pts_b))
        if rhs - lhs < worst:
            worst = rhs - lhs
            worst_loc = {"check": idx}
    return CheckReport(
        name="mean_contraction",
        passed=worst >= -tol,
        margin=worst,
        location=worst_loc,
        tolerances={"tol": tol},
        details={"n_checks": n_checks, "seed": seed},
    )


def picard_contraction_check(solution: BsdeSolution, ratio_bound=0.95) -> CheckReport:
    """Consecutive Picard gap ratios must fall below the bound after iterate 2."""
    trace = solution.picard_trace
    ratios = [b / a for a, b in zip(trace[:-1], trace[1:]) if a > 0]
    late = ratios[1:] if len(ratios) > 1 else ratios
    worst = max(late) if late else 0.0
    return CheckReport(
        name="picard_contraction",
        passed=worst < ratio_bound,
        margin=ratio_bound - worst,
        location=None,
        tolerances={"ratio_bound": ratio_bound},
        details={"trace": list(trace), "ratios": ratios,
                 "iterations": solution.iterations},
    )


def flat_off_check(result: SchemeResult, k_tol=1e-10, angle_tol=1e-2,
                   band_slack=1e-9) -> CheckReport:
    """Reflection increments charge only near the boundary, along its normals.

    A node's band is the largest of its successor spread around the
    pre-transport mean and the drift displacement |f| h.  Every increment
    with norm above ``k_tol`` must sit within the band of the boundary and
    point, within ``angle_tol`` radians, into the reflection cone of some
    boundary feature (edge or vertex) inside that band.
    """
    d = result.domain
    L = result.lattice
    charged = 0
    worst_angle = 0.0
    worst_dist = 0.0
    worst_loc = None
    for idx, i in enumerate(result.scheme_slices[:-1]):
        j = result.scheme_slices[idx + 1]
        for nd in L.states(i):
            key = (i, nd)
            k = result.K_inc[key]
            norm = math.hypot(k[0], k[1])
            if norm <= k_tol:
                continue
            charged += 1
            y = result.Y[key]
            y_t = result.Y_tilde[key]
            spread = 0.0
            for nd2, _p in L.law(i, nd, j):
                nxt = result.Y[(j, nd2)]
                spread = max(spread, math.hypot(nxt[0] - y_t[0], nxt[1] - y_t[1]))
            fvec = result.drift[key]
            band = max(spread, math.hypot(fvec[0], fvec[1]) * result.h_step) + band_slack
            dist = boundary_distance(d, y)
            rel = dist / band if band > 0 else math.inf
            if rel > worst_dist:
                worst_dist = rel
                worst_loc = {"slice": i, "node": list(nd), "kind": "distance"}
            cones = boundary_feature_cones(d, y, band + dist)
            ang = min(angle_to_cone(gens, k) for gens in cones)
            if ang > worst_angle:
                worst_angle = ang
                worst_loc = {"slice": i, "node": list(nd), "kind": "angle"}
    passed = worst_dist <= 1.0 and worst_angle <= angle_tol
    return CheckReport(
        name="flat_off",
        passed=passed,
        margin=min(1.0 - worst_dist, angle_tol - worst_angle),
        location=worst_loc,
        tolerances={"k_tol": k_tol, "angle_tol": angle_tol},
        details={"n_charged": charged, "worst_angle": worst_angle,
                 "worst_distance_ratio": worst_dist},
    )


# -- CLI suites --------------------------------------------------------------


def suite_geometry(d: Domain, seed=0, n_pairs=200, n_audit=500) -> list:
    """Geodesic engine checks: oracle agreement, comparison geometry, projection."""
    from .geodesics import cat0_audit

    audit = cat0_audit(d, n_audit, seed=seed)
    audit_report = CheckReport(
        name="cat0_audit",
        passed=audit.passed,
        margin=-max(audit.max_thin_violation, audit.max_convexity_violation),
        location=None,
        tolerances={"tol_thin": audit.tol_thin, "tol_convexity": audit.tol_convexity},
        details=audit.as_dict(),
    )
    return [
        oracle_equivalence_check(d, n_pairs=n_pairs, seed=seed),
        audit_report,
        projection_check(d, seed=seed),
    ]


def suite_frechet(d: Domain, seed=0, n_checks=100) -> list:
    return [
        jensen_sweep(d, n_checks=n_checks, seed=seed),
        mean_contraction_sweep(d, n_checks=n_checks, seed=seed),
    ]


def suite_scheme(d: Domain, scenario: Scenario, k, seed=0, n_centers=16) -> list:
    from .lattice import build_lattice
    from .scheme import refine_and_compare

    L = build_lattice(scenario.d_prime, k, scenario.horizon)
    g = scenario.terminal_fn(d)
    solution = solve_bsde(d, L, g, scenario.generator)
    centers = default_centers(d, n_centers, seed=seed)
    reports = [
        submartingale_check(d, L, solution.scheme, centers),
        flat_off_check(solution.scheme),
    ]
    gen = scenario.generator
    exogenous = not gen.depends_on_z and gen.c_fy == 0.0
    if exogenous and scenario.d_prime == 1:
        h = scenario.horizon / 2**k

        def F(i, w):
            return evaluate_generator(gen, i * h, np.zeros(2), np.zeros((2, 1)))

        ks = [kk for kk in range(max(2, k - 2), k + 1)]
        table = refine_and_compare(d, g, F, ks, d_prime=1,
                                   horizon=scenario.horizon)
        reports.append(
            CheckReport(
                name="refinement",
                passed=table.strictly_decreasing,
                margin=0.0,
                location=None,
                tolerances={"noise_floor": table.noise_floor},
                details=table.as_dict(),
            )
        )
    return reports


def suite_bsde(d: Domain, scenario: Scenario, k, seed=0,
               stability_scales=(0.2, 0.1, 0.05, 0.025)) -> list:
    from .lattice import build_lattice

    L = build_lattice(scenario.d_prime, k, scenario.horizon)
    g = scenario.terminal_fn(d)
    solution = solve_bsde(d, L, g, scenario.generator)
    reports = [
        picard_contraction_check(solution),
        flat_off_check(solution.scheme),
        uniqueness_probe(d, L, scenario, n_inits=3),
        stability_check(d, L, scenario, stability_scales, seed=seed),
    ]
    reports.append(
        CheckReport(
            name="bmo_diagnostic",
            passed=math.isfinite(solution.bmo),
            margin=0.0,
            location=None,
            tolerances={},
            details={"bmo": solution.bmo,
                     "f0_bound": scenario.generator.f0_bound},
        )
    )
    return reports


def run_suites(d: Domain, scenario, k, which="all", seed=0) -> list:
    """Dispatch the named verification suites; returns all CheckReports."""
    reports = []
    if which in ("geometry", "all"):
        reports.extend(suite_geometry(d, seed=seed))
    if which in ("frechet", "all"):
        reports.extend(suite_frechet(d, seed=seed))
    if which in ("scheme", "all"):
        if scenario is None:
            raise ParseError("the scheme suite needs a --scenario file")
        reports.extend(suite_scheme(d, scenario, k, seed=seed))
    if which in ("bsde", "all"):
        if scenario is None:
            raise ParseError("the bsde suite needs a --scenario file")
        reports.extend(suite_bsde(d, scenario, k, seed=seed))
    return reports
