"""Independent oracles used by the tests: brute-force implementations that
share as little code as possible with the paths they verify."""

import numpy as np

from gammabsde.geometry import EXTERIOR, contains
from gammabsde.geodesics import psi


def brute_force_project(domain, p):
    """Nearest boundary point by direct minimization over every edge."""
    p = np.asarray(p, float)
    best = None
    best_d = np.inf
    verts = domain.vertices
    n = len(verts)
    for i in range(n):
        a = verts[i]
        b = verts[(i + 1) % n]
        seg = b - a
        t = float(np.clip((p - a) @ seg / (seg @ seg), 0.0, 1.0))
        foot = a + t * seg
        dist = float(np.hypot(*(p - foot)))
        if dist < best_d - 1e-15:
            best_d = dist
            best = foot
    return best


def objective(domain, x, measure):
    return sum(
        w * psi(domain, x, y) for w, y in zip(measure.weights, measure.points)
    )


def grid_search_mean(domain, measure, coarse=0.02, fine=1e-3, polish_tol=1e-9):
    """Grid minimizer of the barycenter objective with local polish.

    Scans a coarse grid over the bounding box, refines with a fine grid in a
    window around the best cell, then polishes by shrinking coordinate steps.
    Entirely independent of the certified gradient solver.
    """
    lo, hi = domain.bounding_box()
    best, best_q = None, np.inf
    for x in np.arange(lo[0], hi[0] + coarse, coarse):
        for y in np.arange(lo[1], hi[1] + coarse, coarse):
            p = np.array([x, y])
            if contains(domain, p) == EXTERIOR:
                continue
            q = objective(domain, p, measure)
            if q < best_q:
                best_q, best = q, p
    window = 2.5 * coarse
    for x in np.arange(best[0] - window, best[0] + window, fine):
        for y in np.arange(best[1] - window, best[1] + window, fine):
            p = np.array([x, y])
            if contains(domain, p) == EXTERIOR:
                continue
            q = objective(domain, p, measure)
            if q < best_q:
                best_q, best = q, p
    # Shrinking-step coordinate polish.
    step = fine
    p = best.copy()
    q = best_q
    while step > polish_tol:
        improved = False
        for dx, dy in ((step, 0), (-step, 0), (0, step), (0, -step)):
            cand = p + (dx, dy)
            if contains(domain, cand) == EXTERIOR:
                continue
            cq = objective(domain, cand, measure)
            if cq < q:
                p, q = cand, cq
                improved = True
                break
        if not improved:
            step *= 0.5
    return p, q


def conditional_expectation_field(lattice, g):
    """Plain tower-property sweep of a terminal map over the lattice."""
    from gammabsde.lattice import NodeField, node_expectation

    field = NodeField()
    n = lattice.n_steps
    for nd in lattice.states(n):
        field[(n, nd)] = np.asarray(g(lattice.state_value(nd)), float)
    for i in range(n - 1, -1, -1):
        for nd in lattice.states(i):
            field[(i, nd)] = node_expectation(lattice, i, nd, field)
    return field


def finite_difference_gradient(f, x, eps):
    """Central finite differences of a scalar function of a 2-vector."""
    x = np.asarray(x, float)
    g = np.zeros(2)
    for j in range(2):
        e = np.zeros(2)
        e[j] = eps
        g[j] = (f(x + e) - f(x - e)) / (2.0 * eps)
    return g
