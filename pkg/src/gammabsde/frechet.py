"""Fréchet means (geodesic barycenters) of finite measures on the domain.

The objective Q(x) = sum_i w_i Psi(x, y_i) is 2-strongly convex along
geodesics, so the minimizer is unique.  Its first-order condition is a
vanishing log-map average; on the boundary the gradient may instead point
into the inward normal cone, which the certificate accounts for by
projecting the gradient before taking its norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, ExteriorPointError
from .geometry import (
    EXTERIOR,
    Domain,
    cone_project,
    contains,
    project,
    reflection_cone,
)
from .geodesics import geodesic, geodesic_point, log_map, path_log_maps


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Finite weighted point set in the closed domain."""

    points: np.ndarray  # (m, 2)
    weights: np.ndarray  # (m,)

    def __post_init__(self):
        object.__setattr__(self, "points", np.atleast_2d(np.asarray(self.points, float)))
        object.__setattr__(self, "weights", np.asarray(self.weights, float))
        if len(self.points) != len(self.weights) or len(self.points) == 0:
            raise ValueError("points and weights must be non-empty and aligned")
        if np.any(self.weights <= 0.0):
            raise ValueError("weights must be positive")
        if abs(float(self.weights.sum()) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1 within 1e-12")

    def validate_support(self, d: Domain):
        for p in self.points:
            if contains(d, p) == EXTERIOR:
                raise ExteriorPointError(f"atom {p.tolist()} lies outside the domain")
        return self

    @staticmethod
    def single(point):
        return DiscreteMeasure(np.atleast_2d(np.asarray(point, float)), np.array([1.0]))


@dataclass(frozen=True, eq=False)
class MeanCertificate:
    """Computed mean with its first-order optimality certificate."""

    mean: np.ndarray
    gradient_norm: float  # norm of the cone-projected gradient at the mean
    iterations: int
    objective: float

    def as_dict(self):
        return {
            "mean": self.mean.tolist(),
            "gradient_norm": self.gradient_norm,
            "iterations": self.iterations,
            "objective": self.objective,
        }


def frechet_gradient(d: Domain, x, measure: DiscreteMeasure) -> np.ndarray:
    """Gradient of Q at x: minus twice the weighted log-map average."""
    if contains(d, x) == EXTERIOR:
        raise ExteriorPointError(f"gradient queried at exterior point {np.asarray(x).tolist()}")
    g = np.zeros(2)
    for w, y in zip(measure.weights, measure.points):
        g -= 2.0 * w * log_map(d, x, y)
    return g


def projected_gradient_norm(d: Domain, x, grad) -> float:
    """Norm of the gradient with its inward normal-cone component removed.

    At interior points this is just |grad|.  On the boundary, stationarity
    allows grad to lie in minus the normal cone; at reflex vertices the cone
    spanned by the incident edge normals plays that role (see
    :func:`gammabsde.geometry.reflection_cone`).
    """
    cone = reflection_cone(d, x)
    if len(cone.generators) == 0:
        return float(np.hypot(grad[0], grad[1]))
    inward = cone_project(-cone.generators, grad)
    res = np.asarray(grad, float) - inward
    return float(np.hypot(res[0], res[1]))


def _objective(d, x, measure):
    q = 0.0
    for w, y in zip(measure.weights, measure.points):
        q += w * geodesic(d, x, y).length ** 2
    return q


def _collinear_mean(d, measure):
    """Closed-form mean when all atoms sit on one geodesic, else None.

    A geodesic with its arc length is isometric to a real interval, where
    the Fréchet mean is the plain weighted average of arc positions.
    """
    pts = measure.points
    m = len(pts)
    if m == 1:
        return pts[0].copy(), 0.0
    # Anchor the candidate geodesic at the two Euclidean-farthest atoms.
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    i, j = np.unravel_index(int(np.argmax(d2)), d2.shape)
    if d2[i, j] <= (d.tau) ** 2:
        return pts[0].copy(), 0.0  # all atoms coincide
    path = geodesic(d, pts[i], pts[j])
    arcs = np.empty(m)
    tol = 1e-11 * (1.0 + d.diameter)
    for a in range(m):
        arc = _arc_on_path(path, pts[a], tol)
        if arc is None:
            return None
        arcs[a] = arc
    s = float(measure.weights @ arcs)
    mean = geodesic_point(path, s / path.length if path.length > 0 else 0.0)
    # Exact gradient from the path tangents on either side of the mean.
    grad = np.zeros(2)
    for w, arc in zip(measure.weights, arcs):
        gap = arc - s
        if abs(gap) <= 1e-15 * (1.0 + path.length):
            continue
        # One-sided tangents matter when the mean sits exactly at a bend.
        t = path.direction_at_arc(s) if gap > 0 else path.left_direction_at_arc(s)
        grad -= 2.0 * w * gap * t
    return mean, _residual_from_grad(d, mean, grad)


def _arc_on_path(path, p, tol):
    """Arc-length position of p on the path polyline, or None if off it."""
    best = None
    for k in range(len(path.leg_lengths)):
        a = path.waypoints[k]
        seg = path.waypoints[k + 1] - a
        ll = path.leg_lengths[k]
        t = float(np.clip((p - a) @ seg / (ll * ll), 0.0, 1.0))
        foot = a + t * seg
        dist = math.hypot(p[0] - foot[0], p[1] - foot[1])
        if dist <= tol:
            arc = path.cum_arcs[k] + t * ll
            if best is None or dist < best[1]:
                best = (arc, dist)
    return None if best is None else float(best[0])


def _residual_from_grad(d, x, grad):
    return projected_gradient_norm(d, x, grad)


def _hessian_psi(x, path):
    """Hessian of Psi(., y) at x for a fixed path from x to y."""
    if path.length == 0.0:
        return 2.0 * np.eye(2)
    u = path.start_direction
    uu = np.outer(u, u)
    if len(path.waypoints) == 2:
        return 2.0 * np.eye(2)
    ell1 = path.leg_lengths[0]
    return 2.0 * uu + 2.0 * (path.length / ell1) * (np.eye(2) - uu)


def frechet_mean(d: Domain, measure: DiscreteMeasure, tol=None) -> MeanCertificate:
    """Minimize Q over the closed domain with a first-order certificate.

    Strategy: collapse to the closed form when all atoms share one geodesic
    (the generic case on the lattice), otherwise projected gradient descent
    with backtracking from the projected Euclidean average, polished by
    guarded Newton steps once the bend structure stabilizes.

    Raises:
        ConvergenceError: iteration cap reached; carries the best iterate.
    """
    if tol is None:
        tol = 1e-8 * (1.0 + d.diameter)
    if len(measure.points) == 1:
        return MeanCertificate(measure.points[0].copy(), 0.0, 0, 0.0)
    closed = _collinear_mean(d, measure)
    if closed is not None:
        mean, res = closed
        return MeanCertificate(np.asarray(mean, float), res, 0, _objective(d, mean, measure))

    x = project(d, measure.weights @ measure.points)
    best = None
    step0 = 0.25
    max_iter = 100_000
    for it in range(max_iter):
        paths = [geodesic(d, x, y) for y in measure.points]
        grad = np.zeros(2)
        for w, path in zip(measure.weights, paths):
            lg, _ = path_log_maps(path)
            grad -= 2.0 * w * lg
        res = _residual_from_grad(d, x, grad)
        if best is None or res < best.gradient_norm:
            q = sum(w * p.length**2 for w, p in zip(measure.weights, paths))
            best = MeanCertificate(x.copy(), res, it, q)
        if res <= tol:
            return best
        moved = False
        # Guarded Newton polish using the current bend structure.
        hess = np.zeros((2, 2))
        for w, path in zip(measure.weights, paths):
            hess += w * _hessian_psi(x, path)
        det = np.linalg.det(hess)
        if det > 1e-12:
            cand = project(d, x - np.linalg.solve(hess, grad))
            g2 = frechet_gradient(d, cand, measure)
            if _residual_from_grad(d, cand, g2) < res:
                x = cand
                moved = True
        if not moved:
            s = step0
            q_here = sum(w * p.length**2 for w, p in zip(measure.weights, paths))
            while s > 1e-18:
                cand = project(d, x - s * grad)
                if _objective(d, cand, measure) < q_here - 1e-18:
                    x = cand
                    moved = True
                    break
                s *= 0.5
        if not moved:
            break  # no descent direction left at float resolution
    if best.gradient_norm <= tol:
        return best
    raise ConvergenceError(
        f"Fréchet mean did not certify below {tol} (best {best.gradient_norm})",
        best=best,
    )


def sturm_mean(d: Domain, measure: DiscreteMeasure, n_iter=20_000, seed=0) -> np.ndarray:
    """Inductive-mean cross-check: walk toward random atoms with step 1/(k+1)."""
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(measure.points), size=n_iter, p=measure.weights)
    x = measure.points[idx[0]].astype(float)
    for k in range(1, n_iter):
        y = measure.points[idx[k]]
        path = geodesic(d, x, y)
        x = geodesic_point(path, 1.0 / (k + 1.0))
    return x


@dataclass(frozen=True, eq=False)
class JensenReport:
    """Outcome of one Jensen-inequality check psi(mean) <= E[psi]."""

    lhs: float
    rhs: float
    margin: float  # rhs - lhs
    passed: bool
    tol: float

    def as_dict(self):
        return {"lhs": self.lhs, "rhs": self.rhs, "margin": self.margin,
                "passed": self.passed, "tol": self.tol}


def jensen_check(d: Domain, measure: DiscreteMeasure, test_function, tol=1e-10,
                 mean_tol=None) -> JensenReport:
    """Check psi(frechet_mean(measure)) <= sum_i w_i psi(y_i) + tol.

    ``test_function`` is any callable on domain points drawn from the
    geodesically convex family (see the verifier's test functions).
    """
    cert = frechet_mean(d, measure, tol=mean_tol)
    lhs = float(test_function(cert.mean))
    rhs = float(
        sum(w * test_function(y) for w, y in zip(measure.weights, measure.points))
    )
    margin = rhs - lhs
    return JensenReport(lhs=lhs, rhs=rhs, margin=margin, passed=margin >= -tol, tol=tol)
