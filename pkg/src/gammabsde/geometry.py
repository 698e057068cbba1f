"""Closed polygonal domains: membership, nearest-point projection, normal cones.

The domain is a simple counterclockwise polygon.  All queries are pure and
read-only; a :class:`Domain` is immutable after construction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ExteriorPointError, GeometryError, ParseError

INTERIOR = "interior"
BOUNDARY = "boundary"
EXTERIOR = "exterior"

# Membership tolerance as a fraction of the domain diameter.
REL_BOUNDARY_TOL = 1e-12


def _cross(ox, oy, ax, ay, bx, by):
    """Cross product of (a - o) x (b - o)."""
    return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)


@dataclass(frozen=True, eq=False)
class NormalCone:
    """Outward normal cone at a point of the closed domain.

    ``generators`` holds 0, 1 or 2 outward unit vectors.  Interior points and
    reflex vertices carry no generators (the polar of the tangent cone is
    {0} there); edge points carry the single outward edge normal; convex
    vertices carry the two adjacent edge normals.
    """

    generators: np.ndarray  # (k, 2) with k in {0, 1, 2}
    classification: str  # interior | edge | convex-vertex | reflex-vertex

    def contains_direction(self, v, tol=1e-12):
        """True if unit direction v lies in the cone spanned by the generators."""
        return angle_to_cone(self.generators, v) <= tol


@dataclass(frozen=True, eq=False)
class Domain:
    """Simple CCW polygon with derived triangulation and projection band."""

    name: str
    vertices: np.ndarray  # (n, 2)
    triangulation: tuple  # tuple of (i, j, k) index triples
    reflex_flags: np.ndarray  # (n,) bool
    projection_band: float
    diameter: float
    tau: float  # boundary tolerance
    # Precomputed per-edge data (edge i runs vertices[i] -> vertices[i+1]).
    _edge_starts: np.ndarray = field(repr=False, default=None)
    _edge_vecs: np.ndarray = field(repr=False, default=None)
    _edge_len2: np.ndarray = field(repr=False, default=None)
    _edge_normals: np.ndarray = field(repr=False, default=None)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def is_convex(self):
        return not bool(self.reflex_flags.any())

    def bounding_box(self):
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return lo, hi

    def incident_edge_normals(self, vertex_index):
        """Outward normals of the two edges meeting at a vertex (prev, next)."""
        n = self.n_vertices
        return np.array(
            [self._edge_normals[(vertex_index - 1) % n], self._edge_normals[vertex_index]]
        )


def _signed_area(verts):
    x = verts[:, 0]
    y = verts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _segments_properly_intersect(p1, p2, q1, q2, eps):
    """True if open segments p1p2 and q1q2 cross or overlap."""
    d1 = _cross(q1[0], q1[1], q2[0], q2[1], p1[0], p1[1])
    d2 = _cross(q1[0], q1[1], q2[0], q2[1], p2[0], p2[1])
    d3 = _cross(p1[0], p1[1], p2[0], p2[1], q1[0], q1[1])
    d4 = _cross(p1[0], p1[1], p2[0], p2[1], q2[0], q2[1])
    if ((d1 > eps and d2 < -eps) or (d1 < -eps and d2 > eps)) and (
        (d3 > eps and d4 < -eps) or (d3 < -eps and d4 > eps)
    ):
        return True
    # Collinear overlap check: project onto the longer axis.
    if abs(d1) <= eps and abs(d2) <= eps and abs(d3) <= eps and abs(d4) <= eps:
        axis = 0 if abs(p2[0] - p1[0]) >= abs(p2[1] - p1[1]) else 1
        lo1, hi1 = sorted((p1[axis], p2[axis]))
        lo2, hi2 = sorted((q1[axis], q2[axis]))
        return min(hi1, hi2) - max(lo1, lo2) > eps
    return False


def _point_in_triangle(px, py, a, b, c, eps):
    d1 = _cross(a[0], a[1], b[0], b[1], px, py)
    d2 = _cross(b[0], b[1], c[0], c[1], px, py)
    d3 = _cross(c[0], c[1], a[0], a[1], px, py)
    return d1 >= -eps and d2 >= -eps and d3 >= -eps


def _ear_clip(verts, eps):
    """Triangulate a simple CCW polygon by ear clipping; returns index triples."""
    n = len(verts)
    indices = list(range(n))
    triangles = []
    guard = 0
    while len(indices) > 3:
        guard += 1
        if guard > 2 * n * n:
            raise GeometryError("ear clipping failed to converge; polygon may be degenerate")
        clipped = False
        m = len(indices)
        for k in range(m):
            i_prev, i_cur, i_next = indices[k - 1], indices[k], indices[(k + 1) % m]
            a, b, c = verts[i_prev], verts[i_cur], verts[i_next]
            area2 = _cross(a[0], a[1], b[0], b[1], c[0], c[1])
            if area2 <= eps:
                continue  # reflex or degenerate corner, not an ear
            ear = True
            for j in indices:
                if j in (i_prev, i_cur, i_next):
                    continue
                p = verts[j]
                # Inclusive test: a vertex on the ear boundary blocks it too,
                # else the new diagonal would pass through that vertex.
                if _point_in_triangle(p[0], p[1], a, b, c, eps):
                    ear = False
                    break
            if ear:
                triangles.append((i_prev, i_cur, i_next))
                del indices[k]
                clipped = True
                break
        if not clipped:
            raise GeometryError("no ear found; polygon is not simple or is degenerate")
    triangles.append(tuple(indices))
    return triangles


def _build(name, verts):
    verts = np.asarray(verts, dtype=float)
    if verts.ndim != 2 or verts.shape[1] != 2 or len(verts) < 3:
        raise GeometryError("a domain needs at least 3 planar vertices")
    if not np.all(np.isfinite(verts)):
        raise GeometryError("vertex coordinates must be finite")

    n = len(verts)
    diameter = 0.0
    for i in range(n):
        d = np.hypot(*(verts - verts[i]).T).max()
        diameter = max(diameter, float(d))
    if diameter <= 0.0:
        raise GeometryError("all vertices coincide")
    eps = REL_BOUNDARY_TOL * diameter

    nxt = np.roll(verts, -1, axis=0)
    edge_vecs = nxt - verts
    edge_len = np.hypot(edge_vecs[:, 0], edge_vecs[:, 1])
    if np.any(edge_len <= eps):
        raise GeometryError("consecutive vertices coincide")

    for i in range(n):
        a, b, c = verts[i - 1], verts[i], verts[(i + 1) % n]
        if abs(_cross(a[0], a[1], b[0], b[1], c[0], c[1])) <= eps * max(edge_len[i - 1], edge_len[i]):
            raise GeometryError(f"three consecutive vertices are collinear at index {i}")

    if _signed_area(verts) <= 0.0:
        raise GeometryError("vertex loop must be counterclockwise")

    # Simplicity: no two non-adjacent edges may intersect.
    for i in range(n):
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            if _segments_properly_intersect(verts[i], nxt[i], verts[j], nxt[j], eps):
                raise GeometryError(f"edges {i} and {j} intersect; loop is not simple")

    reflex = np.zeros(n, dtype=bool)
    for i in range(n):
        a, b, c = verts[i - 1], verts[i], verts[(i + 1) % n]
        reflex[i] = _cross(a[0], a[1], b[0], b[1], c[0], c[1]) < 0.0

    triangles = _ear_clip(verts, eps)
    tri_area = sum(
        0.5 * abs(_cross(*verts[t[0]], *verts[t[1]], *verts[t[2]])) for t in triangles
    )
    if abs(tri_area - _signed_area(verts)) > 1e-9 * max(1.0, tri_area):
        raise GeometryError("triangulation does not cover the polygon")

    # Outward normals (interior lies left of each CCW edge).
    normals = np.column_stack((edge_vecs[:, 1], -edge_vecs[:, 0])) / edge_len[:, None]

    band = _projection_band(verts, nxt, reflex, diameter)

    return Domain(
        name=name,
        vertices=verts,
        triangulation=tuple(triangles),
        reflex_flags=reflex,
        projection_band=band,
        diameter=diameter,
        tau=eps,
        _edge_starts=verts,
        _edge_vecs=edge_vecs,
        _edge_len2=edge_len**2,
        _edge_normals=normals,
    )


def _projection_band(verts, nxt, reflex, diameter):
    """Half the minimum clearance from any reflex vertex to a non-adjacent edge."""
    n = len(verts)
    if not np.any(reflex):
        return diameter
    best = math.inf
    for i in np.flatnonzero(reflex):
        p = verts[i]
        for j in range(n):
            if j == i or (j + 1) % n == i:
                continue  # edges incident to vertex i
            d = _point_segment_distance(p[0], p[1], verts[j], nxt[j])
            best = min(best, d)
    return 0.5 * best


def _point_segment_distance(px, py, a, b):
    vx, vy = b[0] - a[0], b[1] - a[1]
    wx, wy = px - a[0], py - a[1]
    denom = vx * vx + vy * vy
    t = 0.0 if denom == 0.0 else max(0.0, min(1.0, (wx * vx + wy * vy) / denom))
    dx, dy = wx - t * vx, wy - t * vy
    return math.hypot(dx, dy)


def load_domain(source) -> Domain:
    """Build a Domain from domain-file content.

    ``source`` is a JSON string or an already-decoded dict of the form
    ``{"name": str, "vertices": [[x, y], ...]}`` with the loop in
    counterclockwise order.

    Raises:
        ParseError: the content is not valid domain JSON.
        GeometryError: the loop is self-intersecting or degenerate.
    """
    if isinstance(source, (str, bytes)):
        try:
            data = json.loads(source)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid domain JSON: {exc}") from None
    else:
        data = source
    if not isinstance(data, dict) or "vertices" not in data:
        raise ParseError('domain file must be an object with a "vertices" array')
    name = data.get("name", "domain")
    try:
        verts = np.asarray(data["vertices"], dtype=float)
    except (TypeError, ValueError):
        raise ParseError("vertices must be an array of [x, y] pairs") from None
    if verts.ndim != 2 or verts.shape[1] != 2:
        raise ParseError("vertices must be an array of [x, y] pairs")
    return _build(str(name), verts)


def domain_from_vertices(vertices, name="domain") -> Domain:
    """Build a Domain directly from a vertex loop (test/fixture helper)."""
    return _build(name, np.asarray(vertices, dtype=float))


def boundary_distance(d: Domain, p) -> float:
    """Euclidean distance from p to the polygon boundary."""
    p = np.asarray(p, dtype=float)
    w = p - d._edge_starts
    t = np.clip(np.einsum("ij,ij->i", w, d._edge_vecs) / d._edge_len2, 0.0, 1.0)
    diff = w - t[:, None] * d._edge_vecs
    return float(np.sqrt(np.min(np.einsum("ij,ij->i", diff, diff))))


def contains(d: Domain, p) -> str:
    """Classify p as interior, boundary or exterior (tolerance d.tau)."""
    p = np.asarray(p, dtype=float)
    if boundary_distance(d, p) <= d.tau:
        return BOUNDARY
    return INTERIOR if _winding_inside(d, p) else EXTERIOR


def _winding_inside(d, p):
    # Crossing-number test; safe because p is farther than tau from every edge.
    verts = d.vertices
    n = len(verts)
    x, y = float(p[0]), float(p[1])
    inside = False
    j = n - 1
    for i in range(n):
        yi, yj = verts[i, 1], verts[j, 1]
        if (yi > y) != (yj > y):
            x_cross = verts[i, 0] + (y - yi) * (verts[j, 0] - verts[i, 0]) / (yj - yi)
            if x < x_cross:
                inside = not inside
        j = i
    return inside


def project(d: Domain, p) -> np.ndarray:
    """Nearest point of the closed domain, deterministic under ties.

    Points already in the closed domain are returned unchanged.  Ties are
    broken by lowest edge index, then lowest edge parameter.
    """
    p = np.asarray(p, dtype=float)
    if contains(d, p) != EXTERIOR:
        return p.copy()
    w = p - d._edge_starts
    t = np.clip(np.einsum("ij,ij->i", w, d._edge_vecs) / d._edge_len2, 0.0, 1.0)
    feet = d._edge_starts + t[:, None] * d._edge_vecs
    dists = np.hypot(*(p - feet).T)
    # Scanning upward with a strict improvement threshold keeps the lowest
    # edge index on ties; a single edge projects to one parameter, so the
    # secondary lowest-parameter rule never has to arbitrate.
    best_i = 0
    for i in range(1, len(dists)):
        if dists[i] < dists[best_i] - d.tau:
            best_i = i
    return feet[best_i]


def nearest_boundary_point(d: Domain, p):
    """Nearest boundary point of p and its edge index (lowest index on ties)."""
    p = np.asarray(p, dtype=float)
    w = p - d._edge_starts
    t = np.clip(np.einsum("ij,ij->i", w, d._edge_vecs) / d._edge_len2, 0.0, 1.0)
    feet = d._edge_starts + t[:, None] * d._edge_vecs
    dists = np.hypot(*(p - feet).T)
    best_i = 0
    for i in range(1, len(dists)):
        if dists[i] < dists[best_i] - d.tau:
            best_i = i
    return feet[best_i], best_i


def _boundary_feature(d: Domain, x):
    """Return ('vertex', i) or ('edge', i) for a boundary point x."""
    verts = d.vertices
    dv = np.hypot(*(verts - x).T)
    i = int(np.argmin(dv))
    if dv[i] <= d.tau:
        return "vertex", i
    w = x - d._edge_starts
    t = np.clip(np.einsum("ij,ij->i", w, d._edge_vecs) / d._edge_len2, 0.0, 1.0)
    feet = d._edge_starts + t[:, None] * d._edge_vecs
    de = np.hypot(*(x - feet).T)
    return "edge", int(np.argmin(de))


def normal_cone(d: Domain, x) -> NormalCone:
    """Outward normal cone (polar of the tangent cone) at x.

    Reflex vertices carry the degenerate cone {0}: the tangent cone there is
    wider than a half-plane, so its polar contains no nonzero vector.

    Raises:
        ExteriorPointError: x lies outside the closed domain.
    """
    x = np.asarray(x, dtype=float)
    side = contains(d, x)
    if side == EXTERIOR:
        raise ExteriorPointError(f"normal cone queried at exterior point {x.tolist()}")
    if side == INTERIOR:
        return NormalCone(np.empty((0, 2)), INTERIOR)
    kind, i = _boundary_feature(d, x)
    if kind == "vertex":
        if d.reflex_flags[i]:
            return NormalCone(np.empty((0, 2)), "reflex-vertex")
        return NormalCone(d.incident_edge_normals(i), "convex-vertex")
    return NormalCone(d._edge_normals[i : i + 1].copy(), "edge")


def reflection_cone(d: Domain, x) -> NormalCone:
    """Cone of admissible reflection directions at x.

    Identical to :func:`normal_cone` except at reflex vertices, where it
    returns the cone spanned by the two incident edge normals.  That cone is
    the limit of the outward normal cones of smooth domains approximating the
    corner, and it is the set of directions along which nearest-point
    projection can displace points near the notch; the first-order optimality
    conditions of Fréchet means and the reflection term of the scheme live in
    this cone rather than in the degenerate polar cone.
    """
    cone = normal_cone(d, x)
    if cone.classification == "reflex-vertex":
        _, i = _boundary_feature(d, np.asarray(x, dtype=float))
        return NormalCone(d.incident_edge_normals(i), "reflex-vertex")
    return cone


def cone_project(generators, v) -> np.ndarray:
    """Euclidean projection of v onto the convex cone spanned by generators.

    Generators are unit vectors; with two of them the spanned angle must be
    below pi (true for every cone this package produces).
    """
    v = np.asarray(v, dtype=float)
    k = len(generators)
    if k == 0:
        return np.zeros(2)
    if k == 1:
        g = generators[0]
        return max(float(v @ g), 0.0) * np.asarray(g, dtype=float)
    g1, g2 = np.asarray(generators[0], float), np.asarray(generators[1], float)
    det = g1[0] * g2[1] - g1[1] * g2[0]
    if abs(det) > 1e-14:
        a = (v[0] * g2[1] - v[1] * g2[0]) / det
        b = (g1[0] * v[1] - g1[1] * v[0]) / det
        if a >= 0.0 and b >= 0.0:
            return v.copy()
    p1 = max(float(v @ g1), 0.0) * g1
    p2 = max(float(v @ g2), 0.0) * g2
    return p1 if np.dot(v - p1, v - p1) <= np.dot(v - p2, v - p2) else p2


def angle_to_cone(generators, v) -> float:
    """Angular distance (radians) from direction v to the cone of generators.

    Zero when v lies inside the cone; pi for the degenerate cone {0}.
    """
    v = np.asarray(v, dtype=float)
    nv = math.hypot(v[0], v[1])
    if nv == 0.0 or len(generators) == 0:
        return math.pi
    proj = cone_project(generators, v / nv)
    npj = math.hypot(proj[0], proj[1])
    if npj == 0.0:
        return math.pi
    c = min(1.0, max(-1.0, float((v / nv) @ (proj / npj))))
    return math.acos(c)


def near_boundary_normals(d: Domain, x, radius) -> np.ndarray:
    """Unit outward normals of all boundary edges within ``radius`` of x."""
    x = np.asarray(x, dtype=float)
    out = []
    w = x - d._edge_starts
    t = np.clip(np.einsum("ij,ij->i", w, d._edge_vecs) / d._edge_len2, 0.0, 1.0)
    feet = d._edge_starts + t[:, None] * d._edge_vecs
    de = np.hypot(*(x - feet).T)
    for i in range(d.n_vertices):
        if de[i] <= radius:
            out.append(d._edge_normals[i])
    if not out:
        out.append(d._edge_normals[int(np.argmin(de))])
    return np.array(out)


def boundary_feature_cones(d: Domain, x, radius):
    """Reflection cones of every boundary feature within ``radius`` of x.

    Returns a list of generator arrays: one per nearby edge (its outward
    normal) and one per nearby vertex (the cone of its two incident edge
    normals, which for reflex vertices is the limit of smoothed normals).
    """
    x = np.asarray(x, dtype=float)
    cones = []
    w = x - d._edge_starts
    t = np.clip(np.einsum("ij,ij->i", w, d._edge_vecs) / d._edge_len2, 0.0, 1.0)
    feet = d._edge_starts + t[:, None] * d._edge_vecs
    de = np.hypot(*(x - feet).T)
    for i in range(d.n_vertices):
        if de[i] <= radius:
            cones.append(d._edge_normals[i : i + 1])
    dv = np.hypot(*(d.vertices - x).T)
    for i in range(d.n_vertices):
        if dv[i] <= radius:
            cones.append(d.incident_edge_normals(i))
    if not cones:
        cones.append(d._edge_normals[int(np.argmin(de)) : int(np.argmin(de)) + 1])
    return cones


def sample_points(d: Domain, n, rng, interior_only=False, margin=0.0) -> np.ndarray:
    """Draw n points of the closed domain by rejection from the bounding box.

    With ``interior_only`` the points keep at least ``margin`` distance from
    the boundary.  Deterministic given the generator state.
    """
    lo, hi = d.bounding_box()
    pts = np.empty((n, 2))
    got = 0
    while got < n:
        cand = lo + (hi - lo) * rng.random(2)
        side = contains(d, cand)
        if side == EXTERIOR:
            continue
        if interior_only and (side != INTERIOR or boundary_distance(d, cand) < margin):
            continue
        pts[got] = cand
        got += 1
    return pts
