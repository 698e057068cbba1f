"""Exact geodesics in a simple polygon and the squared-distance calculus.

Two independent engines compute shortest paths: a triangulation + funnel
pass (the production route) and a visibility-graph Dijkstra (the oracle).
On top of them sit the squared geodesic distance, the log map, the rotation
angle aligning endpoint tangents, and a sampling audit of the comparison
geometry the rest of the package relies on.
"""

from __future__ import annotations

import heapq
import math
import weakref
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ExteriorPointError, GeometryError, ParameterRangeError
from .geometry import EXTERIOR, Domain, contains

_MESH_CACHE = weakref.WeakKeyDictionary()


@dataclass(frozen=True, eq=False)
class GeodesicPath:
    """Constant-speed polyline geodesic between two points of the domain.

    ``waypoints`` starts at x and ends at y; every interior waypoint is a
    reflex vertex of the polygon.  ``start_direction``/``end_direction`` are
    unit tangents, or None for the degenerate path x == y.
    """

    waypoints: np.ndarray  # (m, 2)
    length: float
    start_direction: np.ndarray | None
    end_direction: np.ndarray | None
    leg_lengths: np.ndarray  # (m-1,)
    cum_arcs: np.ndarray  # (m,) cumulative arc length at each waypoint

    def direction_at_arc(self, arc):
        """Unit tangent at a given arc length (right-continuous at bends)."""
        if self.length == 0.0:
            return None
        i = min(int(np.searchsorted(self.cum_arcs, arc, side="right")) - 1,
                len(self.leg_lengths) - 1)
        i = max(i, 0)
        seg = self.waypoints[i + 1] - self.waypoints[i]
        return seg / self.leg_lengths[i]

    def left_direction_at_arc(self, arc):
        """Unit tangent approaching the arc position from below."""
        if self.length == 0.0:
            return None
        i = int(np.searchsorted(self.cum_arcs, arc - 1e-14 * (1.0 + self.length),
                                side="left")) - 1
        i = min(max(i, 0), len(self.leg_lengths) - 1)
        seg = self.waypoints[i + 1] - self.waypoints[i]
        return seg / self.leg_lengths[i]


class _Mesh:
    """Precomputed triangulation, dual tree and visibility data for a domain."""

    def __init__(self, d: Domain):
        self.domain = d
        self.verts = [(float(x), float(y)) for x, y in d.vertices]
        self.tris = list(d.triangulation)
        self.eps_area = d.tau * d.diameter
        # Dual adjacency through shared diagonals.
        edge_owner = {}
        self.neighbors = [[] for _ in self.tris]
        for ti, (a, b, c) in enumerate(self.tris):
            for u, v in ((a, b), (b, c), (c, a)):
                key = (u, v) if u < v else (v, u)
                if key in edge_owner:
                    tj = edge_owner[key]
                    self.neighbors[ti].append(tj)
                    self.neighbors[tj].append(ti)
                else:
                    edge_owner[key] = ti
        # Edge arrays for visibility tests.
        self._A = d.vertices
        self._E = np.roll(d.vertices, -1, axis=0) - d.vertices
        self._vis_cache = None

    # -- point location ----------------------------------------------------

    def locate(self, p):
        px, py = float(p[0]), float(p[1])
        eps = self.eps_area
        best, best_viol = 0, math.inf
        for ti, (a, b, c) in enumerate(self.tris):
            ax, ay = self.verts[a]
            bx, by = self.verts[b]
            cx, cy = self.verts[c]
            d1 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
            d2 = (cx - bx) * (py - by) - (cy - by) * (px - bx)
            d3 = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
            viol = -min(d1, d2, d3)
            if viol <= eps:
                return ti
            if viol < best_viol:
                best, best_viol = ti, viol
        return best  # nearest triangle; only reached through float fuzz

    def tree_path(self, t0, t1):
        if t0 == t1:
            return [t0]
        parent = {t0: None}
        queue = deque([t0])
        while queue:
            t = queue.popleft()
            if t == t1:
                break
            for s in self.neighbors[t]:
                if s not in parent:
                    parent[s] = t
                    queue.append(s)
        path = [t1]
        while parent[path[-1]] is not None:
            path.append(parent[path[-1]])
        path.reverse()
        return path

    def portal(self, t_from, t_to):
        """Shared edge of two adjacent triangles as (left, right) vertex ids.

        Orientation: crossing out of ``t_from`` through its CCW-ordered edge
        (u, v), the vertex v lies on the walker's left.
        """
        a, b, c = self.tris[t_from]
        other = set(self.tris[t_to])
        for u, v in ((a, b), (b, c), (c, a)):
            if u in other and v in other:
                return v, u
        raise GeometryError("triangles are not adjacent")  # pragma: no cover

    # -- visibility --------------------------------------------------------

    def segment_in_domain(self, p, q):
        """Closed-set test: does the segment [p, q] stay inside the domain?"""
        d = self.domain
        rx, ry = q[0] - p[0], q[1] - p[1]
        seg_len = math.hypot(rx, ry)
        if seg_len <= d.tau:
            return contains(d, p) != EXTERIOR
        A, E = self._A, self._E
        apx = A[:, 0] - p[0]
        apy = A[:, 1] - p[1]
        denom = rx * E[:, 1] - ry * E[:, 0]
        cross_ap_e = apx * E[:, 1] - apy * E[:, 0]
        cross_ap_r = apx * ry - apy * rx
        eps = 1e-12
        ts = [0.0, 1.0]
        nz = np.abs(denom) > eps * seg_len
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(nz, cross_ap_e / denom, np.inf)
            s = np.where(nz, cross_ap_r / denom, np.inf)
        hit = nz & (t >= -eps) & (t <= 1 + eps) & (s >= -eps) & (s <= 1 + eps)
        ts.extend(np.clip(t[hit], 0.0, 1.0).tolist())
        # Collinear overlaps: register both projected endpoints.
        coll = (~nz) & (np.abs(cross_ap_r) <= eps * seg_len * seg_len)
        if np.any(coll):
            r2 = rx * rx + ry * ry
            ta = (apx * rx + apy * ry) / r2
            tb = ((apx + E[:, 0]) * rx + (apy + E[:, 1]) * ry) / r2
            for i in np.flatnonzero(coll):
                ts.append(min(1.0, max(0.0, ta[i])))
                ts.append(min(1.0, max(0.0, tb[i])))
        ts = sorted(set(ts))
        for t0, t1 in zip(ts[:-1], ts[1:]):
            if t1 - t0 <= eps:
                continue
            m = 0.5 * (t0 + t1)
            if contains(d, (p[0] + m * rx, p[1] + m * ry)) == EXTERIOR:
                return False
        return True

    def vertex_visibility(self):
        """Symmetric visibility matrix over polygon vertices (cached)."""
        if self._vis_cache is None:
            n = len(self.verts)
            vis = np.zeros((n, n), dtype=bool)
            for i in range(n):
                for j in range(i + 1, n):
                    ok = self.segment_in_domain(self.verts[i], self.verts[j])
                    vis[i, j] = vis[j, i] = ok
            self._vis_cache = vis
        return self._vis_cache


def _mesh(d: Domain) -> _Mesh:
    m = _MESH_CACHE.get(d)
    if m is None:
        m = _Mesh(d)
        _MESH_CACHE[d] = m
    return m


def _require_inside(d, p, label):
    if contains(d, p) == EXTERIOR:
        raise ExteriorPointError(f"{label} = {np.asarray(p, float).tolist()} lies outside the domain")


def _make_path(raw_points, tau, diameter) -> GeodesicPath:
    """Canonicalize waypoints: drop duplicates, merge collinear bends."""
    pts = [raw_points[0]]
    for p in raw_points[1:]:
        if math.hypot(p[0] - pts[-1][0], p[1] - pts[-1][1]) > tau:
            pts.append(p)
    out = [pts[0]]
    for i in range(1, len(pts) - 1):
        a = out[-1]
        b = pts[i]
        c = pts[i + 1]
        ux, uy = b[0] - a[0], b[1] - a[1]
        vx, vy = c[0] - b[0], c[1] - b[1]
        lu = math.hypot(ux, uy)
        lv = math.hypot(vx, vy)
        sin_turn = (ux * vy - uy * vx) / (lu * lv)
        cos_turn = (ux * vx + uy * vy) / (lu * lv)
        if abs(sin_turn) <= 1e-12 and cos_turn > 0.0:
            continue  # straight through, drop b
        out.append(b)
    if len(pts) >= 2:
        out.append(pts[-1])
    wps = np.asarray(out, dtype=float)
    if len(wps) == 1:
        return GeodesicPath(wps, 0.0, None, None, np.zeros(0), np.zeros(1))
    legs = np.diff(wps, axis=0)
    leg_len = np.hypot(legs[:, 0], legs[:, 1])
    cum = np.concatenate(([0.0], np.cumsum(leg_len)))
    length = float(cum[-1])
    start_dir = legs[0] / leg_len[0]
    end_dir = legs[-1] / leg_len[-1]
    return GeodesicPath(wps, length, start_dir, end_dir, leg_len, cum)


def geodesic(d: Domain, x, y) -> GeodesicPath:
    """Unique shortest path from x to y inside the closed domain.

    Computed by locating the endpoints in the cached ear-clipping
    triangulation, extracting the sleeve of triangles along the dual tree and
    running the funnel algorithm over its portals.

    Raises:
        ExteriorPointError: either endpoint is outside the closed domain.
    """
    _require_inside(d, x, "x")
    _require_inside(d, y, "y")
    x = (float(x[0]), float(x[1]))
    y = (float(y[0]), float(y[1]))
    if x == y:
        return _make_path([x], d.tau, d.diameter)
    mesh = _mesh(d)
    # Feasible chords are shortest outright; this also covers grazing chords.
    if mesh.segment_in_domain(x, y):
        return _make_path([x, y], d.tau, d.diameter)
    t0 = mesh.locate(x)
    t1 = mesh.locate(y)
    if t0 == t1:
        return _make_path([x, y], d.tau, d.diameter)
    tri_path = mesh.tree_path(t0, t1)
    portals = []
    for a, b in zip(tri_path[:-1], tri_path[1:]):
        li, ri = mesh.portal(a, b)
        portals.append((mesh.verts[li], mesh.verts[ri]))
    pts = _funnel(x, portals, y, mesh.eps_area)
    return _make_path(pts, d.tau, d.diameter)


def _area2(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _funnel(x, portals, y, eps):
    """Funnel (string pulling) over a portal sequence; returns waypoint list."""
    portals = [(x, x)] + portals + [(y, y)]
    pts = [x]
    apex = pleft = pright = x
    apex_i = left_i = right_i = 0
    i = 1
    while i < len(portals):
        left, right = portals[i]
        # Right side of the funnel.
        if _area2(apex, pright, right) >= -eps:
            if apex == pright or _area2(apex, pleft, right) < eps:
                pright = right
                right_i = i
            else:
                pts.append(pleft)
                apex = pleft
                apex_i = left_i
                pleft = pright = apex
                left_i = right_i = apex_i
                i = apex_i + 1
                continue
        # Left side of the funnel.
        if _area2(apex, pleft, left) <= eps:
            if apex == pleft or _area2(apex, pright, left) > -eps:
                pleft = left
                left_i = i
            else:
                pts.append(pright)
                apex = pright
                apex_i = right_i
                pleft = pright = apex
                left_i = right_i = apex_i
                i = apex_i + 1
                continue
        i += 1
    pts.append(y)
    return pts


def geodesic_oracle(d: Domain, x, y) -> GeodesicPath:
    """Shortest path by Dijkstra over the visibility graph (verification oracle).

    Nodes are the polygon vertices plus the two endpoints; an edge joins two
    nodes when the straight segment between them stays in the closed domain.
    Independent of the funnel route by construction.
    """
    _require_inside(d, x, "x")
    _require_inside(d, y, "y")
    x = (float(x[0]), float(x[1]))
    y = (float(y[0]), float(y[1]))
    if x == y:
        return _make_path([x], d.tau, d.diameter)
    mesh = _mesh(d)
    if mesh.segment_in_domain(x, y):
        return _make_path([x, y], d.tau, d.diameter)
    verts = mesh.verts
    n = len(verts)
    nodes = verts + [x, y]
    adj = [[] for _ in nodes]
    vis = mesh.vertex_visibility()
    for i in range(n):
        for j in range(i + 1, n):
            if vis[i, j]:
                w = math.dist(verts[i], verts[j])
                adj[i].append((j, w))
                adj[j].append((i, w))
    for pi, p in ((n, x), (n + 1, y)):
        for j in range(n):
            if mesh.segment_in_domain(p, verts[j]):
                w = math.dist(p, verts[j])
                adj[pi].append((j, w))
                adj[j].append((pi, w))
    dist = [math.inf] * len(nodes)
    prev = [-1] * len(nodes)
    dist[n] = 0.0
    heap = [(0.0, n)]
    while heap:
        du, u = heapq.heappop(heap)
        if du > dist[u]:
            continue
        if u == n + 1:
            break
        for v, w in adj[u]:
            alt = du + w
            if alt < dist[v]:
                dist[v] = alt
                prev[v] = u
                heapq.heappush(heap, (alt, v))
    if not math.isfinite(dist[n + 1]):
        raise GeometryError("visibility graph is disconnected; domain data is inconsistent")
    chain = [n + 1]
    while chain[-1] != n:
        chain.append(prev[chain[-1]])
    chain.reverse()
    return _make_path([nodes[i] for i in chain], d.tau, d.diameter)


def psi(d: Domain, x, y) -> float:
    """Squared geodesic distance between x and y."""
    return geodesic(d, x, y).length ** 2


def log_map(d: Domain, x, y) -> np.ndarray:
    """Initial velocity of the unit-time geodesic from x to y.

    The vector points along the first leg of the path and has the full
    geodesic length as magnitude; it equals y - x whenever the path is
    straight, and is zero iff x == y.
    """
    path = geodesic(d, x, y)
    if path.length == 0.0:
        return np.zeros(2)
    return path.length * path.start_direction


def path_log_maps(path: GeodesicPath):
    """Both endpoint log maps of an already-computed path (saves a query)."""
    if path.length == 0.0:
        return np.zeros(2), np.zeros(2)
    return path.length * path.start_direction, -path.length * path.end_direction


def rotation_angle(d: Domain, x, y) -> float:
    """Angle aligning the reversed end tangent with the start tangent.

    Accumulated as the sum of signed bend angles along the path (exact for a
    polyline, immune to cancellation for nearly straight paths) and wrapped
    to (-pi, pi].  Zero for x == y by convention.
    """
    path = geodesic(d, x, y)
    return path_rotation_angle(path)


def path_rotation_angle(path: GeodesicPath) -> float:
    if len(path.waypoints) < 3:
        return 0.0
    legs = np.diff(path.waypoints, axis=0)
    total = 0.0
    for i in range(len(legs) - 1):
        ux, uy = legs[i]
        vx, vy = legs[i + 1]
        total += math.atan2(ux * vy - uy * vx, ux * vx + uy * vy)
    # Wrap to (-pi, pi].
    wrapped = math.fmod(total + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


def rotation_matrix(theta) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def geodesic_point(path: GeodesicPath, t) -> np.ndarray:
    """Point at parameter t of the constant-speed parametrization."""
    if not 0.0 <= t <= 1.0:
        raise ParameterRangeError(f"parameter {t} outside [0, 1]")
    if path.length == 0.0:
        return path.waypoints[0].copy()
    arc = t * path.length
    i = int(np.searchsorted(path.cum_arcs, arc, side="right")) - 1
    i = min(max(i, 0), len(path.leg_lengths) - 1)
    s = (arc - path.cum_arcs[i]) / path.leg_lengths[i]
    s = min(max(s, 0.0), 1.0)
    return (1.0 - s) * path.waypoints[i] + s * path.waypoints[i + 1]


@dataclass(frozen=True, eq=False)
class Cat0Report:
    """Outcome of the sampled comparison-geometry audit."""

    domain: str
    n_samples: int
    seed: int
    max_thin_violation: float
    max_convexity_violation: float
    min_ratio: float
    max_ratio: float  # observed norm-equivalence constant C
    passed: bool
    tol_thin: float
    tol_convexity: float

    def as_dict(self):
        return {
            "domain": self.domain,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "max_thin_violation": self.max_thin_violation,
            "max_convexity_violation": self.max_convexity_violation,
            "min_ratio": self.min_ratio,
            "max_ratio": self.max_ratio,
            "passed": self.passed,
            "tol_thin": self.tol_thin,
            "tol_convexity": self.tol_convexity,
        }


def _comparison_point(d_xy, d_xp, d_yp, arc):
    """Place the comparison triangle in the plane; return the point at ``arc``
    along the base and the apex."""
    px = (d_xy**2 + d_xp**2 - d_yp**2) / (2.0 * d_xy) if d_xy > 0 else 0.0
    py2 = max(d_xp**2 - px**2, 0.0)
    apex = (px, math.sqrt(py2))
    return (arc, 0.0), apex


def cat0_audit(d: Domain, n_samples, seed=0, tol_thin=1e-7, tol_convexity=1e-7,
               grid=17) -> Cat0Report:
    """Sampled audit of thin triangles, distance convexity and norm bounds.

    For each sampled triple (x, y, p) and point z on the x-y geodesic, checks
    the comparison inequality d(p, z) <= d_E(p~, z~); for each sampled
    geodesic pair, checks discrete convexity of t -> d(g1_t, g2_t) via second
    differences on a uniform grid; tracks the ratio of squared geodesic to
    squared Euclidean distance over all sampled pairs.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    from .geometry import sample_points

    rng = np.random.default_rng(seed)
    max_thin = 0.0
    max_conv = 0.0
    min_ratio = math.inf
    max_ratio = 1.0
    for _ in range(n_samples):
        x, y, p, q = sample_points(d, 4, rng)
        d_xy = geodesic(d, x, y)
        if d_xy.length <= d.tau:
            continue  # degenerate triple, trivially thin
        d_xp = geodesic(d, x, p).length
        d_yp = geodesic(d, y, p).length
        t = rng.random()
        z = geodesic_point(d_xy, t)
        d_pz = geodesic(d, p, z).length
        z_cmp, p_cmp = _comparison_point(d_xy.length, d_xp, d_yp, t * d_xy.length)
        viol = d_pz - math.dist(z_cmp, p_cmp)
        max_thin = max(max_thin, viol)
        # Norm equivalence on the sampled pairs.
        for a, b, dg in ((x, y, d_xy.length), (x, p, d_xp), (y, p, d_yp)):
            e2 = (a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2
            if e2 > d.tau**2:
                r = dg**2 / e2
                min_ratio = min(min_ratio, r)
                max_ratio = max(max_ratio, r)
        # Convexity of the inter-geodesic distance.
        g1 = d_xy
        g2 = geodesic(d, p, q)
        vals = [
            geodesic(d, geodesic_point(g1, s), geodesic_point(g2, s)).length
            for s in np.linspace(0.0, 1.0, grid)
        ]
        for j in range(1, grid - 1):
            max_conv = max(max_conv, 2.0 * vals[j] - vals[j - 1] - vals[j + 1])
    passed = (
        max_thin <= tol_thin
        and max_conv <= tol_convexity
        and min_ratio >= 1.0 - 1e-9
    )
    return Cat0Report(
        domain=d.name,
        n_samples=n_samples,
        seed=seed,
        max_thin_violation=float(max_thin),
        max_convexity_violation=float(max_conv),
        min_ratio=float(min_ratio),
        max_ratio=float(max_ratio),
        passed=bool(passed),
        tol_thin=tol_thin,
        tol_convexity=tol_convexity,
    )
