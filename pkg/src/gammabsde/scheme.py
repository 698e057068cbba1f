"""Backward recursion producing the constrained martingale field on the lattice.

One macro step, run backward from the terminal slice: take the conditional
law of the next-slice field, replace it by its Fréchet mean, then transport
that mean against the drift with reflection at the boundary.  The reflection
increment charged at a node is defined by the exact drift balance
K = E[Y_next] - Y + drift * h, and the martingale weight Z is the discrete
representation sum_b p_b Y_next dW_b^T / h.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, ExteriorPointError, GammaBsdeError
from .frechet import frechet_mean, projected_gradient_norm
from .geometry import EXTERIOR, Domain, contains
from .geodesics import geodesic, geodesic_point, psi
from .lattice import Lattice, NodeField, measure_from_law
from .transport import reflect_transport

Y_GAP_TOL = 1e-12
MAX_FIXED_POINT_ITER = 400


@dataclass(eq=False)
class SchemeResult:
    """Node fields produced by one backward sweep (or fixed point thereof)."""

    domain: Domain
    lattice: Lattice
    scheme_slices: list
    stride: int
    h_step: float
    Y: NodeField  # domain points
    Y_tilde: NodeField  # pre-transport Fréchet means
    Z: NodeField  # (2, d') matrices
    K_inc: NodeField  # reflection increments charged at the earlier node
    drift: NodeField  # drift vector used at each node
    diagnostics: dict

    def root(self):
        nd = self.lattice.states(0)[0]
        return self.Y[(0, nd)]


def _terminal_field(d, L, g):
    f = NodeField()
    n = L.n_steps
    for nd in L.states(n):
        y = np.asarray(g(L.state_value(nd)), dtype=float)
        if contains(d, y) == EXTERIOR:
            raise ExteriorPointError(
                f"terminal map leaves the domain at state {nd}: {y.tolist()}"
            )
        f[(n, nd)] = y
    return f


def _sweep(d, L, terminal, slices, drift_fn, substeps, mean_tol):
    """Backward sweep over the given increasing lattice slices.

    ``terminal`` must provide values on slices[-1]; ``drift_fn(i, node)``
    returns the drift vector frozen over the step starting at slice i.
    """
    Y = NodeField()
    Y_tilde = NodeField()
    Z = NodeField()
    K = NodeField()
    DR = NodeField()
    diagnostics = {"mean_residual": {}, "substeps": {}}
    last = slices[-1]
    for nd in L.states(last):
        Y[(last, nd)] = terminal[(last, nd)]
    two_point = L.d_prime == 1 and all(b - a == 1 for a, b in zip(slices[:-1], slices[1:]))
    convex = d.is_convex  # straight geodesics: means are plain averages
    for idx in range(len(slices) - 2, -1, -1):
        i, j = slices[idx], slices[idx + 1]
        h_step = (j - i) * L.h
        worst_res = 0.0
        worst_sub = 1
        for nd in L.states(i):
            try:
                worst_res, worst_sub = _node_step(
                    d, L, Y, Y_tilde, Z, K, DR, i, j, nd, h_step, drift_fn,
                    substeps, mean_tol, two_point, convex, worst_res, worst_sub,
                )
            except GammaBsdeError as exc:
                exc.args = (f"{exc.args[0]} (slice {i}, node {nd})",) + exc.args[1:]
                raise
        diagnostics["mean_residual"][i] = worst_res
        diagnostics["substeps"][i] = worst_sub
    return Y, Y_tilde, Z, K, DR, diagnostics


def _node_step(d, L, Y, Y_tilde, Z, K, DR, i, j, nd, h_step, drift_fn, substeps,
               mean_tol, two_point, convex, worst_res, worst_sub):
    if two_point:
        # One coin: the mean of the two successor values sits at the arc
        # midpoint of the geodesic joining them.
        dn = Y[(j, (nd[0] - 1,))]
        up = Y[(j, (nd[0] + 1,))]
        e_lin = 0.5 * dn + 0.5 * up
        if convex or (dn[0] == up[0] and dn[1] == up[1]):
            y_t = e_lin
        else:
            path = geodesic(d, dn, up)
            if len(path.waypoints) <= 2:
                y_t = e_lin
            else:
                y_t = geodesic_point(path, 0.5)
                s = 0.5 * path.length
                grad = s * (path.left_direction_at_arc(s)
                            - path.direction_at_arc(s))
                worst_res = max(worst_res, projected_gradient_norm(d, y_t, grad))
    else:
        law = L.law(i, nd, j)
        e_lin = np.zeros(2)
        for nd2, p in law:
            e_lin += p * Y[(j, nd2)]
        if convex:
            y_t = e_lin.copy()
        else:
            measure = measure_from_law(law, Y, j)
            cert = frechet_mean(d, measure, tol=mean_tol)
            worst_res = max(worst_res, cert.gradient_norm)
            y_t = cert.mean
    fvec = drift_fn(i, nd)
    if fvec[0] != 0.0 or fvec[1] != 0.0:
        tr = reflect_transport(d, y_t, fvec, h_step, substeps)
        y = tr.endpoint
        worst_sub = max(worst_sub, tr.substeps)
    else:
        y = y_t
    Y[(i, nd)] = y
    Y_tilde[(i, nd)] = y_t
    K[(i, nd)] = e_lin - y + fvec * h_step
    DR[(i, nd)] = fvec
    if two_point:
        Z[(i, nd)] = ((up - dn) / (2.0 * L.sqrt_h)).reshape(2, 1)
    else:
        zmat = np.zeros((2, L.d_prime))
        w_here = L.state_value(nd)
        for nd2, p in law:
            dw = L.state_value(nd2) - w_here
            zmat += p * np.outer(Y[(j, nd2)], dw)
        Z[(i, nd)] = zmat / h_step
    return worst_res, worst_sub


def _default_mean_tol(d):
    return 1e-12 * (1.0 + d.diameter)


def solve_exogenous(d: Domain, L: Lattice, g, F=None, stride=1, substeps=None,
                    mean_tol=None) -> SchemeResult:
    """Backward sweep for an exogenous drift F(slice, state) (None = zero).

    ``stride`` > 1 runs the recursion on every stride-th slice of a finer
    lattice, taking exact multi-step conditional laws; refinement studies
    compare such runs on their shared slices.
    """
    if L.n_steps % stride != 0:
        raise ValueError("stride must divide the number of lattice steps")
    if mean_tol is None:
        mean_tol = _default_mean_tol(d)
    slices = list(range(0, L.n_steps + 1, stride))
    terminal = _terminal_field(d, L, g)
    if F is None:
        drift_fn = lambda i, nd: np.zeros(2)
    else:
        drift_fn = lambda i, nd: np.asarray(F(i, L.state_value(nd)), dtype=float)
    Y, Yt, Z, K, DR, diag = _sweep(d, L, terminal, slices, drift_fn, substeps, mean_tol)
    return SchemeResult(
        domain=d, lattice=L, scheme_slices=slices, stride=stride,
        h_step=stride * L.h, Y=Y, Y_tilde=Yt, Z=Z, K_inc=K, drift=DR,
        diagnostics=diag,
    )


def _field_gap(d, prev: NodeField, new: NodeField, keys):
    """Sup over nodes of the squared geodesic distance between two fields."""
    worst = 0.0
    for key in keys:
        a = prev[key]
        b = new[key]
        if a[0] == b[0] and a[1] == b[1]:
            continue
        worst = max(worst, psi(d, a, b))
    return worst


def solve_state_dependent(d: Domain, L: Lattice, g, f, eta=None, stride=1,
                          substeps=None, mean_tol=None, y_gap_tol=Y_GAP_TOL,
                          max_iter=MAX_FIXED_POINT_ITER, warm_start=None) -> SchemeResult:
    """Fixed point over Y-fields for a drift f(slice, state, y).

    Each iteration freezes the drift along the previous Y-field and reruns
    the exogenous sweep; iteration stops when the sup-node squared geodesic
    gap falls below ``y_gap_tol``.  If the gaps stop contracting, the horizon
    is split into windows of length ``eta`` (halving automatically when eta
    is not supplied) and the fixed point is solved window by window, last to
    first, as in the small-horizon contraction argument.

    Raises:
        ConvergenceError: no contraction even on the shortest window.
    """
    if L.n_steps % stride != 0:
        raise ValueError("stride must divide the number of lattice steps")
    if mean_tol is None:
        mean_tol = _default_mean_tol(d)
    slices = list(range(0, L.n_steps + 1, stride))
    h_step = stride * L.h
    terminal = _terminal_field(d, L, g)

    attempt_eta = eta
    for _ in range(5):
        try:
            return _state_dependent_attempt(
                d, L, terminal, slices, h_step, f, attempt_eta, substeps,
                mean_tol, y_gap_tol, max_iter, warm_start,
            )
        except _NotContracting:
            attempt_eta = (attempt_eta or L.horizon) / 2.0
            if attempt_eta < h_step:
                break
    raise ConvergenceError("state-dependent fixed point failed to contract")


class _NotContracting(Exception):
    pass


def _state_dependent_attempt(d, L, terminal, slices, h_step, f, eta, substeps,
                             mean_tol, y_gap_tol, max_iter, warm_start):
    if eta is None:
        windows = [slices]
    else:
        per = max(1, math.ceil(eta / h_step))
        windows = []
        hi = len(slices) - 1
        while hi > 0:
            lo = max(0, hi - per)
            windows.append(slices[lo : hi + 1])
            hi = lo
    Y = NodeField()
    Yt = NodeField()
    Z = NodeField()
    K = NodeField()
    DR = NodeField()
    diag = {"mean_residual": {}, "substeps": {}, "y_gaps": []}
    term = terminal
    for win in windows:
        keys = [(i, nd) for i in win[:-1] for nd in L.states(i)]
        U = warm_start if (warm_start is not None and all(k in warm_start for k in keys)) else None
        gaps = []
        for it in range(max_iter):
            if U is None:
                drift_fn = lambda i, nd: np.zeros(2)
            else:
                drift_fn = lambda i, nd: np.asarray(
                    f(i, L.state_value(nd), U[(i, nd)]), dtype=float
                )
            Yw, Ytw, Zw, Kw, DRw, dg = _sweep(d, L, term, win, drift_fn, substeps, mean_tol)
            if U is not None:
                gap = _field_gap(d, U, Yw, keys)
                gaps.append(gap)
                if gap <= y_gap_tol:
                    U = Yw
                    break
                if len(gaps) >= 6 and all(
                    gaps[-j] >= gaps[-j - 1] * (1.0 - 1e-12) and gaps[-j] > y_gap_tol * 100
                    for j in range(1, 6)
                ):
                    raise _NotContracting
            U = Yw
        else:
            raise ConvergenceError(
                f"Y fixed point still above {y_gap_tol} after {max_iter} iterations",
                best=U,
            )
        diag["y_gaps"].append(gaps)
        diag["mean_residual"].update(dg["mean_residual"])
        diag["substeps"].update(dg["substeps"])
        for key in keys:
            Y[key] = Yw[key]
            Yt[key] = Ytw[key]
            Z[key] = Zw[key]
            K[key] = Kw[key]
            DR[key] = DRw[key]
        first = win[0]
        term = NodeField({(first, nd): Yw[(first, nd)] for nd in L.states(first)})
        if first == 0:
            break
    last = slices[-1]
    for nd in L.states(last):
        Y[(last, nd)] = terminal[(last, nd)]
    return SchemeResult(
        domain=d, lattice=L, scheme_slices=slices, stride=slices[1] - slices[0],
        h_step=h_step, Y=Y, Y_tilde=Yt, Z=Z, K_inc=K, drift=DR, diagnostics=diag,
    )


@dataclass(eq=False)
class RefinementTable:
    """Sup-node field gaps between consecutive dyadic refinements."""

    k_list: list
    gaps: list  # (k_coarse, k_fine, sup geodesic distance)
    strictly_decreasing: bool
    noise_floor: float = 1e-12

    def as_dict(self):
        return {
            "k_list": list(self.k_list),
            "gaps": [
                {"k_coarse": a, "k_fine": b, "sup_distance": g} for a, b, g in self.gaps
            ],
            "strictly_decreasing": self.strictly_decreasing,
            "noise_floor": self.noise_floor,
        }


def refine_and_compare(d: Domain, g, F, k_list, d_prime=1, horizon=1.0,
                       substeps=None, mean_tol=None) -> RefinementTable:
    """Run the scheme at several dyadic resolutions over one shared lattice.

    All runs use the finest lattice as the noise carrier; a run at exponent k
    applies the recursion every 2^(kmax - k) slices, so consecutive runs share
    the coarser run's slices and nodes exactly.  The table reports the
    sup-node geodesic distance between consecutive runs on those shared nodes.
    """
    from .lattice import build_lattice

    k_list = sorted(k_list)
    kmax = k_list[-1]
    L = build_lattice(d_prime, kmax, horizon)
    results = {}
    for k in k_list:
        stride = 2 ** (kmax - k)
        results[k] = solve_exogenous(d, L, g, F, stride=stride, substeps=substeps,
                                     mean_tol=mean_tol)
    gaps = []
    for k1, k2 in zip(k_list[:-1], k_list[1:]):
        coarse = results[k1]
        fine = results[k2]
        worst = 0.0
        for i in coarse.scheme_slices:
            for nd in L.states(i):
                a = coarse.Y[(i, nd)]
                b = fine.Y[(i, nd)]
                if a[0] == b[0] and a[1] == b[1]:
                    continue
                worst = max(worst, geodesic(d, a, b).length)
        gaps.append((k1, k2, worst))
    floor = 1e-12
    decreasing = all(
        g2 < g1 or g2 <= floor for (_, _, g1), (_, _, g2) in zip(gaps[:-1], gaps[1:])
    )
    return RefinementTable(k_list=k_list, gaps=gaps, strictly_decreasing=decreasing)
