"""Recombining random-walk approximation of a d'-dimensional Brownian motion.

Each of the n = 2^k steps multiplies every coordinate by an independent
+-sqrt(h) coin, so per-node conditional laws and expectations are exact and
the whole object is reproducible bit for bit.  An optional non-recombining
tree mode keys nodes by their full sign path for path-dependent data.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, SliceOrderError
from .frechet import DiscreteMeasure

MAX_RECOMBINING_NODES = 3_000_000
MAX_TREE_K = 12


@dataclass(frozen=True, eq=False)
class Lattice:
    """Dyadic-time +-sqrt(h) product walk with exact conditional laws.

    Recombining nodes are integer offset tuples o (one entry per noise
    coordinate, |o_j| <= i with the parity of the slice index i); the state
    value is o * sqrt(h).  Tree nodes are tuples of sign tuples.
    """

    d_prime: int
    k: int
    n_steps: int
    horizon: float
    h: float
    sqrt_h: float
    tree: bool
    _signs: tuple = field(repr=False, default=None)

    @property
    def branch_probability(self):
        return 0.5**self.d_prime

    # -- node enumeration ----------------------------------------------------

    def states(self, i):
        """All reachable node ids at slice i, in deterministic order."""
        self._check_slice(i)
        if self.tree:
            return [
                tuple(path)
                for path in itertools.product(self._signs, repeat=i)
            ]
        offsets = range(-i, i + 1, 2)
        return [o for o in itertools.product(offsets, repeat=self.d_prime)]

    def state_value(self, node) -> np.ndarray:
        """Walk position (in noise space) of a node."""
        if self.tree:
            if len(node) == 0:
                return np.zeros(self.d_prime)
            return self.sqrt_h * np.asarray(node, dtype=float).sum(axis=0)
        return self.sqrt_h * np.asarray(node, dtype=float)

    def weight(self, i, node) -> float:
        """Probability of reaching the node at slice i from the root."""
        self._check_slice(i)
        if self.tree:
            return self.branch_probability**i if len(node) == i else 0.0
        w = 1.0
        for o in node:
            w *= math.comb(i, (i + o) // 2) * 0.5**i
        return w

    def branches(self, i, node):
        """One-step successors: list of (next_node, probability, dW)."""
        self._check_slice(i + 1)
        out = []
        p = self.branch_probability
        for signs in self._signs:
            dw = self.sqrt_h * np.asarray(signs, dtype=float)
            if self.tree:
                out.append((node + (signs,), p, dw))
            else:
                nxt = tuple(o + s for o, s in zip(node, signs))
                out.append((nxt, p, dw))
        return out

    def law(self, i, node, j):
        """Conditional law at slice j >= i given the node: [(node', prob)].

        Composed from one-step branches with recombination merging, in
        deterministic (sorted) node order.
        """
        if j < i:
            raise SliceOrderError(f"target slice {j} precedes node slice {i}")
        self._check_slice(j)
        current = {node: 1.0}
        for step in range(i, j):
            nxt = {}
            for nd in sorted(current):
                pr = current[nd]
                for nd2, p, _ in self.branches(step, nd):
                    nxt[nd2] = nxt.get(nd2, 0.0) + pr * p
            current = nxt
        return [(nd, current[nd]) for nd in sorted(current)]

    def _check_slice(self, i):
        if not 0 <= i <= self.n_steps:
            raise SliceOrderError(f"slice {i} outside 0..{self.n_steps}")


def build_lattice(d_prime, k, horizon, tree=False, max_nodes=MAX_RECOMBINING_NODES) -> Lattice:
    """Build the 2^k-step lattice over [0, horizon].

    Raises:
        CapacityError: the requested lattice exceeds the node budget
            (or k > 12 in tree mode).
    """
    if d_prime not in (1, 2):
        raise ValueError("d_prime must be 1 or 2")
    if k < 1:
        raise ValueError("k must be >= 1")
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    n = 2**k
    if tree:
        if k > MAX_TREE_K:
            raise CapacityError(f"tree mode capped at k <= {MAX_TREE_K}")
        total = sum((2**d_prime) ** i for i in range(n + 1))
    else:
        total = sum((i + 1) ** d_prime for i in range(n + 1))
    if total > max_nodes:
        raise CapacityError(f"lattice would hold {total} nodes (budget {max_nodes})")
    h = horizon / n
    signs = tuple(itertools.product((1, -1), repeat=d_prime))
    return Lattice(
        d_prime=d_prime, k=k, n_steps=n, horizon=horizon, h=h,
        sqrt_h=math.sqrt(h), tree=tree, _signs=signs,
    )


class NodeField:
    """One value per lattice node, keyed by (slice, node id)."""

    def __init__(self, values=None):
        self.values = dict(values) if values else {}

    def __getitem__(self, key):
        return self.values[key]

    def __setitem__(self, key, value):
        self.values[key] = value

    def __contains__(self, key):
        return key in self.values

    def __len__(self):
        return len(self.values)

    def get(self, key, default=None):
        return self.values.get(key, default)

    def keys(self):
        return self.values.keys()

    def at_slice(self, i):
        """Deterministically ordered (node, value) pairs of one slice."""
        items = [(nd, v) for (sl, nd), v in self.values.items() if sl == i]
        items.sort(key=lambda kv: kv[0])
        return items

    def slices(self):
        return sorted({sl for sl, _ in self.values.keys()})

    @staticmethod
    def from_function(lattice: Lattice, fn, slices):
        """Evaluate fn(slice, node) on every node of the given slices."""
        f = NodeField()
        for i in slices:
            for nd in lattice.states(i):
                f[(i, nd)] = fn(i, nd)
        return f


def conditional_measure(L: Lattice, i, node, f: NodeField, target_slice) -> DiscreteMeasure:
    """Exact one-step conditional law of a point-valued field.

    Atoms with coinciding values are merged.  Multi-step laws are composed by
    the caller through :meth:`Lattice.law`.

    Raises:
        SliceOrderError: target_slice is not the next slice.
    """
    if target_slice != i + 1:
        raise SliceOrderError("conditional_measure serves the one-step law only")
    return measure_from_law(L.branches(i, node), f, target_slice)


def measure_from_law(law, f: NodeField, target_slice) -> DiscreteMeasure:
    """Build a merged DiscreteMeasure from [(node, prob, ...)] pairs."""
    merged = {}
    for entry in law:
        nd, p = entry[0], entry[1]
        v = f[(target_slice, nd)]
        key = (float(v[0]), float(v[1]))
        merged[key] = merged.get(key, 0.0) + p
    pts = np.array(sorted(merged.keys()))
    ws = np.array([merged[tuple(p)] for p in pts])
    return DiscreteMeasure(pts, ws)


def node_expectation(L: Lattice, i, node, f: NodeField):
    """Probability-weighted one-step average of a vector/matrix field.

    Raises:
        SliceOrderError: the successors fall outside the lattice.
    """
    total = None
    for nd, p, _ in L.branches(i, node):
        v = f[(i + 1, nd)]
        total = p * np.asarray(v, float) if total is None else total + p * np.asarray(v, float)
    return total


def field_to_rows(L: Lattice, f: NodeField, value_names):
    """Flatten a field into CSV-ready rows (slice, offsets..., values...)."""
    rows = []
    for i in f.slices():
        for nd, v in f.at_slice(i):
            flat = np.asarray(v, float).ravel()
            rows.append((i, nd, flat))
    header = ["slice"] + [f"o{j+1}" for j in range(L.d_prime)] + list(value_names)
    return header, rows
