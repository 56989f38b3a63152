"""Undirected weighted communication graphs and their Laplacians."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class Graph:
    """Fixed undirected graph over ``n_agents`` nodes.

    ``weights`` is the symmetric adjacency matrix with zero diagonal.
    """

    n_agents: int
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if self.n_agents < 1:
            raise ValueError("a graph needs at least one node")
        if w.shape != (self.n_agents, self.n_agents):
            raise ValueError(f"weights must be {self.n_agents}x{self.n_agents}, got {w.shape}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("edge weights must be finite and nonnegative")
        if np.any(np.diag(w) != 0):
            raise ValueError("self loops are not allowed")
        if not np.array_equal(w, w.T):
            raise ValueError("weights must be symmetric")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_edges(cls, n_agents, edges):
        """Build from ``(i, j)`` or ``(i, j, weight)`` tuples, zero-based; default weight 1."""
        w = np.zeros((n_agents, n_agents))
        for e in edges:
            i, j = int(e[0]), int(e[1])
            a = float(e[2]) if len(e) > 2 else 1.0
            if i == j:
                raise ValueError(f"self loop at node {i}")
            if not (0 <= i < n_agents and 0 <= j < n_agents):
                raise ValueError(f"edge ({i}, {j}) out of range for {n_agents} nodes")
            w[i, j] = w[j, i] = a
        return cls(n_agents, w)

    @classmethod
    def cycle(cls, n_agents, weight=1.0):
        if n_agents == 1:
            return cls(1, np.zeros((1, 1)))
        if n_agents == 2:
            return cls.from_edges(2, [(0, 1, weight)])
        return cls.from_edges(n_agents, [(i, (i + 1) % n_agents, weight) for i in range(n_agents)])

    @cached_property
    def laplacian_matrix(self) -> np.ndarray:
        lap = laplacian(self)
        lap.setflags(write=False)
        return lap

    def edges(self):
        """Edge list ``[(i, j, a_ij)]`` with ``i < j``."""
        i, j = np.nonzero(np.triu(self.weights))
        return [(int(a), int(b), float(self.weights[a, b])) for a, b in zip(i, j)]

    def to_dict(self):
        return {"n_agents": self.n_agents, "edges": [list(e) for e in self.edges()]}

    @classmethod
    def from_dict(cls, data):
        return cls.from_edges(int(data["n_agents"]), data.get("edges", []))


def laplacian(g: Graph) -> np.ndarray:
    """L = D - A with D_ii the weighted degree."""
    return np.diag(g.weights.sum(axis=1)) - g.weights


def laplacian_apply(g: Graph, v: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """Apply ``L (x) I_d`` to stacked per-agent blocks without forming the Kronecker product.

    ``v`` has shape ``(n_agents, d)`` (or ``(n_agents,)``); block ``i`` of the
    result is ``sum_j a_ij (v_i - v_j)``.
    """
    v = np.asarray(v, dtype=float)
    if v.shape[:1] != (g.n_agents,):
        raise ValueError(f"expected {g.n_agents} blocks, got array of shape {v.shape}")
    lap = g.laplacian_matrix
    if out is None:
        return lap @ v
    return np.matmul(lap, v, out=out)


def is_connected(g: Graph) -> bool:
    """Breadth-first sweep over positive-weight edges from node 0."""
    seen = np.zeros(g.n_agents, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in np.flatnonzero(g.weights[i] > 0):
            if not seen[j]:
                seen[j] = True
                queue.append(j)
    return bool(seen.all())
