"""Problem data: per-agent nonsmooth costs, coupled constraints and instance generation.

Every agent ``i`` owns a cost ``f_i``, a vector of convex inequality
functions ``g_i`` (summed over agents and required to be nonpositive), affine
data ``A_i, b_i`` (``sum_i A_i x_i - b_i = 0``), a local set and a generating
function on that set.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .graph import Graph, is_connected
from .mirror import (
    Entropy,
    GeneratingFunction,
    Quadratic,
    UnitSimplex,
    Box,
    generating_function_from_dict,
)

log = logging.getLogger(__name__)


class InfeasibleInstanceError(ValueError):
    """Raised when generated data violates the Slater condition."""


# --------------------------------------------------------------------------
# the composite convex function used throughout


@dataclass(frozen=True, eq=False)
class QuadraticL1:
    """``||W x - d||^2 + c ||x||_1 + offset`` with ``W = F^T F + ridge * I``.

    ``W`` is kept in factored form so that ``W x`` costs ``O(rank * n)``.  Any
    positive semidefinite ``W`` fits (take ``F`` a square root of ``W``).
    """

    factor: np.ndarray
    ridge: float
    target: np.ndarray
    l1_weight: float = 0.0
    offset: float = 0.0

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.target, dtype=float))
        f = np.asarray(self.factor, dtype=float).reshape(-1, t.size)
        if self.l1_weight < 0 or self.ridge < 0:
            raise ValueError("l1 weight and ridge must be nonnegative")
        for a in (f, t):
            a.setflags(write=False)
        object.__setattr__(self, "factor", f)
        object.__setattr__(self, "target", t)
        object.__setattr__(self, "ridge", float(self.ridge))
        object.__setattr__(self, "l1_weight", float(self.l1_weight))
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def dim(self):
        return self.target.size

    @property
    def matrix(self):
        return self.factor.T @ self.factor + self.ridge * np.eye(self.dim)

    def apply(self, x):
        return self.factor.T @ (self.factor @ x) + self.ridge * x

    def smooth_value(self, x):
        r = self.apply(x) - self.target
        return float(r @ r) + self.offset

    def smooth_grad(self, x):
        return 2.0 * self.apply(self.apply(x) - self.target)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return self.smooth_value(x) + self.l1_weight * float(np.abs(x).sum())

    def subgradient(self, x):
        """Minimal-norm element of the l1 part at kinks (sign(0) = 0)."""
        x = np.asarray(x, dtype=float)
        return self.smooth_grad(x) + self.l1_weight * np.sign(x)

    def values(self, X):
        """Row-wise values for a batch ``X`` of shape ``(M, n)``."""
        X = np.asarray(X, dtype=float)
        R = (X @ self.factor.T) @ self.factor + self.ridge * X - self.target
        return np.einsum("...k,...k->...", R, R) + self.l1_weight * np.abs(X).sum(axis=-1) + self.offset

    def curvature_bound(self):
        """Lipschitz constant ``2 ||W||^2`` of the smooth part's gradient."""
        w = (np.linalg.norm(self.factor, 2) ** 2 if self.factor.size else 0.0) + self.ridge
        return 2.0 * w * w

    def to_dict(self):
        return {
            "factor": self.factor.tolist(),
            "ridge": self.ridge,
            "target": self.target.tolist(),
            "l1_weight": self.l1_weight,
            "offset": self.offset,
        }

    @classmethod
    def from_dict(cls, data):
        target = np.asarray(data["target"], dtype=float)
        factor = np.asarray(data["factor"], dtype=float).reshape(-1, target.size)
        return cls(factor, data["ridge"], target, data.get("l1_weight", 0.0), data.get("offset", 0.0))


# --------------------------------------------------------------------------
# local and network problems


@dataclass(frozen=True, eq=False)
class LocalProblem:
    cost: QuadraticL1
    ineq: tuple
    eq_matrix: np.ndarray
    eq_offset: np.ndarray
    generator: GeneratingFunction

    def __post_init__(self):
        n = self.generator.domain.dim
        A = np.asarray(self.eq_matrix, dtype=float).reshape(-1, n)
        b = np.asarray(self.eq_offset, dtype=float).reshape(-1)
        if A.shape[0] != b.size:
            raise ValueError(f"A has {A.shape[0]} rows but b has {b.size} entries")
        if self.cost.dim != n or any(g.dim != n for g in self.ineq):
            raise ValueError("cost/constraint dimension does not match the local set")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "eq_matrix", A)
        object.__setattr__(self, "eq_offset", b)
        object.__setattr__(self, "ineq", tuple(self.ineq))

    @property
    def set(self):
        return self.generator.domain

    @property
    def n(self):
        return self.generator.domain.dim

    @property
    def p(self):
        return len(self.ineq)

    @property
    def q(self):
        return self.eq_matrix.shape[0]

    def with_generator(self, generator):
        if generator.domain != self.set:
            raise ValueError("replacement generator must live on the same set")
        return LocalProblem(self.cost, self.ineq, self.eq_matrix, self.eq_offset, generator)

    def to_dict(self):
        return {
            "cost": self.cost.to_dict(),
            "ineq": [g.to_dict() for g in self.ineq],
            "A": self.eq_matrix.tolist(),
            "b": self.eq_offset.tolist(),
            "generator": self.generator.to_dict(),
        }

    @classmethod
    def from_dict(cls, data):
        gen = generating_function_from_dict(data["generator"])
        n = gen.domain.dim
        return cls(
            QuadraticL1.from_dict(data["cost"]),
            tuple(QuadraticL1.from_dict(g) for g in data.get("ineq", [])),
            np.asarray(data.get("A", []), dtype=float).reshape(-1, n),
            np.asarray(data.get("b", []), dtype=float),
            gen,
        )


def eval_cost(p: LocalProblem, x) -> float:
    return p.cost.value(x)


def subgrad_cost(p: LocalProblem, x) -> np.ndarray:
    return p.cost.subgradient(x)


def eval_ineq(p: LocalProblem, x) -> np.ndarray:
    return np.array([g.value(x) for g in p.ineq])


def subgrad_ineq(p: LocalProblem, x) -> np.ndarray:
    """``p x n`` matrix whose rows are subgradients of the components of ``g``."""
    return np.array([g.subgradient(x) for g in p.ineq]).reshape(p.p, p.n)


@dataclass(frozen=True)
class SlaterCertificate:
    point: np.ndarray
    slack: float
    eq_residual: float

    def to_dict(self):
        return {
            "point": np.asarray(self.point).tolist(),
            "slack": None if math.isinf(self.slack) else self.slack,
            "eq_residual": self.eq_residual,
        }

    @classmethod
    def from_dict(cls, data):
        slack = math.inf if data["slack"] is None else float(data["slack"])
        return cls(np.asarray(data["point"], dtype=float), slack, float(data["eq_residual"]))


class _Stacked:
    """Per-agent data of homogeneous ``QuadraticL1`` problems stacked along axis 0."""

    def __init__(self, agents):
        self.F = np.stack([a.cost.factor for a in agents])
        self.ridge = np.array([a.cost.ridge for a in agents])[:, None]
        self.d = np.stack([a.cost.target for a in agents])
        self.c = np.array([a.cost.l1_weight for a in agents])[:, None]
        self.off = np.array([a.cost.offset for a in agents])
        p = agents[0].p
        n = agents[0].n
        if p:
            self.gF = np.stack([np.stack([g.factor for g in a.ineq]) for a in agents])
            self.gridge = np.array([[g.ridge for g in a.ineq] for a in agents])[..., None]
            self.gd = np.stack([np.stack([g.target for g in a.ineq]) for a in agents])
            self.gc = np.array([[g.l1_weight for g in a.ineq] for a in agents])
            self.goff = np.array([[g.offset for g in a.ineq] for a in agents])
        else:
            N = len(agents)
            self.gF = np.zeros((N, 0, 0, n))
            self.gridge = np.zeros((N, 0, 1))
            self.gd = np.zeros((N, 0, n))
            self.gc = np.zeros((N, 0))
            self.goff = np.zeros((N, 0))
        self.A = np.stack([a.eq_matrix for a in agents])
        self.b = np.stack([a.eq_offset for a in agents])

    @staticmethod
    def compatible(agents):
        a0 = agents[0]
        r = a0.cost.factor.shape[0]
        gr = [g.factor.shape[0] for g in a0.ineq]
        return all(
            type(a.cost) is QuadraticL1
            and a.cost.factor.shape[0] == r
            and all(type(g) is QuadraticL1 for g in a.ineq)
            and [g.factor.shape[0] for g in a.ineq] == gr
            and len(set(gr)) <= 1
            for a in agents
        )

    def _W(self, X):
        return np.einsum("irn,ir->in", self.F, np.einsum("irn,in->ir", self.F, X)) + self.ridge * X

    def _gW(self, X):
        FX = np.einsum("ijrn,in->ijr", self.gF, X)
        return np.einsum("ijrn,ijr->ijn", self.gF, FX) + self.gridge * X[:, None, :]

    def cost_values(self, X):
        r = self._W(X) - self.d
        return np.einsum("in,in->i", r, r) + self.c[:, 0] * np.abs(X).sum(axis=1) + self.off

    def cost_subgradients(self, X):
        return 2.0 * self._W(self._W(X) - self.d) + self.c * np.sign(X)

    def ineq_values(self, X):
        r = self._gW(X) - self.gd
        return np.einsum("ijn,ijn->ij", r, r) + self.gc * np.abs(X).sum(axis=1)[:, None] + self.goff

    def ineq_subgradients(self, X):
        R = self._gW(X) - self.gd
        FR = np.einsum("ijrn,ijn->ijr", self.gF, R)
        WR = np.einsum("ijrn,ijr->ijn", self.gF, FR) + self.gridge * R
        return 2.0 * WR + self.gc[..., None] * np.sign(X)[:, None, :]


class NetworkProblem:
    """The distributed problem: ``N`` local problems over a connected graph."""

    def __init__(self, agents, graph: Graph, metadata=None, *, check_slater=False):
        agents = tuple(agents)
        if len(agents) != graph.n_agents:
            raise ValueError(f"{len(agents)} agents but the graph has {graph.n_agents} nodes")
        dims = {(a.n, a.p, a.q) for a in agents}
        if len(dims) != 1:
            raise ValueError(f"agents disagree on (n, p, q): {sorted(dims)}")
        if not is_connected(graph):
            raise ValueError("communication graph is not connected")
        self.agents = agents
        self.graph = graph
        self.n, self.p, self.q = dims.pop()
        self.metadata = dict(metadata or {})
        self._stack = _Stacked(agents) if _Stacked.compatible(agents) else None
        if check_slater and self.slater_certificate() is None:
            warnings.warn("no Slater point found at the local sets' interior points", stacklevel=2)

    @property
    def N(self):
        return len(self.agents)

    @cached_property
    def shared_generator(self):
        """The common generating function if all agents use the same one, else None."""
        g0 = self.agents[0].generator
        return g0 if all(a.generator.same_as(g0) for a in self.agents[1:]) else None

    @cached_property
    def eq_matrices(self):
        A = np.stack([a.eq_matrix for a in self.agents])
        A.setflags(write=False)
        return A

    @cached_property
    def eq_offsets(self):
        b = np.stack([a.eq_offset for a in self.agents])
        b.setflags(write=False)
        return b

    @cached_property
    def cost_l1_weights(self):
        return np.array([a.cost.l1_weight for a in self.agents])

    @cached_property
    def ineq_l1_weights(self):
        return np.array([[g.l1_weight for g in a.ineq] for a in self.agents]).reshape(self.N, self.p)

    def with_generators(self, make):
        """Copy with each agent's generating function replaced by ``make(local_set)``."""
        agents = [a.with_generator(make(a.set)) for a in self.agents]
        return NetworkProblem(agents, self.graph, self.metadata)

    # batched oracles; X has shape (N, n)

    def _as_blocks(self, X):
        X = np.asarray(X, dtype=float)
        if X.size != self.N * self.n:
            raise ValueError(f"expected {self.N * self.n} primal entries, got {X.size}")
        return X.reshape(self.N, self.n)

    def cost_values(self, X):
        X = self._as_blocks(X)
        if self._stack is not None:
            return self._stack.cost_values(X)
        return np.array([a.cost.value(x) for a, x in zip(self.agents, X)])

    def cost_subgradients(self, X):
        X = self._as_blocks(X)
        if self._stack is not None:
            return self._stack.cost_subgradients(X)
        return np.array([a.cost.subgradient(x) for a, x in zip(self.agents, X)])

    def ineq_values(self, X):
        X = self._as_blocks(X)
        if self._stack is not None:
            return self._stack.ineq_values(X)
        return np.array([eval_ineq(a, x) for a, x in zip(self.agents, X)]).reshape(self.N, self.p)

    def ineq_subgradients(self, X):
        X = self._as_blocks(X)
        if self._stack is not None:
            return self._stack.ineq_subgradients(X)
        return np.array([subgrad_ineq(a, x) for a, x in zip(self.agents, X)]).reshape(self.N, self.p, self.n)

    def eq_values(self, X):
        """Per-agent ``A_i x_i - b_i``, shape ``(N, q)``."""
        X = self._as_blocks(X)
        return np.einsum("iqn,in->iq", self.eq_matrices, X) - self.eq_offsets

    def objective(self, X):
        return float(self.cost_values(X).sum())

    def project(self, X):
        X = self._as_blocks(X)
        return np.array([a.set.project(x) for a, x in zip(self.agents, X)])

    def contains(self, X, tol=1e-9):
        X = self._as_blocks(X)
        return all(a.set.contains(x, tol) for a, x in zip(self.agents, X))

    def slater_certificate(self, point=None):
        """Certificate at ``point`` (default: each set's interior point) or None."""
        X = np.array([a.set.interior_point() for a in self.agents]) if point is None else self._as_blocks(point)
        eq = float(np.linalg.norm(self.eq_values(X).sum(axis=0))) if self.q else 0.0
        slack = float(np.min(-self.ineq_values(X).sum(axis=0))) if self.p else math.inf
        if slack > 0 and eq <= 1e-9 and self.contains(X):
            return SlaterCertificate(X, slack, eq)
        return None

    def to_dict(self):
        return {
            "graph": self.graph.to_dict(),
            "agents": [a.to_dict() for a in self.agents],
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            [LocalProblem.from_dict(a) for a in data["agents"]],
            Graph.from_dict(data["graph"]),
            data.get("metadata"),
        )


def equality_residual(net: NetworkProblem, x) -> np.ndarray:
    """``sum_i A_i x_i - sum_i b_i``."""
    return net.eq_values(x).sum(axis=0)


# --------------------------------------------------------------------------
# instance generation


@dataclass(frozen=True)
class SimplexFamilyParams:
    """Recorded defaults of the simplex-constrained experiment family.

    Cost ``||W_i x - d_i||^2 + c_i ||x||_1`` and inequality
    ``||x||^2 + c_i ||x||_1 - 25 / (2 n + i^2)`` (``i`` one-based), cycle graph.
    ``W_i = kappa (G^T G / n + ridge I)`` with ``G`` uniform(-1, 1) of shape
    ``min(n, rank_cap) x n`` and ``kappa = sqrt(n)`` unless given; ``d_i =
    W_i xt_i + noise * kappa / n * u`` with ``xt_i ~ Dirichlet(alpha)``;
    ``A_i ~ U(-a_scale, a_scale)``; ``b_i = A_i 1/n``.  ``c_i`` defaults to
    ``c_fraction * (sum_j 25/(2n+j^2) - N/n) / N``, which leaves a Slater
    margin at the uniform point.
    """

    q: int = 2
    rank_cap: int = 8
    curvature: float | None = None
    ridge: float = 1.0
    alpha: float = 5.0
    noise: float = 0.2
    a_scale: float = 2.5
    c_fraction: float = 0.8
    c: float | None = None
    generator: str = "entropy"
    edge_weight: float = 2.0

    def to_dict(self):
        return dict(self.__dict__)


def _budget(N, n):
    return np.array([25.0 / (2 * n + i * i) for i in range(1, N + 1)])


def generate_instance(seed: int, N: int, n: int, params: SimplexFamilyParams | None = None):
    """Seeded instance of the simplex family plus its Slater certificate."""
    if N < 2 or n < 1:
        raise ValueError("need N >= 2 agents and n >= 1")
    params = params or SimplexFamilyParams()
    rng = np.random.default_rng(seed)
    budget = _budget(N, n)
    if params.c is None:
        c = params.c_fraction * (budget.sum() - N / n) / N
        if c <= 0:
            raise InfeasibleInstanceError(f"no positive l1 weight keeps N={N}, n={n} Slater-feasible")
    else:
        c = float(params.c)
    kappa = math.sqrt(n) if params.curvature is None else float(params.curvature)
    r = min(n, params.rank_cap)
    simplex = UnitSimplex(n)
    if params.generator == "entropy":
        gen = Entropy(simplex)
    elif params.generator in ("quadratic", "projection"):
        gen = Quadratic(simplex)
    else:
        raise ValueError(f"unknown generator {params.generator!r}")

    x_bar = np.full(n, 1.0 / n)
    agents = []
    for i in range(N):
        G = rng.uniform(-1.0, 1.0, size=(r, n))
        xt = rng.dirichlet(np.full(n, params.alpha))
        u = rng.uniform(-1.0, 1.0, size=n)
        A = rng.uniform(-params.a_scale, params.a_scale, size=(params.q, n))
        cost = QuadraticL1(math.sqrt(kappa / n) * G, kappa * params.ridge, np.zeros(n), c)
        d = cost.apply(xt) + params.noise * kappa / n * u
        cost = QuadraticL1(cost.factor, cost.ridge, d, c)
        g = QuadraticL1(np.zeros((0, n)), 1.0, np.zeros(n), c, -budget[i])
        agents.append(LocalProblem(cost, (g,), A, A @ x_bar, gen))

    point = np.tile(x_bar, (N, 1))
    terms = np.array([a.ineq[0].value(x_bar) for a in agents])
    if terms.sum() >= 0:
        culprits = [i + 1 for i in np.flatnonzero(terms > 0)]
        raise InfeasibleInstanceError(
            f"Slater margin {-terms.sum():.4g} <= 0 at the uniform point; "
            f"agents {culprits} have positive g_i there"
        )
    graph = Graph.cycle(N, params.edge_weight)
    meta = {"family": "simplex", "seed": int(seed), "N": N, "n": n, "params": params.to_dict(), "l1_weight": c}
    net = NetworkProblem(agents, graph, meta)
    cert = net.slater_certificate(point)
    if cert is None:  # pragma: no cover - guarded by the margin check above
        raise InfeasibleInstanceError("generated instance has no Slater certificate")
    net.metadata["slater"] = cert.to_dict()
    log.debug("generated simplex instance seed=%s N=%s n=%s c=%.4g", seed, N, n, c)
    return net, cert


def scalar_regression_instance(c1=0.2, c2=0.6, generator="quadratic"):
    """Two scalar agents on [0, 1]: min (x1-c1)^2 + (x2-c2)^2 s.t. x1 + x2 = 1.

    With both targets interior and ``|c1 - c2| < 1`` the solution is
    ``x1 = (1 + c1 - c2) / 2``, ``x2 = (1 - c1 + c2) / 2`` with equality
    multiplier ``mu = c1 + c2 - 1``.
    """
    box = Box([0.0], [1.0])
    gen = Quadratic(box) if generator == "quadratic" else generating_function_from_dict(generator)
    agents = [
        LocalProblem(QuadraticL1(np.zeros((0, 1)), 1.0, [ci]), (), [[1.0]], [0.5], gen)
        for ci in (c1, c2)
    ]
    meta = {"family": "scalar2", "targets": [c1, c2]}
    return NetworkProblem(agents, Graph.cycle(2), meta)


def instance_to_dict(net: NetworkProblem):
    return {"format": "mdbd-instance", "version": 1, **net.to_dict()}


def instance_from_dict(data):
    if data.get("format") != "mdbd-instance":
        raise ValueError("not an instance document")
    return NetworkProblem.from_dict(data)
