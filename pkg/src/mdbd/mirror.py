"""Generating functions, Bregman divergences and mirror maps.

A mirror map sends a dual vector ``z`` to ``argmin_{x in Omega} -x.z + phi(x)``,
the gradient of the convex conjugate of ``phi`` restricted to ``Omega``.  Two
generating functions are provided: negative entropy on the unit simplex
(closed form softmax) and half the squared Euclidean norm on any of the
supported sets (Euclidean projection).

All array operations broadcast over leading axes, so a stack of per-agent
vectors of shape ``(N, n)`` can be mapped in one call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space
from scipy.special import xlogy

#: floor applied before taking logarithms of entropy arguments
ENTROPY_CLAMP = 1e-300

_DOMAIN_TOL = 1e-9


def _check_finite(z):
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("mirror map input must be finite")
    return z


def _check_dim(z, n):
    if z.shape[-1:] != (n,):
        raise ValueError(f"expected trailing dimension {n}, got shape {z.shape}")


# --------------------------------------------------------------------------
# constraint sets


class ConstraintSet:
    """Nonempty closed convex set with a cheap Euclidean projection."""

    kind = ""
    dim: int

    def project(self, z):
        raise NotImplementedError

    def contains(self, x, tol=1e-12):
        x = np.asarray(x, dtype=float)
        return bool(np.linalg.norm(x - self.project(x)) <= tol)

    def at_lower(self, x):
        """Mask of coordinates sitting on a coordinate-wise lower face."""
        return np.zeros(np.shape(x), dtype=bool)

    def at_upper(self, x):
        return np.zeros(np.shape(x), dtype=bool)

    def bounding_box(self):
        raise NotImplementedError

    def affine_hull(self):
        """Point and orthonormal basis ``(x0, Z)`` of the affine hull."""
        return np.zeros(self.dim), np.eye(self.dim)

    def sample(self, rng, size=None):
        raise NotImplementedError

    def interior_point(self):
        raise NotImplementedError

    def generic_qp_data(self):
        """Inequalities ``G x <= h`` and equalities ``A x = b`` describing the set."""
        raise NotImplementedError

    def to_dict(self):
        raise NotImplementedError

    def __eq__(self, other):
        return type(self) is type(other) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(repr(self.to_dict()))


class UnitSimplex(ConstraintSet):
    kind = "unit_simplex"

    def __init__(self, dim):
        if dim < 1:
            raise ValueError("simplex dimension must be positive")
        self.dim = int(dim)

    def __repr__(self):
        return f"UnitSimplex({self.dim})"

    def project(self, z):
        # sort-and-threshold, O(n log n) along the last axis
        z = np.asarray(z, dtype=float)
        _check_dim(z, self.dim)
        u = -np.sort(-z, axis=-1)
        css = np.cumsum(u, axis=-1) - 1.0
        k = np.arange(1, self.dim + 1, dtype=float)
        cond = u - css / k > 0
        rho = self.dim - 1 - np.argmax(cond[..., ::-1], axis=-1)
        theta = np.take_along_axis(css, rho[..., None], axis=-1) / (rho[..., None] + 1.0)
        return np.maximum(z - theta, 0.0)

    def contains(self, x, tol=1e-12):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= -tol) and np.all(np.abs(x.sum(axis=-1) - 1.0) <= max(tol, 1e-12)))

    def at_lower(self, x):
        return np.asarray(x) <= 0.0

    def bounding_box(self):
        return np.zeros(self.dim), np.ones(self.dim)

    def affine_hull(self):
        x0 = np.full(self.dim, 1.0 / self.dim)
        return x0, null_space(np.ones((1, self.dim)))

    def sample(self, rng, size=None):
        return rng.dirichlet(np.ones(self.dim), size=size)

    def interior_point(self):
        return np.full(self.dim, 1.0 / self.dim)

    def generic_qp_data(self):
        n = self.dim
        return -np.eye(n), np.zeros(n), np.ones((1, n)), np.ones(1)

    def to_dict(self):
        return {"kind": self.kind, "dim": self.dim}


class NonnegativeOrthant(ConstraintSet):
    kind = "nonnegative_orthant"

    def __init__(self, dim):
        self.dim = int(dim)

    def __repr__(self):
        return f"NonnegativeOrthant({self.dim})"

    def project(self, z):
        z = np.asarray(z, dtype=float)
        _check_dim(z, self.dim)
        return np.maximum(z, 0.0)

    def at_lower(self, x):
        return np.asarray(x) <= 0.0

    def bounding_box(self):
        raise ValueError("the nonnegative orthant is unbounded")

    def sample(self, rng, size=None):
        shape = (self.dim,) if size is None else (*np.atleast_1d(size), self.dim)
        return rng.exponential(size=shape)

    def interior_point(self):
        return np.ones(self.dim)

    def generic_qp_data(self):
        n = self.dim
        return -np.eye(n), np.zeros(n), np.zeros((0, n)), np.zeros(0)

    def to_dict(self):
        return {"kind": self.kind, "dim": self.dim}


class Box(ConstraintSet):
    kind = "box"

    def __init__(self, lower, upper):
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("box bounds must be 1-d arrays of equal length")
        if np.any(lower > upper) or np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
            raise ValueError("empty box")
        self.lower, self.upper = lower, upper
        self.dim = lower.size

    def __repr__(self):
        return f"Box({self.lower.tolist()}, {self.upper.tolist()})"

    def project(self, z):
        z = np.asarray(z, dtype=float)
        _check_dim(z, self.dim)
        return np.clip(z, self.lower, self.upper)

    def at_lower(self, x):
        return np.asarray(x) <= self.lower

    def at_upper(self, x):
        return np.asarray(x) >= self.upper

    def bounding_box(self):
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise ValueError("box is unbounded")
        return self.lower.copy(), self.upper.copy()

    def sample(self, rng, size=None):
        lo, hi = self.bounding_box()
        shape = (self.dim,) if size is None else (*np.atleast_1d(size), self.dim)
        return rng.uniform(lo, hi, size=shape)

    def interior_point(self):
        lo = np.where(np.isfinite(self.lower), self.lower, np.minimum(self.upper, 0.0) - 1.0)
        hi = np.where(np.isfinite(self.upper), self.upper, np.maximum(self.lower, 0.0) + 1.0)
        return 0.5 * (lo + hi)

    def generic_qp_data(self):
        eye = np.eye(self.dim)
        up, lo = np.isfinite(self.upper), np.isfinite(self.lower)
        G = np.vstack([eye[up], -eye[lo]])
        h = np.concatenate([self.upper[up], -self.lower[lo]])
        return G, h, np.zeros((0, self.dim)), np.zeros(0)

    def to_dict(self):
        return {"kind": self.kind, "lower": self.lower.tolist(), "upper": self.upper.tolist()}


class Ball(ConstraintSet):
    kind = "ball"

    def __init__(self, center, radius):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.radius = float(radius)
        if self.radius < 0 or self.center.ndim != 1:
            raise ValueError("ball needs a 1-d center and nonnegative radius")
        self.dim = self.center.size

    def __repr__(self):
        return f"Ball({self.center.tolist()}, {self.radius})"

    def project(self, z):
        z = np.asarray(z, dtype=float)
        _check_dim(z, self.dim)
        d = z - self.center
        norm = np.linalg.norm(d, axis=-1, keepdims=True)
        scale = np.where(norm > self.radius, self.radius / np.where(norm > 0, norm, 1.0), 1.0)
        return self.center + d * scale

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    def sample(self, rng, size=None):
        shape = (self.dim,) if size is None else (*np.atleast_1d(size), self.dim)
        v = rng.normal(size=shape)
        v /= np.linalg.norm(v, axis=-1, keepdims=True)
        r = self.radius * rng.uniform(size=shape[:-1] + (1,)) ** (1.0 / self.dim)
        return self.center + r * v

    def interior_point(self):
        return self.center.copy()

    def to_dict(self):
        return {"kind": self.kind, "center": self.center.tolist(), "radius": self.radius}


_SETS = {cls.kind: cls for cls in (UnitSimplex, NonnegativeOrthant, Box, Ball)}


def constraint_set_from_dict(data):
    kind = data["kind"]
    if kind in ("unit_simplex", "nonnegative_orthant"):
        return _SETS[kind](data["dim"])
    if kind == "box":
        return Box(data["lower"], data["upper"])
    if kind == "ball":
        return Ball(data["center"], data["radius"])
    raise ValueError(f"unknown constraint set kind {kind!r}")


# --------------------------------------------------------------------------
# Euclidean projection, fast and generic


def euclidean_project(cset: ConstraintSet, z, mode="fast"):
    """Euclidean projection of ``z`` onto ``cset``.

    ``mode="fast"`` uses the closed form (sort-and-threshold for the simplex,
    clamping for boxes and orthants, radial scaling for balls).
    ``mode="generic-qp"`` hands the same problem to a general-purpose
    interior-point QP solver, one vector at a time; it exists to reproduce the
    cost profile of projection-based methods that do not exploit the set's
    structure.
    """
    if mode == "fast":
        return cset.project(z)
    if mode == "generic-qp":
        z = np.asarray(z, dtype=float)
        _check_dim(z, cset.dim)
        flat = z.reshape(-1, cset.dim)
        out = np.stack([_generic_qp_project(cset, row) for row in flat])
        return out.reshape(z.shape)
    raise ValueError(f"unknown projection mode {mode!r}")


_QP_OPTIONS = {"show_progress": False, "abstol": 1e-9, "reltol": 1e-9, "feastol": 1e-9, "maxiters": 100}


def _generic_qp_project(cset, z):
    from cvxopt import matrix, solvers

    n = cset.dim
    P = matrix(np.eye(n))
    q = matrix(-z)
    if isinstance(cset, Ball):
        # ||x - c|| <= r as a second-order cone
        G = matrix(np.vstack([np.zeros((1, n)), -np.eye(n)]))
        h = matrix(np.concatenate([[cset.radius], -cset.center]))
        sol = solvers.coneqp(P, q, G, h, dims={"l": 0, "q": [n + 1], "s": []}, options=_QP_OPTIONS)
    else:
        G, h, A, b = cset.generic_qp_data()
        args = [P, q, matrix(G), matrix(h)]
        if A.shape[0]:
            args += [matrix(A), matrix(b)]
        sol = solvers.qp(*args, options=_QP_OPTIONS)
    return _snap_to_faces(cset, np.array(sol["x"]).ravel())


def _snap_to_faces(cset, x, tol=1e-8):
    """Remove interior-point residue so active faces hold exactly.

    Without this, coordinates that should be zero come back as ``~1e-11`` and
    flip the sign-based l1 subgradient selection.
    """
    if isinstance(cset, UnitSimplex):
        x = np.where(x <= tol, 0.0, x)
        return x / x.sum()
    if isinstance(cset, NonnegativeOrthant):
        return np.where(x <= tol, 0.0, x)
    if isinstance(cset, Box):
        x = np.where(x - cset.lower <= tol, cset.lower, x)
        return np.where(cset.upper - x <= tol, cset.upper, x)
    return cset.project(x)


# --------------------------------------------------------------------------
# generating functions


@dataclass(frozen=True, eq=False)
class GeneratingFunction:
    """Strongly convex differentiable ``phi`` paired with its domain."""

    domain: ConstraintSet

    kind = ""

    def value(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def mirror_map(self, z):
        raise NotImplementedError

    def check_domain(self, x):
        x = np.asarray(x, dtype=float)
        _check_dim(x, self.domain.dim)
        if not self.domain.contains(x, tol=_DOMAIN_TOL):
            raise ValueError(f"point outside {self.domain!r}")
        return x

    def same_as(self, other):
        return type(self) is type(other) and self.to_dict() == other.to_dict()

    def to_dict(self):
        return {"kind": self.kind, "domain": self.domain.to_dict()}


@dataclass(frozen=True, eq=False)
class Entropy(GeneratingFunction):
    """Negative entropy ``sum_k x_k log x_k`` on the unit simplex (0 log 0 = 0)."""

    kind = "entropy"

    def __post_init__(self):
        if not isinstance(self.domain, UnitSimplex):
            raise ValueError("the entropy generating function is only defined on a unit simplex")

    def value(self, x):
        return xlogy(x, x).sum(axis=-1)

    def gradient(self, x):
        return 1.0 + np.log(np.maximum(x, ENTROPY_CLAMP))

    def mirror_map(self, z):
        z = _check_finite(z)
        _check_dim(z, self.domain.dim)
        e = np.exp(z - z.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)

    def conjugate(self, z):
        """``max_{x in simplex} x.z - phi(x)``, i.e. log-sum-exp."""
        z = np.asarray(z, dtype=float)
        m = z.max(axis=-1)
        return m + np.log(np.exp(z - m[..., None]).sum(axis=-1))


@dataclass(frozen=True, eq=False)
class Quadratic(GeneratingFunction):
    """Half squared norm; its mirror map is the Euclidean projection."""

    projection: str = "fast"

    kind = "quadratic"

    def value(self, x):
        return 0.5 * np.sum(np.square(x), axis=-1)

    def gradient(self, x):
        return np.array(x, dtype=float)

    def mirror_map(self, z):
        z = _check_finite(z)
        return euclidean_project(self.domain, z, self.projection)

    def conjugate(self, z):
        x = self.mirror_map(z)
        return np.sum(x * z, axis=-1) - self.value(x)

    def to_dict(self):
        return {"kind": self.kind, "domain": self.domain.to_dict(), "projection": self.projection}


def generating_function_from_dict(data):
    domain = constraint_set_from_dict(data["domain"])
    if data["kind"] == "entropy":
        return Entropy(domain)
    if data["kind"] == "quadratic":
        return Quadratic(domain, data.get("projection", "fast"))
    raise ValueError(f"unknown generating function {data['kind']!r}")


def mirror_map(f: GeneratingFunction, z):
    """``argmin_{x in domain} -x.z + phi(x)``."""
    return f.mirror_map(z)


def damping(f: GeneratingFunction, x):
    """Gradient of the generating function, the Bregman damping term."""
    return f.gradient(np.asarray(x, dtype=float))


def bregman_divergence(f: GeneratingFunction, x, y) -> float:
    """``phi(x) - phi(y) - grad phi(y).(x - y)``, nonnegative."""
    x = f.check_domain(x)
    y = f.check_domain(y)
    d = f.value(x) - f.value(y) - np.dot(f.gradient(y), x - y)
    # rounding can leave tiny negatives when x == y
    return max(float(d), 0.0) if math.isfinite(d) else float(d)
