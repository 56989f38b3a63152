"""Centralized reference solvers used as ground truth.

Two unrelated routes are provided:

* :func:`solve_reference` runs a centralized projected primal-dual
  subgradient method with diminishing steps, then polishes the shared
  multipliers with a semismooth Newton iteration on the dual natural
  residual.  Each dual evaluation solves the per-agent Lagrangian
  subproblems exactly with an accelerated proximal-gradient method.
* :func:`mesh_search` exhaustively scans a grid over the (at most
  three-dimensional) affine hull of the feasible set, refining around the
  best node.

Neither route touches the dynamics module.
"""

from __future__ import annotations

import itertools
import logging

import numpy as np
from scipy.linalg import null_space

from .graph import laplacian
from .mirror import Ball, Box, NonnegativeOrthant, UnitSimplex
from .saddle import SaddlePoint, kkt_residual, stationary_state
from .state import Layout

log = logging.getLogger(__name__)


class OracleError(RuntimeError):
    """The reference solver missed its tolerance; ``best_residual`` says by how much."""

    def __init__(self, message, best_residual=None, partial=None):
        super().__init__(message)
        self.best_residual = best_residual
        self.partial = partial


class NoFeasibleNodeError(ValueError):
    """No mesh node satisfies the constraints (NO_FEASIBLE_NODE)."""

    code = "NO_FEASIBLE_NODE"


# --------------------------------------------------------------------------
# per-agent Lagrangian subproblems


def _soft(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def prox_l1_on_set(cset, v, t, iters=2000, tol=1e-15):
    """``argmin_{x in cset} 0.5 ||x - v||^2 + t ||x||_1``."""
    if t == 0:
        return cset.project(v)
    if isinstance(cset, UnitSimplex):
        return cset.project(v)  # ||x||_1 is constant on the simplex
    if isinstance(cset, NonnegativeOrthant):
        return np.maximum(v - t, 0.0)
    if isinstance(cset, Box):
        return np.clip(_soft(v, t), cset.lower, cset.upper)
    if isinstance(cset, Ball) and not np.any(cset.center):
        return cset.project(_soft(v, t))
    # Dykstra-type splitting for the remaining cases
    x, p, q = np.array(v, dtype=float), np.zeros_like(v), np.zeros_like(v)
    for _ in range(iters):
        y = _soft(x + p, t)
        p = x + p - y
        x_new = cset.project(y + q)
        q = y + q - x_new
        if np.linalg.norm(x_new - x) <= tol * (1.0 + np.linalg.norm(x)):
            return x_new
        x = x_new
    return x


class _AgentSubproblem:
    """``min_{x in Omega} f(x) + lam.g(x) + mu.(A x)`` for one agent."""

    def __init__(self, agent):
        self.agent = agent
        self.cost_lip = agent.cost.curvature_bound()
        self.ineq_lip = np.array([g.curvature_bound() for g in agent.ineq])

    def _grad(self, x, lam, mu):
        a = self.agent
        g = a.cost.smooth_grad(x) + a.eq_matrix.T @ mu
        for lj, gj in zip(lam, a.ineq):
            if lj:
                g = g + lj * gj.smooth_grad(x)
        return g

    def solve(self, lam, mu, x0=None, tol=1e-13, max_iter=50000):
        a = self.agent
        w = a.cost.l1_weight + sum(lj * gj.l1_weight for lj, gj in zip(lam, a.ineq))
        lip = self.cost_lip + float(np.dot(lam, self.ineq_lip))
        step = 1.0 / lip
        x = a.set.interior_point() if x0 is None else np.array(x0, dtype=float)
        v, theta = x.copy(), 1.0
        for _ in range(max_iter):
            gv = self._grad(v, lam, mu)
            x_new = prox_l1_on_set(a.set, v - step * gv, step * w)
            # gradient-mapping stationarity at the extrapolated point
            if np.linalg.norm(v - x_new) * lip <= tol * max(1.0, np.linalg.norm(gv)):
                return x_new
            theta_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * theta * theta))
            if np.dot(v - x_new, x_new - x) > 0:  # adaptive restart
                theta_new, v = 1.0, x_new.copy()
            else:
                v = x_new + ((theta - 1.0) / theta_new) * (x_new - x)
            x, theta = x_new, theta_new
        log.debug("inner solve hit the iteration cap")
        return x


class _Dual:
    """Dual natural residual over consensus multipliers ``u = (lam, mu)``."""

    def __init__(self, net, inner_tol):
        self.net = net
        self.subs = [_AgentSubproblem(a) for a in net.agents]
        self.b = net.eq_offsets.sum(axis=0)
        self.inner_tol = inner_tol
        self.X = np.array([a.set.interior_point() for a in net.agents])
        self.evals = 0

    def split(self, u):
        p = self.net.p
        return u[:p], u[p:]

    def primal(self, u, warm=True):
        lam, mu = self.split(u)
        X = np.array([s.solve(lam, mu, x0 if warm else None, self.inner_tol) for s, x0 in zip(self.subs, self.X)])
        self.X = X
        self.evals += 1
        return X

    def residual(self, u, X=None):
        lam, _ = self.split(u)
        X = self.primal(u) if X is None else X
        sg = self.net.ineq_values(X).sum(axis=0)
        se = np.einsum("iqn,in->q", self.net.eq_matrices, X) - self.b
        return np.concatenate([lam - np.maximum(lam + sg, 0.0), se]), X


def _subgradient_warm_start(net, iters, a, b):
    """Centralized projected primal-dual subgradient method, step ``a / (k + b)``."""
    X = np.array([ag.set.interior_point() for ag in net.agents])
    lam = np.zeros(net.p)
    mu = np.zeros(net.q)
    bsum = net.eq_offsets.sum(axis=0)
    A = net.eq_matrices
    for k in range(iters):
        step = a / (k + b)
        gx = net.cost_subgradients(X) + np.einsum("ipn,p->in", net.ineq_subgradients(X), lam)
        gx += np.einsum("iqn,q->in", A, mu)
        gsum = net.ineq_values(X).sum(axis=0)
        esum = np.einsum("iqn,in->q", A, X) - bsum
        X = net.project(X - step * gx)
        lam = np.maximum(lam + step * gsum, 0.0)
        mu = mu + step * esum
    return X, np.concatenate([lam, mu])


def _newton_polish(dual, u, tol, max_iter, fd_step=1e-7):
    p = dual.net.p
    R, X = dual.residual(u)
    best = (np.linalg.norm(R), u.copy(), X)
    for it in range(max_iter):
        r = np.linalg.norm(R)
        if r <= tol:
            break
        m = u.size
        J = np.empty((m, m))
        X_base = dual.X.copy()
        for j in range(m):
            e = np.zeros(m)
            e[j] = fd_step * max(1.0, abs(u[j]))
            Rp, _ = dual.residual(u + e)
            dual.X = X_base
            J[:, j] = (Rp - R) / e[j]
        d = np.linalg.lstsq(J, -R, rcond=None)[0]
        alpha = 1.0
        while alpha > 1e-6:
            cand = u + alpha * d
            cand[:p] = np.maximum(cand[:p], 0.0)
            Rc, Xc = dual.residual(cand)
            if np.linalg.norm(Rc) < (1.0 - 1e-4 * alpha) * r:
                break
            dual.X = X_base
            alpha *= 0.5
        else:
            # no descent along the Newton direction: fall back to a projected ascent step
            ascent = np.concatenate([-R[:p], R[p:]])
            cand = u + 0.1 * ascent
            cand[:p] = np.maximum(cand[:p], 0.0)
            Rc, Xc = dual.residual(cand)
        u, R, X = cand, Rc, Xc
        if np.linalg.norm(R) < best[0]:
            best = (np.linalg.norm(R), u.copy(), X)
        log.debug("newton iter %d residual %.3e step %.3g", it, np.linalg.norm(R), alpha)
    return best


def _consensus_point(net, X, u):
    """Assemble ``z*`` from primal blocks and shared multipliers."""
    N, p = net.N, net.p
    lam, mu = u[:p], u[p:]
    Lpinv = np.linalg.pinv(laplacian(net.graph))
    g = net.ineq_values(X)
    e = net.eq_values(X)
    om = Lpinv @ (g - g.mean(axis=0))
    nu = Lpinv @ (e - e.mean(axis=0))
    layout = Layout.of(net)
    return layout.pack(X, np.tile(lam, (N, 1)), np.tile(mu, (N, 1)), om, nu)


def solve_reference(net, tol=1e-7, *, warm_iters=2000, step_a=0.5, step_b=10.0,
                    newton_iters=60, inner_tol=1e-13):
    """Saddle point of the network Lagrangian with ``kkt_residual <= tol``.

    Raises :class:`OracleError` carrying the best residual reached if the
    tolerance is not met.
    """
    X0, u0 = _subgradient_warm_start(net, warm_iters, step_a, step_b)
    dual = _Dual(net, inner_tol)
    dual.X = X0
    res, u, X = _newton_polish(dual, u0, 0.1 * tol, newton_iters)
    z = _consensus_point(net, X, u)
    kkt = kkt_residual(net, z)
    provenance = {
        "method": "projected primal-dual subgradient + dual semismooth Newton polish",
        "step_schedule": {"a": step_a, "b": step_b, "iterations": warm_iters},
        "newton_iterations_max": newton_iters,
        "inner_tol": inner_tol,
        "dual_residual": float(res),
        "kkt_residual": float(kkt),
        "tolerance": tol,
        "seed": net.metadata.get("seed"),
        "dual_evaluations": dual.evals,
    }
    s = stationary_state(net, z)
    sp = SaddlePoint(Layout.of(net), z, s, net.objective(X), provenance)
    if not kkt <= tol:
        raise OracleError(f"reference solve reached kkt residual {kkt:.3e} > {tol:.1e}", kkt, sp)
    return sp


# --------------------------------------------------------------------------
# mesh search


def _grid(center, half, resolution):
    axes = [np.linspace(c - h, c + h, resolution) for c, h in zip(center, half)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(center))


def mesh_minimize(objective, feasible, origin, basis, radius, resolution=41, levels=8, window=2,
                  max_moves=200):
    """Minimize ``objective(origin + t @ basis.T)`` over a grid in ``t``, then zoom.

    ``objective`` and ``feasible`` act on batches of points, shape
    ``(M, dim)``.  The first grid spans ``[-radius, radius]`` per
    coordinate.  Whenever the best feasible node lies on the outer ring of
    the current window the window is re-centred there at the same spacing;
    otherwise the spacing shrinks to ``window`` cells around the best node.
    Raises :class:`NoFeasibleNodeError` if the first grid has no feasible
    node.
    """
    m = basis.shape[1]
    if m == 0:
        pt = origin[None, :]
        if not feasible(pt)[0]:
            raise NoFeasibleNodeError("the unique candidate point is infeasible")
        return origin.copy()
    if resolution % 2 == 0:
        raise ValueError("resolution must be odd so the window centre is a node")
    center = np.zeros(m)
    half = np.full(m, float(radius))
    best = None
    shape = (resolution,) * m
    level = moves = 0
    while level <= levels:
        T = _grid(center, half, resolution)
        P = origin + T @ basis.T
        ok = feasible(P)
        if not ok.any():
            if best is None:
                raise NoFeasibleNodeError("no mesh node satisfies the constraints")
            break
        vals = np.where(ok, objective(P), np.inf)
        k = int(np.argmin(vals))
        improved = best is None or vals[k] < best[0]
        if improved:
            best = (vals[k], T[k], P[k])
        center = best[1]
        on_ring = any(i in (0, resolution - 1) for i in np.unravel_index(k, shape))
        if improved and on_ring and level > 0 and moves < max_moves:
            moves += 1
            continue
        half = window * (2.0 * half / (resolution - 1))
        level += 1
    return best[2]


def _set_radius(origin, lo, hi):
    return float(np.linalg.norm(hi - lo) + np.linalg.norm(np.clip(origin, lo, hi) - origin))


def _contains_rows(cset, P, tol):
    return np.linalg.norm(P - cset.project(P), axis=-1) <= tol


def mesh_search(net, resolution=41, levels=8, window=2, tol=1e-10):
    """Exhaustive feasible-grid minimizer of ``sum f_i`` for tiny problems.

    The grid lives on the affine subspace cut out by every equality (each
    set's affine hull and the coupled equality), so nodes satisfy the
    equalities exactly; local sets and the summed inequality are checked per
    node.  Returns the primal blocks, shape ``(N, n)``.
    """
    N, n = net.N, net.n
    hulls = [a.set.affine_hull() for a in net.agents]
    x0 = np.concatenate([h[0] for h in hulls])
    Z = np.zeros((N * n, sum(h[1].shape[1] for h in hulls)))
    col = 0
    for i, (_, Zi) in enumerate(hulls):
        Z[i * n:(i + 1) * n, col:col + Zi.shape[1]] = Zi
        col += Zi.shape[1]
    if net.q:
        E = np.concatenate(list(net.eq_matrices), axis=1)
        rhs = net.eq_offsets.sum(axis=0) - E @ x0
        EZ = E @ Z
        t0 = np.linalg.lstsq(EZ, rhs, rcond=None)[0]
        if np.linalg.norm(EZ @ t0 - rhs) > 1e-9:
            raise NoFeasibleNodeError("coupled equality cannot hold on the local affine hulls")
        x0 = x0 + Z @ t0
        Z = Z @ null_space(EZ)
    if Z.shape[1] > 3:
        raise ValueError(f"mesh search supports at most 3 free dimensions, got {Z.shape[1]}")
    boxes = [a.set.bounding_box() for a in net.agents]
    lo = np.concatenate([b[0] for b in boxes])
    hi = np.concatenate([b[1] for b in boxes])

    def blocks(P):
        return P.reshape(-1, N, n)

    def objective(P):
        B = blocks(P)
        return sum(a.cost.values(B[:, i]) for i, a in enumerate(net.agents))

    def feasible(P):
        B = blocks(P)
        ok = np.ones(len(P), dtype=bool)
        for i, a in enumerate(net.agents):
            ok &= _contains_rows(a.set, B[:, i], tol)
        if net.p:
            g = sum(np.stack([gj.values(B[:, i]) for gj in a.ineq], axis=-1) for i, a in enumerate(net.agents))
            ok &= np.all(g <= 0.0, axis=-1)
        return ok

    x = mesh_minimize(objective, feasible, x0, Z, _set_radius(x0, lo, hi), resolution, levels, window)
    return x.reshape(N, n)


def _polytope_faces(cset):
    """``(fixed_mask, fixed_values)`` for every face of a simplex or bounded box."""
    n = cset.dim
    if isinstance(cset, UnitSimplex):
        for code in range(2**n - 1):
            mask = np.array([(code >> i) & 1 for i in range(n)], dtype=bool)
            yield mask, np.zeros(n)
    elif isinstance(cset, Box):
        lo, hi = cset.bounding_box()
        for code in itertools.product((0, 1, 2), repeat=n):
            code = np.array(code)
            yield code > 0, np.where(code == 1, lo, hi)
    else:
        yield np.zeros(n, dtype=bool), np.zeros(n)


def _face_hull(cset, mask, values):
    n = cset.dim
    free = np.flatnonzero(~mask)
    x0 = np.where(mask, values, 0.0)
    Z = np.eye(n)[:, free]
    if isinstance(cset, UnitSimplex):
        if free.size == 0:
            return None
        x0[free] = 1.0 / free.size
        Z = Z @ null_space(np.ones((1, free.size)))
    elif isinstance(cset, Box):
        x0[free] = 0.5 * (cset.lower[free] + cset.upper[free])
    else:
        x0, Z = cset.affine_hull()
    return x0, Z


def mesh_mirror_map(generator, z, resolution=41, levels=8, window=2, tol=1e-12):
    """Grid minimizer of ``-x.z + phi(x)`` over the generating function's domain.

    For simplices and boxes each face is searched on its own affine hull, so
    a minimizer sitting on a face is found as an interior point of a
    lower-dimensional search.
    """
    cset = generator.domain
    if cset.dim > 3:
        raise ValueError("mesh mirror map supports dimension <= 3")
    lo, hi = cset.bounding_box()

    def objective(P):
        return generator.value(P) - P @ z

    def feasible(P):
        return _contains_rows(cset, P, tol)

    best, best_val = None, np.inf
    for mask, values in _polytope_faces(cset):
        hull = _face_hull(cset, mask, values)
        if hull is None:
            continue
        x0, Z = hull
        try:
            x = mesh_minimize(objective, feasible, x0, Z, _set_radius(x0, lo, hi), resolution, levels, window)
        except NoFeasibleNodeError:
            continue
        v = float(objective(x[None, :])[0])
        if v < best_val:
            best, best_val = x, v
    if best is None:
        raise NoFeasibleNodeError("no face of the domain has a feasible mesh node")
    return best
