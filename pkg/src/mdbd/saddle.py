"""Lagrangian, the monotone operator F, KKT residuals and saddle-point records."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .graph import laplacian_apply
from .state import Layout, OutputState, StackedState, as_flat

log = logging.getLogger(__name__)


def _blocks(net, z):
    layout = Layout.of(net)
    return layout, layout.views(as_flat(z, layout))


def lagrangian(net, z) -> float:
    """``sum f_i + sum lam_i.(g_i - (L omega)_i) + sum mu_i.(A_i x_i - b_i - (L nu)_i)``."""
    _, (X, lam, mu, om, nu) = _blocks(net, z)
    g = net.ineq_values(X)
    e = net.eq_values(X)
    value = net.cost_values(X).sum()
    value += np.sum(lam * (g - laplacian_apply(net.graph, om)))
    value += np.sum(mu * (e - laplacian_apply(net.graph, nu)))
    return float(value)


def F_eval(net, z, primal_subgradient=None) -> np.ndarray:
    """One selection of the operator ``F(z)`` as a flat vector.

    Blocks, in order: ``df_i + dg_i^T lam_i + A_i^T mu_i``,
    ``-g_i + (L omega)_i``, ``-(A_i x_i - b_i) + (L nu)_i``, ``-(L lam)_i`` and
    ``-(L mu)_i``.  Subgradients use the minimal-norm kink selection unless
    ``primal_subgradient`` (the ``(N, n)`` cost part) is given.
    """
    layout, (X, lam, mu, om, nu) = _blocks(net, z)
    sf = net.cost_subgradients(X) if primal_subgradient is None else primal_subgradient
    sg = net.ineq_subgradients(X)
    Fx = sf + np.matmul(lam[:, None, :], sg)[:, 0, :] + np.matmul(mu[:, None, :], net.eq_matrices)[:, 0, :]
    Fl = laplacian_apply(net.graph, om) - net.ineq_values(X)
    Fm = laplacian_apply(net.graph, nu) - net.eq_values(X)
    return layout.pack(Fx, Fl, Fm, -laplacian_apply(net.graph, lam), -laplacian_apply(net.graph, mu))


def mirror_gradient(net, z) -> np.ndarray:
    """``grad Phi(z) = (grad phi_i(x_i), lam, mu, omega, nu)``."""
    layout, (X, *rest) = _blocks(net, z)
    gen = net.shared_generator
    if gen is not None:
        gx = gen.gradient(X)
    else:
        gx = np.array([a.generator.gradient(x) for a, x in zip(net.agents, X)])
    return layout.pack(gx, *rest)


def stationary_state(net, z) -> np.ndarray:
    """The mirror-space point ``-F(z) + grad Phi(z)`` paired with an output ``z``."""
    return mirror_gradient(net, z) - F_eval(net, z)


def _favorable_l1_selection(net, X, lam):
    """Cost-plus-constraint l1 kink selection that best certifies optimality.

    At a zero coordinate the l1 subgradient can be any value in
    ``[-w, w]``.  On a lower face we pick ``+w``, on an upper face ``-w``, and
    otherwise the value cancelling the remaining smooth part as far as
    possible.  Returns the adjusted cost part of ``F_x``.
    """
    sf = net.cost_subgradients(X)
    zero = X == 0.0
    if not zero.any():
        return sf
    w = net.cost_l1_weights[:, None] + (net.ineq_l1_weights * lam).sum(axis=1)[:, None]
    w = np.broadcast_to(w, X.shape)
    sg = net.ineq_subgradients(X)
    rest = sf + np.matmul(lam[:, None, :], sg)[:, 0, :]
    safe_w = np.where(w > 0, w, 1.0)
    choice = np.clip(-rest / safe_w, -1.0, 1.0)
    for i, a in enumerate(net.agents):
        choice[i][a.set.at_lower(X[i])] = 1.0
        choice[i][a.set.at_upper(X[i])] = -1.0
    return sf + np.where(zero, w * choice, 0.0)


def kkt_residual(net, z, feasibility_tol=1e-9) -> float:
    """Norm of the natural-map residual of ``-F(z) in N_Theta(z)``.

    The primal blocks use the Euclidean form ``x - P_Omega(x - F_x)``, the
    inequality multipliers ``lam - [lam - F_lam]^+``, and the remaining
    (unconstrained) blocks ``F`` itself.  Zero exactly at saddle points.
    """
    layout, (X, lam, mu, om, nu) = _blocks(net, z)
    if not net.contains(X, feasibility_tol):
        raise ValueError("primal blocks lie outside the local sets")
    if lam.size and lam.min() < -feasibility_tol:
        raise ValueError("inequality multipliers must be nonnegative")
    lam = np.maximum(lam, 0.0)
    sf = _favorable_l1_selection(net, X, lam)
    zz = layout.pack(X, lam, mu, om, nu)
    Fx, Fl, Fm, Fo, Fn = layout.views(F_eval(net, zz, primal_subgradient=sf))
    rx = X - net.project(X - Fx)
    rl = lam - np.maximum(lam - Fl, 0.0)
    return float(np.sqrt(sum(np.sum(r * r) for r in (rx, rl, Fm, Fo, Fn))))


@dataclass
class SaddlePoint:
    """Reference primal-dual point ``z*`` with a matching mirror-space state ``s*``."""

    layout: Layout
    z_star: np.ndarray
    s_star: np.ndarray
    optimal_value: float
    provenance: dict = field(default_factory=dict)

    @property
    def output(self) -> OutputState:
        return OutputState(self.layout, self.z_star)

    @property
    def state(self) -> StackedState:
        return StackedState(self.layout, self.s_star)

    @property
    def x(self):
        return self.output.x

    def to_dict(self):
        return {
            "format": "mdbd-saddle",
            "version": 1,
            "layout": {"N": self.layout.N, "n": self.layout.n, "p": self.layout.p, "q": self.layout.q},
            "z_star": {k: v.tolist() for k, v in self.output.blocks().items()},
            "s_star": {k: v.tolist() for k, v in self.state.blocks().items()},
            "optimal_value": self.optimal_value,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("format") != "mdbd-saddle":
            raise ValueError("not a saddle-point document")
        layout = Layout(**data["layout"])

        def flat(blocks, names):
            return layout.pack(*[np.asarray(blocks[k], dtype=float).reshape(layout.N, w)
                                 for k, w in zip(names, layout.widths)])

        return cls(
            layout,
            flat(data["z_star"], OutputState.names),
            flat(data["s_star"], StackedState.names),
            float(data["optimal_value"]),
            dict(data.get("provenance", {})),
        )


def saddle_inequality_gaps(net, sp: SaddlePoint, rng, samples=100, scale=1.0):
    """Largest violations of the two saddle inequalities over random feasible points.

    Returns ``(upper, lower)`` where ``upper = max L(x*, lam, mu, w*, v*) - L*``
    and ``lower = max L* - L(x, lam*, mu*, w, v)``; both should be <= 0 up to
    rounding.
    """
    layout = sp.layout
    Xs, Ls, Ms, Os, Vs = layout.views(sp.z_star)
    ref = lagrangian(net, sp.z_star)
    upper = lower = -np.inf
    for _ in range(samples):
        lam = scale * rng.exponential(size=Ls.shape)
        mu = scale * rng.standard_normal(Ms.shape)
        upper = max(upper, lagrangian(net, layout.pack(Xs, lam, mu, Os, Vs)) - ref)
        X = np.array([a.set.sample(rng) for a in net.agents])
        om = scale * rng.standard_normal(Os.shape)
        nu = scale * rng.standard_normal(Vs.shape)
        lower = max(lower, ref - lagrangian(net, layout.pack(X, Ls, Ms, om, nu)))
    return float(upper), float(lower)
