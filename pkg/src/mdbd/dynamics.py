"""Mirror-descent dynamics with Bregman damping and the projection baseline.

Each agent ``i`` runs

    y_i'     = -df_i(x_i) - dg_i(x_i)^T lam_i - A_i^T mu_i + grad phi_i(x_i) - y_i
    gamma_i' = g_i(x_i) - sum_j a_ij (omega_i - omega_j) + lam_i - gamma_i
    mu_i'    = A_i x_i - b_i - sum_j a_ij (nu_i - nu_j)
    omega_i' = sum_j a_ij (lam_i - lam_j)
    nu_i'    = sum_j a_ij (mu_i - mu_j)

with outputs ``x_i`` = mirror map of ``y_i`` and ``lam_i = [gamma_i]^+``.
Subgradients use the minimal-norm selection at kinks, which turns the
differential inclusion into a deterministic ODE.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mirror import euclidean_project
from .saddle import F_eval
from .state import Layout, OutputState, StackedState, as_flat

__all__ = [
    "FieldEvaluation",
    "Layout",
    "OutputState",
    "StackedState",
    "initial_state",
    "make_field",
    "mdbd_field",
    "output_map",
    "projection_baseline_field",
]


class NonFiniteStateError(FloatingPointError):
    """Raised when a field is evaluated at a state with non-finite entries."""


@dataclass
class FieldEvaluation:
    """Time derivative ``ds`` of the flat state plus what was used to compute it."""

    ds: np.ndarray
    z: np.ndarray
    selected_subgradients: dict = field(default_factory=dict)


def initial_state(net) -> StackedState:
    """All-zero mirror-space state (every block starts at the origin)."""
    return StackedState(Layout.of(net))


def _mirror_outputs(net, Y):
    gen = net.shared_generator
    if gen is not None:
        return gen.mirror_map(Y)
    return np.array([a.generator.mirror_map(y) for a, y in zip(net.agents, Y)])


def _damping(net, X):
    gen = net.shared_generator
    if gen is not None:
        return gen.gradient(X)
    return np.array([a.generator.gradient(x) for a, x in zip(net.agents, X)])


def _projected_outputs(net, Y, mode):
    sets = [a.set for a in net.agents]
    if all(s == sets[0] for s in sets[1:]):
        return euclidean_project(sets[0], Y, mode)
    return np.array([euclidean_project(s, y, mode) for s, y in zip(sets, Y)])


def _checked(net, s):
    layout = Layout.of(net)
    data = as_flat(s, layout)
    if not np.all(np.isfinite(data)):
        raise NonFiniteStateError("state contains non-finite entries")
    return layout, data


def output_map(net, s) -> OutputState:
    """``x_i`` = mirror map of ``y_i``, ``lam_i = [gamma_i]^+``; other blocks copied."""
    layout, data = _checked(net, s)
    Y, G, M, W, V = layout.views(data)
    return OutputState(layout, layout.pack(_mirror_outputs(net, Y), np.maximum(G, 0.0), M, W, V))


def mdbd_field(net, s, out=None) -> FieldEvaluation:
    """Right-hand side of the per-agent flows, evaluated once at ``s``."""
    layout, data = _checked(net, s)
    Y, G, M, W, V = layout.views(data)
    lap = net.graph.laplacian_matrix

    X = _mirror_outputs(net, Y)
    lam = np.maximum(G, 0.0)
    df = net.cost_subgradients(X)
    dg = net.ineq_subgradients(X)

    ds = np.empty(layout.size) if out is None else out
    dY, dG, dM, dW, dV = layout.views(ds)
    np.subtract(_damping(net, X) - Y, df, out=dY)
    dY -= np.einsum("ipn,ip->in", dg, lam)
    dY -= np.einsum("iqn,iq->in", net.eq_matrices, M)
    np.subtract(net.ineq_values(X) + lam - G, lap @ W, out=dG)
    np.subtract(net.eq_values(X), lap @ V, out=dM)
    np.matmul(lap, lam, out=dW)
    np.matmul(lap, M, out=dV)

    z = layout.pack(X, lam, M, W, V)
    return FieldEvaluation(ds, z, {"cost": df, "ineq": dg})


def projection_baseline_field(net, s, mode="fast", out=None) -> FieldEvaluation:
    """``-F(z) + z - s`` with ``z`` the Euclidean projection of ``s`` onto the product set.

    Every generating function is treated as half the squared norm on its
    agent's set, regardless of what ``net`` carries.  ``mode`` selects the
    closed-form projection or the generic QP solve.
    """
    layout, data = _checked(net, s)
    Y, G, M, W, V = layout.views(data)
    X = _projected_outputs(net, Y, mode)
    z = layout.pack(X, np.maximum(G, 0.0), M, W, V)
    df = net.cost_subgradients(X)
    F = F_eval(net, z, primal_subgradient=df)
    ds = np.empty(layout.size) if out is None else out
    np.subtract(z - data, F, out=ds)
    return FieldEvaluation(ds, z, {"cost": df, "ineq": net.ineq_subgradients(X)})


def make_field(algorithm="mdbd", projection_mode="fast"):
    """Field callable ``(net, s) -> FieldEvaluation`` for a named algorithm."""
    if algorithm == "mdbd":
        return mdbd_field
    if algorithm == "projection":
        def field_fn(net, s, out=None):
            return projection_baseline_field(net, s, projection_mode, out)
        field_fn.__name__ = f"projection_baseline_field[{projection_mode}]"
        return field_fn
    raise ValueError(f"unknown algorithm {algorithm!r}")
