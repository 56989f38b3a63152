"""Distributed mirror-descent dynamics with Bregman damping."""

from .graph import Graph, is_connected, laplacian, laplacian_apply
from .mirror import (
    Ball,
    Box,
    Entropy,
    NonnegativeOrthant,
    Quadratic,
    UnitSimplex,
    bregman_divergence,
    damping,
    euclidean_project,
    mirror_map,
)
from .problem import (
    LocalProblem,
    NetworkProblem,
    QuadraticL1,
    SimplexFamilyParams,
    SlaterCertificate,
    equality_residual,
    generate_instance,
    scalar_regression_instance,
)
from .saddle import F_eval, SaddlePoint, kkt_residual, lagrangian
from .state import Layout, OutputState, StackedState
from .dynamics import initial_state, make_field, mdbd_field, output_map, projection_baseline_field
from .integrator import IntegratorConfig, duality_gap, integrate, lyapunov_v1, step
from .oracle import OracleError, mesh_search, solve_reference

__version__ = "0.1.0"
