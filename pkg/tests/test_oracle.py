import numpy as np
import pytest

from mdbd.graph import Graph
from mdbd.mirror import Box, Entropy, Quadratic, UnitSimplex, mirror_map
from mdbd.oracle import (
    NoFeasibleNodeError,
    OracleError,
    mesh_minimize,
    mesh_mirror_map,
    mesh_search,
    prox_l1_on_set,
    solve_reference,
)
from mdbd.problem import LocalProblem, NetworkProblem, QuadraticL1, SimplexFamilyParams, generate_instance
from mdbd.saddle import F_eval, kkt_residual, mirror_gradient
from mdbd.state import Layout


class TestProx:
    def test_box_soft_threshold(self):
        x = prox_l1_on_set(Box([-1, -1, 0], [1, 1, 1]), np.array([2.0, -0.3, 0.05]), 0.1)
        np.testing.assert_allclose(x, [1.0, -0.2, 0.0])

    def test_simplex_is_projection(self, rng):
        v = rng.standard_normal(5)
        np.testing.assert_allclose(prox_l1_on_set(UnitSimplex(5), v, 0.3), UnitSimplex(5).project(v))

    def test_ball_optimality(self, rng):
        from mdbd.mirror import Ball

        ball = Ball(np.zeros(3), 0.5)
        v = rng.standard_normal(3)
        x = prox_l1_on_set(ball, v, 0.2)
        obj = lambda p: 0.5 * np.sum((p - v) ** 2) + 0.2 * np.abs(p).sum()
        for p in ball.sample(rng, 300):
            assert obj(x) <= obj(p) + 1e-9


class TestReferenceSolver:
    def test_desk_tolerance(self, desk_net, desk_saddle):
        assert kkt_residual(desk_net, desk_saddle.z_star) <= 1e-7
        assert desk_saddle.provenance["kkt_residual"] <= 1e-7

    def test_s_star_is_equilibrium(self, desk_net, desk_saddle):
        s = mirror_gradient(desk_net, desk_saddle.z_star) - F_eval(desk_net, desk_saddle.z_star)
        np.testing.assert_allclose(desk_saddle.s_star, s, atol=1e-12)

    def test_consensus_of_multipliers(self, desk_net, desk_saddle):
        _, lam, mu, _, _ = Layout.of(desk_net).views(desk_saddle.z_star)
        assert np.ptp(lam, axis=0).max() < 1e-9 and np.ptp(mu, axis=0).max() < 1e-9

    def test_scalar_closed_form(self, scalar_net):
        sp = solve_reference(scalar_net, 1e-9)
        np.testing.assert_allclose(sp.z_star, [0.3, 0.7, -0.2, -0.2, -0.1, 0.1], atol=1e-8)
        assert sp.optimal_value == pytest.approx(0.02, abs=1e-9)

    def test_deterministic(self, scalar_net):
        a, b = solve_reference(scalar_net), solve_reference(scalar_net)
        np.testing.assert_array_equal(a.z_star, b.z_star)

    def test_failure_reports_best_residual(self, desk_net):
        with pytest.raises(OracleError) as info:
            solve_reference(desk_net, 1e-30, warm_iters=10, newton_iters=1)
        assert info.value.best_residual > 0 and info.value.partial is not None

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_other_seeds(self, seed):
        net, _ = generate_instance(seed, 6, 5)
        assert kkt_residual(net, solve_reference(net).z_star) <= 1e-7


class TestMesh:
    def test_minimize_parabola(self):
        f = lambda P: np.sum((P - [0.3, -0.2]) ** 2, axis=1)
        x = mesh_minimize(f, lambda P: np.ones(len(P), bool), np.zeros(2), np.eye(2), 1.0)
        np.testing.assert_allclose(x, [0.3, -0.2], atol=1e-8)

    def test_no_feasible_node(self):
        with pytest.raises(NoFeasibleNodeError):
            mesh_minimize(lambda P: P[:, 0], lambda P: np.zeros(len(P), bool), np.zeros(1), np.eye(1), 1.0)

    @pytest.mark.parametrize("z", [[0.0, 0.0, 0.0], [1.0, -2.0, 0.5], [4.0, 0.0, -4.0]])
    def test_mesh_mirror_map_entropy(self, z):
        f = Entropy(UnitSimplex(3))
        np.testing.assert_allclose(mesh_mirror_map(f, np.array(z)), mirror_map(f, np.array(z)), atol=1e-6)

    def test_mesh_mirror_map_quadratic_box(self):
        f = Quadratic(Box([0, -1], [1, 1]))
        z = np.array([0.4, 3.0])
        np.testing.assert_allclose(mesh_mirror_map(f, z), [0.4, 1.0], atol=1e-6)

    def test_scalar_network(self, scalar_net):
        np.testing.assert_allclose(mesh_search(scalar_net).ravel(), [0.3, 0.7], atol=1e-7)

    def test_reference_matches_mesh_on_tiny_simplex_problem(self):
        net, _ = generate_instance(3, 2, 2, SimplexFamilyParams(q=1))
        x_mesh = mesh_search(net)
        sp = solve_reference(net)
        np.testing.assert_allclose(sp.x, x_mesh, atol=1e-6)
        assert net.objective(x_mesh) >= sp.optimal_value - 1e-9

    def test_inequality_active(self):
        # min (x1 - 1)^2 + (x2 - 1)^2 on [0,1]^2 per agent with x1^2 + x2^2 <= 0.5 summed
        box = Box([0.0], [1.0])
        agents = [
            LocalProblem(
                QuadraticL1(np.zeros((0, 1)), 1.0, [1.0]),
                (QuadraticL1(np.zeros((0, 1)), 1.0, [0.0], 0.0, -0.25),),
                np.zeros((0, 1)), np.zeros(0), Quadratic(box),
            )
            for _ in range(2)
        ]
        net = NetworkProblem(agents, Graph.cycle(2))
        np.testing.assert_allclose(mesh_search(net).ravel(), [0.5, 0.5], atol=1e-6)
        sp = solve_reference(net, 1e-9)
        np.testing.assert_allclose(sp.x.ravel(), [0.5, 0.5], atol=1e-8)
        # stationarity 2(x - 1) + 2 lam x = 0 at x = 0.5 gives lam = 1
        np.testing.assert_allclose(Layout.of(net).views(sp.z_star)[1].ravel(), [1.0, 1.0], atol=1e-7)

    def test_too_many_dimensions(self, desk_net):
        with pytest.raises(ValueError):
            mesh_search(desk_net)
