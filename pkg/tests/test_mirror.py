import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mdbd.mirror import (
    Ball,
    Box,
    Entropy,
    NonnegativeOrthant,
    Quadratic,
    UnitSimplex,
    bregman_divergence,
    damping,
    euclidean_project,
    generating_function_from_dict,
    mirror_map,
)

finite = st.floats(-30, 30, allow_nan=False)


class TestMirrorMapExamples:
    def test_entropy_zero_gives_uniform(self):
        np.testing.assert_allclose(mirror_map(Entropy(UnitSimplex(5)), np.zeros(5)), np.full(5, 0.2))

    def test_entropy_softmax_value(self):
        x = mirror_map(Entropy(UnitSimplex(2)), np.array([np.log(3.0), 0.0]))
        np.testing.assert_allclose(x, [0.75, 0.25], atol=1e-15)

    def test_quadratic_simplex_water_filling(self):
        np.testing.assert_allclose(mirror_map(Quadratic(UnitSimplex(2)), np.array([2.0, 0.0])), [1.0, 0.0])

    def test_entropy_overflow_safe(self):
        x = mirror_map(Entropy(UnitSimplex(3)), np.array([1000.0, 999.0, -1000.0]))
        assert np.all(np.isfinite(x)) and x.sum() == pytest.approx(1.0)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            mirror_map(Entropy(UnitSimplex(2)), np.array([np.inf, 0.0]))
        with pytest.raises(ValueError):
            mirror_map(Quadratic(Box([0, 0], [1, 1])), np.array([np.nan, 0.0]))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            mirror_map(Entropy(UnitSimplex(3)), np.zeros(2))

    def test_entropy_requires_simplex(self):
        with pytest.raises(ValueError):
            Entropy(Box([0, 0], [1, 1]))

    def test_batched(self, rng):
        f = Entropy(UnitSimplex(4))
        Z = rng.standard_normal((6, 4))
        np.testing.assert_allclose(f.mirror_map(Z), np.array([f.mirror_map(z) for z in Z]))


class TestEuclideanProject:
    def test_box_clamp(self):
        np.testing.assert_array_equal(euclidean_project(Box([0, 0], [1, 1]), np.array([-1.0, 0.5])), [0.0, 0.5])

    def test_simplex_interior_shift(self):
        np.testing.assert_allclose(euclidean_project(UnitSimplex(2), np.array([0.6, 0.2])), [0.7, 0.3])

    @pytest.mark.parametrize(
        "cset",
        [UnitSimplex(3), Box([-1, 0, 2], [1, 1, 3]), Ball([0.5, -1, 0], 2.0), NonnegativeOrthant(3)],
    )
    def test_idempotent(self, cset, rng):
        x = cset.sample(rng)
        np.testing.assert_allclose(euclidean_project(cset, x), x, atol=1e-14)

    def test_ball_radial(self):
        np.testing.assert_allclose(euclidean_project(Ball([0, 0], 1.0), np.array([3.0, 4.0])), [0.6, 0.8])

    @pytest.mark.parametrize(
        "cset",
        [UnitSimplex(4), Box([-1, 0, 2], [1, 1, 3]), Ball([0.5, -1, 0], 1.5), NonnegativeOrthant(3)],
    )
    def test_generic_qp_agrees_with_closed_form(self, cset, rng):
        for _ in range(3):
            z = 2 * rng.standard_normal(cset.dim)
            np.testing.assert_allclose(
                euclidean_project(cset, z, "generic-qp"), euclidean_project(cset, z), atol=1e-6
            )

    def test_simplex_projection_is_minimizer(self, rng):
        # variational inequality: (z - P z).(x - P z) <= 0 for all x in the set
        S = UnitSimplex(6)
        for _ in range(20):
            z = 3 * rng.standard_normal(6)
            p = S.project(z)
            X = S.sample(rng, 50)
            assert np.all((X - p) @ (z - p) <= 1e-12)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            euclidean_project(UnitSimplex(2), np.zeros(2), "slow")


class TestBregman:
    def test_self_divergence_zero(self, rng):
        for f in (Entropy(UnitSimplex(3)), Quadratic(Box([0, 0, 0], [1, 1, 1]))):
            x = f.domain.sample(rng)
            assert bregman_divergence(f, x, x) == pytest.approx(0.0, abs=1e-14)

    def test_quadratic_is_half_squared_distance(self, rng):
        f = Quadratic(Ball(np.zeros(3), 5.0))
        x, y = f.domain.sample(rng), f.domain.sample(rng)
        assert bregman_divergence(f, x, y) == pytest.approx(0.5 * np.sum((x - y) ** 2), rel=1e-12)

    def test_kl_value(self):
        d = bregman_divergence(Entropy(UnitSimplex(2)), np.array([0.5, 0.5]), np.array([0.25, 0.75]))
        assert d == pytest.approx(0.5 * np.log(4.0 / 3.0), abs=1e-12)
        assert d == pytest.approx(0.14384, abs=1e-5)

    def test_zero_component_convention(self):
        d = bregman_divergence(Entropy(UnitSimplex(2)), np.array([1.0, 0.0]), np.array([0.5, 0.5]))
        assert d == pytest.approx(np.log(2.0))

    def test_domain_violation_rejected(self):
        with pytest.raises(ValueError):
            bregman_divergence(Entropy(UnitSimplex(2)), np.array([0.7, 0.7]), np.array([0.5, 0.5]))


class TestDamping:
    def test_quadratic_identity(self):
        np.testing.assert_array_equal(damping(Quadratic(Box([-5, -5], [5, 5])), np.array([3.0, -1.0])), [3.0, -1.0])

    def test_entropy_zero_at_inverse_e(self):
        g = damping(Entropy(UnitSimplex(3)), np.array([np.exp(-1), 0.5, 0.5 - np.exp(-1)]))
        assert g[0] == pytest.approx(0.0, abs=1e-15)

    def test_entropy_clamped_at_zero(self):
        g = damping(Entropy(UnitSimplex(2)), np.array([0.0, 1.0]))
        assert np.isfinite(g).all() and g[0] == pytest.approx(1 + np.log(1e-300))

    @pytest.mark.parametrize("f", [Entropy(UnitSimplex(4)), Quadratic(UnitSimplex(4))])
    def test_central_differences(self, f, rng):
        h = 1e-6
        for _ in range(10):
            x = 0.5 * f.domain.sample(rng) + 0.125
            fd = np.array([(f.value(x + h * e) - f.value(x - h * e)) / (2 * h) for e in np.eye(4)])
            np.testing.assert_allclose(damping(f, x), fd, atol=1e-5)


class TestSerialization:
    @pytest.mark.parametrize(
        "f",
        [Entropy(UnitSimplex(3)), Quadratic(Box([0, -1], [1, 1])), Quadratic(Ball([1.0], 2.0), "generic-qp")],
    )
    def test_round_trip(self, f):
        assert generating_function_from_dict(f.to_dict()).same_as(f)


# ---------------------------------------------------------------- properties

vectors3 = arrays(np.float64, 3, elements=finite)


@settings(max_examples=100, deadline=None)
@given(vectors3, st.floats(-50, 50, allow_nan=False))
def test_softmax_shift_invariance(z, c):
    f = Entropy(UnitSimplex(3))
    np.testing.assert_allclose(f.mirror_map(z + c), f.mirror_map(z), rtol=1e-12, atol=1e-300)


SETS = [UnitSimplex(3), Box([-1, 0, 2], [1, 1, 3]), Ball([0.5, -1, 0], 1.5), NonnegativeOrthant(3)]


@settings(max_examples=100, deadline=None)
@given(vectors3, st.sampled_from(range(len(SETS))))
def test_output_feasible(z, k):
    cset = SETS[k]
    for f in ([Entropy(cset)] if isinstance(cset, UnitSimplex) else []) + [Quadratic(cset)]:
        x = f.mirror_map(z)
        assert cset.contains(x, tol=1e-12)


@settings(max_examples=100, deadline=None)
@given(vectors3, st.sampled_from(range(len(SETS))))
def test_quadratic_mirror_is_projection(z, k):
    cset = SETS[k]
    np.testing.assert_allclose(Quadratic(cset).mirror_map(z), euclidean_project(cset, z), atol=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gradient_monotone(seed):
    rng = np.random.default_rng(seed)
    for f in (Entropy(UnitSimplex(4)), Quadratic(Box(-np.ones(4), np.ones(4)))):
        x, y = f.domain.sample(rng), f.domain.sample(rng)
        assert (x - y) @ (f.gradient(x) - f.gradient(y)) >= -1e-12


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 3, elements=st.floats(-5, 5)))
def test_conjugate_gradient_is_mirror_map(z):
    h = 1e-6
    for f in (Entropy(UnitSimplex(3)), Quadratic(Box([-1, 0, 0], [1, 2, 1]))):
        def neg_conj(v):
            x = f.mirror_map(v)
            return -x @ v + f.value(x)

        fd = np.array([(neg_conj(z + h * e) - neg_conj(z - h * e)) / (2 * h) for e in np.eye(3)])
        np.testing.assert_allclose(fd, -f.mirror_map(z), atol=1e-4)
