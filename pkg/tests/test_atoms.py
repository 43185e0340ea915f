import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import unit_ball
from randrelu.atoms import (
    AssembledNet,
    AtomicFunction,
    BudgetExceededError,
    LayerStack,
    VectorAtomic,
    ZeroMassWarning,
    approximate_stack,
    assemble,
    best_of_k_sparsify,
    evaluate,
    frobenius_bounds,
    from_json,
    l2_error,
    layer_node_counts,
    maurey_error_bound,
    maurey_sparsify,
    sparsify_stack,
    stack_error_constant,
    to_json,
    total_mass,
)


def random_atomic(rng, d, n_atoms):
    return AtomicFunction(d, rng.standard_normal(n_atoms), rng.standard_normal((n_atoms, d + 1)))


def random_layer(rng, din, dout, n_atoms=6):
    return VectorAtomic(tuple(random_atomic(rng, din, n_atoms) for _ in range(dout)))


def small_stack(seed=0):
    """Two layers R^3 -> R^2 -> R^1 whose first layer maps the ball of
    radius r + s = 2 into the unit ball."""
    rng = np.random.default_rng(seed)
    f1 = random_layer(rng, 3, 2)
    sup = np.max(np.linalg.norm(f1(unit_ball(rng, 20_000, 3, 2.0)), axis=1))
    f1 = VectorAtomic(tuple(AtomicFunction(3, c.coeffs * 0.9 / sup, c.omegas) for c in f1.components))
    f2 = random_layer(rng, 2, 1)
    f2 = VectorAtomic(tuple(AtomicFunction(2, c.coeffs / c.omegas.shape[0], c.omegas) for c in f2.components))
    return LayerStack((f1, f2), 1.0, 1.0, (math.ceil(f1.norm()), math.ceil(f2.norm())))


class TestAtomicFunction:
    def test_single_bias_atom(self):
        f = AtomicFunction.from_atoms([(1.0, [0.0, 0.0, 1.0])])
        X = np.random.default_rng(0).standard_normal((5, 2))
        np.testing.assert_array_equal(evaluate(f, X), np.ones(5))

    def test_negation(self):
        rng = np.random.default_rng(1)
        f = random_atomic(rng, 3, 5)
        X = rng.standard_normal((10, 3))
        np.testing.assert_allclose(evaluate(-f, X), -evaluate(f, X))

    def test_cancellation(self):
        w = [0.3, -1.2, 0.5]
        f = AtomicFunction.from_atoms([(1.0, w), (-1.0, w)])
        X = np.random.default_rng(2).standard_normal((10, 2))
        assert np.all(evaluate(f, X) == 0.0)
        assert total_mass(f) == pytest.approx(2 * np.linalg.norm(w))

    def test_total_mass_examples(self):
        u = np.array([0.6, 0.8])
        assert total_mass(AtomicFunction.from_atoms([(2.0, u)])) == pytest.approx(2.0)
        assert total_mass(AtomicFunction.from_atoms([(1.0, 3 * u)])) == pytest.approx(3.0)
        assert total_mass(AtomicFunction.from_atoms([(1.0, u), (-1.0, u)])) == pytest.approx(2.0)
        assert total_mass(AtomicFunction.zero(1)) == 0.0
        assert total_mass(AtomicFunction.from_atoms([(0.0, u)])) == 0.0

    def test_scalar_point(self):
        f = AtomicFunction.from_atoms([(2.0, [1.0, 0.0])])
        assert evaluate(f, np.array([3.0])) == 6.0

    def test_rejects_zero_omega(self):
        with pytest.raises(ValueError):
            AtomicFunction.from_atoms([(1.0, [0.0, 0.0])])

    def test_dimension_mismatch(self):
        f = AtomicFunction.from_atoms([(1.0, [1.0, 0.0, 1.0])])
        with pytest.raises(ValueError):
            evaluate(f, np.ones((2, 3)))

    def test_compress_merges_duplicates(self):
        f = AtomicFunction.from_atoms([(1.0, [1.0, 2.0]), (0.5, [1.0, 2.0]), (1.0, [0.0, 1.0])])
        g = f.compress()
        assert len(g) == 2
        X = np.linspace(-2, 2, 9)[:, None]
        np.testing.assert_allclose(g(X), f(X))

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32), d=st.integers(1, 5), n=st.integers(1, 20))
    def test_lipschitz_in_total_mass(self, seed, d, n):
        rng = np.random.default_rng(seed)
        f = random_atomic(rng, d, n)
        X, Y = rng.standard_normal((30, d)), rng.standard_normal((30, d))
        gap = np.abs(evaluate(f, X) - evaluate(f, Y))
        assert np.all(gap <= total_mass(f) * np.linalg.norm(X - Y, axis=1) * (1 + 1e-12) + 1e-12)

    def test_json_round_trip(self):
        f = random_atomic(np.random.default_rng(3), 2, 4)
        g = from_json(to_json(f))
        np.testing.assert_array_equal(g.coeffs, f.coeffs)
        np.testing.assert_array_equal(g.omegas, f.omegas)


class TestMaurey:
    def test_error_bound_examples(self):
        assert maurey_error_bound(1.0, 0.0, 1) == 1.0
        assert maurey_error_bound(10.0, 1.0, 400) == pytest.approx(0.7071067811865476, rel=1e-12)
        assert maurey_error_bound(3.0, 2.0, 64) == pytest.approx(maurey_error_bound(3.0, 2.0, 16) / 2)

    def test_single_atom_reproduced(self):
        w = np.array([0.6, 0.0, 0.8])
        f = AtomicFunction.from_atoms([(1.0, w)])
        g = maurey_sparsify(f, 7, np.random.default_rng(0))
        assert len(g) == 7
        np.testing.assert_allclose(g.coeffs, 1 / 7)
        X = np.random.default_rng(1).standard_normal((20, 2))
        np.testing.assert_allclose(g(X), f(X), rtol=1e-14)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32), n=st.integers(1, 300))
    def test_coefficient_law(self, seed, n):
        rng = np.random.default_rng(seed)
        f = random_atomic(rng, 3, 8)
        g = maurey_sparsify(f, n, rng)
        assert len(g) == n
        mass = total_mass(f)
        np.testing.assert_array_equal(np.abs(g.coeffs), np.full(n, mass / n))
        np.testing.assert_allclose(np.linalg.norm(g.omegas, axis=1), 1.0, atol=1e-15)
        # sign of each sampled atom matches its source
        src = f.omegas / np.linalg.norm(f.omegas, axis=1, keepdims=True)
        for c, w in zip(g.coeffs, g.omegas):
            j = int(np.argmin(np.linalg.norm(src - w, axis=1)))
            assert np.sign(c) == np.sign(f.coeffs[j])

    def test_sampling_frequencies(self):
        f = AtomicFunction.from_atoms([(3.0, [1.0, 0.0]), (-1.0, [0.0, 2.0])])
        g = maurey_sparsify(f, 20_000, np.random.default_rng(0))
        # probabilities |a||w| / mass = 3/5 and 2/5
        assert np.mean(g.coeffs > 0) == pytest.approx(0.6, abs=0.015)

    def test_zero_mass_returns_empty(self):
        f = AtomicFunction.from_atoms([(0.0, [1.0, 1.0])])
        with pytest.warns(ZeroMassWarning):
            g = maurey_sparsify(f, 5)
        assert len(g) == 0
        assert evaluate(g, np.array([1.0])) == 0.0

    def test_deterministic(self):
        f = random_atomic(np.random.default_rng(4), 2, 10)
        a = maurey_sparsify(f, 50, np.random.default_rng(9))
        b = maurey_sparsify(f, 50, np.random.default_rng(9))
        np.testing.assert_array_equal(a.omegas, b.omegas)
        np.testing.assert_array_equal(a.coeffs, b.coeffs)

    def test_rejects_bad_count(self):
        with pytest.raises(ValueError):
            maurey_sparsify(random_atomic(np.random.default_rng(0), 2, 3), 0)

    def test_best_of_k_reports_true_error(self):
        rng = np.random.default_rng(5)
        f = random_atomic(rng, 3, 30)
        P = unit_ball(rng, 5000, 3)
        g, err = best_of_k_sparsify(f, 200, P, trials=20, rng=rng)
        assert err == pytest.approx(l2_error(f, g, P), rel=1e-9)
        singles = [l2_error(f, maurey_sparsify(f, 200, rng), P) for _ in range(20)]
        assert err <= np.median(singles)

    def test_mass_ten_example(self):
        # mass 10, r = 1, N = 400: best of 20 lands below 1.2 * 0.7071
        rng = np.random.default_rng(6)
        f = random_atomic(rng, 2, 40)
        f = AtomicFunction(2, f.coeffs * 10 / total_mass(f), f.omegas)
        P = unit_ball(rng, 10_000, 2)
        _, err = best_of_k_sparsify(f, 400, P, trials=20, rng=rng)
        assert err <= 1.2 * maurey_error_bound(10.0, 1.0, 400)


class TestStack:
    def test_node_count_example(self):
        f = VectorAtomic((AtomicFunction.from_atoms([(2.0, [0.0, 1.0])]),))
        stack = LayerStack((f,), r=1.0, s=0.0, norms=(2.0,))
        assert layer_node_counts(stack, 0.5) == [32]

    def test_node_counts_two_layers(self):
        stack = small_stack()
        R1, R2 = stack.norms
        # N_2 = R_2^2 * 5 / eps^2, N_1 = R_1^2 N_2 with (r + s)^2 + 1 = 5
        assert layer_node_counts(stack, 0.5) == [R1**2 * R2**2 * 20, R2**2 * 20]

    def test_error_constant_examples(self):
        f = VectorAtomic((AtomicFunction.from_atoms([(1.0, [0.0, 1.0])]),))
        assert stack_error_constant(LayerStack((f,), 1.0, 0.5)) == 1.0
        g = VectorAtomic((AtomicFunction.from_atoms([(1.0, [0.0, 1.0])]),))
        two = LayerStack((f, g), 1.0, 1.0, (2.0, 2.0))
        assert stack_error_constant(two) == pytest.approx(2 + (1 + 4 * math.sqrt(2)) / 2, rel=1e-14)

    def test_error_constant_grows_as_margin_shrinks(self):
        f = VectorAtomic((AtomicFunction.from_atoms([(1.0, [0.0, 1.0])]),))
        values = [stack_error_constant(LayerStack((f, f), 1.0, s)) for s in (2.0, 1.0, 0.1, 0.01)]
        assert all(a < b for a, b in zip(values, values[1:]))

    def test_validation(self):
        f = VectorAtomic((AtomicFunction.from_atoms([(1.0, [0.0, 1.0])]),))
        h = random_layer(np.random.default_rng(0), 2, 1)
        with pytest.raises(ValueError):
            LayerStack((f, h), 1.0, 1.0)  # 1 output feeds a 2-d layer
        with pytest.raises(ValueError):
            LayerStack((f, f), 1.0, 0.0)
        with pytest.raises(ValueError):
            LayerStack((f,), 0.0, 1.0)
        with pytest.raises(ValueError):
            LayerStack((f,), 1.0, 1.0, norms=(0.5,))

    def test_vector_norm(self):
        a = AtomicFunction.from_atoms([(3.0, [1.0, 0.0])])
        b = AtomicFunction.from_atoms([(4.0, [0.0, 1.0])])
        assert VectorAtomic((a, b)).norm() == pytest.approx(5.0)

    def test_budget_exceeded(self):
        stack = small_stack()
        with pytest.raises(BudgetExceededError) as info:
            sparsify_stack(stack, 0.01, node_budget=1000)
        assert info.value.required > 1000


@pytest.fixture(scope="module")
def built():
    stack = small_stack(1)
    rng = np.random.default_rng(2)
    P = unit_ball(rng, 2000, 3)
    sparse = sparsify_stack(stack, 0.5, rng, samples=P, trials=5)
    return stack, sparse, assemble(sparse, stack, 0.5), P


class TestAssembly:
    def test_matches_layerwise_composition(self, built):
        stack, sparse, net, P = built
        Z = P
        for layer in sparse.layers:
            Z = layer(Z)
        np.testing.assert_allclose(net(P), Z, rtol=0, atol=1e-10)

    def test_frobenius_and_bias_bounds(self, built):
        stack, _, net, _ = built
        for norm, bound in zip(net.frobenius_norms(), frobenius_bounds(stack)):
            assert norm <= bound
        assert net.max_abs_bias() <= 1.0

    def test_node_counts(self, built):
        stack, sparse, net, _ = built
        dims = stack.dims
        assert net.node_counts == tuple(dims[i + 1] * n for i, n in enumerate(sparse.node_counts))
        assert [W.shape[0] for W in net.weights[:-1]] == list(net.node_counts)

    def test_error_within_constant(self, built):
        stack, _, net, P = built
        err = np.sqrt(np.mean(np.sum((net(P) - stack(P)) ** 2, axis=1)))
        assert err <= stack_error_constant(stack) * 0.5

    def test_json_round_trip(self, built):
        _, _, net, P = built
        back = from_json(to_json(net))
        assert isinstance(back, AssembledNet)
        np.testing.assert_array_equal(back(P), net(P))

    def test_single_layer_net(self):
        rng = np.random.default_rng(3)
        f = VectorAtomic((random_atomic(rng, 2, 5),))
        stack = LayerStack((f,), 1.0, 1.0)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            net = approximate_stack(stack, 0.5, rng)
        assert len(net.weights) == 2
        assert net.max_abs_bias() <= 1.0
        for norm, bound in zip(net.frobenius_norms(), frobenius_bounds(stack)):
            assert norm <= bound
