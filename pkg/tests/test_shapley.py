import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pddshap.core import CountingModel, FeatureSubset, InputError
from pddshap.pdd import train_pdd
from pddshap.shapley import (
    GameValues,
    SubsetFunctionals,
    antithetic_sampling_shapley,
    balanced_draws,
    exact_shapley,
    explain_batch,
    instance_rng,
    pdd_shapley,
    pdd_shapley_matrix,
    shapley_from_decomposition,
    shapley_from_game,
    subset_sampling_shapley,
)

from conftest import GRID, brute_interventional_game, interaction, permutation_shapley, product_grid


def S(*idx, d=2):
    return FeatureSubset.from_indices(idx, d)


def const(c):
    return lambda X: np.full(len(X), c)


class TestGames:
    def test_cardinality_game(self):
        game = GameValues(3, [bin(b).count("1") for b in range(8)])
        np.testing.assert_allclose(shapley_from_game(game).phi, [1, 1, 1], atol=1e-15)

    def test_two_player_example(self):
        game = GameValues.from_mapping({S(0): 1.25, S(1): 1.75, S(0, 1): 3.75}, 2)
        np.testing.assert_allclose(shapley_from_game(game).phi, [1.625, 2.125], atol=1e-15)

    def test_zero_game(self):
        assert not shapley_from_game(GameValues(4, np.zeros(16))).phi.any()

    def test_incomplete_rejected(self):
        with pytest.raises(InputError, match="incomplete"):
            GameValues.from_mapping({S(0): 1.0}, 2)
        with pytest.raises(InputError):
            GameValues(2, [0.0, 1.0, 2.0])
        with pytest.raises(InputError):
            GameValues(21, np.zeros(2))

    def test_empty_coalition_shifted(self):
        game = GameValues(2, [5.0, 6.0, 7.0, 9.0])
        assert game(FeatureSubset.empty(2)) == 0.0
        np.testing.assert_allclose(shapley_from_game(game).phi, [1.5, 2.5])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 10_000))
    def test_matches_permutation_oracle(self, d, seed):
        v = np.random.default_rng(seed).normal(size=1 << d)
        v[0] = 0.0
        phi = shapley_from_game(GameValues(d, v)).phi
        np.testing.assert_allclose(phi, permutation_shapley(lambda b: v[b], d), atol=1e-12)


class TestDecomposition:
    def test_dummy_player(self):
        np.testing.assert_array_equal(shapley_from_decomposition(SubsetFunctionals(2, {S(0): 2.5})).phi, [2.5, 0])

    def test_symmetric_split(self):
        np.testing.assert_array_equal(shapley_from_decomposition(SubsetFunctionals(2, {S(0, 1): 1.0})).phi, [0.5, 0.5])

    def test_random_d5_against_brute_force(self):
        rng = np.random.default_rng(12)
        g = {FeatureSubset(b, 5): rng.normal() for b in range(1, 32)}
        fn = SubsetFunctionals(5, g)
        brute = shapley_from_game(fn.induced_game()).phi
        np.testing.assert_allclose(shapley_from_decomposition(fn).phi, brute, atol=1e-12)

    def test_induced_game_is_subset_sum(self):
        rng = np.random.default_rng(13)
        g = {FeatureSubset(b, 4): rng.normal() for b in range(1, 16)}
        game = SubsetFunctionals(4, g).induced_game()
        for b in range(16):
            direct = sum(val for u, val in g.items() if u.bits & ~b == 0)
            assert game.values[b] == pytest.approx(direct, abs=1e-12)

    def test_rejects_empty_subset(self):
        with pytest.raises(InputError):
            SubsetFunctionals(2, {FeatureSubset.empty(2): 1.0})


class TestPddShapley:
    def test_grid_example(self):
        s = train_pdd(interaction, GRID, 2, "lookup")
        (a,) = pdd_shapley(s, [[1.0, 1.0]])
        np.testing.assert_array_equal(a.phi, [1.625, 2.125])
        assert a.baseline == 2.25 and a.meta["n_model_calls"] == 0

    def test_constant_surrogate(self):
        s = train_pdd(const(4.0), GRID, 2, "lookup")
        assert not pdd_shapley_matrix(s, np.random.rand(10, 2)).any()

    def test_dummy_feature(self):
        s = train_pdd(lambda X: X[:, 0], np.random.default_rng(0).normal(size=(10, 2)), 1, "lookup")
        assert np.abs(pdd_shapley_matrix(s, np.random.rand(20, 2))[:, 1]).max() <= 1e-9

    def test_no_model_calls(self):
        m = CountingModel(interaction)
        s = train_pdd(m, GRID, 2, "tree")
        m.reset()
        pdd_shapley_matrix(s, np.random.rand(100, 2))
        assert m.rows == 0

    def test_efficiency_by_construction(self):
        rng = np.random.default_rng(14)
        Z = rng.normal(size=(20, 4))
        f = lambda X: np.sin(X @ [1, 2, 3, 4]) * X[:, 0]
        for reg in ("tree", "lookup"):
            for k in (1, 2, 3, 4):
                s = train_pdd(f, Z, k, reg)
                Q = rng.normal(size=(200, 4))
                phi = pdd_shapley_matrix(s, Q)
                np.testing.assert_allclose(phi.sum(axis=1), s.predict(Q) - s.f_empty, atol=1e-12)

    def test_dimension_mismatch(self):
        s = train_pdd(interaction, GRID, 1, "lookup")
        with pytest.raises(InputError):
            pdd_shapley(s, [[1.0, 2.0, 3.0]])


class TestExact:
    def test_grid_example(self):
        a = exact_shapley(interaction, [1.0, 1.0], GRID)
        np.testing.assert_allclose(a.phi, [1.625, 2.125], atol=1e-15)
        assert a.baseline == 2.25

    def test_constant(self):
        assert not exact_shapley(const(3.0), [1.0, 2.0, 3.0], np.random.rand(5, 3)).phi.any()

    def test_linear_closed_form(self):
        rng = np.random.default_rng(15)
        a = rng.normal(size=5)
        Z = rng.normal(size=(9, 5))
        x = rng.normal(size=5)
        phi = exact_shapley(lambda X: X @ a, x, Z).phi
        np.testing.assert_allclose(phi, a * (x - Z.mean(axis=0)), atol=1e-12)

    def test_matches_pointwise_brute_force(self):
        rng = np.random.default_rng(16)
        Z = rng.normal(size=(4, 3))
        x = rng.normal(size=3)
        f = lambda X: np.tanh(X[:, 0] * X[:, 1]) + X[:, 2] ** 3 * X[:, 0]
        oracle = permutation_shapley(brute_interventional_game(f, x, Z), 3)
        np.testing.assert_allclose(exact_shapley(f, x, Z).phi, oracle, atol=1e-12)

    def test_budget(self):
        m = CountingModel(interaction)
        a = exact_shapley(m, [1.0, 0.0], GRID)
        assert m.rows == 4 * 4 == a.meta["n_model_calls"]

    def test_too_many_features(self):
        with pytest.raises(InputError, match="sampling"):
            exact_shapley(const(0.0), np.zeros(25), np.zeros((2, 25)))


def random_model(rng, d):
    W = rng.normal(size=(d, d))
    a = rng.normal(size=d)
    return lambda X: X @ a + np.einsum("ni,ij,nj->n", X, W, X) + np.sin(X[:, 0] * X[:, -1])


class TestAxioms:
    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 100_000), st.integers(2, 6))
    def test_efficiency(self, seed, d):
        rng = np.random.default_rng(seed)
        f = random_model(rng, d)
        Z = rng.normal(size=(int(rng.integers(1, 8)), d))
        x = rng.normal(size=d)
        a = exact_shapley(f, x, Z)
        assert a.phi.sum() == pytest.approx(f(x[None])[0] - f(Z).mean(), abs=1e-9)

    def test_dummy(self):
        rng = np.random.default_rng(17)
        f = lambda X: X[:, 0] * X[:, 1] + X[:, 3] ** 2
        a = exact_shapley(f, rng.normal(size=4), rng.normal(size=(6, 4)))
        assert abs(a.phi[2]) <= 1e-9

    def test_symmetry(self):
        rng = np.random.default_rng(18)
        f = lambda X: X[:, 0] * X[:, 1] + np.exp(X[:, 0]) + np.exp(X[:, 1]) + X[:, 2]
        Z = rng.normal(size=(5, 3))
        Z = np.vstack([Z, Z[:, [1, 0, 2]]])
        x = rng.normal(size=3)
        x[1] = x[0]
        phi = exact_shapley(f, x, Z).phi
        assert phi[0] == pytest.approx(phi[1], abs=1e-9)

    def test_additivity(self):
        rng = np.random.default_rng(19)
        f, g = random_model(rng, 4), random_model(rng, 4)
        Z = rng.normal(size=(7, 4))
        x = rng.normal(size=4)
        both = exact_shapley(lambda X: f(X) + g(X), x, Z).phi
        np.testing.assert_allclose(both, exact_shapley(f, x, Z).phi + exact_shapley(g, x, Z).phi, atol=1e-9)

    @pytest.mark.parametrize("d", [2, 3, 4])
    def test_pdd_full_order_equals_exact_on_grid(self, d):
        X = product_grid(d)
        f = lambda A: np.prod(A + 1, axis=1) + A[:, 0] * A[:, -1] ** 2
        s = train_pdd(f, X, d, "lookup")
        phi = pdd_shapley_matrix(s, X)
        for x, row in zip(X, phi):
            np.testing.assert_allclose(row, exact_shapley(f, x, X).phi, atol=1e-8)


class TestSamplers:
    @pytest.mark.parametrize("sampler", [subset_sampling_shapley, antithetic_sampling_shapley])
    def test_constant_exactly_zero(self, sampler):
        for seed in range(3):
            assert not sampler(const(2.0), [1.0, 1.0, 1.0], np.random.rand(5, 3), 50, seed=seed).phi.any()

    @pytest.mark.parametrize("sampler", [subset_sampling_shapley, antithetic_sampling_shapley])
    def test_deterministic_given_seed(self, sampler):
        a = sampler(interaction, [1.0, 1.0], GRID, 100, seed=5)
        b = sampler(interaction, [1.0, 1.0], GRID, 100, seed=5)
        c = sampler(interaction, [1.0, 1.0], GRID, 100, seed=6)
        np.testing.assert_array_equal(a.phi, b.phi)
        assert not np.array_equal(a.phi, c.phi)

    def test_subset_converges_within_three_standard_errors(self):
        a = subset_sampling_shapley(interaction, [1.0, 1.0], GRID, 20_000, seed=1)
        err = np.abs(a.phi - [1.625, 2.125])
        assert np.all(err <= 3 * a.meta["stderr"])

    def test_antithetic_converges_within_three_standard_errors(self):
        # standard error of the mean over 30 independent seeded runs
        runs = np.array([
            antithetic_sampling_shapley(interaction, [1.0, 1.0], GRID, 2_000, seed=s).phi for s in range(30)
        ])
        se = runs.std(axis=0, ddof=1) / np.sqrt(len(runs))
        assert np.all(np.abs(runs.mean(axis=0) - [1.625, 2.125]) <= 3 * se + 1e-12)

    def test_antithetic_walks_telescope(self):
        rng = np.random.default_rng(20)
        Z = rng.normal(size=(6, 4))
        x = rng.normal(size=4)
        f = lambda X: np.sin(X.sum(axis=1)) * X[:, 0]
        a = antithetic_sampling_shapley(f, x, Z, 1, seed=3)
        assert len(a.meta["walk_totals"]) == 2
        assert a.phi.sum() == pytest.approx(a.meta["walk_totals"].mean(), abs=1e-12)
        a = antithetic_sampling_shapley(f, x, Z, 25, seed=3)
        assert a.phi.sum() == pytest.approx(a.meta["walk_totals"].mean(), abs=1e-12)

    def test_budgets(self):
        Z = np.random.rand(5, 3)
        m = CountingModel(lambda X: X.sum(axis=1))
        a = subset_sampling_shapley(m, [1, 1, 1], Z, 7, seed=0, baseline=0.0)
        assert m.rows == 2 * 7 * 3 == a.meta["n_model_calls"]
        m.reset()
        a = antithetic_sampling_shapley(m, [1, 1, 1], Z, 7, seed=0, baseline=0.0)
        assert m.rows == 2 * 7 * 4 == a.meta["n_model_calls"]

    @pytest.mark.parametrize("method", ["subset", "antithetic"])
    def test_error_shrinks_with_budget(self, method):
        exact = exact_shapley(interaction, [1.0, 1.0], GRID).phi
        err = {}
        for n in (20, 200):
            phis, _, _ = zip(*[
                explain_batch(method, interaction, [[1.0, 1.0]], GRID, budget=n, seed=s) for s in range(20)
            ])
            err[n] = np.mean([np.abs(p[0] - exact).mean() for p in phis])
        assert err[200] < err[20]

    def test_batch_order_independent(self):
        rng = np.random.default_rng(21)
        X = rng.normal(size=(5, 3))
        Z = rng.normal(size=(8, 3))
        f = lambda A: A[:, 0] * A[:, 1] + A[:, 2]
        phi, _, _ = explain_batch("subset", f, X, Z, budget=10, seed=9)
        single = subset_sampling_shapley(f, X[3], Z, 10, seed=9, instance_id=3).phi
        np.testing.assert_array_equal(phi[3], single)

    def test_balanced_draws_cover_rows(self):
        idx = balanced_draws(instance_rng(0), 4, 10)
        assert sorted(idx[:4]) == [0, 1, 2, 3] and sorted(idx[4:8]) == [0, 1, 2, 3]
        assert len(idx) == 10

    def test_rejects_budget(self):
        with pytest.raises(InputError):
            subset_sampling_shapley(interaction, [1, 1], GRID, 0)
        with pytest.raises(InputError):
            antithetic_sampling_shapley(interaction, [1, 1], GRID, 0)
