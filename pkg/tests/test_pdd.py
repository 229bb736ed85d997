import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pddshap.core import CountingModel, FeatureSubset, InputError, enumerate_subsets
from pddshap.models import friedman1
from pddshap.pdd import (
    PDDSurrogate,
    SurrogateLoadError,
    component_variances,
    load_surrogate,
    partial_dependence,
    save_surrogate,
    surrogate_predict,
    train_pdd,
)
from pddshap.regressors import LookupRegressor

from conftest import GRID, interaction, product_grid


def S(*idx, d=2):
    return FeatureSubset.from_indices(idx, d)


def pointwise_pd(f, bits, x, Z):
    d = len(x)
    mask = FeatureSubset(bits, d).mask()
    return np.mean([f(np.where(mask, x, z)[None, :])[0] for z in Z])


def moebius_component(f, bits, x, Z):
    """f_u(x) = sum over v subset of u of (-1)^{|u|-|v|} PD_v(x), PD_empty = mean f."""
    total = 0.0
    sub = bits
    while True:
        sign = (-1) ** (bin(bits).count("1") - bin(sub).count("1"))
        total += sign * pointwise_pd(f, sub, x, Z)
        if sub == 0:
            break
        sub = (sub - 1) & bits
    return total


def grid_surrogate():
    return train_pdd(interaction, GRID, 2, "lookup")


class TestPartialDependence:
    def test_examples(self):
        # 2.5 * x0 + 1 at x0 = 1, averaged over the grid
        assert partial_dependence(interaction, S(0), [1.0, 0.3], GRID) == 3.5
        x = np.array([0.7, -0.2])
        assert partial_dependence(interaction, S(0, 1), x, GRID) == interaction(x[None])[0]
        assert partial_dependence(lambda X: np.full(len(X), 2.5), S(1), x, GRID) == 2.5

    def test_one_call_of_n_rows(self):
        m = CountingModel(interaction)
        partial_dependence(m, S(0), [1.0, 0.0], GRID)
        assert (m.calls, m.rows) == (1, 4)

    def test_rejects(self):
        with pytest.raises(InputError):
            partial_dependence(interaction, FeatureSubset.empty(2), [1.0, 0.0], GRID)
        with pytest.raises(InputError):
            partial_dependence(interaction, S(0), [1.0, 0.0], np.zeros((0, 2)))


class TestTraining:
    def test_grid_example_matches_moebius_oracle(self):
        s = grid_surrogate()
        assert s.f_empty == 2.25
        for u, reg in s.components.items():
            expected = [moebius_component(interaction, u.bits, x, GRID) for x in GRID]
            np.testing.assert_allclose(reg.predict(GRID[:, list(u)]), expected, atol=1e-12)
        # values frozen from the oracle above
        assert s.components[S(0)].predict([[0.0], [1.0]]).tolist() == [-1.25, 1.25]
        assert s.components[S(1)].predict([[1.0]]).tolist() == [1.75]
        assert s.components[S(0, 1)].predict([[1.0, 1.0]]).tolist() == [0.75]

    def test_constant_model(self):
        for k in (1, 2, 3):
            s = train_pdd(lambda X: np.full(len(X), 7.0), np.random.rand(5, 3), k, "lookup")
            assert s.f_empty == 7.0
            for y in s.info["targets"].values():
                np.testing.assert_array_equal(y, 0.0)

    def test_single_feature_model(self):
        Z = np.array([[0.0, 5.0], [1.0, -5.0]])
        s = train_pdd(lambda X: X[:, 0], Z, 1, "lookup")
        np.testing.assert_array_equal(s.info["targets"][S(1)], 0.0)
        np.testing.assert_array_equal(s.components[S(0)].predict(Z[:, :1]), [-0.5, 0.5])

    def test_moebius_on_irregular_background(self):
        rng = np.random.default_rng(3)
        Z = rng.normal(size=(6, 3))
        f = lambda X: np.sin(X[:, 0]) * X[:, 1] + X[:, 2] ** 2 * X[:, 0] + X[:, 1] * X[:, 2]
        s = train_pdd(f, Z, 3, "lookup")
        for u, reg in s.components.items():
            expected = [moebius_component(f, u.bits, x, Z) for x in Z]
            np.testing.assert_allclose(reg.predict(Z[:, list(u)]), expected, atol=1e-10)

    def test_model_call_budget(self):
        Z = np.random.default_rng(4).normal(size=(7, 4))
        for k in (1, 2, 4):
            m = CountingModel(friedman_like)
            s = train_pdd(m, Z, k, "tree")
            n_sub = len(enumerate_subsets(4, k))
            assert m.rows == 7 + 49 * n_sub == s.info["model_evaluations"]

    def test_inner_sample_budget(self):
        Z = np.random.default_rng(5).normal(size=(10, 3))
        m = CountingModel(friedman_like)
        train_pdd(m, Z, 2, "tree", inner_sample=4, seed=1)
        assert m.rows == 10 + 10 * 4 * 6

    def test_rejects_bad_order(self):
        with pytest.raises(InputError):
            train_pdd(interaction, GRID, 3)
        with pytest.raises(InputError):
            train_pdd(interaction, GRID, 0)

    def test_single_row_background(self):
        z = np.array([[0.5, 2.0]])
        s = train_pdd(interaction, z, 2, "lookup")
        assert s.f_empty == interaction(z)[0]
        np.testing.assert_allclose(s.predict(z), interaction(z), atol=1e-12)

    def test_parallel_levels_match_serial(self):
        Z = np.random.default_rng(6).normal(size=(15, 4))
        a = train_pdd(friedman_like, Z, 3, "tree")
        b = train_pdd(friedman_like, Z, 3, "tree", n_jobs=4)
        Q = np.random.default_rng(7).normal(size=(50, 4))
        np.testing.assert_array_equal(a.predict(Q), b.predict(Q))

    def test_row_order_invariance(self):
        rng = np.random.default_rng(8)
        Z = rng.integers(0, 4, size=(12, 3)).astype(float)
        perm = rng.permutation(12)
        a = train_pdd(friedman_like, Z, 2, "lookup")
        b = train_pdd(friedman_like, Z[perm], 2, "lookup")
        assert a.f_empty == pytest.approx(b.f_empty, abs=1e-12)
        np.testing.assert_allclose(a.predict(Z), b.predict(Z), atol=1e-12)


def friedman_like(X):
    return np.sin(X[:, 0] * X[:, 1]) + (X[:, 2] - 0.5) ** 2 + X[:, -1]


class TestInvariants:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 4))
    def test_telescoping_identity(self, seed, d):
        rng = np.random.default_rng(seed)
        Z = rng.normal(size=(5, d))
        coef = rng.normal(size=(d, d))
        f = lambda X: np.einsum("ni,ij,nj->n", X, coef, np.tanh(X))
        k = int(rng.integers(1, d + 1))
        s = train_pdd(f, Z, k, "lookup")
        for u in s.components:
            for x in Z:
                acc = s.f_empty + sum(
                    s.components[v].predict(x[list(v)][None])[0]
                    for v in list(u.proper_subsets()) + [u]
                )
                assert acc == pytest.approx(partial_dependence(f, u, x, Z), abs=1e-9)

    def test_full_order_reproduces_model_on_background(self):
        rng = np.random.default_rng(9)
        Z = rng.normal(size=(8, 4))
        s = train_pdd(friedman_like, Z, 4, "lookup")
        np.testing.assert_allclose(surrogate_predict(s, Z), friedman_like(Z), atol=1e-9)

    def test_dummy_feature_targets_zero(self):
        Z = np.random.default_rng(10).normal(size=(6, 3))
        f = lambda X: X[:, 0] * X[:, 1] + np.cos(X[:, 0])
        s = train_pdd(f, Z, 3, "lookup")
        for u, y in s.info["targets"].items():
            if 2 in u:
                np.testing.assert_allclose(y, 0.0, atol=1e-9)
        # a tree leaves fit error in lower orders, so only the singleton is exactly zero
        t = train_pdd(f, Z, 3, "tree")
        np.testing.assert_allclose(t.info["targets"][S(2, d=3)], 0.0, atol=1e-9)


class TestPredictAndVariance:
    def test_predict_examples(self):
        s = grid_surrogate()
        assert s.predict([[1.0, 1.0]])[0] == 6.0
        c = train_pdd(lambda X: np.full(len(X), 3.0), GRID, 2, "lookup")
        np.testing.assert_array_equal(c.predict(np.random.rand(5, 2)), 3.0)
        with pytest.raises(InputError):
            s.predict([[1.0, 2.0, 3.0]])

    def test_grid_variances(self):
        rep = component_variances(grid_surrogate(), GRID)
        assert rep.per_subset == {S(0): 1.5625, S(1): 3.0625, S(0, 1): 0.5625}
        assert rep.total == 5.1875 == rep.explained()
        np.testing.assert_allclose(rep.shapley_effects(2), [1.84375, 3.34375])

    def test_constant_and_dummy_variances(self):
        rep = component_variances(train_pdd(lambda X: 0 * X[:, 0] + 1, GRID, 2, "lookup"), GRID)
        assert rep.total == 0 and all(v == 0 for v in rep.per_subset.values())
        rep = component_variances(train_pdd(lambda X: X[:, 0], GRID, 2, "lookup"), GRID)
        assert rep.per_subset[S(1)] == 0

    def test_empty_eval_rejected(self):
        with pytest.raises(InputError):
            component_variances(grid_surrogate(), np.zeros((0, 2)))

    @pytest.mark.parametrize("d", [2, 3, 4])
    def test_variance_decomposition_on_product_grid(self, d):
        X = product_grid(d, (0.0, 0.4, 1.0))
        f = lambda A: np.exp(A[:, 0] * A[:, -1]) + A.sum(axis=1) ** 2
        s = train_pdd(f, X, d, "lookup")
        rep = component_variances(s, X)
        assert abs(rep.total - rep.explained()) <= 1e-9


class TestPersistence:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(11)
        Z = rng.uniform(size=(30, 5))
        for s in (grid_surrogate(), train_pdd(friedman1(), Z, 2, "tree")):
            path = tmp_path / "s.json"
            save_surrogate(s, path)
            t = load_surrogate(path)
            Q = rng.uniform(size=(100, s.d))
            np.testing.assert_array_equal(t.predict(Q), s.predict(Q))
            assert t.f_empty == s.f_empty and t.k == s.k
            assert list(t.components) == list(s.components)
            assert t.background_fingerprint == s.background_fingerprint

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "s.json"
        save_surrogate(grid_surrogate(), path)
        doc = json.loads(path.read_text())
        doc["format_version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(SurrogateLoadError) as err:
            load_surrogate(path)
        assert err.value.section == "format_version"

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "s.json"
        save_surrogate(grid_surrogate(), path)
        text = path.read_text()
        path.write_text(text[: len(text) // 2])
        with pytest.raises(SurrogateLoadError) as err:
            load_surrogate(path)
        assert err.value.section == "document"

    def test_bad_component_section_named(self, tmp_path):
        path = tmp_path / "s.json"
        save_surrogate(grid_surrogate(), path)
        doc = json.loads(path.read_text())
        del doc["components"][1]["regressor"]["lookup"]
        path.write_text(json.dumps(doc))
        with pytest.raises(SurrogateLoadError) as err:
            load_surrogate(path)
        assert err.value.section == "components[1].regressor"

    def test_downward_closure_enforced(self):
        reg = LookupRegressor().fit([[0.0, 0.0]], [0.0])
        with pytest.raises(InputError):
            PDDSurrogate(0.0, {S(0, 1): reg}, 2, 2)
