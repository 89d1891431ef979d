import numpy as np
import pytest

from scrapsig.errors import DataError
from scrapsig.explain import (
    coalition_values,
    interaction_values,
    mean_abs_shap,
    shapley_values,
    tree_expectation,
)
from scrapsig.features import ALL_FEATURES
from scrapsig.trees import DecisionTree, RandomForestModel, TreeNode, forest_fit


def leaf(counts):
    counts = np.asarray(counts, dtype=float)
    return TreeNode(
        gini=0.0, n_samples=int(counts.sum()), class_counts=counts, predicted_class=int(np.argmax(counts))
    )


def split(feature, threshold, left, right):
    counts = left.class_counts + right.class_counts
    return TreeNode(
        gini=0.0,
        n_samples=left.n_samples + right.n_samples,
        class_counts=counts,
        feature=feature,
        threshold=threshold,
        left=left,
        right=right,
    )


def forest_of(trees, n_features, classes=(0, 1)):
    return RandomForestModel(
        trees=trees,
        classes=list(classes),
        n_features=n_features,
        seed=0,
        n_trees=len(trees),
        features_per_split=n_features,
        bootstrap=False,
        feature_names=[f"f{i}" for i in range(n_features)],
    )


def hand_tree():
    """Depth-2 tree used for all worked examples.

    root: x0 <= 0.5 -> (x1 <= 0.5 -> [2,0] | [1,1]) | [2,2]
    """
    inner = split(1, 0.5, leaf([2, 0]), leaf([1, 1]))
    root = split(0, 0.5, inner, leaf([2, 2]))
    return DecisionTree(root=root, classes=[0, 1], n_features=2)


class TestTreeExpectation:
    def test_full_coalition_is_prediction(self):
        tree = hand_tree()
        x = np.array([0.0, 1.0])
        assert tree_expectation(tree, x, {0, 1}) == pytest.approx(tree.proba_one(x), abs=1e-15)

    def test_empty_coalition_is_root_distribution(self):
        tree = hand_tree()
        out = tree_expectation(tree, np.array([0.0, 1.0]), set())
        assert out == pytest.approx([5 / 8, 3 / 8], abs=1e-15)

    def test_one_absent_feature_weighted_by_hand(self):
        # x0 known (goes left), x1 absent: 0.5*[1,0] + 0.5*[0.5,0.5]
        out = tree_expectation(hand_tree(), np.array([0.0, 1.0]), {0})
        assert out == pytest.approx([0.75, 0.25], abs=1e-15)

    def test_boolean_mask_accepted(self):
        tree = hand_tree()
        x = np.array([0.0, 1.0])
        assert np.array_equal(
            tree_expectation(tree, x, [True, False]), tree_expectation(tree, x, {0})
        )


class TestCoalitionValues:
    def test_endpoints(self):
        model = forest_of([hand_tree()], n_features=2)
        x = np.array([0.0, 1.0])
        v = coalition_values(model, x)
        assert v.shape == (4, 2)
        assert v[0] == pytest.approx([5 / 8, 3 / 8], abs=1e-15)
        assert v[3] == pytest.approx(model.predict_proba_one(x), abs=1e-15)

    def test_bitmask_indexing(self):
        model = forest_of([hand_tree()], n_features=2)
        x = np.array([0.0, 1.0])
        v = coalition_values(model, x)
        assert v[1] == pytest.approx(tree_expectation(hand_tree(), x, {0}), abs=1e-15)
        assert v[2] == pytest.approx(tree_expectation(hand_tree(), x, {1}), abs=1e-15)


class TestShapleyValues:
    def test_hand_coalition_table(self):
        # v(empty)=(.625,.375) v({0})=(.75,.25) v({1})=(.5,.5) v(full)=(.5,.5)
        model = forest_of([hand_tree()], n_features=2)
        exp = shapley_values(model, np.array([0.0, 1.0]))
        assert exp.base_value == pytest.approx([0.625, 0.375], abs=1e-12)
        assert exp.contributions[0] == pytest.approx([0.0625, -0.0625], abs=1e-12)
        assert exp.contributions[1] == pytest.approx([-0.1875, 0.1875], abs=1e-12)

    def test_efficiency(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(60, 5))
        y = (X[:, 0] + X[:, 2] > 0).astype(int)
        model = forest_fit(X, y, n_trees=20, seed=0)
        for row in X[:10]:
            exp = shapley_values(model, row)
            recovered = exp.base_value + exp.contributions.sum(axis=0)
            assert np.max(np.abs(recovered - model.predict_proba_one(row))) <= 1e-9

    def test_dummy_feature_zero(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(50, 4))
        X[:, 3] = 0.0  # constant: never split on
        y = (X[:, 0] > 0).astype(int)
        model = forest_fit(X, y, n_trees=10, seed=1)
        assert not any(3 in t.features_used() for t in model.trees)
        exp = shapley_values(model, X[0])
        assert np.all(exp.contributions[3] == 0.0)

    def test_single_feature_stump(self):
        stump = DecisionTree(root=split(0, 0.5, leaf([3, 1]), leaf([0, 4])), classes=[0, 1], n_features=1)
        model = forest_of([stump], n_features=1)
        x = np.array([0.0])
        exp = shapley_values(model, x)
        assert exp.contributions[0] == pytest.approx(
            model.predict_proba_one(x) - exp.base_value, abs=1e-15
        )

    def test_linearity_across_trees(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(40, 3))
        y = (X[:, 0] - X[:, 1] > 0).astype(int)
        forest = forest_fit(X, y, n_trees=3, seed=2, bootstrap=True)
        x = X[0]
        whole = shapley_values(forest, x).contributions
        parts = [
            shapley_values(forest_of([t], n_features=3), x).contributions for t in forest.trees
        ]
        assert whole == pytest.approx(np.mean(parts, axis=0), abs=1e-12)

    def test_symmetric_game_gives_equal_phi(self):
        # mirrored stumps make the coalition game exchangeable in (0, 1)
        stump0 = DecisionTree(root=split(0, 0.5, leaf([4, 0]), leaf([0, 4])), classes=[0, 1], n_features=2)
        stump1 = DecisionTree(root=split(1, 0.5, leaf([4, 0]), leaf([0, 4])), classes=[0, 1], n_features=2)
        model = forest_of([stump0, stump1], n_features=2)
        exp = shapley_values(model, np.array([0.0, 0.0]))
        assert exp.contributions[0] == pytest.approx(exp.contributions[1], abs=1e-12)

    def test_feature_limit_guard(self):
        model = forest_of([], n_features=21)
        with pytest.raises(DataError):
            shapley_values(model, np.zeros(21))


class TestInteractionValues:
    def test_two_feature_hand_table(self):
        model = forest_of([hand_tree()], n_features=2)
        x = np.array([0.0, 1.0])
        inter = interaction_values(model, x)
        v = coalition_values(model, x)
        # p=2: phi_01 = (v(full) - v({0}) - v({1}) + v(empty)) / 2
        expected_01 = (v[3] - v[1] - v[2] + v[0]) / 2.0
        assert inter.values[0, 1] == pytest.approx(expected_01, abs=1e-12)
        assert inter.values[0, 1] == pytest.approx([-0.0625, 0.0625], abs=1e-12)
        assert np.array_equal(inter.values[0, 1], inter.values[1, 0])

    def test_additive_forest_has_zero_off_diagonals(self):
        stump0 = DecisionTree(root=split(0, 0.5, leaf([3, 1]), leaf([1, 3])), classes=[0, 1], n_features=2)
        stump1 = DecisionTree(root=split(1, 0.0, leaf([2, 2]), leaf([0, 4])), classes=[0, 1], n_features=2)
        model = forest_of([stump0, stump1], n_features=2)
        inter = interaction_values(model, np.array([0.0, 1.0]))
        assert np.all(inter.values[0, 1] == 0.0)

    def test_xor_tree_has_nonzero_symmetric_interaction(self):
        # class flips with x1 on both sides of the x0 split
        left = split(1, 0.5, leaf([4, 0]), leaf([0, 4]))
        right = split(1, 0.5, leaf([0, 4]), leaf([4, 0]))
        xor_tree = DecisionTree(root=split(0, 0.5, left, right), classes=[0, 1], n_features=2)
        model = forest_of([xor_tree], n_features=2)
        inter = interaction_values(model, np.array([0.0, 0.0]))
        assert abs(inter.values[0, 1, 0]) > 0.1
        assert np.array_equal(inter.values[0, 1], inter.values[1, 0])

    def test_rows_sum_to_shapley(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(60, 5))
        y = ((X[:, 0] > 0) & (X[:, 1] > 0)).astype(int)
        model = forest_fit(X, y, n_trees=15, seed=3)
        for row in X[:5]:
            phi = shapley_values(model, row).contributions
            inter = interaction_values(model, row).values
            assert np.max(np.abs(inter.sum(axis=1) - phi)) <= 1e-9

    def test_feature_limit_guard(self):
        model = forest_of([], n_features=13)
        with pytest.raises(DataError):
            interaction_values(model, np.zeros(13))


class TestMeanAbsShap:
    def test_dummy_feature_ranked_last_with_zero(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(40, 3))
        X[:, 2] = 7.0
        y = (X[:, 0] > 0).astype(int)
        model = forest_fit(X, y, n_trees=10, seed=4, feature_names=["a", "b", "dummy"])
        summary = mean_abs_shap(model, X)
        assert summary.overall[-1] == ("dummy", 0.0)

    def test_single_driver_ranked_first(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(60, len(ALL_FEATURES)))
        vol = ALL_FEATURES.index("price_volatility")
        y = (X[:, vol] > 0).astype(int)
        model = forest_fit(X, y, n_trees=20, seed=5, feature_names=list(ALL_FEATURES))
        summary = mean_abs_shap(model, X)
        assert summary.top_feature() == "price_volatility"
        for rank in summary.per_class.values():
            values = [v for _, v in rank]
            assert values == sorted(values, reverse=True)

    def test_threads_do_not_change_results(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(24, 4))
        y = (X[:, 1] > 0).astype(int)
        model = forest_fit(X, y, n_trees=10, seed=6)
        serial = mean_abs_shap(model, X, threads=1)
        parallel = mean_abs_shap(model, X, threads=4)
        assert serial.overall == parallel.overall
        assert serial.per_class == parallel.per_class

    def test_to_dict_shape(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(20, 3))
        y = (X[:, 0] > 0).astype(int)
        model = forest_fit(X, y, n_trees=5, seed=7)
        payload = mean_abs_shap(model, X).to_dict()
        assert set(payload) == {"classes", "per_class", "overall"}
        assert sorted(f for f, _ in payload["overall"]) == ["f0", "f1", "f2"]
        values = [v for _, v in payload["overall"]]
        assert values == sorted(values, reverse=True)
