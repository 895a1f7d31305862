import numpy as np
import pytest

from quantmon.detector import LabeledDataset, fit_tree
from quantmon.errors import ConfigurationError
from quantmon.monitor import feature_index
from quantmon.reduction import (
    CandidatePool,
    ReducedModel,
    evaluate_tree,
    minimal_feature_search,
    rank_features,
    reduce_features,
    summarize_minimal,
)


def _split(X, y, n_train):
    return LabeledDataset(X[:n_train], y[:n_train]), LabeledDataset(X[n_train:], y[n_train:])


def informative_data(seed=0, n=600, n_noise=20):
    """Three informative features (0, 1, 2) followed by pure noise."""
    rng = np.random.default_rng(seed)
    X = rng.random((n, 3 + n_noise))
    y = np.full(n, "none", dtype=object)
    y[X[:, 0] > 0.75] = "memory"
    y[(X[:, 0] <= 0.75) & (X[:, 1] > 0.8)] = "contrast"
    y[(X[:, 0] <= 0.75) & (X[:, 1] <= 0.8) & (X[:, 2] < 0.15)] = "blur"
    return _split(X, y.astype(str), n // 2)


def twin_data(seed=1, n=400):
    """Features 0 and 1 each separate the classes alone; the rest is noise."""
    rng = np.random.default_rng(seed)
    y = rng.choice(["none", "memory"], size=n)
    pos = y == "memory"
    X = rng.random((n, 6))
    X[:, 0] = np.where(pos, 0.6, 0.1) + 0.3 * rng.random(n)
    X[:, 1] = np.where(pos, 0.1, 0.6) + 0.3 * rng.random(n)
    return _split(X, y, n // 2)


class TestReduce:
    def test_perfect_single_feature(self):
        rng = np.random.default_rng(0)
        X = rng.random((300, 5))
        y = np.where(X[:, 3] > 0.5, "memory", "none")
        train, test = _split(X, y, 150)
        full = fit_tree(train, ccp_alpha=0.0)
        red = reduce_features(full, train, test)
        assert red.accepted and red.features == (3,)

    def test_zero_retention_takes_one_feature(self):
        train, test = informative_data()
        full = fit_tree(train, ccp_alpha=1e-4)
        red = reduce_features(full, train, test, retention=0.0)
        assert red.accepted and red.n_features == 1

    def test_noise_features_dropped(self):
        train, test = informative_data()
        full = fit_tree(train, ccp_alpha=1e-3)
        red = reduce_features(full, train, test, retention=0.95)
        assert red.accepted
        assert red.n_features <= 3 and set(red.features) <= {0, 1, 2}
        ret = red.retention()
        assert ret["precision"] >= 0.95 and ret["recall"] >= 0.95

    def test_all_features_reproduce_full_model(self):
        train, test = informative_data(seed=3)
        full = fit_tree(train, ccp_alpha=1e-3)
        ranking = rank_features(full)
        again = fit_tree(train, ccp_alpha=1e-3, features=ranking)
        np.testing.assert_array_equal(again.predict(test.X), full.predict(test.X))

    def test_acceptance_is_sound(self):
        train, test = informative_data(seed=4)
        full = fit_tree(train, ccp_alpha=1e-3)
        red = reduce_features(full, train, test, retention=0.97, mode="sdc")
        rep = evaluate_tree(red.tree, test)
        full_rep = evaluate_tree(full, test)
        assert red.accepted == (rep.precision["sdc"] >= 0.97 * full_rep.precision["sdc"]
                                and rep.recall["sdc"] >= 0.97 * full_rep.recall["sdc"])
        # Every earlier subset in the trace was rejected.
        assert all(not row.accepted for row in red.trace[:-1])
        assert [row.k for row in red.trace] == list(range(1, red.n_features + 1))

    def test_unreachable_retention_reports_best(self):
        train, test = informative_data()
        full = fit_tree(train, ccp_alpha=1e-3)
        red = reduce_features(full, train, test, retention=1.0, candidates=[5, 6, 7])
        assert not red.accepted and set(red.features) <= {5, 6, 7}

    def test_ranking_order(self):
        train, _ = informative_data()
        full = fit_tree(train, ccp_alpha=1e-3)
        ranking = rank_features(full)
        assert set(ranking[:3]) == {0, 1, 2}
        assert sorted(ranking) == list(range(train.n_features))

    def test_bad_retention(self):
        train, test = informative_data()
        with pytest.raises(ConfigurationError):
            reduce_features(fit_tree(train), train, test, retention=1.5)


class TestMinimalSearch:
    def test_finds_both_twins(self):
        train, test = twin_data()
        pool = minimal_feature_search(train, test, ccp_alpha=1e-3)
        assert pool.feature_sets[:2] == [(0,), (1,)]

    def test_depth_one(self):
        train, test = twin_data()
        pool = minimal_feature_search(train, test, depth=1, ccp_alpha=1e-3)
        assert len(pool.candidates) <= 1 and pool.rounds == 1

    def test_depth_in_features(self):
        train, test = twin_data()
        pool = minimal_feature_search(train, test, depth=1, depth_unit="features", ccp_alpha=1e-3)
        assert pool.eliminated == 1

    def test_sets_are_disjoint(self):
        train, test = informative_data(seed=5)
        pool = minimal_feature_search(train, test, retention=0.5, ccp_alpha=1e-3, max_k=4)
        seen = [f for s in pool.feature_sets for f in s]
        assert len(seen) == len(set(seen))

    def test_bad_unit(self):
        train, test = twin_data()
        with pytest.raises(ConfigurationError):
            minimal_feature_search(train, test, depth_unit="layers")


class TestSummary:
    def test_layer_depth(self):
        train, test = twin_data()
        tree = fit_tree(train, ccp_alpha=1e-3)
        rep = evaluate_tree(tree, test)
        f = feature_index(7, 100, 8)
        assert f == 86
        pool = CandidatePool([ReducedModel((f,), tree, rep, rep, True)], rounds=1)
        summary = summarize_minimal(pool, 8)
        row = summary["candidates"][0]
        assert row["layers"] == [7] and row["percentiles"] == [100]
        assert row["depth"] == [0.875]
        assert summary["frac_last_quartile"] == 1.0 and summary["frac_first_half"] == 0.0

    def test_empty_pool(self):
        with pytest.raises(ConfigurationError):
            summarize_minimal(CandidatePool(), 4)
