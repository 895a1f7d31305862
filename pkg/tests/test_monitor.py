import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import quantile_oracle
from quantmon.errors import ConfigurationError, DueError
from quantmon.monitor import (
    EPS,
    PERCENTILES,
    FeatureMapTracer,
    QuantileBounds,
    QuantileMonitor,
    anomaly_vector,
    bounds_from_quantiles,
    extract_bounds,
    f_norm,
    feature_index,
    feature_location,
    feature_name,
    feature_sums,
    layer_quantiles,
    read_bounds_csv,
    read_vectors_csv,
    write_bounds_csv,
    write_vectors_csv,
)
from quantmon.tensor_net import forward

finite = st.floats(-1e6, 1e6, allow_nan=False, width=32)


class TestFeatureSums:
    def test_shape_and_dtype(self):
        t = np.ones((2, 3, 4, 5), dtype=np.float32)
        s = feature_sums(t)
        assert s.shape == (2, 3) and s.dtype == np.float32
        np.testing.assert_array_equal(s, 20.0)

    def test_overflow_gives_inf(self):
        t = np.full((1, 1, 2, 2), 3e38, dtype=np.float32)
        assert np.isinf(feature_sums(t)[0, 0])


class TestQuantiles:
    @given(st.lists(finite, min_size=1, max_size=40))
    @settings(max_examples=200, deadline=None)
    def test_matches_oracle(self, values):
        got = layer_quantiles(np.array(values, dtype=np.float32))
        expected = [quantile_oracle(np.float32(values), p) for p in PERCENTILES]
        np.testing.assert_array_equal(got, expected)

    def test_agrees_with_numpy_linear(self):
        x = np.random.default_rng(0).normal(size=(50, 13))
        np.testing.assert_allclose(layer_quantiles(x), np.percentile(x, PERCENTILES, axis=1).T,
                                   rtol=1e-12, atol=1e-14)

    def test_single_channel(self):
        np.testing.assert_array_equal(layer_quantiles(np.array([4.0])), [4.0] * 11)

    def test_endpoints_are_min_and_max(self):
        x = np.array([3.0, -1.0, 7.0, 2.0])
        q = layer_quantiles(x)
        assert q[0] == -1.0 and q[-1] == 7.0

    def test_infinite_order_statistic_kept(self):
        q = layer_quantiles(np.array([1.0, np.inf, 2.0]))
        assert q[-1] == np.inf and q[0] == 1.0

    def test_empty(self):
        with pytest.raises(ConfigurationError):
            layer_quantiles(np.zeros((2, 0)))


class TestFNorm:
    def test_zero_at_upper_bound(self):
        assert f_norm(5.0, 1.0, 5.0) == 0.0

    def test_inside_is_non_positive(self):
        a = np.linspace(1.0, 5.0, 50)
        assert np.all(f_norm(a, 1.0, 5.0) <= 0)

    def test_outside_is_positive(self):
        assert f_norm(6.0, 1.0, 5.0) > 0
        assert f_norm(0.5, 1.0, 5.0) > 0

    def test_closed_form(self):
        assert f_norm(7.0, 1.0, 5.0) == pytest.approx(np.tanh(2.0 / (5.0 + EPS)))
        assert f_norm(-1.0, 1.0, 5.0) == pytest.approx(np.tanh(2.0 / (1.0 + EPS)))

    def test_monotone_above_and_below(self):
        above = f_norm(np.linspace(5, 50, 100), 1.0, 5.0)
        below = f_norm(np.linspace(-50, 0.99, 100), 1.0, 5.0)
        assert np.all(np.diff(above) >= 0)
        assert np.all(np.diff(below) <= 0)

    def test_infinity_saturates(self):
        assert f_norm(np.inf, 0.0, 1.0) == 1.0
        assert f_norm(-np.inf, 0.0, 1.0) == 1.0


class TestAnomalyVector:
    def test_percentile_major_layout(self):
        L = 3
        q = np.zeros((L, 11))
        bounds = QuantileBounds(np.zeros((L, 11)), np.ones((L, 11)))
        q[1, 4] = 100.0  # layer 2, p=40
        v = anomaly_vector(q, bounds)
        assert v.shape == (33,)
        assert np.argmax(v) == 4 * L + 1 == feature_index(2, 40, L)

    def test_range_and_bounds(self):
        rng = np.random.default_rng(0)
        q = rng.normal(0, 1e3, size=(500, 4, 11))
        q[0, 0, 0] = np.inf
        bounds = bounds_from_quantiles(rng.normal(size=(20, 4, 11)))
        v = anomaly_vector(q, bounds)
        assert np.all((v > 0) & (v < 1))

    def test_grid_mismatch(self):
        with pytest.raises(ConfigurationError):
            anomaly_vector(np.zeros((3, 11)), QuantileBounds(np.zeros((4, 11)), np.ones((4, 11))))

    def test_index_round_trip(self):
        for k in range(8 * 11):
            assert feature_index(*feature_location(k, 8), 8) == k
        assert feature_name(feature_index(7, 100, 8), 8) == "q[layer=7][p=100]"
        with pytest.raises(ConfigurationError):
            feature_location(88, 8)


class TestBounds:
    def test_envelope(self):
        q = np.array([[[1.0] * 11], [[3.0] * 11]])
        b = bounds_from_quantiles(q)
        assert np.all(b.qmin == 1.0) and np.all(b.qmax == 3.0)

    def test_non_finite_is_due(self):
        q = np.zeros((2, 1, 11))
        q[1, 0, 3] = np.nan
        with pytest.raises(DueError):
            bounds_from_quantiles(q)

    def test_min_above_max_rejected(self):
        with pytest.raises(ConfigurationError):
            QuantileBounds(np.ones((1, 11)), np.zeros((1, 11)))

    def test_extract_and_self_consistency(self, tiny_net, tiny_images):
        b = extract_bounds(tiny_net, tiny_images, batch_size=4)
        mon = QuantileMonitor(tiny_net.n_monitored)
        forward(tiny_net, tiny_images, [mon])
        assert np.all(anomaly_vector(mon.quantiles, b) <= 0.5)

    def test_extract_due(self, tiny_net, tiny_images):
        tiny_net.conv(2).weight[0, 0, 0, 0] = np.nan
        with pytest.raises(DueError):
            extract_bounds(tiny_net, tiny_images)

    def test_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        b = bounds_from_quantiles(rng.normal(size=(5, 3, 11)))
        write_bounds_csv(tmp_path / "b.csv", b)
        back = read_bounds_csv(tmp_path / "b.csv")
        np.testing.assert_array_equal(back.qmin, b.qmin)
        np.testing.assert_array_equal(back.qmax, b.qmax)


class TestHooks:
    def test_layer_subset(self, tiny_net, tiny_images):
        full, part = QuantileMonitor(3), QuantileMonitor(3, layers=[2], percentiles=(50, 100))
        forward(tiny_net, tiny_images, [full, part])
        assert part.quantiles.shape == (6, 3, 2)
        assert np.isnan(part.quantiles[:, [0, 2]]).all()
        np.testing.assert_array_equal(part.quantiles[:, 1], full.quantiles[:, 1, [5, 10]])

    def test_due_flag_per_sample(self, tiny_net, tiny_images):
        def poison(l, out):
            if l == 1:
                out[0, 0, 0, 0] = np.nan

        mon = QuantileMonitor(3)
        forward(tiny_net, tiny_images, [poison, mon])
        assert mon.due[0] and not mon.due[1:].any()
        assert np.isnan(mon.quantiles[0]).any()

    def test_monitor_matches_batch_and_single(self, tiny_net, tiny_images):
        batch = QuantileMonitor(3)
        forward(tiny_net, tiny_images, [batch])
        for i in range(len(tiny_images)):
            one = QuantileMonitor(3)
            forward(tiny_net, tiny_images[i:i + 1], [one])
            np.testing.assert_array_equal(one.quantiles[0], batch.quantiles[i])

    def test_tracer_stores_all_sums(self, tiny_net, tiny_images):
        tracer = FeatureMapTracer()
        forward(tiny_net, tiny_images, [tracer])
        assert [t.shape for t in tracer.trace] == [(6, 4), (6, 6), (6, 8)]


def test_vectors_csv_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    X = rng.random((4, 22))
    write_vectors_csv(tmp_path / "v.csv", [3, 1, 4, 1], ["none", "memory", "blur", "none"], X)
    ids, labels, back = read_vectors_csv(tmp_path / "v.csv")
    np.testing.assert_array_equal(back, X)
    assert ids.tolist() == [3, 1, 4, 1] and labels.tolist() == ["none", "memory", "blur", "none"]
