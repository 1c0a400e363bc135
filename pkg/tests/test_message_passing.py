import numpy as np
import pytest

from signgraph import tensor as tz
from signgraph.backbone import NodeGrid
from signgraph.message_passing import (
    StageConfig, block_weights, edge_conv, edge_conv_linear, hsg_update,
    init_block_weights, lsg_update, mix_stage, tsg_update,
)
from signgraph.rng import CounterRng
from signgraph.tensor import ShapeError, Tensor


def _weights(d_in, d_mid, key, hier_stride=0):
    params = {}
    init_block_weights(d_in, d_mid, CounterRng(key), "w", params,
                       hier_stride=hier_stride)
    return params, block_weights(params, "w")


class TestEdgeConv:
    def test_hand_case_single_edge(self):
        # identity-ish MLP: message = relu([x_i, x_j - x_i] @ W)
        feats = Tensor(np.array([[1.0, 2.0], [4.0, 6.0]]))
        w = Tensor(np.vstack([np.eye(2), np.eye(2)]))  # x_i + (x_j - x_i) = x_j
        b = Tensor(np.zeros(2))
        out = edge_conv(feats, [(0, 1)], w, b)
        # node 0 receives relu(x_1), node 1 receives relu(x_0)
        assert np.array_equal(out.data, [[4.0, 6.0], [1.0, 2.0]])

    def test_isolated_nodes_zero(self):
        feats = Tensor(CounterRng("iso").normal((4, 3)))
        _, w = _weights(3, 3, "iso-w")
        out = edge_conv(feats, [(0, 1)], w.mlp_w, w.mlp_b)
        assert np.array_equal(out.data[2], np.zeros(3))
        assert np.array_equal(out.data[3], np.zeros(3))

    def test_no_edges_all_zero(self):
        _, w = _weights(3, 3, "ne")
        out = edge_conv(Tensor(np.ones((3, 3))), [], w.mlp_w, w.mlp_b)
        assert np.array_equal(out.data, np.zeros((3, 3)))

    def test_undirected_both_directions(self):
        # node with two neighbors takes elementwise max over both messages
        feats = Tensor(np.array([[0.0], [1.0], [-2.0]]))
        w = Tensor(np.array([[0.0], [1.0]]))  # message = relu(x_j - x_i)
        b = Tensor(np.zeros(1))
        out = edge_conv(feats, [(0, 1), (0, 2)], w, b)
        assert out.data[0, 0] == pytest.approx(1.0)  # max(relu(1), relu(-2))
        assert out.data[1, 0] == pytest.approx(0.0)
        assert out.data[2, 0] == pytest.approx(2.0)

    def test_mean_vs_max_singleton_neighborhoods(self):
        # with exactly one neighbor per node, mean and max agree for the
        # linear message network
        feats = Tensor(CounterRng("sng").normal((4, 3)))
        _, w = _weights(3, 3, "sng-w")
        edges = [(0, 1), (2, 3)]
        a = edge_conv_linear(feats, edges, w.mlp_w, w.mlp_b, "edgeconv_max")
        m = edge_conv_linear(feats, edges, w.mlp_w, w.mlp_b, "mean")
        assert np.allclose(a.data, m.data)

    def test_mean_differs_from_max_generally(self):
        feats = Tensor(CounterRng("df").normal((4, 3)))
        _, w = _weights(3, 3, "df-w")
        edges = [(0, 1), (0, 2), (0, 3)]
        a = edge_conv(feats, edges, w.mlp_w, w.mlp_b, "edgeconv_max")
        m = edge_conv(feats, edges, w.mlp_w, w.mlp_b, "mean")
        assert not np.allclose(a.data[0], m.data[0])

    def test_out_of_range_edge_rejected(self):
        _, w = _weights(2, 2, "oor")
        with pytest.raises(ShapeError):
            edge_conv(Tensor(np.ones((2, 2))), [(0, 5)], w.mlp_w, w.mlp_b)

    def test_max_tie_gradient_first_message(self):
        # two identical neighbors: gradient routes to the first message only
        feats = Tensor(np.array([[0.0], [3.0], [3.0]]), requires_grad=True)
        w = Tensor(np.array([[0.0], [1.0]]))
        b = Tensor(np.zeros(1))
        with tz.Tape() as tape:
            out = edge_conv(feats, [(0, 1), (0, 2)], w, b)
            loss = tz.tsum(tz.gather_rows(out, [0]))
        tz.backward(tape, loss)
        # message order for dst=0: edge (0,1) first, so node 1 gets the grad
        assert feats.grad[1, 0] == pytest.approx(1.0)
        assert feats.grad[2, 0] == pytest.approx(0.0)


def _grid(T, h, w, d, key):
    return NodeGrid(h, w, d, T, Tensor(CounterRng(key).normal((T * h * w, d))))


class TestResidualUpdates:
    def test_zero_theta2_identity_lsg(self):
        params, w = _weights(3, 4, "id-l")
        params["w.theta2"].data[:] = 0.0
        g = _grid(2, 2, 2, 3, "id-lx")
        out = lsg_update(g, block_weights(params, "w"), 2)
        assert np.array_equal(out.features.data, g.features.data)

    def test_zero_theta2_identity_tsg(self):
        params, w = _weights(3, 4, "id-t")
        params["w.theta2"].data[:] = 0.0
        g = _grid(3, 2, 2, 3, "id-tx")
        out = tsg_update(g, block_weights(params, "w"), 2)
        assert np.array_equal(out.features.data, g.features.data)

    def test_zero_theta2_identity_hsg(self):
        params, _ = _weights(2, 3, "id-h", hier_stride=2)
        params["w.theta2"].data[:] = 0.0
        # also zero the message net so the low-side residual vanishes
        params["w.mlp_w"].data[:] = 0.0
        tap = _grid(2, 4, 4, 2, "id-hp")
        g = _grid(2, 2, 2, 3, "id-hg")
        out = hsg_update(tap, g, block_weights(params, "w"), 2)
        assert np.array_equal(out.features.data, g.features.data)

    def test_shapes_preserved(self):
        params, w = _weights(5, 6, "sh")
        g = _grid(3, 2, 3, 5, "sh-x")
        for out in (lsg_update(g, w, 2), tsg_update(g, w, 4)):
            assert out.features.data.shape == g.features.data.shape
            assert (out.grid_h, out.grid_w, out.num_frames) == (2, 3, 3)

    def test_single_frame_tsg_passthrough(self):
        _, w = _weights(3, 3, "sf")
        g = _grid(1, 2, 2, 3, "sf-x")
        assert tsg_update(g, w, 2) is g

    def test_lsg_dropedge_deterministic(self):
        _, w = _weights(3, 3, "dd")
        g = _grid(2, 3, 3, 3, "dd-x")
        a = lsg_update(g, w, 4, drop_rate=0.5, drop_seed=9)
        b = lsg_update(g, w, 4, drop_rate=0.5, drop_seed=9)
        c = lsg_update(g, w, 4, drop_rate=0.5, drop_seed=10)
        assert np.array_equal(a.features.data, b.features.data)
        assert not np.array_equal(a.features.data, c.features.data)

    def test_hsg_shape_mismatch_rejected(self):
        _, w = _weights(2, 3, "hm", hier_stride=2)
        with pytest.raises(ShapeError, match="tap"):
            hsg_update(_grid(1, 3, 3, 2, "hm-t"), _grid(1, 2, 2, 3, "hm-g"), w, 2)

    def test_collector_records_per_frame_edges(self):
        _, w = _weights(3, 3, "col")
        g = _grid(3, 2, 2, 3, "col-x")
        coll = []
        lsg_update(g, w, 2, collector=coll)
        tsg_update(g, w, 2, collector=coll)
        kinds = [k for k, _ in coll]
        assert kinds == ["local", "temporal"]
        assert len(coll[0][1]) == 3      # one local graph per frame
        assert len(coll[1][1]) == 2      # one temporal graph per adjacent pair


class TestMixStage:
    def test_order_respected_vs_swapped(self):
        params = {}
        rng = CounterRng("mix")
        init_block_weights(3, 3, rng, "s.lsg", params)
        init_block_weights(3, 3, rng, "s.tsg", params)
        g = _grid(2, 2, 2, 3, "mix-x")
        a = mix_stage(g, None, StageConfig(order=("TSG", "LSG")), params, "s", 0)
        b = mix_stage(g, None, StageConfig(order=("LSG", "TSG")), params, "s", 0)
        assert not np.array_equal(a.features.data, b.features.data)

    def test_hsg_requires_tap(self):
        with pytest.raises(ShapeError, match="tap"):
            mix_stage(_grid(1, 2, 2, 3, "nt"), None,
                      StageConfig(order=("HSG",)), {}, "s", 0)

    def test_bad_order_rejected(self):
        with pytest.raises(ValueError):
            StageConfig(order=("LSG", "LSG"))
        with pytest.raises(ValueError):
            StageConfig(order=("GSG",))
        with pytest.raises(ValueError):
            StageConfig(aggregation="sum")
