"""EdgeConv message passing and the three residual graph updates.

Each update has the same skeleton: project node features, build (or receive)
a graph, run one graph convolution, project back, add residually.  Edge
selection is recomputed every forward pass but treated as non-differentiable
structure: gradients flow through node features only, never through the
KNN/top-K selection itself.

The projection back to the input dim carries no bias, so zeroing it makes
every update exactly the identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import graphs as gr
from . import tensor as tz
from .backbone import NodeGrid
from .rng import CounterRng
from .tensor import ShapeError, Tensor

AGGREGATIONS = ("edgeconv_max", "mean")


@dataclass
class GraphBlockWeights:
    """Weights of one graph module instance.

    theta1 [D_in, D_mid] projects into the space where distances (and
    messages) live; mlp_w [2*D_mid, D_mid] + mlp_b is the single-layer
    message network; theta2 [D_mid, D_in] projects back for the residual.
    The hierarchical variant replaces theta2 with a strided fusion conv
    kernel [s, s, D_mid, D_in].
    """

    theta1: Tensor
    mlp_w: Tensor
    mlp_b: Tensor
    theta2: Tensor


@dataclass
class StageConfig:
    """One multiscale stage: module order, aggregation, and graph params."""

    order: tuple[str, ...] = ("HSG", "TSG", "LSG")
    aggregation: str = "edgeconv_max"
    params: gr.GraphParams = None

    def __post_init__(self):
        if len(set(self.order)) != len(self.order):
            raise ValueError(f"StageConfig: duplicate module in order {self.order}")
        for m in self.order:
            if m not in ("HSG", "TSG", "LSG"):
                raise ValueError(f"StageConfig: unknown module {m!r}")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"StageConfig: unknown aggregation {self.aggregation!r}")
        if self.params is None:
            self.params = gr.GraphParams()


def init_block_weights(d_in: int, d_mid: int, rng: CounterRng, prefix: str,
                       params: dict[str, Tensor], hier_stride: int = 0) -> None:
    """He-init one graph block into ``params`` under ``prefix``."""
    params[f"{prefix}.theta1"] = Tensor(
        rng.normal((d_in, d_mid)) * (2.0 / d_in) ** 0.5, requires_grad=True)
    params[f"{prefix}.mlp_w"] = Tensor(
        rng.normal((2 * d_mid, d_mid)) * (2.0 / (2 * d_mid)) ** 0.5, requires_grad=True)
    params[f"{prefix}.mlp_b"] = Tensor(np.zeros(d_mid), requires_grad=True)
    if hier_stride:
        s = hier_stride
        params[f"{prefix}.theta2"] = Tensor(
            rng.normal((s, s, d_mid, d_mid)) * (2.0 / (s * s * d_mid)) ** 0.5 * 0.1,
            requires_grad=True)
    else:
        # small init keeps early updates near-identity
        params[f"{prefix}.theta2"] = Tensor(
            rng.normal((d_mid, d_in)) * (2.0 / d_mid) ** 0.5 * 0.1, requires_grad=True)


def block_weights(params: dict[str, Tensor], prefix: str) -> GraphBlockWeights:
    return GraphBlockWeights(
        theta1=params[f"{prefix}.theta1"],
        mlp_w=params[f"{prefix}.mlp_w"],
        mlp_b=params[f"{prefix}.mlp_b"],
        theta2=params[f"{prefix}.theta2"],
    )


# ---------------------------------------------------------------------------
# graph convolution


def edge_conv(features: Tensor, edges: list[tuple[int, int]], mlp_w: Tensor,
              mlp_b: Tensor, aggregation: str = "edgeconv_max") -> Tensor:
    """Graph convolution over an undirected edge list.

    Per node i: aggregate over neighbors j of MLP(concat(x_i, x_j - x_i)),
    where the MLP is one linear layer + ReLU.  Undirected edges contribute
    messages in both directions; nodes with no neighbors output zeros.
    """
    n = features.data.shape[0]
    d_mid = mlp_w.data.shape[1]
    if edges:
        arr = np.asarray(edges, dtype=np.int64)
        if arr.min() < 0 or arr.max() >= n:
            raise ShapeError(f"edge_conv: node id out of range for {n} nodes")
        dst = np.concatenate([arr[:, 0], arr[:, 1]])
        src = np.concatenate([arr[:, 1], arr[:, 0]])
    else:
        dst = src = np.zeros(0, dtype=np.int64)
    if dst.size == 0:
        return Tensor(np.zeros((n, d_mid)))

    xi = tz.gather_rows(features, dst)
    xj = tz.gather_rows(features, src)
    msg_in = tz.concat([xi, xj - xi], axis=1)
    msg = tz.relu(tz.matmul(msg_in, mlp_w) + mlp_b)

    if aggregation == "mean":
        acc = tz.scatter_add_rows(msg, dst, n)
        deg = np.bincount(dst, minlength=n).astype(np.float64)
        inv = np.where(deg > 0, 1.0 / np.maximum(deg, 1.0), 0.0)
        return acc * Tensor(inv[:, None])

    if aggregation != "edgeconv_max":
        raise ValueError(f"edge_conv: unknown aggregation {aggregation!r}")

    # per-node max over incoming messages; isolated nodes yield zeros
    return tz.segment_max(msg, dst, n)


def edge_conv_linear(features: Tensor, edges, mlp_w: Tensor, mlp_b: Tensor,
                     aggregation: str = "edgeconv_max") -> Tensor:
    """EdgeConv variant with a linear (no ReLU) message network.

    Only used by diagnostics comparing aggregators; the model itself uses
    the ReLU form above.
    """
    n = features.data.shape[0]
    d_mid = mlp_w.data.shape[1]
    if not edges:
        return Tensor(np.zeros((n, d_mid)))
    arr = np.asarray(edges, dtype=np.int64)
    dst = np.concatenate([arr[:, 0], arr[:, 1]])
    src = np.concatenate([arr[:, 1], arr[:, 0]])
    xi = tz.gather_rows(features, dst)
    xj = tz.gather_rows(features, src)
    msg = tz.matmul(tz.concat([xi, xj - xi], axis=1), mlp_w) + mlp_b
    if aggregation == "mean":
        acc = tz.scatter_add_rows(msg, dst, n)
        deg = np.bincount(dst, minlength=n).astype(np.float64)
        inv = np.where(deg > 0, 1.0 / np.maximum(deg, 1.0), 0.0)
        return acc * Tensor(inv[:, None])
    return tz.segment_max(msg, dst, n)


# ---------------------------------------------------------------------------
# residual updates


def _offset_union(per_frame_edges: list[list[tuple[int, int]]], n: int,
                  offset_b: int | None = None) -> list[tuple[int, int]]:
    """Union per-frame local ids into whole-sequence ids.

    For temporal graphs, the second endpoint indexes the *next* frame, so
    its offset is one frame further along.
    """
    union = []
    for t, edges in enumerate(per_frame_edges):
        oa = t * n
        ob = (t + 1) * n if offset_b == "next" else oa
        union.extend((oa + a, ob + b) for a, b in edges)
    return union


def lsg_update(grid: NodeGrid, weights: GraphBlockWeights, k_local: int,
               kind: str = "euclidean", aggregation: str = "edgeconv_max",
               drop_rate: float = 0.0, drop_seed: int = 0,
               fixed_edges: list | None = None,
               collector: list | None = None) -> NodeGrid:
    """Local residual update: per-frame KNN graphs on projected features.

    ``fixed_edges`` bypasses graph construction (used by gradient checks,
    which hold the selection constant).
    """
    if grid.nodes_per_frame == 0:
        raise ShapeError("lsg_update: empty grid")
    n = grid.nodes_per_frame
    mu1 = tz.matmul(grid.features, weights.theta1)
    if fixed_edges is None:
        per_frame = []
        for t in range(grid.num_frames):
            g = gr.build_local_graph(mu1.data[t * n : (t + 1) * n], k_local, kind)
            if drop_rate > 0.0:
                g = gr.drop_edges(g, drop_rate, drop_seed + t)
            per_frame.append(g.edges)
        if collector is not None:
            collector.append(("local", per_frame))
        edges = _offset_union(per_frame, n)
    else:
        edges = fixed_edges
    delta = edge_conv(mu1, edges, weights.mlp_w, weights.mlp_b, aggregation)
    out = grid.features + tz.matmul(delta, weights.theta2)
    return NodeGrid(grid.grid_h, grid.grid_w, grid.dim, grid.num_frames, out, grid.stage)


def tsg_update(grid: NodeGrid, weights: GraphBlockWeights, k_temporal: int,
               kind: str = "euclidean", aggregation: str = "edgeconv_max",
               fixed_edges: list | None = None,
               collector: list | None = None) -> NodeGrid:
    """Temporal residual update over the union graph of all adjacent pairs.

    Single-frame sequences pass through unchanged.
    """
    if grid.num_frames < 1:
        raise ShapeError("tsg_update: empty sequence")
    if grid.num_frames == 1 and fixed_edges is None:
        return grid
    n = grid.nodes_per_frame
    mu2 = tz.matmul(grid.features, weights.theta1)
    if fixed_edges is None:
        per_pair = []
        for t in range(grid.num_frames - 1):
            g = gr.build_temporal_graph(
                mu2.data[t * n : (t + 1) * n], mu2.data[(t + 1) * n : (t + 2) * n],
                k_temporal, kind)
            per_pair.append(g.edges)
        if collector is not None:
            collector.append(("temporal", per_pair))
        edges = _offset_union(per_pair, n, offset_b="next")
    else:
        edges = fixed_edges
    delta = edge_conv(mu2, edges, weights.mlp_w, weights.mlp_b, aggregation)
    out = grid.features + tz.matmul(delta, weights.theta2)
    return NodeGrid(grid.grid_h, grid.grid_w, grid.dim, grid.num_frames, out, grid.stage)


def hsg_update(tap: NodeGrid, grid: NodeGrid, weights: GraphBlockWeights, s: int,
               aggregation: str = "edgeconv_max", drop_rate: float = 0.0,
               drop_seed: int = 0, collector: list | None = None) -> NodeGrid:
    """Hierarchical residual update.

    The tap (high-res) features are projected to the grid dim, both sides
    exchange messages over the fixed region graph, and the updated high-res
    map is fused into the grid by a stride-s conv.  The updated high-res
    features are used only for this fusion, then discarded.
    """
    if tap.grid_h != s * grid.grid_h or tap.grid_w != s * grid.grid_w:
        raise ShapeError(
            f"hsg_update: tap {tap.grid_h}x{tap.grid_w} is not {s}x grid "
            f"{grid.grid_h}x{grid.grid_w}"
        )
    if tap.num_frames != grid.num_frames:
        raise ShapeError("hsg_update: frame counts differ")
    T = grid.num_frames
    nh, nl = tap.nodes_per_frame, grid.nodes_per_frame
    base = gr.build_hierarchical_graph((tap.grid_h, tap.grid_w),
                                       (grid.grid_h, grid.grid_w), s)
    per_frame = [base.edges] * T
    if drop_rate > 0.0:
        per_frame = [gr.drop_edges(gr.SignGraph("hierarchical", e), drop_rate,
                                   drop_seed + t).edges
                     for t, e in enumerate(per_frame)]
    if collector is not None:
        collector.append(("hierarchical", per_frame))

    muh = tz.matmul(tap.features, weights.theta1)  # [T*nh, C_l]
    combined = tz.concat([muh, grid.features], axis=0)
    # combined ids: frame t high node j -> t*nh + j; low node k -> T*nh + t*nl + k
    edges = []
    for t, frame_edges in enumerate(per_frame):
        edges.extend((t * nh + j, T * nh + t * nl + k) for j, k in frame_edges)
    delta = edge_conv(combined, edges, weights.mlp_w, weights.mlp_b, aggregation)

    d_mid = weights.mlp_w.data.shape[1]
    h_upd = muh + tz.gather_rows(delta, np.arange(T * nh))
    l_upd = grid.features + tz.gather_rows(delta, T * nh + np.arange(T * nl))
    h_map = tz.reshape(h_upd, (T, tap.grid_h, tap.grid_w, d_mid))
    fused = tz.strided_conv2d(h_map, weights.theta2, stride=s)
    out = l_upd + tz.reshape(fused, (T * nl, grid.dim))
    return NodeGrid(grid.grid_h, grid.grid_w, grid.dim, T, out, grid.stage)


def mix_stage(grid: NodeGrid, tap: NodeGrid | None, cfg: StageConfig,
              params: dict[str, Tensor], prefix: str, stage_idx: int,
              drop_seed: int = 0, collector: list | None = None) -> NodeGrid:
    """Apply the stage's graph modules in ``cfg.order`` (default HSG, TSG,
    LSG).  A tap grid is required whenever HSG is in the order."""
    if "HSG" in cfg.order and tap is None:
        raise ShapeError("mix_stage: HSG in order but no tap grid supplied")
    p = cfg.params
    for mod in cfg.order:
        if mod == "HSG":
            s = tap.grid_h // grid.grid_h
            grid = hsg_update(tap, grid, block_weights(params, f"{prefix}.hsg"), s,
                              cfg.aggregation, p.drop_rate, drop_seed + 500000,
                              collector=collector)
        elif mod == "TSG":
            grid = tsg_update(grid, block_weights(params, f"{prefix}.tsg"),
                              p.k_temporal[stage_idx], p.distance, cfg.aggregation,
                              collector=collector)
        else:
            grid = lsg_update(grid, block_weights(params, f"{prefix}.lsg"),
                              p.k_local[stage_idx], p.distance, cfg.aggregation,
                              p.drop_rate, drop_seed, collector=collector)
    return grid
