"""Convolutional front-end: frames -> patch-grid nodes, plus patch merging.

The stem is three 3x3 conv+ReLU blocks with stride 2 each (total stride 8),
trainable from scratch in minutes.  The map after the second block (stride 4,
half the channels) is exposed as the high-resolution tap consumed by the
first hierarchical graph module.  No batch norm: initialization is He-style
fan-in scaling and the forward stays a pure function of (weights, input).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import tensor as tz
from .rng import CounterRng
from .tensor import ShapeError, Tensor


@dataclass
class NodeGrid:
    """One frame sequence as grids of node features.

    ``features`` is a single tensor of shape [T * grid_h * grid_w, dim];
    node j of frame t lives at row t * N + j, and j maps to
    (row, col) = (j // grid_w, j % grid_w), row-major.
    """

    grid_h: int
    grid_w: int
    dim: int
    num_frames: int
    features: Tensor
    stage: int = 0

    @property
    def nodes_per_frame(self) -> int:
        return self.grid_h * self.grid_w

    def node_rc(self, j: int) -> tuple[int, int]:
        return j // self.grid_w, j % self.grid_w

    def rc_node(self, row: int, col: int) -> int:
        return row * self.grid_w + col


@dataclass
class StemConfig:
    """Channel widths and strides of the stem blocks.

    The product of strides is the effective patch size P; ``tap_stage`` is
    the block whose output map is exposed for the hierarchical graph.
    """

    channels: tuple[int, ...] = (16, 32, 64)
    strides: tuple[int, ...] = (2, 2, 2)
    kernel: int = 3
    tap_stage: int = 1  # 0-based block index

    @property
    def patch_size(self) -> int:
        p = 1
        for s in self.strides:
            p *= s
        return p

    @property
    def out_dim(self) -> int:
        return self.channels[-1]

    @property
    def tap_dim(self) -> int:
        return self.channels[self.tap_stage]

    @property
    def tap_stride(self) -> int:
        p = 1
        for s in self.strides[: self.tap_stage + 1]:
            p *= s
        return p


def init_stem_params(cfg: StemConfig, rng: CounterRng, prefix: str = "stem") -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    cin = 3
    for b, cout in enumerate(cfg.channels):
        fan_in = cfg.kernel * cfg.kernel * cin
        k = rng.normal((cfg.kernel, cfg.kernel, cin, cout)) * (2.0 / fan_in) ** 0.5
        params[f"{prefix}.block{b}.kernel"] = Tensor(k, requires_grad=True)
        params[f"{prefix}.block{b}.bias"] = Tensor([0.0] * cout, requires_grad=True)
        cin = cout
    return params


def patchify_stem(frames: Tensor, cfg: StemConfig, params: dict[str, Tensor],
                  prefix: str = "stem") -> tuple[NodeGrid, NodeGrid]:
    """Convert frames [T, H, W, 3] into node grids.

    Returns (grid, tap): the stride-P output grid with dim D and the
    stride-P/2 tap grid with dim D/2.  H and W must be divisible by the
    total stride.
    """
    if frames.data.ndim != 4 or frames.data.shape[3] != 3:
        raise ShapeError(f"patchify_stem: expected [T, H, W, 3], got {frames.shape}")
    T, H, W, _ = frames.data.shape
    total = cfg.patch_size
    if H % total or W % total:
        raise ShapeError(
            f"patchify_stem: frame {H}x{W} not divisible by total stride {total}"
        )
    x = frames
    tap = None
    h, w = H, W
    for b, (cout, s) in enumerate(zip(cfg.channels, cfg.strides)):
        k = params[f"{prefix}.block{b}.kernel"]
        bias = params[f"{prefix}.block{b}.bias"]
        x = tz.relu(tz.conv2d(x, k, stride=s, pad=cfg.kernel // 2) + bias)
        h, w = h // s, w // s
        if b == cfg.tap_stage:
            tap = NodeGrid(h, w, cout, T, tz.reshape(x, (T * h * w, cout)), stage=0)
    grid = NodeGrid(h, w, cfg.out_dim, T, tz.reshape(x, (T * h * w, cfg.out_dim)), stage=0)
    return grid, tap


def init_merge_params(dim_in: int, rng: CounterRng, prefix: str) -> dict[str, Tensor]:
    fan_in = 3 * 3 * dim_in
    k = rng.normal((3, 3, dim_in, 2 * dim_in)) * (2.0 / fan_in) ** 0.5
    return {
        f"{prefix}.kernel": Tensor(k, requires_grad=True),
        f"{prefix}.bias": Tensor([0.0] * (2 * dim_in), requires_grad=True),
    }


def patch_merge(grid: NodeGrid, params: dict[str, Tensor], prefix: str) -> NodeGrid:
    """Downsample a grid by 2 with a stride-2 conv block, doubling the dim.

    Node count shrinks by exactly 4; grid extents must be even.
    """
    if grid.grid_h % 2 or grid.grid_w % 2:
        raise ShapeError(
            f"patch_merge: odd grid extent {grid.grid_h}x{grid.grid_w}"
        )
    T, h, w, d = grid.num_frames, grid.grid_h, grid.grid_w, grid.dim
    x = tz.reshape(grid.features, (T, h, w, d))
    k = params[f"{prefix}.kernel"]
    bias = params[f"{prefix}.bias"]
    y = tz.relu(tz.conv2d(x, k, stride=2, pad=1) + bias)
    h2, w2, d2 = h // 2, w // 2, 2 * d
    return NodeGrid(h2, w2, d2, T, tz.reshape(y, (T * h2 * w2, d2)), stage=grid.stage + 1)
