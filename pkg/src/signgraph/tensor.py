"""Dense float64 tensors with tape-based reverse-mode differentiation.

Design notes
------------
* Everything is float64.  The whole verification story rests on
  finite-difference gradient checks, which 32-bit arithmetic would wash out.
* A :class:`Tape` records executed ops in order; :func:`backward` replays
  the record in exact reverse, accumulating adjoints.  There is no graph
  optimization -- clarity over speed at this scale.
* ReLU subgradient at 0 is 0.  ``max_over_axis`` routes gradient to the
  first maximal index on ties.
* Tensors without a grad slot are plain immutable values; tapes are
  single-threaded.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Raised when op inputs do not conform to the op's shape rule."""


class NonFiniteError(ValueError):
    """Raised when an op receives NaN/Inf input."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; everything routes through the recorded ops below
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __sub__(self, other):
        return add(self, mul(_lift(other), Tensor(-1.0)))

    def __rsub__(self, other):
        return add(_lift(other), mul(self, Tensor(-1.0)))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# Tape


class Tape:
    """Ordered record of executed ops, replayable in reverse.

    Use as a context manager; ops executed inside record themselves when any
    input requires grad.  Nested tapes record to the innermost one.
    """

    def __init__(self):
        self.ops = []  # (output, inputs, backward_fn)
        self._outputs = None

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.remove(self)
        return False

    def backward(self, loss: Tensor) -> None:
        backward(self, loss)


_TAPE_STACK: list[Tape] = []


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _record(out: Tensor, inputs, backward_fn) -> Tensor:
    tape = _active_tape()
    if tape is not None and any(i.requires_grad for i in inputs):
        out.requires_grad = True
        tape.ops.append((out, tuple(inputs), backward_fn))
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate ``.grad`` of every requires-grad leaf with d(loss)/d(leaf).

    Repeated calls without ``zero_grad`` accumulate, so the gradient of a sum
    of losses equals the sum of per-loss backward passes.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    produced = {id(out) for out, _, _ in tape.ops}
    if id(loss) not in produced:
        raise ValueError("backward: loss is not an output recorded on this tape")

    adjoint = {id(loss): np.ones_like(loss.data)}
    for out, inputs, backward_fn in reversed(tape.ops):
        g = adjoint.pop(id(out), None)
        if g is None:
            continue
        grads = backward_fn(g)
        for inp, gi in zip(inputs, grads):
            if gi is None or not inp.requires_grad:
                continue
            if id(inp) in produced:
                acc = adjoint.get(id(inp))
                adjoint[id(inp)] = gi if acc is None else acc + gi
            else:  # leaf
                if inp.grad is None:
                    inp.grad = np.zeros_like(inp.data)
                inp.grad += gi


# ---------------------------------------------------------------------------
# helpers


def _check_finite(op: str, *tensors: Tensor) -> None:
    for t in tensors:
        # a single reduction: any NaN/Inf makes the sum non-finite
        if not np.isfinite(t.data.sum()):
            raise NonFiniteError(f"{op}: non-finite input value")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / linear ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_finite("add", a, b)
    try:
        out = Tensor(a.data + b.data)
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_finite("mul", a, b)
    try:
        out = Tensor(a.data * b.data)
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_finite("matmul", a, b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data)
    return _record(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def relu(x: Tensor) -> Tensor:
    _check_finite("relu", x)
    out = Tensor(np.maximum(x.data, 0.0))
    return _record(out, (x,), lambda g: (g * (x.data > 0.0),))


def sigmoid(x: Tensor) -> Tensor:
    _check_finite("sigmoid", x)
    y = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(y)
    return _record(out, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    _check_finite("tanh", x)
    y = np.tanh(x.data)
    out = Tensor(y)
    return _record(out, (x,), lambda g: (g * (1.0 - y * y),))


def exp(x: Tensor) -> Tensor:
    _check_finite("exp", x)
    y = np.exp(x.data)
    out = Tensor(y)
    return _record(out, (x,), lambda g: (g * y,))


def tsum(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    _check_finite("sum", x)
    out = Tensor(x.data.sum())
    return _record(out, (x,), lambda g: (np.full_like(x.data, float(g)),))


def reshape(x: Tensor, shape) -> Tensor:
    _check_finite("reshape", x)
    try:
        out = Tensor(x.data.reshape(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    return _record(out, (x,), lambda g: (g.reshape(x.data.shape),))


def max_over_axis(x: Tensor, axis: int) -> Tensor:
    """Max reduction; on ties, gradient goes to the first maximal index."""
    _check_finite("max_over_axis", x)
    if x.data.shape[axis] == 0:
        raise ShapeError(f"max_over_axis: empty axis {axis} in shape {x.shape}")
    idx = np.argmax(x.data, axis=axis)
    out = Tensor(np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis))

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _record(out, (x,), bwd)


def mean_over_axis(x: Tensor, axis: int) -> Tensor:
    _check_finite("mean_over_axis", x)
    n = x.data.shape[axis]
    if n == 0:
        raise ShapeError(f"mean_over_axis: empty axis {axis} in shape {x.shape}")
    out = Tensor(x.data.mean(axis=axis))

    def bwd(g):
        return (np.repeat(np.expand_dims(g / n, axis), n, axis=axis),)

    return _record(out, (x,), bwd)


def softmax_log(x: Tensor) -> Tensor:
    """Log-softmax along the last axis."""
    _check_finite("softmax_log", x)
    m = x.data.max(axis=-1, keepdims=True)
    z = x.data - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    out = Tensor(y)

    def bwd(g):
        return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)

    return _record(out, (x,), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    _check_finite("concat", *tensors)
    try:
        out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}")
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _record(out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def gather_rows(x: Tensor, indices) -> Tensor:
    _check_finite("gather_rows", x)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {x.shape[0]} rows")
    out = Tensor(x.data[idx])

    def bwd(g):
        # group-by-index accumulation via sort + reduceat (np.add.at is slow)
        gx = np.zeros_like(x.data)
        flat_idx = idx.ravel()
        if flat_idx.size == 0:
            return (gx,)
        gf = g.reshape(flat_idx.size, -1)
        order = np.argsort(flat_idx, kind="stable")
        si = flat_idx[order]
        starts = np.concatenate([[0], np.flatnonzero(np.diff(si)) + 1])
        sums = np.add.reduceat(gf[order], starts, axis=0)
        gx.reshape(x.data.shape[0], -1)[si[starts]] += sums
        return (gx,)

    return _record(out, (x,), bwd)


def segment_max(values: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Per-segment max over rows of ``values`` [N, D]; empty segments yield
    zeros.  On ties the gradient goes to the earliest row (stable order
    after a stable sort of ``segment_ids``)."""
    _check_finite("segment_max", values)
    seg = np.asarray(segment_ids, dtype=np.int64)
    if seg.shape[0] != values.data.shape[0]:
        raise ShapeError(
            f"segment_max: {seg.shape[0]} ids for {values.data.shape[0]} rows")
    if seg.size and (seg.min() < 0 or seg.max() >= num_segments):
        raise ShapeError(f"segment_max: id out of range for {num_segments} segments")
    D = values.data.shape[1] if values.data.ndim == 2 else None
    if D is None:
        raise ShapeError(f"segment_max: expected [N, D], got {values.shape}")
    out_data = np.zeros((num_segments, D))
    if seg.size == 0:
        return _record(Tensor(out_data), (values,),
                       lambda g: (np.zeros_like(values.data),))
    order = np.argsort(seg, kind="stable")
    sv = values.data[order]
    ss = seg[order]
    starts = np.concatenate([[0], np.flatnonzero(np.diff(ss)) + 1])
    present = ss[starts]
    maxes = np.maximum.reduceat(sv, starts, axis=0)
    out_data[present] = maxes
    out = Tensor(out_data)

    def bwd(g):
        # route each segment/column gradient to the first maximal row
        is_max = sv == maxes[np.searchsorted(present, ss)]
        cand = np.where(is_max, np.arange(sv.shape[0])[:, None], sv.shape[0])
        first = np.minimum.reduceat(cand, starts, axis=0)
        gs = np.zeros_like(sv)
        gs[first, np.arange(D)[None, :]] = g[present]
        gx = np.empty_like(gs)
        gx[order] = gs
        return (gx,)

    return _record(out, (values,), bwd)


def scatter_add_rows(values: Tensor, indices, num_rows: int) -> Tensor:
    _check_finite("scatter_add_rows", values)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.shape[0] != values.data.shape[0]:
        raise ShapeError(
            f"scatter_add_rows: {idx.shape[0]} indices for {values.data.shape[0]} rows"
        )
    if idx.size and (idx.min() < 0 or idx.max() >= num_rows):
        raise ShapeError(f"scatter_add_rows: index out of range for {num_rows} rows")
    acc = np.zeros((num_rows,) + values.data.shape[1:])
    np.add.at(acc, idx, values.data)
    out = Tensor(acc)
    return _record(out, (values,), lambda g: (g[idx],))


# ---------------------------------------------------------------------------
# convolutions


def _conv2d_impl(x: Tensor, k: Tensor, stride: int, pad: int, name: str) -> Tensor:
    _check_finite(name, x, k)
    if stride < 1:
        raise ShapeError(f"{name}: stride must be >= 1, got {stride}")
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or k.data.ndim != 4 or xd.shape[3] != k.data.shape[2]:
        raise ShapeError(f"{name}: incompatible shapes {x.shape} and {k.shape}")
    B, H, W, Cin = xd.shape
    kh, kw, _, Cout = k.data.shape
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"{name}: kernel {k.shape} too large for input {x.shape}")
    xp = np.pad(xd, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else xd
    cols = np.empty((B, Ho, Wo, kh, kw, Cin))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i : i + stride * Ho : stride, j : j + stride * Wo : stride, :]
    cols2 = cols.reshape(B * Ho * Wo, kh * kw * Cin)
    y = (cols2 @ k.data.reshape(kh * kw * Cin, Cout)).reshape(B, Ho, Wo, Cout)
    out = Tensor(y[0] if squeeze else y)

    def bwd(g):
        gd = g[None] if squeeze else g
        g2 = gd.reshape(B * Ho * Wo, Cout)
        gk = (cols2.T @ g2).reshape(k.data.shape)
        gcols = (g2 @ k.data.reshape(kh * kw * Cin, Cout).T).reshape(B, Ho, Wo, kh, kw, Cin)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i : i + stride * Ho : stride, j : j + stride * Wo : stride, :] += gcols[:, :, :, i, j, :]
        gx = gxp[:, pad : pad + H, pad : pad + W, :] if pad else gxp
        return ((gx[0] if squeeze else gx), gk)

    return _record(out, (x, k), bwd)


def conv2d(x: Tensor, k: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2D convolution, input [..., H, W, Cin], kernel [kh, kw, Cin, Cout]."""
    return _conv2d_impl(x, k, stride, pad, "conv2d")


def strided_conv2d(x: Tensor, k: Tensor, stride: int, pad: int = 0) -> Tensor:
    """conv2d with an explicit (usually > 1) stride; kept as a named kind."""
    return _conv2d_impl(x, k, stride, pad, "strided_conv2d")


def conv1d(x: Tensor, k: Tensor, pad: int = 0) -> Tensor:
    """1D convolution over time, input [T, Cin], kernel [kw, Cin, Cout]."""
    _check_finite("conv1d", x, k)
    if x.data.ndim != 2 or k.data.ndim != 3 or x.shape[1] != k.data.shape[1]:
        raise ShapeError(f"conv1d: incompatible shapes {x.shape} and {k.shape}")
    T, Cin = x.data.shape
    kw, _, Cout = k.data.shape
    To = T + 2 * pad - kw + 1
    if To < 1:
        raise ShapeError(f"conv1d: kernel width {kw} too large for length {T}")
    xp = np.pad(x.data, ((pad, pad), (0, 0))) if pad else x.data
    cols = np.empty((To, kw, Cin))
    for i in range(kw):
        cols[:, i, :] = xp[i : i + To, :]
    cols2 = cols.reshape(To, kw * Cin)
    out = Tensor(cols2 @ k.data.reshape(kw * Cin, Cout))

    def bwd(g):
        gk = (cols2.T @ g).reshape(k.data.shape)
        gcols = (g @ k.data.reshape(kw * Cin, Cout).T).reshape(To, kw, Cin)
        gxp = np.zeros_like(xp)
        for i in range(kw):
            gxp[i : i + To, :] += gcols[:, i, :]
        gx = gxp[pad : pad + T, :] if pad else gxp
        return (gx, gk)

    return _record(out, (x, k), bwd)


# ---------------------------------------------------------------------------
# generic dispatcher

_OP_TABLE = {
    "matmul": lambda ins, at: matmul(*ins),
    "conv2d": lambda ins, at: conv2d(*ins, stride=at.get("stride", 1), pad=at.get("pad", 0)),
    "strided_conv2d": lambda ins, at: strided_conv2d(*ins, stride=at["stride"], pad=at.get("pad", 0)),
    "conv1d": lambda ins, at: conv1d(*ins, pad=at.get("pad", 0)),
    "add": lambda ins, at: add(*ins),
    "mul": lambda ins, at: mul(*ins),
    "relu": lambda ins, at: relu(*ins),
    "sigmoid": lambda ins, at: sigmoid(*ins),
    "tanh": lambda ins, at: tanh(*ins),
    "exp": lambda ins, at: exp(*ins),
    "sum": lambda ins, at: tsum(*ins),
    "reshape": lambda ins, at: reshape(ins[0], at["shape"]),
    "max_over_axis": lambda ins, at: max_over_axis(ins[0], at["axis"]),
    "mean_over_axis": lambda ins, at: mean_over_axis(ins[0], at["axis"]),
    "softmax_log": lambda ins, at: softmax_log(*ins),
    "concat": lambda ins, at: concat(ins, axis=at.get("axis", 0)),
    "gather_rows": lambda ins, at: gather_rows(ins[0], at["indices"]),
    "segment_max": lambda ins, at: segment_max(ins[0], at["segment_ids"], at["num_segments"]),
    "scatter_add_rows": lambda ins, at: scatter_add_rows(ins[0], at["indices"], at["num_rows"]),
}


def apply_op(kind: str, inputs, attrs: dict | None = None) -> Tensor:
    """Execute one named op kind.  Records on the active tape when any input
    requires grad."""
    if kind not in _OP_TABLE:
        raise ValueError(f"apply_op: unknown kind {kind!r}")
    return _OP_TABLE[kind](list(inputs), attrs or {})


OP_KINDS = tuple(_OP_TABLE)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_err: float
    worst_index: int


def grad_check(f, x: Tensor, eps: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare the tape gradient of scalar-valued ``f`` against central
    differences, coordinate by coordinate.

    Relative error uses an absolute floor of 1e-8 in the denominator.
    ``f`` must be deterministic; two evaluations that differ are rejected.
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be positive")

    def eval_plain(xt: Tensor) -> float:
        y = f(xt)
        if y.data.size != 1:
            raise ShapeError("grad_check: f must be scalar-valued")
        return float(y.data)

    base1 = eval_plain(Tensor(x.data.copy()))
    base2 = eval_plain(Tensor(x.data.copy()))
    if base1 != base2:
        raise ValueError("grad_check: f is not deterministic (two evaluations differ)")

    leaf = Tensor(x.data.copy(), requires_grad=True)
    with Tape() as tape:
        loss = f(leaf)
    backward(tape, loss)
    analytic = (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)).ravel()

    flat = x.data.ravel().copy()
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = eval_plain(Tensor(flat.reshape(x.data.shape)))
        flat[i] = orig - eps
        fm = eval_plain(Tensor(flat.reshape(x.data.shape)))
        flat[i] = orig
        numeric[i] = (fp - fm) / (2.0 * eps)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    rel = np.abs(analytic - numeric) / denom
    worst = int(np.argmax(rel)) if rel.size else 0
    max_rel = float(rel.max()) if rel.size else 0.0
    return GradCheckReport(passed=max_rel < tol, max_rel_err=max_rel, worst_index=worst)


# ---------------------------------------------------------------------------
# parameter serialization: JSON manifest + little-endian float64 binary


def save_params(params: dict[str, Tensor], manifest_path, bin_path) -> None:
    """Write a JSON manifest of (name, shape) in order plus the concatenated
    little-endian float64 values."""
    manifest = {
        "version": 1,
        "params": [{"name": n, "shape": list(t.data.shape)} for n, t in params.items()],
    }
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(bin_path, "wb") as fh:
        for t in params.values():
            fh.write(t.data.astype("<f8").tobytes())


def load_params(manifest_path, bin_path) -> dict[str, Tensor]:
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    out: dict[str, Tensor] = {}
    with open(bin_path, "rb") as fh:
        for entry in manifest["params"]:
            shape = tuple(entry["shape"])
            n = int(np.prod(shape, dtype=np.int64)) if shape else 1
            buf = fh.read(8 * n)
            if len(buf) != 8 * n:
                raise ValueError(f"load_params: truncated binary for {entry['name']}")
            arr = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
            out[entry["name"]] = Tensor(arr.copy())
        if fh.read(1):
            raise ValueError("load_params: trailing bytes in binary")
    return out
