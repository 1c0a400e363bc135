"""Module-by-module finite-difference gradient checks on tiny shapes.

Each entry perturbs one input tensor of one op or model component and
compares the tape gradient against central differences.  Inputs are drawn
from fixed counter streams and nudged away from kinks (ReLU zeros, max
ties), where one-sided subgradients would disagree with central
differences for reasons that are not bugs.

Graph updates are checked with ``fixed_edges``: edge selection is
recomputed structure, not a differentiable quantity, so the check holds it
constant the way a single training step does.
"""

from __future__ import annotations

import numpy as np

from . import ctc as cc
from . import graphs as gr
from . import head as hd
from . import message_passing as mp
from . import tensor as tz
from .backbone import NodeGrid
from .rng import CounterRng
from .tensor import GradCheckReport, Tensor, grad_check


def _rn(shape, *key):
    return CounterRng("gradsuite", *key).normal(shape)


def _away_from_kinks(a: np.ndarray, margin: float = 0.05) -> np.ndarray:
    """Push values away from 0 so relu/max kinks stay > eps from the point."""
    return np.where(np.abs(a) < margin, np.sign(a + 1e-12) * margin + a, a)


def op_checks() -> list[tuple[str, callable, Tensor]]:
    """(name, f, x) triples covering every registered op kind."""
    checks = []
    b = Tensor(_rn((3, 2), "matmul-b"))
    checks.append(("op:matmul", lambda x: tz.tsum(tz.matmul(x, b)),
                   Tensor(_rn((2, 3), "matmul-x"))))
    c = Tensor(_rn((1, 3), "bcast"))
    checks.append(("op:add", lambda x: tz.tsum(tz.add(x, c)),
                   Tensor(_rn((2, 3), "add-x"))))
    checks.append(("op:mul", lambda x: tz.tsum(tz.mul(x, c)),
                   Tensor(_rn((2, 3), "mul-x"))))
    checks.append(("op:relu", lambda x: tz.tsum(tz.relu(x)),
                   Tensor(_away_from_kinks(_rn((2, 3), "relu-x")))))
    checks.append(("op:sigmoid", lambda x: tz.tsum(tz.sigmoid(x)),
                   Tensor(_rn((2, 3), "sig-x"))))
    checks.append(("op:tanh", lambda x: tz.tsum(tz.tanh(x)),
                   Tensor(_rn((2, 3), "tanh-x"))))
    checks.append(("op:exp", lambda x: tz.tsum(tz.exp(x)),
                   Tensor(_rn((2, 3), "exp-x"))))
    checks.append(("op:sum", lambda x: tz.tsum(x) * Tensor(0.5),
                   Tensor(_rn((4,), "sum-x"))))
    checks.append(("op:reshape", lambda x: tz.tsum(tz.reshape(x, (3, 2)) * c.data[0, 0]),
                   Tensor(_rn((2, 3), "resh-x"))))
    checks.append(("op:max_over_axis",
                   lambda x: tz.tsum(tz.max_over_axis(x, axis=1)),
                   Tensor(np.array([[0.3, -0.9, 1.2], [2.0, 0.1, -0.5]]))))
    checks.append(("op:mean_over_axis",
                   lambda x: tz.tsum(tz.mean_over_axis(x, axis=0)),
                   Tensor(_rn((3, 2), "mean-x"))))
    checks.append(("op:softmax_log",
                   lambda x: tz.tsum(tz.softmax_log(x) * Tensor(_rn((2, 3), "sl-w"))),
                   Tensor(_rn((2, 3), "sl-x"))))
    other = Tensor(_rn((1, 3), "cat-o"))
    checks.append(("op:concat",
                   lambda x: tz.tsum(tz.concat([x, other], axis=0) * Tensor(_rn((3, 3), "cat-w"))),
                   Tensor(_rn((2, 3), "cat-x"))))
    checks.append(("op:gather_rows",
                   lambda x: tz.tsum(tz.gather_rows(x, [0, 2, 2]) * Tensor(_rn((3, 2), "gr-w"))),
                   Tensor(_rn((3, 2), "gr-x"))))
    checks.append(("op:segment_max",
                   lambda x: tz.tsum(tz.segment_max(x, [0, 2, 0, 2, 1], 3)
                                     * Tensor(_rn((3, 2), "sm-w"))),
                   Tensor(_rn((5, 2), "sm-x"))))
    checks.append(("op:scatter_add_rows",
                   lambda x: tz.tsum(tz.scatter_add_rows(x, [0, 1, 0], 2)
                                     * Tensor(_rn((2, 2), "sc-w"))),
                   Tensor(_rn((3, 2), "sc-x"))))
    k2 = Tensor(_rn((3, 3, 2, 2), "c2-k") * 0.3)
    checks.append(("op:conv2d",
                   lambda x: tz.tsum(tz.conv2d(x, k2, stride=1, pad=1)),
                   Tensor(_rn((4, 4, 2), "c2-x"))))
    checks.append(("op:conv2d(kernel)",
                   lambda k: tz.tsum(tz.conv2d(Tensor(_rn((4, 4, 2), "c2-x")), k,
                                               stride=1, pad=1)),
                   k2))
    ks = Tensor(_rn((2, 2, 2, 3), "sc2-k") * 0.3)
    checks.append(("op:strided_conv2d",
                   lambda x: tz.tsum(tz.strided_conv2d(x, ks, stride=2)),
                   Tensor(_rn((2, 4, 4, 2), "sc2-x"))))
    k1 = Tensor(_rn((3, 2, 2), "c1-k") * 0.3)
    checks.append(("op:conv1d",
                   lambda x: tz.tsum(tz.conv1d(x, k1, pad=1)),
                   Tensor(_rn((5, 2), "c1-x"))))
    return checks


def _tiny_weights(d_in, d_mid, key, hier_stride=0) -> mp.GraphBlockWeights:
    params: dict[str, Tensor] = {}
    mp.init_block_weights(d_in, d_mid, CounterRng("gradsuite", key), "w", params,
                          hier_stride=hier_stride)
    for p in params.values():
        p.requires_grad = False
    return mp.block_weights(params, "w")


def module_checks() -> list[tuple[str, callable, Tensor]]:
    checks = []

    # local update, 2 frames of a 2x2 grid, fixed edges
    w = _tiny_weights(3, 3, "lsg-w")
    x0 = _away_from_kinks(_rn((8, 3), "lsg-x"))
    grid0 = NodeGrid(2, 2, 3, 2, Tensor(x0))
    mu = x0 @ w.theta1.data
    per_frame = [gr.build_local_graph(mu[t * 4:(t + 1) * 4], 2).edges for t in range(2)]
    lsg_edges = mp._offset_union(per_frame, 4)

    def f_lsg(x):
        g = NodeGrid(2, 2, 3, 2, x)
        out = mp.lsg_update(g, w, 2, fixed_edges=lsg_edges)
        return tz.tsum(out.features)

    checks.append(("module:lsg_update", f_lsg, Tensor(x0)))

    # temporal update over the adjacent-frame union graph
    wt = _tiny_weights(3, 3, "tsg-w")
    xt = _away_from_kinks(_rn((8, 3), "tsg-x"))
    mut = xt @ wt.theta1.data
    per_pair = [gr.build_temporal_graph(mut[:4], mut[4:], 3).edges]
    tsg_edges = mp._offset_union(per_pair, 4, offset_b="next")

    def f_tsg(x):
        g = NodeGrid(2, 2, 3, 2, x)
        out = mp.tsg_update(g, wt, 3, fixed_edges=tsg_edges)
        return tz.tsum(out.features)

    checks.append(("module:tsg_update", f_tsg, Tensor(xt)))

    # hierarchical update: 4x4 tap over a 2x2 grid, structural edges only
    wh = _tiny_weights(2, 3, "hsg-w", hier_stride=2)
    tap_x = _away_from_kinks(_rn((2 * 16, 2), "hsg-tap"))
    low_x = _away_from_kinks(_rn((2 * 4, 3), "hsg-low"))

    def f_hsg_low(x):
        tap = NodeGrid(4, 4, 2, 2, Tensor(tap_x))
        low = NodeGrid(2, 2, 3, 2, x)
        out = mp.hsg_update(tap, low, wh, 2)
        return tz.tsum(out.features)

    checks.append(("module:hsg_update(grid)", f_hsg_low, Tensor(low_x)))

    def f_hsg_tap(x):
        tap = NodeGrid(4, 4, 2, 2, x)
        low = NodeGrid(2, 2, 3, 2, Tensor(low_x))
        out = mp.hsg_update(tap, low, wh, 2)
        return tz.tsum(out.features)

    checks.append(("module:hsg_update(tap)", f_hsg_tap, Tensor(tap_x)))

    # edge_conv weight gradient
    we = _tiny_weights(3, 3, "ec-w")
    xe = _away_from_kinks(_rn((4, 3), "ec-x"))
    ec_edges = [(0, 1), (1, 2), (2, 3)]

    def f_ec_w(mw):
        out = mp.edge_conv(Tensor(xe), ec_edges, mw, we.mlp_b)
        return tz.tsum(out)

    checks.append(("module:edge_conv(mlp_w)", f_ec_w, we.mlp_w))

    # temporal head on a [5, 3] sequence
    hp: dict[str, Tensor] = {}
    hd.init_head_params(3, 4, 3, CounterRng("gradsuite", "head"), hp)
    for p in hp.values():
        p.requires_grad = False

    def f_head(x):
        logits, aux, _ = hd.temporal_head(x, hp, 4)
        return tz.tsum(logits) + tz.tsum(aux)

    checks.append(("module:temporal_head", f_head,
                   Tensor(_away_from_kinks(_rn((5, 3), "head-x")))))

    # translation decoder, teacher forced
    dp: dict[str, Tensor] = {}
    hd.init_decoder_params(4, 3, 5, 3, CounterRng("gradsuite", "dec"), dp)
    for p in dp.values():
        p.requires_grad = False

    def f_dec(x):
        lp = hd.translation_decoder(x, [hd.SOS_ID, 3, 4], dp, 3)
        return tz.tsum(lp)

    checks.append(("module:translation_decoder", f_dec,
                   Tensor(_rn((2, 4), "dec-x"))))

    # CTC loss through the log-softmax
    def f_ctc(x):
        return cc.ctc_loss(tz.softmax_log(x), [1, 2])

    checks.append(("module:ctc_loss", f_ctc, Tensor(_rn((4, 3), "ctc-x"))))
    return checks


def run_suite(eps: float = 1e-5, tol: float = 1e-4) -> list[tuple[str, GradCheckReport]]:
    results = []
    for name, f, x in op_checks() + module_checks():
        results.append((name, grad_check(f, x, eps=eps, tol=tol)))
    return results


def format_table(results) -> str:
    width = max(len(n) for n, _ in results)
    lines = []
    for name, rep in results:
        status = "pass" if rep.passed else "FAIL"
        lines.append(f"{name.ljust(width)}  {status}  max_rel_err={rep.max_rel_err:.3e}")
    return "\n".join(lines)
