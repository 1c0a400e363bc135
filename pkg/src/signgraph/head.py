"""Global sequence head: node pooling, temporal conv blocks, a 2-layer
bidirectional LSTM, gloss classifiers, and a small attention decoder that
stands in for a large pre-trained translation model.

Two classifier heads exist because the CTC loss supervises both the
conv-block output and the final recurrent output; the classifiers are not
shared, keeping their gradients independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tz
from .backbone import NodeGrid
from .rng import CounterRng
from .tensor import ShapeError, Tensor

GATES = ("i", "f", "g", "o")


def pool_nodes(grid: NodeGrid) -> Tensor:
    """Per-frame mean over nodes: [T*N, D] -> [T, D]."""
    T, n, d = grid.num_frames, grid.nodes_per_frame, grid.dim
    if T == 0:
        raise ShapeError("pool_nodes: empty sequence")
    return tz.mean_over_axis(tz.reshape(grid.features, (T, n, d)), axis=1)


def _maxpool2(x: Tensor) -> Tensor:
    """Halve the time axis by pairwise max (odd trailing step dropped)."""
    T = x.data.shape[0]
    half = T // 2
    a = tz.gather_rows(x, np.arange(0, 2 * half, 2))
    b = tz.gather_rows(x, np.arange(1, 2 * half, 2))
    return a + tz.relu(b - a)  # max(a, b), gradient to a on ties


def head_out_len(T: int) -> int:
    return (T // 2) // 2


# ---------------------------------------------------------------------------
# LSTM


def init_lstm_params(d_in: int, hidden: int, rng: CounterRng, prefix: str,
                     params: dict[str, Tensor]) -> None:
    for gate in GATES:
        params[f"{prefix}.wx_{gate}"] = Tensor(
            rng.normal((d_in, hidden)) * (1.0 / d_in) ** 0.5, requires_grad=True)
        params[f"{prefix}.wh_{gate}"] = Tensor(
            rng.normal((hidden, hidden)) * (1.0 / hidden) ** 0.5, requires_grad=True)
        bias = np.ones(hidden) if gate == "f" else np.zeros(hidden)
        params[f"{prefix}.b_{gate}"] = Tensor(bias, requires_grad=True)


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, params: dict[str, Tensor],
              prefix: str) -> tuple[Tensor, Tensor]:
    """Standard gated cell: i,f,o sigmoid gates, tanh candidate g.

    c' = f*c + i*g; h' = o*tanh(c').
    """
    def gate(name, act):
        pre = (tz.matmul(x, params[f"{prefix}.wx_{name}"])
               + tz.matmul(h, params[f"{prefix}.wh_{name}"])
               + params[f"{prefix}.b_{name}"])
        return act(pre)

    i = gate("i", tz.sigmoid)
    f = gate("f", tz.sigmoid)
    g = gate("g", tz.tanh)
    o = gate("o", tz.sigmoid)
    c2 = f * c + i * g
    return o * tz.tanh(c2), c2


def lstm_direction(x: Tensor, params: dict[str, Tensor], prefix: str,
                   hidden: int, reverse: bool = False) -> Tensor:
    """Run one direction over [T, D]; returns [T, hidden]."""
    T = x.data.shape[0]
    h = Tensor(np.zeros((1, hidden)))
    c = Tensor(np.zeros((1, hidden)))
    steps = range(T - 1, -1, -1) if reverse else range(T)
    outs = [None] * T
    for t in steps:
        xt = tz.gather_rows(x, [t])
        h, c = lstm_cell(xt, h, c, params, prefix)
        outs[t] = h
    return tz.concat(outs, axis=0)


def bilstm(x: Tensor, params: dict[str, Tensor], prefix: str, hidden: int,
           layers: int = 2) -> Tensor:
    """Stacked bidirectional LSTM; output [T, 2*hidden]."""
    out = x
    for layer in range(layers):
        fw = lstm_direction(out, params, f"{prefix}.l{layer}.fw", hidden)
        bw = lstm_direction(out, params, f"{prefix}.l{layer}.bw", hidden, reverse=True)
        out = tz.concat([fw, bw], axis=1)
    return out


# ---------------------------------------------------------------------------
# temporal head


def init_head_params(d_in: int, hidden: int, num_classes: int, rng: CounterRng,
                     params: dict[str, Tensor], prefix: str = "head",
                     conv_kernel: int = 5, layers: int = 2) -> None:
    c = d_in
    for b in range(2):
        fan_in = conv_kernel * c
        params[f"{prefix}.conv{b}.kernel"] = Tensor(
            rng.normal((conv_kernel, c, d_in)) * (2.0 / fan_in) ** 0.5, requires_grad=True)
        params[f"{prefix}.conv{b}.bias"] = Tensor(np.zeros(d_in), requires_grad=True)
        c = d_in
    params[f"{prefix}.aux_cls.w"] = Tensor(
        rng.normal((d_in, num_classes)) * (1.0 / d_in) ** 0.5, requires_grad=True)
    params[f"{prefix}.aux_cls.b"] = Tensor(np.zeros(num_classes), requires_grad=True)
    d = d_in
    for layer in range(layers):
        init_lstm_params(d, hidden, rng, f"{prefix}.lstm.l{layer}.fw", params)
        init_lstm_params(d, hidden, rng, f"{prefix}.lstm.l{layer}.bw", params)
        d = 2 * hidden
    params[f"{prefix}.cls.w"] = Tensor(
        rng.normal((2 * hidden, num_classes)) * (1.0 / (2 * hidden)) ** 0.5,
        requires_grad=True)
    params[f"{prefix}.cls.b"] = Tensor(np.zeros(num_classes), requires_grad=True)


def temporal_head(seq: Tensor, params: dict[str, Tensor], hidden: int,
                  prefix: str = "head", conv_kernel: int = 5,
                  layers: int = 2) -> tuple[Tensor, Tensor, Tensor]:
    """Frame features [T, D] -> (final logits, aux logits, encoder seq).

    Two (conv k=5 + ReLU + max-pool-2) blocks reduce T to T' = (T//2)//2,
    the aux classifier reads the conv output, the BiLSTM + final classifier
    produce the main logits, and the BiLSTM output [T', 2*hidden] is the
    encoder sequence handed to the translation decoder.
    """
    T = seq.data.shape[0]
    if T < 4:
        raise ShapeError(f"temporal_head: needs T >= 4 to survive two pool-by-2, got {T}")
    x = seq
    for b in range(2):
        k = params[f"{prefix}.conv{b}.kernel"]
        bias = params[f"{prefix}.conv{b}.bias"]
        x = _maxpool2(tz.relu(tz.conv1d(x, k, pad=conv_kernel // 2) + bias))
    aux_logits = tz.matmul(x, params[f"{prefix}.aux_cls.w"]) + params[f"{prefix}.aux_cls.b"]
    enc = bilstm(x, params, f"{prefix}.lstm", hidden, layers)
    logits = tz.matmul(enc, params[f"{prefix}.cls.w"]) + params[f"{prefix}.cls.b"]
    return logits, aux_logits, enc


# ---------------------------------------------------------------------------
# translation decoder

EOS_ID = 0
SOS_ID = 1
UNK_ID = 2
N_SPECIALS = 3


def init_decoder_params(d_enc: int, hidden: int, vocab_size: int, emb_dim: int,
                        rng: CounterRng, params: dict[str, Tensor],
                        prefix: str = "decoder") -> None:
    params[f"{prefix}.embed"] = Tensor(
        rng.normal((vocab_size, emb_dim)) * 0.1, requires_grad=True)
    init_lstm_params(emb_dim, hidden, rng, f"{prefix}.lstm", params)
    params[f"{prefix}.attn_q"] = Tensor(
        rng.normal((hidden, d_enc)) * (1.0 / hidden) ** 0.5, requires_grad=True)
    params[f"{prefix}.out.w"] = Tensor(
        rng.normal((hidden + d_enc, vocab_size)) * (1.0 / (hidden + d_enc)) ** 0.5,
        requires_grad=True)
    params[f"{prefix}.out.b"] = Tensor(np.zeros(vocab_size), requires_grad=True)


def _decoder_step(tok: int, h: Tensor, c: Tensor, enc: Tensor,
                  params: dict[str, Tensor], prefix: str) -> tuple[Tensor, Tensor, Tensor]:
    emb = tz.gather_rows(params[f"{prefix}.embed"], [tok])
    h, c = lstm_cell(emb, h, c, params, f"{prefix}.lstm")
    q = tz.matmul(h, params[f"{prefix}.attn_q"])          # [1, d_enc]
    scores = tz.matmul(q, _transpose(enc))                # [1, T']
    attn = tz.exp(tz.softmax_log(scores))                 # dot-product attention
    ctx = tz.matmul(attn, enc)                            # [1, d_enc]
    logits = tz.matmul(tz.concat([h, ctx], axis=1), params[f"{prefix}.out.w"]) \
        + params[f"{prefix}.out.b"]
    return tz.softmax_log(logits), h, c


def _transpose(x: Tensor) -> Tensor:
    T, D = x.data.shape
    return tz.reshape(
        tz.gather_rows(tz.reshape(x, (T * D, 1)),
                       (np.arange(T * D).reshape(T, D).T).ravel()),
        (D, T))


def translation_decoder(encoder_seq: Tensor, target_tokens, params: dict[str, Tensor],
                        hidden: int, teacher_forcing: bool = True,
                        max_len: int = 30, prefix: str = "decoder"):
    """Single-layer recurrent decoder with dot-product attention.

    Teacher forcing: ``target_tokens`` must begin with the start-of-sentence
    id; returns [len, V] per-step log-probabilities predicting
    target[1:] + EOS.  Greedy mode returns (log_probs, tokens) and stops at
    EOS (argmax ties go to the lowest id) or ``max_len``.
    """
    if encoder_seq.data.shape[0] == 0:
        raise ShapeError("translation_decoder: empty encoder sequence")
    h = Tensor(np.zeros((1, hidden)))
    c = Tensor(np.zeros((1, hidden)))
    if teacher_forcing:
        toks = [int(t) for t in target_tokens]
        if not toks:
            raise ValueError("translation_decoder: empty target in teacher-forcing mode")
        if toks[0] != SOS_ID:
            raise ValueError("translation_decoder: target must begin with SOS")
        logps = []
        for tok in toks:
            lp, h, c = _decoder_step(tok, h, c, encoder_seq, params, prefix)
            logps.append(lp)
        return tz.concat(logps, axis=0)
    tokens = []
    tok = SOS_ID
    logps = []
    for _ in range(max_len):
        lp, h, c = _decoder_step(tok, h, c, encoder_seq, params, prefix)
        logps.append(lp)
        tok = int(np.argmax(lp.data[0]))
        if tok == EOS_ID:
            break
        tokens.append(tok)
    return tz.concat(logps, axis=0), tokens


def cross_entropy(log_probs: Tensor, target_ids) -> Tensor:
    """Mean negative log-likelihood of target ids under [L, V] log-probs."""
    ids = np.asarray(target_ids, dtype=np.int64)
    L, V = log_probs.data.shape
    if ids.shape[0] != L:
        raise ShapeError(f"cross_entropy: {ids.shape[0]} targets for {L} steps")
    onehot = np.zeros((L, V))
    onehot[np.arange(L), ids] = 1.0
    return tz.tsum(log_probs * Tensor(onehot)) * Tensor(-1.0 / L)
