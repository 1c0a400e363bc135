"""CTC loss via forward-backward dynamic programming, a brute-force oracle,
greedy decoding, and word error rate accounting.

All dynamic programming runs in log space.  Log of zero probability is the
sentinel LOG_ZERO = -1e30 (never produced by real log-probs, safely below
any achievable path score, still finite).
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from . import tensor as tz
from .tensor import ShapeError, Tensor

BLANK = 0
LOG_ZERO = -1e30


class GlossVocab:
    """Token <-> id table with the blank reserved at id 0.

    Ids are dense in [0, V]; real tokens occupy 1..V and the blank never
    appears in targets.
    """

    def __init__(self, tokens: list[str]):
        if len(set(tokens)) != len(tokens):
            raise ValueError("GlossVocab: duplicate tokens")
        self.tokens = list(tokens)
        self._ids = {t: i + 1 for i, t in enumerate(self.tokens)}

    @property
    def size(self) -> int:
        """Vocabulary size including the blank."""
        return len(self.tokens) + 1

    def id_of(self, token: str) -> int | None:
        return self._ids.get(token)

    def token_of(self, gloss_id: int) -> str:
        if not 1 <= gloss_id <= len(self.tokens):
            raise KeyError(f"GlossVocab: id {gloss_id} out of range")
        return self.tokens[gloss_id - 1]

    def encode(self, tokens: list[str]) -> tuple[list[int], int]:
        """Map tokens to ids, dropping out-of-vocabulary tokens.

        Returns (ids, oov_count)."""
        ids, oov = [], 0
        for t in tokens:
            i = self._ids.get(t)
            if i is None:
                oov += 1
            else:
                ids.append(i)
        return ids, oov

    def decode(self, ids: list[int]) -> list[str]:
        return [self.token_of(i) for i in ids]

    def save(self, path, lowercase: bool = True) -> None:
        """JSON form: array position i holds the token for id i+1; the blank
        is implicit at id 0."""
        with open(path, "w") as fh:
            json.dump({"version": 1, "lowercase": lowercase, "tokens": self.tokens},
                      fh, indent=2, sort_keys=True, ensure_ascii=False)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "GlossVocab":
        with open(path) as fh:
            data = json.load(fh)
        return cls(data["tokens"])


# ---------------------------------------------------------------------------
# loss


def _logaddexp(a, b):
    return np.logaddexp(np.maximum(a, LOG_ZERO), np.maximum(b, LOG_ZERO))


def _validate_target(target, num_labels: int) -> list[int]:
    tgt = [int(t) for t in target]
    for t in tgt:
        if t == BLANK:
            raise ValueError("ctc: blank id 0 must not appear in targets")
        if not 0 < t < num_labels:
            raise ValueError(f"ctc: target id {t} out of range for {num_labels} labels")
    return tgt


def min_frames_required(target) -> int:
    """Shortest emission length that can collapse to the target: one frame
    per label plus a separating blank between adjacent repeats."""
    tgt = list(target)
    repeats = sum(1 for a, b in zip(tgt, tgt[1:]) if a == b)
    return len(tgt) + repeats


def ctc_loss(log_probs: Tensor, target) -> Tensor:
    """Negative log probability of all alignments collapsing to ``target``.

    ``log_probs`` is [T, V+1] after log-softmax (column 0 = blank).  The
    gradient with respect to ``log_probs`` is computed by the
    forward-backward recursion and recorded on the active tape.
    """
    if log_probs.data.ndim != 2:
        raise ShapeError(f"ctc_loss: expected [T, V+1], got {log_probs.shape}")
    T, V1 = log_probs.data.shape
    tgt = _validate_target(target, V1)
    need = min_frames_required(tgt)
    if need > T:
        raise ValueError(
            f"ctc_loss: target needs at least {need} frames but only {T} available"
        )

    if not tgt:
        # only the all-blank path collapses to an empty target
        loss = Tensor(np.asarray(-log_probs.data[:, BLANK].sum()))

        def bwd_empty(g):
            glp = np.zeros_like(log_probs.data)
            glp[:, BLANK] = -float(g)
            return (glp,)

        return tz._record(loss, (log_probs,), bwd_empty)

    # extended label sequence: blank, l1, blank, l2, ..., blank
    ext = [BLANK]
    for t in tgt:
        ext.extend([t, BLANK])
    S = len(ext)
    ext_arr = np.asarray(ext)
    lp = log_probs.data

    alpha = np.full((T, S), LOG_ZERO)
    alpha[0, 0] = lp[0, BLANK]
    if S > 1:
        alpha[0, 1] = lp[0, ext[1]]
    for t in range(1, T):
        prev = alpha[t - 1]
        stay = prev
        step = np.concatenate([[LOG_ZERO], prev[:-1]])
        skip = np.concatenate([[LOG_ZERO, LOG_ZERO], prev[:-2]])
        # skip is allowed only onto a non-blank label differing from label s-2
        allow_skip = np.zeros(S, dtype=bool)
        allow_skip[2:] = (ext_arr[2:] != BLANK) & (ext_arr[2:] != ext_arr[:-2])
        acc = _logaddexp(stay, step)
        acc = np.where(allow_skip, _logaddexp(acc, skip), acc)
        alpha[t] = acc + lp[t, ext_arr]

    tail = alpha[T - 1, S - 1]
    if S > 1:
        tail = _logaddexp(tail, alpha[T - 1, S - 2])
    log_p = float(tail)
    loss = Tensor(np.asarray(-log_p))

    # backward recursion for the gradient
    beta = np.full((T, S), LOG_ZERO)
    beta[T - 1, S - 1] = lp[T - 1, BLANK]
    if S > 1:
        beta[T - 1, S - 2] = lp[T - 1, ext[S - 2]]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        stay = nxt
        step = np.concatenate([nxt[1:], [LOG_ZERO]])
        skip = np.concatenate([nxt[2:], [LOG_ZERO, LOG_ZERO]])
        allow_skip = np.zeros(S, dtype=bool)
        allow_skip[: S - 2] = (ext_arr[2:] != BLANK) & (ext_arr[2:] != ext_arr[:-2])
        acc = _logaddexp(stay, step)
        acc = np.where(allow_skip, _logaddexp(acc, skip), acc)
        beta[t] = acc + lp[t, ext_arr]

    def bwd(g):
        # d(-logP)/d logp[t,k] = -sum_{s: ext[s]=k} exp(alpha+beta - logp - logP)
        glp = np.zeros_like(lp)
        gamma = alpha + beta - lp[:, ext_arr] - log_p  # [T, S] in log space
        contrib = np.where(gamma < -700.0, 0.0, np.exp(np.maximum(gamma, -745.0)))
        for s in range(S):
            glp[:, ext[s]] += contrib[:, s]
        return (-float(g) * glp,)

    return tz._record(loss, (log_probs,), bwd)


def ctc_loss_bruteforce(probs: np.ndarray, target) -> float:
    """Total probability of all length-T label paths collapsing to target,
    by exhaustive enumeration.  The independent oracle for ctc_loss.

    Instance size (V+1)**T must not exceed 1e6.
    """
    probs = np.asarray(probs, dtype=np.float64)
    T, V1 = probs.shape
    if V1 ** T > 1_000_000:
        raise ValueError(f"ctc_loss_bruteforce: instance too large ({V1}**{T})")
    tgt = tuple(int(t) for t in target)
    total = 0.0
    for path in itertools.product(range(V1), repeat=T):
        if collapse(path) == tgt:
            p = 1.0
            for t, lab in enumerate(path):
                p *= probs[t, lab]
            total += p
    return total


def collapse(path) -> tuple[int, ...]:
    """CTC collapse: merge consecutive repeats, then drop blanks."""
    out = []
    prev = None
    for lab in path:
        if lab != prev:
            if lab != BLANK:
                out.append(int(lab))
            prev = lab
    return tuple(out)


def greedy_decode(log_probs) -> list[int]:
    """Per-step argmax (ties to the lowest id), then CTC collapse."""
    lp = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    if lp.size == 0:
        return []
    path = np.argmax(lp, axis=-1)
    return list(collapse(path))


# ---------------------------------------------------------------------------
# word error rate


@dataclass
class WerReport:
    wer: float
    deletions: int
    insertions: int
    substitutions: int
    ref_len: int


def wer(hyp: list, ref: list) -> WerReport:
    """Minimal edit distance with unit costs and a del/ins/sub breakdown.

    The backtrace prefers substitution over deletion over insertion when
    costs tie, which makes wer(h, r) and wer(r, h) mirror images with
    deletions and insertions swapped.
    """
    if len(ref) == 0:
        raise ValueError("wer: reference must be nonempty")
    nh, nr = len(hyp), len(ref)
    d = np.zeros((nr + 1, nh + 1), dtype=np.int64)
    d[:, 0] = np.arange(nr + 1)  # all deletions
    d[0, :] = np.arange(nh + 1)  # all insertions
    for i in range(1, nr + 1):
        for j in range(1, nh + 1):
            sub = d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            dele = d[i - 1, j] + 1
            ins = d[i, j - 1] + 1
            d[i, j] = min(sub, dele, ins)
    dels = inss = subs = 0
    i, j = nr, nh
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            if ref[i - 1] != hyp[j - 1]:
                subs += 1
            i, j = i - 1, j - 1
        elif i > 0 and d[i, j] == d[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            inss += 1
            j -= 1
    return WerReport(
        wer=(dels + inss + subs) / nr,
        deletions=dels,
        insertions=inss,
        substitutions=subs,
        ref_len=nr,
    )
