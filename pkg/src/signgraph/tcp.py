"""Text-driven pre-training support: pseudo-gloss generation from spoken
text, vocabulary construction, and the feature-dispersion diagnostic.

Pseudo glosses are produced by three steps: strip punctuation, optional
lowercasing + whitespace tokenization, and per-token lemmatization.  The
default lemmatizer is the identity; a suffix-stripping lemmatizer is
provided for the synthetic corpus's artificial inflections.
"""

from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .ctc import GlossVocab


def _is_punct(ch: str) -> bool:
    """Unicode general categories P* (the frozen punctuation default)."""
    return unicodedata.category(ch).startswith("P")


@dataclass
class NormalizerConfig:
    lowercase: bool = True
    lemmatizer: Callable[[str], str] = staticmethod(lambda tok: tok)
    strip_punctuation: bool = True


def make_pseudo_gloss(text: str, cfg: NormalizerConfig | None = None) -> list[str]:
    """Normalize a sentence into pseudo-gloss tokens, preserving word order.

    Idempotent: normalizing the joined output again yields the same tokens.
    """
    cfg = cfg or NormalizerConfig()
    if cfg.strip_punctuation:
        text = "".join(ch for ch in text if not _is_punct(ch))
    if cfg.lowercase:
        text = text.lower()
    return [cfg.lemmatizer(tok) for tok in text.split()]


def suffix_lemmatizer(suffixes: tuple[str, ...]) -> Callable[[str], str]:
    """Strip the first matching suffix when the stem keeps >= 3 characters."""
    ordered = tuple(sorted(suffixes, key=len, reverse=True))

    def lemmatize(tok: str) -> str:
        for suf in ordered:
            if tok.endswith(suf) and len(tok) - len(suf) >= 3:
                return tok[: -len(suf)]
        return tok

    return lemmatize


def build_vocab(corpus: list[list[str]]) -> GlossVocab:
    """Ids by descending frequency, ties broken lexicographically; id 0 is
    reserved for the blank."""
    if not corpus:
        raise ValueError("build_vocab: empty corpus")
    counts = Counter()
    for seq in corpus:
        counts.update(seq)
    ordered = sorted(counts, key=lambda t: (-counts[t], t))
    return GlossVocab(ordered)


def feature_dispersion(seq) -> float:
    """Mean cosine similarity of consecutive feature rows [T', D].

    Lower values mean more dispersed, token-like features.  A row of zeros
    contributes similarity 0 against any nonzero row.
    """
    arr = np.asarray(seq.data if not isinstance(seq, np.ndarray) and hasattr(seq, "data")
                     else seq, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 2:
        raise ValueError("feature_dispersion: needs at least 2 time steps")
    a, b = arr[:-1], arr[1:]
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    denom = na * nb
    sims = np.where(denom > 0, (a * b).sum(1) / np.where(denom > 0, denom, 1.0), 0.0)
    both_zero = (na == 0) & (nb == 0)
    sims = np.where(both_zero, 1.0, sims)
    return float(sims.mean())
