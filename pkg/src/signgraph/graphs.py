"""Construction of the three graph kinds over patch-grid nodes.

* local: per-frame KNN graph (dense; every node gets its K_l nearest).
* temporal: cross-frame top-K pair graph (sparse; only the K_t closest
  pairs between adjacent frames).
* hierarchical: fixed region graph pairing each high-resolution node with
  the low-resolution node covering the same region.

"Top K" is read as smallest distance throughout.  All distance ties break
toward lower node index so results are reproducible bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import CounterRng

DISTANCE_KINDS = ("euclidean", "cosine", "chebyshev")


@dataclass
class SignGraph:
    """Undirected edge list over node identifiers.

    ``kind`` is one of local / temporal / hierarchical.  For temporal and
    hierarchical graphs the two endpoint id spaces differ (frame i vs frame
    i+1, high-res vs low-res); edges are stored as (first-space id,
    second-space id) pairs and ``node_space`` documents the spaces.
    """

    kind: str
    edges: list[tuple[int, int]]
    node_space: str = ""

    def __post_init__(self):
        if self.kind not in ("local", "temporal", "hierarchical"):
            raise ValueError(f"SignGraph: unknown kind {self.kind!r}")


@dataclass
class GraphParams:
    k_local: tuple[int, ...] = (3, 4)
    k_temporal: tuple[int, ...] = (16, 16)
    distance: str = "euclidean"
    drop_rate: float = 0.0

    def __post_init__(self):
        if any(k < 1 for k in self.k_local) or any(k < 1 for k in self.k_temporal):
            raise ValueError("GraphParams: K values must be >= 1")
        if self.distance not in DISTANCE_KINDS:
            raise ValueError(f"GraphParams: unknown distance {self.distance!r}")
        if not 0.0 <= self.drop_rate < 1.0:
            raise ValueError("GraphParams: drop_rate must be in [0, 1)")


# ---------------------------------------------------------------------------
# distances


def node_distance(a: np.ndarray, b: np.ndarray, kind: str = "euclidean") -> float:
    """Distance between two feature vectors.

    Cosine distance with a zero vector is defined as 1 (convention, not an
    error): a zero vector has no direction to agree with.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"node_distance: dims differ {a.shape} vs {b.shape}")
    if kind == "euclidean":
        return float(np.linalg.norm(a - b))
    if kind == "chebyshev":
        return float(np.max(np.abs(a - b))) if a.size else 0.0
    if kind == "cosine":
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0.0 or nb == 0.0:
            return 0.0 if na == nb == 0.0 and np.array_equal(a, b) else 1.0
        return float(1.0 - np.dot(a, b) / (na * nb))
    raise ValueError(f"node_distance: unknown kind {kind!r}")


def distance_matrix(a: np.ndarray, b: np.ndarray, kind: str) -> np.ndarray:
    """Pairwise distances between rows of a [Na, D] and b [Nb, D]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if kind == "euclidean":
        sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
        return np.sqrt(np.maximum(sq, 0.0))
    if kind == "chebyshev":
        return np.abs(a[:, None, :] - b[None, :, :]).max(axis=2)
    if kind == "cosine":
        na = np.linalg.norm(a, axis=1)
        nb = np.linalg.norm(b, axis=1)
        denom = np.outer(na, nb)
        with np.errstate(invalid="ignore", divide="ignore"):
            sim = np.where(denom > 0.0, (a @ b.T) / np.where(denom > 0, denom, 1.0), 0.0)
        d = 1.0 - sim
        # zero-vs-zero pairs: identical vectors, distance 0
        zz = (na == 0.0)[:, None] & (nb == 0.0)[None, :]
        d = np.where(zz, 0.0, np.where(denom > 0.0, d, 1.0))
        return d
    raise ValueError(f"distance_matrix: unknown kind {kind!r}")


# ---------------------------------------------------------------------------
# builders


def build_local_graph(features: np.ndarray, k_local: int, kind: str = "euclidean") -> SignGraph:
    """KNN graph over one frame's node features [N, D].

    Each node connects to its ``k_local`` nearest other nodes (self
    excluded); the edge set is the deduplicated undirected union.  K is
    clamped to N-1 (degenerate grids occur at late stages).
    """
    feats = np.asarray(features, dtype=np.float64)
    n = feats.shape[0]
    if n == 0:
        raise ValueError("build_local_graph: empty grid")
    k = min(k_local, n - 1)
    if k < 1:
        return SignGraph("local", [], node_space="one frame grid")
    dist = distance_matrix(feats, feats, kind)
    np.fill_diagonal(dist, np.inf)
    # stable argsort of distances == sort by (distance, index): ties break
    # toward the lower index
    nbrs = np.argsort(dist, axis=1, kind="stable")[:, :k]
    a = np.repeat(np.arange(n), k)
    b = nbrs.ravel()
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    pairs = np.unique(np.stack([lo, hi], axis=1), axis=0)
    edges = [(int(x), int(y)) for x, y in pairs]
    return SignGraph("local", edges, node_space="one frame grid")


def build_temporal_graph(feats_a: np.ndarray, feats_b: np.ndarray, k_temporal: int,
                         kind: str = "euclidean") -> SignGraph:
    """Top-K pair graph between two adjacent frames' features [N, D] each.

    Exactly min(K_t, N^2) edges: the (j, k) pairs with smallest distance,
    ties broken lexicographically by (j, k).  Edge (j, k) connects node j of
    the first frame to node k of the second.
    """
    a = np.asarray(feats_a, dtype=np.float64)
    b = np.asarray(feats_b, dtype=np.float64)
    if a.shape[0] != b.shape[0]:
        raise ValueError(
            f"build_temporal_graph: node counts differ {a.shape[0]} vs {b.shape[0]}"
        )
    n = a.shape[0]
    m = distance_matrix(a, b, kind)
    flat = m.ravel()
    jj, kk = np.divmod(np.arange(n * n), n)
    order = np.lexsort((kk, jj, flat))[: min(k_temporal, n * n)]
    edges = [(int(jj[i]), int(kk[i])) for i in order]
    return SignGraph("temporal", sorted(edges), node_space="frame i -> frame i+1")


def hier_low_index(j: int, w_high: int, w_low: int, s: int) -> int:
    """Low-res node index covering high-res node j (row-major grids)."""
    return ((j // w_high) // s) * w_low + (j % w_high) // s


def build_hierarchical_graph(high_hw: tuple[int, int], low_hw: tuple[int, int],
                             s: int) -> SignGraph:
    """Fixed region graph: one edge per high-res node to the low-res node of
    the same region.  High extents must be exactly s times the low extents;
    every low-res node ends up with degree s^2.
    """
    hh, wh = high_hw
    hl, wl = low_hw
    if hh != s * hl or wh != s * wl:
        raise ValueError(
            f"build_hierarchical_graph: extents {hh}x{wh} are not {s}x the low {hl}x{wl}"
        )
    edges = [(j, hier_low_index(j, wh, wl, s)) for j in range(hh * wh)]
    return SignGraph("hierarchical", edges, node_space="high-res grid -> low-res grid")


def drop_edges(g: SignGraph, rate: float, rng_seed: int) -> SignGraph:
    """Independently retain each edge with probability 1 - rate."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"drop_edges: rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return SignGraph(g.kind, list(g.edges), g.node_space)
    rng = CounterRng("drop_edges", rng_seed)
    u = rng.uniform((len(g.edges),)) if g.edges else np.zeros(0)
    kept = [e for e, ui in zip(g.edges, u) if ui >= rate]
    return SignGraph(g.kind, kept, g.node_space)


# ---------------------------------------------------------------------------
# export


def graph_to_json(g: SignGraph, id_a, id_b) -> dict:
    """JSON form with string node ids; id_a/id_b map the two endpoint spaces."""
    return {"kind": g.kind, "edges": [[id_a(a), id_b(b)] for a, b in g.edges]}


def graph_to_dot(g: SignGraph, id_a, id_b, name: str = "signgraph") -> str:
    lines = [f"graph {name} {{"]
    for a, b in g.edges:
        lines.append(f'  "{id_a(a)}" -- "{id_b(b)}";')
    lines.append("}")
    return "\n".join(lines) + "\n"
