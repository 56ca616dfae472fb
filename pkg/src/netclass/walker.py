"""First-order random walks over (optionally weighted, directed) graphs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph, GraphError, _build
from .rng import RngStream


@dataclass(frozen=True)
class WalkConfig:
    num_walks: int = 10000
    walk_length: int = 10

    def __post_init__(self):
        if self.num_walks < 1:
            raise ValueError("num_walks must be >= 1")
        if self.walk_length < 2:
            raise ValueError("walk_length must be >= 2")


@dataclass(eq=False)
class WalkCorpus:
    """Walks stored as a ``(num_walks, walk_length)`` array padded with -1."""

    paths: np.ndarray
    lengths: np.ndarray
    source_node_count: int

    @property
    def walks(self) -> list[list[int]]:
        return [row[:l].tolist() for row, l in zip(self.paths, self.lengths)]

    @property
    def token_count(self) -> int:
        return int(self.lengths.sum())

    def __len__(self):
        return self.paths.shape[0]


def transition_distribution(g: Graph, node: int) -> tuple[np.ndarray, np.ndarray]:
    """Out-neighbours of ``node`` and their weight-proportional probabilities."""
    nb = g.neighbors(node)
    w = g.neighbor_weights(node)
    if nb.shape[0] == 0:
        return nb, np.zeros(0)
    return nb, w / w.sum()


def _row_offset_cdf(g: Graph) -> np.ndarray:
    """Per-row normalised CDF shifted by the row index.

    Entry ``i`` in row ``u`` holds ``u + F_u(i)`` and each row ends exactly at
    ``u + 1``, so one global ``searchsorted`` on ``u + r`` (``0 <= r < 1``)
    samples every walker's next step at once.
    """
    cdf = np.empty(g.indices.shape[0])
    for u in range(g.node_count):
        lo, hi = g.indptr[u], g.indptr[u + 1]
        if hi == lo:
            continue
        c = np.cumsum(g.adj_weight[lo:hi])
        cdf[lo:hi] = u + c / c[-1]
        cdf[hi - 1] = u + 1.0
    return cdf


def generate_corpus(g: Graph, cfg: WalkConfig, rng: RngStream) -> WalkCorpus:
    """``cfg.num_walks`` walks from uniformly drawn start nodes.

    Walks stop early at nodes without out-edges.
    """
    if g.node_count < 2:
        raise GraphError("need at least 2 nodes to walk")
    if g.edge_count == 0:
        raise GraphError("graph has no edges to walk")
    W, L = cfg.num_walks, cfg.walk_length
    cdf = _row_offset_cdf(g)
    deg = np.diff(g.indptr)
    paths = np.full((W, L), -1, dtype=np.int64)
    lengths = np.ones(W, dtype=np.int64)
    cur = rng.integers(g.node_count, size=W)
    paths[:, 0] = cur
    alive = deg[cur] > 0
    for step in range(1, L):
        r = rng.random(W)
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        u = cur[idx]
        pos = np.searchsorted(cdf, u + r[idx], side="right")
        # u + r can round up to u + 1 for large u
        pos = np.minimum(pos, g.indptr[u + 1] - 1)
        nxt = g.indices[pos]
        cur[idx] = nxt
        paths[idx, step] = nxt
        lengths[idx] += 1
        alive[idx] = deg[nxt] > 0
    return WalkCorpus(paths, lengths, g.node_count)


def transform_weights(g: Graph, how: str) -> Graph:
    """Return ``g`` with weights mapped by ``how`` ('raw' or 'log1p')."""
    if how == "raw":
        return g
    if how != "log1p":
        raise ValueError(f"unknown weight transform {how!r}")
    out = _build(g.node_count, g.directed, g.src.copy(), g.dst.copy(), np.log1p(g.weight),
                 labels=g.labels, self_loops=g.self_loops_dropped)
    return out


def write_corpus(corpus: WalkCorpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for w in corpus.walks:
            fh.write(" ".join(map(str, w)) + "\n")
