"""Immutable graph container, edge-list ingestion and degree statistics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)


class GraphError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Graph:
    """Simple graph on dense node ids ``0..node_count-1``.

    ``src``/``dst``/``weight`` hold each edge once (``src < dst`` for
    undirected graphs).  Adjacency is stored in CSR form: the neighbours of
    ``u`` are ``indices[indptr[u]:indptr[u+1]]`` (out-neighbours when
    directed), sorted by id.
    """

    node_count: int
    directed: bool
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    adj_weight: np.ndarray
    labels: tuple | None = None
    self_loops_dropped: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def edge_count(self) -> int:
        return int(self.src.shape[0])

    def neighbors(self, u: int) -> np.ndarray:
        self._check_node(u)
        return self.indices[self.indptr[u]:self.indptr[u + 1]]

    def neighbor_weights(self, u: int) -> np.ndarray:
        self._check_node(u)
        return self.adj_weight[self.indptr[u]:self.indptr[u + 1]]

    def degree(self, u: int | None = None):
        """Out-degree of ``u``; all degrees as an array when ``u`` is None."""
        deg = np.diff(self.indptr)
        return deg if u is None else int(deg[u])

    def has_edge(self, u: int, v: int) -> bool:
        nb = self.neighbors(u)
        i = np.searchsorted(nb, v)
        return bool(i < nb.shape[0] and nb[i] == v)

    def edge_set(self) -> set[tuple[int, int]]:
        return set(zip(self.src.tolist(), self.dst.tolist()))

    def to_edge_list(self) -> list[tuple[int, int, float]]:
        return list(zip(self.src.tolist(), self.dst.tolist(), self.weight.tolist()))

    def _check_node(self, u):
        if not 0 <= u < self.node_count:
            raise GraphError(f"node id {u} out of range [0, {self.node_count})")

    def __repr__(self):
        kind = "directed" if self.directed else "undirected"
        return f"Graph({kind}, n={self.node_count}, m={self.edge_count})"


def _build(node_count, directed, src, dst, weight, labels=None, self_loops=0) -> Graph:
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    weight = np.asarray(weight, dtype=np.float64)
    if directed:
        a_src, a_dst, a_w = src, dst, weight
    else:
        a_src = np.concatenate([src, dst])
        a_dst = np.concatenate([dst, src])
        a_w = np.concatenate([weight, weight])
    order = np.lexsort((a_dst, a_src))
    a_src, a_dst, a_w = a_src[order], a_dst[order], a_w[order]
    indptr = np.zeros(node_count + 1, dtype=np.int64)
    np.cumsum(np.bincount(a_src, minlength=node_count), out=indptr[1:])
    for arr in (src, dst, weight, indptr, a_dst, a_w):
        arr.setflags(write=False)
    return Graph(node_count, bool(directed), src, dst, weight, indptr, a_dst, a_w,
                 labels=labels, self_loops_dropped=self_loops)


def from_edge_list(records: Iterable[Sequence], directed: bool, node_count: int | None = None,
                   labels: Sequence[str] | None = None) -> Graph:
    """Build a graph from ``(src, dst[, weight])`` records.

    Duplicate pairs have their weights summed (for undirected graphs ``(u, v)``
    and ``(v, u)`` are the same pair); self-loops are dropped and counted in
    ``Graph.self_loops_dropped``.
    """
    records = list(records)
    if not records:
        raise GraphError("empty edge list")
    merged: dict[tuple[int, int], float] = {}
    loops = 0
    max_id = -1
    for i, rec in enumerate(records):
        if len(rec) not in (2, 3):
            raise GraphError(f"record {i}: expected (src, dst[, weight]), got {rec!r}")
        u, v = int(rec[0]), int(rec[1])
        w = float(rec[2]) if len(rec) == 3 else 1.0
        if u < 0 or v < 0:
            raise GraphError(f"record {i}: negative node id in {rec!r}")
        if not np.isfinite(w) or w <= 0:
            raise GraphError(f"record {i}: weight must be positive and finite, got {w}")
        max_id = max(max_id, u, v)
        if u == v:
            loops += 1
            continue
        key = (u, v) if directed or u < v else (v, u)
        merged[key] = merged.get(key, 0.0) + w
    if loops:
        log.info("dropped %d self-loop record(s)", loops)
    n = max_id + 1 if node_count is None else int(node_count)
    if n <= max_id:
        raise GraphError(f"node_count={n} but ids reach {max_id}")
    keys = sorted(merged)
    src = [k[0] for k in keys]
    dst = [k[1] for k in keys]
    w = [merged[k] for k in keys]
    return _build(n, directed, src, dst, w, labels=tuple(labels) if labels else None, self_loops=loops)


def from_pairs(n: int, pairs, directed: bool = False) -> Graph:
    """Fast path for generators: unweighted, already-clean edge pairs."""
    pairs = np.asarray(sorted((min(u, v), max(u, v)) if not directed else (u, v) for u, v in pairs),
                       dtype=np.int64).reshape(-1, 2)
    return _build(n, directed, pairs[:, 0], pairs[:, 1], np.ones(len(pairs)))


def degree_stats(g: Graph) -> tuple[float, int, dict[int, int]]:
    """(mean degree, max degree, degree histogram); out-degrees for directed graphs."""
    deg = g.degree()
    values, counts = np.unique(deg, return_counts=True)
    if g.directed:
        mean = g.edge_count / g.node_count
    else:
        mean = 2.0 * g.edge_count / g.node_count
    return float(mean), int(deg.max()), {int(d): int(c) for d, c in zip(values, counts)}


# -- text format -----------------------------------------------------------

def parse_edge_lines(lines: Iterable[str], directed: bool) -> Graph:
    """Parse ``src,dst[,weight]`` lines; ``#`` starts a comment.

    Integer ids are used as-is.  If any id is not a non-negative integer, all
    ids are treated as labels and mapped to dense ids in order of appearance
    (``Graph.labels`` keeps the mapping).
    """
    raw = []
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) not in (2, 3):
            raise GraphError(f"line {lineno}: expected 'src,dst[,weight]', got {line!r}")
        try:
            w = float(parts[2]) if len(parts) == 3 and parts[2] else 1.0
        except ValueError:
            raise GraphError(f"line {lineno}: bad weight {parts[2]!r}") from None
        raw.append((parts[0], parts[1], w))
    if not raw:
        raise GraphError("empty edge list")
    if all(s.isdigit() and d.isdigit() for s, d, _ in raw):
        return from_edge_list([(int(s), int(d), w) for s, d, w in raw], directed)
    ids: dict[str, int] = {}
    recs = []
    for s, d, w in raw:
        recs.append((ids.setdefault(s, len(ids)), ids.setdefault(d, len(ids)), w))
    return from_edge_list(recs, directed, labels=list(ids))


def read_edge_list(path, directed: bool) -> Graph:
    with open(path, encoding="utf-8") as fh:
        return parse_edge_lines(fh, directed)


def write_edge_list(g: Graph, path, header: str | None = None) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        for u, v, w in zip(g.src.tolist(), g.dst.tolist(), g.weight.tolist()):
            if g.labels:
                u, v = g.labels[u], g.labels[v]
            fh.write(f"{u},{v},{w!r}\n")
