"""Barabási–Albert and Watts–Strogatz network generators."""

from __future__ import annotations

from dataclasses import dataclass


from .graph import Graph, from_pairs
from .rng import RngStream

MAX_REWIRE_TRIES = 100


@dataclass(frozen=True)
class BaParams:
    n: int
    m: int

    def __post_init__(self):
        if not 1 <= self.m < self.n:
            raise ValueError(f"BA requires 1 <= m < n, got n={self.n}, m={self.m}")


@dataclass(frozen=True)
class WsParams:
    n: int
    k: int
    p: float

    def __post_init__(self):
        if self.k % 2 or self.k < 2:
            raise ValueError(f"WS requires an even k >= 2, got k={self.k}")
        if self.k >= self.n:
            raise ValueError(f"WS requires k < n, got k={self.k}, n={self.n}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"WS requires 0 <= p <= 1, got p={self.p}")


def ba_edge_count(n: int, m: int) -> int:
    return m * (m - 1) // 2 + m * (n - m)


def ws_edge_count(n: int, k: int) -> int:
    return n * k // 2


def attachment_draw(pool: list[int], rng: RngStream) -> int:
    """One degree-proportional draw.

    ``pool`` lists every node once per unit of degree, so a uniform index into
    it selects node ``v`` with probability ``degree(v) / sum(degree)``.
    """
    return pool[int(rng.integers(len(pool)))]


def generate_ba(params: BaParams, rng: RngStream) -> Graph:
    """Preferential attachment grown from a complete graph on ``m`` nodes.

    Each new node links to ``m`` distinct existing nodes drawn proportionally
    to their current degree (duplicates are redrawn).  With ``m == 1`` the seed
    node has degree zero, so the first attachment is uniform.
    """
    n, m = params.n, params.m
    edges = [(i, j) for i in range(m) for j in range(i + 1, m)]
    pool = [v for e in edges for v in e]
    for new in range(m, n):
        if pool:
            targets: set[int] = set()
            while len(targets) < m:
                targets.add(attachment_draw(pool, rng))
        else:
            targets = set(int(t) for t in rng.choice(new, size=m, replace=False))
        for t in sorted(targets):
            edges.append((t, new))
            pool.extend((t, new))
    return from_pairs(n, edges)


def ring_lattice_edges(n: int, k: int) -> list[tuple[int, int]]:
    """Lattice edges in canonical (node, offset) order."""
    return [(u, (u + j) % n) for u in range(n) for j in range(1, k // 2 + 1)]


def generate_ws(params: WsParams, rng: RngStream) -> Graph:
    """Ring lattice with each lattice edge rewired with probability ``p``.

    A rewired edge ``(u, v)`` becomes ``(u, w)`` with ``w`` uniform over nodes
    that are neither ``u`` nor already adjacent to ``u``.  After
    ``MAX_REWIRE_TRIES`` failed target draws the edge stays put.
    """
    n, k, p = params.n, params.k, params.p
    lattice = ring_lattice_edges(n, k)
    adj = [set() for _ in range(n)]
    for u, v in lattice:
        adj[u].add(v)
        adj[v].add(u)
    coins = rng.random(len(lattice))
    for (u, v), c in zip(lattice, coins):
        if c >= p:
            continue
        for _ in range(MAX_REWIRE_TRIES):
            w = int(rng.integers(n))
            if w != u and w not in adj[u]:
                adj[u].discard(v)
                adj[v].discard(u)
                adj[u].add(w)
                adj[w].add(u)
                break
    pairs = [(u, v) for u in range(n) for v in adj[u] if u < v]
    return from_pairs(n, pairs)
