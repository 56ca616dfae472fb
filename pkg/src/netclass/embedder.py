"""Skip-gram with negative sampling over walk corpora, and PCA projection."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.special import expit

from .rng import RngStream
from .walker import WalkCorpus

log = logging.getLogger(__name__)


class EmbeddingError(RuntimeError):
    pass


@dataclass(frozen=True)
class SgnsConfig:
    dim: int = 20
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    lr_start: float = 0.025
    lr_end: float = 1e-4
    noise_exponent: float = 0.75

    def __post_init__(self):
        if self.dim < 2 or self.window < 1 or self.negatives < 1 or self.epochs < 1:
            raise ValueError(f"invalid SGNS config: {self}")
        if not self.lr_start > self.lr_end > 0:
            raise ValueError("need lr_start > lr_end > 0")


@dataclass(eq=False)
class EmbeddingMatrix:
    vectors: np.ndarray
    context_vectors: np.ndarray
    unvisited: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    epoch_loss: list = field(default_factory=list)


@dataclass(eq=False)
class Points2D:
    coords: np.ndarray
    eigenvalues: np.ndarray | None = None


def sigmoid(x):
    return expit(np.asarray(x, dtype=np.float64))


def sgns_pair_gradient(v_w, u_c, label: int):
    """Gradient of ``log sigma(±u·v)`` w.r.t. ``v_w`` and ``u_c`` (ascent direction).

    ``g = label - sigma(u·v)``; returns ``(g * u_c, g * v_w)``.
    """
    v_w = np.asarray(v_w, dtype=np.float64)
    u_c = np.asarray(u_c, dtype=np.float64)
    g = float(label) - float(sigmoid(u_c @ v_w))
    return g * u_c, g * v_w


def pair_objective(v_w, u_c, label: int) -> float:
    """``log sigma(u·v)`` for a positive pair, ``log sigma(-u·v)`` for a negative."""
    x = float(np.dot(u_c, v_w))
    s = x if label == 1 else -x
    return -math.log1p(math.exp(-s)) if s >= 0 else s - math.log1p(math.exp(s))


def pairs_per_walk(length: int, window: int) -> int:
    return sum(min(i + window, length - 1) - max(i - window, 0) for i in range(length))


@njit(cache=True)
def _sigmoid_scalar(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def _sgns_epoch(paths, lengths, window, negs, vec, ctx, lr_start, lr_end, t, total, track_loss):
    dim = vec.shape[1]
    nneg = negs.shape[1]
    slope = (lr_end - lr_start) / max(total - 1, 1)
    neu = np.zeros(dim, dtype=np.float32)
    loss = 0.0
    k = 0
    for w in range(paths.shape[0]):
        ln = lengths[w]
        for i in range(ln):
            v = vec[paths[w, i]]
            lo = max(i - window, 0)
            hi = min(i + window, ln - 1)
            for j in range(lo, hi + 1):
                if j == i:
                    continue
                pos = paths[w, j]
                lr = lr_start + slope * t
                neu[:] = 0.0
                for s in range(nneg + 1):
                    if s == 0:
                        target = pos
                        label = 1.0
                    else:
                        target = negs[k, s - 1]
                        if target == pos:
                            continue
                        label = 0.0
                    u = ctx[target]
                    f = np.float32(0.0)
                    for d in range(dim):
                        f += v[d] * u[d]
                    sg = _sigmoid_scalar(f)
                    if track_loss:
                        loss -= math.log(max(sg if label == 1.0 else 1.0 - sg, 1e-300))
                    g = np.float32((label - sg) * lr)
                    for d in range(dim):
                        neu[d] += g * u[d]
                        u[d] += g * v[d]
                for d in range(dim):
                    v[d] += neu[d]
                k += 1
                t += 1
    return loss, t


def alias_table(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vose alias table for the discrete distribution ``p``."""
    n = p.shape[0]
    prob = p * n
    alias = np.arange(n)
    small = [i for i in range(n) if prob[i] < 1.0]
    large = [i for i in range(n) if prob[i] >= 1.0]
    while small and large:
        s, l = small.pop(), large.pop()
        alias[s] = l
        prob[l] -= 1.0 - prob[s]
        (small if prob[l] < 1.0 else large).append(l)
    for i in small + large:
        prob[i] = 1.0
    return prob, alias


def alias_draw(prob: np.ndarray, alias: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Map uniforms in [0, 1) to samples; one uniform per draw."""
    x = u * prob.shape[0]
    idx = x.astype(np.int64)
    np.minimum(idx, prob.shape[0] - 1, out=idx)
    return np.where(x - idx < prob[idx], idx, alias[idx])


def noise_distribution(corpus: WalkCorpus, exponent: float) -> np.ndarray:
    counts = np.bincount(corpus.paths[corpus.paths >= 0], minlength=corpus.source_node_count).astype(np.float64)
    p = counts ** exponent
    p[counts == 0] = 0.0
    return p / p.sum()


def train_sgns(corpus: WalkCorpus, cfg: SgnsConfig, rng: RngStream,
               track_loss: bool = False) -> EmbeddingMatrix:
    """Fit center/context vectors with one SGNS update per (token, context) pair.

    Uses a full fixed window, negatives from the unigram^``noise_exponent``
    distribution (a negative equal to the positive context is skipped), and a
    learning rate decaying linearly over all pair updates.  Single-threaded and
    deterministic given ``rng``.  With ``track_loss`` the mean negative
    objective per pair is recorded for every epoch (about 50% slower).
    """
    if len(corpus) == 0 or corpus.token_count == 0:
        raise EmbeddingError("empty corpus")
    n, dim = corpus.source_node_count, cfg.dim
    paths = np.ascontiguousarray(corpus.paths)
    lengths = np.ascontiguousarray(corpus.lengths)
    per_walk = np.array([pairs_per_walk(int(l), cfg.window) for l in range(paths.shape[1] + 1)])
    n_pairs = int(per_walk[lengths].sum())
    total = n_pairs * cfg.epochs

    vec = ((rng.random((n, dim)) - 0.5) / dim).astype(np.float32)
    ctx = np.zeros((n, dim), dtype=np.float32)
    prob, alias = alias_table(noise_distribution(corpus, cfg.noise_exponent))

    t = 0
    history = []
    for epoch in range(cfg.epochs):
        u = rng.random(n_pairs * cfg.negatives)
        negs = alias_draw(prob, alias, u).reshape(n_pairs, cfg.negatives)
        loss, t = _sgns_epoch(paths, lengths, cfg.window, negs, vec, ctx,
                              cfg.lr_start, cfg.lr_end, t, total, track_loss)
        if not (np.isfinite(loss) and np.all(np.isfinite(vec)) and np.all(np.isfinite(ctx))):
            raise EmbeddingError(
                f"SGNS diverged in epoch {epoch}: loss={loss}, non-finite entries: "
                f"vectors={int(np.sum(~np.isfinite(vec)))}, context={int(np.sum(~np.isfinite(ctx)))}, "
                f"lr_start={cfg.lr_start}")
        if track_loss:
            history.append(loss / n_pairs)

    visited = np.bincount(paths[paths >= 0], minlength=n) > 0
    unvisited = np.flatnonzero(~visited)
    if unvisited.size:
        log.info("%d node(s) never visited; given zero vectors", unvisited.size)
        vec[unvisited] = 0.0
        ctx[unvisited] = 0.0
    return EmbeddingMatrix(vec, ctx, unvisited, history)


def pca_project(emb, out_dim: int = 2) -> Points2D:
    """Project center vectors (or a raw matrix) onto the leading principal axes.

    Axes are ordered by descending eigenvalue; each axis is signed so its
    largest-magnitude loading is positive.  Missing directions of a
    rank-deficient covariance are zero-filled with a warning.
    """
    X = np.asarray(getattr(emb, "vectors", emb), dtype=np.float64)
    n, d = X.shape
    if n < out_dim:
        raise ValueError(f"need at least {out_dim} rows, got {n}")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / max(n - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:out_dim]
    evals, evecs = evals[order], evecs[:, order]
    tol = max(float(evals[0]), 0.0) * 1e-12 if evals.size else 0.0
    for j in range(evecs.shape[1]):
        if evals[j] <= tol:
            evecs[:, j] = 0.0
            continue
        big = np.argmax(np.abs(evecs[:, j]))
        if evecs[big, j] < 0:
            evecs[:, j] = -evecs[:, j]
    if np.any(evals <= tol):
        log.warning("covariance has fewer than %d positive eigenvalues; zero-filling", out_dim)
    coords = Xc @ evecs
    if d < out_dim:
        coords = np.hstack([coords, np.zeros((n, out_dim - d))])
    return Points2D(coords, evals)


def write_matrix(mat, path) -> None:
    """Text matrix: ``n dim`` header then one row per line."""
    mat = np.asarray(mat)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{mat.shape[0]} {mat.shape[1]}\n")
        for row in mat:
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def read_matrix(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        n, d = map(int, fh.readline().split())
        data = np.loadtxt(fh, ndmin=2, dtype=np.float64)
    if data.shape != (n, d):
        raise ValueError(f"{path}: header says {n}x{d}, body is {data.shape[0]}x{data.shape[1]}")
    return data
