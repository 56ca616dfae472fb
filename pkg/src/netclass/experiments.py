"""End-to-end experiment orchestration.

Graph -> walks -> SGNS -> PCA -> raster image -> CNN, for synthetic BA/WS
datasets, WS rewiring-probability grids, size-robustness sweeps and labelled
edge-list manifests (e.g. trade-flow networks).
"""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import cnn
from .embedder import Points2D, SgnsConfig, pca_project, train_sgns
from .generators import BaParams, WsParams, generate_ba, generate_ws
from .graph import Graph, read_edge_list
from .rasterizer import GrayImage, rasterize, write_pgm
from .rng import RngStream, mix
from .walker import WalkConfig, generate_corpus, transform_weights

log = logging.getLogger(__name__)

SPEC_VERSION = 1
TRADE_SPLIT = (9 / 11, 1 / 11, 1 / 11)

# stream ids for per-sample sub-streams
_GEN, _WALK, _SGNS = 1, 2, 3


class ExperimentError(RuntimeError):
    pass


# -- specs --------------------------------------------------------------------

@dataclass(frozen=True)
class ClassDef:
    """One class of networks: a generator name plus its parameters."""

    model: str
    params: tuple[tuple[str, float], ...]

    @classmethod
    def ba(cls, n, m):
        return cls("ba", (("n", int(n)), ("m", int(m))))

    @classmethod
    def ws(cls, n, k, p):
        return cls("ws", (("n", int(n)), ("k", int(k)), ("p", float(p))))

    @property
    def kwargs(self) -> dict:
        return dict(self.params)

    def generate(self, rng: RngStream) -> Graph:
        if self.model == "ba":
            return generate_ba(BaParams(**self.kwargs), rng)
        if self.model == "ws":
            return generate_ws(WsParams(**self.kwargs), rng)
        raise ExperimentError(f"unknown generator {self.model!r}")

    def to_text(self) -> str:
        return " ".join([self.model] + [f"{k}={v}" for k, v in self.params])

    @classmethod
    def from_text(cls, text: str) -> "ClassDef":
        model, *kv = text.split()
        conv = {"n": int, "m": int, "k": int, "p": float}
        params = []
        for item in kv:
            k, v = item.split("=")
            params.append((k, conv.get(k, float)(v)))
        return cls(model, tuple(params))


@dataclass(frozen=True)
class PipelineConfig:
    walk: WalkConfig = WalkConfig()
    sgns: SgnsConfig = SgnsConfig()
    grid: int = 48
    scale: str = "max"
    weight_transform: str = "raw"


@dataclass(frozen=True)
class ExperimentSpec:
    classes: tuple[ClassDef, ...]
    counts: tuple[int, ...]
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    pipeline: PipelineConfig = PipelineConfig()
    cnn: cnn.CnnConfig = cnn.CnnConfig()
    seed: int = 0

    def __post_init__(self):
        if len(self.classes) != len(self.counts) or not self.classes:
            raise ValueError("need one count per class")
        if any(c < 1 for c in self.counts):
            raise ValueError("every class needs at least one network")
        if len(self.split) != 3 or abs(sum(self.split) - 1.0) > 1e-9 or min(self.split) < 0:
            raise ValueError(f"split fractions must be 3 non-negative numbers summing to 1, got {self.split}")
        if self.cnn.classes != len(self.classes):
            object.__setattr__(self, "cnn", replace(self.cnn, classes=len(self.classes)))
        if self.cnn.input_size != self.pipeline.grid:
            object.__setattr__(self, "cnn", replace(self.cnn, input_size=self.pipeline.grid))

    def with_seed(self, seed: int) -> "ExperimentSpec":
        return replace(self, seed=int(seed), cnn=replace(self.cnn, seed=int(seed)))

    # key = value text format
    def to_text(self) -> str:
        lines = [f"netclass-spec {SPEC_VERSION}", f"seed = {self.seed}",
                 "split = " + ",".join(repr(float(s)) for s in self.split)]
        for i, (c, n) in enumerate(zip(self.classes, self.counts)):
            lines.append(f"class.{i} = {c.to_text()}")
            lines.append(f"count.{i} = {n}")
        p = self.pipeline
        for f in fields(WalkConfig):
            lines.append(f"walk.{f.name} = {getattr(p.walk, f.name)}")
        for f in fields(SgnsConfig):
            lines.append(f"sgns.{f.name} = {getattr(p.sgns, f.name)!r}")
        lines += [f"grid = {p.grid}", f"scale = {p.scale}", f"weight_transform = {p.weight_transform}"]
        for f in fields(cnn.CnnConfig):
            if f.name in ("classes", "input_size", "seed"):
                continue
            lines.append(f"cnn.{f.name} = {getattr(self.cnn, f.name)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, base: "ExperimentSpec | None" = None) -> "ExperimentSpec":
        """Parse spec text; keys not present keep their value from ``base`` (desk profile by default)."""
        base = base or desk_profile()
        kv = {}
        lines = [l.split("#", 1)[0].strip() for l in text.splitlines()]
        lines = [l for l in lines if l]
        if not lines or not lines[0].startswith("netclass-spec"):
            raise ValueError("spec must start with 'netclass-spec <version>'")
        version = int(lines[0].split()[1])
        if version != SPEC_VERSION:
            raise ValueError(f"unsupported spec version {version}")
        for line in lines[1:]:
            if "=" not in line:
                raise ValueError(f"bad spec line {line!r}")
            k, v = (s.strip() for s in line.split("=", 1))
            kv[k] = v
        return base.override(kv)

    def override(self, kv: dict[str, str]) -> "ExperimentSpec":
        """Apply flat ``key -> text value`` overrides; unknown keys raise."""
        kv = dict(kv)
        seed = int(kv.pop("seed", self.seed))
        split = tuple(float(s) for s in kv.pop("split").split(",")) if "split" in kv else self.split
        classes, counts = list(self.classes), list(self.counts)
        idx = sorted({int(k.split(".")[1]) for k in kv if k.startswith(("class.", "count."))})
        if idx:
            if idx != list(range(len(idx))):
                raise ValueError("class indices must be 0..K-1")
            classes = classes[:len(idx)] + [None] * max(0, len(idx) - len(classes))
            counts = counts[:len(idx)] + [counts[-1]] * max(0, len(idx) - len(counts))
            for i in idx:
                if f"class.{i}" in kv:
                    classes[i] = ClassDef.from_text(kv.pop(f"class.{i}"))
                if f"count.{i}" in kv:
                    counts[i] = int(kv.pop(f"count.{i}"))
            if any(c is None for c in classes):
                raise ValueError("every class index needs a class.<i> entry")
        walk = _override_dc(self.pipeline.walk, kv, "walk.")
        sgns = _override_dc(self.pipeline.sgns, kv, "sgns.")
        net = _override_dc(self.cnn, kv, "cnn.")
        grid = int(kv.pop("grid", self.pipeline.grid))
        scale = kv.pop("scale", self.pipeline.scale)
        wt = kv.pop("weight_transform", self.pipeline.weight_transform)
        if kv:
            raise ValueError(f"unknown spec key(s): {', '.join(sorted(kv))}")
        pipe = PipelineConfig(walk, sgns, grid, scale, wt)
        net = replace(net, seed=seed, classes=len(classes), input_size=grid)
        return ExperimentSpec(tuple(classes), tuple(counts), split, pipe, net, seed)


def _override_dc(obj, kv: dict, prefix: str):
    changes = {}
    for f in fields(obj):
        key = prefix + f.name
        if key in kv:
            raw = kv.pop(key)
            cur = getattr(obj, f.name)
            changes[f.name] = type(cur)(raw) if not isinstance(cur, bool) else raw in ("1", "true", "True")
    return replace(obj, **changes) if changes else obj


def desk_profile(seed: int = 0, n_per_class: int = 200, n_nodes: int = 200) -> ExperimentSpec:
    """Minutes-scale BA-vs-WS setup."""
    return ExperimentSpec(
        classes=(ClassDef.ba(n_nodes, 4), ClassDef.ws(n_nodes, 8, 0.1)),
        counts=(n_per_class, n_per_class),
        split=(0.8, 0.1, 0.1),
        pipeline=PipelineConfig(WalkConfig(2000, 10), SgnsConfig(dim=16)),
        cnn=cnn.CnnConfig(seed=seed),
        seed=seed,
    )


def paper_profile(seed: int = 0) -> ExperimentSpec:
    """Full-size BA-vs-WS setup: 5600 networks per class of 1000 nodes, 8000/2000/1200 split."""
    return ExperimentSpec(
        classes=(ClassDef.ba(1000, 4), ClassDef.ws(1000, 8, 0.1)),
        counts=(5600, 5600),
        split=(8000 / 11200, 2000 / 11200, 1200 / 11200),
        pipeline=PipelineConfig(WalkConfig(10000, 10), SgnsConfig(dim=20)),
        cnn=cnn.CnnConfig(seed=seed),
        seed=seed,
    )


PROFILES = {"desk": desk_profile, "paper": paper_profile}


# -- samples ------------------------------------------------------------------

@dataclass(eq=False)
class DatasetSample:
    image: np.ndarray
    label: int
    provenance: dict
    graph: Graph | None = None
    points: Points2D | None = None
    raster: GrayImage | None = None

    @property
    def key(self) -> tuple:
        p = self.provenance
        return (p.get("source"), p.get("params"), p.get("seed"), p.get("stream"))


def embed_graph(g: Graph, pipe: PipelineConfig, rng: RngStream):
    """Run walks, SGNS, PCA and rasterization for one graph."""
    g = transform_weights(g, pipe.weight_transform)
    corpus = generate_corpus(g, pipe.walk, rng.child(_WALK))
    emb = train_sgns(corpus, pipe.sgns, rng.child(_SGNS))
    pts = pca_project(emb, 2)
    img = rasterize(pts, pipe.grid, pipe.scale)
    return pts, img


def sample_stream(seed: int, class_index: int, sample_index: int) -> RngStream:
    return RngStream(seed, mix(class_index, sample_index))


def synth_sample(cdef: ClassDef, label: int, pipe: PipelineConfig, seed: int, class_index: int,
                 sample_index: int, keep: bool = False) -> DatasetSample:
    rng = sample_stream(seed, class_index, sample_index)
    g = cdef.generate(rng.child(_GEN))
    pts, img = embed_graph(g, pipe, rng)
    prov = {"source": cdef.model, "params": cdef.to_text(), "seed": seed,
            "stream": (class_index, sample_index)}
    if keep:
        return DatasetSample(img.pixels, label, prov, g, pts, img)
    return DatasetSample(img.pixels, label, prov)


def _synth_job(args):
    try:
        return synth_sample(*args)
    except Exception as exc:  # noqa: BLE001 - any stage failure drops this sample only
        cdef, label, _, seed, ci, si, _ = args
        log.warning("sample failed: class %d (%s) index %d seed %d: %s", ci, cdef.to_text(), si, seed, exc)
        return None


def _run_jobs(fn, jobs, threads: int):
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(threads) as ex:
            return list(ex.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * threads))))
    return [fn(j) for j in jobs]


def synth_samples(classes: Sequence[ClassDef], counts: Sequence[int], pipe: PipelineConfig, seed: int,
                  threads: int = 1, keep: bool = False, max_fail: float = 0.01,
                  labels: Sequence[int] | None = None) -> list[DatasetSample]:
    labels = list(range(len(classes))) if labels is None else list(labels)
    jobs = [(c, labels[ci], pipe, seed, ci, si, keep)
            for ci, (c, n) in enumerate(zip(classes, counts)) for si in range(n)]
    out = _run_jobs(_synth_job, jobs, threads)
    failed = sum(s is None for s in out)
    if failed > max_fail * len(jobs):
        raise ExperimentError(f"{failed}/{len(jobs)} samples failed (limit {max_fail:.0%})")
    return [s for s in out if s is not None]


def split_counts(n: int, split: Sequence[float]) -> tuple[int, int, int]:
    n_train = int(round(n * split[0]))
    n_val = min(int(round(n * split[1])), n - n_train)
    return n_train, n_val, n - n_train - n_val


def stratified_split(samples: list[DatasetSample], split, rng: RngStream):
    """Shuffle the pool, then split every class by ``split`` so each part keeps the pool balance."""
    order = rng.permutation(len(samples))
    pool = [samples[i] for i in order]
    parts = ([], [], [])
    for label in sorted({s.label for s in pool}):
        members = [s for s in pool if s.label == label]
        a, b, _ = split_counts(len(members), split)
        parts[0].extend(members[:a])
        parts[1].extend(members[a:a + b])
        parts[2].extend(members[a + b:])
    return tuple([p[i] for i in rng.permutation(len(p))] for p in parts)


def build_synthetic_dataset(spec: ExperimentSpec, threads: int = 1, keep: bool = False):
    """(train, val, test) sample lists for a generator-defined spec."""
    samples = synth_samples(spec.classes, spec.counts, spec.pipeline, spec.seed, threads, keep)
    return stratified_split(samples, spec.split, RngStream(spec.seed, 0x5B117))


def as_arrays(samples: Sequence[DatasetSample]):
    if not samples:
        return np.zeros((0, 0, 0)), np.zeros(0, dtype=np.int64)
    return np.stack([s.image for s in samples]), np.array([s.label for s in samples], dtype=np.int64)


# -- experiments --------------------------------------------------------------

@dataclass
class RunResult:
    model: cnn.CnnModel
    history: list
    test_error: float
    confusion: np.ndarray
    n_test: int
    splits: tuple = field(default=(), repr=False)


def train_and_test(spec: ExperimentSpec, splits, threads: int = 1, progress=None) -> RunResult:
    train_set, val_set, test_set = (as_arrays(s) for s in splits)
    if len(test_set[1]) == 0:
        raise ExperimentError("empty test split")
    model = cnn.init_model(spec.cnn)
    model, history = cnn.train(model, train_set, val_set, spec.cnn, threads=threads, progress=progress)
    err, conf = cnn.evaluate(model, *test_set)
    return RunResult(model, history, err, conf, len(test_set[1]), splits)


def run_classification(spec: ExperimentSpec, threads: int = 1, keep: bool = False, progress=None) -> RunResult:
    splits = build_synthetic_dataset(spec, threads, keep)
    return train_and_test(spec, splits, threads, progress)


def ws_pair_spec(base: ExperimentSpec, p_a: float, p_b: float) -> ExperimentSpec:
    ref = next((c for c in base.classes if c.model == "ws"), ClassDef.ws(200, 8, 0.1)).kwargs
    count = base.counts[0]
    seed = mix(base.seed, int(round(p_a * 1e6)), int(round(p_b * 1e6)))
    return replace(base, classes=(ClassDef.ws(ref["n"], ref["k"], p_a), ClassDef.ws(ref["n"], ref["k"], p_b)),
                   counts=(count, count)).with_seed(seed & 0x7FFFFFFF)


def run_ws_grid(base: ExperimentSpec, p_values: Sequence[float], controls: Sequence[float] = (),
                threads: int = 1, on_cell: Callable | None = None):
    """Test error of a fresh classifier for every pair ``p_i < p_j`` (plus optional control cells).

    Returns ``(matrix, cells)``: a symmetric matrix with NaN where nothing ran,
    and the list of ``(p_i, p_j, error, n_test)`` rows.
    """
    p_values = list(p_values)
    if len(set(p_values)) < 2:
        raise ValueError("need at least two distinct p values")
    k = len(p_values)
    mat = np.full((k, k), np.nan)
    pairs = [(i, j) for i in range(k) for j in range(i + 1, k)]
    pairs += [(i, i) for i in range(k) if p_values[i] in controls]
    cells = []
    for i, j in pairs:
        spec = ws_pair_spec(base, p_values[i], p_values[j])
        try:
            res = run_classification(spec, threads)
        except Exception as exc:  # noqa: BLE001 - keep the other cells
            log.error("grid cell (%s, %s) failed: %s", p_values[i], p_values[j], exc)
            continue
        mat[i, j] = mat[j, i] = res.test_error
        row = (p_values[i], p_values[j], res.test_error, res.n_test)
        cells.append(row)
        if on_cell:
            on_cell(row)
    return mat, cells


def scaled_classes(spec: ExperimentSpec, axis: str, value) -> tuple[ClassDef, ...]:
    """The experiment's BA/WS classes resized along ``axis`` ('n' nodes or 'm' edges per node)."""
    out = []
    for c in spec.classes:
        kw = c.kwargs
        if axis == "n":
            kw["n"] = int(value)
        elif axis == "m":
            if c.model == "ba":
                kw["m"] = int(value)
            else:
                kw["k"] = 2 * int(value)
        else:
            raise ValueError(f"unknown axis {axis!r}")
        out.append(ClassDef(c.model, tuple(kw.items())))
    return tuple(out)


def run_size_robustness(model: cnn.CnnModel, axis: str, values: Sequence, spec: ExperimentSpec,
                        n_test: int = 100, threads: int = 1):
    """Error of a fixed model on fresh balanced test sets resized along ``axis``.

    Returns rows ``(axis value, error rate, n_test)``.
    """
    rows = []
    for v in values:
        classes = scaled_classes(spec, axis, v)
        seed = mix(spec.seed, 0x70B, int(v)) & 0x7FFFFFFF
        samples = synth_samples(classes, [n_test // len(classes)] * len(classes), spec.pipeline, seed, threads)
        X, y = as_arrays(samples)
        err, _ = cnn.evaluate(model, X, y)
        rows.append((v, err, len(y)))
    return rows


# -- labelled edge-list manifests ---------------------------------------------

def read_manifest(path) -> list[tuple[Path, int, bool]]:
    """Lines of ``path,label,directed(0|1)``; relative paths resolve against the manifest."""
    path = Path(path)
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 3 or parts[2] not in ("0", "1"):
                raise ExperimentError(f"{path}:{lineno}: expected 'path,label,directed(0|1)'")
            p = Path(parts[0])
            out.append((p if p.is_absolute() else path.parent / p, int(parts[1]), parts[2] == "1"))
    return out


def _ingest_job(args):
    i, path, label, directed, pipe, seed, keep = args
    try:
        g = read_edge_list(path, directed)
        pts, img = embed_graph(g, pipe, RngStream(seed, mix(0x7AADE, i)))
    except Exception as exc:  # noqa: BLE001
        log.warning("skipping %s: %s", path, exc)
        return None
    prov = {"source": str(path), "params": None, "seed": seed, "stream": i}
    if keep:
        return DatasetSample(img.pixels, label, prov, g, pts, img)
    return DatasetSample(img.pixels, label, prov)


def ingest_labeled_networks(manifest_path, pipe: PipelineConfig | None = None, seed: int = 0,
                            split=TRADE_SPLIT, threads: int = 1, keep: bool = False, max_skip: float = 0.05):
    """Embed every manifest network and split (9:1:1 by default) after a seeded shuffle."""
    pipe = pipe or PipelineConfig()
    entries = read_manifest(manifest_path)
    if not entries:
        raise ExperimentError("empty manifest")
    jobs = [(i, p, lab, d, pipe, seed, keep) for i, (p, lab, d) in enumerate(entries)]
    out = _run_jobs(_ingest_job, jobs, threads)
    skipped = sum(s is None for s in out)
    if skipped > max_skip * len(entries):
        raise ExperimentError(f"{skipped}/{len(entries)} networks unreadable (limit {max_skip:.0%})")
    samples = [s for s in out if s is not None]
    labels, counts = np.unique([s.label for s in samples], return_counts=True)
    log.info("label balance: %s", dict(zip(labels.tolist(), counts.tolist())))
    order = RngStream(seed, 0x5B117).permutation(len(samples))
    samples = [samples[i] for i in order]
    a, b, _ = split_counts(len(samples), split)
    return samples[:a], samples[a:a + b], samples[a + b:]


# -- activation mapping -------------------------------------------------------

def receptive_patch(cell: tuple[int, int], kernel: int, pool: int) -> tuple[slice, slice]:
    """Input-pixel rows/cols covered by one pooled layer-1 cell."""
    i, j = cell
    return slice(i * pool, i * pool + pool + kernel - 1), slice(j * pool, j * pool + pool + kernel - 1)


def highlighted_cells(fmap: np.ndarray, quantile: float) -> np.ndarray:
    """Cells at or above the quantile; ties at the threshold are included."""
    thr = np.quantile(fmap, quantile)
    return np.argwhere(fmap >= thr)


def active_from_map(fmap: np.ndarray, point_bins: np.ndarray, grid: int, kernel: int, pool: int,
                    quantile: float = 0.9):
    """Nodes whose pixel lies inside the receptive patch of any highlighted cell."""
    mask = np.zeros((grid, grid), dtype=bool)
    cells = highlighted_cells(fmap, quantile)
    for cell in cells:
        rs, cs = receptive_patch(tuple(cell), kernel, pool)
        mask[rs, cs] = True
    active = np.flatnonzero(mask[point_bins[:, 0], point_bins[:, 1]])
    return set(active.tolist()), cells, mask


def map_activations(model: cnn.CnnModel, sample: DatasetSample, filter_index: int, quantile: float = 0.9,
                    layer: int = 1) -> dict:
    """Nodes lying under the highlighted regions of one first-layer (pooled) feature map."""
    if layer != 1:
        raise ValueError("only layer 1 is supported")
    if sample.graph is None or sample.raster is None:
        raise ExperimentError("sample does not retain its graph and point coordinates")
    if not 0 <= filter_index < model.cfg.conv1_filters:
        raise IndexError(f"filter index {filter_index} outside [0, {model.cfg.conv1_filters})")
    _, cache = cnn.forward(model, sample.image)
    fmap = cache["p1"][filter_index]
    cfg = model.cfg
    active, cells, mask = active_from_map(fmap, sample.raster.point_bins, cfg.input_size,
                                          cfg.kernel, cfg.pool, quantile)
    g = sample.graph
    edges = [(u, v) for u, v in zip(g.src.tolist(), g.dst.tolist()) if u in active or v in active]
    return {"filter": filter_index, "quantile": quantile, "feature_map": fmap, "cells": cells,
            "pixel_mask": mask, "active_nodes": active, "edges": edges}


def write_overlay(result: dict, sample: DatasetSample, out_prefix, scale: int = 6) -> None:
    """PGM overlay (dim = any node, bright = active node) plus a CSV of active-node edges."""
    bins = sample.raster.point_bins
    grid = sample.raster.grid
    canvas = np.zeros((grid, grid))
    canvas[bins[:, 0], bins[:, 1]] = 0.3
    act = np.array(sorted(result["active_nodes"]), dtype=np.int64)
    if act.size:
        canvas[bins[act, 0], bins[act, 1]] = 1.0
    big = np.kron(canvas, np.ones((scale, scale)))
    write_pgm(big[::-1], f"{out_prefix}.pgm")
    with open(f"{out_prefix}_edges.csv", "w", encoding="utf-8") as fh:
        fh.write("src,dst,src_active,dst_active\n")
        for u, v in result["edges"]:
            fh.write(f"{u},{v},{int(u in result['active_nodes'])},{int(v in result['active_nodes'])}\n")


def jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


# -- output helpers -----------------------------------------------------------

def _cell(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def write_rows(path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(x) for x in r])


def default_threads() -> int:
    return max(1, min(4, os.cpu_count() or 1))
