"""Command-line entry point: ``netclass <command> [options]``.

Settings resolve as built-in/profile defaults < ``--config`` file < flags.
Exit status is 0 on success, 1 on usage errors and 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import logging
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, cnn
from .embedder import pca_project, read_matrix, train_sgns, write_matrix
from .experiments import (PROFILES, TRADE_SPLIT, DatasetSample, ExperimentSpec, PipelineConfig,
                          as_arrays, build_synthetic_dataset, default_threads, embed_graph,
                          ingest_labeled_networks, jaccard, map_activations, run_size_robustness, run_ws_grid,
                          synth_samples, train_and_test, write_overlay, write_rows)
from .generators import BaParams, WsParams, generate_ba, generate_ws
from .graph import read_edge_list, write_edge_list
from .rasterizer import rasterize, write_pgm
from .rng import RngStream, mix
from .walker import generate_corpus, transform_weights

log = logging.getLogger("netclass")

DEFAULT_GRID = ",".join(f"{i / 10:.1f}" for i in range(11))
TRADE_CNN = {"conv1_filters": 15, "conv2_filters": 30, "fc_units": 300}


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- config handling ------------------------------------------------------------

def read_config(path) -> dict[str, str]:
    """``key = value`` lines with ``#`` comments; a leading ``netclass-spec`` header is skipped."""
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    out = {}
    for lineno, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line or (lineno == 1 and line.startswith("netclass-spec")):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def parse_sets(items) -> dict[str, str]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def resolve_spec(args, base: ExperimentSpec | None = None) -> ExperimentSpec:
    """Profile (or ``base``) < config file < --set < --seed."""
    spec = base or PROFILES[args.profile](seed=0)
    kv = read_config(args.config) if args.config else {}
    kv.update(parse_sets(args.set))
    if args.seed is not None:
        kv["seed"] = str(args.seed)
    try:
        return spec.override(kv)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def _bool(text: str) -> bool:
    if text.lower() not in ("0", "1", "true", "false"):
        raise ValueError(f"expected a boolean, got {text!r}")
    return text.lower() in ("1", "true")


FLAG_TYPES = {"model": str, "n": int, "m": int, "k": int, "p": float, "seed": int, "walks": int, "length": int,
              "dim": int, "window": int, "negatives": int, "epochs": int, "weight_transform": str,
              "directed": _bool, "grid": int, "scale": str}


def resolve_flat(args, defaults: dict, keys) -> dict:
    """For stage commands: defaults < config file < explicit flags (flags default to None)."""
    out = dict(defaults)
    if getattr(args, "config", None):
        for k, v in read_config(args.config).items():
            k = k.replace("-", "_")
            if k not in keys:
                raise UsageError(f"unknown config key {k!r}")
            try:
                out[k] = FLAG_TYPES[k](v)
            except ValueError as exc:
                raise UsageError(f"config key {k}: {exc}") from None
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def pipeline_from(profile: str, flat: dict) -> PipelineConfig:
    pipe = PROFILES[profile]().pipeline
    walk = replace(pipe.walk, **{k: flat[f] for k, f in (("num_walks", "walks"), ("walk_length", "length"))
                                 if flat.get(f) is not None})
    sgns = replace(pipe.sgns, **{k: flat[k] for k in ("dim", "window", "negatives", "epochs")
                                 if flat.get(k) is not None})
    return replace(pipe, walk=walk, sgns=sgns,
                   weight_transform=flat.get("weight_transform") or pipe.weight_transform)


def show(lines: str, seed) -> None:
    print(lines.rstrip("\n"))
    print(f"master seed = {seed}")
    sys.stdout.flush()


def write_meta(path, command: str, argv, config_text: str, seed) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"netclass {__version__}\n")
        fh.write(f"command = {command}\n")
        fh.write("argv = " + " ".join(argv) + "\n")
        fh.write(f"seed = {seed}\n")
        fh.write(f"python = {platform.python_version()}\nnumpy = {np.__version__}\n")
        fh.write("[config]\n" + config_text.rstrip("\n") + "\n")


def flat_text(d: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in d.items())


# -- stage commands -----------------------------------------------------------

def cmd_generate(args, argv):
    flat = resolve_flat(args, {"model": None, "n": 200, "m": 4, "k": 8, "p": 0.1, "seed": 0},
                        ("model", "n", "m", "k", "p", "seed"))
    if flat["model"] not in ("ba", "ws"):
        raise UsageError("--model must be 'ba' or 'ws'")
    show(flat_text(flat), flat["seed"])
    rng = RngStream(int(flat["seed"]), 1)
    try:
        if flat["model"] == "ba":
            g = generate_ba(BaParams(int(flat["n"]), int(flat["m"])), rng)
            header = f"ba n={flat['n']} m={flat['m']} seed={flat['seed']}"
        else:
            g = generate_ws(WsParams(int(flat["n"]), int(flat["k"]), float(flat["p"])), rng)
            header = f"ws n={flat['n']} k={flat['k']} p={flat['p']} seed={flat['seed']}"
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_edge_list(g, args.out, header=header)
    write_meta(f"{args.out}.run.meta", "generate", argv, flat_text(flat), flat["seed"])
    print(f"wrote {g.edge_count} edges on {g.node_count} nodes to {args.out}")


EMBED_KEYS = ("walks", "length", "dim", "window", "negatives", "epochs", "weight_transform", "seed", "directed")


def embed_settings(args):
    flat = resolve_flat(args, {"seed": 0, "directed": False}, EMBED_KEYS)
    pipe = pipeline_from(args.profile, flat)
    return flat, pipe


def cmd_embed(args, argv):
    flat, pipe = embed_settings(args)
    text = f"profile = {args.profile}\ndirected = {flat['directed']}\n" + "\n".join(
        l for l in ExperimentSpec(PROFILES[args.profile]().classes, (1, 1), pipeline=pipe).to_text().splitlines()
        if l.startswith(("walk.", "sgns.", "weight_transform")))
    show(text, flat["seed"])
    g = transform_weights(read_edge_list(args.edges, bool(flat["directed"])), pipe.weight_transform)
    rng = RngStream(int(flat["seed"]), 2)
    corpus = generate_corpus(g, pipe.walk, rng.child(2))
    emb = train_sgns(corpus, pipe.sgns, rng.child(3))
    pts = pca_project(emb, 2)
    write_matrix(pts.coords, args.out)
    if args.vectors_out:
        write_matrix(emb.vectors.astype(np.float64), args.vectors_out)
    write_meta(f"{args.out}.run.meta", "embed", argv, text, flat["seed"])
    print(f"wrote {pts.coords.shape[0]} points to {args.out}")


def cmd_rasterize(args, argv):
    flat = resolve_flat(args, {"grid": 48, "scale": "max"}, ("grid", "scale"))
    show(flat_text(flat), "n/a")
    pts = read_matrix(args.points)
    img = rasterize(pts, int(flat["grid"]), flat["scale"])
    write_pgm(img, args.out, binary=not args.ascii)
    write_meta(f"{args.out}.run.meta", "rasterize", argv, flat_text(flat), "n/a")
    print(f"wrote {img.grid}x{img.grid} image to {args.out}")


# -- training / experiments ---------------------------------------------------

def prepare_out(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def progress_printer(row):
    print(f"epoch {row.epoch:3d}  train_loss {row.train_loss:.5f}  val_error {row.val_error:.4f}", flush=True)


def save_run(out: Path, spec_text: str, res, seed, extra_rows=()):
    cnn.write_history(res.history, out / "history.csv")
    cnn.save_checkpoint(res.model, out / "model.ckpt")
    conf = res.confusion
    header = ["seed", "test_error", "n_test"] + [f"c{i}{j}" for i in range(conf.shape[0])
                                                 for j in range(conf.shape[1])]
    write_rows(out / "results.csv", header, [[seed, res.test_error, res.n_test] + conf.ravel().tolist()])
    (out / "spec.cfg").write_text(spec_text, encoding="utf-8")


def run_spec(spec: ExperimentSpec, args, argv, command: str, manifest=None):
    text = spec.to_text()
    show(text, spec.seed)
    out = prepare_out(args.out)
    write_meta(out / "run.meta", command, argv, text, spec.seed)
    t0 = time.time()
    if manifest:
        splits = ingest_labeled_networks(manifest, spec.pipeline, spec.seed, spec.split, args.threads)
    else:
        splits = build_synthetic_dataset(spec, args.threads)
    print(f"dataset: {' / '.join(str(len(s)) for s in splits)} (train/val/test) in {time.time() - t0:.1f}s",
          flush=True)
    res = train_and_test(spec, splits, args.threads, progress_printer)
    save_run(out, text, res, spec.seed)
    print(f"test error {res.test_error:.4f} on {res.n_test} samples")
    print("confusion (rows = true):\n" + "\n".join(" ".join(map(str, r)) for r in res.confusion))
    return res


def cmd_train(args, argv):
    base = PROFILES[args.profile](seed=0)
    if args.manifest:
        base = replace(base, split=TRADE_SPLIT)
    run_spec(resolve_spec(args, base), args, argv, "train", args.manifest)


def cmd_evaluate(args, argv):
    model = cnn.load_checkpoint(args.model)
    spec = resolve_spec(args)
    text = spec.to_text()
    show(text, spec.seed)
    out = prepare_out(args.out)
    write_meta(out / "run.meta", "evaluate", argv, text, spec.seed)
    if args.manifest:
        parts = ingest_labeled_networks(args.manifest, spec.pipeline, spec.seed, (0.0, 0.0, 1.0), args.threads)
        samples = parts[2]
    else:
        k = len(spec.classes)
        samples = synth_samples(spec.classes, [args.n_test // k] * k, spec.pipeline,
                                mix(spec.seed, 0xE7A1) & 0x7FFFFFFF, args.threads)
    X, y = as_arrays(samples)
    err, conf = cnn.evaluate(model, X, y)
    header = ["test_error", "n_test"] + [f"c{i}{j}" for i in range(conf.shape[0]) for j in range(conf.shape[1])]
    write_rows(out / "results.csv", header, [[err, len(y)] + conf.ravel().tolist()])
    print(f"error {err:.4f} on {len(y)} samples")


def cmd_ba_ws(args, argv):
    base = PROFILES[args.profile](seed=0)
    spec = resolve_spec(args, base)
    run_spec(spec, args, argv, "experiment ba-ws")


def cmd_ws_grid(args, argv):
    spec = resolve_spec(args)
    p_values = floats(args.p_values)
    controls = floats(args.controls) if args.controls else []
    text = spec.to_text() + f"p_values = {args.p_values}\ncontrols = {args.controls}\n"
    show(text, spec.seed)
    out = prepare_out(args.out)
    write_meta(out / "run.meta", "experiment ws-grid", argv, text, spec.seed)

    def on_cell(row):
        print(f"p=({row[0]}, {row[1]})  test error {row[2]:.4f}  n_test {row[3]}", flush=True)

    mat, cells = run_ws_grid(spec, p_values, controls, args.threads, on_cell)
    write_rows(out / "results.csv", ["p_a", "p_b", "test_error", "n_test"], cells)
    write_rows(out / "matrix.csv", ["p"] + [repr(p) for p in p_values],
               [[p] + ["" if np.isnan(v) else v for v in row] for p, row in zip(p_values, mat)])
    if len(cells) < len(p_values) * (len(p_values) - 1) // 2 + len([c for c in controls if c in p_values]):
        raise RuntimeError("some grid cells failed; completed cells were written")


def cmd_robustness(args, argv):
    spec = resolve_spec(args)
    values = [int(v) for v in floats(args.values)]
    text = spec.to_text() + f"axis = {args.axis}\nvalues = {args.values}\nn_test = {args.n_test}\n"
    show(text, spec.seed)
    out = prepare_out(args.out)
    write_meta(out / "run.meta", "experiment robustness", argv, text, spec.seed)
    if args.model:
        model = cnn.load_checkpoint(args.model)
    else:
        print("no --model given; training one on the reference spec", flush=True)
        res = train_and_test(spec, build_synthetic_dataset(spec, args.threads), args.threads, progress_printer)
        save_run(out, spec.to_text(), res, spec.seed)
        model = res.model
    rows = run_size_robustness(model, args.axis, values, spec, args.n_test, args.threads)
    for v, err, n in rows:
        print(f"{args.axis}={v}  error {err:.4f}  n_test {n}")
    write_rows(out / "robustness.csv", [args.axis, "error", "n_test"], rows)


def cmd_trade(args, argv):
    base = PROFILES[args.profile](seed=0)
    base = replace(base, split=TRADE_SPLIT, cnn=replace(base.cnn, **TRADE_CNN))
    spec = resolve_spec(args, base)
    run_spec(spec, args, argv, "experiment trade", args.manifest)


def cmd_visualize(args, argv):
    model = cnn.load_checkpoint(args.model)
    flat, pipe = embed_settings(args)
    pipe = replace(pipe, grid=model.cfg.input_size)
    text = flat_text({k: flat.get(k) for k in EMBED_KEYS}) + f"quantile = {args.quantile}\n"
    show(text, flat["seed"])
    g = read_edge_list(args.edges, bool(flat["directed"]))
    pts, img = embed_graph(g, pipe, RngStream(int(flat["seed"]), 2))
    sample = DatasetSample(img.pixels, -1, {"source": str(args.edges)}, g, pts, img)
    filters = range(model.cfg.conv1_filters) if args.filter is None else [args.filter]
    out = prepare_out(args.out)
    write_meta(out / "run.meta", "visualize-activations", argv, text, flat["seed"])
    sets = {}
    rows = []
    for f in filters:
        res = map_activations(model, sample, f, args.quantile)
        write_overlay(res, sample, out / f"filter{f}")
        sets[f] = res["active_nodes"]
        rows.extend((f, n) for n in sorted(res["active_nodes"]))
        print(f"filter {f}: {len(res['active_nodes'])} active nodes, {len(res['edges'])} edges")
    write_rows(out / "active_nodes.csv", ["filter", "node"], rows)
    fs = sorted(sets)
    pairs = [(a, b, jaccard(sets[a], sets[b])) for i, a in enumerate(fs) for b in fs[i + 1:]]
    write_rows(out / "jaccard.csv", ["filter_a", "filter_b", "jaccard"], pairs)


# -- parser -------------------------------------------------------------------

def add_run_flags(p, profile=True):
    p.add_argument("--config", help="key = value settings file (spec keys, e.g. walk.num_walks = 2000)")
    if profile:
        p.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting (repeatable)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--threads", type=int, default=default_threads())
    p.add_argument("--out", required=True, help="output directory")


def add_embed_flags(p):
    p.add_argument("--edges", required=True, help="edge-list file (src,dst[,weight])")
    p.add_argument("--directed", action="store_const", const=True, default=None)
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    p.add_argument("--config", help="key = value file using these option names")
    p.add_argument("--walks", type=int)
    p.add_argument("--length", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--negatives", type=int)
    p.add_argument("--epochs", type=int, help="SGNS epochs")
    p.add_argument("--weight-transform", choices=["raw", "log1p"])
    p.add_argument("--seed", type=int)


def build_parser() -> Parser:
    ap = Parser(prog="netclass", description="Whole-network classification via embedding images and a CNN.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", metavar="command", parser_class=Parser)
    sub.required = True

    p = sub.add_parser("generate", help="write a BA or WS graph as an edge list")
    p.add_argument("--model", choices=["ba", "ws"])
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int, help="BA edges per new node")
    p.add_argument("--k", type=int, help="WS ring degree (even)")
    p.add_argument("--p", type=float, help="WS rewiring probability")
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="key = value file using these option names")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("embed", help="random walks + SGNS + PCA for one edge list -> 2D points")
    add_embed_flags(p)
    p.add_argument("--out", required=True, help="points file ('n 2' header, one row per node)")
    p.add_argument("--vectors-out", help="also dump the full embedding matrix")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("rasterize", help="2D points -> PGM image")
    p.add_argument("--points", required=True)
    p.add_argument("--grid", type=int)
    p.add_argument("--scale", choices=["max", "log"])
    p.add_argument("--ascii", action="store_true", help="write plain (P2) PGM")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rasterize)

    p = sub.add_parser("train", help="build the experiment spec's dataset (or a manifest) and train a CNN")
    add_run_flags(p)
    p.add_argument("--manifest", help="labelled edge-list manifest instead of synthetic classes")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on fresh synthetic data or a manifest")
    add_run_flags(p)
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("--manifest")
    p.add_argument("--n-test", type=int, default=100)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="canned experiments")
    esub = p.add_subparsers(dest="experiment", metavar="name", parser_class=Parser)
    esub.required = True
    e = esub.add_parser("ba-ws", help="BA vs WS classification")
    add_run_flags(e)
    e.set_defaults(func=cmd_ba_ws)
    e = esub.add_parser("ws-grid", help="pairwise WS rewiring-probability grid")
    add_run_flags(e)
    e.add_argument("--p-values", default=DEFAULT_GRID)
    e.add_argument("--controls", default="0.1", help="p values that also get an identical-class control cell")
    e.set_defaults(func=cmd_ws_grid)
    e = esub.add_parser("robustness", help="evaluate a fixed model on resized networks")
    add_run_flags(e)
    e.add_argument("--model", help="checkpoint; trained on the reference spec if omitted")
    e.add_argument("--axis", choices=["n", "m"], default="n")
    e.add_argument("--values", default="150,200,250")
    e.add_argument("--n-test", type=int, default=100)
    e.set_defaults(func=cmd_robustness)
    e = esub.add_parser("trade", help="labelled edge-list manifest classification (9:1:1 split)")
    add_run_flags(e)
    e.add_argument("--manifest", required=True)
    e.set_defaults(func=cmd_trade)

    p = sub.add_parser("visualize-activations", help="map first-layer feature maps back onto graph nodes")
    add_embed_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--filter", type=int, help="filter index (default: all)")
    p.add_argument("--quantile", type=float, default=0.9)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_visualize)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        parser.print_usage(sys.stderr)
        print("netclass: error: --threads must be >= 1", file=sys.stderr)
        return 1
    try:
        args.func(args, argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"netclass: error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level runtime failure
        log.debug("failure", exc_info=True)
        print(f"netclass: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
