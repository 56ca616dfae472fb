"""Small convolutional network written directly in numpy.

conv(valid) -> act -> maxpool -> conv(valid) -> act -> maxpool -> dense -> act -> dense

All arithmetic is float64.  Gradients are computed one sample at a time and
summed in sample order, so a batch gradient does not depend on how samples are
spread over worker threads.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .rng import RngStream

log = logging.getLogger(__name__)

PARAM_NAMES = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc1_w", "fc1_b", "fc2_w", "fc2_b")
CHECKPOINT_MAGIC = b"NETCLASS-CNN"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = history or []


@dataclass(frozen=True)
class CnnConfig:
    conv1_filters: int = 3
    conv2_filters: int = 5
    kernel: int = 5
    pool: int = 2
    fc_units: int = 50
    classes: int = 2
    lr: float = 0.01
    batch: int = 100
    epochs: int = 30
    patience: int = 5
    seed: int = 0
    input_size: int = 48
    activation: str = "relu"

    def __post_init__(self):
        for name in ("conv1_filters", "conv2_filters", "kernel", "pool", "fc_units", "classes",
                     "batch", "epochs", "patience", "input_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.kernel % 2 == 0:
            raise ValueError("kernel must be odd")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(ACTIVATIONS)}")
        self.feature_sizes()

    def feature_sizes(self) -> tuple[int, int, int, int]:
        """Side lengths after conv1, pool1, conv2, pool2."""
        c1 = self.input_size - self.kernel + 1
        if c1 < 1 or c1 % self.pool:
            raise ValueError(f"conv1 output {c1} not divisible by pool {self.pool}")
        p1 = c1 // self.pool
        c2 = p1 - self.kernel + 1
        if c2 < 1 or c2 % self.pool:
            raise ValueError(f"conv2 output {c2} not divisible by pool {self.pool}")
        return c1, p1, c2, c2 // self.pool

    @property
    def flatten_size(self) -> int:
        return self.conv2_filters * self.feature_sizes()[3] ** 2

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        k, f1, f2 = self.kernel, self.conv1_filters, self.conv2_filters
        return {
            "conv1_w": (f1, 1, k, k), "conv1_b": (f1,),
            "conv2_w": (f2, f1, k, k), "conv2_b": (f2,),
            "fc1_w": (self.flatten_size, self.fc_units), "fc1_b": (self.fc_units,),
            "fc2_w": (self.fc_units, self.classes), "fc2_b": (self.classes,),
        }


# -- activations -------------------------------------------------------------

def _relu(x):
    return np.maximum(x, 0.0)


def _relu_grad(pre, out):
    return (pre > 0).astype(np.float64)


def _tanh_grad(pre, out):
    return 1.0 - out * out


ACTIVATIONS = {"relu": (_relu, _relu_grad), "tanh": (np.tanh, _tanh_grad)}


# -- model --------------------------------------------------------------------

@dataclass(eq=False)
class CnnModel:
    cfg: CnnConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "CnnModel":
        return CnnModel(self.cfg, {k: v.copy() for k, v in self.params.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in PARAM_NAMES])

    @property
    def n_params(self) -> int:
        return sum(self.params[k].size for k in PARAM_NAMES)


def init_model(cfg: CnnConfig, rng: RngStream | None = None) -> CnnModel:
    """Glorot-uniform weights, zero biases."""
    rng = rng or RngStream(cfg.seed, 0xC44)
    params = {}
    for name, shape in cfg.param_shapes().items():
        if name.endswith("_b"):
            params[name] = np.zeros(shape)
            continue
        if len(shape) == 4:
            rf = shape[2] * shape[3]
            fan_in, fan_out = shape[1] * rf, shape[0] * rf
        else:
            fan_in, fan_out = shape
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        params[name] = rng.generator.uniform(-lim, lim, size=shape)
    return CnnModel(cfg, params)


# -- layer primitives ---------------------------------------------------------

def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Valid, stride-1 cross-correlation.

    ``x``: (..., C, H, W); ``w``: (F, C, k, k).  Every output element is
    accumulated as ``((0 + w*x) + w*x) + ...`` over (c, ky, kx) in
    lexicographic order, then the bias is added.
    """
    F, C, k, _ = w.shape
    H, W = x.shape[-2:]
    Ho, Wo = H - k + 1, W - k + 1
    out = np.zeros(x.shape[:-3] + (F, Ho, Wo))
    for c in range(C):
        for ky in range(k):
            for kx in range(k):
                out += w[:, c, ky, kx, None, None] * x[..., c, None, ky:ky + Ho, kx:kx + Wo]
    out += b[:, None, None]
    return out


def conv2d_backward(x, w, dout, need_dx=True):
    """Gradients of a valid conv for a single sample ``x`` (C, H, W)."""
    F, C, k, _ = w.shape
    win = sliding_window_view(x, (k, k), axis=(1, 2))  # (C, Ho, Wo, k, k)
    dw = np.tensordot(dout, win, axes=([1, 2], [1, 2]))  # (F, C, k, k)
    db = dout.sum(axis=(1, 2))
    if not need_dx:
        return None, dw, db
    Ho, Wo = dout.shape[1:]
    dx = np.zeros_like(x)
    cols = np.tensordot(w, dout, axes=([0], [0]))  # (C, k, k, Ho, Wo)
    for ky in range(k):
        for kx in range(k):
            dx[:, ky:ky + Ho, kx:kx + Wo] += cols[:, ky, kx]
    return dx, dw, db


def maxpool(x: np.ndarray, p: int):
    """Non-overlapping p x p max pooling; returns output and flat argmax within each window."""
    *lead, H, W = x.shape
    win = x.reshape(*lead, H // p, p, W // p, p)
    win = np.moveaxis(win, -3, -2).reshape(*lead, H // p, W // p, p * p)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool_backward(dout: np.ndarray, arg: np.ndarray, p: int) -> np.ndarray:
    """Route each pooled gradient to the cached argmax position only."""
    *lead, Hp, Wp = dout.shape
    dwin = np.zeros((*lead, Hp, Wp, p * p))
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    dwin = dwin.reshape(*lead, Hp, Wp, p, p)
    return np.moveaxis(dwin, -2, -3).reshape(*lead, Hp * p, Wp * p)


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    s = z - z.max(axis=-1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


# -- forward / backward -------------------------------------------------------

def _as_input(model: CnnModel, image) -> np.ndarray:
    x = np.asarray(getattr(image, "pixels", image), dtype=np.float64)
    G = model.cfg.input_size
    if x.shape[-2:] != (G, G):
        raise ValueError(f"expected {G}x{G} input, got {x.shape[-2:]}")
    if x.ndim == 2:
        x = x[None]
    elif x.ndim == 3:  # batch of images
        x = x[:, None]
    return x


def forward(model: CnnModel, image):
    """Logits for one image (G, G) or a batch (B, G, G), plus the layer cache."""
    P, cfg = model.params, model.cfg
    act, _ = ACTIVATIONS[cfg.activation]
    x = _as_input(model, image)
    c = {"x": x}
    c["z1"] = conv2d(x, P["conv1_w"], P["conv1_b"])
    c["a1"] = act(c["z1"])
    c["p1"], c["arg1"] = maxpool(c["a1"], cfg.pool)
    c["z2"] = conv2d(c["p1"], P["conv2_w"], P["conv2_b"])
    c["a2"] = act(c["z2"])
    c["p2"], c["arg2"] = maxpool(c["a2"], cfg.pool)
    lead = c["p2"].shape[:-3]
    c["flat"] = c["p2"].reshape(*lead, -1)
    c["h"] = c["flat"] @ P["fc1_w"] + P["fc1_b"]
    c["ha"] = act(c["h"])
    logits = c["ha"] @ P["fc2_w"] + P["fc2_b"]
    return logits, c


def _norms(d: dict) -> str:
    return ", ".join(f"{k}={np.linalg.norm(v):.3g}" for k, v in d.items() if isinstance(v, np.ndarray))


def loss_and_grads(model: CnnModel, image, label: int):
    """Softmax cross-entropy for a single sample and its parameter gradients."""
    cfg, P = model.cfg, model.params
    if not 0 <= label < cfg.classes:
        raise ValueError(f"label {label} outside [0, {cfg.classes})")
    _, dact = ACTIVATIONS[cfg.activation]
    logits, c = forward(model, image)
    ls = log_softmax(logits)
    loss = -float(ls[label])
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite loss; params: {_norms(P)}; activations: {_norms(c)}")
    dlogits = np.exp(ls)
    dlogits[label] -= 1.0
    g = {}
    g["fc2_w"] = np.outer(c["ha"], dlogits)
    g["fc2_b"] = dlogits
    dh = (P["fc2_w"] @ dlogits) * dact(c["h"], c["ha"])
    g["fc1_w"] = np.outer(c["flat"], dh)
    g["fc1_b"] = dh
    dp2 = (P["fc1_w"] @ dh).reshape(c["p2"].shape)
    da2 = maxpool_backward(dp2, c["arg2"], cfg.pool)
    dz2 = da2 * dact(c["z2"], c["a2"])
    dp1, g["conv2_w"], g["conv2_b"] = conv2d_backward(c["p1"], P["conv2_w"], dz2)
    da1 = maxpool_backward(dp1, c["arg1"], cfg.pool)
    dz1 = da1 * dact(c["z1"], c["a1"])
    _, g["conv1_w"], g["conv1_b"] = conv2d_backward(c["x"], P["conv1_w"], dz1, need_dx=False)
    return loss, g


def batch_loss_and_grads(model: CnnModel, images, labels, pool: ThreadPoolExecutor | None = None):
    """Mean loss and mean gradient over a batch.

    Per-sample gradients are reduced strictly in sample order, so the result
    is identical whether they were computed serially or on ``pool``.
    """
    items = list(zip(images, labels))
    if pool is None:
        results = [loss_and_grads(model, x, int(y)) for x, y in items]
    else:
        results = list(pool.map(lambda xy: loss_and_grads(model, xy[0], int(xy[1])), items))
    total = 0.0
    acc = {k: np.zeros_like(v) for k, v in model.params.items()}
    for loss, g in results:
        total += loss
        for k in PARAM_NAMES:
            acc[k] += g[k]
    n = len(items)
    return total / n, {k: v / n for k, v in acc.items()}


def sgd_step(model: CnnModel, grads: dict, lr: float) -> CnnModel:
    """Return a new model with ``theta - lr * grad`` for every parameter."""
    new = {}
    for k in PARAM_NAMES:
        if grads[k].shape != model.params[k].shape:
            raise ValueError(f"gradient shape mismatch for {k}")
        new[k] = model.params[k] - lr * grads[k]
    return CnnModel(model.cfg, new)


# -- training / evaluation ----------------------------------------------------

def predict(model: CnnModel, images, chunk: int = 256) -> np.ndarray:
    """Argmax class per image (ties go to the lowest class index)."""
    images = np.asarray(images, dtype=np.float64)
    out = []
    for i in range(0, images.shape[0], chunk):
        logits, _ = forward(model, images[i:i + chunk])
        out.append(np.argmax(logits, axis=-1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def evaluate(model: CnnModel, images, labels):
    """(error rate, confusion matrix with rows = true class, cols = predicted)."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("empty dataset")
    pred = predict(model, images)
    k = model.cfg.classes
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (labels, pred), 1)
    return float(np.mean(pred != labels)), confusion


@dataclass
class HistoryRow:
    epoch: int
    train_loss: float
    val_error: float


def train(model: CnnModel, train_set, val_set, cfg: CnnConfig | None = None, threads: int = 1,
          progress=None):
    """Mini-batch SGD with per-epoch shuffling and early stopping on validation error.

    ``train_set``/``val_set`` are ``(images, labels)`` pairs.  Returns the model
    with the best-validation parameters and the per-epoch history.
    """
    cfg = cfg or model.cfg
    X, y = (np.asarray(a) for a in train_set)
    Xv, yv = (np.asarray(a) for a in val_set)
    if len(y) == 0 or len(yv) == 0:
        raise ValueError("train and validation sets must be non-empty")
    if y.min() < 0 or y.max() >= cfg.classes or yv.min() < 0 or yv.max() >= cfg.classes:
        raise ValueError("labels out of range")
    rng = RngStream(cfg.seed, 0x5EED)
    history: list[HistoryRow] = []
    best, best_err, stale = model.copy(), np.inf, 0
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(len(y))
            losses = []
            for s in range(0, len(order), cfg.batch):
                idx = order[s:s + cfg.batch]
                try:
                    loss, grads = batch_loss_and_grads(model, X[idx], y[idx], pool)
                except FloatingPointError as exc:
                    raise TrainingDiverged(f"epoch {epoch}: {exc}", history) from exc
                losses.append(loss * len(idx))
                model = sgd_step(model, grads, cfg.lr)
            val_err, _ = evaluate(model, Xv, yv)
            row = HistoryRow(epoch, float(np.sum(losses) / len(y)), val_err)
            history.append(row)
            if progress:
                progress(row)
            if val_err < best_err:
                best, best_err, stale = model.copy(), val_err, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    finally:
        if pool:
            pool.shutdown()
    return best, history


def write_history(history, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_error\n")
        for r in history:
            fh.write(f"{r.epoch},{r.train_loss!r},{r.val_error!r}\n")


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(model: CnnModel, path) -> None:
    """Magic + version line, JSON config line, then float64 LE tensors in PARAM_NAMES order."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + f" {CHECKPOINT_VERSION}\n".encode())
        fh.write(json.dumps(asdict(model.cfg), sort_keys=True).encode() + b"\n")
        for k in PARAM_NAMES:
            fh.write(np.ascontiguousarray(model.params[k], dtype="<f8").tobytes())


def load_checkpoint(path) -> CnnModel:
    with open(path, "rb") as fh:
        head = fh.readline().split()
        if not head or head[0] != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint")
        if int(head[1]) != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {head[1].decode()}")
        cfg = CnnConfig(**json.loads(fh.readline()))
        params = {}
        for k, shape in cfg.param_shapes().items():
            n = int(np.prod(shape))
            buf = fh.read(8 * n)
            if len(buf) != 8 * n:
                raise ValueError(f"{path}: truncated at {k}")
            params[k] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)
    return CnnModel(cfg, params)
