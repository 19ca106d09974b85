"""Fully convolutional time-series classifier and MLP baseline in numpy.

Tensors are channels-last: a batch of series has shape ``(batch, length,
channels)``.  Every layer has an explicit backward pass; nothing relies on
automatic differentiation.

Checkpoint layout::

    b"HUMNN1"
    u32 byte length, UTF-8 JSON architecture
    learnable parameters in declaration order  (little-endian f32, row-major)
    batch-norm running statistics in declaration order
    u32 CRC32 of all preceding bytes
"""

from __future__ import annotations

import json
import logging
import struct
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dataset import TRAIN, VALIDATION, LabeledDataset
from .errors import CorruptFile, DegenerateBatch, EmptySplit, NoFrames, ShapeMismatch

log = logging.getLogger(__name__)

FCN_BLOCKS = ((128, 8), (256, 5), (128, 3))
MLP_HIDDEN = (300, 300, 300, 300)
BN_EPS = 1e-5
BN_MOMENTUM = 0.9
_MAGIC = b"HUMNN1"


@dataclass(frozen=True)
class ArchSpec:
    kind: str
    n_classes: int
    input_len: int
    blocks: tuple[tuple[int, int], ...] = FCN_BLOCKS
    hidden: tuple[int, ...] = MLP_HIDDEN
    class_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("fcn", "mlp"):
            raise ValueError(f"unknown architecture {self.kind!r}")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if self.input_len < 1:
            raise ValueError("input_len must be positive")
        object.__setattr__(self, "blocks", tuple(tuple(b) for b in self.blocks))
        object.__setattr__(self, "hidden", tuple(self.hidden))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if self.class_names and len(self.class_names) != self.n_classes:
            raise ValueError("class_names must have n_classes entries")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ArchSpec":
        d = json.loads(text)
        d["blocks"] = tuple(tuple(b) for b in d["blocks"])
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float = 0.005
    constant_epochs: int = 30
    decay_factor: float = 0.7
    plateau_patience: int = 5
    plateau_delta: float = 0.1  # accuracy percentage points
    batch_size: int = 64
    max_epochs: int = 200
    seed: int = 0
    momentum: float = 0.0

    def __post_init__(self):
        if not 0 < self.decay_factor < 1:
            raise ValueError("decay_factor must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")

    def lr_at(self, epoch: int) -> float:
        """Learning rate of 1-based ``epoch``."""
        if epoch <= self.constant_epochs:
            return self.initial_lr
        return self.initial_lr * self.decay_factor ** (epoch - self.constant_epochs)


@dataclass
class ModelParams:
    arch: ArchSpec
    params: dict[str, np.ndarray]
    stats: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, {k: v.copy() for k, v in self.params.items()},
                           {k: v.copy() for k, v in self.stats.items()})

    def inventory(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in {**self.params, **self.stats}.items()}


# ---------------------------------------------------------------------------
# shapes and initialization


def param_shapes(arch: ArchSpec) -> tuple[dict, dict]:
    """Learnable parameter and running-statistic shapes in declaration order."""
    params: dict[str, tuple[int, ...]] = {}
    stats: dict[str, tuple[int, ...]] = {}
    if arch.kind == "fcn":
        c_in = 1
        for i, (filters, kernel) in enumerate(arch.blocks):
            params[f"conv{i}.weight"] = (filters, c_in, kernel)
            params[f"conv{i}.bias"] = (filters,)
            params[f"bn{i}.gamma"] = (filters,)
            params[f"bn{i}.beta"] = (filters,)
            stats[f"bn{i}.running_mean"] = (filters,)
            stats[f"bn{i}.running_var"] = (filters,)
            c_in = filters
    else:
        c_in = arch.input_len
        for i, width in enumerate(arch.hidden):
            params[f"fc{i}.weight"] = (c_in, width)
            params[f"fc{i}.bias"] = (width,)
            c_in = width
    params["out.weight"] = (c_in, arch.n_classes)
    params["out.bias"] = (arch.n_classes,)
    return params, stats


def init_params(arch: ArchSpec, seed=0, dtype=np.float32) -> ModelParams:
    """Glorot-uniform weights, zero biases, unit BN scale, zero BN shift."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    shapes, stat_shapes = param_shapes(arch)
    params = {}
    for name, shape in shapes.items():
        if name.endswith(".weight"):
            if len(shape) == 3:
                f, c, k = shape
                fan_in, fan_out = c * k, f * k
            else:
                fan_in, fan_out = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-limit, limit, shape).astype(dtype)
        elif name.endswith(".gamma"):
            params[name] = np.ones(shape, dtype)
        else:
            params[name] = np.zeros(shape, dtype)
    stats = {name: (np.ones(shape, dtype) if name.endswith("var") else np.zeros(shape, dtype))
             for name, shape in stat_shapes.items()}
    return ModelParams(arch, params, stats)


# ---------------------------------------------------------------------------
# layers


def _pads(kernel: int) -> tuple[int, int]:
    left = (kernel - 1) // 2
    return left, kernel - 1 - left


def _conv_forward(x, w, b):
    batch, length, c_in = x.shape
    filters, c_w, kernel = w.shape
    if c_w != c_in:
        raise ShapeMismatch(f"conv expects {c_w} input channels, got {c_in}")
    left, right = _pads(kernel)
    xp = np.pad(x, ((0, 0), (left, right), (0, 0)))
    cols = sliding_window_view(xp, kernel, axis=1).reshape(batch * length, c_in * kernel)
    wmat = w.reshape(filters, c_in * kernel).T
    y = (cols @ wmat).reshape(batch, length, filters) + b
    return y, (cols, x.shape, w)


def _conv_backward(dy, cache):
    cols, (batch, length, c_in), w = cache
    filters, _, kernel = w.shape
    dy2 = dy.reshape(batch * length, filters)
    dw = (dy2.T @ cols).reshape(w.shape)
    db = dy2.sum(axis=0)
    left, _ = _pads(kernel)
    dxp = np.zeros((batch, length + kernel - 1, c_in), dtype=dy.dtype)
    for k in range(kernel):
        tap = np.ascontiguousarray(w[:, :, k])
        dxp[:, k:k + length, :] += (dy2 @ tap).reshape(batch, length, c_in)
    return dxp[:, left:left + length, :], dw, db


def conv1d_forward(x, weights, bias):
    """Stride-1 cross-correlation that preserves length.

    ``x`` is ``(batch, length, channels)``, ``weights`` is ``(filters,
    channels, kernel)``.  Zero padding of ``kernel - 1`` samples is split
    evenly, the odd one going to the right.
    """
    return _conv_forward(np.asarray(x), np.asarray(weights), np.asarray(bias))[0]


def _bn_forward(x, gamma, beta, mode, running_mean, running_var):
    axes = tuple(range(x.ndim - 1))
    if mode == "train":
        if x.shape[0] < 2:
            raise DegenerateBatch("batch norm in train mode needs at least two samples")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        new_mean = BN_MOMENTUM * running_mean + (1 - BN_MOMENTUM) * mean
        new_var = BN_MOMENTUM * running_var + (1 - BN_MOMENTUM) * var
    elif mode == "infer":
        mean, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var
    else:
        raise ValueError(f"mode must be 'train' or 'infer', not {mode!r}")
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean) * inv_std
    y = gamma * xhat + beta
    return y, (xhat, inv_std, gamma), (new_mean.astype(x.dtype), new_var.astype(x.dtype))


def _bn_backward(dy, cache):
    xhat, inv_std, gamma = cache
    axes = tuple(range(dy.ndim - 1))
    count = dy.size // dy.shape[-1]
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    dxhat = dy * gamma
    dx = (inv_std / count) * (count * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    return dx, dgamma, dbeta


def batchnorm_forward(x, gamma, beta, mode="train", running_mean=None, running_var=None):
    """Per-channel batch normalization over every axis but the last.

    Returns ``(y, running_mean, running_var)``; in train mode the running
    statistics are blended toward the batch statistics with momentum 0.9.
    """
    x = np.asarray(x)
    c = x.shape[-1]
    running_mean = np.zeros(c, x.dtype) if running_mean is None else np.asarray(running_mean)
    running_var = np.ones(c, x.dtype) if running_var is None else np.asarray(running_var)
    y, _, (rm, rv) = _bn_forward(x, np.asarray(gamma), np.asarray(beta), mode, running_mean, running_var)
    return y, rm, rv


def gap(x):
    """Global average pooling over the time axis (second to last)."""
    return np.asarray(x).mean(axis=-2)


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# network


def _check_input(model: ModelParams, batch) -> np.ndarray:
    x = np.asarray(batch)
    dtype = model.params["out.weight"].dtype
    if x.ndim != 2:
        raise ShapeMismatch(f"expected (batch, length) input, got shape {x.shape}")
    if model.arch.kind == "mlp" and x.shape[1] != model.arch.input_len:
        raise ShapeMismatch(f"MLP expects length {model.arch.input_len}, got {x.shape[1]}")
    return x.astype(dtype, copy=False)


def _forward(model: ModelParams, x, mode):
    p = model.params
    caches = []
    new_stats = {}
    if model.arch.kind == "fcn":
        h = x[:, :, None]
        for i in range(len(model.arch.blocks)):
            h, cc = _conv_forward(h, p[f"conv{i}.weight"], p[f"conv{i}.bias"])
            h, bc, (rm, rv) = _bn_forward(h, p[f"bn{i}.gamma"], p[f"bn{i}.beta"], mode,
                                          model.stats[f"bn{i}.running_mean"],
                                          model.stats[f"bn{i}.running_var"])
            new_stats[f"bn{i}.running_mean"], new_stats[f"bn{i}.running_var"] = rm, rv
            mask = h > 0
            h = h * mask
            caches.append((cc, bc, mask))
        length = h.shape[1]
        h = gap(h)
    else:
        h = x
        for i in range(len(model.arch.hidden)):
            z = h @ p[f"fc{i}.weight"] + p[f"fc{i}.bias"]
            mask = z > 0
            caches.append((h, mask))
            h = z * mask
        length = None
    logits = h @ p["out.weight"] + p["out.bias"]
    return softmax(logits), (caches, h, length), new_stats


def forward(model: ModelParams, batch, mode: str = "infer") -> np.ndarray:
    """Class-probability rows for a ``(batch, length)`` array of frames."""
    x = _check_input(model, batch)
    return _forward(model, x, mode)[0]


def _backward(model: ModelParams, probs, cache, labels):
    p = model.params
    caches, feat, length = cache
    batch = probs.shape[0]
    dlogits = probs.copy()
    dlogits[np.arange(batch), labels] -= 1.0
    dlogits /= batch
    grads = {"out.weight": feat.T @ dlogits, "out.bias": dlogits.sum(axis=0)}
    dh = dlogits @ p["out.weight"].T
    if model.arch.kind == "fcn":
        dh = np.broadcast_to(dh[:, None, :] / length, (batch, length, dh.shape[1]))
        for i in reversed(range(len(model.arch.blocks))):
            cc, bc, mask = caches[i]
            dh = dh * mask
            dh, grads[f"bn{i}.gamma"], grads[f"bn{i}.beta"] = _bn_backward(dh, bc)
            dh, grads[f"conv{i}.weight"], grads[f"conv{i}.bias"] = _conv_backward(dh, cc)
    else:
        for i in reversed(range(len(model.arch.hidden))):
            h_in, mask = caches[i]
            dz = dh * mask
            grads[f"fc{i}.weight"] = h_in.T @ dz
            grads[f"fc{i}.bias"] = dz.sum(axis=0)
            dh = dz @ p[f"fc{i}.weight"].T
    return {name: grads[name] for name in p}


def _loss(probs, labels) -> float:
    picked = probs[np.arange(probs.shape[0]), labels]
    return float(-np.mean(np.log(np.maximum(picked, np.finfo(probs.dtype).tiny))))


def gradients(model: ModelParams, batch, labels):
    """Exact gradients of the mean cross-entropy (batch norm in train mode).

    Returns ``(grads, loss)`` with ``grads`` keyed like ``model.params``.
    Running statistics are left untouched.
    """
    x = _check_input(model, batch)
    labels = np.asarray(labels, dtype=int)
    if labels.shape != (x.shape[0],) or x.shape[0] == 0:
        raise ShapeMismatch("one label per frame required")
    if labels.min() < 0 or labels.max() >= model.arch.n_classes:
        raise ShapeMismatch("label outside the class range")
    probs, cache, _ = _forward(model, x, "train")
    return _backward(model, probs, cache, labels), _loss(probs, labels)


# ---------------------------------------------------------------------------
# training


def _predict_batched(model, x, chunk=256):
    if x.shape[0] == 0:
        return np.zeros((0, model.arch.n_classes), dtype=model.params["out.weight"].dtype)
    return np.concatenate([forward(model, x[i:i + chunk]) for i in range(0, x.shape[0], chunk)])


def query_accuracy(probs, labels, groups) -> float:
    """Top-1 accuracy after averaging frame probabilities per query."""
    keys = list(dict.fromkeys(groups))
    index = {k: i for i, k in enumerate(keys)}
    gidx = np.array([index[g] for g in groups])
    sums = np.zeros((len(keys), probs.shape[1]))
    np.add.at(sums, gidx, probs)
    truth = np.zeros(len(keys), dtype=int)
    truth[gidx] = labels
    return float(np.mean(np.argmax(sums, axis=1) == truth))


def _minibatches(perm: np.ndarray, size: int) -> list[np.ndarray]:
    batches = [perm[i:i + size] for i in range(0, perm.size, size)]
    # a trailing single sample cannot be batch-normalized on its own
    if len(batches) > 1 and batches[-1].size == 1:
        last = batches.pop()
        batches[-1] = np.concatenate([batches[-1], last])
    return batches


def train_arrays(x_train, y_train, x_val, y_val, val_groups, arch: ArchSpec,
                 cfg: TrainConfig = TrainConfig(), *, dtype=np.float32, evaluate_every: int = 1):
    """Mini-batch SGD with the step-then-decay schedule on plain arrays.

    Returns ``(best_model, history)`` where ``best_model`` holds the
    parameters of the epoch with the highest validation accuracy (lower
    validation loss breaks ties, then the earlier epoch).
    """
    x_train = np.asarray(x_train, dtype=dtype)
    y_train = np.asarray(y_train, dtype=int)
    x_val = np.asarray(x_val, dtype=dtype)
    y_val = np.asarray(y_val, dtype=int)
    if x_train.shape[0] == 0:
        raise EmptySplit("no training frames")
    if arch.kind == "fcn" and x_train.shape[0] < 2:
        raise DegenerateBatch("batch norm needs at least two training frames")
    has_val = x_val.shape[0] > 0
    groups = list(val_groups) if val_groups is not None else [str(i) for i in range(x_val.shape[0])]

    rng = np.random.default_rng(cfg.seed)
    model = init_params(arch, rng, dtype)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    best = (-1.0, np.inf, 0)
    best_model = model.copy()
    stale = 0
    history = []
    for epoch in range(1, cfg.max_epochs + 1):
        lr = cfg.lr_at(epoch)
        total_loss = 0.0
        correct = 0
        for idx in _minibatches(rng.permutation(x_train.shape[0]), cfg.batch_size):
            xb, yb = x_train[idx], y_train[idx]
            probs, cache, new_stats = _forward(model, xb, "train")
            grads = _backward(model, probs, cache, yb)
            total_loss += _loss(probs, yb) * idx.size
            correct += int(np.sum(np.argmax(probs, axis=1) == yb))
            for name, g in grads.items():
                if cfg.momentum:
                    velocity[name] = cfg.momentum * velocity[name] - lr * g
                    model.params[name] += velocity[name]
                else:
                    model.params[name] -= (lr * g).astype(dtype, copy=False)
            model.stats.update(new_stats)
        record = {"epoch": epoch, "lr": lr, "loss": total_loss / x_train.shape[0],
                  "train_accuracy": correct / x_train.shape[0]}
        if has_val and (epoch % evaluate_every == 0 or epoch == cfg.max_epochs):
            vp = _predict_batched(model, x_val)
            record["val_loss"] = _loss(vp, y_val)
            record["val_accuracy"] = query_accuracy(vp, y_val, groups)
            acc, vloss = record["val_accuracy"], record["val_loss"]
            improved = acc - best[0]
            if acc > best[0] or (acc == best[0] and vloss < best[1]):
                best = (acc, vloss, epoch)
                best_model = model.copy()
            if epoch > cfg.constant_epochs:
                stale = stale + 1 if improved < cfg.plateau_delta / 100.0 else 0
        history.append(record)
        log.info("epoch %d lr %.5g loss %.4f val %s", epoch, lr, record["loss"],
                 record.get("val_accuracy"))
        if stale >= cfg.plateau_patience:
            break
    if not has_val:
        best_model = model
    return best_model, history


def train(dataset: LabeledDataset, arch: ArchSpec, cfg: TrainConfig = TrainConfig(), **kwargs):
    """Train on the dataset's train side, selecting on its validation side."""
    x_tr, y_tr, _ = dataset.arrays(TRAIN)
    x_va, y_va, g_va = dataset.arrays(VALIDATION)
    if x_tr.shape[0] == 0 or x_va.shape[0] == 0:
        raise EmptySplit("dataset needs frames on both split sides")
    if arch.n_classes != dataset.n_classes:
        raise ShapeMismatch("architecture and dataset disagree on the class count")
    return train_arrays(x_tr, y_tr, x_va, y_va, g_va, arch, cfg, **kwargs)


def predict_song(model: ModelParams, frames) -> list[tuple[str, float]]:
    """Rank songs by the mean class probability over a query's frames."""
    x = np.asarray(frames)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[0] == 0:
        raise NoFrames("a query needs at least one frame")
    scores = _predict_batched(model, x.astype(np.float32)).astype(np.float64).mean(axis=0)
    names = model.arch.class_names or tuple(str(i) for i in range(model.arch.n_classes))
    order = sorted(range(scores.size), key=lambda i: (-scores[i], i))
    return [(names[i], float(scores[i])) for i in order]


# ---------------------------------------------------------------------------
# checkpoints


def save_model(model: ModelParams) -> bytes:
    arch = model.arch.to_json().encode("utf-8")
    body = bytearray(_MAGIC + struct.pack("<I", len(arch)) + arch)
    shapes, stat_shapes = param_shapes(model.arch)
    for name in shapes:
        body += np.ascontiguousarray(model.params[name], dtype="<f4").tobytes()
    for name in stat_shapes:
        body += np.ascontiguousarray(model.stats[name], dtype="<f4").tobytes()
    body += struct.pack("<I", zlib.crc32(body))
    return bytes(body)


def load_model(data: bytes) -> ModelParams:
    if data[:6] != _MAGIC:
        raise CorruptFile("not a hummit checkpoint (bad magic)")
    if len(data) < 14:
        raise CorruptFile("truncated checkpoint")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != crc:
        raise CorruptFile("checkpoint CRC mismatch")
    (jlen,) = struct.unpack_from("<I", data, 6)
    arch = ArchSpec.from_json(data[10:10 + jlen].decode("utf-8"))
    pos = 10 + jlen
    shapes, stat_shapes = param_shapes(arch)
    out = {}
    for name, shape in {**shapes, **stat_shapes}.items():
        count = int(np.prod(shape))
        if pos + 4 * count > len(data) - 4:
            raise CorruptFile("checkpoint shorter than its architecture implies")
        out[name] = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
        pos += 4 * count
    if pos != len(data) - 4:
        raise CorruptFile("trailing bytes in checkpoint")
    return ModelParams(arch, {k: out[k] for k in shapes}, {k: out[k] for k in stat_shapes})


__all__ = [
    "ArchSpec", "ModelParams", "TrainConfig", "batchnorm_forward", "conv1d_forward", "forward",
    "gap", "gradients", "init_params", "load_model", "predict_song", "save_model", "train",
    "train_arrays",
]
