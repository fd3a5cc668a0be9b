"""Two-phase semi-supervised protocol: unsupervised Hebbian pretraining over
all samples, then a supervised linear probe on the labeled subset, with the
constant-then-halving learning-rate schedule, Nesterov momentum, and early
stopping on validation accuracy."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import layers as ly, rules, tensor as tc
from .data import Dataset, train_val_split
from .errors import (
    BadMagic,
    CorruptFile,
    EmptyLabeledSet,
    ShapeMismatch,
    VersionMismatch,
)
from .layers import Flatten, HebbLayer, MaxPool, ReLU
from .tensor import Tensor

__all__ = [
    "TrainConfig",
    "PretrainMetrics",
    "LinearProbe",
    "learning_rate",
    "pretrain",
    "extract_features",
    "train_probe",
    "evaluate",
    "save_checkpoint",
    "load_checkpoint",
]

CKPT_MAGIC = b"FHB1"
CKPT_VERSION = 1

_RULE_IDS = {rules.RULE_SWTA: 0, rules.RULE_HPCA: 1}
_RULE_NAMES = {v: k for k, v in _RULE_IDS.items()}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    hebb_lr: float = 1e-3
    probe_lr: float = 1e-3
    momentum: float = 0.9
    nesterov: bool = True
    weight_decay: float = 0.0
    early_stopping: bool = True
    seed: int = 0
    layer_schedule: str = "joint"  # or "layerwise"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.hebb_lr <= 0 or self.probe_lr <= 0:
            raise ValueError("learning rates must be > 0")
        if self.layer_schedule not in ("joint", "layerwise"):
            raise ValueError(f"unknown layer schedule {self.layer_schedule!r}")


def learning_rate(base: float, epoch: int, epochs: int) -> float:
    """Constant for the first half of training, then halved every 2 epochs."""
    half = epochs // 2
    if epoch < half:
        return base
    return base * 0.5 ** ((epoch - half) // 2 + 1)


@dataclass
class PretrainMetrics:
    """Per-epoch layer metrics (HPCA: mean reconstruction residual norm,
    SWTA: mean max competition score) plus the plateau epoch."""

    epoch_metrics: list[list[float]] = field(default_factory=list)
    converged_epoch: Optional[int] = None


def _batch_iter(n: int, batch_size: int, rng) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _layer_metric(layer: HebbLayer, x: Tensor) -> float:
    """Cheap per-batch training metric computed from the layer's own input."""
    if layer.geometry is not None:
        x = ly.extract_patches(x, layer.geometry).patches
    else:
        x = tc.reshape(x, (x.shape[0], 1, layer.input_size))
    y = rules.forward_linear(layer.weights, x)
    if layer.params.rule == rules.RULE_SWTA:
        r = tc.softmax(y, layer.params.temperature, dim=1)
        return float(np.mean(np.max(r.data, axis=1)))
    # HPCA: residual of the full reconstruction sum over all neurons
    b, n, _ = y.shape
    recon = tc.matmul(tc.reshape(y, (1, b, n)), layer.weights)  # 1 x B x S
    resid = tc.elementwise("sub", tc.reshape(x, (1, b, x.shape[2])), recon)
    return float(np.mean(np.linalg.norm(resid.data[0], axis=1)))


def _plateau_epoch(per_layer: list[list[float]], improving_down: list[bool], patience: int = 3) -> Optional[int]:
    """First epoch after which no layer metric improves for `patience` epochs."""
    if not per_layer:
        return None
    epochs = len(per_layer)
    best = list(per_layer[0])
    stale = 0
    for e in range(1, epochs):
        improved = False
        for i, value in enumerate(per_layer[e]):
            better = value < best[i] if improving_down[i] else value > best[i]
            if better:
                best[i] = value
                improved = True
        stale = 0 if improved else stale + 1
        if stale >= patience:
            return e - patience
    return None


def forward_stack(stack: Sequence, x: Tensor) -> Tensor:
    for stage in stack:
        x = stage.forward(x)
    return x


def pretrain(
    stack: list, data: Dataset, config: TrainConfig
) -> tuple[list, PretrainMetrics]:
    """Unsupervised Hebbian pretraining; never sees labels.

    In the default "joint" schedule every Hebbian layer updates in the same
    forward pass from its own input; "layerwise" trains one Hebbian layer at
    a time, each for the full epoch budget.
    """
    stack = list(stack)
    rng = np.random.default_rng(config.seed)
    images = data.images
    metrics = PretrainMetrics()
    hebb_positions = [i for i, s in enumerate(stack) if isinstance(s, HebbLayer)]
    rule_down = [
        stack[i].params.rule == rules.RULE_HPCA for i in hebb_positions
    ]
    if not hebb_positions:
        return stack, metrics

    phases: list[list[int]]
    if config.layer_schedule == "layerwise":
        phases = [[pos] for pos in hebb_positions]
    else:
        phases = [hebb_positions]

    for trainable in phases:
        for epoch in range(config.epochs):
            epoch_layer_metrics = {pos: [] for pos in hebb_positions}
            for batch_idx in _batch_iter(len(images), config.batch_size, rng):
                x = Tensor(images[batch_idx])
                for pos, stage in enumerate(stack):
                    if isinstance(stage, HebbLayer) and pos in trainable:
                        result = ly.hebb_update(stage, x)
                        stage = ly.apply_update(stage, result)
                        stack[pos] = stage
                    if isinstance(stage, HebbLayer):
                        epoch_layer_metrics[pos].append(_layer_metric(stage, x))
                    x = stage.forward(x)
            metrics.epoch_metrics.append(
                [float(np.mean(epoch_layer_metrics[pos])) for pos in hebb_positions]
            )
    metrics.converged_epoch = _plateau_epoch(metrics.epoch_metrics, rule_down)
    return stack, metrics


def extract_features(stack: Sequence, data: Dataset, batch_size: int = 256) -> np.ndarray:
    """Forward all samples through the stack, flattening the final stage."""
    chunks = []
    for start in range(0, len(data), batch_size):
        x = Tensor(data.images[start : start + batch_size])
        out = forward_stack(stack, x)
        chunks.append(out.data.reshape(out.shape[0], -1))
    if not chunks:
        return np.zeros((0, 0))
    return np.concatenate(chunks, axis=0)


@dataclass
class LinearProbe:
    """Softmax classifier on frozen features: scores = X W^T + b."""

    weights: np.ndarray  # class_count x feature_dim
    bias: np.ndarray  # class_count
    best_epoch: int = 0
    val_accuracy: float = 0.0

    def scores(self, features: np.ndarray) -> np.ndarray:
        return features @ self.weights.T + self.bias


def probe_loss_grad(
    weights: np.ndarray,
    bias: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    weight_decay: float = 0.0,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean softmax cross-entropy and its closed-form gradient."""
    b = len(features)
    scores = features @ weights.T + bias
    scores = scores - scores.max(axis=1, keepdims=True)
    exp = np.exp(scores)
    probs = exp / exp.sum(axis=1, keepdims=True)
    nll = -np.mean(np.log(probs[np.arange(b), labels]))
    loss = nll + 0.5 * weight_decay * float(np.sum(weights * weights))
    delta = probs.copy()
    delta[np.arange(b), labels] -= 1.0
    grad_w = delta.T @ features / b + weight_decay * weights
    grad_b = delta.sum(axis=0) / b
    return loss, grad_w, grad_b


def _top1_accuracy(scores: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        return 0.0
    ranked = np.argsort(-scores, axis=1, kind="stable")
    return float(np.mean(ranked[:, 0] == labels))


def train_probe(
    features: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
    class_count: Optional[int] = None,
    val_features: Optional[np.ndarray] = None,
    val_labels: Optional[np.ndarray] = None,
) -> LinearProbe:
    """Mini-batch SGD with Nesterov momentum on softmax cross-entropy.

    If no validation split is supplied, a seeded 80/20 split is carved from
    the labeled data.  With early stopping on, the returned probe is the
    state at the epoch of maximum validation accuracy (earliest on ties).
    """
    if len(features) == 0:
        raise EmptyLabeledSet("train_probe needs at least one labeled sample")
    labels = np.asarray(labels, dtype=np.int64)
    if class_count is None:
        class_count = int(labels.max()) + 1
    rng = np.random.default_rng(config.seed)
    if val_features is None:
        order = rng.permutation(len(features))
        n_val = int(round(0.2 * len(features)))
        if n_val and config.early_stopping and len(features) > 1:
            val_features = features[order[:n_val]]
            val_labels = labels[order[:n_val]]
            features = features[order[n_val:]]
            labels = labels[order[n_val:]]
        else:
            val_features, val_labels = features, labels

    dim = features.shape[1]
    w = rng.normal(0.0, 0.01, size=(class_count, dim))
    b = np.zeros(class_count)
    vel_w = np.zeros_like(w)
    vel_b = np.zeros_like(b)

    best = (-1.0, 0, w.copy(), b.copy())
    for epoch in range(config.epochs):
        lr = learning_rate(config.probe_lr, epoch, config.epochs)
        for batch_idx in _batch_iter(len(features), config.batch_size, rng):
            _, gw, gb = probe_loss_grad(
                w, b, features[batch_idx], labels[batch_idx], config.weight_decay
            )
            vel_w = config.momentum * vel_w + gw
            vel_b = config.momentum * vel_b + gb
            if config.nesterov:
                w = w - lr * (gw + config.momentum * vel_w)
                b = b - lr * (gb + config.momentum * vel_b)
            else:
                w = w - lr * vel_w
                b = b - lr * vel_b
        val_acc = _top1_accuracy(val_features @ w.T + b, val_labels)
        if val_acc > best[0]:
            best = (val_acc, epoch, w.copy(), b.copy())
    if config.early_stopping:
        val_acc, best_epoch, w, b = best
    else:
        val_acc, best_epoch = best[0], config.epochs - 1
    return LinearProbe(w, b, best_epoch, val_acc)


def evaluate(
    probe: LinearProbe, features: np.ndarray, labels: np.ndarray, k: int = 1
) -> float:
    """Top-k accuracy with deterministic tie-break by lower class index."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(labels) == 0:
        return 0.0
    scores = probe.scores(features)
    ranked = np.argsort(-scores, axis=1, kind="stable")  # stable: lower class wins ties
    hits = (ranked[:, :k] == np.asarray(labels)[:, None]).any(axis=1)
    return float(np.mean(hits))


# --- checkpoint I/O ---------------------------------------------------------


def _pack_array(fh, arr: np.ndarray) -> None:
    fh.write(struct.pack("<B", arr.ndim))
    for extent in arr.shape:
        fh.write(struct.pack("<I", extent))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _unpack_array(raw: bytes, offset: int) -> tuple[np.ndarray, int]:
    ndim = struct.unpack_from("<B", raw, offset)[0]
    offset += 1
    shape = struct.unpack_from(f"<{ndim}I", raw, offset)
    offset += 4 * ndim
    count = int(np.prod(shape))
    if offset + 8 * count > len(raw):
        raise CorruptFile("checkpoint ended inside an array block")
    arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape)
    offset += 8 * count
    return arr.copy(), offset


def save_checkpoint(
    path, stack: Sequence, probe: Optional[LinearProbe], config_echo: str
) -> None:
    """Binary checkpoint: magic, u32 version, u32 hebbian layer count, per
    layer (u8 rule id, u8 dims, u32 extents, f64 weights), optional probe
    weights, then the experiment config echoed as length-prefixed text."""
    hebb = [s for s in stack if isinstance(s, HebbLayer)]
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        fh.write(struct.pack("<I", len(hebb)))
        for layer in hebb:
            fh.write(struct.pack("<B", _RULE_IDS[layer.params.rule]))
            _pack_array(fh, layer.weights.data)
        if probe is None:
            fh.write(struct.pack("<B", 0))
        else:
            fh.write(struct.pack("<B", 1))
            _pack_array(fh, probe.weights)
            _pack_array(fh, probe.bias)
        text = config_echo.encode("utf-8")
        fh.write(struct.pack("<I", len(text)))
        fh.write(text)


@dataclass
class CheckpointData:
    rule_ids: list[int]
    weights: list[np.ndarray]
    probe: Optional[LinearProbe]
    config_echo: str

    @property
    def rules(self) -> list[str]:
        return [_RULE_NAMES[i] for i in self.rule_ids]


def load_checkpoint(path) -> CheckpointData:
    raw = open(path, "rb").read()
    if raw[:4] != CKPT_MAGIC:
        raise BadMagic(f"{path}: expected FHB1 magic, got {raw[:4]!r}")
    try:
        version = struct.unpack_from("<I", raw, 4)[0]
        if version != CKPT_VERSION:
            raise VersionMismatch(f"{path}: unsupported checkpoint version {version}")
        count = struct.unpack_from("<I", raw, 8)[0]
        offset = 12
        rule_ids, weights = [], []
        for _ in range(count):
            rid = struct.unpack_from("<B", raw, offset)[0]
            offset += 1
            if rid not in _RULE_NAMES:
                raise CorruptFile(f"{path}: unknown rule id {rid}")
            arr, offset = _unpack_array(raw, offset)
            rule_ids.append(rid)
            weights.append(arr)
        has_probe = struct.unpack_from("<B", raw, offset)[0]
        offset += 1
        probe = None
        if has_probe:
            pw, offset = _unpack_array(raw, offset)
            pb, offset = _unpack_array(raw, offset)
            probe = LinearProbe(pw, pb.reshape(-1))
        text_len = struct.unpack_from("<I", raw, offset)[0]
        offset += 4
        if offset + text_len > len(raw):
            raise CorruptFile(f"{path}: truncated config echo")
        echo = raw[offset : offset + text_len].decode("utf-8")
    except struct.error as exc:
        raise CorruptFile(f"{path}: truncated checkpoint") from exc
    return CheckpointData(rule_ids, weights, probe, echo)
