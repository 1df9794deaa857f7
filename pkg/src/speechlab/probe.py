"""Layer-wise representation probing.

Linear protocol: pool each clip's activations at one layer, fit three
linear classifier families, pick the (layer, method) with the best dev
accuracy and report its test accuracy, plus a per-layer average-accuracy
curve across tasks. Multi-label protocol: a frame-level 512-unit ReLU MLP
with independent sigmoid outputs, scored by mean average precision of
mean-pooled clip scores.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .audio import logmel, read_wav
from .manifest import Manifest
from .optim import adam_step, init_adam
from .seeding import derive_rng
from .tensor import Tensor

METHODS = ("logistic", "balanced-logistic", "lda")


@dataclass
class PooledFeatures:
    layer: int
    clip_ids: list[str]
    matrix: np.ndarray  # (num_clips, model_dim)


def extract_pooled(model, manifest: Manifest, layer: int, corpus_root) -> PooledFeatures:
    """Time-mean of one layer's activations per clip."""
    ids, rows = [], []
    with T.no_grad():
        for entry in manifest:
            spec = logmel(read_wav(os.path.join(corpus_root, entry.audio)))
            acts = model.activations(spec)
            rows.append(acts.layer(layer).data.mean(axis=0))
            ids.append(entry.utterance_id)
    return PooledFeatures(layer=layer, clip_ids=ids, matrix=np.stack(rows))


def extract_frames(model, manifest: Manifest, layer: int, corpus_root):
    """Per-clip frame-level activations (no pooling) for the MLP protocol."""
    ids, mats = [], []
    with T.no_grad():
        for entry in manifest:
            spec = logmel(read_wav(os.path.join(corpus_root, entry.audio)))
            acts = model.activations(spec)
            mats.append(acts.layer(layer).data.copy())
            ids.append(entry.utterance_id)
    return ids, mats


class _Standardizer:
    def __init__(self, x: np.ndarray):
        self.mean = x.mean(axis=0)
        std = x.std(axis=0)
        self.std = np.where(std > 0, std, 1.0)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std


@dataclass
class LinearProbe:
    method: str
    standardizer: _Standardizer
    weights: np.ndarray  # (d, C) for logistic; LDA stores discriminants
    bias: np.ndarray

    def predict(self, features: np.ndarray) -> np.ndarray:
        z = self.standardizer(features)
        return (z @ self.weights + self.bias).argmax(axis=1)

    def accuracy(self, features: np.ndarray, labels: np.ndarray) -> float:
        return float((self.predict(features) == np.asarray(labels)).mean())


def _check_labels(labels: np.ndarray) -> int:
    classes = int(labels.max()) + 1
    if classes < 2:
        raise ValueError("need at least two classes")
    counts = np.bincount(labels, minlength=classes)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise ValueError(f"class(es) {missing.tolist()} absent from training labels")
    return classes


def _fit_logistic(z: np.ndarray, labels: np.ndarray, classes: int,
                  sample_weight: np.ndarray, seed: int,
                  l2: float = 1e-4, iters: int = 300, lr: float = 0.5) -> tuple:
    n, d = z.shape
    rng = derive_rng("logistic", seed)
    w = rng.normal(0.0, 0.01, size=(d, classes))
    b = np.zeros(classes)
    onehot = np.eye(classes)[labels]
    sw = sample_weight[:, None] / sample_weight.sum()
    for _ in range(iters):
        scores = z @ w + b
        scores -= scores.max(axis=1, keepdims=True)
        p = np.exp(scores)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) * sw
        gw = z.T @ g + l2 * w
        gb = g.sum(axis=0)
        w -= lr * gw
        b -= lr * gb
    return w, b


def _fit_lda(z: np.ndarray, labels: np.ndarray, classes: int, ridge: float = 1e-3) -> tuple:
    n, d = z.shape
    means = np.stack([z[labels == c].mean(axis=0) for c in range(classes)])
    centered = z - means[labels]
    sw = centered.T @ centered / max(n - classes, 1)
    # ridge scaled by the mean variance keeps predictions invariant to
    # global feature rescaling
    sw += ridge * (np.trace(sw) / d) * np.eye(d) + 1e-12 * np.eye(d)
    prec = np.linalg.inv(sw)
    priors = np.bincount(labels, minlength=classes) / n
    w = prec @ means.T  # (d, C)
    b = -0.5 * np.einsum("cd,dc->c", means, w) + np.log(priors)
    return w, b


def train_probe(features: np.ndarray, labels, method: str, seed: int) -> LinearProbe:
    """Fit one linear classifier family on z-scored features.

    logistic: full-batch gradient descent with L2 1e-4. balanced-logistic:
    the same with samples reweighted inversely to class frequency. lda:
    closed-form shared-covariance discriminants with a relative ridge.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or features.shape[1] < 1:
        raise ValueError("features must be (N, d) with d >= 1")
    classes = _check_labels(labels)
    standardizer = _Standardizer(features)
    z = standardizer(features)
    if method == "lda":
        w, b = _fit_lda(z, labels, classes)
    else:
        if method == "balanced-logistic":
            counts = np.bincount(labels, minlength=classes)
            sample_weight = (len(labels) / (classes * counts))[labels]
        else:
            sample_weight = np.ones(len(labels))
        w, b = _fit_logistic(z, labels, classes, sample_weight, seed)
    return LinearProbe(method=method, standardizer=standardizer, weights=w, bias=b)


@dataclass
class ProbeCell:
    layer: int
    method: str
    dev_accuracy: float
    test_accuracy: float


@dataclass
class ProbeResult:
    cells: list[ProbeCell]
    selected: ProbeCell
    average_accuracy: dict[int, float] | None = None

    def to_dict(self) -> dict:
        out = {"table": [{"layer": c.layer, "method": c.method,
                          "dev_accuracy": c.dev_accuracy,
                          "test_accuracy": c.test_accuracy} for c in self.cells],
               "selected": {"layer": self.selected.layer, "method": self.selected.method,
                            "dev_accuracy": self.selected.dev_accuracy,
                            "test_accuracy": self.selected.test_accuracy}}
        if self.average_accuracy is not None:
            out["average_accuracy"] = {str(k): v for k, v in
                                       sorted(self.average_accuracy.items())}
        return out


def select_best(cells: list[ProbeCell]) -> ProbeCell:
    """Argmax of dev accuracy; ties prefer the lower layer, then the
    declared method order."""
    if not cells:
        raise ValueError("empty probe table")
    return min(cells, key=lambda c: (-c.dev_accuracy, c.layer, METHODS.index(c.method)))


def average_accuracy(per_task: dict[str, dict[int, float]]) -> dict[int, float]:
    """Unweighted mean over tasks of per-layer accuracy; every task must
    cover every layer."""
    if not per_task:
        raise ValueError("no tasks")
    layer_sets = [set(layers) for layers in per_task.values()]
    layers = layer_sets[0]
    for name, ls in zip(per_task, layer_sets):
        if ls != layers:
            raise ValueError(f"task {name!r} is missing layers {sorted(layers ^ ls)}")
    return {layer: float(np.mean([per_task[t][layer] for t in per_task]))
            for layer in sorted(layers)}


# -- multi-label frame classifier -----------------------------------------


@dataclass
class MultiLabelHead:
    hidden_w: Tensor  # (d, 512)
    hidden_b: Tensor
    out_w: Tensor  # (512, C)
    out_b: Tensor

    def params(self) -> dict[str, Tensor]:
        return {"mlp.hidden.w": self.hidden_w, "mlp.hidden.b": self.hidden_b,
                "mlp.out.w": self.out_w, "mlp.out.b": self.out_b}

    def frame_logits(self, frames) -> Tensor:
        h = T.relu(T.add(T.matmul(T.as_tensor(frames), self.hidden_w), self.hidden_b))
        return T.add(T.matmul(h, self.out_w), self.out_b)

    def clip_scores(self, frames: np.ndarray) -> np.ndarray:
        """Sigmoid frame scores mean-pooled over time, (C,) in (0, 1)."""
        with T.no_grad():
            z = self.frame_logits(frames).data
        return (1.0 / (1.0 + np.exp(-z))).mean(axis=0)


def init_mlp_head(input_dim: int, num_classes: int, seed: int,
                  hidden: int = 512) -> MultiLabelHead:
    if num_classes < 1:
        raise ValueError("need at least one class")
    rng = derive_rng("mlp-head", seed)
    return MultiLabelHead(
        hidden_w=Tensor(rng.normal(0.0, 1.0 / math.sqrt(input_dim), size=(input_dim, hidden)),
                        requires_grad=True),
        hidden_b=Tensor(np.zeros(hidden), requires_grad=True),
        out_w=Tensor(rng.normal(0.0, 1.0 / math.sqrt(hidden), size=(hidden, num_classes)),
                     requires_grad=True),
        out_b=Tensor(np.zeros(num_classes), requires_grad=True))


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy from logits, numerically stable."""
    z = logits.data
    targets = np.asarray(targets, dtype=np.float64)
    data = np.maximum(z, 0.0) - z * targets + np.log1p(np.exp(-np.abs(z)))
    sig = 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
    grad = (sig - targets) / z.size

    def bw(g, acc):
        T._accum(acc, logits, float(g) * grad)

    return T._make(np.asarray(data.mean()), (logits,), bw)


def train_mlp_head(frame_features: list[np.ndarray], clip_targets: np.ndarray,
                   epochs: int, seed: int, lr: float = 1e-3,
                   hidden: int = 512) -> MultiLabelHead:
    """Minimize frame-level BCE with clip targets broadcast to frames."""
    clip_targets = np.asarray(clip_targets, dtype=np.float64)
    if clip_targets.ndim != 2 or clip_targets.shape[1] < 1:
        raise ValueError("clip_targets must be (num_clips, C) with C >= 1")
    if len(frame_features) != clip_targets.shape[0]:
        raise ValueError("one target row per clip required")
    head = init_mlp_head(frame_features[0].shape[1], clip_targets.shape[1], seed,
                         hidden=hidden)
    params = head.params()
    opt = init_adam(params)
    stacked = np.concatenate(frame_features, axis=0)
    broadcast = np.concatenate([np.tile(t, (f.shape[0], 1))
                                for f, t in zip(frame_features, clip_targets)], axis=0)
    for _ in range(epochs):
        loss = bce_with_logits(head.frame_logits(stacked), broadcast)
        grads = T.gradients(loss, params)
        adam_step(params, grads, opt, lr)
    return head


def average_precision(scores: np.ndarray, positives: np.ndarray,
                      clip_ids: list[str] | None = None) -> float:
    """AP with ranking by descending score, ties broken by clip id."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    if not positives.any():
        raise ValueError("average precision undefined without positives")
    ids = clip_ids if clip_ids is not None else [str(i) for i in range(len(scores))]
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], ids[i]))
    hits = 0
    total = 0.0
    for rank, i in enumerate(order, start=1):
        if positives[i]:
            hits += 1
            total += hits / rank
    return total / positives.sum()


@dataclass
class MapResult:
    map_value: float
    per_class: dict[int, float]
    excluded_classes: list[int]


def eval_map(head: MultiLabelHead, eval_clips: list[tuple[str, np.ndarray, np.ndarray]]) -> MapResult:
    """Mean-pooled clip scores -> per-class AP -> mAP over classes that
    have at least one positive; empty classes are excluded and reported."""
    if not eval_clips:
        raise ValueError("no evaluation clips")
    ids = [c[0] for c in eval_clips]
    scores = np.stack([head.clip_scores(c[1]) for c in eval_clips])
    labels = np.stack([np.asarray(c[2], dtype=bool) for c in eval_clips])
    num_classes = labels.shape[1]
    per_class = {}
    excluded = []
    for c in range(num_classes):
        if not labels[:, c].any():
            excluded.append(c)
            continue
        per_class[c] = average_precision(scores[:, c], labels[:, c], ids)
    if not per_class:
        raise ValueError("every class lacks positives; mAP undefined")
    return MapResult(map_value=float(np.mean(list(per_class.values()))),
                     per_class=per_class, excluded_classes=excluded)
