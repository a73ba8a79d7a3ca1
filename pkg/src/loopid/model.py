"""Small trainable classifier: feature extractor, head, and class-memory attention.

The network is D -> H (tanh) -> E (identity embedding) -> K logits. When the
class memory is enabled, the embedding is enriched with an attention-weighted
readout of per-class centroids before it reaches the head; a learned sigmoid
gate controls how much of the readout is mixed in. All gradients are derived
by hand so they can be checked against finite differences.
"""
from __future__ import annotations

import copy
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import CentroidError, ConfigurationError, ShapeError, TrainingDivergedError

SNAPSHOT_MAGIC = b"LPID"
SNAPSHOT_FORMAT_VERSION = 1

PARAM_ORDER = ("W1", "b1", "W2", "b2", "Wc", "bc", "memory", "gate")
FEATURE_PARAMS = ("W1", "b1", "W2", "b2")
CLASSIFIER_PARAMS = ("Wc", "bc")
MEMORY_PARAMS = ("gate",)


@dataclass
class ClassifierModel:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    Wc: np.ndarray
    bc: np.ndarray
    memory: np.ndarray
    gate: np.ndarray
    oltr_enabled: bool
    version: int
    seed: int
    categories: list[int]

    @property
    def dim_in(self) -> int:
        return self.W1.shape[0]

    @property
    def dim_hidden(self) -> int:
        return self.W1.shape[1]

    @property
    def dim_embed(self) -> int:
        return self.W2.shape[1]

    @property
    def n_classes(self) -> int:
        return self.Wc.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_ORDER}

    def class_index(self, category_id: int) -> int:
        return self.categories.index(category_id)


def init_model(
    dim_in: int,
    dim_hidden: int,
    dim_embed: int,
    categories: list[int],
    seed: int = 0,
    gate_init: float = 3.0,
) -> ClassifierModel:
    """Fresh model with Gaussian fan-in-scaled weights and zero biases."""
    if len(set(categories)) != len(categories):
        raise ConfigurationError("category ids must be unique")
    rng = np.random.default_rng(seed)
    k = len(categories)
    return ClassifierModel(
        W1=rng.normal(0.0, 1.0 / np.sqrt(dim_in), size=(dim_in, dim_hidden)),
        b1=np.zeros(dim_hidden),
        W2=rng.normal(0.0, 1.0 / np.sqrt(dim_hidden), size=(dim_hidden, dim_embed)),
        b2=np.zeros(dim_embed),
        Wc=rng.normal(0.0, 1.0 / np.sqrt(dim_embed), size=(dim_embed, k)),
        bc=np.zeros(k),
        memory=np.zeros((k, dim_embed)),
        gate=np.full(dim_embed, gate_init),
        oltr_enabled=False,
        version=0,
        seed=seed,
        categories=list(categories),
    )


def copy_model(model: ClassifierModel) -> ClassifierModel:
    return copy.deepcopy(model)


def expand_head(model: ClassifierModel, new_categories: list[int]) -> ClassifierModel:
    """Grow the head (and memory) for newly discovered categories.

    New per-class weights start at zero; existing rows are untouched.
    """
    added = [c for c in new_categories if c not in model.categories]
    if not added:
        return copy_model(model)
    out = copy_model(model)
    n_new = len(added)
    out.Wc = np.hstack([out.Wc, np.zeros((out.dim_embed, n_new))])
    out.bc = np.concatenate([out.bc, np.zeros(n_new)])
    out.memory = np.vstack([out.memory, np.zeros((n_new, out.dim_embed))])
    out.categories = list(out.categories) + sorted(added)
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    ex = np.exp(shifted)
    return ex / np.sum(ex, axis=axis, keepdims=True)


def oltr_combine(direct: np.ndarray, memory: np.ndarray, gate: np.ndarray) -> np.ndarray:
    """Enrich an embedding with a gated attention readout over class centroids.

    attention = softmax(memory @ direct / sqrt(E)); readout = sum_k a_k * memory_k;
    output = direct + sigmoid(gate) * readout. With the gate at negative
    saturation this is the identity.
    """
    if memory.size == 0:
        raise ConfigurationError("memory must be non-empty for oltr_combine")
    squeeze = direct.ndim == 1
    d = np.atleast_2d(direct)
    scale = 1.0 / np.sqrt(d.shape[1])
    attn = _softmax(d @ memory.T * scale, axis=1)
    readout = attn @ memory
    combined = d + _sigmoid(gate) * readout
    return combined[0] if squeeze else combined


@dataclass
class ForwardCache:
    x: np.ndarray
    a1: np.ndarray
    direct: np.ndarray
    attn: np.ndarray | None
    readout: np.ndarray | None
    gate_sig: np.ndarray | None
    embeddings: np.ndarray
    logits: np.ndarray


def forward_cache(model: ClassifierModel, features: np.ndarray) -> ForwardCache:
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if x.shape[1] != model.dim_in:
        raise ShapeError(f"expected feature dim {model.dim_in}, got {x.shape[1]}")
    a1 = np.tanh(x @ model.W1 + model.b1)
    direct = a1 @ model.W2 + model.b2
    attn = readout = gate_sig = None
    if model.oltr_enabled:
        scale = 1.0 / np.sqrt(model.dim_embed)
        attn = _softmax(direct @ model.memory.T * scale, axis=1)
        readout = attn @ model.memory
        gate_sig = _sigmoid(model.gate)
        embeddings = direct + gate_sig * readout
    else:
        embeddings = direct
    logits = embeddings @ model.Wc + model.bc
    return ForwardCache(x, a1, direct, attn, readout, gate_sig, embeddings, logits)


def forward(model: ClassifierModel, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Embeddings and logits for a batch (or a single feature vector)."""
    squeeze = np.asarray(features).ndim == 1
    cache = forward_cache(model, features)
    if squeeze:
        return cache.embeddings[0], cache.logits[0]
    return cache.embeddings, cache.logits


def backward(model: ClassifierModel, cache: ForwardCache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients given dLoss/dlogits. Memory rows are a buffer, not a parameter."""
    d_embed = dlogits @ model.Wc.T
    grads = {
        "Wc": cache.embeddings.T @ dlogits,
        "bc": dlogits.sum(axis=0),
    }
    if model.oltr_enabled:
        g = cache.gate_sig
        d_direct = d_embed.copy()
        d_readout = d_embed * g
        d_gate_sig = (d_embed * cache.readout).sum(axis=0)
        grads["gate"] = d_gate_sig * g * (1.0 - g)
        d_attn = d_readout @ model.memory.T
        d_scores = cache.attn * (d_attn - (d_attn * cache.attn).sum(axis=1, keepdims=True))
        d_direct += d_scores @ model.memory / np.sqrt(model.dim_embed)
    else:
        d_direct = d_embed
        grads["gate"] = np.zeros_like(model.gate)
    grads["W2"] = cache.a1.T @ d_direct
    grads["b2"] = d_direct.sum(axis=0)
    d_a1 = d_direct @ model.W2.T
    d_z1 = d_a1 * (1.0 - cache.a1**2)
    grads["W1"] = cache.x.T @ d_z1
    grads["b1"] = d_z1.sum(axis=0)
    return grads


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(lse - shifted[np.arange(n), labels]))
    dlogits = _softmax(logits, axis=1)
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


def compute_centroids(model: ClassifierModel, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-class mean of direct embeddings under the current feature extractor.

    Every class in the model's registry must have at least one sample.
    """
    was_enabled = model.oltr_enabled
    model.oltr_enabled = False
    try:
        embeddings, _ = forward(model, features)
    finally:
        model.oltr_enabled = was_enabled
    memory = np.zeros((model.n_classes, model.dim_embed))
    for k in range(model.n_classes):
        mask = labels == k
        if not mask.any():
            raise CentroidError(f"class {k} (category {model.categories[k]}) has no training samples")
        memory[k] = embeddings[mask].mean(axis=0)
    return memory


def refresh_centroids(model: ClassifierModel, features: np.ndarray, labels: np.ndarray) -> None:
    """Recompute memory rows for classes present in the data; keep stale rows otherwise."""
    was_enabled = model.oltr_enabled
    model.oltr_enabled = False
    try:
        embeddings, _ = forward(model, features)
    finally:
        model.oltr_enabled = was_enabled
    for k in range(model.n_classes):
        mask = labels == k
        if mask.any():
            model.memory[k] = embeddings[mask].mean(axis=0)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 64
    lr_feature: float = 0.001
    lr_classifier: float = 0.01
    lr_memory: float = 0.0001
    lr_decay_epochs: int = 10
    lr_decay_ratio: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0005
    seed: int = 0

    def validate(self) -> None:
        if min(self.lr_feature, self.lr_classifier, self.lr_memory) <= 0:
            raise ConfigurationError("all learning rates must be > 0")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigurationError(f"momentum must be in [0,1), got {self.momentum}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")

    def lr_of(self, param: str) -> float:
        if param in FEATURE_PARAMS:
            return self.lr_feature
        if param in CLASSIFIER_PARAMS:
            return self.lr_classifier
        return self.lr_memory


@dataclass
class Batch:
    features: np.ndarray
    labels: np.ndarray
    is_pseudo: np.ndarray


@dataclass(frozen=True)
class LabeledData:
    """Features with class-index labels (trainer space, not global category ids)."""

    features: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class MixedData:
    """Human and pseudo-labeled pools mixed per batch at ``pseudo_fraction``."""

    human: LabeledData
    pseudo: LabeledData
    pseudo_fraction: float = 0.5


class _CyclingSampler:
    """Endless stream over a pool, reshuffled whenever it is exhausted."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n = n
        self.rng = rng
        self.order = rng.permutation(n)
        self.pos = 0

    def take(self, k: int) -> np.ndarray:
        out = []
        while k > 0:
            if self.pos >= self.n:
                self.order = self.rng.permutation(self.n)
                self.pos = 0
            grab = min(k, self.n - self.pos)
            out.append(self.order[self.pos : self.pos + grab])
            self.pos += grab
            k -= grab
        return np.concatenate(out)


def _epoch_batches(data: LabeledData | MixedData, batch_size: int, rng: np.random.Generator):
    """Yield one epoch of batches; mixed pools honor the pseudo fraction."""
    if isinstance(data, LabeledData):
        order = rng.permutation(len(data))
        for start in range(0, len(data), batch_size):
            idx = order[start : start + batch_size]
            yield Batch(data.features[idx], data.labels[idx], np.zeros(len(idx), dtype=bool))
        return

    human, pseudo = data.human, data.pseudo
    n_pseudo_per_batch = int(round(data.pseudo_fraction * batch_size)) if len(pseudo) else 0
    if len(human) == 0:
        if len(pseudo) == 0:
            return
        order = rng.permutation(len(pseudo))
        for start in range(0, len(pseudo), batch_size):
            idx = order[start : start + batch_size]
            yield Batch(pseudo.features[idx], pseudo.labels[idx], np.ones(len(idx), dtype=bool))
        return

    human_per_batch = max(1, batch_size - n_pseudo_per_batch)
    order = rng.permutation(len(human))
    pseudo_stream = _CyclingSampler(len(pseudo), rng) if len(pseudo) else None
    for start in range(0, len(human), human_per_batch):
        h_idx = order[start : start + human_per_batch]
        feats = [human.features[h_idx]]
        labels = [human.labels[h_idx]]
        flags = [np.zeros(len(h_idx), dtype=bool)]
        if pseudo_stream is not None and n_pseudo_per_batch > 0:
            p_idx = pseudo_stream.take(n_pseudo_per_batch)
            feats.append(pseudo.features[p_idx])
            labels.append(pseudo.labels[p_idx])
            flags.append(np.ones(len(p_idx), dtype=bool))
        yield Batch(np.concatenate(feats), np.concatenate(labels), np.concatenate(flags))


class SGDOptimizer:
    """SGD with momentum and L2 weight decay folded into the gradient.

    One step does: v <- momentum*v + (grad + weight_decay*param);
    param <- param - lr*v, with per-group learning rates. With a zero data
    gradient and fresh momentum the first step scales a parameter by exactly
    (1 - lr*weight_decay).
    """

    def __init__(self, config: TrainConfig):
        self.config = config
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, model: ClassifierModel, grads: dict[str, np.ndarray], lr_scale: float) -> None:
        for name in PARAM_ORDER:
            if name == "memory":
                continue
            param = getattr(model, name)
            g = grads[name] + self.config.weight_decay * param
            v = self.velocity.get(name)
            if v is None:
                v = np.zeros_like(param)
            v = self.config.momentum * v + g
            self.velocity[name] = v
            param -= self.config.lr_of(name) * lr_scale * v


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_class_avg_acc: float | None
    lr_scale: float


@dataclass
class TrainResult:
    model: ClassifierModel
    history: list[EpochRecord]
    best_epoch: int
    best_val_acc: float | None


def class_average_accuracy_indexed(
    predictions: np.ndarray, labels: np.ndarray, n_classes: int
) -> float:
    """Unweighted mean of per-class recall over classes present in ``labels``."""
    accs = []
    for k in range(n_classes):
        mask = labels == k
        if mask.any():
            accs.append(float((predictions[mask] == k).mean()))
    if not accs:
        raise CentroidError("no classes present in evaluation labels")
    return float(np.mean(accs))


def evaluate_class_avg(model: ClassifierModel, val: LabeledData) -> float:
    _, logits = forward(model, val.features)
    preds = logits.argmax(axis=1)
    return class_average_accuracy_indexed(preds, val.labels, model.n_classes)


def train_supervised(
    model: ClassifierModel,
    train: LabeledData | MixedData,
    config: TrainConfig,
    val: LabeledData | None = None,
    evaluator: "Callable[[ClassifierModel], float] | None" = None,
) -> TrainResult:
    """Mini-batch SGD with momentum, weight decay, and stepped LR decay.

    Keeps the snapshot with the best validation class-average accuracy. When
    the model's class memory is enabled, centroids are refreshed from the
    training pool at the start of every epoch. ``train`` may mix a human pool
    with a pseudo-labeled pool; labels are class indices either way. An
    ``evaluator`` callback replaces the built-in validation metric when the
    validation set must be scored in a wider label space than the model's.
    """
    config.validate()
    labels_all = train.labels if isinstance(train, LabeledData) else np.concatenate(
        [train.human.labels, train.pseudo.labels]
    )
    if labels_all.size == 0:
        raise ConfigurationError("training data is empty")
    if labels_all.min() < 0 or labels_all.max() >= model.n_classes:
        raise ConfigurationError(
            f"labels must be class indices in [0, {model.n_classes}), "
            f"got range [{labels_all.min()}, {labels_all.max()}]"
        )
    if config.epochs == 0:
        return TrainResult(copy_model(model), [], best_epoch=-1, best_val_acc=None)

    work = copy_model(model)
    rng = np.random.default_rng(config.seed)
    optimizer = SGDOptimizer(config)
    if isinstance(train, LabeledData):
        pool_features, pool_labels = train.features, train.labels
    else:
        pool_features = np.concatenate([train.human.features, train.pseudo.features])
        pool_labels = labels_all

    history: list[EpochRecord] = []
    best: ClassifierModel | None = None
    best_acc = -np.inf
    best_epoch = -1
    for epoch in range(config.epochs):
        if work.oltr_enabled:
            refresh_centroids(work, pool_features, pool_labels)
        lr_scale = config.lr_decay_ratio ** (epoch // config.lr_decay_epochs)
        losses = []
        for batch_idx, batch in enumerate(_epoch_batches(train, config.batch_size, rng)):
            cache = forward_cache(work, batch.features)
            loss, dlogits = cross_entropy_loss(cache.logits, batch.labels)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    "loss is not finite",
                    epoch=epoch,
                    batch=batch_idx,
                    lrs={
                        "feature": config.lr_feature * lr_scale,
                        "classifier": config.lr_classifier * lr_scale,
                        "memory": config.lr_memory * lr_scale,
                    },
                )
            grads = backward(work, cache, dlogits)
            optimizer.step(work, grads, lr_scale)
            losses.append(loss)
        if evaluator is not None:
            val_acc = evaluator(work)
        elif val is not None:
            val_acc = evaluate_class_avg(work, val)
        else:
            val_acc = None
        history.append(EpochRecord(epoch, float(np.mean(losses)), val_acc, lr_scale))
        if val_acc is not None:
            if val_acc > best_acc:
                best_acc = val_acc
                best = copy_model(work)
                best_epoch = epoch
        else:
            best = work
            best_epoch = epoch

    assert best is not None
    best.version = model.version + 1
    return TrainResult(best, history, best_epoch, best_acc if np.isfinite(best_acc) else None)


def save_model(model: ClassifierModel, path: str | Path) -> None:
    """Versioned binary snapshot; little-endian float64 blocks in PARAM_ORDER."""
    d, h, e, k = model.dim_in, model.dim_hidden, model.dim_embed, model.n_classes
    header = struct.pack(
        "<4sIIIIIqqB",
        SNAPSHOT_MAGIC,
        SNAPSHOT_FORMAT_VERSION,
        d,
        h,
        e,
        k,
        model.version,
        model.seed,
        1 if model.oltr_enabled else 0,
    )
    cats = struct.pack(f"<{k}q", *model.categories)
    blocks = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in model.params().values())
    Path(path).write_bytes(header + cats + blocks)


def load_model(path: str | Path) -> ClassifierModel:
    raw = Path(path).read_bytes()
    head_size = struct.calcsize("<4sIIIIIqqB")
    magic, fmt, d, h, e, k, version, seed, oltr = struct.unpack("<4sIIIIIqqB", raw[:head_size])
    if magic != SNAPSHOT_MAGIC:
        raise ConfigurationError(f"not a model snapshot: bad magic {magic!r}")
    if fmt != SNAPSHOT_FORMAT_VERSION:
        raise ConfigurationError(f"unsupported snapshot format version {fmt}")
    offset = head_size
    categories = list(struct.unpack(f"<{k}q", raw[offset : offset + 8 * k]))
    offset += 8 * k

    def block(shape: tuple[int, ...]) -> np.ndarray:
        nonlocal offset
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += 8 * count
        return arr

    return ClassifierModel(
        W1=block((d, h)),
        b1=block((h,)),
        W2=block((h, e)),
        b2=block((e,)),
        Wc=block((e, k)),
        bc=block((k,)),
        memory=block((k, e)),
        gate=block((e,)),
        oltr_enabled=bool(oltr),
        version=version,
        seed=seed,
        categories=categories,
    )
