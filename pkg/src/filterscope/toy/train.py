"""Training loops: full network, frozen-trunk probes, and masked retraining.

All loops use mini-batch gradient descent with Nesterov momentum, L2
regularization and a stepped learning-rate schedule (the rate is
multiplied by a decay factor every fixed number of epochs). Runs are
deterministic for a fixed seed and configuration.

Probe training never touches the trunk: the trunk activations are
computed once per split and the probe head trains on those cached
features. Masked retraining keeps dropped head weights at exactly zero
through every update.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..afcc import AfccMask, apply_mask
from ..bundle import FieldBundle
from .data import Dataset
from .net import (
    TinyCnn,
    compute_gradients,
    flatten_filter_major,
    softmax,
    unflatten_filter_major,
)


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""

    def __init__(self, epoch: int):
        super().__init__(f"training diverged (non-finite loss) at epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    l2: float = 1e-4
    decay_factor: float = 0.5
    decay_every: int = 8
    batch_size: int = 50
    epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.l2 < 0:
            raise ValueError("l2 coefficient must be non-negative")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay factor must lie in (0, 1]")
        if self.decay_every < 1:
            raise ValueError("decay interval must be >= 1 epochs")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch size must be >= 1 and epochs >= 0")

    def rate_at(self, epoch: int) -> float:
        return self.learning_rate * self.decay_factor ** (epoch // self.decay_every)


@dataclass
class TrainResult:
    test_accuracies: list[float] = field(default_factory=list)
    train_losses: list[float] = field(default_factory=list)

    @property
    def final_accuracy(self) -> float:
        return self.test_accuracies[-1]


@dataclass
class ProbeResult:
    """A trained probe head at one depth plus its single-filter matrices."""

    depth: int
    head_weights: np.ndarray  # (filters * units, labels), filter-major rows
    accuracy: float
    bundle: FieldBundle
    filter_count: int
    units_per_filter: int
    label_count: int
    eval_split: str


@dataclass
class AfccRetrainResult:
    accuracy: float
    head_weights: np.ndarray
    epochs: int


class NesterovSgd:
    """SGD with Nesterov momentum: v = mu*v + g; p -= lr * (g + mu*v)."""

    def __init__(self, params: dict[str, np.ndarray], momentum: float):
        self.momentum = momentum
        self.velocity = {name: np.zeros_like(p) for name, p in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        mu = self.momentum
        for name, param in params.items():
            v = self.velocity[name]
            v *= mu
            v += grads[name]
            param -= lr * (grads[name] + mu * v)


def evaluate(net: TinyCnn, images: np.ndarray, labels: np.ndarray, batch_size: int = 512) -> float:
    correct = 0
    for start in range(0, images.shape[0], batch_size):
        logits = net.forward(images[start : start + batch_size]).logits
        correct += int((logits.argmax(axis=1) == labels[start : start + batch_size]).sum())
    return correct / images.shape[0]


def head_accuracy(features: np.ndarray, weights: np.ndarray, labels: np.ndarray) -> float:
    return float(((features @ weights).argmax(axis=1) == labels).mean())


def train_full(net: TinyCnn, data: Dataset, config: TrainConfig) -> TrainResult:
    """Stage 1: train the whole network; returns the per-epoch curves."""
    rng = np.random.default_rng([config.seed, 77])
    params = net.parameters()
    optimizer = NesterovSgd(params, config.momentum)
    count = data.train_images.shape[0]
    result = TrainResult()
    for epoch in range(config.epochs):
        lr = config.rate_at(epoch)
        order = rng.permutation(count)
        loss_sum = 0.0
        batches = 0
        for start in range(0, count, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = compute_gradients(
                net, data.train_images[idx], data.train_labels[idx], config.l2
            )
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch)
            optimizer.step(params, grads, lr)
            loss_sum += loss
            batches += 1
        result.train_losses.append(loss_sum / batches)
        result.test_accuracies.append(evaluate(net, data.test_images, data.test_labels))
    return result


def _head_grad(
    features: np.ndarray, labels: np.ndarray, weights: np.ndarray, l2: float
) -> tuple[float, np.ndarray]:
    logits = features @ weights
    probs = softmax(logits)
    batch = features.shape[0]
    grad_logits = probs.copy()
    grad_logits[np.arange(batch), labels] -= 1.0
    grad_logits /= batch
    grad = features.T @ grad_logits
    if l2 > 0.0:
        grad = grad + l2 * weights
    loss = float(-np.log(probs[np.arange(batch), labels] + 1e-300).mean())
    return loss, grad


def _train_head(
    weights: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
    shuffle_rng: np.random.Generator,
    keep: np.ndarray | None = None,
) -> None:
    """Train a linear head in place; optionally pin dropped weights to zero."""
    velocity = np.zeros_like(weights)
    count = features.shape[0]
    for epoch in range(config.epochs):
        lr = config.rate_at(epoch)
        order = shuffle_rng.permutation(count)
        for start in range(0, count, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grad = _head_grad(features[idx], labels[idx], weights, config.l2)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch)
            if keep is not None:
                grad = grad * keep
            velocity *= config.momentum
            velocity += grad
            weights -= lr * (grad + config.momentum * velocity)
            if keep is not None:
                weights[~keep] = 0.0


def train_probe(
    net: TinyCnn,
    depth: int,
    data: Dataset,
    config: TrainConfig,
    eval_split: str = "test",
    layer_name: str | None = None,
) -> ProbeResult:
    """Stage 2 + 3: train a fresh bias-free head on frozen features.

    The returned probe carries the single-filter field matrices computed
    on the chosen evaluation split (the split is recorded in the bundle's
    layer name).
    """
    if eval_split not in ("train", "test"):
        raise ValueError(f"eval split must be 'train' or 'test', got {eval_split!r}")
    features_train = net.features_at(depth, data.train_images)
    features_test = net.features_at(depth, data.test_images)
    dim = features_train.shape[1]
    init_rng = np.random.default_rng([config.seed, depth, 13])
    limit = np.sqrt(1.0 / dim)
    weights = init_rng.uniform(-limit, limit, size=(dim, net.label_count)).astype(net.dtype)
    _train_head(
        weights,
        features_train,
        data.train_labels,
        config,
        shuffle_rng=np.random.default_rng([config.seed, depth, 29]),
    )
    accuracy = head_accuracy(features_test, weights, data.test_labels)
    filter_count = net.filters_at(depth)
    units = net.units_per_filter_at(depth)
    if eval_split == "train":
        features_eval, labels_eval = features_train, data.train_labels
    else:
        features_eval, labels_eval = features_test, data.test_labels
    means = per_label_mean_features(features_eval, labels_eval, net.label_count)
    matrices = single_filter_field_matrices(means, weights, filter_count, units)
    bundle = FieldBundle(
        layer_name=layer_name or f"toy/depth{depth}/{eval_split}",
        label_count=net.label_count,
        filter_count=filter_count,
        units_per_filter=units,
        matrices=matrices.astype(np.float32),
    )
    return ProbeResult(
        depth=depth,
        head_weights=weights,
        accuracy=accuracy,
        bundle=bundle,
        filter_count=filter_count,
        units_per_filter=units,
        label_count=net.label_count,
        eval_split=eval_split,
    )


def per_label_mean_features(
    features: np.ndarray, labels: np.ndarray, label_count: int
) -> np.ndarray:
    """Mean feature vector per label, float64; errors on an empty label."""
    means = np.zeros((label_count, features.shape[1]), dtype=np.float64)
    for label in range(label_count):
        rows = features[labels == label]
        if rows.shape[0] == 0:
            raise ValueError(f"label {label} has no inputs in the evaluation set")
        means[label] = rows.mean(axis=0, dtype=np.float64)
    return means


def single_filter_field_matrices(
    mean_features: np.ndarray,
    head_weights: np.ndarray,
    filter_count: int,
    units_per_filter: int,
) -> np.ndarray:
    """Float64 per-filter field matrices; their sum is the full-head matrix.

    Entry (f, i, j) is the mean field that label-i inputs produce on output
    j through filter f alone (all other head weights silenced).
    """
    weights = np.asarray(head_weights, dtype=np.float64)
    label_count = mean_features.shape[0]
    matrices = np.empty((filter_count, label_count, label_count), dtype=np.float64)
    for f in range(filter_count):
        block = slice(f * units_per_filter, (f + 1) * units_per_filter)
        matrices[f] = mean_features[:, block] @ weights[block, :]
    return matrices


def full_head_field_matrix(mean_features: np.ndarray, head_weights: np.ndarray) -> np.ndarray:
    return mean_features @ np.asarray(head_weights, dtype=np.float64)


def single_filter_matrices(
    net: TinyCnn,
    probe: ProbeResult,
    images: np.ndarray,
    labels: np.ndarray,
    layer_name: str | None = None,
) -> FieldBundle:
    """Bundle of per-filter field matrices for the probe's depth."""
    features = net.features_at(probe.depth, images)
    means = per_label_mean_features(features, labels, probe.label_count)
    matrices = single_filter_field_matrices(
        means, probe.head_weights, probe.filter_count, probe.units_per_filter
    )
    if layer_name is None:
        layer_name = f"toy/depth{probe.depth}/{probe.eval_split}"
    return FieldBundle(
        layer_name=layer_name,
        label_count=probe.label_count,
        filter_count=probe.filter_count,
        units_per_filter=probe.units_per_filter,
        matrices=matrices.astype(np.float32),
    )


def afcc_retrain(
    net: TinyCnn,
    probe: ProbeResult,
    mask: AfccMask,
    data: Dataset,
    config: TrainConfig,
    train_last_conv: bool = False,
) -> AfccRetrainResult:
    """Retrain the probe head with dropped weights pinned at exactly zero.

    By default only the head updates. With train_last_conv the convolution
    block at the probe depth trains too (mirroring head-plus-last-layer
    retraining); that path updates the net's block in place.
    """
    expected = (probe.filter_count * probe.units_per_filter, probe.label_count)
    if mask.as_weight_mask().shape != expected:
        raise ValueError(
            f"mask shape {mask.as_weight_mask().shape} does not match head {expected}"
        )
    weights = apply_mask(probe.head_weights, mask).astype(net.dtype)
    keep = mask.as_weight_mask()
    shuffle_rng = np.random.default_rng([config.seed, probe.depth, 43])
    if not train_last_conv:
        features_train = net.features_at(probe.depth, data.train_images)
        _train_head(weights, features_train, data.train_labels, config, shuffle_rng, keep=keep)
        features_test = net.features_at(probe.depth, data.test_images)
        accuracy = head_accuracy(features_test, weights, data.test_labels)
    else:
        accuracy = _retrain_with_block(net, probe, weights, keep, data, config, shuffle_rng)
    assert not weights[~keep].any(), "dropped head weights drifted from zero"
    return AfccRetrainResult(accuracy=accuracy, head_weights=weights, epochs=config.epochs)


def _retrain_with_block(
    net: TinyCnn,
    probe: ProbeResult,
    weights: np.ndarray,
    keep: np.ndarray,
    data: Dataset,
    config: TrainConfig,
    shuffle_rng: np.random.Generator,
) -> float:
    """Head plus probe-depth convolution block retraining (mutates the block)."""
    block = net.blocks[probe.depth - 1]
    inputs_train = net.activations_at(probe.depth - 1, data.train_images)
    params = {
        "head": weights,
        "conv.weight": block.conv.weight,
        "conv.bias": block.conv.bias,
    }
    optimizer = NesterovSgd(params, config.momentum)
    count = inputs_train.shape[0]
    for epoch in range(config.epochs):
        lr = config.rate_at(epoch)
        order = shuffle_rng.permutation(count)
        for start in range(0, count, config.batch_size):
            idx = order[start : start + config.batch_size]
            activation = block.forward(inputs_train[idx])
            features = flatten_filter_major(activation)
            logits = features @ weights
            probs = softmax(logits)
            batch = idx.shape[0]
            grad_logits = probs.copy()
            grad_logits[np.arange(batch), data.train_labels[idx]] -= 1.0
            grad_logits /= batch
            if not np.isfinite(probs).all():
                raise TrainingDivergedError(epoch)
            grad_head = features.T @ grad_logits + config.l2 * weights
            grad_head *= keep
            grad_features = grad_logits @ weights.T
            block.backward(unflatten_filter_major(grad_features.astype(net.dtype), activation.shape))
            grads = {
                "head": grad_head.astype(net.dtype),
                "conv.weight": block.conv.grad_weight + config.l2 * block.conv.weight,
                "conv.bias": block.conv.grad_bias + config.l2 * block.conv.bias,
            }
            optimizer.step(params, grads, lr)
            weights[~keep] = 0.0
    features_test = net.features_at(probe.depth, data.test_images)
    return head_accuracy(features_test, weights, data.test_labels)
