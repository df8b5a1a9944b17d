"""Small block-structured convolutional network with a bias-free head.

The network is a chain of blocks (3x3 convolution, rectifier, 2x2 max
pool) followed by one fully connected head mapping the flattened last
block output to the label fields. The head carries no bias so that each
filter's contribution to the output fields stays visible.

Flattened block outputs are filter-major: flat index = filter * units +
unit, where unit walks the filter's spatial grid row-major. Probe heads
and pruning masks rely on that ordering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import Conv2D, Linear, MaxPool2x2, ReLU


@dataclass
class ForwardState:
    """Everything a forward pass produces: per-block outputs and head fields."""

    block_outputs: list[np.ndarray]  # NHWC, one per block, post-pool
    features: np.ndarray  # flattened last block output, filter-major
    logits: np.ndarray  # one field per label


def flatten_filter_major(activation: np.ndarray) -> np.ndarray:
    batch, height, width, channels = activation.shape
    return np.ascontiguousarray(activation.transpose(0, 3, 1, 2)).reshape(
        batch, channels * height * width
    )


def unflatten_filter_major(flat: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    batch, height, width, channels = shape
    return np.ascontiguousarray(
        flat.reshape(batch, channels, height, width).transpose(0, 2, 3, 1)
    )


class _Block:
    def __init__(self, in_channels: int, filters: int, rng, dtype):
        self.conv = Conv2D(in_channels, filters, rng, dtype)
        self.relu = ReLU()
        self.pool = MaxPool2x2()

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.pool.forward(self.relu.forward(self.conv.forward(x)))

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return self.conv.backward(self.relu.backward(self.pool.backward(grad_out)))


class TinyCnn:
    def __init__(
        self,
        image_side: int = 16,
        in_channels: int = 1,
        filters_per_block: tuple[int, ...] = (8, 16, 32),
        label_count: int = 5,
        seed: int = 0,
        dtype=np.float32,
    ):
        if image_side % (2 ** len(filters_per_block)) != 0:
            raise ValueError(
                f"image side {image_side} not divisible by 2^{len(filters_per_block)} pools"
            )
        self.image_side = image_side
        self.label_count = label_count
        self.filters_per_block = tuple(filters_per_block)
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.blocks: list[_Block] = []
        channels = in_channels
        side = image_side
        for filters in filters_per_block:
            self.blocks.append(_Block(channels, filters, rng, dtype))
            channels = filters
            side //= 2
        self.final_side = side
        self.head = Linear(channels * side * side, label_count, rng, dtype, bias=False)

    # -- geometry ---------------------------------------------------------

    def side_at(self, depth: int) -> int:
        """Spatial side of the block output at 1-based depth."""
        self._check_depth(depth)
        return self.image_side // (2**depth)

    def units_per_filter_at(self, depth: int) -> int:
        return self.side_at(depth) ** 2

    def filters_at(self, depth: int) -> int:
        self._check_depth(depth)
        return self.filters_per_block[depth - 1]

    def _check_depth(self, depth: int) -> None:
        if not 1 <= depth <= len(self.blocks):
            raise ValueError(f"depth must be in [1, {len(self.blocks)}], got {depth}")

    # -- passes -----------------------------------------------------------

    def forward(self, images: np.ndarray) -> ForwardState:
        x = np.asarray(images, dtype=self.dtype)
        block_outputs = []
        for block in self.blocks:
            x = block.forward(x)
            block_outputs.append(x)
        features = flatten_filter_major(x)
        logits = self.head.forward(features)
        return ForwardState(block_outputs=block_outputs, features=features, logits=logits)

    def backward(self, grad_logits: np.ndarray, last_state: ForwardState) -> dict[str, np.ndarray]:
        grad_features = self.head.backward(grad_logits)
        grad = unflatten_filter_major(grad_features, last_state.block_outputs[-1].shape)
        for block in reversed(self.blocks):
            grad = block.backward(grad)
        return self.gradients()

    def activations_at(self, depth: int, images: np.ndarray, batch_size: int = 512) -> np.ndarray:
        """NHWC block output at 1-based depth; depth 0 returns the images."""
        if depth == 0:
            return np.asarray(images, dtype=self.dtype)
        self._check_depth(depth)
        chunks = []
        for start in range(0, images.shape[0], batch_size):
            x = np.asarray(images[start : start + batch_size], dtype=self.dtype)
            for block in self.blocks[:depth]:
                x = block.forward(x)
            chunks.append(x)
        return np.concatenate(chunks)

    def features_at(self, depth: int, images: np.ndarray, batch_size: int = 512) -> np.ndarray:
        """Flattened block-depth activations, computed in evaluation batches."""
        return flatten_filter_major(self.activations_at(depth, images, batch_size))

    # -- parameters -------------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        params: dict[str, np.ndarray] = {}
        for i, block in enumerate(self.blocks):
            params[f"block{i}.conv.weight"] = block.conv.weight
            params[f"block{i}.conv.bias"] = block.conv.bias
        params["head.weight"] = self.head.weight
        return params

    def set_parameter(self, name: str, value: np.ndarray) -> None:
        parts = name.split(".")
        if parts[0] == "head":
            self.head.weight = value
            return
        block = self.blocks[int(parts[0].removeprefix("block"))]
        setattr(block.conv, parts[2], value)

    def gradients(self) -> dict[str, np.ndarray]:
        grads: dict[str, np.ndarray] = {}
        for i, block in enumerate(self.blocks):
            grads[f"block{i}.conv.weight"] = block.conv.grad_weight
            grads[f"block{i}.conv.bias"] = block.conv.grad_bias
        grads["head.weight"] = self.head.grad_weight
        return grads


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy, accumulated in float64."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(log_norm - z[np.arange(z.shape[0]), labels]))


def regularization_term(net: TinyCnn, l2: float) -> float:
    return 0.5 * l2 * sum(float(np.sum(np.square(p, dtype=np.float64))) for p in net.parameters().values())


def total_loss(net: TinyCnn, images: np.ndarray, labels: np.ndarray, l2: float) -> float:
    state = net.forward(images)
    return cross_entropy(state.logits, labels) + regularization_term(net, l2)


def compute_gradients(
    net: TinyCnn, images: np.ndarray, labels: np.ndarray, l2: float = 0.0
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss value and analytic gradients of mean cross-entropy plus L2.

    The L2 term is 0.5 * l2 * sum of squared parameters, so its gradient
    contribution is exactly l2 * parameter.
    """
    state = net.forward(images)
    probs = softmax(state.logits)
    batch = images.shape[0]
    grad_logits = probs.copy()
    grad_logits[np.arange(batch), labels] -= 1.0
    grad_logits = (grad_logits / batch).astype(net.dtype)
    grads = net.backward(grad_logits, state)
    if l2 > 0.0:
        for name, param in net.parameters().items():
            grads[name] = grads[name] + (l2 * param).astype(param.dtype)
    loss = cross_entropy(state.logits, labels) + regularization_term(net, l2)
    return loss, grads


def gradient_check(
    seed: int = 0,
    image_side: int = 8,
    filters_per_block: tuple[int, ...] = (3, 4),
    label_count: int = 3,
    batch: int = 4,
    l2: float = 1e-3,
    step: float = 1e-6,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs in float64 on a small randomized net covering every layer type.
    The relative-error denominator is floored at 1e-4 so elements with
    near-zero gradient are compared absolutely.
    """
    rng = np.random.default_rng(seed)
    net = TinyCnn(
        image_side=image_side,
        in_channels=1,
        filters_per_block=filters_per_block,
        label_count=label_count,
        seed=seed + 1,
        dtype=np.float64,
    )
    images = rng.uniform(-1, 1, size=(batch, image_side, image_side, 1))
    labels = rng.integers(0, label_count, size=batch)
    _, analytic = compute_gradients(net, images, labels, l2)
    worst = 0.0
    for name, param in net.parameters().items():
        flat = param.reshape(-1)
        grad_flat = analytic[name].reshape(-1)
        for idx in range(flat.shape[0]):
            original = flat[idx]
            flat[idx] = original + step
            loss_plus = total_loss(net, images, labels, l2)
            flat[idx] = original - step
            loss_minus = total_loss(net, images, labels, l2)
            flat[idx] = original
            numeric = (loss_plus - loss_minus) / (2.0 * step)
            denom = max(abs(grad_flat[idx]), abs(numeric), 1e-4)
            worst = max(worst, abs(grad_flat[idx] - numeric) / denom)
    return worst
