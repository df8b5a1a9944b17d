"""Synthetic image classification task for the toy pipeline.

Each class is a deterministic geometric pattern: a seeded arrangement of
parts stamped from one shared shape library (square, disk, horizontal and
vertical bars). Every class uses the same parts, so classes differ only in
how the parts are arranged; single local features carry almost no label
information. Each image is its class pattern under a random circular
translation plus Gaussian pixel noise, clipped so the pixel range stays in
[-1, 1]. The shared parts and the translation jitter are what make depth
matter: a linear readout of raw pixels can align neither the shifted
patterns nor their part composition, while pooled deeper features can.
The same spec always yields the same datasets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class SyntheticSpec:
    """Parameters of the generated task.

    train_count / test_count are totals, split across classes as evenly as
    possible (so counts must be at least the class count).
    """

    label_count: int
    image_side: int = 16
    channels: int = 1
    pattern_seed: int = 0
    noise_std: float = 0.45
    shift_max: int = 6
    train_count: int = 1500
    test_count: int = 750

    def __post_init__(self):
        if self.label_count < 2:
            raise ValueError(f"label count must be >= 2, got {self.label_count}")
        if self.image_side < 4:
            raise ValueError(f"image side must be >= 4, got {self.image_side}")
        if self.channels != 1:
            raise ValueError("only single-channel images are supported")
        if self.noise_std < 0:
            raise ValueError("noise std must be non-negative")
        if not 0 <= self.shift_max < self.image_side:
            raise ValueError("shift bound must lie in [0, image side)")
        if self.train_count < self.label_count or self.test_count < self.label_count:
            raise ValueError("need at least one image per class in each split")


@dataclass
class Dataset:
    """Images in NHWC layout (float32, range [-1, 1]) with integer labels."""

    train_images: np.ndarray
    train_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray


PARTS_PER_PATTERN = 3
PART_AMPLITUDE = 0.9
_MIN_PATTERN_GAP = 0.40  # of image side, L2 between class prototypes


def _part_library() -> list[np.ndarray]:
    disk = np.zeros((5, 5))
    yy, xx = np.mgrid[0:5, 0:5]
    disk[(yy - 2) ** 2 + (xx - 2) ** 2 <= 4] = 1.0
    return [np.ones((4, 4)), disk, np.ones((2, 7)), np.ones((7, 2))]


def _stamp(canvas: np.ndarray, part: np.ndarray, row: int, col: int, amp: float) -> None:
    # wraps around the canvas edges, matching the circular image shifts
    side = canvas.shape[0]
    rows = np.arange(row, row + part.shape[0]) % side
    cols = np.arange(col, col + part.shape[1]) % side
    canvas[np.ix_(rows, cols)] += amp * part


def _make_pattern(rng: np.random.Generator, side: int) -> np.ndarray:
    parts = _part_library()
    canvas = np.zeros((side, side), dtype=np.float64)
    for _ in range(PARTS_PER_PATTERN):
        part = parts[int(rng.integers(len(parts)))]
        _stamp(canvas, part, int(rng.integers(side)), int(rng.integers(side)), PART_AMPLITUDE)
    return np.clip(canvas, -1.0, 1.0)


def class_patterns(spec: SyntheticSpec) -> np.ndarray:
    """The noise-free prototype image of every class.

    Re-draws a pattern (deterministically) when it lands too close to an
    already chosen class, so classes cannot collapse onto each other.
    """
    side = spec.image_side
    patterns: list[np.ndarray] = []
    min_gap = _MIN_PATTERN_GAP * side
    for k in range(spec.label_count):
        rng = np.random.default_rng([spec.pattern_seed, k])
        pattern = _make_pattern(rng, side)
        tries = 0
        while patterns and tries < 25:
            gap = min(float(np.linalg.norm(pattern - p)) for p in patterns)
            if gap >= min_gap:
                break
            pattern = _make_pattern(rng, side)
            tries += 1
        patterns.append(pattern)
    return np.stack(patterns)


def _split(total: int, classes: int) -> list[int]:
    base, extra = divmod(total, classes)
    return [base + (1 if k < extra else 0) for k in range(classes)]


def _render_split(
    patterns: np.ndarray, counts: list[int], spec: SyntheticSpec, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    images = []
    labels = []
    side = patterns.shape[1]
    for k, count in enumerate(counts):
        base = np.repeat(patterns[k][np.newaxis], count, axis=0)
        if spec.shift_max > 0:
            shifts = rng.integers(-spec.shift_max, spec.shift_max + 1, size=(count, 2))
            for i in range(count):
                base[i] = np.roll(base[i], tuple(shifts[i]), axis=(0, 1))
        noise = spec.noise_std * rng.standard_normal((count, side, side))
        images.append(np.clip(base + noise, -1.0, 1.0))
        labels.append(np.full(count, k, dtype=np.int64))
    stacked = np.concatenate(images).astype(np.float32)[..., np.newaxis]
    return stacked, np.concatenate(labels)


def generate_dataset(spec: SyntheticSpec) -> Dataset:
    """Deterministically generate the train and test splits."""
    patterns = class_patterns(spec)
    train_rng = np.random.default_rng([spec.pattern_seed, 1_000_001])
    test_rng = np.random.default_rng([spec.pattern_seed, 2_000_002])
    train_images, train_labels = _render_split(
        patterns, _split(spec.train_count, spec.label_count), spec, train_rng
    )
    test_images, test_labels = _render_split(
        patterns, _split(spec.test_count, spec.label_count), spec, test_rng
    )
    return Dataset(train_images, train_labels, test_images, test_labels)
