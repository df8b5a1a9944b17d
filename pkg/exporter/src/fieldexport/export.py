"""Export per-filter field matrices from a model; apply masks to its head.

Filter-to-index mapping (pinned for PyTorch): filter f is the probe
module's output channel f (NCHW), unit u walks that channel's spatial grid
row-major, and the flat feature index is f * units + u. That matches a
plain `flatten(activation, 1)` on NCHW activations and the filter-major
layout the mask format assumes. Probe modules with already-flat outputs
are treated as one unit per filter.

Per-label means accumulate in float64 over the dataset's fixed order, so
repeated exports are reproducible at float tolerance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .formats import FieldBundle, KeepMask, read_mask, write_bundle


@dataclass
class ExportConfig:
    model_path: str
    probe_layer: str
    label_count: int
    split: str  # "train" or "test"
    data_path: str
    out_path: str
    head_layer: str = "head"
    layer_name: str | None = None

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")

    @classmethod
    def from_file(cls, path) -> "ExportConfig":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ValueError(f"{path}: bad export config: {exc}") from exc


def load_model(path) -> nn.Module:
    model = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(model, nn.Module):
        raise ValueError(f"{path} does not contain a torch module")
    model.eval()
    return model


def _submodule(model: nn.Module, name: str) -> nn.Module:
    modules = dict(model.named_modules())
    if name not in modules:
        raise ValueError(
            f"model has no module {name!r}; available: {sorted(m for m in modules if m)}"
        )
    return modules[name]


def _probe_geometry(activation: torch.Tensor) -> tuple[int, int]:
    if activation.dim() == 4:  # NCHW
        return activation.shape[1], activation.shape[2] * activation.shape[3]
    if activation.dim() == 2:  # already flat: one unit per filter
        return activation.shape[1], 1
    raise ValueError(f"unsupported probe activation shape {tuple(activation.shape)}")


def collect_label_means(
    model: nn.Module,
    probe: nn.Module,
    images: torch.Tensor,
    labels: torch.Tensor,
    label_count: int,
    batch_size: int = 256,
) -> tuple[np.ndarray, int, int]:
    """Per-label mean of the flattened probe activation, in float64.

    Returns (means of shape (label_count, filters*units), filters, units).
    """
    captured: list[torch.Tensor] = []
    handle = probe.register_forward_hook(lambda module, args, output: captured.append(output))
    sums = None
    counts = np.zeros(label_count, dtype=np.int64)
    filters = units = None
    try:
        with torch.no_grad():
            for start in range(0, images.shape[0], batch_size):
                captured.clear()
                model(images[start : start + batch_size])
                activation = captured[-1]
                filters, units = _probe_geometry(activation)
                flat = torch.flatten(activation, 1).double().numpy()
                if sums is None:
                    sums = np.zeros((label_count, flat.shape[1]), dtype=np.float64)
                batch_labels = labels[start : start + batch_size].numpy()
                for k in range(label_count):
                    rows = flat[batch_labels == k]
                    if rows.shape[0]:
                        sums[k] += rows.sum(axis=0)
                        counts[k] += rows.shape[0]
    finally:
        handle.remove()
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise ValueError(f"labels {empty.tolist()} have no inputs in the chosen split")
    return sums / counts[:, None], int(filters), int(units)


def _head_linear(model: nn.Module, name: str) -> nn.Linear:
    head = _submodule(model, name)
    if not isinstance(head, nn.Linear):
        raise ValueError(f"{name!r} is not a Linear layer")
    if head.bias is not None:
        raise ValueError("head must be trained without output biases")
    return head


def export_fields(config: ExportConfig) -> FieldBundle:
    """Write the FFB1 bundle of single-filter field matrices.

    Matrix entry (i, j) of filter f is the mean head pre-activation on
    output j over split inputs of label i, restricted to filter f's units.
    """
    model = load_model(config.model_path)
    probe = _submodule(model, config.probe_layer)
    head = _head_linear(model, config.head_layer)
    data = torch.load(config.data_path, map_location="cpu", weights_only=False)
    images, labels = data[config.split]
    means, filters, units = collect_label_means(
        model, probe, images, labels, config.label_count
    )
    weight = head.weight.detach().double().numpy()  # (labels, filters*units)
    if weight.shape != (config.label_count, filters * units):
        raise ValueError(
            f"head weight shape {weight.shape} does not match "
            f"{config.label_count} labels x {filters}x{units} probe units"
        )
    matrices = np.empty(
        (filters, config.label_count, config.label_count), dtype=np.float64
    )
    for f in range(filters):
        block = slice(f * units, (f + 1) * units)
        matrices[f] = means[:, block] @ weight[:, block].T
    bundle = FieldBundle(
        layer_name=config.layer_name or f"{config.probe_layer}/{config.split}",
        label_count=config.label_count,
        filter_count=filters,
        units_per_filter=units,
        matrices=matrices.astype(np.float32),
    )
    write_bundle(bundle, config.out_path)
    return bundle


def apply_mask_to_model(model_path, mask_path, out_path, head_layer: str | None = None) -> KeepMask:
    """Zero the dropped head weights and save the model. Idempotent.

    Without an explicit head name, the unique Linear layer matching the
    mask topology is used.
    """
    model = load_model(model_path)
    mask = read_mask(mask_path)
    rows = mask.filter_count * mask.units_per_filter
    if head_layer is None:
        candidates = [
            name
            for name, module in model.named_modules()
            if isinstance(module, nn.Linear)
            and module.weight.shape == (mask.label_count, rows)
        ]
        if len(candidates) != 1:
            raise ValueError(
                f"expected exactly one Linear of shape ({mask.label_count}, {rows}), "
                f"found {candidates}"
            )
        head_layer = candidates[0]
    head = _submodule(model, head_layer)
    if not isinstance(head, nn.Linear) or head.weight.shape != (mask.label_count, rows):
        raise ValueError(f"{head_layer!r} does not match the mask topology")
    keep = torch.from_numpy(mask.as_weight_mask().T.copy())  # (labels, rows)
    with torch.no_grad():
        head.weight.mul_(keep.to(head.weight.dtype))
    torch.save(model, out_path)
    return mask
