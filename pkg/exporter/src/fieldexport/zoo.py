"""Reference model and dataset-file helpers.

Any exportable model must expose a probe module (whose output feeds the
head after flattening) and a bias-free Linear head. SmallConvNet is the
shape the tests use and documents the contract.

Dataset files are torch pickles holding {"train": (images, labels),
"test": (images, labels)} with NCHW float images.
"""

from __future__ import annotations

import torch
from torch import nn


class FlatProbeNet(nn.Module):
    """Minimal exportable contract: features -> flatten -> bias-free head."""

    def __init__(self, features: nn.Module, head: nn.Linear):
        super().__init__()
        self.features = features
        self.head = head

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(torch.flatten(self.features(x), 1))


class SmallConvNet(nn.Module):
    def __init__(self, in_channels: int = 1, filters: tuple[int, int] = (6, 10),
                 image_side: int = 16, label_count: int = 5):
        super().__init__()
        first, second = filters
        self.features = nn.Sequential(
            nn.Conv2d(in_channels, first, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(first, second, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
        )
        side = image_side // 4
        self.head = nn.Linear(second * side * side, label_count, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(torch.flatten(self.features(x), 1))


def synthetic_dataset(
    label_count: int = 5,
    image_side: int = 16,
    train_per_class: int = 80,
    test_per_class: int = 40,
    noise_std: float = 0.3,
    seed: int = 0,
) -> dict:
    """Class-template images plus Gaussian noise, as a dataset-file dict."""
    generator = torch.Generator().manual_seed(seed)
    templates = torch.randn(label_count, 1, image_side, image_side, generator=generator)

    def split(per_class: int) -> tuple[torch.Tensor, torch.Tensor]:
        images, labels = [], []
        for k in range(label_count):
            noise = noise_std * torch.randn(
                per_class, 1, image_side, image_side, generator=generator
            )
            images.append(templates[k] + noise)
            labels.append(torch.full((per_class,), k, dtype=torch.long))
        return torch.cat(images), torch.cat(labels)

    return {"train": split(train_per_class), "test": split(test_per_class)}


def train_head(model: nn.Module, images: torch.Tensor, labels: torch.Tensor,
               epochs: int = 20, lr: float = 0.05, batch_size: int = 50,
               seed: int = 1) -> float:
    """Train only the (bias-free) head on frozen features; returns accuracy."""
    for parameter in model.features.parameters():
        parameter.requires_grad_(False)
    model.eval()
    with torch.no_grad():
        feats = torch.flatten(model.features(images), 1)
    optimizer = torch.optim.SGD(model.head.parameters(), lr=lr, momentum=0.9,
                                nesterov=True, weight_decay=1e-5)
    loss_fn = nn.CrossEntropyLoss()
    generator = torch.Generator().manual_seed(seed)
    for _ in range(epochs):
        order = torch.randperm(feats.shape[0], generator=generator)
        for start in range(0, feats.shape[0], batch_size):
            idx = order[start : start + batch_size]
            optimizer.zero_grad()
            loss = loss_fn(model.head(feats[idx]), labels[idx])
            loss.backward()
            optimizer.step()
    with torch.no_grad():
        accuracy = (model.head(feats).argmax(dim=1) == labels).float().mean()
    return float(accuracy)
