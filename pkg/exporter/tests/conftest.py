from __future__ import annotations

import pytest
import torch

from fieldexport.zoo import SmallConvNet, synthetic_dataset, train_head

LABEL_COUNT = 5

_acceptance_lines: list[str] = []


def record_criterion(line: str) -> None:
    _acceptance_lines.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in _acceptance_lines:
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def workspace(tmp_path_factory):
    """A saved dataset file plus a model with a trained bias-free head."""
    root = tmp_path_factory.mktemp("export-workspace")
    torch.manual_seed(0)
    data = synthetic_dataset(label_count=LABEL_COUNT)
    data_path = root / "data.pt"
    torch.save(data, data_path)
    model = SmallConvNet(label_count=LABEL_COUNT)
    train_images, train_labels = data["train"]
    accuracy = train_head(model, train_images, train_labels)
    assert accuracy > 0.8, f"head failed to train (accuracy {accuracy:.3f})"
    model_path = root / "model.pt"
    torch.save(model, model_path)
    return {
        "root": root,
        "model_path": model_path,
        "data_path": data_path,
        "accuracy": accuracy,
    }
