"""Acceptance: the full exporter loop against the analysis engine's CLI.

Export fields from a trained model, have the engine validate/analyze the
bundle and build a mask, apply the mask back onto the model head, and
confirm by re-export that dropped weights are zero and the kept count
matches the engine's mask statistics.
"""

import json
import subprocess
import sys
import time

import numpy as np

from conftest import LABEL_COUNT, record_criterion
from fieldexport.export import ExportConfig, apply_mask_to_model, export_fields, load_model


def run_engine(*argv):
    return subprocess.run(
        [sys.executable, "-m", "filterscope.cli", *argv],
        capture_output=True,
        text=True,
        timeout=120,
    )


def test_criterion_11_exporter_loop(workspace, tmp_path):
    start = time.monotonic()
    bundle_path = tmp_path / "probe.ffb"
    config = ExportConfig(
        model_path=str(workspace["model_path"]),
        probe_layer="features",
        label_count=LABEL_COUNT,
        split="test",
        data_path=str(workspace["data_path"]),
        out_path=str(bundle_path),
    )
    bundle = export_fields(config)

    report_path = tmp_path / "probe.report.json"
    analyze = run_engine("analyze", str(bundle_path), "--out", str(report_path))
    assert analyze.returncode == 0, analyze.stderr  # engine validated + analyzed

    mask_path = tmp_path / "probe.afm"
    masked = run_engine(
        "mask", str(report_path), "--units", str(bundle.units_per_filter),
        "--out", str(mask_path),
    )
    assert masked.returncode == 0, masked.stderr
    stats = json.loads(masked.stdout)
    assert stats["kept"] + stats["zeroed"] == 10 * 16 * LABEL_COUNT

    masked_model_path = tmp_path / "masked.pt"
    mask = apply_mask_to_model(workspace["model_path"], mask_path, masked_model_path)
    assert int(mask.keep.sum()) == stats["kept"]

    # dropped head weights are zero in the saved model
    head = load_model(masked_model_path).head.weight.detach().numpy()
    keep = mask.as_weight_mask().T
    assert not head[~keep].any()
    assert int(keep.sum()) == stats["kept"]

    # re-export: a dropped (filter, label) pair contributes no field at all
    re_bundle_path = tmp_path / "masked.ffb"
    re_config = ExportConfig(
        model_path=str(masked_model_path),
        probe_layer="features",
        label_count=LABEL_COUNT,
        split="test",
        data_path=str(workspace["data_path"]),
        out_path=str(re_bundle_path),
    )
    re_bundle = export_fields(re_config)
    dropped = ~mask.keep[:, 0, :]  # (filters, labels)
    for f in range(re_bundle.filter_count):
        for j in np.flatnonzero(dropped[f]):
            assert not re_bundle.matrices[f, :, j].any()

    # the engine accepts the re-exported bundle as well
    re_analyze = run_engine("analyze", str(re_bundle_path), "--out", str(tmp_path / "re.json"))
    assert re_analyze.returncode == 0, re_analyze.stderr

    elapsed = time.monotonic() - start
    assert elapsed <= 5 * 60
    record_criterion(
        f"criterion 11: PASS - exporter loop: kept {stats['kept']} of "
        f"{stats['kept'] + stats['zeroed']} head weights, dropped weights zero "
        f"after re-export; {elapsed:.0f}s"
    )
