"""Bridge between PyTorch models and the field-matrix analysis formats."""

from .export import ExportConfig, apply_mask_to_model, collect_label_means, export_fields
from .formats import FieldBundle, KeepMask, read_bundle, read_mask, write_bundle, write_mask

__version__ = "0.1.0"

__all__ = [
    "ExportConfig",
    "FieldBundle",
    "KeepMask",
    "apply_mask_to_model",
    "collect_label_means",
    "export_fields",
    "read_bundle",
    "read_mask",
    "write_bundle",
    "write_mask",
]
