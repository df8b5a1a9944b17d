"""Self-contained miniature deep-learning lab for exercising the analysis."""

from .data import Dataset, SyntheticSpec, class_patterns, generate_dataset
from .net import TinyCnn, compute_gradients, gradient_check, total_loss
from .pipeline import (
    DepthRow,
    PipelineConfig,
    PipelineResult,
    config_from_dict,
    load_pipeline_config,
    reseed,
    run_pipeline,
    summary_csv_text,
    write_artifacts,
)
from .train import (
    AfccRetrainResult,
    ProbeResult,
    TrainConfig,
    TrainResult,
    TrainingDivergedError,
    afcc_retrain,
    evaluate,
    full_head_field_matrix,
    per_label_mean_features,
    single_filter_field_matrices,
    single_filter_matrices,
    train_full,
    train_probe,
)

__all__ = [
    "AfccRetrainResult",
    "Dataset",
    "DepthRow",
    "PipelineConfig",
    "PipelineResult",
    "ProbeResult",
    "SyntheticSpec",
    "TinyCnn",
    "TrainConfig",
    "TrainResult",
    "TrainingDivergedError",
    "afcc_retrain",
    "class_patterns",
    "compute_gradients",
    "config_from_dict",
    "evaluate",
    "full_head_field_matrix",
    "generate_dataset",
    "gradient_check",
    "load_pipeline_config",
    "per_label_mean_features",
    "reseed",
    "run_pipeline",
    "single_filter_field_matrices",
    "single_filter_matrices",
    "summary_csv_text",
    "total_loss",
    "train_full",
    "train_probe",
    "write_artifacts",
]
