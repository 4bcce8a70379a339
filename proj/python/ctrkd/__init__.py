"""CTR prediction models trained with knowledge distillation."""

from ._ctrkd import (
    CheckpointError,
    ConfigError,
    Dataset,
    Metrics,
    Model,
    Splits,
    SyntheticSpec,
    TrainingError,
    auc,
    evaluate,
    load_model,
    preset_spec,
    recipe,
    run_config,
    save_model,
    soft_label_loss,
    synthetic_splits,
    train_student,
    train_teacher,
)

__all__ = [
    "CheckpointError",
    "ConfigError",
    "Dataset",
    "Metrics",
    "Model",
    "Splits",
    "SyntheticSpec",
    "TrainingError",
    "auc",
    "evaluate",
    "load_model",
    "preset_spec",
    "recipe",
    "run_config",
    "save_model",
    "soft_label_loss",
    "synthetic_splits",
    "train_student",
    "train_teacher",
]
