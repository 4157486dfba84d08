from .checkpoint import CheckpointBundle, load_checkpoint, make_bundle, save_checkpoint
from .config import (
    ExperimentConfig,
    InferenceParams,
    ScheduleParams,
    TrainingParams,
    config_fingerprint,
    load_config,
    paper_profile,
    toy_profile,
    validate_config,
)
from .tasks import Pipeline, TaskResult
from .training import build_experiment_schedule, train_ldm, train_vae

__all__ = [
    "CheckpointBundle",
    "ExperimentConfig",
    "InferenceParams",
    "Pipeline",
    "ScheduleParams",
    "TaskResult",
    "TrainingParams",
    "build_experiment_schedule",
    "config_fingerprint",
    "load_checkpoint",
    "load_config",
    "make_bundle",
    "paper_profile",
    "save_checkpoint",
    "toy_profile",
    "train_ldm",
    "train_vae",
    "validate_config",
]
