"""
Bench Package.

Experiment configuration, named presets, run records and the runner
behind the ``simulate``, ``meta_train``, ``meta_test``, ``oracle`` and
``export_latents`` management commands.
"""

__version__ = "0.1.0"

from .exceptions import ExperimentConfigError, UnknownPresetError
from .serializers import ExperimentConfig, Hyperparameters, TaskModel
from .presets import TASK_SETS, DYNAMIC_SCHEDULES, preset_names, resolve_tasks, resolve_dynamic
from .records import RunRecord, CsvAppender, run_directory, curve_rows, read_rows
from .runner import (
    run_seeds,
    resolve_checkpoint,
    simulate_experiment,
    meta_train_experiment,
    meta_test_experiment,
    dynamic_experiment,
    oracle_experiment,
    export_latents_experiment,
)


__all__ = [
    "__version__",

    # Exceptions
    "ExperimentConfigError",
    "UnknownPresetError",

    # Configuration
    "ExperimentConfig",
    "Hyperparameters",
    "TaskModel",

    # Presets
    "TASK_SETS",
    "DYNAMIC_SCHEDULES",
    "preset_names",
    "resolve_tasks",
    "resolve_dynamic",

    # Records
    "RunRecord",
    "CsvAppender",
    "run_directory",
    "curve_rows",
    "read_rows",

    # Runner
    "run_seeds",
    "resolve_checkpoint",
    "simulate_experiment",
    "meta_train_experiment",
    "meta_test_experiment",
    "dynamic_experiment",
    "oracle_experiment",
    "export_latents_experiment",
]
