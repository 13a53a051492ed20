"""Experiment orchestration, evaluation matrices and the command line."""
from .artifacts import load_demos, load_frame, save_demos, save_frame
from .config import COLUMN_FAMILIES, COLUMNS, OUTPUT_ENV, ExperimentConfig, desk_encoder, desk_policy, load_config, output_root
from .pipeline import (
    STAGES,
    Pipeline,
    check_split_hygiene,
    eval_matrix,
    episode_specs,
    experiment_task,
    load_tables,
    make_demos,
    make_sequences,
    reference_frame,
    render_report,
    run_ablations,
    run_experiment,
    scan_template_ids,
)
from .tables import SuccessTable

__all__ = [
    "COLUMNS",
    "COLUMN_FAMILIES",
    "ExperimentConfig",
    "OUTPUT_ENV",
    "Pipeline",
    "STAGES",
    "SuccessTable",
    "check_split_hygiene",
    "desk_encoder",
    "desk_policy",
    "episode_specs",
    "eval_matrix",
    "experiment_task",
    "load_config",
    "load_demos",
    "load_frame",
    "load_tables",
    "make_demos",
    "make_sequences",
    "output_root",
    "reference_frame",
    "render_report",
    "run_ablations",
    "run_experiment",
    "save_demos",
    "save_frame",
    "scan_template_ids",
]
