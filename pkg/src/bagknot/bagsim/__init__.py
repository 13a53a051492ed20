"""Procedural bag simulator: templates, deformation families, frames, expert, judge."""
from .deform import FAMILIES, FAMILY_RANGES, DeformationParams, drift_params, interpolate, keypoint_positions, sample_family
from .episodes import deformation_sequence, derive_seed, episode_frames, episode_keypoints
from .expert import (
    DELTA_MAX,
    EPISODE_STEPS,
    EPS_SUCCESS,
    EPS_WAY,
    JOINT_LIMIT,
    N_JOINTS,
    Demonstration,
    TaskMaps,
    expert_demo,
    judge_success,
    make_task,
    step_state,
)
from .render import Frame, generate_sequence, render_frame
from .template import N_KEYPOINTS, BagTemplate, TemplateRanges, synthesize_template

__all__ = [
    "BagTemplate", "DELTA_MAX", "DeformationParams", "Demonstration", "EPISODE_STEPS", "EPS_SUCCESS",
    "EPS_WAY", "FAMILIES", "FAMILY_RANGES", "Frame", "JOINT_LIMIT", "N_JOINTS", "N_KEYPOINTS", "TaskMaps",
    "TemplateRanges", "deformation_sequence", "derive_seed", "drift_params", "episode_frames", "episode_keypoints", "expert_demo",
    "generate_sequence", "interpolate", "judge_success", "keypoint_positions", "make_task", "render_frame",
    "sample_family", "step_state", "synthesize_template",
]
