"""Seeded episode and sequence recipes built from the primitives."""
from __future__ import annotations

import numpy as np

from ..errors import GenerationError
from .deform import check_params, drift_params, keypoint_positions, sample_family
from .expert import EPISODE_STEPS
from .render import generate_sequence, sequence_params
from .template import BagTemplate

MAX_ATTEMPTS = 20


def derive_seed(*keys) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def _endpoints(template, family, seed, attempt, drift):
    s = derive_seed(seed, template.template_id, attempt, 0 if drift else 1)
    start = sample_family(family, s)
    end = drift_params(start, s) if drift else sample_family(family, derive_seed(s, 2))
    return s, start, end


def _valid_path(template, family, seed, T, drift):
    last = None
    for attempt in range(MAX_ATTEMPTS):
        s, start, end = _endpoints(template, family, seed, attempt, drift)
        path = sequence_params(start, end, T)
        try:
            for p in path:
                check_params(template, p)
        except GenerationError as exc:
            last = exc
            continue
        return s, start, end, path
    raise GenerationError(f"no valid {family} path for template {template.template_id} seed {seed}: {last}")


def episode_frames(template: BagTemplate, family: str, seed: int, T: int = EPISODE_STEPS, n_pc: int = 4096):
    """Frames for one episode: a family sample drifting slightly within its family.

    Draws that collapse the surface are skipped deterministically (the next
    derived seed is tried), so the result is still a pure function of the
    arguments.
    """
    s, start, end, _ = _valid_path(template, family, seed, T, drift=True)
    return generate_sequence(template, start, end, T, s, n_pc=n_pc)


def episode_keypoints(template: BagTemplate, family: str, seed: int, T: int = EPISODE_STEPS) -> np.ndarray:
    """Ground-truth keypoints of ``episode_frames`` without sampling any clouds."""
    _, _, _, path = _valid_path(template, family, seed, T, drift=True)
    return np.stack([keypoint_positions(template, p) for p in path])


def deformation_sequence(template: BagTemplate, family: str, seed: int, T: int, n_pc: int):
    """A within-family sequence between two independent family samples."""
    s, start, end, _ = _valid_path(template, family, seed, T, drift=False)
    return generate_sequence(template, start, end, T, s, n_pc=n_pc)
