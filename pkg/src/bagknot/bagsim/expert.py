"""Robot surrogate, the scripted four-stage expert, and the geometric success judge."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DemoInfeasibleError, InputError
from .template import N_KEYPOINTS

N_JOINTS = 26  # 2 arms x 7 + 2 hands x 6
EPISODE_STEPS = 160
N_STAGES = 4
DELTA_MAX = 0.1
EPS_WAY = 0.02
EPS_SUCCESS = 0.05
JOINT_LIMIT = np.pi
OBS_DIM = 3 * N_KEYPOINTS


def default_boundaries(T: int = EPISODE_STEPS) -> tuple:
    """State indices at which stages 1..4 end; the last one is the final state."""
    step = T // N_STAGES
    return tuple([step * (j + 1) for j in range(N_STAGES - 1)] + [T - 1])


def step_state(state, action, delta_max=DELTA_MAX):
    """s_{t+1} = s_t + clip(a_t - s_t, +-delta_max)."""
    return state + np.clip(action - state, -delta_max, delta_max)


@dataclass(frozen=True)
class TaskMaps:
    """Four frozen affine maps from flattened keypoints (30) to joint targets (26)."""

    M: np.ndarray  # (4, 26, 30)
    b: np.ndarray  # (4, 26)
    home: np.ndarray  # (26,) initial joint state
    boundaries: tuple = field(default_factory=default_boundaries)

    def waypoint(self, stage: int, keypoints) -> np.ndarray:
        return self.M[stage] @ np.asarray(keypoints, dtype=float).reshape(-1) + self.b[stage]

    @property
    def T(self) -> int:
        return self.boundaries[-1] + 1

    def stage_of(self, t: int) -> int:
        for j, bnd in enumerate(self.boundaries):
            if t < bnd:
                return j
        return N_STAGES - 1

    def to_dict(self) -> dict:
        return {
            "M": self.M.tolist(),
            "b": self.b.tolist(),
            "home": self.home.tolist(),
            "boundaries": list(self.boundaries),
        }

    @classmethod
    def from_dict(cls, d) -> "TaskMaps":
        return cls(np.asarray(d["M"], float), np.asarray(d["b"], float), np.asarray(d["home"], float), tuple(d["boundaries"]))


def make_task(seed: int, keypoint_center=None, gain: float = 0.15, offset: float = 1.0, T: int = EPISODE_STEPS) -> TaskMaps:
    """Draw a task: M entries uniform in +-gain, waypoint offsets uniform in +-offset.

    ``keypoint_center`` (10 x 3) is folded into ``b`` so waypoints stay near
    the offsets for typical keypoints.
    """
    rng = np.random.default_rng([seed, 0x7A5C])
    M = rng.uniform(-gain, gain, size=(N_STAGES, N_JOINTS, OBS_DIM))
    b = rng.uniform(-offset, offset, size=(N_STAGES, N_JOINTS))
    if keypoint_center is not None:
        b = b - M @ np.asarray(keypoint_center, float).reshape(-1)
    return TaskMaps(M=M, b=b, home=np.zeros(N_JOINTS), boundaries=default_boundaries(T))


@dataclass(eq=False)
class Demonstration:
    keypoints: np.ndarray  # (T, 10, 3) keypoints of the frames the expert observed
    states: np.ndarray  # (T, 26)
    actions: np.ndarray  # (T, 26)
    stage_boundaries: tuple
    task_seed: int
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return len(self.states)


def _keypoint_array(frames) -> np.ndarray:
    if isinstance(frames, np.ndarray):
        return frames
    return np.stack([f.keypoints for f in frames])


def expert_demo(frames, task: TaskMaps, seed: int = 0) -> Demonstration:
    """Scripted expert.

    During stage j the expert aims at w_j(t) = M_j vec(x_t) + b_j and spreads
    the remaining distance evenly over the steps left in the stage, so it
    lands on the waypoint exactly at the stage boundary. ``frames`` may be a
    list of Frame objects or a (T, 10, 3) keypoint array.
    """
    kps = _keypoint_array(frames)
    T = task.T
    if len(kps) != T:
        raise InputError(f"expert needs {T} frames, got {len(kps)}")
    states = np.empty((T, N_JOINTS))
    actions = np.empty((T, N_JOINTS))
    s = task.home.astype(float).copy()
    start = 0
    for j, bnd in enumerate(task.boundaries):
        stop = bnd if j < N_STAGES - 1 else T
        for t in range(start, stop):
            states[t] = s
            w = task.waypoint(j, kps[t])
            remaining = bnd - t
            a = w if remaining <= 0 else s + (w - s) / remaining
            a = np.clip(a, -JOINT_LIMIT, JOINT_LIMIT)
            actions[t] = a
            if t + 1 < T:
                s = step_state(s, a)
        start = stop
    errs = stage_errors(states, kps, task)
    if np.any(errs > EPS_WAY):
        j = int(np.argmax(errs > EPS_WAY))
        raise DemoInfeasibleError(f"stage {j + 1} waypoint missed by {errs[j]:.3f} rad at step {task.boundaries[j]}")
    return Demonstration(kps.copy(), states, actions, tuple(task.boundaries), int(seed))


def stage_errors(states, keypoints, task: TaskMaps) -> np.ndarray:
    """Infinity-norm distance to each stage waypoint at its boundary."""
    states = np.asarray(states)
    keypoints = np.asarray(keypoints)
    if len(states) < task.T or len(keypoints) < task.T:
        raise InputError(f"episode has {len(states)} states, the task needs {task.T}")
    return np.array(
        [np.max(np.abs(states[bnd] - task.waypoint(j, keypoints[bnd - 1]))) for j, bnd in enumerate(task.boundaries)]
    )


def judge_success(episode, task: TaskMaps, eps: float = EPS_SUCCESS) -> bool:
    """True iff every stage waypoint (and so the final one) is within ``eps``.

    ``episode`` needs ``states`` (T x 26) and ground-truth ``keypoints``
    (T x 10 x 3), either as attributes or mapping keys.
    """
    get = episode.get if isinstance(episode, dict) else lambda k: getattr(episode, k)
    states, kps = get("states"), get("keypoints")
    errs = stage_errors(states, kps, task)
    final = np.max(np.abs(np.asarray(states)[task.T - 1] - task.waypoint(N_STAGES - 1, np.asarray(kps)[task.boundaries[-1] - 1])))
    return bool(np.all(errs <= eps) and final <= eps)
