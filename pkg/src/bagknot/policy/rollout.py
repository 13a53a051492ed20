"""Closed-loop execution: identify, track, replan chunks, step the robot, judge."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..bagsim import BagTemplate, TaskMaps, episode_frames, expert_demo, judge_success, step_state
from ..bagsim.episodes import derive_seed
from ..bagsim.expert import stage_errors
from ..encoder import EncoderWeights
from ..errors import BagknotError, InputError
from ..matcher import MODES, ReferenceSet, init_state, reidentify_step, track_step
from .model import PolicyWeights
from .schedule import make_schedule
from .train import sample_chunks


@dataclass(frozen=True)
class EpisodeSpec:
    template: BagTemplate
    family: str
    seed: int
    task: TaskMaps
    n_pc: int = 512


@dataclass(eq=False)
class EpisodeRecord:
    states: np.ndarray  # (T, 26), state before each action
    actions: np.ndarray  # (T, 26)
    keypoints: np.ndarray  # (T, 10, 3) ground truth
    observed: np.ndarray  # (T, 10, 3) identified / tracked estimates
    success: bool
    stage_errors: np.ndarray
    meta: dict = field(default_factory=dict)


class PolicyActor:
    """Samples chunks from a diffusion policy, batched over episodes."""

    def __init__(self, weights: PolicyWeights):
        self.weights = weights
        self.schedule = make_schedule(weights.config.K, weights.config.beta_min, weights.config.beta_max)
        self.H = weights.config.H
        self.h_exec = weights.config.h_exec

    def chunks(self, t, keypoints, states, seeds, episodes):
        return sample_chunks(keypoints, states, self.weights, self.schedule, [derive_seed(s, t) for s in seeds])


class ExpertReplayActor:
    """Replays the scripted expert's actions computed on ground-truth keypoints."""

    def __init__(self, h_exec: int = 8):
        self.H = self.h_exec = h_exec
        self._cache: dict = {}

    def chunks(self, t, keypoints, states, seeds, episodes):
        out = []
        for ep in episodes:
            key = id(ep)
            if key not in self._cache:
                self._cache[key] = expert_demo(ep["truth"], ep["spec"].task).actions
            acts = self._cache[key]
            idx = np.minimum(np.arange(t, t + self.H), len(acts) - 1)
            out.append(acts[idx])
        return np.stack(out)


def _observe(ep, t, mode, ref, encoder):
    frames = ep["frames"]
    if t == 0:
        ep["track"] = init_state(frames[0], ref, encoder, mode)
    elif mode == "track":
        ep["track"] = track_step(ep["track"], frames[t - 1], frames[t])
    else:
        ep["track"] = reidentify_step(ep["track"], frames[t], ref, encoder)
    return ep["track"].current_keypoints


def rollout_batch(
    actor,
    encoder: EncoderWeights,
    ref: ReferenceSet,
    specs,
    mode: str = "track",
    seeds=None,
) -> list[EpisodeRecord]:
    """Run several episodes in lockstep so chunk sampling is batched across them."""
    if mode not in MODES:
        raise InputError(f"unknown mode {mode!r}")
    specs = list(specs)
    seeds = [s.seed for s in specs] if seeds is None else list(seeds)
    episodes = []
    for spec in specs:
        T = spec.task.T
        try:
            frames = episode_frames(spec.template, spec.family, spec.seed, T, spec.n_pc)
        except BagknotError as exc:
            raise type(exc)(f"episode {spec.family}/template {spec.template.template_id}/seed {spec.seed}: {exc}") from exc
        episodes.append(
            {
                "spec": spec,
                "frames": frames,
                "truth": np.stack([f.keypoints for f in frames]),
                "states": np.empty((T, spec.task.M.shape[1])),
                "actions": np.empty((T, spec.task.M.shape[1])),
                "observed": np.empty((T, 10, 3)),
                "s": spec.task.home.astype(float).copy(),
                "plan": None,
            }
        )
    T = {spec.task.T for spec in specs}
    if len(T) != 1:
        raise InputError("episodes in one batch must share the horizon")
    T = T.pop()
    for t in range(T):
        for ep in episodes:
            ep["observed"][t] = _observe(ep, t, mode, ref, encoder)
            ep["states"][t] = ep["s"]
        if t % actor.h_exec == 0:
            plans = actor.chunks(
                t,
                np.stack([ep["observed"][t] for ep in episodes]),
                np.stack([ep["s"] for ep in episodes]),
                seeds,
                episodes,
            )
            for ep, plan in zip(episodes, plans):
                ep["plan"], ep["plan_t"] = plan, t
        for ep in episodes:
            a = ep["plan"][t - ep["plan_t"]]
            ep["actions"][t] = a
            ep["s"] = step_state(ep["s"], a)
    records = []
    for ep, seed in zip(episodes, seeds):
        spec = ep["spec"]
        errs = stage_errors(ep["states"], ep["truth"], spec.task)
        rec = EpisodeRecord(
            states=ep["states"],
            actions=ep["actions"],
            keypoints=ep["truth"],
            observed=ep["observed"],
            success=judge_success({"states": ep["states"], "keypoints": ep["truth"]}, spec.task),
            stage_errors=errs,
            meta={
                "template_id": spec.template.template_id,
                "family": spec.family,
                "episode_seed": spec.seed,
                "sample_seed": int(seed),
                "mode": mode,
            },
        )
        records.append(rec)
    return records


def rollout(policy_weights, encoder_weights, ref, spec: EpisodeSpec, mode: str = "track", seed: int = 0) -> EpisodeRecord:
    """One closed-loop episode; ``policy_weights`` may also be an actor object."""
    actor = policy_weights if hasattr(policy_weights, "chunks") else PolicyActor(policy_weights)
    return rollout_batch(actor, encoder_weights, ref, [spec], mode, [seed])[0]
