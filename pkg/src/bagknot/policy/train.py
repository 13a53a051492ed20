"""Behaviour cloning of the diffusion policy and DDPM chunk sampling."""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import torch
from torch.nn import functional as F

from .. import arrays
from ..bagsim import JOINT_LIMIT, N_JOINTS
from ..errors import ConfigError, InputError, IntegrityError, NumericError, SamplingError
from .model import OBS_DIM, PolicyConfig, PolicyWeights, _obs_tensors
from .schedule import DiffusionSchedule, make_schedule

log = logging.getLogger(__name__)

FORMAT = "bagknot.policy/1"


def chunk_targets(actions: np.ndarray, H: int) -> np.ndarray:
    """(T, H, 26): a_{t:t+H} with the last action repeated past the end."""
    T = len(actions)
    idx = np.minimum(np.arange(T)[:, None] + np.arange(H)[None, :], T - 1)
    return np.asarray(actions)[idx]


def demo_tensors(demos, H: int):
    """Stack every (x_t, s_t, A_t) tuple of every demonstration."""
    demos = list(demos)
    if not demos:
        raise InputError("train_policy needs at least one demonstration")
    xs, ss, As = [], [], []
    for d in demos:
        xs.append(np.asarray(d.keypoints, dtype=np.float64).reshape(len(d.keypoints), OBS_DIM))
        ss.append(np.asarray(d.states, dtype=np.float64))
        As.append(chunk_targets(d.actions, H))
    return np.concatenate(xs), np.concatenate(ss), np.concatenate(As)


def diffusion_loss(net, x, s, A_std, k, eps, schedule: DiffusionSchedule):
    """Noise-prediction MSE on a batch; A_std is the standardized chunk."""
    alpha = torch.as_tensor(schedule.alpha, dtype=A_std.dtype)[k][:, None, None]
    sigma = torch.as_tensor(schedule.sigma, dtype=A_std.dtype)[k][:, None, None]
    noised = alpha * A_std + sigma * eps
    return F.mse_loss(net(noised, k, net.embed(x, s)), eps)


def standardize_actions(net, A):
    return net._standardize(A, net.a_mean, net.a_std)


def train_policy(demos, config: PolicyConfig, weights: PolicyWeights | None = None) -> PolicyWeights:
    """AdamW on the noise-prediction loss with cosine learning-rate decay; deterministic per seed."""
    x_np, s_np, A_np = demo_tensors(demos, config.H)
    weights = weights or PolicyWeights.init(config)
    if weights.config.arch_hash() != config.arch_hash():
        raise ConfigError("initial weights do not match the policy architecture")
    net = weights.net
    net.set_normalization(x_np, s_np, A_np.reshape(-1, N_JOINTS))
    dtype = net.x_mean.dtype
    X, S, A = (torch.as_tensor(v, dtype=dtype) for v in (x_np, s_np, A_np))
    A_std = standardize_actions(net, A)
    schedule = make_schedule(config.K, config.beta_min, config.beta_max)
    rng = np.random.default_rng([config.seed, 0xB0])
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        opt = torch.optim.AdamW(net.parameters(), lr=config.lr, weight_decay=config.weight_decay)
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(config.steps, 1))
        n = len(X)
        running, count = 0.0, 0
        report = max(config.steps // 20, 1)
        for step in range(config.steps):
            idx = torch.as_tensor(rng.integers(0, n, size=min(config.batch_size, n)))
            k = torch.as_tensor(rng.integers(0, config.K, size=len(idx)))
            eps = torch.as_tensor(rng.standard_normal((len(idx), config.H, N_JOINTS)), dtype=dtype)
            x = X[idx]
            if config.kp_noise > 0:
                x = x + torch.as_tensor(rng.standard_normal(x.shape) * config.kp_noise, dtype=dtype)
            loss = diffusion_loss(net, x, S[idx], A_std[idx], k, eps, schedule)
            if not torch.isfinite(loss):
                raise NumericError(f"policy loss became non-finite at step {step}", layer="loss")
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            running += float(loss.detach())
            count += 1
            if count == report or step == config.steps - 1:
                weights.loss_curve.append(running / count)
                log.info("policy step %d loss %.4f", step, weights.loss_curve[-1])
                running, count = 0.0, 0
    return weights


# ---------------------------------------------------------------------------
# sampling


@torch.no_grad()
def sample_chunks(keypoints, states, weights: PolicyWeights, schedule: DiffusionSchedule | None, seeds) -> np.ndarray:
    """DDPM ancestral sampling for a batch of observations.

    keypoints (B, 10, 3), states (B, 26), one integer seed per row. Returns
    (B, H, 26) joint targets clipped to the joint limits. Each row depends
    only on its own observation and seed.
    """
    cfg = weights.config
    net = weights.net
    schedule = schedule or make_schedule(cfg.K, cfg.beta_min, cfg.beta_max)
    dtype = net.x_mean.dtype
    x, s = _obs_tensors(keypoints, states, dtype)
    z = net.embed(x, s)
    B = len(seeds)
    rngs = [np.random.default_rng([int(sd), 0x5C]) for sd in seeds]
    draw = lambda: torch.as_tensor(np.stack([r.standard_normal((cfg.H, N_JOINTS)) for r in rngs]), dtype=dtype)  # noqa: E731
    a = draw()
    betas = schedule.betas
    post_std = np.sqrt(schedule.posterior_variance)
    for k in range(schedule.K - 1, -1, -1):
        eps = net(a, torch.full((B,), k, dtype=torch.long), z)
        a = (a - (betas[k] / schedule.sigma[k]) * eps) / np.sqrt(1.0 - betas[k])
        if k > 0:
            a = a + post_std[k] * draw()
        if not torch.isfinite(a).all():
            raise SamplingError(f"sampling diverged at step {k}", layer=f"step{k}")
    out = a * net.a_std + net.a_mean
    return np.clip(out.numpy().astype(np.float64), -JOINT_LIMIT, JOINT_LIMIT)


def sample_chunk(keypoints, state, weights: PolicyWeights, schedule: DiffusionSchedule | None = None, seed: int = 0) -> np.ndarray:
    """One H x 26 action chunk for a single observation."""
    return sample_chunks(np.asarray(keypoints)[None], np.asarray(state)[None], weights, schedule, [seed])[0]


# ---------------------------------------------------------------------------
# checkpoints


def save_policy(weights: PolicyWeights, path) -> dict:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    params = {}
    for name, value in weights.net.state_dict().items():
        v = value.detach().cpu().numpy()
        if not np.all(np.isfinite(v)):
            raise NumericError(f"parameter {name} is not finite", layer=name)
        params[name] = arrays.write_array(root, f"param.{name}", v)
    manifest = {
        "format": FORMAT,
        "kind": "policy",
        "config": weights.config.to_dict(),
        "config_hash": arrays.digest(weights.config.to_dict()),
        "arch_hash": weights.config.arch_hash(),
        "weights_hash": weights.hash,
        "loss_curve": [float(x) for x in weights.loss_curve],
        "params": params,
        "meta": weights.meta,
    }
    arrays.write_manifest(root, manifest)
    return manifest


def load_policy(path) -> PolicyWeights:
    root = Path(path)
    manifest = arrays.read_manifest(root)
    if manifest.get("kind") != "policy":
        raise IntegrityError(f"{root} is not a policy checkpoint")
    config = PolicyConfig.from_dict(manifest["config"])
    weights = PolicyWeights.init(config)
    state = weights.net.state_dict()
    if set(state) != set(manifest["params"]):
        raise IntegrityError("policy checkpoint parameter names do not match the architecture")
    loaded = {}
    for name, entry in manifest["params"].items():
        value = arrays.read_array(root, entry)
        if tuple(value.shape) != tuple(state[name].shape):
            raise IntegrityError(f"parameter {name}: shape {value.shape} != {tuple(state[name].shape)}")
        loaded[name] = torch.as_tensor(value)
    weights.net.load_state_dict(loaded)
    weights.loss_curve = list(manifest["loss_curve"])
    weights.meta = dict(manifest.get("meta", {}))
    if weights.hash != manifest["weights_hash"]:
        raise IntegrityError("policy checkpoint weights hash mismatch")
    return weights
