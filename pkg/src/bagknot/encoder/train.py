"""Contrastive training of the point encoder on correspondence pairs, plus checkpoints."""
from __future__ import annotations

import logging
import math
from pathlib import Path

import numpy as np
import torch

from .. import arrays
from ..errors import ConfigError, InputError, IntegrityError, NumericError
from .loss import infonce_terms
from .model import EncoderConfig, EncoderWeights, build_graph, encode_graphs

log = logging.getLogger(__name__)

FORMAT = "bagknot.encoder/1"


def augmented_cloud(frame) -> np.ndarray:
    """Cloud with the frame's keypoints appended as the last rows."""
    return np.concatenate([np.asarray(frame.cloud, dtype=np.float64), np.asarray(frame.keypoints, dtype=np.float64)])


class GraphCache:
    """Sampling/grouping structure per frame, built once (it depends only on coordinates)."""

    def __init__(self, config: EncoderConfig):
        self.config = config
        self._store: dict = {}

    def get(self, frame):
        key = id(frame)
        hit = self._store.get(key)
        if hit is None:
            g = build_graph(augmented_cloud(frame), self.config)
            inv = np.empty_like(g.order)
            inv[g.order] = np.arange(len(g.order))
            hit = (frame, g, inv)  # keep the frame alive so its id stays unique
            self._store[key] = hit
        return hit[1], hit[2]


def _pair_rows(frame, ids):
    lookup = {int(k): r for r, k in enumerate(frame.keypoint_ids)}
    return np.array([lookup[int(k)] for k in ids], dtype=np.int64)


def _negatives(g, inv, n_pc, pos_row, m, r_excl, rng):
    """m cloud indices (sorted graph order) away from the positive site."""
    xyz = g.xyz[inv[:n_pc]]  # canonical coordinates in input order
    site = g.xyz[inv[n_pc + pos_row]]
    ok = np.flatnonzero(np.sum((xyz - site) ** 2, axis=1) > r_excl * r_excl)
    if len(ok) == 0:
        raise InputError("no negative candidates outside the exclusion radius")
    pick = rng.choice(ok, size=m, replace=len(ok) < m)
    return inv[pick]


def batch_loss(batch, weights: EncoderWeights, cache: GraphCache, rng, check: bool = False):
    """Mean InfoNCE over every matched keypoint of every pair in ``batch``."""
    cfg = weights.config
    graphs = []
    for p in batch:
        graphs.append(cache.get(p.frame_a))
        graphs.append(cache.get(p.frame_b))
    sizes = {g.n for g, _ in graphs}
    if len(sizes) != 1:
        raise InputError("all clouds in a batch must have the same number of points")
    feats = encode_graphs([g for g, _ in graphs], weights, grad=torch.is_grad_enabled())
    anchors, positives, negatives = [], [], []
    for i, p in enumerate(batch):
        (ga, inva), (gb, invb) = graphs[2 * i], graphs[2 * i + 1]
        na, nb = p.frame_a.n_pc, p.frame_b.n_pc
        ra, rb = _pair_rows(p.frame_a, p.matched_ids), _pair_rows(p.frame_b, p.matched_ids)
        anchors.append(feats[2 * i, torch.as_tensor(inva[na + ra])])
        positives.append(feats[2 * i + 1, torch.as_tensor(invb[nb + rb])])
        neg_idx = np.stack([_negatives(gb, invb, nb, r, cfg.m, cfg.r_excl, rng) for r in rb])
        negatives.append(feats[2 * i + 1][torch.as_tensor(neg_idx)])
    terms = infonce_terms(torch.cat(anchors), torch.cat(positives), torch.cat(negatives), cfg.tau, check=check)
    return terms.mean()


def train_encoder(
    pairs,
    config: EncoderConfig,
    weights: EncoderWeights | None = None,
    epochs: int | None = None,
    checkpoint: str | Path | None = None,
    cache: GraphCache | None = None,
) -> EncoderWeights:
    """SGD with momentum on mean InfoNCE; deterministic for a fixed ``config.seed``."""
    pairs = list(pairs)
    if not pairs:
        raise InputError("train_encoder needs a non-empty pair set")
    weights = weights or EncoderWeights.init(config)
    if weights.config.arch_hash() != config.arch_hash():
        raise ConfigError("initial weights do not match the encoder architecture")
    weights.config = config
    cache = cache or GraphCache(config)
    epochs = config.epochs if epochs is None else epochs
    opt = torch.optim.SGD(weights.net.parameters(), lr=config.lr, momentum=config.momentum)
    start = len(weights.loss_curve)
    for epoch in range(start, start + epochs):
        rng = np.random.default_rng([config.seed, epoch, 0xE7])
        order = rng.permutation(len(pairs))
        total, count = 0.0, 0
        for lo in range(0, len(order), config.batch_size):
            batch = [pairs[i] for i in order[lo : lo + config.batch_size]]
            loss = batch_loss(batch, weights, cache, rng)
            if not torch.isfinite(loss):
                raise NumericError(f"encoder loss became non-finite at epoch {epoch}, batch {lo // config.batch_size}", layer="loss")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(batch)
            count += len(batch)
        weights.loss_curve.append(total / count)
        log.info("encoder epoch %d loss %.4f", epoch, weights.loss_curve[-1])
        if checkpoint is not None:
            save_encoder(weights, checkpoint)
    return weights


# ---------------------------------------------------------------------------
# evaluation on pairs


@torch.no_grad()
def evaluate_pairs(pairs, weights: EncoderWeights, threshold: float = 0.1, cache: GraphCache | None = None) -> dict:
    """Match keypoints of frame A into frame B's raw cloud.

    Returns identification accuracy (fraction of matched keypoints whose
    best cloud point in B lies within ``threshold`` canonical units of the
    true keypoint) and mean positive / negative similarities.
    """
    cache = cache or GraphCache(weights.config)
    hits, total, pos_sims, neg_sims = 0, 0, [], []
    for p in pairs:
        (ga, inva), (gb, invb) = cache.get(p.frame_a), cache.get(p.frame_b)
        fa, fb = encode_graphs([ga], weights)[0].numpy(), encode_graphs([gb], weights)[0].numpy()
        na, nb = p.frame_a.n_pc, p.frame_b.n_pc
        ra, rb = _pair_rows(p.frame_a, p.matched_ids), _pair_rows(p.frame_b, p.matched_ids)
        anchor = fa[inva[na + ra]].astype(np.float64)
        cloud_feat = fb[invb[:nb]].astype(np.float64)
        sims = anchor @ cloud_feat.T
        best = np.argmax(sims, axis=1)
        xyz_b = gb.xyz[invb[:nb]]
        truth = gb.xyz[invb[nb + rb]]
        err = np.linalg.norm(xyz_b[best] - truth, axis=1)
        hits += int(np.sum(err <= threshold))
        total += len(err)
        pos_sims.extend(np.sum(anchor * fb[invb[nb + rb]], axis=1))
        neg_sims.append(float(sims.mean()))
    if total == 0:
        raise InputError("no pairs to evaluate")
    return {
        "accuracy": hits / total,
        "n_keypoints": total,
        "mean_pos_sim": float(np.mean(pos_sims)),
        "mean_cloud_sim": float(np.mean(neg_sims)),
    }


# ---------------------------------------------------------------------------
# checkpoints


def save_encoder(weights: EncoderWeights, path) -> dict:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    params = {}
    for name, value in weights.state_arrays().items():
        if not np.all(np.isfinite(value)):
            raise NumericError(f"parameter {name} is not finite", layer=name)
        params[name] = arrays.write_array(root, f"param.{name}", value)
    manifest = {
        "format": FORMAT,
        "kind": "encoder",
        "config": weights.config.to_dict(),
        "config_hash": arrays.digest(weights.config.to_dict()),
        "arch_hash": weights.config.arch_hash(),
        "weights_hash": weights.hash,
        "epoch": len(weights.loss_curve),
        "loss_curve": [float(x) for x in weights.loss_curve],
        "params": params,
        "meta": weights.meta,
    }
    arrays.write_manifest(root, manifest)
    return manifest


def load_encoder(path) -> EncoderWeights:
    root = Path(path)
    manifest = arrays.read_manifest(root)
    if manifest.get("kind") != "encoder":
        raise IntegrityError(f"{root} is not an encoder checkpoint")
    config = EncoderConfig.from_dict(manifest["config"])
    if config.arch_hash() != manifest["arch_hash"]:
        raise IntegrityError("encoder checkpoint architecture hash mismatch")
    weights = EncoderWeights.init(config)
    state = weights.net.state_dict()
    if set(state) != set(manifest["params"]):
        raise IntegrityError("encoder checkpoint parameter names do not match the architecture")
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
        raise IntegrityError("encoder checkpoint weights hash mismatch")
    return weights


def mean_loss(pairs, weights: EncoderWeights, seed: int = 0, cache: GraphCache | None = None) -> float:
    """Mean InfoNCE over ``pairs`` without updating weights."""
    cache = cache or GraphCache(weights.config)
    rng = np.random.default_rng([seed, 0x1F])
    with torch.no_grad():
        vals = []
        for lo in range(0, len(pairs), weights.config.batch_size):
            batch = pairs[lo : lo + weights.config.batch_size]
            vals.append(float(batch_loss(batch, weights, cache, rng)) * len(batch))
    out = sum(vals) / len(pairs)
    if not math.isfinite(out):
        raise NumericError("non-finite evaluation loss", layer="loss")
    return out
