"""Keypoint identification by feature matching, nearest-neighbour tracking, and re-identification."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import arrays
from .bagsim import DeformationParams, Frame
from .encoder import EncoderWeights, augmented_cloud, canonicalize_cloud, encode
from .errors import ConfigError, InputError, IntegrityError

TRACK_NEIGHBORS = 16
MODES = ("track", "reidentify")


@dataclass(eq=False)
class ReferenceSet:
    """Reference frame (keypoints appended to its cloud) and its keypoint features."""

    ref_cloud: Frame
    ref_keypoint_features: np.ndarray  # (n, d), unit rows
    encoder_hash: str
    keypoint_ids: np.ndarray = field(default_factory=lambda: np.arange(10))

    def __post_init__(self):
        f = np.asarray(self.ref_keypoint_features, dtype=np.float64)
        if f.ndim != 2 or len(f) != len(self.keypoint_ids):
            raise InputError("need one reference feature per keypoint id")
        if np.max(np.abs(np.linalg.norm(f, axis=1) - 1.0)) > 1e-5:
            raise InputError("reference keypoint features must be unit-norm")


def make_reference(frame: Frame, weights: EncoderWeights) -> ReferenceSet:
    """Encode ``frame`` with its keypoints appended and keep the features at those sites."""
    cloud = augmented_cloud(frame)
    n = frame.n_pc
    ref_frame = Frame(
        cloud=cloud,
        keypoints=np.asarray(frame.keypoints, dtype=np.float64).copy(),
        keypoint_ids=np.asarray(frame.keypoint_ids).copy(),
        deformation=frame.deformation,
        seed=frame.seed,
        template_id=frame.template_id,
        meta={**frame.meta, "appended_from": n},
    )
    feats = encode(cloud, weights)
    return ReferenceSet(ref_frame, feats[n:].astype(np.float64), weights.hash, np.asarray(frame.keypoint_ids).copy())


@dataclass(frozen=True)
class Identification:
    keypoints: np.ndarray  # (n, 3)
    indices: np.ndarray  # (n,) cloud indices
    similarities: np.ndarray  # (n,)

    @property
    def duplicates(self) -> int:
        """How many keypoints share a matched point with an earlier keypoint."""
        return int(len(self.indices) - len(np.unique(self.indices)))


def unit_rows(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def match_features(cloud_feats, ref_feats):
    """Argmax of float64 cosine similarity; ``np.argmax`` returns the lowest index on ties."""
    sims = unit_rows(cloud_feats) @ unit_rows(ref_feats).T  # (n_pc, n)
    idx = np.argmax(sims, axis=0)
    return idx, sims[idx, np.arange(sims.shape[1])]


def identify_keypoints(frame: Frame, ref: ReferenceSet, weights: EncoderWeights) -> Identification:
    if ref.encoder_hash != weights.hash:
        raise ConfigError("reference set was built with a different encoder")
    cloud = np.asarray(frame.cloud)
    if cloud.ndim != 2 or len(cloud) == 0:
        raise InputError("frame cloud is empty")
    if len(cloud) == 1:
        # a single point cannot be canonicalised; it is the only candidate anyway
        idx = np.zeros(len(ref.keypoint_ids), dtype=np.int64)
        return Identification(np.repeat(cloud[:1].astype(np.float64), len(idx), axis=0), idx, np.ones(len(idx)))
    idx, sims = match_features(encode(cloud, weights), ref.ref_keypoint_features)
    return Identification(cloud[idx].astype(np.float64), idx.astype(np.int64), sims)


# ---------------------------------------------------------------------------
# tracking


@dataclass
class TrackState:
    current_keypoints: np.ndarray
    keypoint_ids: np.ndarray
    last_frame_index: int = 0
    mode: str = "track"
    similarities: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise InputError(f"unknown tracking mode {self.mode!r}")
        self.current_keypoints = np.asarray(self.current_keypoints, dtype=np.float64)
        self.keypoint_ids = np.asarray(self.keypoint_ids, dtype=np.int64)


def init_state(frame: Frame, ref: ReferenceSet, weights: EncoderWeights, mode: str = "track") -> TrackState:
    ident = identify_keypoints(frame, ref, weights)
    return TrackState(ident.keypoints, ref.keypoint_ids.copy(), int(frame.meta.get("frame_index", 0)), mode, ident.similarities)


def _cloud(frame, name):
    c = np.asarray(frame.cloud, dtype=np.float64)
    if c.ndim != 2 or len(c) == 0:
        raise InputError(f"{name} frame cloud is empty")
    return c


def track_step(state: TrackState, prev_frame: Frame, next_frame: Frame, neighbors: int = TRACK_NEIGHBORS) -> TrackState:
    """Advance each keypoint by the local mean nearest-neighbour flow, then snap to the next cloud."""
    if state.mode != "track":
        raise InputError("track_step needs a state in track mode")
    prev = _cloud(prev_frame, "previous")
    nxt = _cloud(next_frame, "next")
    next_tree = cKDTree(nxt)
    k = min(neighbors, len(prev))
    _, local = cKDTree(prev).query(state.current_keypoints, k=k)
    local = np.asarray(local).reshape(len(state.current_keypoints), k)
    _, match = next_tree.query(prev[local.ravel()])
    flow = (nxt[match] - prev[local.ravel()]).reshape(local.shape + (3,)).mean(axis=1)
    _, snap = next_tree.query(state.current_keypoints + flow)
    return replace(
        state,
        current_keypoints=nxt[snap],
        last_frame_index=state.last_frame_index + 1,
        similarities=None,
    )


def reidentify_step(state: TrackState, next_frame: Frame, ref: ReferenceSet, weights: EncoderWeights) -> TrackState:
    if state.mode != "reidentify":
        raise InputError("reidentify_step needs a state in reidentify mode")
    ident = identify_keypoints(next_frame, ref, weights)
    return replace(
        state,
        current_keypoints=ident.keypoints,
        last_frame_index=state.last_frame_index + 1,
        similarities=ident.similarities,
    )


def canonical_error(points, truth, frame_cloud) -> np.ndarray:
    """Per-keypoint distance in the canonical units of ``frame_cloud``."""
    _, tf = canonicalize_cloud(frame_cloud)
    return np.linalg.norm(np.asarray(points) - np.asarray(truth), axis=-1) * tf.scale


def identification_accuracy(frames, ref: ReferenceSet, weights: EncoderWeights, threshold: float = 0.1) -> float:
    """Fraction of keypoints identified within ``threshold`` canonical units of ground truth."""
    hits = total = 0
    for fr in frames:
        ident = identify_keypoints(fr, ref, weights)
        rows = {int(k): r for r, k in enumerate(fr.keypoint_ids)}
        truth = np.stack([fr.keypoints[rows[int(k)]] for k in ref.keypoint_ids])
        err = canonical_error(ident.keypoints, truth, fr.cloud)
        hits += int(np.sum(err <= threshold))
        total += len(err)
    if total == 0:
        raise InputError("no frames to evaluate")
    return hits / total


# ---------------------------------------------------------------------------
# reference persistence


def save_reference(ref: ReferenceSet, path) -> dict:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    fr = ref.ref_cloud
    manifest = {
        "format": "bagknot.reference/1",
        "kind": "reference",
        "encoder_hash": ref.encoder_hash,
        "keypoint_ids": [int(k) for k in ref.keypoint_ids],
        "frame": {
            "seed": fr.seed,
            "template_id": fr.template_id,
            "deformation": fr.deformation.to_dict(),
            "appended_from": fr.meta.get("appended_from"),
        },
        "arrays": {
            "cloud": arrays.write_array(root, "cloud", fr.cloud),
            "keypoints": arrays.write_array(root, "keypoints", fr.keypoints),
            "features": arrays.write_array(root, "features", ref.ref_keypoint_features),
        },
    }
    arrays.write_manifest(root, manifest)
    return manifest


def load_reference(path) -> ReferenceSet:
    root = Path(path)
    m = arrays.read_manifest(root)
    if m.get("kind") != "reference":
        raise IntegrityError(f"{root} is not a reference set")
    ids = np.asarray(m["keypoint_ids"], dtype=np.int64)
    fr = Frame(
        cloud=arrays.read_array(root, m["arrays"]["cloud"]),
        keypoints=arrays.read_array(root, m["arrays"]["keypoints"]),
        keypoint_ids=ids,
        deformation=DeformationParams.from_dict(m["frame"]["deformation"]),
        seed=int(m["frame"]["seed"]),
        template_id=int(m["frame"]["template_id"]),
        meta={"appended_from": m["frame"].get("appended_from")},
    )
    feats = unit_rows(arrays.read_array(root, m["arrays"]["features"]))
    return ReferenceSet(fr, feats, m["encoder_hash"], ids)
