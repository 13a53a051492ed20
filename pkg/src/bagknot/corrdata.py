"""Correspondence pairs built from simulated deformation sequences, and their on-disk format."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import arrays
from .bagsim import BagTemplate, DeformationParams, Frame
from .errors import ConfigError, InputError, IntegrityError

FORMAT = "bagknot.corrdata/1"


@dataclass(eq=False)
class Sequence:
    seq_id: str
    template: BagTemplate
    family: str
    seed: int
    frames: list = field(default_factory=list)

    def key(self, i: int) -> tuple:
        return (self.seq_id, i)


@dataclass(eq=False)
class CorrespondencePair:
    frame_a: Frame
    frame_b: Frame
    matched_ids: np.ndarray
    key_a: tuple = ()
    key_b: tuple = ()
    template: BagTemplate | None = None

    def __post_init__(self):
        if self.key_a and self.key_a == self.key_b:
            raise InputError("a correspondence pair needs two distinct frames")
        if len(self.matched_ids) == 0:
            raise InputError("a correspondence pair needs at least one matched keypoint")

    def positions(self, ids=None):
        """Keypoint coordinates for ``ids`` (default: all matched) in frames a and b."""
        ids = self.matched_ids if ids is None else np.asarray(ids)
        ra = _rows(self.frame_a, ids)
        rb = _rows(self.frame_b, ids)
        return self.frame_a.keypoints[ra], self.frame_b.keypoints[rb]


def _rows(frame, ids):
    lookup = {int(k): r for r, k in enumerate(frame.keypoint_ids)}
    return np.array([lookup[int(k)] for k in ids], dtype=np.int64)


# ---------------------------------------------------------------------------
# keyed pair sampling

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix(x: np.ndarray) -> np.ndarray:
    x = (x + np.uint64(0x9E3779B97F4A7C15)) & _MASK
    x = ((x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK
    x = ((x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK
    return x ^ (x >> np.uint64(31))


def frame_uid(seq_id: str, index: int) -> int:
    h = hashlib.blake2b(f"{seq_id}\x1f{index}".encode(), digest_size=8).digest()
    return int.from_bytes(h, "little")


def pair_uniforms(uid_a: np.ndarray, uid_b: np.ndarray, seed: int) -> np.ndarray:
    """Order-independent uniform in [0, 1) for each unordered frame pair."""
    lo = np.minimum(uid_a, uid_b).astype(np.uint64)
    hi = np.maximum(uid_a, uid_b).astype(np.uint64)
    with np.errstate(over="ignore"):
        s = _splitmix(np.full_like(lo, np.uint64(seed % 2**64)))
        x = _splitmix(lo ^ s)
        x = _splitmix(x ^ hi)
    return (x >> np.uint64(11)).astype(np.float64) / float(2**53)


def build_pairs(sequences, p_m: float = 0.001, seed: int = 0) -> list[CorrespondencePair]:
    """Include each unordered same-template frame pair independently with probability ``p_m``.

    Inclusion is decided by hashing the two frame identities with the seed,
    so the result does not depend on the order of ``sequences``.
    """
    if not (0.0 < p_m <= 1.0):
        raise ConfigError(f"p_m must lie in (0, 1], got {p_m}")
    entries = []  # (template_id, uid, key, frame)
    templates = {}
    for seq in sequences:
        templates[seq.template.template_id] = seq.template
        for i, fr in enumerate(seq.frames):
            entries.append((seq.template.template_id, frame_uid(seq.seq_id, i), seq.key(i), fr))
    if len(entries) < 2:
        raise InputError("need at least 2 frames to build pairs")
    entries.sort(key=lambda e: (e[0], e[1], e[2]))
    pairs = []
    tids = np.array([e[0] for e in entries])
    for tid in np.unique(tids):
        group = [e for e in entries if e[0] == tid]
        uids = np.array([e[1] for e in group], dtype=np.uint64)
        ia, ib = np.triu_indices(len(group), k=1)
        if len(ia) == 0:
            continue
        keep = pair_uniforms(uids[ia], uids[ib], seed) < p_m
        for a, b in zip(ia[keep], ib[keep]):
            fa, fb = group[a][3], group[b][3]
            ids = np.intersect1d(fa.keypoint_ids, fb.keypoint_ids)
            if len(ids):
                pairs.append(CorrespondencePair(fa, fb, ids, group[a][2], group[b][2], templates[int(tid)]))
    pairs.sort(key=lambda p: (p.key_a, p.key_b))
    return pairs


# ---------------------------------------------------------------------------
# serialization


def _frame_record(fr: Frame) -> dict:
    return {
        "seed": fr.seed,
        "template_id": fr.template_id,
        "keypoint_ids": [int(k) for k in fr.keypoint_ids],
        "deformation": fr.deformation.to_dict(),
        "frame_index": fr.meta.get("frame_index"),
    }


def _write_sequences(root: Path, seq_frames) -> list:
    """seq_frames: list of (Sequence, [frame indices]). Returns manifest descriptors."""
    out = []
    for n, (seq, idxs) in enumerate(seq_frames):
        frames = [seq.frames[i] for i in idxs]
        n_pc = {f.n_pc for f in frames}
        if len(n_pc) > 1:
            raise InputError(f"sequence {seq.seq_id}: frames disagree on n_pc")
        tag = f"seq{n:05d}"
        desc = {
            "seq_id": seq.seq_id,
            "template": seq.template.to_dict(),
            "family": seq.family,
            "seed": seq.seed,
            "frame_indices": list(map(int, idxs)),
            "frames": [_frame_record(f) for f in frames],
            "arrays": {},
        }
        if frames:
            desc["arrays"]["clouds"] = arrays.write_array(root, f"{tag}.clouds", np.stack([f.cloud for f in frames]))
            desc["arrays"]["keypoints"] = arrays.write_array(root, f"{tag}.keypoints", np.stack([f.keypoints for f in frames]))
        out.append(desc)
    return out


def _read_sequences(root: Path, descs) -> list[Sequence]:
    try:
        return [_read_sequence(root, desc) for desc in descs]
    except (KeyError, TypeError, ValueError) as exc:
        raise IntegrityError(f"{root}: malformed sequence entry ({exc!r})") from exc


def _read_sequence(root: Path, desc) -> Sequence:
    template = BagTemplate.from_dict(desc["template"])
    seq = Sequence(desc["seq_id"], template, desc["family"], int(desc["seed"]))
    idxs = desc["frame_indices"]
    if idxs:
        clouds = arrays.read_array(root, desc["arrays"]["clouds"])
        kps = arrays.read_array(root, desc["arrays"]["keypoints"])
        if len(clouds) != len(idxs) or len(kps) != len(idxs):
            raise IntegrityError(f"sequence {seq.seq_id}: array length disagrees with frame list")
    # frames are stored sparsely; keep them addressable by their original index
    seq.frames = {}
    for r, (i, rec) in enumerate(zip(idxs, desc["frames"])):
        fr = Frame(
            cloud=clouds[r],
            keypoints=kps[r],
            keypoint_ids=np.asarray(rec["keypoint_ids"], dtype=np.int64),
            deformation=DeformationParams.from_dict(rec["deformation"]),
            seed=int(rec["seed"]),
            template_id=int(rec["template_id"]),
        )
        if rec.get("frame_index") is not None:
            fr.meta["frame_index"] = rec["frame_index"]
        seq.frames[i] = fr
    if sorted(seq.frames) == list(range(len(seq.frames))):
        seq.frames = [seq.frames[i] for i in range(len(seq.frames))]
    return seq


def save_sequences(sequences, path, extra: dict | None = None) -> dict:
    """Write complete sequences (every frame) to ``path``."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    descs = _write_sequences(root, [(s, list(range(len(s.frames)))) for s in sequences])
    manifest = {
        "format": FORMAT,
        "kind": "sequences",
        "sequences": descs,
        "counts": {"sequences": len(descs), "frames": sum(len(d["frame_indices"]) for d in descs)},
        **(extra or {}),
    }
    arrays.write_manifest(root, manifest)
    return manifest


def load_sequences(path) -> list[Sequence]:
    root = Path(path)
    manifest = arrays.read_manifest(root)
    return _read_sequences(root, manifest["sequences"])


def save_dataset(pairs, path, p_m: float | None = None, seed: int | None = None, extra: dict | None = None) -> dict:
    """Write pairs plus every frame they reference; returns the manifest."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    by_seq: dict = {}
    seq_meta: dict = {}
    for p in pairs:
        if p.template is None:
            raise InputError("pairs must carry their template to be saved")
        for key, fr in ((p.key_a, p.frame_a), (p.key_b, p.frame_b)):
            if not key:
                raise InputError("pairs must carry frame keys to be saved")
            by_seq.setdefault(key[0], {})[key[1]] = fr
            seq_meta.setdefault(key[0], (fr, p.template))
    seq_frames = []
    for sid in sorted(by_seq):
        frames = by_seq[sid]
        idxs = sorted(frames)
        first, template = seq_meta[sid]
        seq = Sequence(
            sid,
            template,
            first.deformation.family_label or "",
            int(first.seed),
            frames={i: frames[i] for i in idxs},
        )
        seq_frames.append((seq, idxs))
    descs = _write_sequences(root, seq_frames)
    manifest = {
        "format": FORMAT,
        "kind": "pairs",
        "p_m": p_m,
        "seed": seed,
        "sequences": descs,
        "pairs": [
            {"a": list(p.key_a), "b": list(p.key_b), "matched_ids": [int(k) for k in p.matched_ids]} for p in pairs
        ],
        "counts": {
            "pairs": len(pairs),
            "frames": sum(len(d["frame_indices"]) for d in descs),
            "sequences": len(descs),
        },
        **(extra or {}),
    }
    arrays.write_manifest(root, manifest)
    return manifest


def load_dataset(path) -> list[CorrespondencePair]:
    """Inverse of save_dataset; array contents come back as stored float32."""
    root = Path(path)
    manifest = arrays.read_manifest(root)
    if manifest.get("kind") != "pairs":
        raise IntegrityError(f"{root} is not a pair dataset")
    seqs = {s.seq_id: s for s in _read_sequences(root, manifest["sequences"])}
    pairs = []
    for rec in manifest["pairs"]:
        ka, kb = tuple(rec["a"]), tuple(rec["b"])
        try:
            fa, fb = seqs[ka[0]].frames[ka[1]], seqs[kb[0]].frames[kb[1]]
        except (KeyError, IndexError) as exc:
            raise IntegrityError(f"pair references missing frame {ka} / {kb}") from exc
        if seqs[ka[0]].template != seqs[kb[0]].template:
            raise IntegrityError(f"pair {ka} / {kb} spans two templates")
        pairs.append(CorrespondencePair(fa, fb, np.asarray(rec["matched_ids"], dtype=np.int64), ka, kb, seqs[ka[0]].template))
    return pairs
