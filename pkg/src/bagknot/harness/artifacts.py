"""On-disk formats for demonstrations and single frames (manifest + float32 arrays)."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .. import arrays
from ..bagsim import DeformationParams, Demonstration, Frame, TaskMaps
from ..errors import IntegrityError


def save_demos(demos, task: TaskMaps, path, extra: dict | None = None) -> dict:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "bagknot.demos/1",
        "kind": "demos",
        "task": task.to_dict(),
        "demos": [{"task_seed": d.task_seed, "stage_boundaries": list(d.stage_boundaries), **d.meta} for d in demos],
        "counts": {"demos": len(demos)},
        **(extra or {}),
    }
    if demos:
        manifest["arrays"] = {
            "keypoints": arrays.write_array(root, "keypoints", np.stack([d.keypoints for d in demos])),
            "states": arrays.write_array(root, "states", np.stack([d.states for d in demos])),
            "actions": arrays.write_array(root, "actions", np.stack([d.actions for d in demos])),
        }
    arrays.write_manifest(root, manifest)
    return manifest


def load_demos(path):
    """Returns (demonstrations, task)."""
    root = Path(path)
    m = arrays.read_manifest(root)
    if m.get("kind") != "demos":
        raise IntegrityError(f"{root} is not a demonstration set")
    task = TaskMaps.from_dict(m["task"])
    if not m["demos"]:
        return [], task
    kps, states, acts = (arrays.read_array(root, m["arrays"][k]) for k in ("keypoints", "states", "actions"))
    if not len(kps) == len(states) == len(acts) == len(m["demos"]):
        raise IntegrityError("demonstration arrays disagree with the manifest")
    demos = []
    for i, rec in enumerate(m["demos"]):
        meta = {k: v for k, v in rec.items() if k not in ("task_seed", "stage_boundaries")}
        demos.append(
            Demonstration(
                kps[i].astype(np.float64),
                states[i].astype(np.float64),
                acts[i].astype(np.float64),
                tuple(rec["stage_boundaries"]),
                int(rec["task_seed"]),
                meta,
            )
        )
    return demos, task


def save_frame(frame: Frame, path, extra: dict | None = None) -> dict:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "bagknot.frame/1",
        "kind": "frame",
        "seed": frame.seed,
        "template_id": frame.template_id,
        "keypoint_ids": [int(k) for k in frame.keypoint_ids],
        "deformation": frame.deformation.to_dict(),
        "arrays": {
            "cloud": arrays.write_array(root, "cloud", frame.cloud),
            "keypoints": arrays.write_array(root, "keypoints", frame.keypoints),
        },
        **(extra or {}),
    }
    arrays.write_manifest(root, manifest)
    return manifest


def load_frame(path) -> Frame:
    root = Path(path)
    m = arrays.read_manifest(root)
    if m.get("kind") != "frame":
        raise IntegrityError(f"{root} is not a frame")
    return Frame(
        cloud=arrays.read_array(root, m["arrays"]["cloud"]),
        keypoints=arrays.read_array(root, m["arrays"]["keypoints"]),
        keypoint_ids=np.asarray(m["keypoint_ids"], dtype=np.int64),
        deformation=DeformationParams.from_dict(m["deformation"]),
        seed=int(m["seed"]),
        template_id=int(m["template_id"]),
    )
