"""Stage-hashed, resumable experiment pipeline and the evaluation matrices."""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import arrays
from ..bagsim import FAMILIES, expert_demo, make_task, render_frame, sample_family, synthesize_template
from ..bagsim.episodes import deformation_sequence, derive_seed, episode_keypoints
from ..corrdata import Sequence, build_pairs, load_dataset, load_sequences, save_dataset, save_sequences
from ..encoder import load_encoder, save_encoder, train_encoder
from ..errors import BagknotError, ConfigError, IntegrityError
from ..matcher import load_reference, make_reference, save_reference
from ..policy import EpisodeSpec, PolicyActor, load_policy, rollout_batch, save_policy, train_policy
from .artifacts import load_demos, save_demos, save_frame
from .config import COLUMN_FAMILIES, COLUMNS, ExperimentConfig
from .tables import SuccessTable

log = logging.getLogger(__name__)

STAGES = ("datagen", "pairs", "train-encoder", "demos", "train-policy", "eval", "ablate", "report")
UPSTREAM = {
    "datagen": (),
    "pairs": ("datagen",),
    "train-encoder": ("pairs",),
    "demos": ("train-encoder",),  # the task is anchored to the reference frame
    "train-policy": ("demos",),
    "eval": ("train-encoder", "train-policy"),
    "ablate": ("datagen", "train-encoder", "train-policy", "eval"),
    "report": ("eval", "ablate"),
}
# config keys each stage depends on (beyond the global seed)
STAGE_KEYS = {
    "datagen": ("seen_templates", "corr_families", "corr_sequences", "corr_frames", "n_pc"),
    "pairs": ("p_m",),
    "train-encoder": ("encoder", "demo_templates", "n_pc"),
    "demos": ("demo_templates", "demo_families", "demos_per_family", "task_gain", "task_offset"),
    "train-policy": ("policy",),
    "eval": ("eval_families", "attempts", "demo_templates", "unseen_templates", "n_pc"),
    "ablate": ("ablation_excluded", "p_m", "encoder", "eval_families", "attempts", "demo_templates", "n_pc"),
    "report": (),
}
OUTPUTS = {
    "datagen": ("data",),
    "pairs": ("pairs",),
    "train-encoder": ("encoder", "reference"),
    "demos": ("demos",),
    "train-policy": ("policy",),
    "eval": ("eval",),
    "ablate": ("ablate",),
    "report": ("report",),
}


def stage_seed(config: ExperimentConfig, stage: str) -> int:
    return derive_seed(config.seed, STAGES.index(stage), 0x57A6)


def tree_digest(path: Path) -> str:
    """sha256 over relative names and bytes of every file below ``path``."""
    h = hashlib.sha256()
    path = Path(path)
    files = sorted(p for p in path.rglob("*") if p.is_file()) if path.is_dir() else [path]
    for p in files:
        h.update(str(p.relative_to(path.parent)).encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def _sequence_seed(config, tid, family, k):
    return derive_seed(config.seed, tid, FAMILIES.index(family), k, 0xC0)


def make_sequences(config: ExperimentConfig, templates, families) -> list[Sequence]:
    seqs = []
    for tid in templates:
        template = synthesize_template(seed=tid)
        for fam in families:
            for k in range(config.corr_sequences):
                s = _sequence_seed(config, tid, fam, k)
                frames = deformation_sequence(template, fam, s, config.corr_frames, config.n_pc)
                seqs.append(Sequence(f"t{tid:03d}-{fam}-{k:02d}", template, fam, s, frames))
    return seqs


def reference_frame(config: ExperimentConfig):
    """Fixed canonical-configuration frame: a VC sample of the first demo template."""
    template = synthesize_template(seed=config.demo_templates[0])
    s = derive_seed(config.seed, 0x4EF)
    return render_frame(template, sample_family("VC", s), config.n_pc, s)


def experiment_task(config: ExperimentConfig):
    center = reference_frame(config).keypoints
    return make_task(derive_seed(config.seed, 0x7A5), center, gain=config.task_gain, offset=config.task_offset)


def make_demos(config: ExperimentConfig, task):
    demos = []
    for tid in config.demo_templates:
        template = synthesize_template(seed=tid)
        for fam in config.demo_families:
            for k in range(config.demos_per_family):
                s = derive_seed(config.seed, tid, FAMILIES.index(fam), k, 0xDE)
                d = expert_demo(episode_keypoints(template, fam, s, task.T), task, seed=s)
                d.meta.update({"template_id": int(tid), "family": fam, "episode_seed": int(s)})
                demos.append(d)
    return demos


def episode_specs(config: ExperimentConfig, templates, task, column):
    specs = []
    for tid in templates:
        template = synthesize_template(seed=tid)
        for fam in COLUMN_FAMILIES[column]:
            if fam not in config.eval_families:
                continue
            for attempt in range(config.attempts):
                s = derive_seed(config.seed, tid, FAMILIES.index(fam), attempt, 0xE7A1)
                specs.append(EpisodeSpec(template, fam, s, task, config.n_pc))
    return specs


def eval_matrix(actor, encoder, ref, config: ExperimentConfig, task, templates, mode="track", row="ours", title=""):
    """Roll out every (template, family, attempt) cell entry and tally successes.

    ``actor`` is a PolicyWeights or any object with ``chunks``; the episode
    seeds depend only on (config.seed, template, family, attempt), so rows
    evaluated with the same config are paired.
    """
    if ref.encoder_hash != encoder.hash:
        raise ConfigError("reference set and encoder checkpoint disagree")
    actor = actor if hasattr(actor, "chunks") else PolicyActor(actor)
    table = SuccessTable(title)
    episodes = []
    for column in COLUMNS:
        specs = episode_specs(config, templates, task, column)
        if not specs:
            continue
        for spec, rec in zip(specs, rollout_batch(actor, encoder, ref, specs, mode)):
            table.add(row, column, rec.success)
            episodes.append(
                {
                    "row": row,
                    "column": column,
                    "template_id": spec.template.template_id,
                    "family": spec.family,
                    "seed": spec.seed,
                    "success": rec.success,
                    "stage_errors": [round(float(e), 6) for e in rec.stage_errors],
                }
            )
    table.validate()
    return table, episodes


# ---------------------------------------------------------------------------


class Pipeline:
    """Runs the stages in order; a stage is skipped when its record matches its inputs."""

    def __init__(self, config: ExperimentConfig, root):
        self.config = config
        self.root = Path(root)
        self.paths = {
            "data": self.root / "data",
            "pairs": self.root / "pairs",
            "encoder": self.root / "encoder",
            "reference": self.root / "reference",
            "demos": self.root / "demos",
            "policy": self.root / "policy",
            "eval": self.root / "eval",
            "ablate": self.root / "ablate",
            "report": self.root / "report",
        }
        self.records = self.root / "stages"

    # -- stage bookkeeping ---------------------------------------------------

    def _record_path(self, stage):
        return self.records / f"{stage}.json"

    def inputs_hash(self, stage) -> str:
        cfg = self.config.to_dict()
        upstream = {}
        for up in UPSTREAM[stage]:
            rec = self.read_record(up)
            upstream[up] = rec["outputs"] if rec else None
        return arrays.digest(
            {
                "stage": stage,
                "seed": cfg["seed"],
                "config": {k: cfg[k] for k in STAGE_KEYS[stage]},
                "upstream": upstream,
            }
        )

    def read_record(self, stage):
        p = self._record_path(stage)
        return json.loads(p.read_text()) if p.exists() else None

    def is_current(self, stage) -> bool:
        rec = self.read_record(stage)
        if rec is None or rec["inputs_hash"] != self.inputs_hash(stage):
            return False
        for name, dig in rec["outputs"].items():
            path = self.paths[name]
            if not path.exists() or tree_digest(path) != dig:
                return False
        return True

    def _write_record(self, stage, inputs_hash, seconds):
        self.records.mkdir(parents=True, exist_ok=True)
        rec = {
            "stage": stage,
            "seed": stage_seed(self.config, stage),
            "inputs_hash": inputs_hash,
            "outputs": {name: tree_digest(self.paths[name]) for name in OUTPUTS[stage]},
            "seconds": round(seconds, 2),
        }
        self._record_path(stage).write_text(arrays.dumps(rec))
        return rec

    def run(self, stages=None, resume: bool = True) -> dict:
        """Execute ``stages`` (default: all) in pipeline order; returns stage -> 'ran' | 'cached'."""
        wanted = list(STAGES if stages is None else stages)
        unknown = set(wanted) - set(STAGES)
        if unknown:
            raise ConfigError(f"unknown stages {sorted(unknown)}")
        status = {}
        for stage in STAGES:
            if stage not in wanted:
                continue
            if resume and self.is_current(stage):
                status[stage] = "cached"
                log.info("stage %s up to date", stage)
                continue
            inputs = self.inputs_hash(stage)
            t0 = time.time()
            log.info("stage %s starting", stage)
            try:
                getattr(self, "stage_" + stage.replace("-", "_"))()
            except BagknotError as exc:
                raise type(exc)(f"stage {stage} failed: {exc}") from exc
            self._write_record(stage, inputs, time.time() - t0)
            status[stage] = "ran"
            log.info("stage %s done in %.1fs", stage, time.time() - t0)
        return status

    # -- stages ----------------------------------------------------------------

    def stage_datagen(self):
        cfg = self.config
        seqs = make_sequences(cfg, cfg.seen_templates, cfg.corr_families)
        save_sequences(seqs, self.paths["data"], extra={"seed": cfg.seed, "template_ids": list(cfg.seen_templates)})

    def stage_pairs(self):
        seqs = load_sequences(self.paths["data"])
        s = stage_seed(self.config, "pairs")
        save_dataset(build_pairs(seqs, self.config.p_m, s), self.paths["pairs"], self.config.p_m, s)

    def _train_encoder(self, pairs_dir, out_dir, ref_dir, stage):
        pairs = load_dataset(pairs_dir)
        enc_cfg = replace(self.config.encoder, seed=stage_seed(self.config, stage))
        weights = train_encoder(pairs, enc_cfg)
        weights.meta = {"pairs": len(pairs)}
        save_encoder(weights, out_dir)
        weights = load_encoder(out_dir)
        ref_frame = reference_frame(self.config)
        save_reference(make_reference(ref_frame, weights), ref_dir)
        return weights

    def stage_train_encoder(self):
        self._train_encoder(self.paths["pairs"], self.paths["encoder"], self.paths["reference"], "train-encoder")

    def stage_demos(self):
        task = experiment_task(self.config)
        demos = make_demos(self.config, task)
        save_demos(demos, task, self.paths["demos"], extra={"seed": self.config.seed})

    def stage_train_policy(self):
        demos, _ = load_demos(self.paths["demos"])
        pol_cfg = replace(self.config.policy, seed=stage_seed(self.config, "train-policy"))
        weights = train_policy(demos, pol_cfg)
        enc = arrays.read_manifest(self.paths["encoder"])
        weights.meta = {"demos": len(demos), "encoder_hash": enc["weights_hash"]}
        save_policy(weights, self.paths["policy"])

    def _load_eval_inputs(self):
        encoder = load_encoder(self.paths["encoder"])
        ref = load_reference(self.paths["reference"])
        policy = load_policy(self.paths["policy"])
        _, task = load_demos(self.paths["demos"])
        return encoder, ref, policy, task

    def _write_tables(self, out: Path, tables: dict, episodes: list):
        out.mkdir(parents=True, exist_ok=True)
        (out / "tables.json").write_text(arrays.dumps({k: t.to_dict() for k, t in tables.items()}))
        (out / "episodes.json").write_text(arrays.dumps(episodes))

    def stage_eval(self):
        cfg = self.config
        check_split_hygiene(self.root, cfg.unseen_templates)
        encoder, ref, policy, task = self._load_eval_inputs()
        tables, episodes = {}, []
        for split, templates in (("seen", cfg.demo_templates), ("unseen", cfg.unseen_templates)):
            table, eps = eval_matrix(policy, encoder, ref, cfg, task, templates, "track", "ours", f"{split} bags")
            tables[split] = table
            episodes += [{**e, "split": split} for e in eps]
        self._write_tables(self.paths["eval"], tables, episodes)

    def stage_ablate(self):
        cfg = self.config
        encoder, ref, policy, task = self._load_eval_inputs()
        base = load_tables(self.paths["eval"])["seen"]
        table = SuccessTable("ablations (seen bags)")
        table.merge_row(base, "ours")
        reid, eps = eval_matrix(policy, encoder, ref, cfg, task, cfg.demo_templates, "reidentify", "ours-reidentify")
        table.merge_row(reid, "ours-reidentify")
        # encoder retrained without the excluded families; the policy is unchanged
        out = self.paths["ablate"]
        seqs = [s for s in load_sequences(self.paths["data"]) if s.family not in cfg.ablation_excluded]
        s = stage_seed(cfg, "pairs")
        save_dataset(build_pairs(seqs, cfg.p_m, s), out / "pairs", cfg.p_m, s, extra={"excluded_families": list(cfg.ablation_excluded)})
        # same initialisation seed as the main encoder: only the data differs
        enc2 = self._train_encoder(out / "pairs", out / "encoder", out / "reference", "train-encoder")
        ref2 = load_reference(out / "reference")
        noex, eps2 = eval_matrix(policy, enc2, ref2, cfg, task, cfg.demo_templates, "track", "ours-no-TF-IF-encoder")
        table.merge_row(noex, "ours-no-TF-IF-encoder")
        table.validate()
        self._write_tables(out, {"ablation": table}, eps + eps2)

    def stage_report(self):
        tables = {**load_tables(self.paths["eval"]), **load_tables(self.paths["ablate"])}
        out = self.paths["report"]
        out.mkdir(parents=True, exist_ok=True)
        (out / "tables.txt").write_text(render_report(tables) + "\n")
        (out / "tables.json").write_text(arrays.dumps({k: t.to_dict() for k, t in tables.items()}))


TRAINING_ARTIFACTS = ("data", "pairs", "encoder", "reference", "demos", "policy", "ablate")


def _template_ids(obj):
    if isinstance(obj, dict):
        for k, v in obj.items():
            if k == "template_id" and isinstance(v, int):
                yield v
            else:
                yield from _template_ids(v)
    elif isinstance(obj, list):
        for v in obj:
            yield from _template_ids(v)


def scan_template_ids(root) -> dict:
    """template ids recorded in every training-artifact manifest below ``root``."""
    found = {}
    for name in TRAINING_ARTIFACTS:
        for m in sorted((Path(root) / name).rglob(arrays.MANIFEST)):
            ids = set(_template_ids(json.loads(m.read_text())))
            if ids:
                found[str(m.relative_to(root))] = sorted(ids)
    return found


def check_split_hygiene(root, unseen) -> dict:
    found = scan_template_ids(root)
    leaks = {k: sorted(set(v) & set(unseen)) for k, v in found.items() if set(v) & set(unseen)}
    if leaks:
        raise IntegrityError(f"unseen templates appear in training artifacts: {leaks}")
    return found


def load_tables(path) -> dict:
    data = json.loads((Path(path) / "tables.json").read_text())
    return {k: SuccessTable.from_dict(v) for k, v in data.items()}


def render_report(tables: dict) -> str:
    return "\n\n".join(t.render() for t in tables.values())


def run_experiment(config: ExperimentConfig, root, stages=None, resume: bool = True) -> Path:
    Pipeline(config, root).run(stages, resume)
    return Path(root)


def run_ablations(config: ExperimentConfig, root) -> SuccessTable:
    """Ensures the base artifacts exist, then returns the 3-row ablation table."""
    Pipeline(config, root).run(STAGES[: STAGES.index("ablate") + 1])
    return load_tables(Path(root) / "ablate")["ablation"]


def save_reference_frame(config: ExperimentConfig, path):
    return save_frame(reference_frame(config), path)
