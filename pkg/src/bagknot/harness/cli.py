"""Command-line entry point: ``bagknot <subcommand> ...``.

Stage subcommands (datagen, pairs, train-encoder, demos, train-policy) take
explicit input/output directories; ``run``, ``eval``, ``ablate`` and
``report`` drive the resumable pipeline under the output root.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import arrays
from ..bagsim import FAMILIES, render_frame, sample_family, synthesize_template
from ..bagsim.episodes import derive_seed
from ..corrdata import build_pairs, load_dataset, load_sequences, save_dataset, save_sequences
from ..encoder import evaluate_pairs, load_encoder, save_encoder, train_encoder
from ..errors import BagknotError
from ..matcher import MODES, identify_keypoints, init_state, load_reference, make_reference, reidentify_step, save_reference, track_step
from ..policy import EpisodeSpec, load_policy, rollout, save_policy, train_policy
from .artifacts import load_demos, load_frame, save_demos, save_frame
from .config import load_config, output_root
from .pipeline import STAGES, Pipeline, experiment_task, load_tables, make_demos, make_sequences, reference_frame, render_report

log = logging.getLogger("bagknot")


def _config(args):
    return load_config(args.config, seed=args.seed)


def _root(args) -> Path:
    return Path(args.root) if args.root else output_root()


def _emit(obj):
    sys.stdout.write(arrays.dumps(obj))


# -- stage commands ------------------------------------------------------------


def cmd_datagen(args):
    cfg = _config(args)
    templates = tuple(args.templates) if args.templates else cfg.seen_templates
    out = Path(args.out or _root(args) / "data")
    seqs = make_sequences(cfg, templates, cfg.corr_families)
    m = save_sequences(seqs, out, extra={"seed": cfg.seed, "template_ids": list(templates)})
    _emit({"out": str(out), **m["counts"]})


def cmd_pairs(args):
    cfg = _config(args)
    seqs = load_sequences(args.data or _root(args) / "data")
    if args.exclude:
        seqs = [s for s in seqs if s.family not in args.exclude]
    pm = cfg.p_m if args.pm is None else args.pm
    out = Path(args.out or _root(args) / "pairs")
    m = save_dataset(build_pairs(seqs, pm, cfg.seed), out, pm, cfg.seed, extra={"excluded_families": list(args.exclude or [])})
    _emit({"out": str(out), **m["counts"]})


def cmd_train_encoder(args):
    cfg = _config(args)
    pairs = load_dataset(args.pairs or _root(args) / "pairs")
    weights = train_encoder(pairs, replace(cfg.encoder, seed=cfg.seed))
    out = Path(args.out or _root(args) / "encoder")
    save_encoder(weights, out)
    result = {"out": str(out), "weights_hash": weights.hash, "final_loss": weights.loss_curve[-1] if weights.loss_curve else None}
    if args.ref_out:
        frame = load_frame(args.ref_frame) if args.ref_frame else reference_frame(cfg)
        save_reference(make_reference(frame, load_encoder(out)), args.ref_out)
        result["reference"] = str(args.ref_out)
    _emit(result)


def cmd_eval_encoder(args):
    weights = load_encoder(args.ckpt)
    res = evaluate_pairs(load_dataset(args.pairs), weights, threshold=args.threshold)
    _emit({k: float(v) if np.isscalar(v) else v for k, v in res.items()})


def cmd_demos(args):
    cfg = _config(args)
    task = experiment_task(cfg)
    out = Path(args.out or _root(args) / "demos")
    m = save_demos(make_demos(cfg, task), task, out, extra={"seed": cfg.seed})
    _emit({"out": str(out), **m["counts"]})


def cmd_train_policy(args):
    cfg = _config(args)
    demos, _ = load_demos(args.demos or _root(args) / "demos")
    weights = train_policy(demos, replace(cfg.policy, seed=cfg.seed))
    if args.encoder:
        weights.meta = {"encoder_hash": arrays.read_manifest(args.encoder)["weights_hash"]}
    out = Path(args.out or _root(args) / "policy")
    save_policy(weights, out)
    _emit({"out": str(out), "weights_hash": weights.hash, "final_loss": weights.loss_curve[-1] if weights.loss_curve else None})


def cmd_rollout(args):
    cfg = _config(args)
    root = _root(args)
    encoder = load_encoder(args.encoder or root / "encoder")
    ref = load_reference(args.ref or root / "reference")
    policy = load_policy(args.policy or root / "policy")
    task = load_demos(args.demos)[1] if args.demos else experiment_task(cfg)
    spec = EpisodeSpec(synthesize_template(seed=args.template), args.family, args.seed, task, cfg.n_pc)
    rec = rollout(policy, encoder, ref, spec, args.mode, seed=args.seed)
    _emit({"success": rec.success, "stage_errors": [float(e) for e in rec.stage_errors], **rec.meta})


def cmd_match(args):
    encoder = load_encoder(args.encoder)
    ref = load_reference(args.ref)
    frames = [load_frame(f) for f in args.frame]
    state = init_state(frames[0], ref, encoder, args.mode)
    ident = identify_keypoints(frames[0], ref, encoder)
    out = [
        {
            "ids": ref.keypoint_ids.tolist(),
            "keypoints": ident.keypoints.tolist(),
            "indices": ident.indices.tolist(),
            "similarities": ident.similarities.tolist(),
        }
    ]
    for prev, nxt in zip(frames, frames[1:]):
        if args.mode == "track":
            state = track_step(state, prev, nxt)
            sims = None
        else:
            state = reidentify_step(state, nxt, ref, encoder)
            sims = state.similarities.tolist()
        idx = [int(np.argmin(np.linalg.norm(nxt.cloud - k, axis=1))) for k in state.current_keypoints]
        out.append({"ids": state.keypoint_ids.tolist(), "keypoints": state.current_keypoints.tolist(), "indices": idx, "similarities": sims})
    _emit(out[0] if len(out) == 1 else out)


def cmd_render_frame(args):
    cfg = _config(args)
    template = synthesize_template(seed=args.template)
    s = derive_seed(cfg.seed, args.template, FAMILIES.index(args.family), 0xF4)
    frame = render_frame(template, sample_family(args.family, s), args.n_pc or cfg.n_pc, s)
    save_frame(frame, args.out)
    _emit({"out": str(args.out), "template_id": args.template, "family": args.family, "seed": s})


# -- pipeline commands -----------------------------------------------------------


def _pipeline(args):
    return Pipeline(_config(args), _root(args))


def _run_until(args, last):
    pipe = _pipeline(args)
    status = pipe.run(STAGES[: STAGES.index(last) + 1], resume=not args.fresh)
    return pipe, status


def cmd_run(args):
    pipe, status = _run_until(args, "report")
    sys.stdout.write((pipe.paths["report"] / "tables.txt").read_text())
    log.info("stages: %s", status)


def cmd_eval(args):
    pipe, _ = _run_until(args, "eval")
    sys.stdout.write(render_report(load_tables(pipe.paths["eval"])) + "\n")


def cmd_ablate(args):
    pipe, _ = _run_until(args, "ablate")
    sys.stdout.write(render_report(load_tables(pipe.paths["ablate"])) + "\n")


def cmd_report(args):
    pipe, _ = _run_until(args, "report")
    tables = {**load_tables(pipe.paths["eval"]), **load_tables(pipe.paths["ablate"])}
    if args.json:
        _emit({k: t.to_dict() for k, t in tables.items()})
    else:
        sys.stdout.write(render_report(tables) + "\n")


# ---------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON experiment config")
    common.add_argument("--seed", type=int, default=None, help="global seed (overrides the config)")
    common.add_argument("--root", help="output root (default: $BAGKNOT_OUTPUT_ROOT or ./runs)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="bagknot", description="Desk-scale bag keypoint pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(fn=fn)
        return sp

    sp = add("datagen", cmd_datagen, "simulate correspondence sequences")
    sp.add_argument("--templates", type=int, nargs="+")
    sp.add_argument("--out")

    sp = add("pairs", cmd_pairs, "sample correspondence pairs from sequences")
    sp.add_argument("--data")
    sp.add_argument("--pm", type=float, default=None)
    sp.add_argument("--exclude", nargs="+", choices=FAMILIES)
    sp.add_argument("--out")

    sp = add("train-encoder", cmd_train_encoder, "contrastively train the point encoder")
    sp.add_argument("--pairs")
    sp.add_argument("--out")
    sp.add_argument("--ref-out", help="also write a reference set here")
    sp.add_argument("--ref-frame", help="frame directory for the reference (default: config reference frame)")

    sp = add("eval-encoder", cmd_eval_encoder, "keypoint identification accuracy on a pair dataset")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--pairs", required=True)
    sp.add_argument("--threshold", type=float, default=0.1)

    sp = add("demos", cmd_demos, "record scripted demonstrations")
    sp.add_argument("--out")

    sp = add("train-policy", cmd_train_policy, "train the diffusion policy on demonstrations")
    sp.add_argument("--demos")
    sp.add_argument("--encoder")
    sp.add_argument("--out")

    sp = add("rollout", cmd_rollout, "run one closed-loop episode")
    sp.add_argument("--policy")
    sp.add_argument("--encoder")
    sp.add_argument("--ref")
    sp.add_argument("--demos", help="take the task from this demonstration set")
    sp.add_argument("--family", choices=FAMILIES, required=True)
    sp.add_argument("--template", type=int, required=True)
    sp.add_argument("--mode", choices=MODES, default="track")

    sp = add("match", cmd_match, "identify (and track) keypoints on saved frames")
    sp.add_argument("--frame", nargs="+", required=True)
    sp.add_argument("--ref", required=True)
    sp.add_argument("--encoder", required=True)
    sp.add_argument("--mode", choices=MODES, default="track")

    sp = add("render-frame", cmd_render_frame, "render and save one frame")
    sp.add_argument("--template", type=int, required=True)
    sp.add_argument("--family", choices=FAMILIES, required=True)
    sp.add_argument("--n-pc", type=int)
    sp.add_argument("--out", required=True)

    for name, fn, help_ in (
        ("run", cmd_run, "run every pipeline stage (resumable)"),
        ("eval", cmd_eval, "pipeline up to the evaluation matrices"),
        ("ablate", cmd_ablate, "pipeline up to the ablation table"),
        ("report", cmd_report, "print result tables"),
    ):
        sp = add(name, fn, help_)
        sp.add_argument("--fresh", action="store_true", help="ignore completed stage records")
        if name == "report":
            sp.add_argument("--json", action="store_true", help="machine-readable output")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(name)s %(message)s")
    if args.command == "rollout" and args.seed is None:
        args.seed = 0
    try:
        args.fn(args)
    except (BagknotError, FileNotFoundError) as exc:
        print(f"bagknot {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
