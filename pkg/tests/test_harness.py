import json
import shutil

import numpy as np
import pytest

from bagknot.corrdata import load_dataset, load_sequences
from bagknot.encoder import load_encoder
from bagknot.errors import ConfigError, InputError, IntegrityError
from bagknot.harness import (
    COLUMNS,
    OUTPUT_ENV,
    ExperimentConfig,
    Pipeline,
    SuccessTable,
    check_split_hygiene,
    episode_specs,
    eval_matrix,
    experiment_task,
    load_config,
    load_demos,
    load_frame,
    load_tables,
    make_demos,
    output_root,
    reference_frame,
    save_demos,
    save_frame,
    scan_template_ids,
)
from bagknot.harness.cli import main
from bagknot.matcher import load_reference
from bagknot.policy import ExpertReplayActor, PolicyConfig, PolicyWeights

TINY = dict(
    seen_templates=[0, 1],
    demo_templates=[0],
    unseen_templates=[100],
    corr_sequences=1,
    corr_frames=6,
    p_m=0.5,
    n_pc=256,
    demos_per_family=2,
    attempts=1,
    encoder={"epochs": 1},
    policy={"D": 16, "layers": 1, "heads": 2, "steps": 20, "batch_size": 16, "K": 10},
)


@pytest.fixture(scope="module")
def tiny_config():
    return ExperimentConfig.from_dict(TINY)


@pytest.fixture(scope="module")
def run_root(tiny_config, tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    status = Pipeline(tiny_config, root).run()
    assert set(status.values()) == {"ran"}
    return root


# -- configuration ---------------------------------------------------------------------


def test_default_config_shape():
    c = ExperimentConfig()
    assert c.demo_families == ("VC", "HC") and c.eval_families == ("VC", "HC", "DC", "TF", "IF")
    assert len(c.seen_templates) == 6 and len(c.unseen_templates) == 3 and c.attempts == 3
    assert not set(c.seen_templates) & set(c.unseen_templates)
    assert c.encoder.d == 64


def test_overlapping_splits_rejected():
    with pytest.raises(ConfigError):
        ExperimentConfig(unseen_templates=(0, 100))


def test_empty_demo_families_rejected_before_anything_runs(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**TINY, "demo_families": []})
    path = tmp_path / "bad.yaml"
    path.write_text("demo_families: []\n")
    assert main(["run", "--config", str(path), "--root", str(tmp_path / "out")]) == 2
    assert not (tmp_path / "out").exists()


def test_unknown_keys_and_families_rejected():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"sede": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"eval_families": ["VC", "ZZ"]})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"policy": {"depth": 3}})


def test_config_files_round_trip(tmp_path):
    c = ExperimentConfig.from_dict(TINY)
    (tmp_path / "c.json").write_text(json.dumps(c.to_dict()))
    assert load_config(tmp_path / "c.json") == c
    (tmp_path / "c.yaml").write_text("seed: 4\nn_pc: 512\n")
    y = load_config(tmp_path / "c.yaml", seed=9)
    assert y.seed == 9 and y.n_pc == 512


def test_output_root_env(monkeypatch, tmp_path):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
    assert output_root() == tmp_path


# -- tables ------------------------------------------------------------------------------


def test_table_bookkeeping_and_render():
    t = SuccessTable("demo")
    for ok in (True, False, True):
        t.add("ours", "DC", ok)
    t.add("ours", "TF", False)
    assert t.cell("ours", "DC") == (2, 3) and t.rate("ours", "DC") == pytest.approx(2 / 3)
    assert t.total("ours") == (2, 4)
    text = t.render()
    assert "2/3" in text and "0/1" in text and "-" in text.splitlines()[-1]
    back = SuccessTable.from_dict(json.loads(json.dumps(t.to_dict())))
    assert back.cells == t.cells and back.rows == t.rows


def test_table_rejects_bad_cells():
    t = SuccessTable()
    with pytest.raises(InputError):
        t.add("x", "VC", True)
    t.cells["x"] = {"DC": [3, 2]}
    with pytest.raises(InputError):
        t.validate()


# -- artifacts ------------------------------------------------------------------------------


def test_demo_and_frame_round_trip(tiny_config, tmp_path):
    task = experiment_task(tiny_config)
    demos = make_demos(tiny_config, task)
    save_demos(demos, task, tmp_path / "d")
    back, task2 = load_demos(tmp_path / "d")
    assert len(back) == 4 and np.array_equal(task2.M, task.M)
    assert np.allclose(back[0].actions, demos[0].actions, atol=1e-6)
    assert back[0].meta["family"] == "VC"
    fr = reference_frame(tiny_config)
    save_frame(fr, tmp_path / "f")
    assert np.array_equal(load_frame(tmp_path / "f").cloud, fr.cloud.astype(np.float32))


# -- evaluation matrix ---------------------------------------------------------------------


def test_expert_row_all_success_and_zero_row_all_failure(tiny_config, run_root):
    enc = load_encoder(run_root / "encoder")
    ref = load_reference(run_root / "reference")
    _, task = load_demos(run_root / "demos")
    expert, _ = eval_matrix(ExpertReplayActor(), enc, ref, tiny_config, task, tiny_config.demo_templates, row="expert")
    zero, _ = eval_matrix(PolicyWeights.zeros(PolicyConfig.desk(K=5)), enc, ref, tiny_config, task, tiny_config.demo_templates, row="zero")
    for col in COLUMNS:
        s, a = expert.cell("expert", col)
        assert s == a > 0
        s, a = zero.cell("zero", col)
        assert s == 0 and a > 0


def test_cell_attempts_equal_config(tiny_config, run_root):
    tables = load_tables(run_root / "eval")
    # VC&HC holds two families, the others one
    for split, templates in (("seen", tiny_config.demo_templates), ("unseen", tiny_config.unseen_templates)):
        for col in COLUMNS:
            _, a = tables[split].cell("ours", col)
            fams = 2 if col == "VC&HC" else 1
            assert a == fams * len(templates) * tiny_config.attempts


def test_encoder_hash_mismatch_is_a_config_error(tiny_config, run_root):
    enc = load_encoder(run_root / "ablate" / "encoder")
    ref = load_reference(run_root / "reference")
    _, task = load_demos(run_root / "demos")
    with pytest.raises(ConfigError):
        eval_matrix(ExpertReplayActor(), enc, ref, tiny_config, task, [0])


def test_ablation_table_layout_and_paired_seeds(run_root):
    table = load_tables(run_root / "ablate")["ablation"]
    assert table.rows == ["ours", "ours-reidentify", "ours-no-TF-IF-encoder"]
    assert all(set(table.cells[r]) == set(COLUMNS) for r in table.rows)
    base = [e for e in json.loads((run_root / "eval" / "episodes.json").read_text()) if e["split"] == "seen"]
    abl = json.loads((run_root / "ablate" / "episodes.json").read_text())
    key = lambda e: (e["template_id"], e["family"], e["seed"])  # noqa: E731
    base_keys = sorted(map(key, base))
    for row in ("ours-reidentify", "ours-no-TF-IF-encoder"):
        assert sorted(key(e) for e in abl if e["row"] == row) == base_keys


def test_ablation_dataset_has_no_tf_if_frames(run_root):
    m = json.loads((run_root / "ablate" / "pairs" / "manifest.json").read_text())
    fams = {fr["deformation"]["family_label"] for s in m["sequences"] for fr in s["frames"]}
    assert fams and not fams & {"TF", "IF"}
    full = {s.family for s in load_sequences(run_root / "data")}
    assert {"TF", "IF"} <= full
    assert all(p.frame_a.deformation.family_label not in ("TF", "IF") for p in load_dataset(run_root / "ablate" / "pairs"))


def test_episode_seeds_depend_only_on_cell(tiny_config):
    task = experiment_task(tiny_config)
    a = [s.seed for s in episode_specs(tiny_config, [0], task, "TF")]
    b = [s.seed for s in episode_specs(tiny_config.with_seed(0), [0], task, "TF")]
    c = [s.seed for s in episode_specs(tiny_config.with_seed(1), [0], task, "TF")]
    assert a == b != c


# -- pipeline bookkeeping -----------------------------------------------------------------------


def test_stage_records(run_root):
    for stage in ("datagen", "pairs", "train-encoder", "demos", "train-policy", "eval", "ablate", "report"):
        rec = json.loads((run_root / "stages" / f"{stage}.json").read_text())
        assert rec["stage"] == stage and rec["inputs_hash"] and rec["outputs"] and isinstance(rec["seed"], int)


def test_resume_after_deleting_eval_reruns_eval_only(tiny_config, run_root, tmp_path):
    root = tmp_path / "copy"
    shutil.copytree(run_root, root)
    before = (root / "eval" / "tables.json").read_bytes()
    shutil.rmtree(root / "eval")
    status = Pipeline(tiny_config, root).run()
    assert [s for s, v in status.items() if v == "ran"] == ["eval"]
    assert (root / "eval" / "tables.json").read_bytes() == before


def test_config_change_invalidates_downstream_only(tiny_config, run_root, tmp_path):
    root = tmp_path / "copy"
    shutil.copytree(run_root, root)
    cfg = ExperimentConfig.from_dict({**TINY, "attempts": 2})
    pipe = Pipeline(cfg, root)
    assert pipe.is_current("train-policy") and not pipe.is_current("eval")


def test_split_hygiene(tiny_config, run_root, tmp_path):
    found = check_split_hygiene(run_root, tiny_config.unseen_templates)
    assert found and all(set(v) <= set(tiny_config.seen_templates) for v in found.values())
    root = tmp_path / "copy"
    shutil.copytree(run_root, root)
    m = json.loads((root / "demos" / "manifest.json").read_text())
    m["demos"][0]["template_id"] = 100
    (root / "demos" / "manifest.json").write_text(json.dumps(m))
    assert 100 in scan_template_ids(root)["demos/manifest.json"]
    with pytest.raises(IntegrityError):
        check_split_hygiene(root, tiny_config.unseen_templates)


def test_stage_failure_names_the_stage(tiny_config, tmp_path):
    root = tmp_path / "r"
    Pipeline(tiny_config, root).run(["datagen"])
    (root / "data" / "manifest.json").write_text(json.dumps({"sequences": [{"seq_id": "x"}]}))
    with pytest.raises(Exception) as exc:
        Pipeline(tiny_config, root).run(["pairs"])
    assert "pairs" in str(exc.value)


def test_unknown_stage_rejected(tiny_config, tmp_path):
    with pytest.raises(ConfigError):
        Pipeline(tiny_config, tmp_path).run(["train"])


# -- command line -------------------------------------------------------------------------------


def test_cli_report_json_and_text(run_root, tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    monkeypatch.setenv(OUTPUT_ENV, str(run_root))
    assert main(["report", "--config", str(cfg), "--json"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert set(data) == {"seen", "unseen", "ablation"}
    assert main(["report", "--config", str(cfg)]) == 0
    assert "VC&HC" in capsys.readouterr().out


def test_cli_frame_match_and_rollout(run_root, tmp_path, capsys):
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    common = ["--config", str(cfg), "--root", str(run_root)]
    assert main(["render-frame", *common, "--template", "0", "--family", "TF", "--out", str(tmp_path / "f")]) == 0
    capsys.readouterr()
    assert main(["match", "--frame", str(tmp_path / "f"), "--ref", str(run_root / "reference"), "--encoder", str(run_root / "encoder")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert len(out["ids"]) == len(out["keypoints"]) == len(out["indices"]) == len(out["similarities"]) == 10
    assert main(["rollout", *common, "--family", "TF", "--template", "1", "--seed", "7", "--mode", "reidentify"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["mode"] == "reidentify" and rec["episode_seed"] == 7 and isinstance(rec["success"], bool)


def test_cli_stage_commands(run_root, tmp_path, capsys):
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    out = tmp_path / "p"
    assert main(["pairs", "--config", str(cfg), "--data", str(run_root / "data"), "--pm", "1.0", "--seed", "3", "--exclude", "TF", "IF", "--out", str(out)]) == 0
    capsys.readouterr()
    assert all(p.frame_a.deformation.family_label in ("VC", "HC", "DC") for p in load_dataset(out))
    assert main(["eval-encoder", "--ckpt", str(run_root / "encoder"), "--pairs", str(out)]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert 0.0 <= stats["accuracy"] <= 1.0


def test_cli_missing_input_exit_code(tmp_path, capsys):
    assert main(["match", "--frame", str(tmp_path / "none"), "--ref", str(tmp_path), "--encoder", str(tmp_path)]) == 2
    assert "no manifest" in capsys.readouterr().err
