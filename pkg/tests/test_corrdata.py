import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bagknot.bagsim import render_frame, sample_family
from bagknot.bagsim.episodes import deformation_sequence
from bagknot.corrdata import (
    CorrespondencePair,
    Sequence,
    build_pairs,
    load_dataset,
    load_sequences,
    pair_uniforms,
    save_dataset,
    save_sequences,
)
from bagknot.errors import ConfigError, InputError, IntegrityError


def _seq(template, family="VC", n=5, seed=0, n_pc=64, tag="s"):
    return Sequence(f"{tag}-{family}-{seed}", template, family, seed, deformation_sequence(template, family, seed, n, n_pc))


def _const_seq(template, n, n_pc=64, tag="c"):
    """n frames of one deformation (cheap, for counting)."""
    fr = render_frame(template, sample_family("VC", 0), n_pc, 0)
    return Sequence(tag, template, "VC", 0, [fr] * n)


def test_two_frames_full_probability_gives_one_pair(template):
    pairs = build_pairs([_seq(template, n=2)], p_m=1.0, seed=0)
    assert len(pairs) == 1
    assert pairs[0].key_a != pairs[0].key_b


def test_full_probability_pairs_carry_all_keypoints(template):
    pairs = build_pairs([_seq(template, n=4)], p_m=1.0, seed=1)
    assert len(pairs) == 6
    for p in pairs:
        assert p.matched_ids.tolist() == list(range(10))
        a, b = p.positions()
        assert a.shape == b.shape == (10, 3)


def test_binomial_pair_count_over_seeds(template):
    # 100 frames of one template, p_m = 0.001 -> Binomial(4950, 0.001)
    seq = _const_seq(template, 100)
    mean, sd = 0.001 * math.comb(100, 2), math.sqrt(0.001 * 0.999 * math.comb(100, 2))
    assert mean == pytest.approx(4.95) and sd == pytest.approx(2.2237, abs=1e-3)
    counts = [len(build_pairs([seq], 0.001, s)) for s in range(200)]
    assert all(abs(c - mean) <= 4 * sd for c in counts)
    # the average over seeds should sit near the binomial mean (sd of the mean ~0.16)
    assert abs(np.mean(counts) - mean) < 4 * sd / math.sqrt(len(counts))


def test_pairs_never_cross_templates():
    from bagknot.bagsim import synthesize_template

    a, b = synthesize_template(seed=1), synthesize_template(seed=2)
    pairs = build_pairs([_const_seq(a, 6, tag="a"), _const_seq(b, 6, tag="b")], 1.0, 0)
    assert len(pairs) == 2 * 15
    for p in pairs:
        assert p.frame_a.template_id == p.frame_b.template_id


@given(st.integers(0, 2**32 - 1), st.integers(0, 2**63), st.integers(0, 2**63))
def test_pair_uniform_symmetric_and_in_range(seed, ua, ub):
    u1 = pair_uniforms(np.array([ua], dtype=np.uint64), np.array([ub], dtype=np.uint64), seed)
    u2 = pair_uniforms(np.array([ub], dtype=np.uint64), np.array([ua], dtype=np.uint64), seed)
    assert u1[0] == u2[0] and 0.0 <= u1[0] < 1.0


def test_pairs_independent_of_sequence_order(template):
    s1, s2 = _seq(template, "VC", 6, 1, tag="x"), _seq(template, "TF", 6, 2, tag="y")
    a = build_pairs([s1, s2], 0.3, 5)
    b = build_pairs([s2, s1], 0.3, 5)
    assert [(p.key_a, p.key_b) for p in a] == [(p.key_a, p.key_b) for p in b]


def test_bad_probability_rejected(template):
    with pytest.raises(ConfigError):
        build_pairs([_seq(template, n=2)], 0.0)


def test_identical_keys_rejected(vc_frame):
    with pytest.raises(InputError):
        CorrespondencePair(vc_frame, vc_frame, np.arange(10), ("s", 0), ("s", 0))


def test_round_trip_is_byte_identical(template, tmp_path):
    pairs = build_pairs([_seq(template, n=5)], 1.0, 0)
    assert len(pairs) == 10
    save_dataset(pairs, tmp_path, 1.0, 0)
    back = load_dataset(tmp_path)
    assert len(back) == 10
    for p, q in zip(pairs, back):
        assert (p.key_a, p.key_b) == (q.key_a, q.key_b)
        assert p.frame_a.cloud.astype("<f4").tobytes() == q.frame_a.cloud.astype("<f4").tobytes()
        assert p.frame_b.keypoints.astype("<f4").tobytes() == q.frame_b.keypoints.astype("<f4").tobytes()
        assert np.array_equal(p.matched_ids, q.matched_ids)
    # saving the loaded pairs again reproduces the manifest exactly
    save_dataset(back, tmp_path / "again", 1.0, 0)
    assert (tmp_path / "manifest.json").read_bytes() == (tmp_path / "again" / "manifest.json").read_bytes()


def test_truncated_array_is_an_integrity_error(template, tmp_path):
    save_dataset(build_pairs([_seq(template, n=3)], 1.0, 0), tmp_path, 1.0, 0)
    f = next(tmp_path.glob("*.clouds.f32"))
    f.write_bytes(f.read_bytes()[:-4])
    with pytest.raises(IntegrityError):
        load_dataset(tmp_path)


def test_corrupted_array_is_an_integrity_error(template, tmp_path):
    save_dataset(build_pairs([_seq(template, n=3)], 1.0, 0), tmp_path, 1.0, 0)
    f = next(tmp_path.glob("*.keypoints.f32"))
    raw = bytearray(f.read_bytes())
    raw[0] ^= 0xFF
    f.write_bytes(bytes(raw))
    with pytest.raises(IntegrityError):
        load_dataset(tmp_path)


def test_missing_array_file(template, tmp_path):
    save_dataset(build_pairs([_seq(template, n=3)], 1.0, 0), tmp_path, 1.0, 0)
    next(tmp_path.glob("*.clouds.f32")).unlink()
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path)


def test_empty_pair_list_manifest(tmp_path):
    m = save_dataset([], tmp_path, 0.001, 0)
    assert m["counts"] == {"pairs": 0, "frames": 0, "sequences": 0}
    assert load_dataset(tmp_path) == []
    assert json.loads((tmp_path / "manifest.json").read_text())["counts"]["pairs"] == 0


def test_manifest_is_little_endian_float32(template, tmp_path):
    save_dataset(build_pairs([_seq(template, n=2)], 1.0, 0), tmp_path, 1.0, 0)
    m = json.loads((tmp_path / "manifest.json").read_text())
    entry = m["sequences"][0]["arrays"]["clouds"]
    assert entry["dtype"] == "<f4"
    raw = (tmp_path / entry["file"]).read_bytes()
    assert len(raw) == 4 * int(np.prod(entry["shape"]))


def test_sequences_round_trip(template, tmp_path):
    seqs = [_seq(template, "HC", 4, 3)]
    save_sequences(seqs, tmp_path)
    back = load_sequences(tmp_path)
    assert back[0].seq_id == seqs[0].seq_id and back[0].family == "HC"
    assert np.array_equal(back[0].frames[2].cloud, seqs[0].frames[2].cloud.astype(np.float32))
