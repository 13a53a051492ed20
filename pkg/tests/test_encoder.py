import json

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from bagknot.bagsim import synthesize_template
from bagknot.bagsim.episodes import deformation_sequence
from bagknot.corrdata import Sequence, build_pairs
from bagknot.encoder import (
    EncoderConfig,
    EncoderWeights,
    GraphCache,
    SALevel,
    build_graph,
    encode,
    evaluate_pairs,
    load_encoder,
    mean_loss,
    save_encoder,
    train_encoder,
)
from bagknot.errors import ConfigError, IntegrityError, NumericError

from conftest import random_cloud

SMALL = EncoderConfig.desk(
    sa_levels=(SALevel(32, 0.2, 8, (8, 8, 16)), SALevel(8, 0.4, 8, (16, 16, 32))),
    fp_widths=((32, 32), (16, 16, 16)),
    head_widths=(32,),
    d=16,
    m=20,
    batch_size=4,
)


@pytest.fixture(scope="module")
def small():
    return EncoderWeights.init(SMALL, seed=0)


@pytest.fixture(scope="module")
def pairs():
    seqs = []
    for tid in (0, 1):
        tm = synthesize_template(seed=tid)
        for fam in ("VC", "TF"):
            seqs.append(Sequence(f"t{tid}-{fam}", tm, fam, tid, deformation_sequence(tm, fam, tid, 8, 128)))
    return build_pairs(seqs, 0.15, 0)


def test_config_validation():
    with pytest.raises(ConfigError):
        EncoderConfig.desk(d=4)
    with pytest.raises(ConfigError):
        EncoderConfig.desk(tau=0.0)
    with pytest.raises(ConfigError):
        EncoderConfig.desk(m=0)
    with pytest.raises(ConfigError):
        EncoderConfig.desk(sa_levels=(SALevel(32, 0.4, 8, (8,)), SALevel(8, 0.2, 8, (8,))))


def test_config_dict_round_trip():
    c = EncoderConfig.desk()
    assert EncoderConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c


@given(st.integers(0, 2**31), st.integers(70, 300))
def test_features_are_unit_norm(seed, n):
    r = np.random.default_rng(seed)
    w = EncoderWeights.init(SMALL, seed=seed % 5)
    f = encode(random_cloud(r, n), w)
    assert f.shape == (n, SMALL.d)
    assert np.max(np.abs(np.linalg.norm(f, axis=1) - 1)) <= 1e-5


def test_features_invariant_to_translation_and_scale(small, rng):
    for _ in range(5):
        c = rng.normal(size=(200, 3))
        f = encode(c, small)
        assert np.max(np.abs(encode(c + 5.0, small) - f)) <= 1e-6
        assert np.max(np.abs(encode(c * 3.0, small) - f)) <= 1e-6


def test_permuted_cloud_gives_permuted_features(small, rng):
    c = rng.normal(size=(150, 3))
    perm = rng.permutation(150)
    assert np.array_equal(encode(c[perm], small), encode(c, small)[perm])


def test_duplicate_points_get_identical_rows(small, rng):
    c = rng.normal(size=(120, 3))
    c[57] = c[3]
    f = encode(c, small)
    assert np.array_equal(f[57], f[3])


def test_row_order_follows_input(small, vc_frame):
    # rows are returned in input order: the sorted graph is only internal
    g = build_graph(vc_frame.cloud, SMALL)
    assert not np.array_equal(g.order, np.arange(len(g.order)))
    f = encode(vc_frame.cloud, small)
    rev = encode(vc_frame.cloud[::-1], small)
    assert np.array_equal(rev, f[::-1])


def test_encoding_is_deterministic(small, vc_frame):
    assert np.array_equal(encode(vc_frame.cloud, small), encode(vc_frame.cloud, small))


def test_clouds_smaller_than_centroid_count(small, rng):
    f = encode(rng.normal(size=(5, 3)), small)
    assert f.shape == (5, SMALL.d) and np.allclose(np.linalg.norm(f, axis=1), 1, atol=1e-5)


def test_non_finite_weights_raise_with_layer(rng):
    w = EncoderWeights.init(SMALL, seed=0)
    with torch.no_grad():
        next(w.net.sa[0].parameters()).fill_(float("nan"))
    with pytest.raises(NumericError) as exc:
        encode(rng.normal(size=(64, 3)), w)
    assert exc.value.layer == "sa1"


def test_training_is_deterministic(pairs):
    a = train_encoder(pairs[:10], SMALL, epochs=1)
    b = train_encoder(pairs[:10], SMALL, epochs=1)
    assert a.hash == b.hash and a.loss_curve == b.loss_curve


def test_training_reduces_loss_and_separates_positives(pairs):
    cfg = SMALL
    held_out, train = pairs[::4], [p for i, p in enumerate(pairs) if i % 4]
    cache = GraphCache(cfg)
    w = EncoderWeights.init(cfg, seed=0)
    before = mean_loss(train, w, cache=cache)
    w = train_encoder(train, cfg, weights=w, epochs=8, cache=cache)
    assert mean_loss(train, w, cache=cache) < before
    assert np.mean(w.loss_curve[-3:]) < w.loss_curve[0]
    stats = evaluate_pairs(held_out, w, cache=cache)
    assert stats["mean_pos_sim"] > stats["mean_cloud_sim"]


def test_checkpoint_round_trip(small, tmp_path, vc_frame):
    save_encoder(small, tmp_path)
    back = load_encoder(tmp_path)
    assert back.hash == small.hash
    assert np.array_equal(encode(vc_frame.cloud, back), encode(vc_frame.cloud, small))
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert {"config_hash", "arch_hash", "weights_hash", "loss_curve"} <= set(m)


def test_corrupt_checkpoint_rejected(small, tmp_path):
    save_encoder(small, tmp_path)
    f = next(tmp_path.glob("*.f32"))
    raw = bytearray(f.read_bytes())
    raw[-1] ^= 0x01
    f.write_bytes(bytes(raw))
    with pytest.raises(IntegrityError):
        load_encoder(tmp_path)


def test_mismatched_initial_weights_rejected(pairs):
    w = EncoderWeights.init(EncoderConfig.desk(), seed=0)
    with pytest.raises(ConfigError):
        train_encoder(pairs[:2], SMALL, weights=w, epochs=1)
