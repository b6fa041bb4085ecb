import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tvqtraj import container, persist
from tvqtraj import prior as pr
from tvqtraj import vqvae as vq
from tvqtraj.enhancer import EnhancerNet, FcnClassifier
from tvqtraj.errors import ChecksumError, ConfigurationError, InvalidArgumentError
from tvqtraj.toy import toy_dataset


def test_layout_by_hand():
    blob = container.encode({"ab": np.array([[1.0, 2.0]], dtype=np.float32)}, version=3)
    body = (b"TVQV" + struct.pack("<HI", 3, 1) + struct.pack("<I", 2) + b"ab"
            + struct.pack("<III", 2, 1, 2) + struct.pack("<2f", 1.0, 2.0))
    assert blob == body + struct.pack("<I", zlib.crc32(body))
    entries, version = container.decode(blob)
    assert version == 3 and list(entries) == ["ab"]
    np.testing.assert_array_equal(entries["ab"], [[1.0, 2.0]])


def test_scalar_and_empty_entries():
    e = {"s": np.float32(2.5), "empty": np.zeros((0, 3))}
    back, _ = container.decode(container.encode(e))
    assert back["s"].shape == () and back["s"] == 2.5
    assert back["empty"].shape == (0, 3)


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(st.text(min_size=1, max_size=8),
                       arrays(np.float32, st.tuples(st.integers(0, 4), st.integers(1, 3)),
                              elements=st.floats(-1e6, 1e6, width=32)), max_size=4))
def test_round_trip_bit_exact(entries):
    blob = container.encode(entries)
    back, _ = container.decode(blob)
    assert container.encode(back) == blob
    for k in entries:
        assert np.array_equal(back[k], entries[k])


def test_every_corrupted_byte_detected():
    blob = container.encode({"w": np.arange(6, dtype=np.float32).reshape(2, 3)})
    for i in range(len(blob)):
        bad = bytearray(blob)
        bad[i] ^= 0x10
        with pytest.raises(ChecksumError):
            container.decode(bytes(bad))
    with pytest.raises(ChecksumError):
        container.decode(blob[:-5])


def test_declared_size_mismatch_detected():
    body = b"TVQV" + struct.pack("<HI", 1, 1) + struct.pack("<I", 1) + b"x" + struct.pack("<II", 1, 5) + b"\0" * 8
    with pytest.raises(ChecksumError, match="truncated"):
        container.decode(body + struct.pack("<I", zlib.crc32(body)))


def test_large_integers_refused():
    with pytest.raises(InvalidArgumentError):
        container.encode({"ids": np.array([2 ** 25])})


def test_dataset_round_trip(tmp_path):
    ds = toy_dataset(6, m=32, seed=1)
    persist.save_dataset(tmp_path / "a.tvqv", ds)
    back = persist.load_dataset(tmp_path / "a.tvqv")
    np.testing.assert_allclose(back.values, ds.values, atol=1e-7)
    assert np.array_equal(back.labels, ds.labels) and back.n_classes == ds.n_classes
    assert np.array_equal(back.norm.minimum, ds.norm.minimum)
    persist.save_dataset(tmp_path / "b.tvqv", back)
    assert (tmp_path / "a.tvqv").read_bytes() == (tmp_path / "b.tvqv").read_bytes()
    with pytest.raises(ConfigurationError, match="expected 'stage1'"):
        persist.load_vqvae(tmp_path / "a.tvqv")


def test_stage1_checkpoint_reconstructions_identical(tmp_path):
    ds = toy_dataset(8, m=64, seed=0)
    model = vq.VQVAE(vq.VQConfig(m=64, hidden=8, dim=4, codebook_size=8, n_res=1), seed=0)
    model.init_codebooks(ds.values, np.random.default_rng(0))
    persist.save_vqvae(tmp_path / "s1.tvqv", model)
    loaded = persist.load_vqvae(tmp_path / "s1.tvqv")
    assert loaded.reconstruct(ds.values).tobytes() == model.reconstruct(ds.values).tobytes()
    persist.save_vqvae(tmp_path / "s1b.tvqv", loaded)
    assert (tmp_path / "s1.tvqv").read_bytes() == (tmp_path / "s1b.tvqv").read_bytes()


def test_other_models_round_trip(tmp_path):
    x = np.random.default_rng(0).uniform(size=(3, 32, 4))
    fcn = FcnClassifier(3, seed=2)
    persist.save_fcn(tmp_path / "f.tvqv", fcn, 0.9)
    assert np.array_equal(persist.load_fcn(tmp_path / "f.tvqv").predict_proba(x), fcn.predict_proba(x))
    enh = EnhancerNet(seed=1, hidden=8, kernel=3)
    persist.save_enhancer(tmp_path / "e.tvqv", enh)
    assert np.array_equal(persist.load_enhancer(tmp_path / "e.tvqv").apply(x), enh.apply(x))
    cfg = pr.PriorConfig(codebook_size=8, n_classes=2, l_lf=2, l_hf=4, dim=16, layers=1, heads=2, ff=32)
    prior = pr.PriorModel(cfg, seed=3)
    persist.save_prior(tmp_path / "p.tvqv", prior)
    loaded = persist.load_prior(tmp_path / "p.tvqv")
    assert loaded.config == cfg
    tok = np.zeros((2, 2), int)
    assert np.array_equal(loaded.logits_lf(tok, [0, 1]).data, prior.logits_lf(tok, [0, 1]).data)


def test_missing_checkpoint_names_file(tmp_path):
    with pytest.raises(ConfigurationError, match="stage1 file not found"):
        persist.load_vqvae(tmp_path / "nope.tvqv")
