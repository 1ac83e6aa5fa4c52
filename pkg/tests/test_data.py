import gzip
import struct

import numpy as np
import pytest

from rollnet.data import (
    IDX_IMAGES, IDX_LABELS, MNIST_MEAN, MNIST_STD, IdxFormatError, fit_normalization,
    gen_toy_2d, load_idx, mnist_splits, normalize, read_idx, write_idx,
)


@pytest.fixture
def idx_pair(tmp_path, rng):
    imgs = rng.integers(0, 256, size=(4, 28, 28)).astype(np.uint8)
    labs = np.array([3, 1, 4, 1], dtype=np.uint8)
    write_idx(tmp_path / "img.idx", imgs)
    write_idx(tmp_path / "lab.idx", labs)
    return tmp_path / "img.idx", tmp_path / "lab.idx", imgs, labs


def test_idx_fixture_shape(idx_pair):
    ip, lp, imgs, labs = idx_pair
    ds = load_idx(ip, lp)
    assert ds.features.shape == (4, 784)
    np.testing.assert_array_equal(ds.labels, labs)


def test_idx_header_is_big_endian(idx_pair):
    ip, lp, _, _ = idx_pair
    raw = ip.read_bytes()
    assert struct.unpack(">IIII", raw[:16]) == (IDX_IMAGES, 4, 28, 28)
    assert struct.unpack(">II", lp.read_bytes()[:8]) == (IDX_LABELS, 4)


def test_denormalize_roundtrip(idx_pair):
    ip, lp, imgs, _ = idx_pair
    ds = load_idx(ip, lp)
    np.testing.assert_allclose(ds.denormalize() * 255.0, imgs.reshape(4, -1), atol=1e-6 * 255)
    assert np.allclose(ds.mean, MNIST_MEAN) and np.allclose(ds.std, MNIST_STD)
    assert ds.scale == MNIST_STD


def test_idx_errors(tmp_path, idx_pair):
    ip, lp, imgs, _ = idx_pair
    write_idx(tmp_path / "lab3.idx", np.array([1, 2, 3], dtype=np.uint8))
    with pytest.raises(IdxFormatError, match="labels"):
        load_idx(ip, tmp_path / "lab3.idx")
    with pytest.raises(IdxFormatError, match="magic"):
        read_idx(lp, IDX_IMAGES)
    (tmp_path / "short.idx").write_bytes(ip.read_bytes()[:100])
    with pytest.raises(IdxFormatError, match="truncated"):
        read_idx(tmp_path / "short.idx", IDX_IMAGES)
    (tmp_path / "tiny.idx").write_bytes(b"\x00\x00")
    with pytest.raises(IdxFormatError):
        read_idx(tmp_path / "tiny.idx", IDX_IMAGES)


def test_gzip_idx(tmp_path, idx_pair):
    _, _, imgs, _ = idx_pair
    write_idx(tmp_path / "img.idx.gz", imgs)
    with gzip.open(tmp_path / "img.idx.gz") as fh:
        assert fh.read(4) == struct.pack(">I", IDX_IMAGES)
    np.testing.assert_array_equal(read_idx(tmp_path / "img.idx.gz", IDX_IMAGES), imgs)


def test_toy_determinism_and_balance():
    a, b = gen_toy_2d(5), gen_toy_2d(5)
    assert a.features.tobytes() == b.features.tobytes()
    assert 0.45 <= a.labels.mean() <= 0.55
    assert len(a) == 200 and a.dim == 2
    # separable by the axes: label is the xor of the coordinate signs
    xor = (np.sign(a.features[:, 0]) != np.sign(a.features[:, 1])).astype(int)
    np.testing.assert_array_equal(xor, a.labels)
    assert not np.array_equal(gen_toy_2d(6).features, a.features)


def test_normalization_helpers(rng):
    raw = rng.uniform(0, 1, size=(50, 3))
    mu, sd = fit_normalization(raw[:40])
    ds = normalize(raw, np.zeros(50), mu, sd)
    np.testing.assert_allclose(ds.denormalize(), raw, atol=1e-12)
    with pytest.raises(ValueError):
        normalize(raw, np.zeros(50), 0.0, 0.0)


def test_mnist_splits(rng):
    ds = normalize(rng.uniform(size=(20, 4)), rng.integers(0, 3, 20), 0.0, 1.0)
    tr, va, te = mnist_splits(ds, ds, n_val=5)
    assert (len(tr), len(va), len(te)) == (15, 5, 20)
    np.testing.assert_array_equal(va.features, ds.features[15:])
    with pytest.raises(ValueError):
        mnist_splits(ds, ds, n_val=20)
