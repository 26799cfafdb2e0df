import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hyperswap.data import (
    Dataset,
    IdxBadMagic,
    IdxCountMismatch,
    IdxFormatError,
    IdxTruncated,
    SplitSpec,
    normalize_per_feature_mean,
    read_idx,
    split,
    split_sizes,
    synth_blobs,
    synth_two_moons,
    write_idx,
)


def reference_idx(path):
    """Minimal independent reader: big-endian header via numpy dtypes."""
    raw = np.fromfile(path, dtype=np.uint8)
    magic = int(np.frombuffer(raw[:4].tobytes(), dtype=">u4")[0])
    ndim = magic & 0xFF
    dims = np.frombuffer(raw[4 : 4 + 4 * ndim].tobytes(), dtype=">u4").astype(int)
    return magic, raw[4 + 4 * ndim :].reshape(dims)


@pytest.fixture
def idx_pair(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(10, 28, 28), dtype=np.uint8)
    labels = rng.integers(0, 10, size=10, dtype=np.uint8)
    labels[0] = 9
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    write_idx(ip, lp, images, labels)
    return ip, lp, images, labels


def test_idx_header_and_shape(idx_pair):
    ip, lp, images, labels = idx_pair
    ds = read_idx(ip, lp)
    assert ds.features.shape == (10, 784)
    assert ds.n_classes == 10
    magic, ref = reference_idx(ip)
    assert magic == 2051
    assert np.array_equal(ds.features, ref.reshape(10, -1) / 255.0)
    magic, ref_labels = reference_idx(lp)
    assert magic == 2049
    assert np.array_equal(ds.labels, ref_labels)


def test_idx_round_trip_is_bit_exact(idx_pair):
    ip, lp, images, labels = idx_pair
    ds = read_idx(ip, lp)
    back = np.rint(ds.features * 255).astype(np.uint8).reshape(images.shape)
    assert np.array_equal(back, images)
    assert np.array_equal(ds.labels, labels)
    assert ds.features.max() <= 1.0 and ds.features.min() >= 0.0


def test_all_zero_pixels(tmp_path):
    ip, lp = tmp_path / "i", tmp_path / "l"
    write_idx(ip, lp, np.zeros((3, 2, 2), np.uint8), np.array([0, 1, 0], np.uint8))
    assert np.all(read_idx(ip, lp).features == 0.0)


def test_idx_bad_magic(tmp_path, idx_pair):
    ip, lp, *_ = idx_pair
    raw = bytearray(ip.read_bytes())
    raw[:4] = struct.pack(">i", 2049)
    bad = tmp_path / "bad"
    bad.write_bytes(bytes(raw))
    with pytest.raises(IdxBadMagic) as info:
        read_idx(bad, lp)
    assert info.value.offset == 0
    with pytest.raises(IdxBadMagic):
        read_idx(ip, ip)  # images file where labels are expected


def test_idx_truncated(tmp_path, idx_pair):
    ip, lp, *_ = idx_pair
    raw = ip.read_bytes()
    for cut in (2, 10, len(raw) - 1):
        p = tmp_path / f"cut{cut}"
        p.write_bytes(raw[:cut])
        with pytest.raises(IdxTruncated) as info:
            read_idx(p, lp)
        assert info.value.offset == cut
        assert f"byte {cut}" in str(info.value)


def test_idx_count_mismatch(tmp_path, idx_pair):
    ip, lp, images, labels = idx_pair
    ip2, lp2 = tmp_path / "i2", tmp_path / "l2"
    write_idx(ip2, lp2, images, labels[:7])
    with pytest.raises(IdxCountMismatch, match="7 labels but 10 images"):
        read_idx(ip, lp2)


def test_idx_errors_are_distinct():
    assert len({IdxBadMagic, IdxTruncated, IdxCountMismatch}) == 3
    assert all(issubclass(c, IdxFormatError) for c in (IdxBadMagic, IdxTruncated, IdxCountMismatch))


def test_write_idx_requires_uint8(tmp_path):
    with pytest.raises(TypeError):
        write_idx(tmp_path / "a", tmp_path / "b", np.zeros((1, 2, 2)), np.zeros(1, np.uint8))


def test_two_moons_noiseless_on_unit_circles():
    ds = synth_two_moons(500, 0.0, seed=3)
    centers = np.where(ds.labels[:, None] == 0, [0.0, 0.0], [1.0, 0.5])
    r = np.linalg.norm(ds.features - centers, axis=1)
    assert np.allclose(r, 1.0, atol=1e-12)
    assert np.all(ds.features[ds.labels == 0, 1] >= -1e-12)
    assert np.all(ds.features[ds.labels == 1, 1] <= 0.5 + 1e-12)
    assert np.bincount(ds.labels).tolist() == [250, 250]


def loo_knn_accuracy(x, y, k):
    """Leave-one-out k-NN by brute force; vote ties go to the nearest neighbour."""
    d = ((x[:, None, :] - x[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d, np.inf)
    nn = np.argsort(d, axis=1)[:, :k]
    pred = []
    for votes in y[nn]:
        counts = np.bincount(votes)
        winners = np.flatnonzero(counts == counts.max())
        pred.append(winners[0] if len(winners) == 1 else votes[0])
    return float(np.mean(np.array(pred) == y))


def test_two_moons_is_learnable_by_nearest_neighbours():
    ds = synth_two_moons(1000, 0.1, seed=0)
    assert loo_knn_accuracy(ds.features, ds.labels, 2) > 0.95


def test_generators_are_deterministic():
    a, b = synth_two_moons(100, 0.2, seed=5), synth_two_moons(100, 0.2, seed=5)
    assert np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)
    assert not np.array_equal(a.features, synth_two_moons(100, 0.2, seed=6).features)
    c, d = synth_blobs(90, 3, 1.0, seed=5), synth_blobs(90, 3, 1.0, seed=5)
    assert np.array_equal(c.features, d.features)


def test_blobs_without_spread_collapse_per_class():
    ds = synth_blobs(60, 4, 0.0, seed=1, dim=3)
    assert ds.features.shape == (60, 3)
    for k in range(4):
        pts = ds.features[ds.labels == k]
        assert len(pts) == 15
        assert np.all(pts == pts[0])


def test_generator_validation():
    with pytest.raises(ValueError):
        synth_two_moons(3)
    with pytest.raises(ValueError):
        synth_two_moons(10, -0.1)
    with pytest.raises(ValueError):
        synth_blobs(5, 3)
    with pytest.raises(ValueError):
        synth_blobs(10, 1)


def test_normalize_uses_training_statistics():
    tr = synth_blobs(100, 2, 1.0, seed=0)
    va = synth_blobs(50, 2, 1.0, seed=9)
    const = Dataset(np.column_stack([np.full(4, 3.0), np.arange(4.0)]), np.array([0, 1, 0, 1]), 2)
    ntr, nva = normalize_per_feature_mean(tr, va)
    assert np.allclose(ntr.features.mean(axis=0), 0.0, atol=1e-12)
    assert np.all(np.abs(nva.features.mean(axis=0)) > 1e-6)
    (nc,) = normalize_per_feature_mean(const)
    assert np.all(nc.features[:, 0] == 0.0)


def test_split_sizes_and_partition():
    ds = synth_two_moons(100, 0.1, seed=0)
    tr, va = split(ds, SplitSpec(0.1, seed=4))
    assert (len(tr), len(va)) == (90, 10)
    both = np.vstack([tr.features, va.features])
    assert sorted(map(tuple, both)) == sorted(map(tuple, ds.features))
    tr2, va2 = split(ds, SplitSpec(0.1, seed=4))
    assert np.array_equal(tr.features, tr2.features) and np.array_equal(va.labels, va2.labels)


@given(st.integers(2, 500), st.floats(0.01, 0.99))
def test_split_size_rule(n, f):
    n_train, n_val = split_sizes(n, f)
    assert n_train + n_val == n
    assert n_train >= n * (1 - f) - 1e-6
    assert n_train < n * (1 - f) + 1


def test_split_rejects_empty_part():
    with pytest.raises(ValueError, match="empty"):
        split(synth_two_moons(4), SplitSpec(0.01))
    with pytest.raises(ValueError):
        SplitSpec(1.0)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((0, 2)), np.zeros(0, int), 2)
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), np.array([0, 2]), 2)
    with pytest.raises(ValueError):
        Dataset(np.array([[np.nan, 0.0]]), np.array([0]), 2)
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), np.array([0]), 2)
