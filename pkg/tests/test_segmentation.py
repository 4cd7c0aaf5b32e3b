import numpy as np
import pytest

from ewt import segmentation
from ewt.segmentation import SegmentConfig, kmeans_l1, local_energy
from textures import best_accuracy, two_gratings


def test_cartoon_texture_sums_back():
    rng = np.random.default_rng(0)
    f = rng.random((32, 32))
    c, t = segmentation.cartoon_texture(f, 2.0)
    assert np.allclose(c + t, f)
    c, t = segmentation.cartoon_texture(np.full((16, 16), 0.3))
    assert np.allclose(t, 0)
    with pytest.raises(ValueError):
        segmentation.cartoon_texture(f, 0)


def test_local_energy_constant_and_window():
    c = np.full((2, 20, 20), -2.0)
    e = local_energy(c, 5)
    assert e.shape == c.shape and np.allclose(e, 2.0)
    imp = np.zeros((1, 21, 21))
    imp[0, 10, 10] = 9.0
    e = local_energy(imp, 3)
    assert e[0, 10, 10] == pytest.approx(1.0) and e[0, 10, 12] == 0
    with pytest.raises(ValueError):
        local_energy(c, 4)


def test_kmeans_two_blobs():
    rng = np.random.default_rng(1)
    pts = np.concatenate([rng.normal(0, 0.1, (50, 2)), rng.normal(5, 0.1, (50, 2))])
    seg = kmeans_l1(pts, 2, seed=3)
    assert best_accuracy(seg.labels, np.repeat([1, 2], 50)) == 1.0
    assert sorted(seg.sizes) == [50, 50]
    # cost history never increases
    assert all(b <= a + 1e-9 for a, b in zip(seg.history, seg.history[1:]))


def test_kmeans_median_centers():
    pts = np.array([[0.0], [1.0], [10.0], [100.0], [101.0], [102.0]])
    seg = kmeans_l1(pts, 2, seed=0)
    assert sorted(seg.artifacts["centers"][:, 0].tolist()) == [1.0, 101.0]


def test_kmeans_edge_cases():
    pts = np.zeros((10, 3))
    assert np.all(kmeans_l1(pts, 1).labels == 1)
    with pytest.raises(ValueError):
        kmeans_l1(pts, 2)
    with pytest.raises(ValueError):
        kmeans_l1(np.zeros(5), 2)
    bad = np.ones((4, 2))
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        kmeans_l1(bad, 1)


def test_kmeans_is_seed_deterministic():
    rng = np.random.default_rng(4)
    feats = rng.random((3, 16, 16))
    a = kmeans_l1(feats, 3, seed=7)
    b = kmeans_l1(feats, 3, seed=7)
    assert np.array_equal(a.labels, b.labels) and a.cost == b.cost
    assert a.labels.shape == (16, 16) and set(np.unique(a.labels)) <= {1, 2, 3}


def test_segment_two_gratings():
    img, truth = two_gratings(96)
    seg = segmentation.segment(img, SegmentConfig(k=2))
    assert best_accuracy(seg.labels, truth) >= 0.95
    for key in ("cartoon", "texture", "partition", "bank", "coeffs", "features"):
        assert key in seg.artifacts


def test_segment_k1():
    img, _ = two_gratings(32)
    assert np.all(segmentation.segment(img, SegmentConfig(k=1)).labels == 1)
