import csv
import math

import numpy as np
import pytest

from ewt import analysis, grid
from ewt.demons import DemonsParams


def test_psnr_examples():
    f = np.zeros((8, 8))
    assert analysis.psnr(f, f) == math.inf
    assert analysis.psnr(f, np.full((8, 8), 0.1)) == pytest.approx(20.0)
    with pytest.raises(ValueError):
        analysis.psnr(f, np.zeros((8, 4)))


def test_rmse_mapping_zero_field_and_asymmetry():
    x, y = grid.pixel_coords((32, 32))
    a = np.exp(-((x - 12.0) ** 2 + (y - 16.0) ** 2) / 18)
    b = np.exp(-((x - 15.0) ** 2 + (y - 16.0) ** 2) / 18)
    zero = np.zeros((2, 32, 32))
    assert analysis.rmse_mapping(a, a, zero) == 0
    assert analysis.rmse_mapping(a, b, zero) == pytest.approx(np.sqrt(((a - b) ** 2).mean()))
    shift = np.zeros((2, 32, 32))
    shift[0] = 3.0
    # b warped by +3 equals a; a warped by +3 does not equal b
    assert analysis.rmse_mapping(a, b, shift) == pytest.approx(0.0, abs=1e-6)
    assert analysis.rmse_mapping(b, a, shift) > 0.05
    with pytest.raises(ValueError):
        analysis.rmse_mapping(a, np.zeros((4, 4)), zero)


def test_toy_image_range_and_spectrum():
    img = analysis.toy_image(128, seed=2, radius=20)
    assert img.min() == 0.0 and img.max() == 1.0
    assert np.array_equal(img, analysis.toy_image(128, seed=2, radius=20))
    assert not np.array_equal(img, analysis.toy_image(128, seed=3, radius=20))
    spec = np.abs(grid.dft2(img - img.mean()))
    # strongest off-origin peak sits on the requested ring
    far = spec.copy()
    far[54:75, 54:75] = 0
    r, c = np.unravel_index(np.argmax(far), far.shape)
    assert np.hypot(r - 64, c - 64) == pytest.approx(20, abs=1)


def test_bench_config_validation():
    with pytest.raises(ValueError):
        analysis.BenchConfig(variants=("fluid",))
    with pytest.raises(ValueError):
        analysis.BenchConfig(taus=(0.6,))
    with pytest.raises(ValueError):
        analysis.BenchConfig(kernels=())


@pytest.fixture(scope="module")
def small_img():
    return analysis.toy_image(64, seed=0, radius=10)


def test_single_config_rows(small_img):
    cfg = analysis.BenchConfig(taus=(0.2,), size=64, demons=DemonsParams(max_iter=20))
    rep = analysis.run_benchmark(cfg, small_img)
    assert len(rep.rows) == 2
    for r in rep.rows:
        assert r.error is None and r.psnr > 60
        assert r.seconds_register > 0 and r.seconds_roundtrip > 0
        assert r.min_rmse <= r.mean_rmse <= r.max_rmse
    assert rep.find(normalized=True).normalized


@pytest.mark.slow
def test_full_grid_has_72_rows(small_img, tmp_path):
    cfg = analysis.BenchConfig(
        variants=("additive", "thirion", "diffeomorphic"),
        partitions=("voronoi", "watershed"),
        kernels=("disk", "square"),
        size=64,
        demons=DemonsParams(max_iter=10),
    )
    rep = analysis.run_benchmark(cfg, small_img)
    assert len(rep.rows) == 72
    keys = {(r.variant, r.partition, r.kernel, r.tau, r.normalized) for r in rep.rows}
    assert len(keys) == 72
    rep.to_csv(tmp_path / "b.csv")
    with open(tmp_path / "b.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == analysis.CSV_COLUMNS and len(rows) == 73


def test_report_is_deterministic_without_timings(small_img):
    cfg = analysis.BenchConfig(taus=(0.1,), normalizations=(False,), size=64, demons=DemonsParams(max_iter=15))
    a = analysis.run_benchmark(cfg, small_img).to_dict(timings=False)
    b = analysis.run_benchmark(cfg, small_img).to_dict(timings=False)
    assert a == b
    assert "seconds_register" not in a["rows"][0]


def test_errors_are_recorded_per_row(small_img, monkeypatch):
    def broken(*a, **k):
        raise ValueError("no bank")

    monkeypatch.setattr(analysis.transform, "build_bank", broken)
    cfg = analysis.BenchConfig(taus=(0.1, 0.2), normalizations=(False,), size=64, demons=DemonsParams(max_iter=5))
    rep = analysis.run_benchmark(cfg, small_img)
    assert len(rep.rows) == 2
    for row in rep.rows:
        assert row.error == "roundtrip: no bank" and math.isnan(row.psnr)
        assert row.rmse
