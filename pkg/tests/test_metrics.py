import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gridforecast.errors import LengthMismatchError, PaletteError
from gridforecast.metrics import (
    LABEL_PALETTE,
    OBSTACLE,
    OUT,
    PATH,
    TERRAIN,
    CSAccumulator,
    best_of_k,
    cs_accumulate,
    displacement,
    import_label_map,
    label_map_to_rgb,
    load_label_map,
    made,
    metrics_report,
    mfde,
    obstacle_free_rate,
    point_categories,
    save_label_map,
    write_report,
)


def test_made_mfde_small_example():
    gt = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    pred = np.stack([gt + [0.0, 3.0], gt + [0.0, 1.0]])
    assert made(gt, pred) == pytest.approx(1.0)
    assert mfde(gt, pred) == pytest.approx(1.0)
    assert best_of_k(gt, pred) == 1
    assert displacement(gt, pred).shape == (2, 3)


def test_min_over_k_is_independent_per_metric():
    gt = np.zeros((2, 2))
    a = np.array([[0.0, 0.0], [5.0, 0.0]])  # ADE 2.5, FDE 5
    b = np.array([[3.0, 0.0], [1.0, 0.0]])  # ADE 2.0, FDE 1
    c = np.array([[1.0, 0.0], [2.0, 0.0]])  # ADE 1.5, FDE 2
    pred = np.stack([a, b, c])
    assert made(gt, pred) == pytest.approx(1.5)
    assert mfde(gt, pred) == pytest.approx(1.0)


def test_single_trajectory_accepted():
    gt = np.zeros((4, 2))
    assert made(gt, np.ones((4, 2))) == pytest.approx(np.sqrt(2))


def test_length_mismatch():
    with pytest.raises(LengthMismatchError):
        made(np.zeros((12, 2)), np.zeros((5, 11, 2)))
    with pytest.raises(LengthMismatchError):
        mfde(np.zeros((12, 3)), np.zeros((5, 12, 2)))
    with pytest.raises(LengthMismatchError):
        made(np.zeros((12, 2)), np.zeros((0, 12, 2)))


@settings(max_examples=50)
@given(arrays(np.float64, (6, 2), elements=st.floats(-100, 100)),
       arrays(np.float64, (3, 6, 2), elements=st.floats(-100, 100)))
def test_made_bounds(gt, pred):
    m, f = made(gt, pred), mfde(gt, pred)
    assert m >= 0 and f >= 0
    # adding the ground truth itself as a candidate zeroes both
    both = np.concatenate([pred, gt[None]])
    assert made(gt, both) == 0.0 and mfde(gt, both) == 0.0
    # min over a superset can only shrink
    assert made(gt, pred[:1]) >= m - 1e-12


def test_point_categories_floor_and_out():
    labels = np.array([[PATH, TERRAIN], [OBSTACLE, PATH]], dtype=np.uint8)
    pts = [(0.0, 0.0), (1.99, 0.5), (0.5, 1.0), (2.0, 0.0), (-0.01, 0.0), (np.nan, 0.0)]
    assert point_categories(pts, labels).tolist() == [PATH, TERRAIN, OBSTACLE, OUT, OUT, OUT]


def test_cs_accumulate_and_merge():
    labels = np.zeros((4, 4), dtype=np.uint8)
    labels[0] = OBSTACLE
    a = cs_accumulate(np.array([[[0.5, 0.5], [0.5, 2.5]]]), labels)
    b = cs_accumulate(np.array([[[9.0, 9.0]]]), labels)
    assert a.counts.tolist() == [1, 0, 1, 0]
    m = a.merge(b)
    assert m.counts.tolist() == [1, 0, 1, 1] and m.total == 3
    assert b.merge(a).counts.tolist() == m.counts.tolist()
    r = m.report()
    assert r.pct_path + r.pct_terrain + r.pct_obstacle + r.pct_out_of_image == pytest.approx(100.0)


def test_empty_accumulator_report():
    r = CSAccumulator().report()
    assert r.total_points == 0 and r.pct_path == 0.0


def test_obstacle_free_rate():
    labels = np.zeros((10, 10), dtype=np.uint8)
    labels[5:, 5:] = OBSTACLE
    clean = np.full((2, 3, 2), 1.0)
    dirty = clean.copy()
    dirty[1, 2] = (7.0, 7.0)  # one point of one candidate
    assert obstacle_free_rate([clean, dirty], labels) == pytest.approx(50.0)
    assert obstacle_free_rate([clean, dirty], [labels, np.zeros_like(labels)]) == pytest.approx(100.0)
    assert np.isnan(obstacle_free_rate([], labels))


def test_import_label_map_snaps_and_rejects():
    labels = np.random.default_rng(0).integers(0, 3, (20, 20)).astype(np.uint8)
    rgb = label_map_to_rgb(labels).astype(np.int64)
    np.testing.assert_array_equal(import_label_map(rgb), labels)
    noisy = rgb.copy()
    noisy[0, 0] = np.clip(noisy[0, 0] - 3, 0, 255)  # 1 of 400 pixels off-palette
    np.testing.assert_array_equal(import_label_map(noisy), labels)
    bad = np.full((20, 20, 3), 128)
    with pytest.raises(PaletteError):
        import_label_map(bad)
    with pytest.raises(PaletteError):
        import_label_map(np.full((3, 3), 7))


def test_label_map_file_roundtrip(tmp_path):
    labels = np.random.default_rng(1).integers(0, 3, (9, 7)).astype(np.uint8)
    save_label_map(tmp_path / "l.png", labels)
    np.testing.assert_array_equal(load_label_map(tmp_path / "l.png"), labels)
    assert LABEL_PALETTE[PATH] == (255, 255, 255)


def test_metrics_report_keys(tmp_path):
    acc = CSAccumulator(np.array([3, 1, 0, 0]))
    rep = metrics_report([1.0, 3.0], [2.0, 4.0], acc, 50.0, 5)
    assert rep["made_px"] == 2.0 and rep["mfde_px"] == 3.0 and rep["k"] == 5
    assert rep["cs_pct_path"] == 75.0 and rep["cs_total_points"] == 4
    write_report(tmp_path / "m.json", rep)
    assert json.loads((tmp_path / "m.json").read_text()) == rep


def test_constant_offset_and_translation():
    gt = np.random.default_rng(0).normal(size=(12, 2))
    assert made(gt, gt + [3.0, 4.0]) == pytest.approx(5.0)
    pred = np.stack([gt + [5.0, 0.0], gt + [0.0, 3.0]])
    assert mfde(gt, pred) == pytest.approx(3.0)
    shift = np.array([123.0, -45.0])
    assert made(gt + shift, pred + shift) == pytest.approx(made(gt, pred))
    assert mfde(gt + shift, pred + shift) == pytest.approx(mfde(gt, pred))


def test_palette_edge_cases():
    red = np.zeros((5, 5, 3), dtype=np.uint8)
    red[..., 0] = 255
    assert (import_label_map(red) == OBSTACLE).all()
    img = label_map_to_rgb(np.zeros((10, 10), dtype=np.uint8)).astype(np.int64)
    img[0, 0] = (250, 5, 5)  # anti-aliased edge pixel
    assert import_label_map(img)[0, 0] == OBSTACLE
