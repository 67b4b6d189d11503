"""Heatmap codec: gaussian targets, peak decoding with the quarter-pixel
offset, flip merging, and the annotation file format."""

import numpy as np
import pytest

from lapx.codec import (
    HeatmapSet,
    PoseAnnotation,
    annotations_from_json,
    annotations_to_json,
    decode_heatmaps,
    encode_batch,
    encode_heatmaps,
    flip_merge,
    load_annotation_file,
    save_annotation_file,
)


def ann(joints, norm=10.0, **kw):
    return PoseAnnotation(np.asarray(joints, np.float32), norm, **kw)


def test_encode_places_unit_peak_at_nearest_pixel():
    hm, vis = encode_heatmaps(ann([[3.2, 4.6, 1]]), (8, 8), sigma=2.0)
    assert vis.tolist() == [True]
    assert hm.maps[0].max() == 1.0
    assert np.unravel_index(hm.maps[0].argmax(), (8, 8)) == (5, 3)


def test_encode_is_a_peak_normalized_gaussian():
    sigma = 1.5
    hm, _ = encode_heatmaps(ann([[4, 3, 1]]), (9, 9), sigma)
    ys, xs = np.mgrid[0:9, 0:9]
    want = np.exp(-((xs - 4.0) ** 2 + (ys - 3.0) ** 2) / (2 * sigma * sigma))
    np.testing.assert_allclose(hm.maps[0], want, rtol=1e-6)
    assert hm.sigma == sigma


def test_encode_masks_invisible_and_out_of_bounds_joints():
    hm, vis = encode_heatmaps(
        ann([[2, 2, 0], [-3, 2, 1], [2, 900, 1], [2, 2, 1]]), (8, 8), 2.0)
    assert vis.tolist() == [False, False, False, True]
    assert hm.maps[:3].max() == 0.0
    assert hm.maps[3].max() == 1.0


def test_encode_batch_stacks():
    anns = [ann([[1, 1, 1], [2, 2, 1]]), ann([[3, 3, 1], [4, 4, 0]])]
    maps, vis = encode_batch(anns, (8, 8), 2.0)
    assert maps.shape == (2, 2, 8, 8)
    assert vis.tolist() == [[True, True], [True, False]]


def test_decode_without_offset_returns_integer_peak():
    m = np.zeros((1, 6, 7), np.float32)
    m[0, 2, 5] = 1.0
    out = decode_heatmaps(HeatmapSet(m, 2.0), quarter_offset=False)
    assert out.shape == (1, 3)
    assert tuple(out[0]) == (5.0, 2.0, 1.0)


def test_quarter_offset_moves_toward_larger_neighbor():
    m = np.zeros((1, 5, 5), np.float32)
    m[0, 2, 2] = 1.0
    m[0, 2, 3] = 0.5   # pull +x
    m[0, 1, 2] = 0.4   # pull -y
    out = decode_heatmaps(HeatmapSet(m, 2.0))
    np.testing.assert_allclose(out[0], [2.25, 1.75, 1.0])


def test_quarter_offset_stays_put_on_ties_and_borders():
    m = np.zeros((1, 5, 5), np.float32)
    m[0, 2, 2] = 1.0
    m[0, 2, 1] = m[0, 2, 3] = 0.5  # x tie
    m[0, 1, 2] = m[0, 3, 2] = 0.3  # y tie
    out = decode_heatmaps(HeatmapSet(m, 2.0))
    np.testing.assert_allclose(out[0, :2], [2.0, 2.0])

    edge = np.zeros((1, 5, 5), np.float32)
    edge[0, 2, 4] = 1.0   # x sits on the border, y is interior
    edge[0, 1, 4] = 0.9
    out = decode_heatmaps(HeatmapSet(edge, 2.0))
    np.testing.assert_allclose(out[0, :2], [4.0, 1.75])  # y shifts, x cannot


def test_round_trip_error_stays_under_half_pixel():
    rng = np.random.default_rng(0)
    h, w = 24, 20
    worst = 0.0
    joints_checked = 0
    while joints_checked < 1000:
        k = int(rng.integers(1, 9))
        pts = np.column_stack([
            rng.uniform(1.0, w - 2.0, k),
            rng.uniform(1.0, h - 2.0, k),
            np.ones(k),
        ]).astype(np.float32)
        hm, vis = encode_heatmaps(ann(pts), (h, w), sigma=2.0)
        assert vis.all()
        dec = decode_heatmaps(hm)
        err = np.abs(dec[:, :2] - pts[:, :2]).max()
        worst = max(worst, float(err))
        joints_checked += k
    assert worst <= 0.5, f"round-trip error {worst} px over {joints_checked} joints"


def test_flip_merge_is_a_fixed_point_on_mirror_symmetric_maps():
    # if the pose is left/right symmetric, merging the flipped view must
    # reproduce the original maps exactly (shift disabled isolates the math)
    rng = np.random.default_rng(1)
    h, w = 8, 10
    left = rng.uniform(0.0, 1.0, (h, w)).astype(np.float32)
    base = rng.uniform(0.0, 1.0, (h, w)).astype(np.float32)
    base = (base + base[:, ::-1]) * 0.5  # symmetric center channel
    maps = np.stack([base, left, left[:, ::-1]])  # pair (1,2) mirrors
    pairs = ((1, 2),)

    flipped_view = maps[:, :, ::-1].copy()
    for i, j in pairs:
        flipped_view[[i, j]] = flipped_view[[j, i]]
    merged = flip_merge(HeatmapSet(maps, 2.0), HeatmapSet(flipped_view, 2.0),
                        pairs, shift_px=0)
    np.testing.assert_allclose(merged.maps, maps, rtol=0, atol=1e-7)
    assert merged.sigma == 2.0


def test_flip_merge_shift_replicates_edge_column():
    maps = np.arange(12, dtype=np.float32).reshape(1, 3, 4)
    zeros = np.zeros_like(maps)
    merged = flip_merge(HeatmapSet(zeros, 2.0), HeatmapSet(maps, 2.0), (),
                        shift_px=1)
    back = maps[..., ::-1]
    want = np.concatenate([back[..., :1], back[..., :-1]], axis=-1) * 0.5
    np.testing.assert_allclose(merged.maps, want)


def test_flip_merge_validates_inputs():
    a = HeatmapSet(np.zeros((2, 4, 4), np.float32), 2.0)
    b = HeatmapSet(np.zeros((2, 4, 5), np.float32), 2.0)
    with pytest.raises(ValueError):
        flip_merge(a, b, ())
    with pytest.raises(ValueError):
        flip_merge(a, a, (), shift_px=-1)


def test_annotation_validation():
    with pytest.raises(ValueError):
        ann([[1, 2, 1]], norm=0.0)
    with pytest.raises(ValueError):
        PoseAnnotation(np.zeros((2, 2), np.float32), 1.0)  # not (K,3)
    with pytest.raises(ValueError):
        ann([[1, 2, 1]], flip_pairs=((0, 5),))  # pair out of range
    a = ann([[1, 2, 1], [3, 4, 0]])
    assert a.num_joints == 2
    assert a.visible().tolist() == [True, False]


def test_annotation_json_round_trip(tmp_path):
    data = {
        "img_001": [ann([[1.5, 2.5, 1], [3, 4, 0]], norm=7.5, score=0.9)],
        "img_002": [ann([[5, 6, 1], [7, 8, 1]], norm=3.0),
                    ann([[0, 0, 0], [1, 1, 1]], norm=2.0, score=0.1)],
    }
    text = annotations_to_json(data)
    back = annotations_from_json(text)
    assert set(back) == set(data)
    for key in data:
        assert len(back[key]) == len(data[key])
        for a, b in zip(data[key], back[key]):
            np.testing.assert_allclose(a.joints, b.joints)
            assert a.norm == b.norm
            assert a.score == b.score

    path = str(tmp_path / "ann.json")
    save_annotation_file(path, data)
    loaded = load_annotation_file(path, flip_pairs=((0, 1),))
    assert loaded["img_002"][0].flip_pairs == ((0, 1),)
