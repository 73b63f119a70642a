import numpy as np
import pytest

from thbench.blinkdata import (
    BlinkSliceConfig,
    balance_slices,
    eye_region_crops,
    label_frames,
    read_slice_manifest,
    resolve_threshold,
    sample_slices,
    slice_count,
    write_slice_manifest,
)
from thbench.geom import eye_open_rates
from thbench.synthetic import face_landmark_trace, textured_face_frames

from reference_impls import naive_blink_slice_labels

RNG = np.random.default_rng(41)


# ------------------------------------------------------------ frame labels


def test_label_frames_all_open():
    cfg = BlinkSliceConfig(threshold_policy="fixed", threshold_value=0.1)
    labels = label_frames([0.3, 0.4, 0.25], cfg)
    assert labels.tolist() == [1, 1, 1]


def test_label_frames_fixed_threshold():
    cfg = BlinkSliceConfig(threshold_policy="fixed", threshold_value=0.1)
    labels = label_frames([0.3, 0.3, 0.02, 0.3], cfg)
    assert labels.tolist() == [1, 1, 0, 1]


def test_label_frames_percentile_separates_bimodal():
    rng = np.random.default_rng(5)
    open_mode = rng.normal(0.35, 0.02, size=900)
    closed_mode = rng.normal(0.05, 0.01, size=100)
    rates = np.abs(np.concatenate([open_mode, closed_mode]))
    cfg = BlinkSliceConfig(threshold_policy="percentile", threshold_value=10.0)
    threshold = resolve_threshold(rates, cfg)
    labels = label_frames(rates, cfg, threshold=threshold)
    # the threshold must fall between the modes
    assert 0.1 < threshold < 0.3
    assert np.all(labels[:900][open_mode > threshold] == 1)
    assert (labels[900:] == 0).mean() > 0.85


def test_label_frames_shift_invariance_with_shifted_threshold():
    rates = RNG.uniform(0.05, 0.5, size=50)
    cfg = BlinkSliceConfig(threshold_policy="fixed", threshold_value=0.2)
    base = label_frames(rates, cfg)
    shifted_cfg = BlinkSliceConfig(threshold_policy="fixed", threshold_value=0.2 + 0.3)
    shifted = label_frames(rates + 0.3, shifted_cfg)
    assert np.array_equal(base, shifted)


def test_label_frames_empty_rejected():
    with pytest.raises(ValueError):
        label_frames([], BlinkSliceConfig())


def test_label_frames_from_landmark_blink():
    lms = face_landmark_trace(n_frames=15, blink_at=6, blink_len=5)
    rates = eye_open_rates(lms)
    cfg = BlinkSliceConfig(threshold_policy="fixed", threshold_value=0.5 * rates.max())
    labels = label_frames(rates, cfg)
    assert labels[0] == 1 and labels[-1] == 1
    assert (labels == 0).any()


# ------------------------------------------------------------------ slices


def test_sample_slices_all_open_all_negative():
    cfg = BlinkSliceConfig(slice_length=5, stride=1)
    slices = sample_slices(np.ones(12, dtype=int), cfg, video_id="v")
    assert len(slices) == 8
    assert all(s.label == 0 for s in slices)


def test_sample_slices_single_transition_window():
    cfg = BlinkSliceConfig(slice_length=5, stride=1)
    labels = [1, 1, 0, 1, 1]
    slices = sample_slices(labels, cfg)
    assert len(slices) == 1
    assert slices[0].label == 1


def test_sample_slices_match_interval_overlap_oracle():
    cfg_grid = [(12, 1), (12, 3), (6, 2), (8, 5)]
    for t, stride in cfg_grid:
        labels = RNG.integers(0, 2, size=200)
        cfg = BlinkSliceConfig(slice_length=t, stride=stride)
        got = [(s.start, s.label) for s in sample_slices(labels, cfg)]
        want = naive_blink_slice_labels(labels.tolist(), t, stride)
        assert got == want


def test_sample_slices_separated_blinks():
    labels = np.ones(60, dtype=int)
    labels[10:13] = 0
    labels[40:44] = 0
    cfg = BlinkSliceConfig(slice_length=8, stride=1)
    slices = sample_slices(labels, cfg, video_id="v")
    want = naive_blink_slice_labels(labels.tolist(), 8, 1)
    assert [(s.start, s.label) for s in slices] == want
    positives = [s.start for s in slices if s.label == 1]
    # transitions at 9/12 and 39/43: exactly windows overlapping them
    assert positives == [s for s, l in want if l == 1]
    assert len(positives) > 0


def test_sample_slices_too_short_returns_empty():
    cfg = BlinkSliceConfig(slice_length=10, stride=1)
    assert sample_slices(np.ones(4, dtype=int), cfg) == []


def test_slice_count_formula_grid():
    cfg_lengths = [2, 5, 12]
    strides = [1, 2, 3, 7]
    totals = [1, 2, 5, 12, 13, 40, 100]
    for t in cfg_lengths:
        for stride in strides:
            for total in totals:
                cfg = BlinkSliceConfig(slice_length=t, stride=stride)
                slices = sample_slices(np.ones(total, dtype=int), cfg)
                want = (total - t) // stride + 1 if total >= t else 0
                assert len(slices) == want == slice_count(total, t, stride)


def test_slice_label_invariant_to_temporal_mirror():
    for _ in range(50):
        labels = RNG.integers(0, 2, size=12)
        cfg = BlinkSliceConfig(slice_length=12, stride=1)
        fwd = sample_slices(labels, cfg)[0].label
        rev = sample_slices(labels[::-1], cfg)[0].label
        assert fwd == rev


def test_sample_slices_attaches_crops():
    cfg = BlinkSliceConfig(slice_length=4, stride=2)
    frames = RNG.uniform(size=(10, 8, 8)).astype(np.float32)
    slices = sample_slices(np.ones(10, dtype=int), cfg, frames=frames)
    assert slices[0].crops.shape == (4, 8, 8)
    assert np.array_equal(slices[1].crops, frames[2:6])


def test_balance_slices_deterministic():
    cfg = BlinkSliceConfig(slice_length=4, stride=1)
    labels = np.ones(50, dtype=int)
    labels[20:22] = 0
    slices = sample_slices(labels, cfg, video_id="v")
    bal1 = balance_slices(slices, seed=3)
    bal2 = balance_slices(slices, seed=3)
    assert [(s.start, s.label) for s in bal1] == [(s.start, s.label) for s in bal2]
    pos = sum(1 for s in bal1 if s.label == 1)
    neg = sum(1 for s in bal1 if s.label == 0)
    assert pos == neg


def test_config_validation():
    with pytest.raises(ValueError):
        BlinkSliceConfig(slice_length=1)
    with pytest.raises(ValueError):
        BlinkSliceConfig(stride=0)
    with pytest.raises(ValueError):
        BlinkSliceConfig(threshold_policy="mean")


# ----------------------------------------------------------- crops and IO


def test_eye_region_crops_shapes():
    lms = face_landmark_trace(n_frames=6, blink_at=2, blink_len=3)
    frames = textured_face_frames(lms)
    cfg = BlinkSliceConfig(eye_crop_size=24)
    crops = eye_region_crops(frames, lms, cfg)
    assert crops.shape == (6, 24, 24)
    assert crops.dtype == np.float32
    assert 0.0 <= crops.min() and crops.max() <= 1.0


def test_slice_manifest_roundtrip(tmp_path):
    cfg = BlinkSliceConfig(slice_length=5, stride=2)
    labels = RNG.integers(0, 2, size=30)
    slices = sample_slices(labels, cfg, video_id="vid7")
    path = tmp_path / "slices.jsonl"
    write_slice_manifest(path, slices)
    back = read_slice_manifest(path)
    assert [(s.video_id, s.start, s.length, s.label) for s in back] == \
        [(s.video_id, s.start, s.length, s.label) for s in slices]
