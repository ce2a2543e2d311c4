import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from speedseq.dataio import Track
from speedseq.errors import DataError, FrameGapError, TooShortError
from speedseq.features import (
    STD_FLOOR,
    FeatureSequence,
    NormStats,
    denormalize,
    extract_features,
    filter_min_length,
    fit_norm_stats,
    normalize,
    window,
    window_count,
)
from speedseq.synth import generate_dataset

from conftest import make_track


def two_frame(a, b):
    return Track("x", 30.0, [0, 1], [a, b], 50.0)


def test_extract_translation_example():
    seq = extract_features(two_frame((100, 100, 150, 130), (104, 100, 154, 130)))
    np.testing.assert_array_equal(seq.values, [[4, 0, 4, 0, 4, 0, 0, 0]])
    assert seq.track_id == "x" and seq.label_kmh == 50.0


def test_extract_growth_example():
    seq = extract_features(two_frame((100, 100, 150, 130), (98, 99, 152, 131)))
    np.testing.assert_array_equal(seq.values, [[-2, -1, 2, 1, 0, 0, 4, 2]])


def test_extract_stationary():
    t = Track("s", 30.0, [0, 1, 2], [(1, 2, 3, 4)] * 3)
    np.testing.assert_array_equal(extract_features(t).values, np.zeros((2, 8)))


def test_extract_errors():
    with pytest.raises(TooShortError):
        extract_features(Track("a", 30.0, [0], [(0, 0, 1, 1)]))
    with pytest.raises(FrameGapError):
        extract_features(Track("a", 30.0, [0, 2], [(0, 0, 1, 1)] * 2))


def _random_track(seed, n=12):
    r = np.random.default_rng(seed)
    xy = r.uniform(0, 500, size=(n, 2))
    wh = r.uniform(5, 80, size=(n, 2))
    return Track("r", 30.0, np.arange(n), np.hstack([xy, xy + wh]))


@pytest.mark.parametrize("seed", range(5))
def test_feature_consistency_invariants(seed):
    v = extract_features(_random_track(seed)).values
    assert v.shape == (11, 8)
    np.testing.assert_allclose(v[:, 4], (v[:, 0] + v[:, 2]) / 2, atol=1e-12)
    np.testing.assert_allclose(v[:, 5], (v[:, 1] + v[:, 3]) / 2, atol=1e-12)
    np.testing.assert_allclose(v[:, 6], v[:, 2] - v[:, 0], atol=1e-12)
    np.testing.assert_allclose(v[:, 7], v[:, 3] - v[:, 1], atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(-1000, 1000), st.integers(-1000, 1000))
def test_translation_invariance_integer_coords(seed, ox, oy):
    r = np.random.default_rng(seed)
    xy = r.integers(0, 500, size=(8, 2))
    wh = r.integers(1, 80, size=(8, 2))
    boxes = np.hstack([xy, xy + wh]).astype(float)
    a = Track("a", 30.0, np.arange(8), boxes)
    b = Track("a", 30.0, np.arange(8), boxes + [ox, oy, ox, oy])
    np.testing.assert_array_equal(extract_features(a).values, extract_features(b).values)


@pytest.mark.parametrize("seed", range(5))
def test_translation_invariance_real_coords(seed):
    t = _random_track(seed)
    shifted = Track("r", 30.0, t.frame_idx, t.boxes + 123.456)
    np.testing.assert_allclose(extract_features(t).values, extract_features(shifted).values, atol=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_linearity(seed):
    t = _random_track(seed)
    doubled = Track("r", 30.0, t.frame_idx, t.boxes * 2.0)
    np.testing.assert_array_equal(extract_features(doubled).values, 2.0 * extract_features(t).values)


def test_filter_min_length():
    tracks = [make_track("a", n=5), make_track("b", n=21), make_track("c", n=40)]
    assert [t.n_frames for t in filter_min_length(tracks, 21)] == [21, 40]
    assert filter_min_length([], 21) == []
    assert filter_min_length(tracks, 2) == tracks


def _seq(rows):
    return FeatureSequence(np.asarray(rows, dtype=float), "s")


def test_fit_two_point():
    rows = np.zeros((2, 8))
    rows[:, 0] = [1.0, 3.0]
    stats = fit_norm_stats([_seq(rows)])
    assert stats.mean[0] == 2.0 and stats.std[0] == 1.0


def test_fit_constant_floors_std():
    stats = fit_norm_stats([_seq(np.ones((5, 8)))])
    np.testing.assert_array_equal(stats.std, np.full(8, STD_FLOOR))


def test_fit_empty():
    with pytest.raises(DataError):
        fit_norm_stats([])
    with pytest.raises(DataError):
        fit_norm_stats([_seq(np.empty((0, 8)))])


def test_normalization_moments_on_default_dataset():
    seqs = [extract_features(t) for t in generate_dataset(400, seed=42)]
    stats = fit_norm_stats(seqs)
    normed = np.concatenate([normalize(s, stats).values for s in seqs])
    assert np.abs(normed.mean(axis=0)).max() < 1e-9
    assert np.abs(normed.var(axis=0) - 1.0).max() < 1e-6


def test_normalize_examples():
    stats = NormStats(np.full(8, 3.0), np.full(8, 2.0))
    out = normalize(_seq(np.full((1, 8), 5.0)), stats)
    np.testing.assert_array_equal(out.values, 1.0)
    np.testing.assert_array_equal(normalize(_seq(np.full((1, 8), 3.0)), stats).values, 0.0)


def test_normalize_inverse(rng):
    stats = NormStats(rng.normal(size=8), rng.uniform(0.1, 5, size=8))
    s = _seq(rng.normal(size=(10, 8)) * 30)
    np.testing.assert_allclose(denormalize(normalize(s, stats), stats).values, s.values, atol=1e-12, rtol=0)


def test_window_examples():
    s = FeatureSequence(np.arange(40.0).reshape(5, 8), "w", 70.0)
    ws = window(s, 3, 1)
    assert len(ws) == 3
    for k, w in enumerate(ws):
        np.testing.assert_array_equal(w.values, s.values[k:k + 3])
        assert w.track_id == "w" and w.label_kmh == 70.0
    assert len(window(s, 5)) == 1
    assert window(FeatureSequence(np.zeros((4, 8)), "w"), 6) == []


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 40), st.integers(1, 12), st.integers(1, 6))
def test_window_count_formula(T, seq_len, stride):
    s = FeatureSequence(np.arange(T * 8, dtype=float).reshape(T, 8), "w")
    ws = window(s, seq_len, stride)
    expected = (T - seq_len) // stride + 1 if T >= seq_len else 0
    assert len(ws) == expected == window_count(T, seq_len, stride)
    for k, w in enumerate(ws):
        np.testing.assert_array_equal(w.values, s.values[k * stride:k * stride + seq_len])
