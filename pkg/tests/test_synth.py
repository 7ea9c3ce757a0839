import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rstan.errors import ContractError
from rstan.metrics import detect_peaks, pearson_metric
from rstan.synth import (GeneratorConfig, SamplerConfig, build_clips, distribution_b, generate_dataset,
                         generate_pulse, load_biovid_stub, load_dataset, make_subject, read_manifest,
                         render_video, roi_mean_trace, sample_frames, sample_indices, split_kfold, split_loso,
                         write_dataset)


@pytest.fixture(scope="module")
def small_cfg():
    return GeneratorConfig(n_subjects=4, clips_per_subject=5, seed=3)


@pytest.fixture(scope="module")
def small_set(small_cfg):
    return generate_dataset(small_cfg)


# ---------------------------------------------------------------- pulses

def test_pulse_is_normalized_and_deterministic():
    a = generate_pulse(10.0, 72.0, 0.05, 25.0, seed=4)
    b = generate_pulse(10.0, 72.0, 0.05, 25.0, seed=4)
    assert a.samples.tobytes() == b.samples.tobytes()
    assert len(a) == 250 and a.sample_rate == 25.0
    assert abs(a.samples.mean()) < 1e-12 and abs(a.samples.std() - 1) < 1e-12


def test_pulse_hr60_has_ten_peaks():
    for seed in range(5):
        n = detect_peaks(generate_pulse(10.0, 60.0, 0.0, 25.0, seed), min_distance=5).peak_indices.size
        assert 9 <= n <= 11


@pytest.mark.parametrize("hr", [50.0, 72.0, 110.0])
def test_zero_jitter_is_periodic(hr):
    rate = 25.0
    ibi = detect_peaks(generate_pulse(20.0, hr, 0.0, rate, seed=1), min_distance=5)
    assert ibi.intervals.size >= 10
    assert np.all(np.abs(ibi.intervals - 60 / hr) <= 1 / rate + 1e-9)


def test_huge_jitter_never_emits_bad_intervals():
    x = generate_pulse(30.0, 60.0, 2.0, 25.0, seed=0)
    assert np.all(np.isfinite(x.samples))


def test_pulse_errors():
    with pytest.raises(ContractError):
        generate_pulse(10.0, 0.0, 0.1, 25.0, 0)
    with pytest.raises(ContractError):
        generate_pulse(10.0, 60.0, -0.1, 25.0, 0)


# ---------------------------------------------------------------- subjects and rendering

def test_subject_invariants():
    cfg = GeneratorConfig()
    for sid in range(10):
        s = make_subject(sid, cfg)
        assert s.roi_mask.shape == s.expression_pattern.shape == s.base_face.shape == (28, 28)
        assert s.roi_mask.min() >= 0 and s.roi_mask.max() <= 1
        assert 45 <= s.baseline_hr <= 120
        assert not np.any((s.roi_mask > 0) & (s.expression_pattern != 0))


def test_static_case_reproduces_base_face():
    s = dataclasses.replace(make_subject(0, GeneratorConfig()), pulse_amplitude=0.0)
    pulse = generate_pulse(2.0, 70.0, 0.0, 25.0, 0)
    v = render_video(s, pulse, 0, 50, 28, 28, seed=0, noise=0.0)
    assert all(np.array_equal(f, s.base_face) for f in v.frames)


def test_roi_trace_tracks_pulse_without_expression():
    s = make_subject(1, GeneratorConfig())
    pulse = generate_pulse(128 / 25, 70.0, 0.02, 25.0, 2)
    v = render_video(s, pulse, 4, 128, 28, 28, seed=1, expr_amp=0.0)
    assert pearson_metric(roi_mean_trace(v.frames, s.roi_mask), pulse) > 0.99


def test_expression_difference_is_localized():
    s = make_subject(2, GeneratorConfig())
    pulse = generate_pulse(128 / 25, 70.0, 0.02, 25.0, 2)
    v0 = render_video(s, pulse, 0, 128, 28, 28, seed=5)
    v4 = render_video(s, pulse, 4, 128, 28, 28, seed=5)
    diff = np.abs(v4.frames - v0.frames).max(axis=0)
    assert diff.max() > 0
    assert np.all(diff[s.expression_pattern == 0] == 0)


def test_frames_clipped_and_pulse_length(small_set):
    for v in small_set:
        assert v.frames.min() >= 0 and v.frames.max() <= 1
        assert len(v.ground_truth_pulse) == v.frames.shape[0] == 128


def test_render_length_mismatch():
    s = make_subject(0, GeneratorConfig())
    with pytest.raises(ContractError):
        render_video(s, np.zeros(10), 0, 12, 28, 28, seed=0)


def test_dataset_is_pure_balanced_and_recoverable(small_cfg, small_set):
    again = generate_dataset(small_cfg)
    assert all(a.frames.tobytes() == b.frames.tobytes() for a, b in zip(small_set, again))
    counts = np.bincount([v.label for v in small_set], minlength=5)
    assert counts.max() - counts.min() <= 1
    for v in small_set:
        roi = make_subject(v.subject_id, small_cfg).roi_mask
        assert pearson_metric(roi_mean_trace(v.frames, roi), v.ground_truth_pulse) > 0.9


def test_label_filter_keeps_indices(small_cfg, small_set):
    sub = generate_dataset(small_cfg, labels=(0, 4))
    assert {v.label for v in sub} == {0, 4}
    full = {v.index: v for v in small_set}
    assert all(v.frames.tobytes() == full[v.index].frames.tobytes() for v in sub)


def test_distribution_b_shift():
    a, b = GeneratorConfig(), distribution_b(GeneratorConfig())
    assert b.distribution == "B"
    assert make_subject(0, b).base_face.mean() > make_subject(0, a).base_face.mean()


def test_generator_config_round_trip():
    cfg = GeneratorConfig(n_subjects=7, seed=9)
    assert GeneratorConfig.from_dict(cfg.to_dict()) == cfg


# ---------------------------------------------------------------- sampling

def test_downsampled_every_other_frame():
    idx = sample_indices(138, SamplerConfig("downsampled", 64, 10))
    assert len(idx) == 1 and idx[0].tolist() == list(range(10, 137, 2))


def test_multisegment_starts():
    idx = sample_indices(138, SamplerConfig("multisegment", 64, 10))
    starts = [int(i[0]) for i in idx]
    assert starts[:2] == [10, 42]
    assert all(np.array_equal(i, np.arange(i[0], i[0] + 64)) for i in idx)
    assert all(i[-1] < 138 for i in idx)


def test_full_length_downsampled_is_verbatim():
    frames = np.random.default_rng(0).normal(size=(74, 2, 2))
    (clip,) = sample_frames(frames, SamplerConfig("downsampled", 64, 10))
    assert np.array_equal(clip, frames[10:])


@settings(max_examples=40, deadline=None)
@given(st.integers(20, 200), st.integers(1, 64), st.integers(0, 20), st.integers(0, 10**6))
def test_random64_window(n, L, omit, seed):
    cfg = SamplerConfig("random64", L, omit)
    if n - omit < L:
        with pytest.raises(ContractError, match=str(n)):
            sample_indices(n, cfg, seed)
        return
    (idx,) = sample_indices(n, cfg, seed)
    assert idx[0] >= omit and idx[-1] < n and np.array_equal(np.diff(idx), np.ones(L - 1))
    assert np.array_equal(idx, sample_indices(n, cfg, seed)[0])


def test_unknown_mode():
    with pytest.raises(ContractError):
        sample_indices(128, SamplerConfig("shuffled"))


def test_multisegment_clips_share_label(small_set):
    cs = build_clips(small_set, SamplerConfig("multisegment", 64, 10))
    for src in set(cs.source.tolist()):
        assert len(set(cs.labels[cs.source == src].tolist())) == 1
    assert cs.clips.shape[1:] == (1, 64, 28, 28) and cs.pulses.shape[1:] == (64,)


def test_build_clips_label_map(small_set):
    pairs = [v for v in small_set if v.label in (0, 4)]
    cs = build_clips(pairs, SamplerConfig(), label_map={0: 0, 4: 1})
    assert set(cs.labels.tolist()) == {0, 1}
    assert len(cs.subset(cs.labels == 1)) == sum(v.label == 4 for v in pairs)


# ---------------------------------------------------------------- folds

def test_loso():
    folds = split_loso([3, 1, 2, 1, 5, 4])
    assert len(folds) == 5 and all(len(f.test_subjects) == 1 for f in folds)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 30), st.integers(2, 10), st.integers(0, 1000))
def test_kfold_partitions_subjects(n, k, seed):
    if n < k:
        with pytest.raises(ContractError):
            split_kfold(range(n), k, seed)
        return
    folds = split_kfold(range(n), k, seed)
    tests = [s for f in folds for s in f.test_subjects]
    assert sorted(tests) == list(range(n))
    assert all(not set(f.test_subjects) & set(f.train_subjects) for f in folds)
    assert split_kfold(range(n), k, seed) == folds


def test_kfold_ten_subjects_five_folds():
    folds = split_kfold(range(10), 5, seed=1)
    assert [len(f.test_subjects) for f in folds] == [2] * 5


# ---------------------------------------------------------------- on disk

def test_dataset_round_trip(tmp_path, small_cfg, small_set):
    path = write_dataset(tmp_path / "ds", small_set, small_cfg)
    assert read_manifest(path)["version"] == 1
    back = load_dataset(path)
    assert len(back) == len(small_set)
    for a, b in zip(small_set, back):
        assert a.frames.tobytes() == b.frames.tobytes()
        assert a.ground_truth_pulse.samples.tobytes() == b.ground_truth_pulse.samples.tobytes()
        assert (a.label, a.subject_id, a.index) == (b.label, b.subject_id, b.index)
    assert {v.label for v in load_dataset(path, labels=(1,))} == {1}


def test_manifest_version_checked(tmp_path):
    p = tmp_path / "manifest.json"
    p.write_text('{"version": 9, "fps": 25, "samples": []}')
    with pytest.raises(ContractError):
        read_manifest(p)


def test_biovid_stub():
    with pytest.raises(NotImplementedError):
        load_biovid_stub("x")
