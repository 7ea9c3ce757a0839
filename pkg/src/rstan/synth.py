"""Synthetic pulse-modulated face videos, clip sampling, subject splits, manifests.

A subject is a smooth intensity template with pulsatile skin regions (cheeks,
forehead) and a separate expression template (brows, mouth). A clip adds the
blood-volume pulse inside the pulsatile regions, a pain-dependent expression
bump late in the clip, and pixel noise. Pain also raises heart rate and
inter-beat-interval jitter, so the pulse itself carries label information.

Everything is a pure function of ``(config, seed)``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ContractError
from .metrics import Signal

log = logging.getLogger(__name__)

NUM_LEVELS = 5  # pain intensities T0..T4


@dataclass
class GeneratorConfig:
    n_subjects: int = 20
    clips_per_subject: int = 25
    n_frames: int = 128
    fps: float = 25.0
    height: int = 28
    width: int = 28
    hr_range: tuple = (55.0, 90.0)
    clip_hr_std: float = 2.0
    jitter_by_label: tuple = (0.01, 0.015, 0.02, 0.06, 0.09)
    hr_shift_by_label: tuple = (0.0, 0.0, 0.0, 4.0, 8.0)
    pulse_amplitude_range: tuple = (0.025, 0.04)
    noise_range: tuple = (0.015, 0.025)
    expression_amplitude: float = 0.25
    expression_gain_range: tuple = (0.3, 1.0)
    onset_range: tuple = (0.55, 0.7)
    distribution: str = "A"
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**d)


def distribution_b(cfg: GeneratorConfig) -> GeneratorConfig:
    """A shifted generator for cross-distribution evaluation: brighter faces
    (see :func:`make_subject`), noisier pixels, faster hearts."""
    return replace(cfg, distribution="B", noise_range=(0.025, 0.035), hr_range=(65.0, 100.0))


@dataclass
class SyntheticSubject:
    subject_id: int
    baseline_hr: float
    roi_mask: np.ndarray
    expression_pattern: np.ndarray
    base_face: np.ndarray
    pulse_amplitude: float
    noise_level: float
    expression_gain: float = 1.0


@dataclass
class VideoSample:
    frames: np.ndarray  # (T, H, W) in [0, 1]
    label: int
    subject_id: int
    ground_truth_pulse: Signal
    index: int = 0


@dataclass
class SamplerConfig:
    mode: str = "downsampled"  # downsampled | random64 | multisegment
    clip_length: int = 64
    omit_first: int = 10

    @property
    def segment_stride(self) -> int:
        return self.clip_length // 2


def _blob(h, w, cy, cx, sy, sx):
    y, x = np.mgrid[0:h, 0:w]
    return np.exp(-0.5 * (((y - cy) / sy) ** 2 + ((x - cx) / sx) ** 2))


def _subject_rng(seed: int, subject_id: int) -> np.random.Generator:
    return np.random.default_rng([seed, 1_000_003, subject_id])


def make_subject(subject_id: int, cfg: GeneratorConfig) -> SyntheticSubject:
    rng = _subject_rng(cfg.seed, subject_id)
    h, w = cfg.height, cfg.width
    j = lambda s: rng.normal(0.0, s)  # noqa: E731  (landmark jitter, pixels)

    roi = np.zeros((h, w))
    for cy, cx in ((0.15, 0.5), (0.62, 0.25), (0.62, 0.75)):
        roi = np.maximum(roi, _blob(h, w, cy * h + j(0.5), cx * w + j(0.5), 0.07 * h, 0.09 * w))
    roi[roi < 0.1] = 0.0

    expr = np.zeros((h, w))
    for cy, cx, sign in ((0.4, 0.33, -1.0), (0.4, 0.67, -1.0), (0.85, 0.5, 1.0)):
        sx = 0.18 * w if cx == 0.5 else 0.07 * w
        expr += sign * _blob(h, w, cy * h + j(0.5), cx * w + j(0.5), 0.05 * h, sx)
    expr[np.abs(expr) < 0.1] = 0.0
    expr[roi > 0] = 0.0  # expression support stays disjoint from pulsatile skin

    y, x = np.mgrid[0:h, 0:w] / np.array([h, w]).reshape(2, 1, 1)
    face = np.zeros((h, w))
    for _ in range(4):
        fy, fx = rng.uniform(0.5, 2.0, size=2)
        face += rng.uniform(0.02, 0.06) * np.cos(2 * np.pi * (fy * y + fx * x) + rng.uniform(0, 2 * np.pi))
    oval = _blob(h, w, 0.5 * h, 0.5 * w, 0.45 * h, 0.38 * w)
    brightness = rng.uniform(0.35, 0.5) + (0.15 if cfg.distribution == "B" else 0.0)
    base = np.clip(brightness * (0.6 + 0.4 * oval) + face, 0.05, 0.9)

    return SyntheticSubject(
        subject_id=subject_id,
        baseline_hr=float(rng.uniform(*cfg.hr_range)),
        roi_mask=roi,
        expression_pattern=expr,
        base_face=base,
        pulse_amplitude=float(rng.uniform(*cfg.pulse_amplitude_range)),
        noise_level=float(rng.uniform(*cfg.noise_range)),
        expression_gain=float(rng.uniform(*cfg.expression_gain_range)),
    )


def _beat_wave(phase: np.ndarray) -> np.ndarray:
    # peak at phase 0, slow diastolic decay over 70% of the beat, fast upstroke
    fall = 0.5 * (1 + np.cos(np.pi * phase / 0.7))
    rise = 0.5 * (1 - np.cos(np.pi * (phase - 0.7) / 0.3))
    return np.where(phase < 0.7, fall, rise)


def generate_pulse(duration_s: float, hr: float, ibi_jitter_std: float, sample_rate: float, seed) -> Signal:
    """Quasi-periodic blood-volume pulse; peak-to-peak intervals are i.i.d.
    Normal(60/hr, jitter) redrawn until positive. Zero mean, unit variance."""
    if hr <= 0 or ibi_jitter_std < 0 or sample_rate <= 0 or duration_s <= 0:
        raise ContractError("need hr > 0, jitter >= 0, sample_rate > 0, duration > 0")
    rng = np.random.default_rng(seed)
    mean_ibi = 60.0 / hr

    def draw():
        while True:
            v = rng.normal(mean_ibi, ibi_jitter_std) if ibi_jitter_std > 0 else mean_ibi
            if v > 0:
                return v

    peaks = [rng.uniform(0, mean_ibi) - mean_ibi]
    while peaks[-1] <= duration_s:
        peaks.append(peaks[-1] + draw())
    peaks = np.asarray(peaks)
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    k = np.searchsorted(peaks, t, side="right") - 1
    phase = (t - peaks[k]) / (peaks[k + 1] - peaks[k])
    x = _beat_wave(phase)
    x = x - x.mean()
    sd = x.std()
    return Signal(x / sd if sd > 0 else x, sample_rate)


def expression_amplitude(label: int, cfg: GeneratorConfig, subject: SyntheticSubject) -> float:
    return cfg.expression_amplitude * subject.expression_gain * label / (NUM_LEVELS - 1)


def _envelope(T: int, onset: float, width: float) -> np.ndarray:
    t = np.arange(T)
    u = (t - onset) / width
    return np.where((u >= 0) & (u <= 1), 0.5 * (1 - np.cos(2 * np.pi * np.clip(u, 0, 1))), 0.0)


def render_video(subject: SyntheticSubject, pulse, label: int, T: int, H: int, W: int, seed,
                 expr_amp: float | None = None, noise: float | None = None,
                 onset_frac: float | None = None, cfg: GeneratorConfig | None = None) -> VideoSample:
    """frame_t = base + amp*pulse_t*roi + expr_amp*envelope_t*pattern + noise, clipped to [0, 1]."""
    cfg = cfg or GeneratorConfig()
    p = pulse.samples if isinstance(pulse, Signal) else np.asarray(pulse, dtype=np.float64)
    if p.shape != (T,):
        raise ContractError(f"pulse has length {p.shape}, video has {T} frames")
    if subject.base_face.shape != (H, W):
        raise ContractError(f"subject templates are {subject.base_face.shape}, requested frames {H}x{W}")
    rng = np.random.default_rng(seed)
    if onset_frac is None:
        onset_frac = rng.uniform(*cfg.onset_range)
    if expr_amp is None:
        expr_amp = expression_amplitude(label, cfg, subject)
    noise = subject.noise_level if noise is None else noise
    env = _envelope(T, onset_frac * T, 0.25 * T)
    frames = (
        subject.base_face[None]
        + subject.pulse_amplitude * p[:, None, None] * subject.roi_mask[None]
        + expr_amp * env[:, None, None] * subject.expression_pattern[None]
    )
    if noise > 0:
        frames = frames + rng.normal(0.0, noise, size=frames.shape)
    clipped = np.mean((frames < 0) | (frames > 1))
    if clipped > 0.01:
        log.warning("%.1f%% of pixels saturated in subject %d label %d", 100 * clipped, subject.subject_id, label)
    frames = np.clip(frames, 0.0, 1.0)
    rate = pulse.sample_rate if isinstance(pulse, Signal) else cfg.fps
    return VideoSample(frames, int(label), subject.subject_id, Signal(p.copy(), rate))


def roi_mean_trace(frames: np.ndarray, roi_mask: np.ndarray) -> np.ndarray:
    """Mask-weighted mean intensity per frame."""
    return np.tensordot(frames, roi_mask, axes=([1, 2], [0, 1])) / roi_mask.sum()


def generate_sample(cfg: GeneratorConfig, subject: SyntheticSubject, label: int, index: int) -> VideoSample:
    rng = np.random.default_rng([cfg.seed, index])
    hr = subject.baseline_hr + cfg.hr_shift_by_label[label] + rng.normal(0.0, cfg.clip_hr_std)
    pulse = generate_pulse(cfg.n_frames / cfg.fps, hr, cfg.jitter_by_label[label], cfg.fps,
                           rng.integers(2**63))
    s = render_video(subject, pulse, label, cfg.n_frames, cfg.height, cfg.width, rng.integers(2**63), cfg=cfg)
    s.index = index
    return s


def generate_dataset(cfg: GeneratorConfig, labels=None) -> list[VideoSample]:
    """Every subject gets ``clips_per_subject`` clips with labels cycling
    through T0..T4, so classes stay balanced. ``labels`` restricts which
    pain levels are rendered (indices stay those of the full dataset)."""
    keep = None if labels is None else set(labels)
    out = []
    for sid in range(cfg.n_subjects):
        subject = make_subject(sid, cfg)
        for c in range(cfg.clips_per_subject):
            label = c % NUM_LEVELS
            index = sid * cfg.clips_per_subject + c
            if keep is None or label in keep:
                out.append(generate_sample(cfg, subject, label, index))
    return out


# ---------------------------------------------------------------------------
# clip sampling

def sample_indices(n_frames: int, cfg: SamplerConfig, seed=None) -> list[np.ndarray]:
    L, omit = cfg.clip_length, cfg.omit_first
    avail = n_frames - omit
    if L < 1 or avail < L:
        raise ContractError(f"need {L} frames after omitting {omit}, video has {n_frames} ({avail} usable)")
    if cfg.mode == "downsampled":
        return [omit + (np.arange(L) * avail) // L]
    if cfg.mode == "random64":
        start = omit + int(np.random.default_rng(seed).integers(0, avail - L + 1))
        return [np.arange(start, start + L)]
    if cfg.mode == "multisegment":
        stride = max(cfg.segment_stride, 1)
        return [np.arange(s, s + L) for s in range(omit, n_frames - L + 1, stride)]
    raise ContractError(f"unknown sampling mode {cfg.mode!r}")


def sample_frames(frames: np.ndarray, cfg: SamplerConfig, seed=None) -> list[np.ndarray]:
    return [frames[idx] for idx in sample_indices(len(frames), cfg, seed)]


@dataclass
class ClipSet:
    """Model-ready arrays: clips (N, 1, L, H, W), pulses (N, L)."""

    clips: np.ndarray
    pulses: np.ndarray
    labels: np.ndarray
    subjects: np.ndarray
    source: np.ndarray  # index of the originating video

    def subset(self, mask) -> "ClipSet":
        return ClipSet(self.clips[mask], self.pulses[mask], self.labels[mask], self.subjects[mask], self.source[mask])

    def __len__(self):
        return len(self.labels)


def build_clips(samples: list[VideoSample], sampler: SamplerConfig, seed: int = 0, label_map=None) -> ClipSet:
    clips, pulses, labels, subjects, source = [], [], [], [], []
    for s in samples:
        for idx in sample_indices(len(s.frames), sampler, [seed, s.index]):
            clips.append(s.frames[idx][None])
            pulses.append(s.ground_truth_pulse.samples[idx])
            labels.append(label_map[s.label] if label_map else s.label)
            subjects.append(s.subject_id)
            source.append(s.index)
    return ClipSet(np.stack(clips), np.stack(pulses), np.asarray(labels), np.asarray(subjects), np.asarray(source))


# ---------------------------------------------------------------------------
# subject-disjoint splits

@dataclass
class Fold:
    test_subjects: list
    train_subjects: list


def split_loso(subject_ids) -> list[Fold]:
    subs = sorted(set(int(s) for s in subject_ids))
    if not subs:
        raise ContractError("no subjects to split")
    return [Fold([s], [t for t in subs if t != s]) for s in subs]


def split_kfold(subject_ids, k: int, seed: int = 0) -> list[Fold]:
    subs = sorted(set(int(s) for s in subject_ids))
    if k < 2 or len(subs) < k:
        raise ContractError(f"{k}-fold split needs at least {k} distinct subjects, have {len(subs)}")
    perm = np.random.default_rng(seed).permutation(subs)
    groups = np.array_split(perm, k)
    return [Fold(sorted(g.tolist()), sorted(set(subs) - set(g.tolist()))) for g in groups]


# ---------------------------------------------------------------------------
# on-disk datasets

MANIFEST_VERSION = 1


def write_dataset(root, samples: list[VideoSample], cfg: GeneratorConfig) -> Path:
    """Write one tensor file per video and pulse plus ``manifest.json``."""
    from .serialization import write_tensor

    root = Path(root)
    (root / "videos").mkdir(parents=True, exist_ok=True)
    (root / "pulses").mkdir(parents=True, exist_ok=True)
    entries = []
    for s in samples:
        vpath = f"videos/{s.index:05d}.rtn"
        ppath = f"pulses/{s.index:05d}.rtn"
        write_tensor(root / vpath, s.frames)
        write_tensor(root / ppath, s.ground_truth_pulse.samples)
        entries.append(dict(index=s.index, video=vpath, pulse=ppath, label=s.label, subject_id=s.subject_id))
    manifest = dict(version=MANIFEST_VERSION, fps=cfg.fps, generator=cfg.to_dict(), samples=entries)
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    m = json.loads(path.read_text())
    if m.get("version") != MANIFEST_VERSION:
        raise ContractError(f"unsupported manifest version {m.get('version')!r}")
    for key in ("fps", "samples"):
        if key not in m:
            raise ContractError(f"manifest missing {key!r}")
    return m


def load_dataset(path, labels=None) -> list[VideoSample]:
    from .serialization import read_tensor

    path = Path(path)
    m = read_manifest(path)
    root = path.parent
    out = []
    for e in m["samples"]:
        if labels is not None and e["label"] not in labels:
            continue
        frames = read_tensor(root / e["video"]).data
        pulse = read_tensor(root / e["pulse"]).data
        out.append(VideoSample(frames, int(e["label"]), int(e["subject_id"]), Signal(pulse, m["fps"]), int(e["index"])))
    return out


def load_biovid_stub(manifest_path):
    """Real-data loader placeholder.

    Anyone with BioVid access can produce the same manifest layout (one
    tensor file per face-cropped grayscale video, one per smoothed ECG trace,
    labels 0..4) and call :func:`load_dataset` on it.
    """
    raise NotImplementedError(
        "BioVid/UNBC data are not distributed; export them to the manifest format and use load_dataset()"
    )
