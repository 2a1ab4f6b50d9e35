"""Labeled synthetic PPG with injected motion-like artifacts.

Stands in for a clinical cohort: each frame is a two-lobe beat train with
baseline wander and white noise, plus artifact intervals whose number is tuned
so the share of artifact-labeled pulses after preprocessing lands on the
requested prevalence.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dataset import PulseDataset
from .errors import ConfigError, DataError
from .preprocessing import BandpassSpec, CanonicalPulse, SignalFrame, preprocess

log = logging.getLogger(__name__)

ARTIFACT_KINDS = ("spike", "flatline", "baseline_jump", "amplitude_burst")
OVERLAP_THRESHOLD = 0.10


def derive_seed(seed: int, *keys) -> int:
    """Independent child seed for a named stage, stable across runs."""
    words = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF]
    for k in keys:
        words.append(zlib.crc32(str(k).encode()) if isinstance(k, str) else int(k) & 0xFFFFFFFF)
    return int(np.random.SeedSequence(words).generate_state(1, np.uint64)[0] >> 1)


@dataclass
class GeneratorConfig:
    duration_s: float = 30.0
    sample_rate_hz: float = 128.0
    hr_mean_bpm: float = 75.0
    hr_std_bpm: float = 3.0
    baseline_amp: float = 0.3
    baseline_freq_hz: float = 0.2
    noise_std: float = 0.01
    artifact_rate: float = 0.175
    artifact_mix: dict = field(default_factory=lambda: {k: 1.0 for k in ARTIFACT_KINDS})
    artifact_min_s: float = 2.0
    artifact_max_s: float = 6.0
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.artifact_rate <= 0.5:
            raise ConfigError(f"artifact_rate must lie in [0, 0.5], got {self.artifact_rate}")
        if not self.sample_rate_hz > 2 * 5.0:
            raise ConfigError("sample rate must exceed twice the 5 Hz band edge")
        if not self.duration_s > 0:
            raise ConfigError("duration must be positive")
        if not 20.0 <= self.hr_mean_bpm <= 240.0 or self.hr_std_bpm < 0:
            raise ConfigError("heart rate mean must lie in [20, 240] bpm with a non-negative std")
        if self.noise_std < 0 or self.baseline_amp < 0:
            raise ConfigError("noise and baseline amplitudes must be non-negative")
        if not 0 < self.artifact_min_s <= self.artifact_max_s:
            raise ConfigError("artifact duration bounds must satisfy 0 < min <= max")
        unknown = set(self.artifact_mix) - set(ARTIFACT_KINDS)
        if unknown:
            raise ConfigError(f"unknown artifact kinds {sorted(unknown)}; choose from {ARTIFACT_KINDS}")
        weights = np.array([float(self.artifact_mix.get(k, 0.0)) for k in ARTIFACT_KINDS])
        if (weights < 0).any() or (self.artifact_rate > 0 and weights.sum() <= 0):
            raise ConfigError("artifact_mix weights must be non-negative and not all zero")


@dataclass
class ArtifactInterval:
    start_s: float
    end_s: float
    kind: str

    def to_dict(self) -> dict:
        return {"start_s": round(self.start_s, 6), "end_s": round(self.end_s, 6), "kind": self.kind}


@dataclass
class AnnotatedFrame:
    frame: SignalFrame
    intervals: list
    n_beats: int = 0


# ---------------------------------------------------------------------------
# clean signal


def _beat_train(cfg: GeneratorConfig, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    fs = cfg.sample_rate_hz
    n = int(round(cfg.duration_s * fs))
    t = np.arange(n) / fs
    x = np.zeros(n)
    onset = -rng.uniform(0.0, 60.0 / cfg.hr_mean_bpm)
    n_beats = 0
    while onset < cfg.duration_s:
        bpm = np.clip(rng.normal(cfg.hr_mean_bpm, cfg.hr_std_bpm), 30.0, 300.0)
        period = 60.0 / bpm
        amp = rng.normal(1.0, 0.05)
        lo, hi = np.searchsorted(t, [onset - period, onset + 3 * period])
        tau = t[lo:hi] - onset
        x[lo:hi] += amp * (
            np.exp(-0.5 * ((tau - 0.20 * period) / (0.10 * period)) ** 2)
            + 0.40 * np.exp(-0.5 * ((tau - 0.45 * period) / (0.15 * period)) ** 2)
        )
        if onset >= 0:
            n_beats += 1
        onset += period
    phase = rng.uniform(0, 2 * np.pi)
    x += cfg.baseline_amp * np.sin(2 * np.pi * cfg.baseline_freq_hz * t + phase)
    x += rng.normal(0.0, cfg.noise_std, n) if cfg.noise_std > 0 else 0.0
    return x, n_beats


# ---------------------------------------------------------------------------
# artifacts


def _plan_intervals(cfg: GeneratorConfig, rng: np.random.Generator) -> list[ArtifactInterval]:
    """Non-overlapping candidate intervals covering at most ~70% of the frame, shuffled."""
    weights = np.array([float(cfg.artifact_mix.get(k, 0.0)) for k in ARTIFACT_KINDS])
    weights = weights / weights.sum()
    gap = 1.0
    slots = []
    pos = rng.uniform(0.0, 2.0)
    while True:
        length = rng.uniform(cfg.artifact_min_s, cfg.artifact_max_s)
        if pos + length > cfg.duration_s:
            break
        slots.append((pos, pos + length))
        pos += length + gap + rng.exponential(1.0)
    order = rng.permutation(len(slots))
    kinds = rng.choice(len(ARTIFACT_KINDS), size=len(slots), p=weights)
    return [ArtifactInterval(slots[i][0], slots[i][1], ARTIFACT_KINDS[k]) for i, k in zip(order, kinds)]


def _artifact_layer(iv: ArtifactInterval, n: int, fs: float, rng: np.random.Generator):
    """Return ``(index_slice, additive_or_replacement, replaces)`` for one interval."""
    i0, i1 = int(round(iv.start_s * fs)), min(n, int(round(iv.end_s * fs)))
    m = i1 - i0
    t = np.arange(m) / fs
    if iv.kind == "spike":
        out = np.zeros(m)
        width = 0.02 * fs
        centers = []
        c = rng.uniform(0.05, 0.3)
        while c < m / fs:
            centers.append(c)
            c += rng.uniform(0.2, 0.6)
        idx = np.arange(m)
        for c in centers:
            out += rng.choice([-1.0, 1.0]) * rng.uniform(3.0, 6.0) * np.exp(-0.5 * ((idx - c * fs) / width) ** 2)
        return slice(i0, i1), out, False
    if iv.kind == "flatline":
        return slice(i0, i1), np.full(m, rng.uniform(-0.5, 1.0)) + rng.normal(0, 1e-3, m), True
    if iv.kind == "baseline_jump":
        out = np.zeros(m)
        level = 0.0
        c = rng.uniform(0.1, 0.5)
        while c < m / fs:
            level += rng.choice([-1.0, 1.0]) * rng.uniform(1.5, 3.0)
            out[int(c * fs) :] = level
            c += rng.uniform(0.4, 1.2)
        return slice(i0, i1), out, False
    if iv.kind == "amplitude_burst":
        out = np.zeros(m)
        for _ in range(3):
            f = rng.uniform(0.7, 4.0)
            out += rng.uniform(0.6, 1.2) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
        taper = np.minimum(1.0, np.minimum(t, t[-1] - t) / 0.1) if m > 1 else np.ones(m)
        return slice(i0, i1), out * taper, False
    raise ConfigError(f"unknown artifact kind {iv.kind!r}")


def _apply(clean: np.ndarray, layers: Sequence) -> np.ndarray:
    x = clean.copy()
    for sl, values, replaces in layers:
        if replaces:
            x[sl] = values
        else:
            x[sl] += values
    return x


# ---------------------------------------------------------------------------
# labeling


def label_pulses(annotated: AnnotatedFrame, pulses: Sequence[CanonicalPulse]) -> list[CanonicalPulse]:
    """Label 1 when a pulse overlaps artifact intervals by more than 10% of its duration."""
    frame = annotated.frame
    t0, t1 = frame.start_time_s, frame.start_time_s + frame.duration_s
    spans = np.array([(iv.start_s + t0, iv.end_s + t0) for iv in annotated.intervals]).reshape(-1, 2)
    out = []
    for p in pulses:
        a, b = p.start_s, p.start_s + p.duration_s
        if a < t0 - 1e-9 or b > t1 + 1e-9:
            raise DataError(f"pulse {p.source_id} [{a:.3f}, {b:.3f}] s lies outside its frame")
        overlap = np.clip(np.minimum(spans[:, 1], b) - np.maximum(spans[:, 0], a), 0.0, None).sum()
        label = int(p.duration_s > 0 and overlap > OVERLAP_THRESHOLD * p.duration_s)
        out.append(dataclasses.replace(p, label=label))
    return out


def labeled_pulses(annotated: AnnotatedFrame, spec: Optional[BandpassSpec] = None):
    pulses, report = preprocess(annotated.frame, spec)
    return label_pulses(annotated, pulses), report


# ---------------------------------------------------------------------------
# generation


def generate_frame(cfg: GeneratorConfig, source_id: str = "synth") -> AnnotatedFrame:
    """Generate one annotated frame; deterministic in ``cfg.seed``.

    Artifact intervals are drawn as a shuffled candidate list and the shortest
    prefix whose labeled-pulse share is closest to ``cfg.artifact_rate`` is
    kept (bisection on the prefix length).
    """
    cfg.validate()
    rng = np.random.default_rng(derive_seed(cfg.seed, "frame"))
    fs = cfg.sample_rate_hz
    clean, n_beats = _beat_train(cfg, rng)
    base = SignalFrame(clean, fs, 0.0, source_id)
    if cfg.artifact_rate == 0.0:
        return AnnotatedFrame(base, [], n_beats)

    candidates = _plan_intervals(cfg, rng)
    art_rng = np.random.default_rng(derive_seed(cfg.seed, "artifacts"))
    layers = [_artifact_layer(iv, len(clean), fs, art_rng) for iv in candidates]

    def realized(k: int) -> float:
        annotated = AnnotatedFrame(base.with_samples(_apply(clean, layers[:k])), candidates[:k])
        pulses, _ = labeled_pulses(annotated)
        return float(np.mean([p.label for p in pulses])) if pulses else 0.0

    lo, hi = 0, len(candidates)
    cache = {}

    def frac(k):
        if k not in cache:
            cache[k] = realized(k)
        return cache[k]

    while lo < hi:
        mid = (lo + hi) // 2
        if frac(mid) < cfg.artifact_rate:
            lo = mid + 1
        else:
            hi = mid
    k = lo
    if k > 0 and abs(frac(k - 1) - cfg.artifact_rate) <= abs(frac(k) - cfg.artifact_rate):
        k -= 1
    kept = sorted(candidates[:k], key=lambda iv: iv.start_s)
    samples = _apply(clean, layers[:k])
    log.debug("%s: %d/%d artifact intervals, realized share %.3f", source_id, k, len(candidates), frac(k))
    return AnnotatedFrame(base.with_samples(samples), kept, n_beats)


def build_corpus(
    n_pulses: int,
    cfg: Optional[GeneratorConfig] = None,
    frame_s: float = 120.0,
    spec: Optional[BandpassSpec] = None,
) -> PulseDataset:
    """Concatenate labeled pulses from successive frames until ``n_pulses`` is reached.

    Each frame's prevalence target is nudged so that the running corpus share
    tracks ``cfg.artifact_rate``; heart rate varies between frames.
    """
    cfg = cfg or GeneratorConfig()
    cfg.validate()
    hr_rng = np.random.default_rng(derive_seed(cfg.seed, "corpus-hr"))
    parts = []
    n_total = n_art = 0
    idx = 0
    while n_total < n_pulses:
        hr = float(np.clip(hr_rng.normal(cfg.hr_mean_bpm, 10.0), 50.0, 140.0))
        expected = frame_s * hr / 60.0
        want = (cfg.artifact_rate * (n_total + expected) - n_art) / expected
        frame_cfg = dataclasses.replace(
            cfg,
            duration_s=frame_s,
            hr_mean_bpm=hr,
            artifact_rate=float(np.clip(want, 0.0, 0.5)) if cfg.artifact_rate > 0 else 0.0,
            seed=derive_seed(cfg.seed, "corpus-frame", idx),
        )
        annotated = generate_frame(frame_cfg, source_id=f"f{idx:04d}")
        pulses, _ = labeled_pulses(annotated, spec)
        ds = PulseDataset.from_pulses(pulses)
        parts.append(ds)
        n_total += len(ds)
        n_art += int(ds.y.sum())
        idx += 1
    corpus = PulseDataset.concat(parts)
    return corpus.subset(np.arange(n_pulses))


def write_intervals_json(intervals: Sequence[ArtifactInterval], path) -> None:
    with open(path, "w") as fh:
        json.dump([iv.to_dict() for iv in intervals], fh, indent=2)
        fh.write("\n")


def read_intervals_json(path) -> list[ArtifactInterval]:
    try:
        with open(path) as fh:
            items = json.load(fh)
        return [ArtifactInterval(float(d["start_s"]), float(d["end_s"]), str(d["kind"])) for d in items]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"cannot read intervals from {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# statistical second annotator


@dataclass
class AnnotatorConfig:
    corr_threshold: float = 0.8
    z_threshold: float = 3.0
    min_pulses: int = 20


def _row_corr(X: np.ndarray, template: np.ndarray) -> np.ndarray:
    xc = X - X.mean(axis=1, keepdims=True)
    tc = template - template.mean()
    denom = np.sqrt((xc * xc).sum(axis=1) * (tc * tc).sum())
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (xc @ tc) / denom
    return np.where(denom > 0, r, 0.0)


def statistical_annotator(ds: PulseDataset, cfg: Optional[AnnotatorConfig] = None) -> np.ndarray:
    """Flag pulses whose shape or amplitude falls outside the dataset's norm.

    The template starts as the mean pulse, is recomputed once from pulses that
    correlate with it at ``corr_threshold`` or better, and a pulse is flagged
    when its correlation with the refined template is below the threshold or
    its pre-scaling amplitude range has a z-score above ``z_threshold``.
    """
    cfg = cfg or AnnotatorConfig()
    if len(ds) < cfg.min_pulses:
        raise DataError(f"statistical annotator needs at least {cfg.min_pulses} pulses, got {len(ds)}")
    template = ds.X.mean(axis=0)
    keep = _row_corr(ds.X, template) >= cfg.corr_threshold
    if keep.any():
        template = ds.X[keep].mean(axis=0)
    corr = _row_corr(ds.X, template)
    amp = ds.amp_range
    sd = amp.std()
    z = (amp - amp.mean()) / sd if sd > 0 else np.zeros_like(amp)
    return (corr < cfg.corr_threshold) | (z > cfg.z_threshold)
