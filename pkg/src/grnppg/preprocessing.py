"""PPG window preprocessing: bandpass, pulse segmentation, resampling, scaling.

A raw window goes through four steps:

1. zero-phase Butterworth bandpass (0.5-5 Hz by default),
2. split at local minima into single-beat pulses, rejecting implausible durations,
3. linear-interpolation resampling of each pulse to 256 points,
4. per-pulse min-max scaling to [0, 1].

The 256 resampled values are the feature vector handed to the classifiers.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import signal as sps

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

PULSE_LEN = 256
MIN_PULSE_S = 0.2
MAX_PULSE_S = 2.0
FLAT_TOL = 1e-12


@dataclass
class SignalFrame:
    samples: np.ndarray
    sample_rate_hz: float = 128.0
    start_time_s: float = 0.0
    source_id: str = "frame"

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DataError("signal samples must be one-dimensional")
        if not self.sample_rate_hz > 0:
            raise ConfigError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if len(self.samples) < 2:
            raise DataError("a signal frame needs at least two samples")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def with_samples(self, samples) -> "SignalFrame":
        return SignalFrame(samples, self.sample_rate_hz, self.start_time_s, self.source_id)


@dataclass
class BandpassSpec:
    low_hz: float = 0.5
    high_hz: float = 5.0
    order: int = 4

    def validate(self, fs_hz: Optional[float] = None) -> None:
        if not (isinstance(self.order, (int, np.integer)) and self.order > 0 and self.order % 2 == 0):
            raise ConfigError(f"bandpass order must be an even positive integer, got {self.order}")
        if not 0 < self.low_hz < self.high_hz:
            raise ConfigError(f"need 0 < low < high, got low={self.low_hz} high={self.high_hz}")
        if fs_hz is not None and not self.high_hz < fs_hz / 2:
            raise ConfigError(f"high edge {self.high_hz} Hz is not below Nyquist ({fs_hz / 2} Hz)")


@dataclass
class FilterCascade:
    """Second-order sections ``[b0, b1, b2, a0, a1, a2]`` per row."""

    sos: np.ndarray
    fs_hz: float
    spec: BandpassSpec

    @property
    def n_sections(self) -> int:
        return self.sos.shape[0]

    def response(self, freqs_hz) -> np.ndarray:
        """Complex frequency response of one forward pass at ``freqs_hz``."""
        z = np.exp(1j * 2 * np.pi * np.asarray(freqs_hz, dtype=np.float64) / self.fs_hz)
        h = np.ones_like(z)
        for b0, b1, b2, a0, a1, a2 in self.sos:
            h = h * (b0 + b1 / z + b2 / z**2) / (a0 + a1 / z + a2 / z**2)
        return h


@dataclass
class Pulse:
    raw_samples: np.ndarray
    start_index: int
    duration_s: float


@dataclass
class CanonicalPulse:
    samples: np.ndarray
    label: Optional[int] = None
    source_id: str = ""
    amp_range: float = 0.0
    degenerate: bool = False
    start_s: float = 0.0
    duration_s: float = 0.0


@dataclass
class RejectionReport:
    reasons: Counter = field(default_factory=Counter)
    rejected: list = field(default_factory=list)

    def add(self, start_index: int, duration_s: float, reason: str) -> None:
        self.reasons[reason] += 1
        self.rejected.append((start_index, duration_s, reason))

    def merge(self, other: "RejectionReport") -> None:
        self.reasons.update(other.reasons)
        self.rejected.extend(other.rejected)

    @property
    def total(self) -> int:
        return sum(self.reasons.values())

    def to_dict(self) -> dict:
        return {"total": self.total, "by_reason": dict(sorted(self.reasons.items()))}


def design_bandpass(spec: BandpassSpec, fs_hz: float) -> FilterCascade:
    """Digital Butterworth bandpass as cascaded biquads.

    ``spec.order`` is the analog lowpass prototype order; the bandpass
    transform doubles it, giving ``spec.order`` biquad sections. Edges are
    pre-warped before the bilinear transform.
    """
    spec.validate(fs_hz)
    sos = sps.butter(spec.order, [spec.low_hz, spec.high_hz], btype="bandpass", fs=fs_hz, output="sos")
    return FilterCascade(np.asarray(sos, dtype=np.float64), float(fs_hz), spec)


def _forward_backward(x: np.ndarray, cascade: FilterCascade) -> np.ndarray:
    return sps.sosfiltfilt(cascade.sos, x, padtype="odd", padlen=3 * cascade.spec.order)


def filtfilt(frame: SignalFrame, cascade: FilterCascade) -> SignalFrame:
    """Zero-phase filtering with an effective magnitude response of ``|H|**2``.

    The forward-backward and backward-forward passes are averaged so that the
    result commutes exactly with time reversal; each pass alone differs from
    its mirror only in the edge transients.
    """
    x = frame.samples
    min_len = 3 * 2 * cascade.n_sections
    if len(x) <= min_len:
        raise DataError(f"frame of {len(x)} samples is too short to filter (need > {min_len})")
    if not np.all(np.isfinite(x)):
        raise DataError("frame contains non-finite samples")
    y = 0.5 * (_forward_backward(x, cascade) + _forward_backward(x[::-1], cascade)[::-1])
    return frame.with_samples(y)


def local_minima(x: np.ndarray) -> np.ndarray:
    """Indices ``i`` with ``x[i-1] > x[i] <= x[i+1]``.

    On a flat bottom only the leftmost sample qualifies.
    """
    x = np.asarray(x)
    if len(x) < 3:
        return np.zeros(0, dtype=np.int64)
    mid = x[1:-1]
    return np.flatnonzero((x[:-2] > mid) & (mid <= x[2:])) + 1


def segment_pulses(
    frame: SignalFrame, min_s: float = MIN_PULSE_S, max_s: float = MAX_PULSE_S
) -> tuple[list[Pulse], RejectionReport]:
    """Split a filtered frame into minimum-to-minimum pulses.

    Both bounding minima are included in ``raw_samples``. Pulses shorter than
    ``min_s`` or longer than ``max_s`` are reported instead of returned.
    """
    report = RejectionReport()
    minima = local_minima(frame.samples)
    pulses = []
    fs = frame.sample_rate_hz
    for i0, i1 in zip(minima[:-1], minima[1:]):
        dur = (i1 - i0) / fs
        if dur < min_s:
            report.add(int(i0), dur, "too_short")
        elif dur > max_s:
            report.add(int(i0), dur, "too_long")
        else:
            pulses.append(Pulse(frame.samples[i0 : i1 + 1].copy(), int(i0), dur))
    return pulses, report


def resample_to_256(pulse) -> np.ndarray:
    """Linearly interpolate a pulse onto 256 evenly spaced points spanning it."""
    raw = np.asarray(pulse.raw_samples if isinstance(pulse, Pulse) else pulse, dtype=np.float64)
    n = len(raw)
    if n < 2:
        raise DataError(f"cannot resample a pulse of {n} sample(s)")
    if n == PULSE_LEN:
        return raw.copy()
    pos = np.arange(PULSE_LEN) * (n - 1) / (PULSE_LEN - 1)
    return np.interp(pos, np.arange(n), raw)


def normalize_pulse(samples, label: Optional[int] = None, source_id: str = "") -> CanonicalPulse:
    """Min-max scale to [0, 1]; a flat pulse becomes all zeros and is flagged."""
    x = np.asarray(samples, dtype=np.float64)
    if x.shape != (PULSE_LEN,):
        raise DataError(f"expected {PULSE_LEN} samples, got shape {x.shape}")
    if np.isnan(x).any():
        raise DataError("pulse contains NaN")
    lo, hi = x.min(), x.max()
    span = hi - lo
    if span < FLAT_TOL:
        return CanonicalPulse(np.zeros(PULSE_LEN), label, source_id, float(span), True)
    return CanonicalPulse((x - lo) / span, label, source_id, float(span), False)


def preprocess(
    frame: SignalFrame, spec: Optional[BandpassSpec] = None
) -> tuple[list[CanonicalPulse], RejectionReport]:
    spec = spec or BandpassSpec()
    filtered = filtfilt(frame, design_bandpass(spec, frame.sample_rate_hz))
    pulses, report = segment_pulses(filtered)
    fs = frame.sample_rate_hz
    out = []
    for p in pulses:
        cp = normalize_pulse(resample_to_256(p), source_id=f"{frame.source_id}:{p.start_index}")
        if cp.degenerate:
            report.add(p.start_index, p.duration_s, "flat")
            continue
        cp.start_s = frame.start_time_s + p.start_index / fs
        cp.duration_s = p.duration_s
        out.append(cp)
    log.debug("%s: %d pulses kept, %d rejected", frame.source_id, len(out), report.total)
    return out, report


# ---------------------------------------------------------------------------
# raw signal CSV: header ``t_s,ppg``


def write_signal_csv(frame: SignalFrame, path) -> None:
    t = frame.start_time_s + np.arange(len(frame)) / frame.sample_rate_hz
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "ppg"])
        for ti, xi in zip(t, frame.samples):
            w.writerow([f"{ti:.9g}", f"{xi:.9g}"])


def read_signal_csv(path, source_id: Optional[str] = None) -> SignalFrame:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows or [c.strip() for c in rows[0]] != ["t_s", "ppg"]:
        raise DataError(f"{path}: expected header 't_s,ppg'")
    try:
        data = np.array([[float(a), float(b)] for a, b in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: malformed row ({exc})") from exc
    if len(data) < 2:
        raise DataError(f"{path}: needs at least two samples")
    dt = np.median(np.diff(data[:, 0]))
    if not dt > 0:
        raise DataError(f"{path}: timestamps must increase")
    return SignalFrame(data[:, 1], float(np.round(1.0 / dt, 6)), float(data[0, 0]), source_id or path.stem)
