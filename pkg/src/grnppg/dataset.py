"""Fixed-length pulse matrix with labels and provenance, plus its CSV format.

Pulse CSV layout: ``source_id,label,amp_range,s000..s255``. ``label`` is 0
(normal), 1 (artifact) or -1 (unlabeled); ``amp_range`` is the pulse's
peak-to-peak amplitude before min-max scaling. Floats carry 9 significant
digits.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DataError
from .preprocessing import PULSE_LEN, CanonicalPulse

SAMPLE_COLUMNS = [f"s{i:03d}" for i in range(PULSE_LEN)]
CSV_HEADER = ["source_id", "label", "amp_range", *SAMPLE_COLUMNS]
UNLABELED = -1


@dataclass
class PulseDataset:
    X: np.ndarray
    y: np.ndarray
    source_ids: list = field(default_factory=list)
    amp_range: Optional[np.ndarray] = None
    synthetic: Optional[np.ndarray] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64).reshape(-1, PULSE_LEN)
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        n = len(self.X)
        if len(self.y) != n:
            raise DataError(f"{n} pulses but {len(self.y)} labels")
        if not self.source_ids:
            self.source_ids = [f"row{i}" for i in range(n)]
        self.source_ids = list(self.source_ids)
        if self.amp_range is None:
            self.amp_range = np.ones(n)
        self.amp_range = np.asarray(self.amp_range, dtype=np.float64)
        if self.synthetic is None:
            self.synthetic = np.zeros(n, dtype=bool)
        self.synthetic = np.asarray(self.synthetic, dtype=bool)
        if not (len(self.source_ids) == len(self.amp_range) == len(self.synthetic) == n):
            raise DataError("PulseDataset columns have inconsistent lengths")

    def __len__(self) -> int:
        return len(self.X)

    @property
    def labeled(self) -> bool:
        return bool(len(self.y)) and bool(np.all(self.y >= 0))

    def class_counts(self) -> dict:
        return {int(c): int((self.y == c).sum()) for c in np.unique(self.y)}

    def subset(self, idx) -> "PulseDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return PulseDataset(
            self.X[idx],
            self.y[idx],
            [self.source_ids[i] for i in idx],
            self.amp_range[idx],
            self.synthetic[idx],
        )

    @classmethod
    def concat(cls, parts: Sequence["PulseDataset"]) -> "PulseDataset":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls(np.zeros((0, PULSE_LEN)), np.zeros(0))
        return cls(
            np.concatenate([p.X for p in parts]),
            np.concatenate([p.y for p in parts]),
            [s for p in parts for s in p.source_ids],
            np.concatenate([p.amp_range for p in parts]),
            np.concatenate([p.synthetic for p in parts]),
        )

    @classmethod
    def from_pulses(cls, pulses: Iterable[CanonicalPulse]) -> "PulseDataset":
        pulses = list(pulses)
        if not pulses:
            return cls(np.zeros((0, PULSE_LEN)), np.zeros(0))
        return cls(
            np.stack([p.samples for p in pulses]),
            np.array([UNLABELED if p.label is None else p.label for p in pulses]),
            [p.source_id for p in pulses],
            np.array([p.amp_range for p in pulses]),
        )


def write_pulse_csv(ds: PulseDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for sid, label, rng_, row in zip(ds.source_ids, ds.y, ds.amp_range, ds.X):
            w.writerow([sid, int(label), f"{rng_:.9g}", *(f"{v:.9g}" for v in row)])


def read_pulse_csv(path) -> PulseDataset:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path} is empty")
    if rows[0] == CSV_HEADER:
        first = 3
    elif rows[0] == [c for c in CSV_HEADER if c != "amp_range"]:
        first = 2  # files without amplitudes
    else:
        raise DataError(f"{path}: unexpected pulse CSV header")
    body = rows[1:]
    if not body:
        raise DataError(f"{path} contains no pulses")
    try:
        X = np.array([[float(v) for v in r[first:]] for r in body], dtype=np.float64)
        y = np.array([int(r[1]) for r in body])
        amp = np.array([float(r[2]) for r in body]) if first == 3 else None
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: malformed row ({exc})") from exc
    if X.shape[1] != PULSE_LEN:
        raise DataError(f"{path}: rows must carry {PULSE_LEN} samples")
    if not np.isin(y, (UNLABELED, 0, 1)).all():
        raise DataError(f"{path}: labels must be 0, 1 or -1")
    return PulseDataset(X, y, [r[0] for r in body], amp)
