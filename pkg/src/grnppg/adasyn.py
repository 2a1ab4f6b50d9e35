"""ADASYN minority oversampling with exact synthetic-count apportionment."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dataset import PulseDataset
from .errors import ConfigError, DataError

log = logging.getLogger(__name__)


@dataclass
class AdasynConfig:
    k_neighbors: int = 5
    beta: float = 1.0
    d_threshold: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if int(self.k_neighbors) < 1:
            raise ConfigError(f"k_neighbors must be >= 1, got {self.k_neighbors}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")
        if not 0.0 < self.d_threshold <= 1.0:
            raise ConfigError(f"d_threshold must lie in (0, 1], got {self.d_threshold}")


@dataclass
class AdasynInfo:
    """Provenance of each synthetic row: seed row, partner row and mixing weight."""

    minority_label: int
    k: int
    n_synthetic: int
    seed_index: np.ndarray
    partner_index: np.ndarray
    lam: np.ndarray
    allocation: np.ndarray


def largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer counts proportional to ``weights`` that sum to ``total`` exactly.

    Ties in the fractional part go to the lower index.
    """
    quotas = np.asarray(weights, dtype=np.float64) * total
    counts = np.floor(quotas).astype(np.int64)
    short = int(total - counts.sum())
    if short > 0:
        order = np.argsort(-(quotas - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * (A @ B.T)
    return np.maximum(d, 0.0)


def _knn(query: np.ndarray, ref: np.ndarray, k: int, self_index: Optional[np.ndarray] = None) -> np.ndarray:
    """Indices into ``ref`` of the ``k`` nearest rows, nearest first; self matches excluded."""
    d = _sq_dists(query, ref)
    if self_index is not None:
        d[np.arange(len(query)), self_index] = np.inf
    part = np.argpartition(d, k - 1, axis=1)[:, :k] if k < d.shape[1] else np.argsort(d, axis=1)[:, :k]
    rows = np.arange(len(query))[:, None]
    return part[rows, np.argsort(d[rows, part], axis=1, kind="stable")]


def adasyn(train: PulseDataset, cfg: Optional[AdasynConfig] = None, return_info: bool = False):
    """Append ``round((m_l - m_s) * beta)`` synthetic minority pulses.

    Seeds that sit among majority neighbours get proportionally more synthetic
    samples. Original rows are kept unchanged and in order; synthetic rows
    follow, ordered by seed then draw, with ``synthetic=True``.
    """
    cfg = cfg or AdasynConfig()
    cfg.validate()
    labels, counts = np.unique(train.y, return_counts=True)
    if len(labels) != 2 or (labels < 0).any():
        raise DataError(f"ADASYN needs exactly two labeled classes, got {dict(zip(labels.tolist(), counts.tolist()))}")
    minority = int(labels[np.argmin(counts)]) if counts[0] != counts[1] else int(labels[1])
    m_s, m_l = int(counts.min()), int(counts.max())
    G = int(np.floor((m_l - m_s) * cfg.beta + 0.5))
    if m_s / m_l >= cfg.d_threshold:
        G = 0
    k = int(cfg.k_neighbors)
    if G > 0 and m_s <= 1:
        raise DataError("ADASYN needs at least two minority samples")
    if G > 0 and m_s <= k:
        warnings.warn(f"only {m_s} minority samples; reducing k from {k} to {m_s - 1}", stacklevel=2)
        k = m_s - 1

    min_idx = np.flatnonzero(train.y == minority)
    if G == 0:
        out = train.subset(np.arange(len(train)))
        none = np.zeros(0, dtype=np.int64)
        info = AdasynInfo(minority, k, 0, none, none, np.zeros(0), np.zeros(m_s, dtype=np.int64))
        return (out, info) if return_info else out

    X = train.X
    Xm = X[min_idx]
    nn_all = _knn(Xm, X, k, self_index=min_idx)
    r = (train.y[nn_all] != minority).sum(axis=1) / k
    total = r.sum()
    r_hat = r / total if total > 0 else np.full(m_s, 1.0 / m_s)
    g = largest_remainder(r_hat, G)

    nn_min = _knn(Xm, Xm, k, self_index=np.arange(m_s))
    rng = np.random.default_rng(cfg.seed)
    seeds = np.repeat(np.arange(m_s), g)
    pick = rng.integers(0, k, size=G)
    lam = rng.random(G)
    partners = nn_min[seeds, pick]
    xi, xz = Xm[seeds], Xm[partners]
    S = xi + lam[:, None] * (xz - xi)
    amp = train.amp_range[min_idx]
    synth = PulseDataset(
        S,
        np.full(G, minority),
        [f"adasyn:{train.source_ids[min_idx[s]]}:{j}" for j, s in enumerate(seeds)],
        amp[seeds] + lam * (amp[partners] - amp[seeds]),
        np.ones(G, dtype=bool),
    )
    log.debug("ADASYN: m_s=%d m_l=%d G=%d k=%d", m_s, m_l, G, k)
    out = PulseDataset.concat([train, synth])
    if return_info:
        return out, AdasynInfo(minority, k, G, min_idx[seeds], min_idx[partners], lam, g)
    return out
