"""Desk-scale comparison of Transformer and GRN-Transformer on a synthetic corpus."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .models import TransformerConfig
from .synthetic import GeneratorConfig, build_corpus
from .training import Comparison, ExperimentConfig, TrainSpec, compare


@dataclass
class SurrogateSpec:
    """Settings fixed before the first run. ``d_model=64`` keeps 3 seeds x 2 models near 20 CPU minutes."""

    n_pulses: int = 4000
    artifact_rate: float = 0.175
    corpus_seed: int = 1
    seeds: tuple = (0, 1, 2)
    d_model: int = 64
    max_epochs: int = 30
    patience: int = 10
    models: tuple = ("transformer", "grn-transformer")
    threads: int = 1

    def experiment(self) -> ExperimentConfig:
        return ExperimentConfig(
            transformer=TransformerConfig(d_model=self.d_model, ff_hidden=self.d_model),
            train=TrainSpec(max_epochs=self.max_epochs, early_stop_patience=self.patience),
        )


@dataclass
class SurrogateResult:
    comparison: Comparison
    prevalence: float
    n_pulses: int
    wall_s: float
    means: dict = field(default_factory=dict)

    def checks(self, f1_floor: float = 0.85, margin: float = 0.02) -> dict:
        g, t = self.means["grn-transformer"], self.means["transformer"]
        return {
            "grn_f1_floor": g["f1"] >= f1_floor,
            "grn_f1_vs_transformer": g["f1"] >= t["f1"] - margin,
            "grn_smoother": None not in (g["smoothness"], t["smoothness"]) and g["smoothness"] <= t["smoothness"],
        }


def run_surrogate(spec: SurrogateSpec | None = None) -> SurrogateResult:
    spec = spec or SurrogateSpec()
    t0 = time.perf_counter()
    corpus = build_corpus(spec.n_pulses, GeneratorConfig(artifact_rate=spec.artifact_rate, seed=spec.corpus_seed))
    res = compare(corpus, list(spec.models), [1.0], list(spec.seeds), spec.experiment(), threads=spec.threads)
    means = {}
    for m in spec.models:
        rs = [r for r in res.reports if r.model == m]
        smooth = [r.smoothness for r in rs if r.smoothness is not None]
        means[m] = {
            "f1": float(np.mean([r.f1 for r in rs])),
            "smoothness": float(np.mean(smooth)) if smooth else None,  # None when runs stop before epoch 6
        }
    return SurrogateResult(res, float(corpus.y.mean()), len(corpus), time.perf_counter() - t0, means)
