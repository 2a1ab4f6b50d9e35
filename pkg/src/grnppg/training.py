"""Splitting, training, metrics and the model comparison harness."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .adasyn import AdasynConfig, adasyn, largest_remainder
from .dataset import PulseDataset
from .errors import ConfigError, DataError, NumericError
from .models import KnnConfig, MlpConfig, TransformerConfig, build_classifier, MODEL_KINDS
from .synthetic import derive_seed

log = logging.getLogger(__name__)

SMOOTHNESS_START = 5
THRESHOLD = 0.5


# ---------------------------------------------------------------------------
# splitting


@dataclass
class SplitSpec:
    train_fraction: float = 0.70
    validation_fraction_of_train: float = 0.15
    stratified: bool = True
    seed: int = 0
    min_per_class: int = 10

    def validate(self) -> None:
        for name in ("train_fraction", "validation_fraction_of_train"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")


@dataclass
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def check_disjoint(self, n: int) -> None:
        seen = np.concatenate([self.train, self.val, self.test])
        if len(np.unique(seen)) != len(seen) or len(seen) != n:
            raise DataError("split is not a disjoint, exhaustive partition")


def _carve(n: int, keep_fraction: float) -> int:
    """Rows left for the carved-off part when ``floor(keep_fraction * n)`` are kept."""
    return n - int(math.floor(keep_fraction * n + 1e-9))


def split(ds: PulseDataset, spec: Optional[SplitSpec] = None) -> Split:
    """Partition row indices into train / validation / test.

    The test part gets ``n - floor(train_fraction * n)`` rows; validation is then
    carved from the training part the same way. With stratification each class
    receives a largest-remainder share of every part.
    """
    spec = spec or SplitSpec()
    spec.validate()
    n = len(ds)
    rng = np.random.default_rng(spec.seed)
    classes, counts = np.unique(ds.y, return_counts=True)
    if spec.stratified and (counts < spec.min_per_class).any():
        raise DataError(f"every class needs >= {spec.min_per_class} samples, got {dict(zip(classes.tolist(), counts.tolist()))}")
    n_test = _carve(n, spec.train_fraction)
    n_val = _carve(n - n_test, 1.0 - spec.validation_fraction_of_train)
    if not spec.stratified:
        perm = rng.permutation(n)
        return Split(np.sort(perm[n_test + n_val :]), np.sort(perm[n_test : n_test + n_val]), np.sort(perm[:n_test]))
    test_c = largest_remainder(counts / n, n_test)
    val_c = largest_remainder((counts - test_c) / (n - n_test), n_val)
    parts = {"train": [], "val": [], "test": []}
    for c, nt, nv in zip(classes, test_c, val_c):
        idx = rng.permutation(np.flatnonzero(ds.y == c))
        parts["test"].append(idx[:nt])
        parts["val"].append(idx[nt : nt + nv])
        parts["train"].append(idx[nt + nv :])
    return Split(*(np.sort(np.concatenate(parts[k])) for k in ("train", "val", "test")))


def stratified_subsample(ds: PulseDataset, fraction: float, seed: int) -> PulseDataset:
    """A class-proportional ``fraction`` of ``ds`` (rounded to the nearest row)."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"portion must lie in (0, 1], got {fraction}")
    if fraction == 1.0:
        return ds
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(ds.y, return_counts=True)
    take = largest_remainder(counts / len(ds), int(round(fraction * len(ds))))
    keep = [rng.permutation(np.flatnonzero(ds.y == c))[:m] for c, m in zip(classes, take)]
    return ds.subset(np.sort(np.concatenate(keep)))


# ---------------------------------------------------------------------------
# metrics


@dataclass
class Metrics:
    tp: int
    fp: int
    tn: int
    fn: int
    acc: float
    pre: float
    rec: float
    f1: float
    undefined: list = field(default_factory=list)


def metrics(tp: int, fp: int, tn: int, fn: int) -> Metrics:
    """Accuracy, precision, recall and F1 from confusion counts.

    A ratio with a zero denominator is reported as 0 and named in ``undefined``.
    """
    tp, fp, tn, fn = (int(v) for v in (tp, fp, tn, fn))
    if min(tp, fp, tn, fn) < 0:
        raise DataError("confusion counts must be non-negative")
    total = tp + fp + tn + fn
    if total == 0:
        raise DataError("confusion counts are all zero")
    undefined = []

    def ratio(num, den, name):
        if den == 0:
            undefined.append(name)
            return 0.0
        return num / den

    pre = ratio(tp, tp + fp, "pre")
    rec = ratio(tp, tp + fn, "rec")
    f1 = ratio(2 * pre * rec, pre + rec, "f1")
    return Metrics(tp, fp, tn, fn, (tp + tn) / total, pre, rec, f1, undefined)


def confusion(y_true, y_pred) -> tuple[int, int, int, int]:
    y_true = np.asarray(y_true).astype(bool)
    y_pred = np.asarray(y_pred).astype(bool)
    return (
        int((y_true & y_pred).sum()),
        int((~y_true & y_pred).sum()),
        int((~y_true & ~y_pred).sum()),
        int((y_true & ~y_pred).sum()),
    )


def smoothness(losses: Sequence[float], start: int = SMOOTHNESS_START) -> Optional[float]:
    """Mean absolute epoch-to-epoch change of ``losses`` from epoch index ``start`` on."""
    x = np.asarray(losses, dtype=np.float64)
    if len(x) <= start:
        return None
    return float(np.abs(np.diff(x[start - 1 :])).mean()) if start > 0 else float(np.abs(np.diff(x)).mean())


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainSpec:
    batch_size: int = 96
    lr: Optional[float] = None
    max_epochs: int = 150
    early_stop_patience: int = 20
    seed: int = 0

    def validate(self) -> None:
        if self.batch_size < 1 or self.max_epochs < 0 or self.early_stop_patience < 1:
            raise ConfigError("batch_size and patience must be positive, max_epochs non-negative")
        if self.lr is not None and not self.lr > 0:
            raise ConfigError("learning rate must be positive")

    def lr_for(self, kind: str) -> float:
        if self.lr is not None:
            return self.lr
        return 6e-4 if kind.endswith("transformer") else 1e-4


@dataclass
class EvalReport:
    model: str
    portion: float
    seed: int
    config_hash: str
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0
    acc: float = 0.0
    pre: float = 0.0
    rec: float = 0.0
    f1: float = 0.0
    undefined_metrics: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_precision: list = field(default_factory=list)
    val_recall: list = field(default_factory=list)
    epochs: int = 0
    best_epoch: Optional[int] = None
    smoothness: Optional[float] = None
    n_train: int = 0
    n_synthetic: int = 0
    n_val: int = 0
    n_test: int = 0
    lr: Optional[float] = None
    flags: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    wall_s: float = 0.0

    def set_metrics(self, m: Metrics) -> None:
        self.tp, self.fp, self.tn, self.fn = m.tp, m.fp, m.tn, m.fn
        self.acc, self.pre, self.rec, self.f1 = m.acc, m.pre, m.rec, m.f1
        self.undefined_metrics = list(m.undefined)

    def to_dict(self, include_timing: bool = False) -> dict:
        d = dataclasses.asdict(self)
        if not include_timing:
            d.pop("wall_s")
        return d

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def predict_logits(model, X: np.ndarray, batch_size: int = 256) -> np.ndarray:
    out = [model.logits(X[i : i + batch_size]).data for i in range(0, len(X), batch_size)]
    return np.concatenate(out) if out else np.zeros(0)


def _bce(logits: np.ndarray, y: np.ndarray) -> float:
    return float((np.maximum(logits, 0) - logits * y + np.log1p(np.exp(-np.abs(logits)))).mean())


def train(model, train_ds: PulseDataset, val_ds: PulseDataset, spec: Optional[TrainSpec] = None,
          report: Optional[EvalReport] = None) -> EvalReport:
    """Fit ``model`` in place with Adam on binary cross-entropy.

    Each epoch reshuffles the training rows, records the mean training-mode
    batch loss and the inference-mode validation loss, precision and recall.
    Training stops after ``early_stop_patience`` epochs without a new
    validation minimum; the parameters from that minimum are restored.
    """
    spec = spec or TrainSpec()
    spec.validate()
    report = report or EvalReport(model.kind, 1.0, spec.seed, "")
    if model.kind == "knn":
        model.fit(train_ds)
        return report
    lr = spec.lr_for(model.kind)
    report.lr = lr
    params = model.parameters()
    state = ad.AdamState(lr=lr)
    shuffle_rng = np.random.default_rng(derive_seed(spec.seed, "shuffle"))
    drop_rng = np.random.default_rng(derive_seed(spec.seed, "dropout"))
    X, y = train_ds.X, train_ds.y.astype(np.float64)
    best_loss, best_state, bad = np.inf, None, 0
    for epoch in range(spec.max_epochs):
        perm = shuffle_rng.permutation(len(X))
        total = 0.0
        for b, start in enumerate(range(0, len(X), spec.batch_size)):
            idx = perm[start : start + spec.batch_size]
            with ad.GradTape() as tape:
                loss = ad.bce_with_logits(model.logits(X[idx], True, drop_rng), y[idx])
            if not np.isfinite(loss.data):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b} (lr={lr})")
            for p in params:
                p.zero_grad()
            tape.backward(loss)
            try:
                ad.adam_step(params, state)
            except NumericError as exc:
                raise NumericError(f"{exc} at epoch {epoch}, batch {b} (lr={lr})") from exc
            total += loss.item() * len(idx)
        val_logits = predict_logits(model, val_ds.X)
        val_loss = _bce(val_logits, val_ds.y)
        m = metrics(*confusion(val_ds.y, val_logits >= 0.0))
        report.train_loss.append(total / len(X))
        report.val_loss.append(val_loss)
        report.val_precision.append(m.pre)
        report.val_recall.append(m.rec)
        log.info("%s epoch %d: train %.4f val %.4f", model.kind, epoch, total / len(X), val_loss)
        if val_loss < best_loss:
            best_loss, bad = val_loss, 0
            best_state = [p.data.copy() for p in params]
            report.best_epoch = epoch
        else:
            bad += 1
            if bad >= spec.early_stop_patience:
                break
    if best_state is not None:
        for p, saved in zip(params, best_state):
            p.data[...] = saved
    report.epochs = len(report.val_loss)
    report.smoothness = smoothness(report.val_loss)
    return report


def evaluate(model, test_ds: PulseDataset, report: EvalReport) -> EvalReport:
    probs = model.predict_proba(test_ds.X)
    report.set_metrics(metrics(*confusion(test_ds.y, probs >= THRESHOLD)))
    report.n_test = len(test_ds)
    return report


# ---------------------------------------------------------------------------
# full pipeline for one (model, portion, seed) cell


@dataclass
class ExperimentConfig:
    transformer: TransformerConfig = field(default_factory=TransformerConfig)
    mlp: MlpConfig = field(default_factory=MlpConfig)
    knn: KnnConfig = field(default_factory=KnnConfig)
    adasyn: AdasynConfig = field(default_factory=AdasynConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    train: TrainSpec = field(default_factory=TrainSpec)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class CellResult:
    report: EvalReport
    model: object
    split: Split
    data: PulseDataset
    train_data: PulseDataset


def run_cell(corpus: PulseDataset, kind: str, portion: float, seed: int,
             cfg: Optional[ExperimentConfig] = None) -> CellResult:
    """Subsample, split, oversample the training part, train and test one model."""
    cfg = cfg or ExperimentConfig()
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unsupported model {kind!r}; supported: {', '.join(MODEL_KINDS)}")
    t0 = time.perf_counter()
    data = stratified_subsample(corpus, portion, derive_seed(seed, "portion", str(portion)))
    parts = split(data, dataclasses.replace(cfg.split, seed=derive_seed(seed, "split")))
    parts.check_disjoint(len(data))
    train_ds = adasyn(data.subset(parts.train), dataclasses.replace(cfg.adasyn, seed=derive_seed(seed, "adasyn")))
    val_ds, test_ds = data.subset(parts.val), data.subset(parts.test)
    if val_ds.synthetic.any() or test_ds.synthetic.any():
        raise DataError("synthetic rows leaked into validation or test data")

    model = build_classifier(kind, cfg.transformer, cfg.mlp, cfg.knn, seed=derive_seed(seed, "init", kind))
    effective = {"model": kind, "portion": portion, "seed": seed, **cfg.to_dict()}
    if hasattr(model, "cfg"):
        effective["model_config"] = dataclasses.asdict(model.cfg)
    report = EvalReport(kind, float(portion), int(seed), config_hash(effective), config=effective)
    report.n_train = len(train_ds)
    report.n_synthetic = int(train_ds.synthetic.sum())
    report.n_val = len(val_ds)
    train(model, train_ds, val_ds, dataclasses.replace(cfg.train, seed=derive_seed(seed, "train")), report)
    evaluate(model, test_ds, report)
    report.wall_s = time.perf_counter() - t0
    return CellResult(report, model, parts, data, train_ds)


# ---------------------------------------------------------------------------
# comparison


AGGREGATE_COLUMNS = ["model", "portion", "seed", "acc", "pre", "rec", "f1", "smoothness", "epochs", "wall_s"]
CURVE_COLUMNS = ["model", "portion", "seed", "epoch", "train_loss", "val_loss"]
DEFAULT_PORTIONS = (0.025, 0.05, 0.075, 0.10)


@dataclass
class Comparison:
    reports: list
    summary: list
    flags: list

    def aggregate_rows(self) -> list:
        return [
            {c: getattr(r, c) for c in AGGREGATE_COLUMNS} for r in self.reports
        ]

    def curve_rows(self) -> list:
        rows = []
        for r in self.reports:
            for e, (tl, vl) in enumerate(zip(r.train_loss, r.val_loss)):
                rows.append({"model": r.model, "portion": r.portion, "seed": r.seed, "epoch": e,
                             "train_loss": tl, "val_loss": vl})
        return rows


def _summarize(reports: Sequence[EvalReport]) -> list:
    groups: dict = {}
    for r in reports:
        groups.setdefault((r.model, r.portion), []).append(r)
    out = []
    for (model, portion), rs in groups.items():
        row = {"model": model, "portion": portion, "n_seeds": len(rs)}
        for key in ("acc", "pre", "rec", "f1", "smoothness", "epochs"):
            vals = np.array([getattr(r, key) for r in rs if getattr(r, key) is not None], dtype=np.float64)
            row[f"{key}_mean"] = float(vals.mean()) if len(vals) else None
            row[f"{key}_std"] = float(vals.std()) if len(vals) else None
        out.append(row)
    return out


def directional_flags(reports: Sequence[EvalReport], f1_margin: float = 0.02) -> list:
    """Per-seed and mean checks of GRN-Transformer against the plain Transformer."""
    flags = []
    by = {(r.model, r.portion, r.seed): r for r in reports}
    portions = sorted({r.portion for r in reports})
    for portion in portions:
        seeds = sorted(s for (m, p, s) in by if m == "grn-transformer" and p == portion and ("transformer", p, s) in by)
        if not seeds:
            continue
        for s in seeds:
            g, t = by["grn-transformer", portion, s], by["transformer", portion, s]
            if g.f1 < t.f1 - f1_margin:
                flags.append(f"portion={portion} seed={s}: GRN-Transformer F1 {g.f1:.3f} < Transformer F1 {t.f1:.3f} - {f1_margin}")
            if g.smoothness is not None and t.smoothness is not None and g.smoothness > t.smoothness:
                flags.append(f"portion={portion} seed={s}: GRN-Transformer smoothness {g.smoothness:.4f} > Transformer {t.smoothness:.4f}")
        gf = np.mean([by["grn-transformer", portion, s].f1 for s in seeds])
        tf = np.mean([by["transformer", portion, s].f1 for s in seeds])
        if gf < tf - f1_margin:
            flags.append(f"portion={portion} mean: GRN-Transformer F1 {gf:.3f} < Transformer F1 {tf:.3f} - {f1_margin}")
    return flags


def compare(corpus: PulseDataset, models: Sequence[str], portions: Sequence[float], seeds: Sequence[int],
            cfg: Optional[ExperimentConfig] = None, threads: int = 1) -> Comparison:
    """Run every (model, portion, seed) cell and aggregate across seeds.

    Cells are independent; with ``threads > 1`` they run concurrently, and the
    result order is always model, portion, seed as given.
    """
    for m in models:
        if m not in MODEL_KINDS:
            raise ConfigError(f"unsupported model {m!r}; supported: {', '.join(MODEL_KINDS)}")
    for p in portions:
        if not 0.0 < p <= 1.0:
            raise ConfigError(f"portion must lie in (0, 1], got {p}")
    cells = [(m, p, s) for m in models for p in portions for s in seeds]

    def one(cell):
        m, p, s = cell
        return run_cell(corpus, m, p, s, cfg).report

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(one, cells))
    else:
        reports = [one(c) for c in cells]
    flags = directional_flags(reports)
    for f in flags:
        log.warning(f)
    return Comparison(reports, _summarize(reports), flags)
