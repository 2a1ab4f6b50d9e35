"""Pulse classifiers built on the autodiff core.

Parameters live in flat, insertion-ordered ``dict[str, Tensor]`` stores so a
checkpoint can serialize them in a stable order. Block functions take the
sub-store for their prefix (see :func:`scope`).

Gated residual network (GRN) block on an input ``a`` with optional context ``c``::

    eta2 = ELU(W2 a + W3 c + b2)
    eta1 = W1 eta2 + b1                      (dropout here while training)
    GLU(g) = sigmoid(W4 g + b4) * (W5 g + b5)
    GRN(a, c) = LayerNorm(a + GLU(eta1))

A GLU gate driven shut leaves ``LayerNorm(a)``, so the block can switch itself off.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dataset import PulseDataset
from .errors import ConfigError, DataError, ShapeError
from .preprocessing import PULSE_LEN

LN_EPS = 1e-5
GRN_PLACEMENTS = ("intermediate", "ffn", "pre_pool")
MODEL_KINDS = ("transformer", "grn-transformer", "mlp", "grn-mlp", "knn")

Params = dict


def scope(params: Params, prefix: str) -> Params:
    head = prefix + "."
    return {k[len(head) :]: v for k, v in params.items() if k.startswith(head)}


def _zeros(n: int, name: str) -> Tensor:
    return Tensor(np.zeros(n), requires_grad=True, name=name)


def _ones(n: int, name: str) -> Tensor:
    return Tensor(np.ones(n), requires_grad=True, name=name)


def _dense(params: Params, prefix: str, n_out: int, n_in: int, rng, bias: bool = True) -> None:
    params[f"{prefix}.W"] = ad.glorot_init((n_out, n_in), rng, name=f"{prefix}.W")
    if bias:
        params[f"{prefix}.b"] = _zeros(n_out, f"{prefix}.b")


def _layer_norm_params(params: Params, prefix: str, d: int) -> None:
    params[f"{prefix}.gain"] = _ones(d, f"{prefix}.gain")
    params[f"{prefix}.bias"] = _zeros(d, f"{prefix}.bias")


# ---------------------------------------------------------------------------
# GLU / GRN


def init_grn(d: int, rng: np.random.Generator, d_ctx: Optional[int] = None, prefix: str = "grn") -> Params:
    p: Params = {}
    for name in ("W1", "W2", "W4", "W5"):
        p[f"{prefix}.{name}"] = ad.glorot_init((d, d), rng, name=f"{prefix}.{name}")
    if d_ctx is not None:
        p[f"{prefix}.W3"] = ad.glorot_init((d, d_ctx), rng, name=f"{prefix}.W3")
    for name in ("b1", "b2", "b4", "b5"):
        p[f"{prefix}.{name}"] = _zeros(d, f"{prefix}.{name}")
    _layer_norm_params(p, f"{prefix}.ln", d)
    return p


def glu(gamma: Tensor, p: Params) -> Tensor:
    """``sigmoid(W4 g + b4) * (W5 g + b5)`` over the last axis."""
    gate = ad.sigmoid(ad.linear(gamma, p["W4"], p["b4"]))
    return ad.mul(gate, ad.linear(gamma, p["W5"], p["b5"]))


def grn_forward(
    a: Tensor,
    c: Optional[Tensor],
    p: Params,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    dropout: float = 0.25,
    eps: float = LN_EPS,
) -> Tensor:
    d = p["W1"].shape[0]
    if a.shape[-1] != d:
        raise ShapeError(f"GRN expects last axis {d}, got input {a.shape}")
    pre = ad.linear(a, p["W2"], p["b2"])
    if c is not None and "W3" in p:
        if c.shape[-1] != p["W3"].shape[1] or c.shape[:-1] != a.shape[:-1]:
            raise ShapeError(f"context {c.shape} does not fit input {a.shape} / W3 {p['W3'].shape}")
        pre = ad.add(pre, ad.linear(c, p["W3"]))
    elif c is not None and np.any(c.data != 0):
        raise ShapeError("a non-zero context was given to a GRN built without a context projection")
    eta2 = ad.elu(pre)
    eta1 = ad.linear(eta2, p["W1"], p["b1"])
    eta1 = ad.dropout(eta1, dropout, training, rng)
    return ad.layer_norm(ad.add(a, glu(eta1, p)), p["ln.gain"], p["ln.bias"], eps)


# ---------------------------------------------------------------------------
# attention


def init_attention(d: int, rng: np.random.Generator, prefix: str = "attn") -> Params:
    p: Params = {}
    for name in ("q", "k", "v", "o"):
        _dense(p, f"{prefix}.{name}", d, d, rng)
    return p


def multi_head_attention(x: Tensor, p: Params, n_heads: int) -> Tensor:
    """Scaled dot-product self-attention over ``x`` of shape ``B x T x d``."""
    if x.ndim != 3:
        raise ShapeError(f"attention expects B x T x d input, got {x.shape}")
    B, T, d = x.shape
    if d % n_heads:
        raise ShapeError(f"d_model {d} is not divisible by {n_heads} heads")
    dh = d // n_heads

    def heads(t: Tensor) -> Tensor:
        return ad.transpose(ad.reshape(t, (B, T, n_heads, dh)), (0, 2, 1, 3))

    q = heads(ad.linear(x, p["q.W"], p["q.b"]))
    k = heads(ad.linear(x, p["k.W"], p["k.b"]))
    v = heads(ad.linear(x, p["v.W"], p["v.b"]))
    scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    ctx = ad.matmul(ad.softmax(scores, axis=-1), v)
    merged = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (B, T, d))
    return ad.linear(merged, p["o.W"], p["o.b"])


def sinusoidal_encoding(n_pos: int, d: int) -> np.ndarray:
    pos = np.arange(n_pos)[:, None]
    i = np.arange(0, d, 2)[None, :]
    angle = pos / np.power(10000.0, i / d)
    pe = np.zeros((n_pos, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe


# ---------------------------------------------------------------------------
# transformer classifier


@dataclass
class TransformerConfig:
    n_layers: int = 4
    d_model: int = 128
    n_heads: int = 4
    ff_hidden: int = 128
    dropout: float = 0.25
    token_len: int = 16
    n_tokens: int = 16
    positional_encoding: bool = True
    grn_blocks: int = 0
    grn_placement: str = "intermediate"
    grn_dropout: float = 0.25

    def validate(self) -> None:
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} must be divisible by n_heads {self.n_heads}")
        if self.token_len * self.n_tokens != PULSE_LEN:
            raise ConfigError(f"token_len x n_tokens must equal {PULSE_LEN}")
        if min(self.n_layers, self.d_model, self.n_heads, self.ff_hidden) < 1 or self.d_model < 2:
            raise ConfigError("transformer sizes must be positive (d_model >= 2)")
        if self.grn_blocks < 0:
            raise ConfigError("grn_blocks must be non-negative")
        if self.grn_placement not in GRN_PLACEMENTS:
            raise ConfigError(f"grn_placement must be one of {GRN_PLACEMENTS}")
        for p in (self.dropout, self.grn_dropout):
            if not 0.0 <= p < 1.0:
                raise ConfigError(f"dropout must lie in [0, 1), got {p}")


def init_transformer(cfg: TransformerConfig, rng: np.random.Generator) -> Params:
    cfg.validate()
    d = cfg.d_model
    p: Params = {}
    _dense(p, "embed", d, cfg.token_len, rng)
    for i in range(cfg.grn_blocks if cfg.grn_placement != "ffn" else 0):
        p.update(init_grn(d, rng, prefix=f"grn{i}"))
    for layer in range(cfg.n_layers):
        pre = f"enc{layer}"
        _layer_norm_params(p, f"{pre}.ln1", d)
        p.update(init_attention(d, rng, prefix=f"{pre}.attn"))
        _layer_norm_params(p, f"{pre}.ln2", d)
        if cfg.grn_placement == "ffn" and cfg.grn_blocks > 0:
            p.update(init_grn(d, rng, prefix=f"{pre}.grn"))
        else:
            _dense(p, f"{pre}.ff1", cfg.ff_hidden, d, rng)
            _dense(p, f"{pre}.ff2", d, cfg.ff_hidden, rng)
    _layer_norm_params(p, "final_ln", d)
    _dense(p, "head", 1, d, rng)
    return p


def _grn_stack(x: Tensor, cfg: TransformerConfig, params: Params, training: bool, rng) -> Tensor:
    for i in range(cfg.grn_blocks):
        x = grn_forward(x, None, scope(params, f"grn{i}"), training, rng, cfg.grn_dropout)
    return x


def transformer_logits(
    pulses: Tensor,
    cfg: TransformerConfig,
    params: Params,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Pulses ``B x 256`` to one logit per pulse.

    Tokens of ``token_len`` consecutive samples are embedded, position-encoded,
    optionally passed through the GRN stack, then through pre-norm encoder
    layers, mean-pooled and projected to a logit.
    """
    if pulses.ndim != 2 or pulses.shape[1] != cfg.token_len * cfg.n_tokens:
        raise ShapeError(f"expected B x {cfg.token_len * cfg.n_tokens} pulses, got {pulses.shape}")
    B = pulses.shape[0]
    x = ad.linear(ad.reshape(pulses, (B, cfg.n_tokens, cfg.token_len)), params["embed.W"], params["embed.b"])
    if cfg.positional_encoding:
        x = ad.add(x, sinusoidal_encoding(cfg.n_tokens, cfg.d_model))
    if cfg.grn_placement == "intermediate":
        x = _grn_stack(x, cfg, params, training, rng)
    for layer in range(cfg.n_layers):
        p = scope(params, f"enc{layer}")
        h = ad.layer_norm(x, p["ln1.gain"], p["ln1.bias"], LN_EPS)
        h = multi_head_attention(h, scope(p, "attn"), cfg.n_heads)
        x = ad.add(x, ad.dropout(h, cfg.dropout, training, rng))
        if cfg.grn_placement == "ffn" and cfg.grn_blocks > 0:
            x = grn_forward(x, None, scope(p, "grn"), training, rng, cfg.grn_dropout)
            continue
        h = ad.layer_norm(x, p["ln2.gain"], p["ln2.bias"], LN_EPS)
        h = ad.relu(ad.linear(h, p["ff1.W"], p["ff1.b"]))
        h = ad.linear(ad.dropout(h, cfg.dropout, training, rng), p["ff2.W"], p["ff2.b"])
        x = ad.add(x, ad.dropout(h, cfg.dropout, training, rng))
    x = ad.layer_norm(x, params["final_ln.gain"], params["final_ln.bias"], LN_EPS)
    if cfg.grn_placement == "pre_pool":
        x = _grn_stack(x, cfg, params, training, rng)
    pooled = ad.mean(x, axis=1)
    return ad.reshape(ad.linear(pooled, params["head.W"], params["head.b"]), (B,))


def transformer_classify(pulses, cfg, params, training=False, rng=None) -> Tensor:
    return ad.sigmoid(transformer_logits(pulses, cfg, params, training, rng))


# ---------------------------------------------------------------------------
# MLP classifier


@dataclass
class MlpConfig:
    hidden: tuple = (500, 500, 500)
    dropout: float = 0.3
    grn_blocks: int = 0
    grn_width: int = 128
    grn_dropout: float = 0.25
    input_dim: int = PULSE_LEN

    def validate(self) -> None:
        if not self.hidden or min(self.hidden) < 1:
            raise ConfigError("MLP needs at least one hidden layer of positive width")
        if self.grn_blocks < 0 or self.grn_width < 2:
            raise ConfigError("grn_blocks must be >= 0 and grn_width >= 2")
        for p in (self.dropout, self.grn_dropout):
            if not 0.0 <= p < 1.0:
                raise ConfigError(f"dropout must lie in [0, 1), got {p}")


def init_mlp(cfg: MlpConfig, rng: np.random.Generator) -> Params:
    cfg.validate()
    p: Params = {}
    width = cfg.input_dim
    if cfg.grn_blocks:
        _dense(p, "adapter_in", cfg.grn_width, width, rng)
        for i in range(cfg.grn_blocks):
            p.update(init_grn(cfg.grn_width, rng, prefix=f"grn{i}"))
        width = cfg.grn_width
    for i, h in enumerate(cfg.hidden):
        _dense(p, f"fc{i}", h, width, rng)
        width = h
    _dense(p, "head", 1, width, rng)
    return p


def mlp_logits(pulses: Tensor, cfg: MlpConfig, params: Params, training=False, rng=None) -> Tensor:
    """256 -> hidden layers (ReLU, dropout) -> logit.

    With GRN blocks the input first goes through a 256 -> grn_width adapter and
    the GRN stack; the first hidden layer then reads from grn_width.
    """
    if pulses.ndim != 2 or pulses.shape[1] != cfg.input_dim:
        raise ShapeError(f"expected B x {cfg.input_dim} pulses, got {pulses.shape}")
    x = pulses
    if cfg.grn_blocks:
        x = ad.linear(x, params["adapter_in.W"], params["adapter_in.b"])
        for i in range(cfg.grn_blocks):
            x = grn_forward(x, None, scope(params, f"grn{i}"), training, rng, cfg.grn_dropout)
    for i in range(len(cfg.hidden)):
        x = ad.relu(ad.linear(x, params[f"fc{i}.W"], params[f"fc{i}.b"]))
        x = ad.dropout(x, cfg.dropout, training, rng)
    return ad.reshape(ad.linear(x, params["head.W"], params["head.b"]), (pulses.shape[0],))


def mlp_classify(pulses, cfg, params, training=False, rng=None) -> Tensor:
    return ad.sigmoid(mlp_logits(pulses, cfg, params, training, rng))


# ---------------------------------------------------------------------------
# model wrappers


class NeuralClassifier:
    """Binds a config, its parameters and the matching forward function."""

    def __init__(self, kind: str, cfg, params: Optional[Params] = None, seed: int = 0):
        if kind not in ("transformer", "grn-transformer", "mlp", "grn-mlp"):
            raise ConfigError(f"unsupported neural model {kind!r}")
        self.kind = kind
        self.cfg = cfg
        if kind.endswith("transformer"):
            self._logits, init = transformer_logits, init_transformer
        else:
            self._logits, init = mlp_logits, init_mlp
        self.params = params if params is not None else init(cfg, np.random.default_rng(seed))

    def parameters(self) -> list:
        return list(self.params.values())

    def logits(self, X, training: bool = False, rng=None) -> Tensor:
        return self._logits(X if isinstance(X, Tensor) else Tensor(X), self.cfg, self.params, training, rng)

    def predict_proba(self, X: np.ndarray, batch_size: int = 256) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = [ad._sigmoid(self.logits(X[i : i + batch_size]).data) for i in range(0, len(X), batch_size)]
        return np.concatenate(out) if out else np.zeros(0)


def build_classifier(
    kind: str,
    transformer: Optional[TransformerConfig] = None,
    mlp: Optional[MlpConfig] = None,
    knn: Optional["KnnConfig"] = None,
    seed: int = 0,
):
    """Instantiate any supported model kind with freshly initialized parameters.

    The ``grn-`` kinds use the configured GRN depth, or 2 blocks when it is 0.
    Configs are matched to models by type, so any of them may be passed positionally.
    """
    given = [c for c in (transformer, mlp, knn) if c is not None]
    transformer = next((c for c in given if isinstance(c, TransformerConfig)), None)
    mlp = next((c for c in given if isinstance(c, MlpConfig)), None)
    knn = next((c for c in given if isinstance(c, KnnConfig)), None)
    if len(given) != sum(c is not None for c in (transformer, mlp, knn)):
        raise ConfigError("build_classifier got a config of an unknown type or two of the same type")
    if kind in ("transformer", "grn-transformer"):
        cfg = transformer or TransformerConfig()
        blocks = 0 if kind == "transformer" else (cfg.grn_blocks or 2)
        return NeuralClassifier(kind, dataclasses.replace(cfg, grn_blocks=blocks), seed=seed)
    if kind in ("mlp", "grn-mlp"):
        cfg = mlp or MlpConfig()
        blocks = 0 if kind == "mlp" else (cfg.grn_blocks or 2)
        return NeuralClassifier(kind, dataclasses.replace(cfg, grn_blocks=blocks), seed=seed)
    if kind == "knn":
        return KnnClassifier(knn or KnnConfig())
    raise ConfigError(f"unsupported model {kind!r}; supported: {', '.join(MODEL_KINDS)}")


# ---------------------------------------------------------------------------
# KNN baseline


@dataclass
class KnnConfig:
    k: int = 5
    metric: str = "euclidean"

    def validate(self) -> None:
        if int(self.k) < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.metric != "euclidean":
            raise ConfigError("only the euclidean metric is supported")


def _knn_votes(X: np.ndarray, y: np.ndarray, Q: np.ndarray, k: int, chunk: int = 16) -> np.ndarray:
    """Fraction of artifact labels among the ``k`` nearest training rows of each query."""
    k = min(k, len(X))
    frac = np.empty(len(Q))
    for i in range(0, len(Q), chunk):
        diff = Q[i : i + chunk, None, :] - X[None, :, :]
        d = np.einsum("qnd,qnd->qn", diff, diff)
        nearest = np.argsort(d, axis=1, kind="stable")[:, :k]
        frac[i : i + chunk] = (y[nearest] == 1).mean(axis=1)
    return frac


def knn_classify(train: PulseDataset, query, cfg: Optional[KnnConfig] = None) -> tuple[int, float]:
    """Majority label among the k nearest pulses; a tied vote goes to artifact (1)."""
    cfg = cfg or KnnConfig()
    cfg.validate()
    if len(train) == 0:
        raise DataError("KNN needs a non-empty training set")
    q = np.asarray(query, dtype=np.float64).reshape(1, -1)
    frac = float(_knn_votes(train.X, train.y, q, int(cfg.k))[0])
    return int(frac >= 0.5), frac


class KnnClassifier:
    kind = "knn"

    def __init__(self, cfg: Optional[KnnConfig] = None):
        self.cfg = cfg or KnnConfig()
        self.cfg.validate()
        self.train: Optional[PulseDataset] = None
        self.params: Params = {}

    def fit(self, train: PulseDataset) -> "KnnClassifier":
        if len(train) == 0:
            raise DataError("KNN needs a non-empty training set")
        self.train = train
        return self

    def predict_proba(self, X: np.ndarray, batch_size: int = 16) -> np.ndarray:
        if self.train is None:
            raise DataError("KNN classifier has not been fitted")
        return _knn_votes(self.train.X, self.train.y, np.asarray(X, dtype=np.float64), int(self.cfg.k), batch_size)

    def parameters(self) -> list:
        return []
