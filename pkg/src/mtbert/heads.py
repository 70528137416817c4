"""Prediction heads for sentiment, paraphrase and similarity, plus task losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import init_layer_norm, init_linear, linear, norm
from .errors import ConfigError, ContractError, DataError

N_SENTIMENT = 5
STS_MAX = 5.0
STS_MODES = ("sep_fused", "triplet")


@dataclass
class HeadConfig:
    hidden_dim: int = 32
    shared_dim: int = 32
    dense_dim: int = 32
    dropout_p: float = 0.1
    sts_mode: str = "sep_fused"
    baseline_mode: bool = False

    def __post_init__(self):
        if min(self.hidden_dim, self.shared_dim, self.dense_dim) < 1:
            raise ConfigError("head dimensions must be >= 1")
        if self.sts_mode not in STS_MODES:
            raise ConfigError(f"sts_mode must be one of {STS_MODES}, got {self.sts_mode!r}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")


@dataclass
class TripletFeatures:
    U: Tensor
    V: Tensor
    absdiff: Tensor

    @classmethod
    def of(cls, U: Tensor, V: Tensor) -> "TripletFeatures":
        return cls(U, V, ad.absdiff(U, V))

    def stacked(self) -> Tensor:
        return ad.concat([self.U, self.V, self.absdiff], axis=-1)


@dataclass
class LossBundle:
    L_SST: Tensor
    L_P: Tensor
    L_STS: Tensor

    def values(self) -> dict[str, float]:
        return {"L_SST": self.L_SST.item(), "L_P": self.L_P.item(), "L_STS": self.L_STS.item()}


SHARED_PREFIXES = ("encoder.", "shared.")


def is_shared(name: str) -> bool:
    """Parameters that more than one task's loss touches."""
    return name.startswith(SHARED_PREFIXES)


def _init_dense_block(p: dict, name: str, n_in: int, n_out: int, rng) -> None:
    init_linear(p, f"{name}.l1", n_in, n_out, rng)
    init_linear(p, f"{name}.l2", n_out, n_out, rng)


def init_head_params(cfg: HeadConfig, rng: np.random.Generator) -> dict:
    H, S, D = cfg.hidden_dim, cfg.shared_dim, cfg.dense_dim
    p: dict[str, Tensor] = {}
    if cfg.baseline_mode:
        init_linear(p, "sst.out", H, N_SENTIMENT, rng)
        init_linear(p, "para.out", 3 * H, 1, rng)
        init_linear(p, "sts.out", H if cfg.sts_mode == "sep_fused" else 3 * H, 1, rng)
        return p
    init_linear(p, "shared.l1", H, S, rng)
    init_layer_norm(p, "shared.ln", S)
    init_linear(p, "shared.l2", S, S, rng)
    _init_dense_block(p, "sst.dense", H, D, rng)
    init_linear(p, "sst.out", S + D, N_SENTIMENT, rng)
    _init_dense_block(p, "para.dense", 3 * H, D, rng)
    init_linear(p, "para.out", D, 1, rng)
    if cfg.sts_mode == "sep_fused":
        init_linear(p, "sts.out", S, 1, rng)
    else:
        _init_dense_block(p, "sts.dense", 3 * H, D, rng)
        init_linear(p, "sts.out", D, 1, rng)
    return p


def dense_block(x: Tensor, params: dict, name: str, cfg: HeadConfig, training: bool, rng) -> Tensor:
    h = ad.relu(linear(x, params, f"{name}.l1"))
    h = ad.dropout(h, cfg.dropout_p, training, rng)
    return ad.relu(linear(h, params, f"{name}.l2"))


def shared_block(cls: Tensor, params: dict, cfg: HeadConfig, training: bool = False, rng=None) -> Tensor:
    h = ad.relu(linear(cls, params, "shared.l1"))
    h = norm(h, params, "shared.ln", 1e-5)
    h = ad.dropout(h, cfg.dropout_p, training, rng)
    return ad.relu(linear(h, params, "shared.l2"))


def sentiment_head(cls: Tensor, params: dict, cfg: HeadConfig, training: bool = False, rng=None) -> Tensor:
    """Logits ``[B x 5]``; softmax is applied only by the loss or at prediction."""
    if cfg.baseline_mode:
        return linear(cls, params, "sst.out")
    both = ad.concat([shared_block(cls, params, cfg, training, rng),
                      dense_block(cls, params, "sst.dense", cfg, training, rng)], axis=-1)
    return linear(both, params, "sst.out")


def paraphrase_head(t: TripletFeatures, params: dict, cfg: HeadConfig, training: bool = False,
                    rng=None) -> Tensor:
    """Paraphrase probability ``[B]`` in (0, 1).

    Not symmetric in (U, V): only the |U - V| slot is.
    """
    x = t.stacked()
    if not cfg.baseline_mode:
        x = dense_block(x, params, "para.dense", cfg, training, rng)
    logit = linear(x, params, "para.out")
    return ad.sigmoid(ad.reshape(logit, (logit.shape[0],)))


def sts_head(inp, params: dict, cfg: HeadConfig, training: bool = False, rng=None) -> Tensor:
    """Unbounded similarity score ``[B]``.

    ``sep_fused`` takes the [CLS] of a joined pair and reuses the shared block;
    ``triplet`` takes :class:`TripletFeatures` through its own trunk.
    """
    if cfg.sts_mode == "sep_fused":
        if isinstance(inp, TripletFeatures):
            raise ContractError("sts_head in sep_fused mode expects a [CLS] tensor, got TripletFeatures")
        x = inp if cfg.baseline_mode else shared_block(inp, params, cfg, training, rng)
    else:
        if not isinstance(inp, TripletFeatures):
            raise ContractError("sts_head in triplet mode expects TripletFeatures")
        x = inp.stacked()
        if not cfg.baseline_mode:
            x = dense_block(x, params, "sts.dense", cfg, training, rng)
    score = linear(x, params, "sts.out")
    return ad.reshape(score, (score.shape[0],))


def clip_sts(scores: np.ndarray) -> np.ndarray:
    return np.clip(scores, 0.0, STS_MAX)


def _check_labels(name: str, labels: np.ndarray, ok: np.ndarray) -> None:
    bad = np.flatnonzero(~ok)
    if len(bad):
        i = bad[0]
        raise DataError(f"{name} label {labels[i]!r} out of range at row {i}")


def sentiment_loss(logits: Tensor, labels) -> Tensor:
    labels = np.asarray(labels, dtype=np.float64)
    _check_labels("sentiment", labels,
                  (labels == np.round(labels)) & (labels >= 0) & (labels < logits.shape[-1]))
    onehot = np.eye(logits.shape[-1])[labels.astype(np.int64)]
    logp = ad.log(ad.softmax(logits, axis=-1))
    return ad.scale(ad.sum(ad.mul(logp, onehot)), -1.0 / len(labels))


def paraphrase_loss(probs: Tensor, labels) -> Tensor:
    y = np.asarray(labels, dtype=np.float64)
    _check_labels("paraphrase", y, (y == 0) | (y == 1))
    ll = ad.add(ad.mul(ad.log(probs), y), ad.mul(ad.log(ad.sub(1.0, probs)), 1.0 - y))
    return ad.scale(ad.sum(ll), -1.0 / len(y))


def sts_loss(scores: Tensor, labels) -> Tensor:
    y = np.asarray(labels, dtype=np.float64)
    _check_labels("sts", y, (y >= 0) & (y <= STS_MAX))
    return ad.mean(ad.square(ad.sub(scores, y)))


def task_losses(logits: Tensor, sst_labels, para_probs: Tensor, para_labels,
                sts_scores: Tensor, sts_labels) -> LossBundle:
    return LossBundle(sentiment_loss(logits, sst_labels),
                      paraphrase_loss(para_probs, para_labels),
                      sts_loss(sts_scores, sts_labels))
