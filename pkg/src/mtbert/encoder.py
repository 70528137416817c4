"""Whitespace tokenizer and a small BERT-style encoder.

The encoder is functional: parameters live in a flat ``dict[str, Tensor]``
keyed by dotted names (``encoder.layer0.attn.wq``) and :func:`encode` is a
pure function of (batch, config, params, training flag, rng stream).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError

PAD, CLS, SEP, UNK = 0, 1, 2, 3
RESERVED = ("[PAD]", "[CLS]", "[SEP]", "[UNK]")


def split_words(text: str) -> list[str]:
    return text.lower().split()


class Vocab:
    """Injective token -> id map; ids 0..3 are reserved for the special tokens."""

    def __init__(self, tokens: Iterable[str] = ()):
        self._ids: dict[str, int] = {t: i for i, t in enumerate(RESERVED)}
        self._tokens: list[str] = list(RESERVED)
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self._ids:
            self._ids[token] = len(self._tokens)
            self._tokens.append(token)
        return self._ids[token]

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id(self, token: str) -> int:
        return self._ids.get(token, UNK)

    def token(self, idx: int) -> str:
        return self._tokens[idx]

    def ids(self, words: Sequence[str]) -> list[int]:
        return [self._ids.get(w, UNK) for w in words]

    @classmethod
    def build(cls, texts: Iterable[str], min_count: int = 1) -> "Vocab":
        counts: dict[str, int] = {}
        for text in texts:
            for w in split_words(text):
                counts[w] = counts.get(w, 0) + 1
        return cls(sorted(w for w, c in counts.items() if c >= min_count and w not in RESERVED))

    def save(self, path: str | Path) -> None:
        # one token per line; line n is id n + 4
        Path(path).write_text("".join(t + "\n" for t in self._tokens[len(RESERVED):]),
                              encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(line for line in lines if line)


def tokenize_single(text: str, vocab: Vocab, max_len: int) -> list[int]:
    if max_len < 3:
        raise ConfigError(f"max_len must be >= 3, got {max_len}")
    words = vocab.ids(split_words(text))[: max_len - 2]
    return [CLS, *words, SEP]


def tokenize_pair(a: str, b: str, vocab: Vocab, max_len: int) -> tuple[list[int], list[int]]:
    """``[CLS] a [SEP] b [SEP]`` with segment ids, truncating longest-first.

    Ties remove from ``b``, so an even overflow on equal-length sides leaves
    both sides the same length.
    """
    if max_len < 5:
        raise ConfigError(f"max_len must be >= 5 for pairs, got {max_len}")
    ia = vocab.ids(split_words(a))
    ib = vocab.ids(split_words(b))
    budget = max_len - 3
    while len(ia) + len(ib) > budget:
        if len(ia) > len(ib):
            ia.pop()
        else:
            ib.pop()
    ids = [CLS, *ia, SEP, *ib, SEP]
    segments = [0] * (len(ia) + 2) + [1] * (len(ib) + 1)
    return ids, segments


@dataclass
class TokenBatch:
    ids: np.ndarray
    mask: np.ndarray
    segments: np.ndarray
    labels: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.ids.shape[0]


def collate(seqs: Sequence[Sequence[int]], segments: Sequence[Sequence[int]] | None = None,
            labels=None, pad_to: int | None = None) -> TokenBatch:
    width = max([len(s) for s in seqs], default=0)
    if pad_to is not None:
        width = max(width, pad_to)
    ids = np.full((len(seqs), width), PAD, dtype=np.int64)
    segs = np.zeros((len(seqs), width), dtype=np.int64)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        if segments is not None:
            segs[i, : len(s)] = segments[i]
    mask = (ids != PAD).astype(np.float64)
    lab = None if labels is None else np.asarray(labels, dtype=np.float64)
    return TokenBatch(ids, mask, segs, lab)


def batch_single(texts: Sequence[str], vocab: Vocab, max_len: int, labels=None) -> TokenBatch:
    return collate([tokenize_single(t, vocab, max_len) for t in texts], labels=labels)


def batch_pair(pairs: Sequence[tuple[str, str]], vocab: Vocab, max_len: int, labels=None) -> TokenBatch:
    toks = [tokenize_pair(a, b, vocab, max_len) for a, b in pairs]
    return collate([t[0] for t in toks], [t[1] for t in toks], labels=labels)


@dataclass
class EncoderConfig:
    vocab_size: int = 128
    hidden_dim: int = 32
    layers: int = 2
    heads: int = 4
    max_seq_len: int = 32
    ff_dim: int = 64
    dropout_p: float = 0.1
    ln_eps: float = 1e-12

    def __post_init__(self):
        if self.hidden_dim % self.heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}")
        if self.max_seq_len < 3:
            raise ConfigError("max_seq_len must be >= 3")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")


def _normal(rng: np.random.Generator, *shape) -> Tensor:
    return Tensor(rng.normal(0.0, 0.02, size=shape), requires_grad=True)


def _zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(*shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


def init_linear(params: dict, name: str, n_in: int, n_out: int, rng: np.random.Generator) -> None:
    params[f"{name}.w"] = _normal(rng, n_in, n_out)
    params[f"{name}.b"] = _zeros(n_out)


def init_layer_norm(params: dict, name: str, dim: int) -> None:
    params[f"{name}.gamma"] = _ones(dim)
    params[f"{name}.beta"] = _zeros(dim)


def linear(x: Tensor, params: dict, name: str) -> Tensor:
    return ad.add(ad.matmul(x, params[f"{name}.w"]), params[f"{name}.b"])


def norm(x: Tensor, params: dict, name: str, eps: float = 1e-12) -> Tensor:
    return ad.layer_norm(x, params[f"{name}.gamma"], params[f"{name}.beta"], eps)


def init_encoder_params(cfg: EncoderConfig, rng: np.random.Generator, prefix: str = "encoder") -> dict:
    H, F = cfg.hidden_dim, cfg.ff_dim
    p: dict[str, Tensor] = {
        f"{prefix}.tok_emb": _normal(rng, cfg.vocab_size, H),
        f"{prefix}.seg_emb": _normal(rng, 2, H),
        f"{prefix}.pos_emb": _normal(rng, cfg.max_seq_len, H),
    }
    for i in range(cfg.layers):
        lp = f"{prefix}.layer{i}"
        for proj in ("wq", "wv", "wo"):
            init_linear(p, f"{lp}.attn.{proj}", H, H, rng)
        # no key bias: it shifts each score row uniformly and softmax cancels it
        p[f"{lp}.attn.wk.w"] = _normal(rng, H, H)
        init_layer_norm(p, f"{lp}.ln1", H)
        init_linear(p, f"{lp}.ff1", H, F, rng)
        init_linear(p, f"{lp}.ff2", F, H, rng)
        init_layer_norm(p, f"{lp}.ln2", H)
    return p


def _self_attention(x: Tensor, bias: np.ndarray, params: dict, name: str, heads: int,
                    attn_out: list | None) -> Tensor:
    B, T, H = x.shape
    dh = H // heads

    def split(t):
        return ad.transpose(ad.reshape(t, (B, T, heads, dh)), (0, 2, 1, 3))

    q = split(linear(x, params, f"{name}.wq"))
    k = ad.transpose(ad.reshape(ad.matmul(x, params[f"{name}.wk.w"]), (B, T, heads, dh)), (0, 2, 3, 1))
    v = split(linear(x, params, f"{name}.wv"))
    scores = ad.add(ad.scale(ad.matmul(q, k), 1.0 / np.sqrt(dh)), bias)
    probs = ad.softmax(scores, axis=-1)
    if attn_out is not None:
        attn_out.append(probs.data)
    ctx = ad.reshape(ad.transpose(ad.matmul(probs, v), (0, 2, 1, 3)), (B, T, H))
    return linear(ctx, params, f"{name}.wo")


def encode(batch: TokenBatch, cfg: EncoderConfig, params: dict, training: bool = False,
           rng: np.random.Generator | None = None, prefix: str = "encoder",
           attn_out: list | None = None) -> Tensor:
    """Hidden states ``[B x T x H]`` for a padded token batch.

    Pass a list as ``attn_out`` to collect each layer's attention
    probabilities ``[B x heads x T x T]``.
    """
    ids = batch.ids
    B, T = ids.shape
    if T > cfg.max_seq_len:
        raise DataError(f"sequence length {T} exceeds max_seq_len {cfg.max_seq_len}")
    bad = np.argwhere((ids < 0) | (ids >= cfg.vocab_size))
    if len(bad):
        row, col = bad[0]
        raise DataError(f"token id {ids[row, col]} out of range [0, {cfg.vocab_size}) in row {row}")
    p = params
    x = ad.add(ad.add(ad.embedding(p[f"{prefix}.tok_emb"], ids),
                      ad.embedding(p[f"{prefix}.seg_emb"], batch.segments)),
               ad.embedding(p[f"{prefix}.pos_emb"], np.arange(T)))
    x = ad.dropout(x, cfg.dropout_p, training, rng)
    # additive key mask: exp underflows to exactly 0 on padded keys
    bias = ((1.0 - batch.mask) * -1e9)[:, None, None, :]
    for i in range(cfg.layers):
        lp = f"{prefix}.layer{i}"
        a = _self_attention(x, bias, p, f"{lp}.attn", cfg.heads, attn_out)
        x = norm(ad.add(x, ad.dropout(a, cfg.dropout_p, training, rng)), p, f"{lp}.ln1", cfg.ln_eps)
        f = linear(ad.gelu(linear(x, p, f"{lp}.ff1")), p, f"{lp}.ff2")
        x = norm(ad.add(x, ad.dropout(f, cfg.dropout_p, training, rng)), p, f"{lp}.ln2", cfg.ln_eps)
    return x


def extract_cls(hidden: Tensor) -> Tensor:
    if hidden.ndim != 3:
        raise DataError(f"extract_cls expects [B x T x H], got {hidden.shape}")
    if hidden.shape[0] == 0:
        return Tensor(np.zeros((0, hidden.shape[2])))
    return ad.getitem(hidden, (slice(None), 0, slice(None)))
