"""Conditional generator, (k+1)-class discriminator and the adversarial training loop.

The discriminator sits on top of the encoder's [CLS] embedding and classifies
into the k real classes plus a final "generated" class (index k). The
generator maps noise, optionally concatenated with a one-hot class label, to
fake embeddings in the encoder's hidden space.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import CyclicLoader, Example
from .encoder import EncoderConfig, Vocab, batch_pair, batch_single, encode, extract_cls, init_encoder_params, \
    init_linear, linear
from .errors import ConfigError, ContractError
from .rng import stream
from .surgery import AdamW, loss_gradients

log = logging.getLogger(__name__)

LOSS_FIELDS = ("L_D_S", "L_D_U", "L_G_FM", "L_G_U")


@dataclass
class GanConfig:
    k: int = 5
    noise_dim: int = 100
    hidden_depth: int = 1
    hidden_dim: int = 32
    lr: float = 5e-5
    conditional: bool = True
    epochs: int = 5
    batch_size: int = 16
    dropout_p: float = 0.1
    # weight of the class-conditional feature-matching term; 0 gives the plain four-term objective
    cfm_weight: float = 5.0
    freeze_encoder: bool = False

    def __post_init__(self):
        if self.k < 2:
            raise ConfigError(f"k must be >= 2, got {self.k}")
        if self.noise_dim < 1:
            raise ConfigError("noise_dim must be >= 1")
        if self.hidden_depth < 1:
            raise ConfigError("hidden_depth must be >= 1")
        if self.cfm_weight < 0:
            raise ConfigError("cfm_weight must be >= 0")


@dataclass
class DiscriminatorOutput:
    logits: Tensor
    feature: Tensor

    def probs(self) -> Tensor:
        return ad.softmax(self.logits, axis=-1)


@dataclass
class GanBatch:
    real_embeddings: Tensor
    labels: np.ndarray          # class id per row, -1 where unlabeled
    fake_labels: np.ndarray
    noise: np.ndarray

    @property
    def labeled_mask(self) -> np.ndarray:
        return self.labels >= 0


def init_generator_params(cfg: GanConfig, out_dim: int, rng: np.random.Generator) -> dict:
    p: dict[str, Tensor] = {}
    n_in = cfg.noise_dim + (cfg.k if cfg.conditional else 0)
    for i in range(cfg.hidden_depth):
        init_linear(p, f"gen.l{i}", n_in, cfg.hidden_dim, rng)
        n_in = cfg.hidden_dim
    init_linear(p, "gen.out", n_in, out_dim, rng)
    return p


def init_discriminator_params(cfg: GanConfig, in_dim: int, rng: np.random.Generator) -> dict:
    p: dict[str, Tensor] = {}
    n_in = in_dim
    for i in range(cfg.hidden_depth):
        init_linear(p, f"disc.l{i}", n_in, cfg.hidden_dim, rng)
        n_in = cfg.hidden_dim
    init_linear(p, "disc.out", n_in, cfg.k + 1, rng)
    return p


def one_hot(labels: np.ndarray, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ContractError(f"class labels must lie in [0, {k}), got range "
                            f"[{labels.min()}, {labels.max()}]")
    return np.eye(k)[labels]


def generator_forward(noise, class_labels, params: dict, cfg: GanConfig) -> Tensor:
    """Fake embeddings ``[B x H]``. Labels are ignored when ``cfg.conditional`` is off."""
    x = ad.as_tensor(noise)
    if cfg.conditional:
        x = ad.concat([x, Tensor(one_hot(class_labels, cfg.k))], axis=-1)
    for i in range(cfg.hidden_depth):
        x = ad.relu(linear(x, params, f"gen.l{i}"))
    return linear(x, params, "gen.out")


def discriminator_forward(embeddings: Tensor, params: dict, cfg: GanConfig, training: bool = False,
                          rng=None) -> DiscriminatorOutput:
    h = ad.as_tensor(embeddings)
    for i in range(cfg.hidden_depth):
        h = ad.dropout(ad.relu(linear(h, params, f"disc.l{i}")), cfg.dropout_p, training, rng)
    return DiscriminatorOutput(linear(h, params, "disc.out"), h)


def _mean_rows(x: Tensor) -> Tensor:
    return ad.scale(ad.sum(x), 1.0 / x.shape[0])


def discriminator_loss(real_out: DiscriminatorOutput, fake_out: DiscriminatorOutput | None,
                       labels: np.ndarray, labeled_mask: np.ndarray) -> tuple[Tensor, dict]:
    """Supervised plus unsupervised discriminator loss.

    Returns ``(L_D_S + L_D_U, info)`` where ``info`` holds the two float terms
    and a ``no_labeled`` flag. Empty means count as 0.
    """
    k = real_out.logits.shape[-1] - 1
    labels = np.asarray(labels)
    labeled_mask = np.asarray(labeled_mask, dtype=bool)
    p_real = real_out.probs()
    n_lab = int(labeled_mask.sum())
    if n_lab:
        sel = np.zeros(p_real.shape)
        rows = np.flatnonzero(labeled_mask)
        sel[rows, labels[rows].astype(np.int64)] = 1.0
        l_sup = ad.scale(ad.sum(ad.mul(ad.log(p_real), sel)), -1.0 / n_lab)
    else:
        l_sup = Tensor(0.0)
    fake_col = np.zeros(k + 1)
    fake_col[k] = 1.0
    p_real_fake = ad.sum(ad.mul(p_real, fake_col), axis=-1)
    l_uns = ad.scale(_mean_rows(ad.log(ad.sub(1.0, p_real_fake))), -1.0)
    if fake_out is not None and fake_out.logits.shape[0]:
        p_fake_fake = ad.sum(ad.mul(fake_out.probs(), fake_col), axis=-1)
        l_uns = ad.add(l_uns, ad.scale(_mean_rows(ad.log(p_fake_fake)), -1.0))
    info = {"L_D_S": l_sup.item(), "L_D_U": l_uns.item(), "no_labeled": n_lab == 0}
    return ad.add(l_sup, l_uns), info


def class_feature_matching(real_features: np.ndarray, labels: np.ndarray, labeled_mask: np.ndarray,
                           fake_features: Tensor, fake_labels: np.ndarray, k: int) -> Tensor:
    """Per-class feature matching for the conditional generator.

    For every class with at least one labeled real row and one fake row, the
    squared distance between the class's mean real feature (a constant) and
    mean fake feature; averaged over those classes. Zero when none qualify.
    """
    labels = np.asarray(labels)
    labeled_mask = np.asarray(labeled_mask, dtype=bool)
    fake_labels = np.asarray(fake_labels)
    terms = []
    for c in range(k):
        real_rows = labeled_mask & (labels == c)
        fake_rows = np.flatnonzero(fake_labels == c)
        if not real_rows.any() or fake_rows.size == 0:
            continue
        fake_mean = ad.scale(ad.sum(ad.getitem(fake_features, fake_rows), axis=0), 1.0 / fake_rows.size)
        terms.append(ad.sum(ad.square(ad.sub(fake_mean, real_features[real_rows].mean(axis=0)))))
    if not terms:
        return Tensor(0.0)
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.scale(total, 1.0 / len(terms))


def generator_loss(real_feature_mean, fake_out: DiscriminatorOutput) -> tuple[Tensor, dict]:
    """Feature matching plus unsupervised generator loss; ``real_feature_mean`` is a constant."""
    k = fake_out.logits.shape[-1] - 1
    target = np.asarray(real_feature_mean, dtype=np.float64)
    fake_mean = ad.scale(ad.sum(fake_out.feature, axis=0), 1.0 / fake_out.feature.shape[0])
    l_fm = ad.sum(ad.square(ad.sub(fake_mean, target)))
    fake_col = np.zeros(k + 1)
    fake_col[k] = 1.0
    p_fake = ad.sum(ad.mul(fake_out.probs(), fake_col), axis=-1)
    l_u = ad.scale(_mean_rows(ad.log(ad.sub(1.0, p_fake))), -1.0)
    return ad.add(l_fm, l_u), {"L_G_FM": l_fm.item(), "L_G_U": l_u.item()}


@dataclass
class GanModel:
    vocab: Vocab
    enc_cfg: EncoderConfig
    cfg: GanConfig
    task: str
    enc_params: dict
    disc_params: dict
    gen_params: dict
    opt_d: AdamW = field(default_factory=AdamW)
    opt_g: AdamW = field(default_factory=AdamW)
    steps: int = 0

    @classmethod
    def create(cls, vocab: Vocab, enc_cfg: EncoderConfig, cfg: GanConfig, seed: int,
               task: str = "sst", enc_params: dict | None = None) -> "GanModel":
        if task not in ("sst", "para"):
            raise ConfigError(f"GAN task must be sst or para, got {task!r}")
        H = enc_cfg.hidden_dim
        enc = enc_params if enc_params is not None else init_encoder_params(enc_cfg, stream(seed, "init", "encoder"))
        return cls(vocab, enc_cfg, cfg, task, enc,
                   init_discriminator_params(cfg, H, stream(seed, "init", "disc")),
                   init_generator_params(cfg, H, stream(seed, "init", "gen")),
                   AdamW(lr=cfg.lr), AdamW(lr=cfg.lr))

    @property
    def params(self) -> dict:
        return {**self.enc_params, **self.disc_params, **self.gen_params}

    def embed(self, examples: Sequence[Example], training: bool = False, rng=None) -> Tensor:
        if self.task == "sst":
            batch = batch_single([e.text_a for e in examples], self.vocab, self.enc_cfg.max_seq_len)
        else:
            batch = batch_pair([(e.text_a, e.text_b) for e in examples], self.vocab, self.enc_cfg.max_seq_len)
        return extract_cls(encode(batch, self.enc_cfg, self.enc_params, training, rng))

    def generate(self, n: int, rng: np.random.Generator, labels: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        if labels is None:
            labels = rng.integers(0, self.cfg.k, size=n)
        noise = rng.standard_normal((n, self.cfg.noise_dim))
        with ad.no_grad():
            fakes = generator_forward(noise, labels, self.gen_params, self.cfg)
        return fakes.data, np.asarray(labels)

    def predict(self, examples: Sequence[Example], chunk: int = 256) -> np.ndarray:
        out = []
        with ad.no_grad():
            for i in range(0, len(examples), chunk):
                emb = self.embed(examples[i:i + chunk])
                logits = discriminator_forward(emb, self.disc_params, self.cfg).logits.data
                out.append(np.argmax(logits[:, : self.cfg.k], axis=-1))
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def make_gan_batch(model: GanModel, examples: Sequence[Example], rng: np.random.Generator,
                   drop_rng=None) -> GanBatch:
    real = model.embed(examples, training=True, rng=drop_rng)
    labels = np.array([-1 if e.label is None else int(e.label) for e in examples])
    n = len(examples)
    return GanBatch(real, labels, rng.integers(0, model.cfg.k, size=n),
                    rng.standard_normal((n, model.cfg.noise_dim)))


def gan_train_step(model: GanModel, batch: GanBatch, drop_rng=None) -> dict:
    """Discriminator update (through the encoder unless frozen), then generator update."""
    cfg = model.cfg
    step = model.steps
    # discriminator step: generator output enters as a constant
    with ad.no_grad():
        fakes_const = generator_forward(batch.noise, batch.fake_labels, model.gen_params, cfg).data
    real_out = discriminator_forward(batch.real_embeddings, model.disc_params, cfg, True, drop_rng)
    fake_out = discriminator_forward(Tensor(fakes_const), model.disc_params, cfg, True, drop_rng)
    labels = np.where(batch.labeled_mask, batch.labels, 0)
    l_d, d_info = discriminator_loss(real_out, fake_out, labels, batch.labeled_mask)
    if not np.isfinite(l_d.item()):
        raise FloatingPointError(f"non-finite discriminator loss at step {step}")
    d_params = dict(model.disc_params) if cfg.freeze_encoder else {**model.enc_params, **model.disc_params}
    model.opt_d.step(d_params, loss_gradients(l_d, d_params))

    # generator step against a frozen copy of the updated discriminator
    frozen = {n: Tensor(p.data) for n, p in model.disc_params.items()}
    with ad.no_grad():
        real_feat = discriminator_forward(Tensor(batch.real_embeddings.data), frozen, cfg).feature.data
    fakes = generator_forward(batch.noise, batch.fake_labels, model.gen_params, cfg)
    fake_out_g = discriminator_forward(fakes, frozen, cfg, True, drop_rng)
    l_g, g_info = generator_loss(real_feat.mean(axis=0), fake_out_g)
    if cfg.conditional and cfg.cfm_weight > 0:
        l_cfm = class_feature_matching(real_feat, batch.labels, batch.labeled_mask, fake_out_g.feature,
                                       batch.fake_labels, cfg.k)
        l_g = ad.add(l_g, ad.scale(l_cfm, cfg.cfm_weight))
        g_info["L_G_CFM"] = l_cfm.item()
    if not np.isfinite(l_g.item()):
        raise FloatingPointError(f"non-finite generator loss at step {step}")
    model.opt_g.step(model.gen_params, loss_gradients(l_g, model.gen_params))
    model.steps += 1
    record = {"step": step, "L_D_S": d_info["L_D_S"], "L_D_U": d_info["L_D_U"],
              "L_G_FM": g_info["L_G_FM"], "L_G_U": g_info["L_G_U"]}
    if "L_G_CFM" in g_info:
        record["L_G_CFM"] = g_info["L_G_CFM"]
    return record


def train_gan(model: GanModel, train: Sequence[Example], dev: Sequence[Example], seed: int,
              epochs: int | None = None, on_epoch=None) -> tuple[list[float], list[dict]]:
    """Adversarial training; returns per-epoch dev accuracies and per-step loss records."""
    from .analysis import accuracy

    epochs = model.cfg.epochs if epochs is None else epochs
    loader = CyclicLoader(train, model.cfg.batch_size, stream(seed, "gan", "loader"))
    noise_rng = stream(seed, "gan", "noise")
    drop_rng = stream(seed, "gan", "dropout")
    steps = -(-len(train) // model.cfg.batch_size)
    dev_lab = [e for e in dev if e.labeled]
    gold = np.array([int(e.label) for e in dev_lab])
    dev_acc: list[float] = []
    records: list[dict] = []
    for epoch in range(1, epochs + 1):
        for _ in range(steps):
            rows = loader.next_batch(min(loader.batch_size, loader.remaining_in_cycle))
            batch = make_gan_batch(model, rows, noise_rng, drop_rng)
            records.append(gan_train_step(model, batch, drop_rng))
        acc = accuracy(model.predict(dev_lab), gold) if dev_lab else float("nan")
        dev_acc.append(acc)
        log.info("gan epoch %d dev accuracy %.4f", epoch, acc)
        if on_epoch is not None:
            on_epoch(epoch, acc)
    return dev_acc, records
