"""Multitask model assembly, one training step and per-epoch evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import heads as hd
from .analysis import accuracy, pearson
from .data import Example, epoch_batches, make_loaders
from .encoder import EncoderConfig, TokenBatch, Vocab, batch_pair, batch_single, encode, extract_cls, \
    init_encoder_params
from .errors import ConfigError
from .heads import HeadConfig, LossBundle, TripletFeatures
from .rng import stream
from .surgery import MODES, AdamW, PairedLosses, paired_step

log = logging.getLogger(__name__)

TRAIN_MODES = ("baseline", "naive-sum", "pcgrad", "pcgrad-paired")


@dataclass
class MultitaskModel:
    vocab: Vocab
    enc_cfg: EncoderConfig
    head_cfg: HeadConfig
    params: dict

    @classmethod
    def create(cls, vocab: Vocab, enc_cfg: EncoderConfig, head_cfg: HeadConfig, seed: int) -> "MultitaskModel":
        params = init_encoder_params(enc_cfg, stream(seed, "init", "encoder"))
        params.update(hd.init_head_params(head_cfg, stream(seed, "init", "heads")))
        return cls(vocab, enc_cfg, head_cfg, params)

    def _cls(self, batch: TokenBatch, training: bool, rng) -> ad.Tensor:
        return extract_cls(encode(batch, self.enc_cfg, self.params, training, rng))

    def _triplet(self, pairs: Sequence[tuple[str, str]], training: bool, rng) -> TripletFeatures:
        n = len(pairs)
        both = batch_single([a for a, _ in pairs] + [b for _, b in pairs], self.vocab, self.enc_cfg.max_seq_len)
        cls = self._cls(both, training, rng)
        return TripletFeatures.of(ad.getitem(cls, slice(0, n)), ad.getitem(cls, slice(n, 2 * n)))

    def sentiment(self, texts: Sequence[str], training: bool = False, rng=None) -> ad.Tensor:
        batch = batch_single(texts, self.vocab, self.enc_cfg.max_seq_len)
        return hd.sentiment_head(self._cls(batch, training, rng), self.params, self.head_cfg, training, rng)

    def paraphrase(self, pairs: Sequence[tuple[str, str]], training: bool = False, rng=None) -> ad.Tensor:
        return hd.paraphrase_head(self._triplet(pairs, training, rng), self.params, self.head_cfg, training, rng)

    def similarity(self, pairs: Sequence[tuple[str, str]], training: bool = False, rng=None) -> ad.Tensor:
        if self.head_cfg.sts_mode == "sep_fused":
            batch = batch_pair(pairs, self.vocab, self.enc_cfg.max_seq_len)
            inp = self._cls(batch, training, rng)
        else:
            inp = self._triplet(pairs, training, rng)
        return hd.sts_head(inp, self.params, self.head_cfg, training, rng)

    def losses(self, batch: dict[str, list[Example]], training: bool = True, rng=None) -> LossBundle:
        sst, para, sts = batch["sst"], batch["para"], batch["sts"]
        return hd.task_losses(
            self.sentiment([e.text_a for e in sst], training, rng), [e.label for e in sst],
            self.paraphrase([(e.text_a, e.text_b) for e in para], training, rng), [e.label for e in para],
            self.similarity([(e.text_a, e.text_b) for e in sts], training, rng), [e.label for e in sts],
        )

    def predict(self, task: str, examples: Sequence[Example], chunk: int = 256) -> np.ndarray:
        outs = []
        with ad.no_grad():
            for i in range(0, len(examples), chunk):
                part = examples[i:i + chunk]
                if task == "sst":
                    outs.append(np.argmax(self.sentiment([e.text_a for e in part]).data, axis=-1))
                elif task == "para":
                    outs.append((self.paraphrase([(e.text_a, e.text_b) for e in part]).data >= 0.5).astype(float))
                else:
                    outs.append(hd.clip_sts(self.similarity([(e.text_a, e.text_b) for e in part]).data))
        return np.concatenate(outs) if outs else np.zeros(0)

    def evaluate(self, task: str, examples: Sequence[Example]) -> tuple[str, float | None]:
        """Dev/train metric; Pearson is ``None`` when predictions or labels are constant."""
        labeled = [e for e in examples if e.labeled]
        preds = self.predict(task, labeled)
        gold = np.array([e.label for e in labeled])
        if task == "sts":
            if np.ptp(preds) == 0.0 or np.ptp(gold) == 0.0:
                log.warning("sts pearson undefined on %d rows: constant predictions or labels", len(gold))
                return "pearson", None
            return "pearson", pearson(preds, gold)
        return "accuracy", accuracy(preds, gold)


@dataclass
class TrainSettings:
    mode: str = "pcgrad-paired"
    epochs: int = 10
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 1e-3
    halve_paraphrase: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.mode not in TRAIN_MODES:
            raise ConfigError(f"mode must be one of {TRAIN_MODES}, got {self.mode!r}")


def step_mode(mode: str) -> str:
    """Map a training mode to the gradient-combination mode."""
    return "naive-sum" if mode == "baseline" else mode


def train_multitask(model: MultitaskModel, corpus: dict, settings: TrainSettings,
                    on_epoch: Callable[[int, list[dict]], bool | None] | None = None) -> list[dict]:
    """Train for ``settings.epochs`` passes over the largest task dataset.

    After each epoch ``on_epoch(epoch, records)`` receives the epoch's metric
    records; returning ``True`` stops training early.
    """
    assert step_mode(settings.mode) in MODES
    train = {t: corpus[t]["train"] for t in ("sst", "para", "sts")}
    loaders = make_loaders(train, settings.batch_size, settings.seed)
    opt = AdamW(lr=settings.lr, weight_decay=settings.weight_decay)
    drop_rng = stream(settings.seed, "dropout")
    surgery_rng = stream(settings.seed, "pcgrad")
    history: list[dict] = []
    for epoch in range(1, settings.epochs + 1):
        totals = np.zeros(3)
        n = 0
        for batch in epoch_batches(loaders):
            bundle = model.losses(batch, training=True, rng=drop_rng)
            vals = [bundle.L_SST.item(), bundle.L_P.item(), bundle.L_STS.item()]
            if not np.all(np.isfinite(vals)):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}: {vals}")
            paired_step(model.params, PairedLosses.from_bundle(bundle), opt, surgery_rng,
                        step_mode(settings.mode), settings.halve_paraphrase)
            totals += vals
            n += 1
        records = []
        for task in ("sst", "para", "sts"):
            for split in ("train", "dev"):
                metric, value = model.evaluate(task, corpus[task][split])
                records.append({"epoch": epoch, "task": task, "split": split, "metric": metric,
                                "value": None if value is None else float(value)})
        log.info("epoch %d mean losses %s", epoch, np.round(totals / max(n, 1), 4).tolist())
        history.extend(records)
        if on_epoch is not None and on_epoch(epoch, records):
            break
    return history
