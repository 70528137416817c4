"""Task datasets: TSV I/O, label scaling and masking, cyclic loaders, synthetic corpus."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .rng import stream

TASKS = ("sst", "para", "sts")
COLUMNS = {
    "sst": ("id", "sentence", "label"),
    "para": ("id", "sentence1", "sentence2", "is_duplicate"),
    "sts": ("id", "sentence1", "sentence2", "similarity"),
}
UNLABELED = "-"


@dataclass(frozen=True)
class Example:
    id: str
    task: str
    text_a: str
    text_b: str | None = None
    label: float | None = None

    @property
    def labeled(self) -> bool:
        return self.label is not None


def label_ok(task: str, y: float) -> bool:
    if task == "sst":
        return y == int(y) and 0 <= y <= 4
    if task == "para":
        return y in (0.0, 1.0)
    return 0.0 <= y <= 5.0


def load_tsv(path: str | Path, task: str) -> list[Example]:
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"data file not found: {path}")
    cols = COLUMNS[task]
    out: list[Example] = []
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        header = next(reader, None)
        if header is None:
            return out
        if tuple(header) != cols:
            raise DataError(f"{path}:1: expected header {cols}, got {tuple(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(cols):
                raise DataError(f"{path}:{lineno}: expected {len(cols)} columns, got {len(row)}")
            raw = row[-1].strip()
            label = None
            if raw != UNLABELED:
                try:
                    label = float(raw)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: bad label {raw!r}") from None
                if not label_ok(task, label):
                    raise DataError(f"{path}:{lineno}: label {raw} out of range for task {task}")
            text_b = row[2] if task != "sst" else None
            out.append(Example(row[0], task, row[1], text_b, label))
    return out


def _fmt_label(y: float | None) -> str:
    return UNLABELED if y is None else repr(float(y))


def write_tsv(examples: Sequence[Example], path: str | Path, task: str) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", quoting=csv.QUOTE_NONE, lineterminator="\n")
        w.writerow(COLUMNS[task])
        for ex in examples:
            if task == "sst":
                w.writerow([ex.id, ex.text_a, _fmt_label(ex.label)])
            else:
                w.writerow([ex.id, ex.text_a, ex.text_b, _fmt_label(ex.label)])


def scale_labels(examples: Sequence[Example], factor: float) -> list[Example]:
    """Multiply every label by ``factor`` (e.g. 0-2 sentiment labels by 2 to reach 0-4)."""
    if factor <= 0:
        raise ConfigError(f"scale factor must be positive, got {factor}")
    out = []
    for ex in examples:
        if ex.label is None:
            out.append(ex)
            continue
        y = ex.label * factor
        if not label_ok(ex.task, y):
            raise DataError(f"example {ex.id}: scaled label {y} out of range for task {ex.task}")
        out.append(replace(ex, label=y))
    return out


def mask_labels(examples: Sequence[Example], lam: float, seed: int) -> list[Example]:
    """Drop the labels of round-half-up(lam * N) examples chosen uniformly without replacement."""
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must lie in [0, 1], got {lam}")
    n = len(examples)
    k = int(math.floor(lam * n + 0.5))
    picked = set(stream(seed, "mask").choice(n, size=k, replace=False).tolist()) if k else set()
    return [replace(ex, label=None) if i in picked else ex for i, ex in enumerate(examples)]


class CyclicLoader:
    """Endless batches over one dataset, reshuffling at every wrap."""

    def __init__(self, examples: Sequence[Example], batch_size: int, rng: np.random.Generator):
        if not examples:
            raise DataError("cannot build a loader over an empty dataset")
        if batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        self.examples = list(examples)
        self.batch_size = batch_size
        self.rng = rng
        self.cycles = 0
        self._order = self.rng.permutation(len(self.examples))
        self.cursor = 0

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def remaining_in_cycle(self) -> int:
        return len(self.examples) - self.cursor

    def next_batch(self, size: int | None = None) -> list[Example]:
        want = self.batch_size if size is None else size
        out: list[Example] = []
        while len(out) < want:
            take = min(want - len(out), self.remaining_in_cycle)
            out.extend(self.examples[i] for i in self._order[self.cursor:self.cursor + take])
            self.cursor += take
            if self.cursor == len(self.examples):
                self.cycles += 1
                self.cursor = 0
                self._order = self.rng.permutation(len(self.examples))
        return out


def make_loaders(datasets: dict[str, Sequence[Example]], batch_size: int, seed: int) -> dict[str, CyclicLoader]:
    return {t: CyclicLoader(datasets[t], batch_size, stream(seed, "loader", t)) for t in datasets}


def next_multitask_batch(loaders: dict[str, CyclicLoader]) -> dict[str, list[Example]]:
    """One batch from every task's loader."""
    return {t: ld.next_batch() for t, ld in loaders.items()}


def steps_per_epoch(loaders: dict[str, CyclicLoader]) -> int:
    big = max(len(ld) for ld in loaders.values())
    bs = next(iter(loaders.values())).batch_size
    return math.ceil(big / bs)


def epoch_batches(loaders: dict[str, CyclicLoader]):
    """Yield multitask batches for one pass over the largest dataset.

    The largest dataset's final batch is trimmed so each of its examples is
    emitted exactly once; smaller datasets recycle.
    """
    driver = max(loaders, key=lambda t: len(loaders[t]))
    for _ in range(steps_per_epoch(loaders)):
        batch = {}
        for t, ld in loaders.items():
            if t == driver:
                batch[t] = ld.next_batch(min(ld.batch_size, ld.remaining_in_cycle))
            else:
                batch[t] = ld.next_batch()
        yield batch


# ---------------------------------------------------------------------------
# synthetic corpus

@dataclass
class Lexicon:
    positive: list[str]
    negative: list[str]
    neutral: list[str]

    @property
    def content(self) -> list[str]:
        return self.positive + self.negative + self.neutral


def make_lexicon(vocab_size: int) -> Lexicon:
    if vocab_size < 24:
        raise ConfigError(f"vocab_size must be >= 24, got {vocab_size}")
    n_sent = max(4, vocab_size // 6)
    pos = [f"pos{i}" for i in range(n_sent)]
    neg = [f"neg{i}" for i in range(n_sent)]
    neu = [f"w{i}" for i in range(vocab_size - 2 * n_sent)]
    return Lexicon(pos, neg, neu)


def jaccard(a: str, b: str) -> float:
    sa, sb = set(a.split()), set(b.split())
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)


def sentiment_label(text: str) -> int:
    words = text.split()
    score = sum(w.startswith("pos") for w in words) - sum(w.startswith("neg") for w in words)
    return int(np.clip(score, -2, 2)) + 2


def _pick(rng, pool: list[str], k: int) -> list[str]:
    return [pool[i] for i in rng.choice(len(pool), size=k, replace=False)]


def _sst_example(rng, lex: Lexicon, idx: int) -> Example:
    target = int(rng.integers(0, 5)) - 2
    extra = int(rng.integers(0, 2))
    n_pos = max(target, 0) + extra
    n_neg = max(-target, 0) + extra
    n_fill = int(rng.integers(2, 5))
    words = _pick(rng, lex.positive, n_pos) + _pick(rng, lex.negative, n_neg) + _pick(rng, lex.neutral, n_fill)
    rng.shuffle(words)
    text = " ".join(words)
    return Example(f"sst-{idx}", "sst", text, None, float(sentiment_label(text)))


def _para_example(rng, lex: Lexicon, idx: int) -> Example:
    pool = lex.content
    a = _pick(rng, pool, int(rng.integers(4, 7)))
    if rng.random() < 0.5:
        b = list(a)
        if rng.random() < 0.5:
            b[int(rng.integers(len(b)))] = pool[int(rng.integers(len(pool)))]
        rng.shuffle(b)
    else:
        b = _pick(rng, pool, int(rng.integers(4, 7)))
    ta, tb = " ".join(a), " ".join(b)
    return Example(f"para-{idx}", "para", ta, tb, 1.0 if jaccard(ta, tb) >= 0.5 else 0.0)


def _sts_example(rng, lex: Lexicon, idx: int) -> Example:
    pool = lex.content
    a = _pick(rng, pool, int(rng.integers(4, 7)))
    keep = int(rng.integers(0, len(a) + 1))
    fresh = [w for w in _pick(rng, pool, len(pool)) if w not in a][: len(a) - keep]
    b = _pick(rng, a, keep) + fresh
    rng.shuffle(b)
    ta, tb = " ".join(a), " ".join(b)
    return Example(f"sts-{idx}", "sts", ta, tb, round(5.0 * jaccard(ta, tb), 4))


_MAKERS = {"sst": _sst_example, "para": _para_example, "sts": _sts_example}


def synthetic_corpus(n_examples: int, seed: int, vocab_size: int = 60,
                     dev_fraction: float = 0.2) -> dict[str, dict[str, list[Example]]]:
    """Rule-labelled train/dev splits for all three tasks.

    Sentiment is the clipped signed count of positive/negative words, paraphrase
    is token-set Jaccard >= 0.5 and similarity is 5 x Jaccard.
    """
    if n_examples < 1:
        raise ConfigError("n_examples must be >= 1")
    lex = make_lexicon(vocab_size)
    n_dev = max(1, int(round(n_examples * dev_fraction)))
    out: dict[str, dict[str, list[Example]]] = {}
    for task in TASKS:
        rng = stream(seed, "synthetic", task)
        rows = [_MAKERS[task](rng, lex, i) for i in range(n_examples + n_dev)]
        out[task] = {"train": rows[:n_examples], "dev": rows[n_examples:]}
    return out


def write_corpus(corpus: dict[str, dict[str, list[Example]]], out_dir: str | Path) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for task, splits in corpus.items():
        for split, rows in splits.items():
            p = out_dir / f"{task}_{split}.tsv"
            write_tsv(rows, p, task)
            paths[f"{task}_{split}"] = p
    return paths


def load_corpus(data_dir: str | Path) -> dict[str, dict[str, list[Example]]]:
    data_dir = Path(data_dir)
    return {t: {s: load_tsv(data_dir / f"{t}_{s}.tsv", t) for s in ("train", "dev")} for t in TASKS}
