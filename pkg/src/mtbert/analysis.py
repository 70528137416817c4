"""Metrics, the one-tailed t-test, exact t-SNE and the masking sensitivity sweep."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, DataError
from .rng import stream


def accuracy(preds, labels) -> float:
    preds, labels = np.asarray(preds), np.asarray(labels)
    if preds.size == 0:
        raise DataError("accuracy of an empty prediction set is undefined")
    if preds.shape != labels.shape:
        raise DataError(f"accuracy: {preds.shape} predictions vs {labels.shape} labels")
    return float(np.mean(preds == labels))


def pearson(x, y) -> float:
    """Sample Pearson correlation; raises on constant input."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise DataError(f"pearson needs two equal-length 1-D samples of size >= 2, got {x.shape}, {y.shape}")
    xc, yc = x - x.mean(), y - y.mean()
    sxx, syy = np.dot(xc, xc), np.dot(yc, yc)
    if sxx == 0.0 or syy == 0.0:
        raise DataError("pearson correlation is undefined for constant input")
    r = np.dot(xc, yc) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def one_tailed_t_test(sample_a, sample_b, pooled: bool = False) -> float:
    """p-value for H1: mean(a) > mean(b).

    Welch's unequal-variance test by default; ``pooled=True`` gives the
    Student variant. Zero standard error yields 0.5 for equal means and 0 or 1
    by the sign of the difference otherwise.
    """
    from scipy.stats import t as student_t

    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or a.size < 2 or b.size < 2:
        raise DataError(f"t-test needs two 1-D samples of size >= 2, got {a.shape}, {b.shape}")
    na, nb = a.size, b.size
    diff = a.mean() - b.mean()
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if pooled:
        sp2 = ((na - 1) * va + (nb - 1) * vb) / (na + nb - 2)
        se2 = sp2 * (1.0 / na + 1.0 / nb)
        df = na + nb - 2
    else:
        qa, qb = va / na, vb / nb
        se2 = qa + qb
        # shares rather than raw variances so tiny samples do not underflow
        ra, rb = (qa / se2, qb / se2) if se2 > 0 else (0.5, 0.5)
        df = 1.0 / (ra * ra / (na - 1) + rb * rb / (nb - 1))
    if diff == 0.0:
        return 0.5
    if se2 == 0.0:
        return 0.0 if diff > 0 else 1.0
    return float(student_t.sf(diff / np.sqrt(se2), df))


def pvalue_matrix(samples: Sequence[Sequence[float]], pooled: bool = False) -> np.ndarray:
    """Lower-triangular matrix; entry ``[i + j, i]`` tests a drop from sample i to sample i + j.

    The diagonal is 0.5 and the upper triangle is NaN.
    """
    m = len(samples)
    out = np.full((m, m), np.nan)
    for i in range(m):
        out[i, i] = 0.5
        for r in range(i + 1, m):
            out[r, i] = one_tailed_t_test(samples[i], samples[r], pooled)
    return out


# ---------------------------------------------------------------------------
# t-SNE

@dataclass
class TsneResult:
    coords: np.ndarray
    kl_history: np.ndarray      # KL(P || Q) per iteration, exaggerated P during the early phase
    perplexities: np.ndarray    # realized per-point perplexity of the conditional P
    exaggeration_iters: int


def row_perplexities(P_cond: np.ndarray) -> np.ndarray:
    """``exp(H_i)`` of every row of a conditional affinity matrix."""
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(P_cond > 0, np.log(P_cond), 0.0)
    return np.exp(-np.sum(P_cond * logs, axis=1))


def tsne(X, perplexity: float = 30.0, iters: int = 1000, seed: int = 0, learning_rate="auto",
         exaggeration: float = 12.0, exaggeration_iters: int = 250) -> TsneResult:
    """Exact t-SNE with momentum, gains and early exaggeration."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 2:
        raise ConfigError(f"t-SNE needs an [n x H] array with H >= 2, got shape {X.shape}")
    n = X.shape[0]
    if perplexity <= 0 or n < 3 * perplexity:
        raise ConfigError(f"t-SNE with perplexity {perplexity} needs n >= {3 * perplexity:g} points, got {n}")
    if iters <= exaggeration_iters:
        raise ConfigError(f"iters ({iters}) must exceed the exaggeration phase ({exaggeration_iters})")
    sq = np.sum(X * X, axis=1)
    sqdist = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (X @ X.T), 0.0)
    np.fill_diagonal(sqdist, 0.0)
    P_cond, _ = kernels.binary_search_perplexity(np.ascontiguousarray(sqdist), float(perplexity))
    P = P_cond + P_cond.T
    P = P / P.sum()
    lr = max(n / exaggeration / 4.0, 50.0) if learning_rate == "auto" else float(learning_rate)

    rng = stream(seed, "tsne")
    Y = 1e-4 * rng.standard_normal((n, 2))
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    history = np.empty(iters)
    for it in range(iters):
        early = it < exaggeration_iters
        kl, grad = kernels.tsne_kl_grad(Y, P * exaggeration if early else P)
        history[it] = kl
        momentum = 0.5 if early else 0.8
        same = (grad > 0) == (update > 0)
        gains = np.maximum(np.where(same, gains * 0.8, gains + 0.2), 0.01)
        update = momentum * update - lr * gains * grad
        Y = Y + update
        Y -= Y.mean(axis=0)
    return TsneResult(Y, history, row_perplexities(P_cond), exaggeration_iters)


def tsne_embed(X, perplexity: float = 30.0, iters: int = 1000, seed: int = 0) -> np.ndarray:
    return tsne(X, perplexity, iters, seed).coords


def class_separation_ratio(E, labels) -> float:
    """Mean distance between points of different classes over mean distance within a class.

    About 1 when embeddings do not depend on the label; above 1 when classes cluster.
    """
    E = np.asarray(E, dtype=np.float64)
    y = np.asarray(labels)
    if E.ndim != 2 or E.shape[0] != y.shape[0]:
        raise DataError(f"embeddings {E.shape} and labels {y.shape} do not line up")
    sq = np.sum(E * E, axis=1)
    D = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2.0 * (E @ E.T), 0.0))
    same = y[:, None] == y[None, :]
    within = same & ~np.eye(len(y), dtype=bool)
    if not within.any() or same.all():
        raise DataError("separation ratio needs at least two classes and one same-class pair")
    return float(D[~same].mean() / D[within].mean())


# ---------------------------------------------------------------------------
# output formats

def write_embedding_csv(path, sources: Sequence[str], labels, coords, raw=None) -> None:
    """EmbeddingDump rows ``source,label,x,y`` plus optional raw ``e0..`` columns."""
    coords = np.asarray(coords, dtype=np.float64)
    labels = np.asarray(labels)
    if coords.shape != (len(sources), 2) or labels.shape[0] != len(sources):
        raise DataError("embedding dump columns have mismatched lengths")
    header = ["source", "label", "x", "y"]
    if raw is not None:
        raw = np.asarray(raw, dtype=np.float64)
        header += [f"e{i}" for i in range(raw.shape[1])]
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, src in enumerate(sources):
            row = [src, int(labels[i]), repr(float(coords[i, 0])), repr(float(coords[i, 1]))]
            if raw is not None:
                row += [repr(float(v)) for v in raw[i]]
            w.writerow(row)


def read_embedding_csv(path) -> tuple[list[str], np.ndarray, np.ndarray, np.ndarray | None]:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:4] != ["source", "label", "x", "y"]:
        raise DataError(f"{path}: expected header source,label,x,y")
    body = rows[1:]
    sources = [r[0] for r in body]
    labels = np.array([int(r[1]) for r in body], dtype=np.int64)
    coords = np.array([[float(r[2]), float(r[3])] for r in body]).reshape(-1, 2)
    raw = np.array([[float(v) for v in r[4:]] for r in body]) if len(rows[0]) > 4 else None
    return sources, labels, coords, raw


def write_pvalue_csv(path, lambdas: Sequence[float], matrix: np.ndarray) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda"] + [repr(float(l)) for l in lambdas])
        for i, lam in enumerate(lambdas):
            w.writerow([repr(float(lam))] + [repr(float(v)) if j <= i else "" for j, v in enumerate(matrix[i])])


def write_jsonl(path, records: Sequence[dict], mode: str = "w") -> None:
    with Path(path).open(mode, encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# sensitivity sweep

@dataclass
class SweepResult:
    lam: float
    accuracies: list[float]     # per-epoch dev accuracies, concatenated over seeds
    max: float
    min: float
    mean: float

    @classmethod
    def of(cls, lam: float, accs: Sequence[float]) -> "SweepResult":
        a = np.asarray(accs, dtype=np.float64)
        return cls(float(lam), a.tolist(), float(a.max()), float(a.min()), float(a.mean()))


@dataclass
class SweepBase:
    """Everything one masked GAN run needs; picklable for worker processes."""

    train: list
    dev: list
    enc_cfg: object
    gan_cfg: object
    task: str = "sst"


def sweep_run(base: SweepBase, lam: float, seed: int) -> list[float]:
    """Mask ``lam`` of the training labels, train a GAN, return per-epoch dev accuracies."""
    from .data import mask_labels
    from .encoder import Vocab
    from .gan import GanModel, train_gan

    train = mask_labels(base.train, lam, seed)
    texts = [e.text_a for e in base.train] + [e.text_b for e in base.train if e.text_b]
    vocab = Vocab.build(texts)
    model = GanModel.create(vocab, replace(base.enc_cfg, vocab_size=len(vocab)), base.gan_cfg, seed, base.task)
    accs, _ = train_gan(model, train, base.dev, seed)
    return accs


def sweep_seed(base_seed: int, lam_index: int, repeat: int) -> int:
    return base_seed + lam_index + 1000 * repeat


def sensitivity_sweep(lambdas: Sequence[float], base: SweepBase, n_seeds: int = 1, base_seed: int = 0,
                      jobs: int = 1, pooled: bool = False) -> tuple[list[SweepResult], np.ndarray]:
    """Train one masked GAN per (lambda, repeat) and test each accuracy drop."""
    lambdas = [float(l) for l in lambdas]
    if not lambdas:
        raise ConfigError("sweep needs at least one lambda")
    if any(not 0.0 <= l <= 1.0 for l in lambdas) or lambdas != sorted(lambdas):
        raise ConfigError(f"lambdas must be sorted ascending within [0, 1], got {lambdas}")
    if n_seeds < 1 or jobs < 1:
        raise ConfigError("n_seeds and jobs must be >= 1")
    tasks = [(i, r) for i in range(len(lambdas)) for r in range(n_seeds)]
    args = [(base, lambdas[i], sweep_seed(base_seed, i, r)) for i, r in tasks]
    if jobs == 1:
        outs = [sweep_run(*a) for a in args]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outs = list(pool.map(sweep_run, *zip(*args)))
    per_lambda: list[list[float]] = [[] for _ in lambdas]
    for (i, _), accs in zip(tasks, outs):
        per_lambda[i].extend(accs)
    results = [SweepResult.of(l, a) for l, a in zip(lambdas, per_lambda)]
    if any(len(a) < 2 for a in per_lambda):
        matrix = np.full((len(lambdas), len(lambdas)), np.nan)
        np.fill_diagonal(matrix, 0.5)
    else:
        matrix = pvalue_matrix(per_lambda, pooled)
    return results, matrix
