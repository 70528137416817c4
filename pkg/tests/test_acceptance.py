"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that the terminal summary prints in order
(see ``pytest_terminal_summary`` in conftest.py). Run alone with
``pytest tests/test_acceptance.py -v``.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from mtbert import autodiff as ad
from mtbert.analysis import (SweepBase, accuracy, one_tailed_t_test, pearson, sensitivity_sweep, tsne)
from mtbert.autodiff import Tensor
from mtbert.cli import corpus_for, encoder_config, gan_config, main, vocab_for
from mtbert.config import profile
from mtbert.data import mask_labels, synthetic_corpus
from mtbert.encoder import EncoderConfig
from mtbert.gan import DiscriminatorOutput, GanModel, discriminator_loss, generator_loss, train_gan
from mtbert.heads import HeadConfig
from mtbert.multitask import MultitaskModel, TrainSettings, train_multitask
from mtbert.rng import stream
from mtbert.surgery import GradientSet, pcgrad_project

from test_autodiff import _primitives

RESULTS: dict[int, str] = {}


@contextmanager
def criterion(n: int, title: str):
    """Record PASS/FAIL for criterion ``n``; the body appends detail strings to the yielded list."""
    detail: list[str] = []
    ok = False
    try:
        yield detail
        ok = True
    finally:
        line = f"criterion {n} {'PASS' if ok else 'FAIL'}: {title}"
        if detail:
            line += " (" + "; ".join(detail) + ")"
        RESULTS[n] = line
        print(line)


def pairwise_ratio(E, y):
    """Oracle for the separation ratio, independent of the package implementation."""
    D = cdist(E, E)
    same = y[:, None] == y[None, :]
    off = ~np.eye(len(y), dtype=bool)
    return D[~same].mean() / D[same & off].mean()


# ---------------------------------------------------------------------------
# 1. gradient integrity

class KinkCrossed(Exception):
    pass


@contextmanager
def kink_guard():
    """Record the sign pattern of every ReLU and |a - b| input.

    The first forward pass fixes the reference pattern; any later pass that
    differs raises ``KinkCrossed``.
    """
    state = {"ref": None, "cur": []}
    relu, absdiff = ad.relu, ad.absdiff

    def relu_spy(x):
        state["cur"].append(ad.as_tensor(x).data > 0)
        return relu(x)

    def absdiff_spy(a, b):
        state["cur"].append(ad.as_tensor(a).data > ad.as_tensor(b).data)
        return absdiff(a, b)

    def check():
        pattern, state["cur"] = state["cur"], []
        if state["ref"] is None:
            state["ref"] = pattern
        elif len(pattern) != len(state["ref"]) or any(not np.array_equal(p, q)
                                                        for p, q in zip(pattern, state["ref"])):
            raise KinkCrossed

    ad.relu, ad.absdiff = relu_spy, absdiff_spy
    try:
        yield check
    finally:
        ad.relu, ad.absdiff = relu, absdiff


def full_loss_check(sts_mode: str, step: float = 1e-4, max_seeds: int = 20):
    """FD check of the summed three-task loss at the first seed where central differences are meaningful.

    A seed qualifies when (a) every nonzero analytic gradient exceeds
    1000 * eps * |L| / step, the size at which difference roundoff alone stays
    under the 1e-3 relative tolerance, and (b) no ReLU or |U - V| input changes
    sign anywhere on the stencil. Every coordinate of a qualifying seed is
    compared at the full tolerance. Returns (seed, skipped seeds, max error).
    """
    c = synthetic_corpus(40, 3, 30)
    v = vocab_for(c)
    ec = EncoderConfig(vocab_size=len(v), hidden_dim=8, layers=2, heads=2, max_seq_len=16, ff_dim=16,
                       dropout_p=0.0)
    hc = HeadConfig(hidden_dim=8, shared_dim=8, dense_dim=8, dropout_p=0.0, sts_mode=sts_mode)
    batch = {t: c[t]["train"][:3] for t in ("sst", "para", "sts")}
    skipped = []
    for seed in range(max_seeds):
        m = MultitaskModel.create(v, ec, hc, seed)
        # at the 0.02 init many gradients sit near 1e-9, below the difference roundoff floor
        for n, p in m.params.items():
            if n.endswith(".w") or "emb" in n:
                p.data *= 5.0
        names = sorted(m.params)

        def total(params):
            b = MultitaskModel(v, ec, hc, params).losses(batch, training=False)
            return ad.add(ad.add(b.L_SST, b.L_P), b.L_STS)

        base = total(m.params)
        ad.zero_grads(m.params.values())
        ad.backward(base)
        g = np.concatenate([p.grad.ravel() for p in m.params.values() if p.grad is not None])
        floor = 1e3 * np.finfo(np.float64).eps * abs(base.item()) / step
        if np.abs(g[g != 0]).min() < floor:
            skipped.append(f"{seed}:floor")
            continue
        with kink_guard() as check:
            def loss(*ts):
                out = total(dict(zip(names, ts)))
                check()
                return out

            try:
                return seed, skipped, ad.finite_diff_check(loss, [m.params[n] for n in names], step=step)
            except KinkCrossed:
                skipped.append(f"{seed}:kink")
    raise AssertionError(f"no qualifying seed below {max_seeds}: {skipped}")


def test_criterion_1_gradient_integrity():
    with criterion(1, "finite-difference gradients, step 1e-4, rel tol 1e-3, < 2 min") as d:
        t0 = time.time()
        worst_prim = 0.0
        for name in _primitives(np.random.default_rng(0)):
            for seed in range(5):
                f, x = _primitives(np.random.default_rng(seed))[name]
                err = ad.finite_diff_check(f, x, step=1e-4)
                assert err < 1e-3, f"primitive {name} seed {seed}: {err:.2e}"
                worst_prim = max(worst_prim, err)
        d.append(f"{len(_primitives(np.random.default_rng(0)))} primitives worst {worst_prim:.1e}")
        for mode in ("sep_fused", "triplet"):
            seed, skipped, err = full_loss_check(mode)
            d.append(f"full loss {mode} seed {seed} err {err:.1e} skipped [{' '.join(skipped)}]")
            assert err < 1e-3
        elapsed = time.time() - t0
        d.append(f"{elapsed:.0f}s")
        assert elapsed < 120


# ---------------------------------------------------------------------------
# 2. PCGrad invariants

def test_criterion_2_pcgrad_invariants():
    with criterion(2, "PCGrad invariants over 1000 random R^100 pairs") as d:
        rng = np.random.default_rng(2024)
        proj_rng = np.random.default_rng(0)
        layout = {"p": (0, 100)}
        n_conf = 0
        for _ in range(1000):
            g1, g2 = rng.normal(size=100), rng.normal(size=100)
            a, b = (x.flat for x in pcgrad_project([GradientSet("a", g1, layout), GradientSet("b", g2, layout)],
                                                   proj_rng))
            if np.dot(g1, g2) >= 0:
                assert np.array_equal(a, g1) and np.array_equal(b, g2)
            else:
                n_conf += 1
                assert np.dot(a, g2) >= -1e-9 and np.dot(b, g1) >= -1e-9
                assert np.linalg.norm(a) <= np.linalg.norm(g1) and np.linalg.norm(b) <= np.linalg.norm(g2)
        d.append(f"{n_conf} conflicting, {1000 - n_conf} unchanged")
        g = rng.normal(size=100)
        a, b = (x.flat for x in pcgrad_project([GradientSet("a", g, layout), GradientSet("b", -g, layout)],
                                               proj_rng))
        assert np.allclose(a, 0.0, atol=1e-12) and np.allclose(b, 0.0, atol=1e-12)
        two = {"p": (0, 2)}
        a, _ = (x.flat for x in pcgrad_project([GradientSet("a", np.array([1.0, 0.0]), two),
                                                GradientSet("b", np.array([-1.0, 1.0]), two)], proj_rng))
        d.append(f"worked example -> ({a[0]:g}, {a[1]:g})")
        assert np.allclose(a, [0.5, 0.5], atol=1e-15)


# ---------------------------------------------------------------------------
# 3. multitask convergence

@pytest.mark.slow
def test_criterion_3_multitask_convergence():
    with criterion(3, "pcgrad-paired convergence and dev >= naive-sum - 0.05, < 15 min") as d:
        t0 = time.time()
        c = synthetic_corpus(500, 0, 60)
        v = vocab_for(c)
        ec, hc = EncoderConfig(vocab_size=len(v), hidden_dim=32, layers=2), HeadConfig()

        def metrics(recs):
            return {(r["task"], r["split"]): r["value"] for r in recs}

        def reached(recs):
            m = metrics(recs)
            return m["sst", "train"] >= 0.90 and m["para", "train"] >= 0.90 and m["sts", "train"] >= 0.80

        paired = MultitaskModel.create(v, ec, hc, 0)
        hist = train_multitask(paired, c, TrainSettings("pcgrad-paired", epochs=200),
                               on_epoch=lambda e, recs: reached(recs))
        epochs = hist[-1]["epoch"]
        final_p = metrics(hist[-6:])
        assert all(r["value"] is not None and np.isfinite(r["value"]) for r in hist), "NaN or undefined metric"
        d.append(f"reached at epoch {epochs}: train sst {final_p['sst', 'train']:.3f} "
                 f"para {final_p['para', 'train']:.3f} sts {final_p['sts', 'train']:.3f}")
        assert reached(hist[-6:]), "train thresholds not reached within 200 epochs"

        naive = MultitaskModel.create(v, ec, hc, 0)
        final_n = metrics(train_multitask(naive, c, TrainSettings("naive-sum", epochs=epochs))[-6:])
        for task in ("sst", "para", "sts"):
            d.append(f"dev {task} {final_p[task, 'dev']:.3f} vs naive {final_n[task, 'dev']:.3f}")
        elapsed = time.time() - t0
        d.append(f"{elapsed:.0f}s")
        for task in ("sst", "para", "sts"):
            assert final_p[task, "dev"] >= final_n[task, "dev"] - 0.05, task
        assert elapsed < 15 * 60


# ---------------------------------------------------------------------------
# 4. GAN loss exactness

def _out(probs):
    p = np.asarray(probs, dtype=np.float64)
    logits = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), -1e4)
    return DiscriminatorOutput(Tensor(logits), Tensor(np.zeros((p.shape[0], 3))))


def test_criterion_4_gan_loss_exactness():
    with criterion(4, "GAN loss exactness") as d:
        real = _out([[1, 0, 0, 0, 0, 0], [0, 0, 1, 0, 0, 0], [0, 0, 0, 0, 1, 0]])
        fake = _out([[0, 0, 0, 0, 0, 1], [0, 0, 0, 0, 0, 1]])
        loss, _ = discriminator_loss(real, fake, np.array([0, 2, 4]), np.ones(3, bool))
        d.append(f"perfect D loss {loss.item()!r}")
        assert loss.item() == 0.0
        u = np.full((4, 6), 1 / 6)
        _, info = discriminator_loss(_out(u), _out(u), np.array([0, 1, 2, 3]), np.ones(4, bool))
        want_u = -math.log(5 / 6) - math.log(1 / 6)
        d.append(f"uniform |dS| {abs(info['L_D_S'] - math.log(6)):.1e} |dU| {abs(info['L_D_U'] - want_u):.1e}")
        assert abs(info["L_D_S"] - math.log(6)) < 1e-9 and abs(info["L_D_U"] - want_u) < 1e-9
        feat = np.array([[0.3, -1.0, 2.0], [1.7, 0.0, -2.0]])
        fo = DiscriminatorOutput(Tensor(np.zeros((2, 6))), Tensor(feat))
        _, g = generator_loss(feat.mean(axis=0), fo)
        d.append(f"identical means L_G_FM {g['L_G_FM']!r}")
        assert g["L_G_FM"] == 0.0


# ---------------------------------------------------------------------------
# 5. conditional vs unconditional separation

def _desk_gan(conditional: bool, seed: int = 0):
    cfg = profile("desk")
    cfg.gan.conditional = conditional
    corpus = corpus_for(cfg, cfg.gan.n_examples)
    train, dev = corpus["sst"]["train"], corpus["sst"]["dev"]
    vocab = vocab_for({"sst": {"train": train}}, ("sst",))
    model = GanModel.create(vocab, encoder_config(cfg, vocab, cfg.gan.encoder_dropout_p), gan_config(cfg), seed)
    train_gan(model, mask_labels(train, cfg.gan.lam, seed), dev, seed)
    return model


@pytest.mark.slow
def test_criterion_5_conditional_separation():
    with criterion(5, "conditional ratio > 1.2, unconditional in [0.8, 1.2], variance > 1e-6") as d:
        out = {}
        for conditional in (True, False):
            model = _desk_gan(conditional)
            assert model.cfg.epochs == 5
            E, y = model.generate(500, stream(0, "acceptance", "generate"))
            out[conditional] = (pairwise_ratio(E, y), float(E.var(axis=0).mean()))
        d.append(f"conditional ratio {out[True][0]:.3f} var {out[True][1]:.2e}")
        d.append(f"unconditional ratio {out[False][0]:.3f} var {out[False][1]:.2e}")
        assert out[True][0] > 1.2
        assert 0.8 <= out[False][0] <= 1.2
        assert out[True][1] > 1e-6 and out[False][1] > 1e-6


# ---------------------------------------------------------------------------
# 6. sensitivity direction

@pytest.mark.slow
def test_criterion_6_sensitivity_direction():
    with criterion(6, "mean dev accuracy strictly decreasing over lambda 0.0, 0.5, 0.9 (3 seeds)") as d:
        cfg = profile("desk")
        corpus = corpus_for(cfg, cfg.gan.n_examples)
        train, dev = corpus["sst"]["train"], corpus["sst"]["dev"]
        vocab = vocab_for({"sst": {"train": train}}, ("sst",))
        base = SweepBase(train, dev, encoder_config(cfg, vocab, cfg.gan.encoder_dropout_p), gan_config(cfg), "sst")
        results, matrix = sensitivity_sweep([0.0, 0.5, 0.9], base, n_seeds=3, base_seed=cfg.seed)
        means = [r.mean for r in results]
        d.append("means " + ", ".join(f"{m:.3f}" for m in means))
        d.append(f"p(0.0>0.9) {matrix[2, 0]:.2e}")
        assert means[0] > means[1] > means[2]
        assert np.all(np.diag(matrix) == 0.5)


# ---------------------------------------------------------------------------
# 7. statistics oracles

def permutation_p(a, b, draws: int, rng, chunk: int = 100_000) -> float:
    """Monte Carlo permutation p-value for H1: mean(a) > mean(b)."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    pool = np.concatenate([a, b])
    obs = a.mean() - b.mean()
    hits = 0
    for start in range(0, draws, chunk):
        n = min(chunk, draws - start)
        perm = rng.permuted(np.broadcast_to(pool, (n, pool.size)), axis=1)
        diff = perm[:, :a.size].mean(axis=1) - perm[:, a.size:].mean(axis=1)
        hits += int(np.sum(diff >= obs - 1e-12))
    return hits / draws


def welch_null_p(a, b, draws: int, rng) -> float:
    """Monte Carlo p of the Welch statistic under normal data with equal means and the samples' variances."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)

    def t_stat(x, y):
        return (x.mean(axis=-1) - y.mean(axis=-1)) / np.sqrt(x.var(axis=-1, ddof=1) / x.shape[-1]
                                                             + y.var(axis=-1, ddof=1) / y.shape[-1])

    obs = t_stat(a, b)
    x = rng.normal(0.0, a.std(ddof=1), size=(draws, a.size))
    y = rng.normal(0.0, b.std(ddof=1), size=(draws, b.size))
    return float(np.mean(t_stat(x, y) >= obs))


def test_criterion_7_statistics_oracles():
    with criterion(7, "accuracy/pearson brute force 1e-10, t-test oracles, complement identity") as d:
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(20):
            n = int(rng.integers(2, 40))
            preds, labels = rng.integers(0, 5, n), rng.integers(0, 5, n)
            brute = sum(1 for p, l in zip(preds.tolist(), labels.tolist()) if p == l) / n
            worst = max(worst, abs(accuracy(preds, labels) - brute))
            x, y = rng.normal(size=n), rng.normal(size=n)
            mx, my = math.fsum(x) / n, math.fsum(y) / n
            r = math.fsum((xi - mx) * (yi - my) for xi, yi in zip(x, y)) / math.sqrt(
                math.fsum((xi - mx) ** 2 for xi in x) * math.fsum((yi - my) ** 2 for yi in y))
            worst = max(worst, abs(pearson(x, y) - r))
        d.append(f"brute-force max diff {worst:.1e}")
        assert worst < 1e-10

        # epoch-like accuracy samples: one near the centre of the null, one in its tail
        for gap in (0.02, 0.04):
            a = 0.48 + gap + 0.03 * rng.standard_normal(15)
            b = 0.48 + 0.03 * rng.standard_normal(15)
            p, perm = one_tailed_t_test(a, b), permutation_p(a, b, 10**6, np.random.default_rng(1))
            d.append(f"15 vs 15: welch {p:.3e} permutation {perm:.3e}")
            assert abs(p - perm) < 0.02

        ex_a, ex_b = [0.5, 0.6], [0.4, 0.5]
        p2, mc = one_tailed_t_test(ex_a, ex_b), welch_null_p(ex_a, ex_b, 10**6, np.random.default_rng(2))
        d.append(f"[0.5,0.6] vs [0.4,0.5]: welch {p2:.4f} null-MC {mc:.4f}")
        assert abs(p2 - mc) < 0.02

        assert one_tailed_t_test(a, a) == 0.5
        comp = max(abs(one_tailed_t_test(s, t) + one_tailed_t_test(t, s) - 1.0)
                   for s, t in ((a, b), (ex_a, ex_b), (rng.random(6), rng.random(9))))
        d.append(f"complement max dev {comp:.1e}")
        assert comp < 1e-10


# ---------------------------------------------------------------------------
# 8. t-SNE

def best_line_accuracy(Y, y, n_angles=720):
    """Brute force over directions and thresholds for the best separating line."""
    best = 0.0
    n1 = int(y.sum())
    for th in np.linspace(0, np.pi, n_angles, endpoint=False):
        ys = y[np.argsort(Y @ np.array([np.cos(th), np.sin(th)]))]
        ones_left = np.concatenate([[0], np.cumsum(ys)])
        zeros_left = np.arange(len(y) + 1) - ones_left
        correct = np.maximum(zeros_left + (n1 - ones_left), ones_left + (len(y) - n1 - zeros_left))
        best = max(best, correct.max() / len(y))
    return best


def test_criterion_8_tsne():
    with criterion(8, "t-SNE perplexity within 1e-3, KL tail non-increasing, blobs >= 95% separable") as d:
        r = np.random.default_rng(8)
        X = np.vstack([r.normal(size=(50, 10)), r.normal(size=(50, 10)) + 15.0])
        y = np.array([0] * 50 + [1] * 50)
        res = tsne(X, perplexity=30, iters=1000, seed=0)
        perp_err = float(np.abs(res.perplexities - 30.0).max())
        tail = np.diff(res.kl_history[-100:])
        sep = best_line_accuracy(res.coords, y)
        d.append(f"perplexity err {perp_err:.1e}; max KL rise {max(tail.max(), 0.0):.1e}; separable {sep:.2f}")
        assert perp_err < 1e-3
        assert np.all(tail <= 0.0)
        assert sep >= 0.95


# ---------------------------------------------------------------------------
# 9. reproducibility

SMALL = ('{"data": {"n_examples": 40}, "encoder": {"hidden_dim": 8, "heads": 2, "ff_dim": 16, "max_seq_len": 16},'
         ' "heads": {"shared_dim": 8, "dense_dim": 8}, "gan": {"hidden_dim": 8, "noise_dim": 8, "batch_size": 8,'
         ' "n_examples": 60, "epochs": 2}, "tsne": {"perplexity": 5, "iters": 300}}')


def test_criterion_9_reproducibility(tmp_path):
    with criterion(9, "every command byte-identical across two runs with a fixed seed") as d:
        cfg = tmp_path / "small.json"
        cfg.write_text(SMALL)
        files = 0
        for rep in ("a", "b"):
            root = tmp_path / rep
            common = ["--config", str(cfg), "--seed", "11"]
            assert main(["gen-data", *common, "--out", str(root / "gen-data")]) == 0
            assert main(["train-multitask", *common, "--out", str(root / "tm"), "--epochs", "2"]) == 0
            assert main(["train-gan", *common, "--out", str(root / "gan"), "--lambda", "0.5"]) == 0
            assert main(["sweep", *common, "--out", str(root / "sweep"), "--lambdas", "0.0,0.5", "--n-seeds", "2"]) == 0
            assert main(["tsne", *common, "--out", str(root / "tsne"),
                         "--input", str(root / "gan" / "embeddings.csv")]) == 0
            assert main(["eval", *common, "--out", str(root / "eval"),
                         "--checkpoint", str(root / "tm" / "checkpoint.bin")]) == 0
        for p in sorted((tmp_path / "a").rglob("*")):
            if p.is_file():
                twin = tmp_path / "b" / p.relative_to(tmp_path / "a")
                if p.name == "config.json":
                    continue  # holds the output directory, which differs by construction
                assert p.read_bytes() == twin.read_bytes(), str(p.relative_to(tmp_path))
                files += 1
        d.append(f"{files} output files compared over 6 commands")
        assert files >= 12
