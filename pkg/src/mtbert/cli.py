"""``mtbert`` command line: data generation, training, sweeps, t-SNE and evaluation.

Every command writes ``config.json`` (before any training) and ``metrics.jsonl``
into its output directory; training commands also write ``checkpoint.bin``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import SweepBase, class_separation_ratio, read_embedding_csv, sensitivity_sweep, tsne, \
    write_embedding_csv, write_jsonl, write_pvalue_csv
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, default_out_dir, load_config
from .data import TASKS, load_corpus, mask_labels, synthetic_corpus, write_corpus
from .encoder import EncoderConfig, Vocab
from .errors import ConfigError, ContractError, DataError
from .gan import GanConfig, GanModel, train_gan
from .heads import HeadConfig
from .multitask import MultitaskModel, TrainSettings, train_multitask
from .rng import stream

log = logging.getLogger("mtbert")

COMMANDS = ("gen-data", "train-multitask", "train-gan", "sweep", "tsne", "eval")


def _lambdas(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--profile", choices=("desk", "paper"), help="hyperparameter profile (default desk)")
    common.add_argument("--out", help="output directory (default $MTBERT_OUT/<command> or runs/<command>)")
    common.add_argument("--seed", type=int)
    common.add_argument("--data-dir", help="directory of {task}_{split}.tsv files; synthetic data if omitted")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="mtbert", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"mtbert {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    g = sub.add_parser("gen-data", parents=[common], help="write the synthetic corpus as TSV")
    g.add_argument("--n-examples", type=int)
    g.add_argument("--vocab-size", type=int)

    t = sub.add_parser("train-multitask", parents=[common], help="train the multitask model")
    t.add_argument("--mode", choices=("baseline", "naive-sum", "pcgrad", "pcgrad-paired"))
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--halve-paraphrase", action="store_true", default=None)
    t.add_argument("--sts-mode", choices=("sep_fused", "triplet"))

    a = sub.add_parser("train-gan", parents=[common], help="train the semi-supervised GAN")
    a.add_argument("--task", choices=("sst", "para"))
    a.add_argument("--conditional", action=argparse.BooleanOptionalAction, default=None)
    a.add_argument("--hidden-depth", type=int, choices=(1, 2, 3))
    a.add_argument("--lambda", dest="lam", type=float, help="fraction of training labels to mask")
    a.add_argument("--freeze-encoder", action="store_true", default=None)
    a.add_argument("--epochs", type=int)
    a.add_argument("--lr", type=float)
    a.add_argument("--n-examples", type=int, help="synthetic training rows when --data-dir is omitted")

    s = sub.add_parser("sweep", parents=[common], help="masking sensitivity sweep with p-value matrix")
    s.add_argument("--lambdas", type=_lambdas)
    s.add_argument("--n-seeds", type=int)
    s.add_argument("--jobs", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--n-examples", type=int)

    e = sub.add_parser("tsne", parents=[common], help="2-D t-SNE of an embedding dump")
    e.add_argument("--input", required=True, help="embedding CSV with raw e0.. columns")
    e.add_argument("--perplexity", type=float)
    e.add_argument("--iters", type=int)

    v = sub.add_parser("eval", parents=[common], help="dev metrics from a checkpoint")
    v.add_argument("--checkpoint", required=True)
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config, args.profile)
    cfg.command = args.command
    if args.seed is not None:
        cfg.seed = args.seed
    if args.data_dir is not None:
        cfg.data.data_dir = args.data_dir
    opt = {k: getattr(args, k, None) for k in ("mode", "epochs", "batch_size", "lr", "halve_paraphrase")}
    if args.command == "train-multitask":
        for k, v in opt.items():
            if v is not None:
                setattr(cfg.optim, k, v)
        if args.sts_mode is not None:
            cfg.heads.sts_mode = args.sts_mode
    elif args.command == "gen-data":
        if args.n_examples is not None:
            cfg.data.n_examples = args.n_examples
        if args.vocab_size is not None:
            cfg.data.vocab_size = args.vocab_size
    elif args.command in ("train-gan", "sweep"):
        for k in ("task", "conditional", "hidden_depth", "lam", "freeze_encoder", "epochs", "lr", "n_examples"):
            v = getattr(args, k, None)
            if v is not None:
                setattr(cfg.gan, k, v)
        if args.command == "sweep":
            for k in ("lambdas", "n_seeds", "jobs"):
                v = getattr(args, k)
                if v is not None:
                    setattr(cfg.sweep, k, v)
    elif args.command == "tsne":
        if args.perplexity is not None:
            cfg.tsne.perplexity = args.perplexity
        if args.iters is not None:
            cfg.tsne.iters = args.iters
    cfg.out_dir = str(Path(args.out) if args.out else default_out_dir(args.command))
    return cfg.validate()


# ---------------------------------------------------------------------------
# builders shared by commands

def corpus_for(cfg: RunConfig, n_examples: int | None = None) -> dict:
    if cfg.data.data_dir:
        return load_corpus(cfg.data.data_dir)
    return synthetic_corpus(n_examples or cfg.data.n_examples, cfg.seed, cfg.data.vocab_size)


def vocab_for(corpus: dict, tasks=TASKS) -> Vocab:
    texts = []
    for t in tasks:
        for e in corpus[t]["train"]:
            texts.append(e.text_a)
            if e.text_b:
                texts.append(e.text_b)
    return Vocab.build(texts)


def encoder_config(cfg: RunConfig, vocab: Vocab, dropout_p: float | None = None) -> EncoderConfig:
    e = cfg.encoder
    return EncoderConfig(len(vocab), e.hidden_dim, e.layers, e.heads, e.max_seq_len, e.ff_dim,
                         e.dropout_p if dropout_p is None else dropout_p)


def head_config(cfg: RunConfig) -> HeadConfig:
    h = cfg.heads
    return HeadConfig(cfg.encoder.hidden_dim, h.shared_dim, h.dense_dim, h.dropout_p, h.sts_mode,
                      baseline_mode=cfg.optim.mode == "baseline")


def gan_config(cfg: RunConfig) -> GanConfig:
    g = cfg.gan
    k = 5 if g.task == "sst" else 2
    return GanConfig(k=k, noise_dim=g.noise_dim, hidden_depth=g.hidden_depth, hidden_dim=g.hidden_dim, lr=g.lr,
                     conditional=g.conditional, epochs=g.epochs, batch_size=g.batch_size, dropout_p=g.dropout_p,
                     cfm_weight=g.cfm_weight, freeze_encoder=g.freeze_encoder)


def _tokens(vocab: Vocab) -> list[str]:
    return [vocab.token(i) for i in range(4, len(vocab))]


def _data_meta(cfg: RunConfig, n_examples: int) -> dict:
    """How the training corpus was produced, so ``eval`` can rebuild the same dev split."""
    if cfg.data.data_dir:
        return {"data_dir": str(cfg.data.data_dir)}
    return {"n_examples": n_examples, "seed": cfg.seed, "vocab_size": cfg.data.vocab_size}


def _eval_corpus(cfg: RunConfig, meta: dict) -> dict:
    if cfg.data.data_dir:
        return load_corpus(cfg.data.data_dir)
    d = meta.get("data", {})
    if "data_dir" in d:
        return load_corpus(d["data_dir"])
    return synthetic_corpus(d.get("n_examples", cfg.data.n_examples), d.get("seed", cfg.seed),
                            d.get("vocab_size", cfg.data.vocab_size))


def _fmt(value) -> str:
    return "undefined" if value is None else f"{value:.4f}"


def _start(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json(), encoding="utf-8")
    (out / "metrics.jsonl").write_text("", encoding="utf-8")
    return out


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(cfg: RunConfig) -> None:
    out = _start(cfg)
    corpus = synthetic_corpus(cfg.data.n_examples, cfg.seed, cfg.data.vocab_size)
    target = Path(cfg.data.data_dir) if cfg.data.data_dir else out / "data"
    paths = write_corpus(corpus, target)
    write_jsonl(out / "metrics.jsonl", [{"file": k, "rows": len(corpus[k.split("_")[0]][k.split("_")[1]])}
                                        for k in sorted(paths)])
    print(f"wrote {len(paths)} files to {target}")


def cmd_train_multitask(cfg: RunConfig) -> None:
    out = _start(cfg)
    corpus = corpus_for(cfg)
    vocab = vocab_for(corpus)
    enc, heads = encoder_config(cfg, vocab), head_config(cfg)
    model = MultitaskModel.create(vocab, enc, heads, cfg.seed)
    o = cfg.optim
    settings = TrainSettings(o.mode, o.epochs, o.batch_size, o.lr, o.weight_decay, o.halve_paraphrase, cfg.seed)

    def on_epoch(epoch, records):
        write_jsonl(out / "metrics.jsonl", records, mode="a")
        print(f"epoch {epoch}: " + ", ".join(f"{r['task']}/{r['split']} {_fmt(r['value'])}" for r in records))

    train_multitask(model, corpus, settings, on_epoch)
    save_checkpoint(out / "checkpoint.bin", model.params,
                    {"kind": "multitask", "vocab": _tokens(vocab), "encoder": asdict(enc), "heads": asdict(heads),
                     "data": _data_meta(cfg, cfg.data.n_examples)})


def _gan_corpus(cfg: RunConfig) -> tuple[list, list]:
    corpus = corpus_for(cfg, cfg.gan.n_examples)
    return corpus[cfg.gan.task]["train"], corpus[cfg.gan.task]["dev"]


def cmd_train_gan(cfg: RunConfig) -> None:
    out = _start(cfg)
    train, dev = _gan_corpus(cfg)
    vocab = vocab_for({cfg.gan.task: {"train": train}}, (cfg.gan.task,))
    enc = encoder_config(cfg, vocab, cfg.gan.encoder_dropout_p)
    gcfg = gan_config(cfg)
    model = GanModel.create(vocab, enc, gcfg, cfg.seed, cfg.gan.task)
    masked = mask_labels(train, cfg.gan.lam, cfg.seed)

    def on_epoch(epoch, acc):
        rec = {"epoch": epoch, "task": cfg.gan.task, "split": "dev", "metric": "accuracy", "value": float(acc)}
        write_jsonl(out / "metrics.jsonl", [rec], mode="a")
        print(f"epoch {epoch}: dev accuracy {acc:.4f}")

    _, steps = train_gan(model, masked, dev, cfg.seed, on_epoch=on_epoch)
    write_jsonl(out / "steps.jsonl", steps)
    fakes, fake_labels = model.generate(len(dev), stream(cfg.seed, "dump"))
    dev_lab = [e for e in dev if e.labeled]
    real = model.embed(dev_lab).data if dev_lab else np.zeros((0, enc.hidden_dim))
    sources = ["real"] * len(dev_lab) + ["generated"] * len(fakes)
    labels = np.concatenate([np.array([int(e.label) for e in dev_lab], dtype=np.int64), fake_labels])
    raw = np.vstack([real, fakes])
    write_raw_dump(out / "embeddings.csv", sources, labels, raw)
    summary = {"generated_variance": float(fakes.var(axis=0).mean())}
    if len(np.unique(fake_labels)) > 1:
        summary["generated_separation_ratio"] = class_separation_ratio(fakes, fake_labels)
    write_jsonl(out / "metrics.jsonl", [summary], mode="a")
    save_checkpoint(out / "checkpoint.bin", model.params,
                    {"kind": "gan", "task": cfg.gan.task, "vocab": _tokens(vocab), "encoder": asdict(enc),
                     "gan": asdict(gcfg), "data": _data_meta(cfg, cfg.gan.n_examples)})


def write_raw_dump(path: Path, sources, labels, raw: np.ndarray) -> None:
    """Embedding dump before t-SNE: ``source,label,e0..``."""
    import csv

    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "label"] + [f"e{i}" for i in range(raw.shape[1])])
        for s, y, row in zip(sources, labels, raw):
            w.writerow([s, int(y)] + [repr(float(v)) for v in row])


def read_dump(path: Path) -> tuple[list[str], np.ndarray, np.ndarray]:
    import csv

    if not Path(path).exists():
        raise FileNotFoundError(f"embedding dump not found: {path}")
    with Path(path).open(encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["source", "label"]:
        raise DataError(f"{path}: expected header starting source,label")
    header = rows[0]
    if header[2:4] == ["x", "y"]:
        sources, labels, _, raw = read_embedding_csv(path)
        if raw is None:
            raise DataError(f"{path}: dump has no raw embedding columns")
        return sources, labels, raw
    body = rows[1:]
    raw = np.array([[float(v) for v in r[2:]] for r in body]).reshape(len(body), len(header) - 2)
    return [r[0] for r in body], np.array([int(r[1]) for r in body], dtype=np.int64), raw


def cmd_sweep(cfg: RunConfig) -> None:
    out = _start(cfg)
    train, dev = _gan_corpus(cfg)
    vocab = vocab_for({cfg.gan.task: {"train": train}}, (cfg.gan.task,))
    base = SweepBase(train, dev, encoder_config(cfg, vocab, cfg.gan.encoder_dropout_p), gan_config(cfg),
                     cfg.gan.task)
    results, matrix = sensitivity_sweep(cfg.sweep.lambdas, base, cfg.sweep.n_seeds, cfg.seed, cfg.sweep.jobs)
    write_jsonl(out / "metrics.jsonl", [asdict(r) for r in results])
    write_pvalue_csv(out / "pvalues.csv", cfg.sweep.lambdas, matrix)
    for r in results:
        print(f"lambda {r.lam}: mean {r.mean:.4f} min {r.min:.4f} max {r.max:.4f}")


def cmd_tsne(cfg: RunConfig, input_path: str) -> None:
    sources, labels, raw = read_dump(Path(input_path))
    out = _start(cfg)
    res = tsne(raw, cfg.tsne.perplexity, cfg.tsne.iters, cfg.seed)
    write_embedding_csv(out / "tsne.csv", sources, labels, res.coords)
    write_jsonl(out / "metrics.jsonl", [{"iter": i, "kl": float(k)} for i, k in enumerate(res.kl_history)])
    print(f"final KL {res.kl_history[-1]:.6f}; wrote {out / 'tsne.csv'}")


def cmd_eval(cfg: RunConfig, ckpt_path: str) -> None:
    params, meta = load_checkpoint(ckpt_path)
    out = _start(cfg)
    vocab = Vocab(meta["vocab"])
    from .autodiff import Tensor

    tensors = {n: Tensor(a, requires_grad=True) for n, a in params.items()}
    records = []
    if meta.get("kind") == "multitask":
        corpus = _eval_corpus(cfg, meta)
        model = MultitaskModel(vocab, EncoderConfig(**meta["encoder"]), HeadConfig(**meta["heads"]), tensors)
        for task in TASKS:
            metric, value = model.evaluate(task, corpus[task]["dev"])
            records.append({"task": task, "split": "dev", "metric": metric,
                            "value": None if value is None else float(value)})
    elif meta.get("kind") == "gan":
        gcfg = GanConfig(**meta["gan"])
        task = meta["task"]
        corpus = _eval_corpus(cfg, meta)
        pick = lambda prefix: {n: t for n, t in tensors.items() if n.startswith(prefix)}
        model = GanModel(vocab, EncoderConfig(**meta["encoder"]), gcfg, task, pick("encoder."), pick("disc."),
                         pick("gen."))
        dev = [e for e in corpus[task]["dev"] if e.labeled]
        acc = float(np.mean(model.predict(dev) == np.array([int(e.label) for e in dev])))
        records.append({"task": task, "split": "dev", "metric": "accuracy", "value": acc})
    else:
        raise DataError(f"{ckpt_path}: unknown checkpoint kind {meta.get('kind')!r}")
    write_jsonl(out / "metrics.jsonl", records)
    for r in records:
        print(f"{r['task']}/dev {r['metric']} {_fmt(r['value'])}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "gen-data":
            cmd_gen_data(cfg)
        elif args.command == "train-multitask":
            cmd_train_multitask(cfg)
        elif args.command == "train-gan":
            cmd_train_gan(cfg)
        elif args.command == "sweep":
            cmd_sweep(cfg)
        elif args.command == "tsne":
            cmd_tsne(cfg, args.input)
        else:
            cmd_eval(cfg, args.checkpoint)
    except FileNotFoundError as exc:
        print(f"mtbert: error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, DataError, ContractError, FloatingPointError) as exc:
        print(f"mtbert: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
