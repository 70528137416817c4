"""Run configuration: nested dataclasses, two profiles, JSON round-trip.

Precedence is profile defaults, then a JSON config file, then CLI flags.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from .errors import ConfigError

OUT_ENV = "MTBERT_OUT"


@dataclass
class EncoderSection:
    hidden_dim: int = 32
    layers: int = 2
    heads: int = 4
    max_seq_len: int = 32
    ff_dim: int = 64
    dropout_p: float = 0.1


@dataclass
class HeadSection:
    shared_dim: int = 32
    dense_dim: int = 32
    dropout_p: float = 0.1
    sts_mode: str = "sep_fused"


@dataclass
class OptimSection:
    mode: str = "pcgrad-paired"
    epochs: int = 10
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 1e-3
    halve_paraphrase: bool = False


@dataclass
class GanSection:
    task: str = "sst"
    k: int = 5
    noise_dim: int = 100
    hidden_depth: int = 1
    hidden_dim: int = 32
    lr: float = 2e-3
    conditional: bool = True
    epochs: int = 5
    batch_size: int = 16
    dropout_p: float = 0.1
    encoder_dropout_p: float = 0.0
    cfm_weight: float = 5.0
    freeze_encoder: bool = False
    lam: float = 0.0
    n_examples: int = 3000


@dataclass
class DataSection:
    data_dir: str | None = None
    n_examples: int = 500
    vocab_size: int = 60


@dataclass
class SweepSection:
    lambdas: list = field(default_factory=lambda: [0.0, 0.5, 0.9])
    n_seeds: int = 1
    jobs: int = 1


@dataclass
class TsneSection:
    perplexity: float = 30.0
    iters: int = 1000


@dataclass
class RunConfig:
    command: str = ""
    profile: str = "desk"
    seed: int = 0
    out_dir: str = ""
    encoder: EncoderSection = field(default_factory=EncoderSection)
    heads: HeadSection = field(default_factory=HeadSection)
    optim: OptimSection = field(default_factory=OptimSection)
    gan: GanSection = field(default_factory=GanSection)
    data: DataSection = field(default_factory=DataSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    tsne: TsneSection = field(default_factory=TsneSection)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def validate(self) -> "RunConfig":
        from .multitask import TRAIN_MODES

        if self.optim.mode not in TRAIN_MODES:
            raise ConfigError(f"optim.mode must be one of {TRAIN_MODES}, got {self.optim.mode!r}")
        if self.heads.sts_mode not in ("sep_fused", "triplet"):
            raise ConfigError(f"heads.sts_mode must be sep_fused or triplet, got {self.heads.sts_mode!r}")
        if self.gan.task not in ("sst", "para"):
            raise ConfigError(f"gan.task must be sst or para, got {self.gan.task!r}")
        for name, v in (("optim.epochs", self.optim.epochs), ("optim.batch_size", self.optim.batch_size),
                        ("gan.epochs", self.gan.epochs), ("gan.batch_size", self.gan.batch_size),
                        ("data.n_examples", self.data.n_examples), ("gan.n_examples", self.gan.n_examples),
                        ("sweep.n_seeds", self.sweep.n_seeds), ("sweep.jobs", self.sweep.jobs),
                        ("tsne.iters", self.tsne.iters)):
            if v < 1:
                raise ConfigError(f"{name} must be >= 1, got {v}")
        for name, v in (("optim.lr", self.optim.lr), ("gan.lr", self.gan.lr)):
            if not v > 0:
                raise ConfigError(f"{name} must be positive, got {v}")
        if not 0.0 <= self.gan.lam <= 1.0:
            raise ConfigError(f"gan.lam must lie in [0, 1], got {self.gan.lam}")
        if self.encoder.hidden_dim % self.encoder.heads:
            raise ConfigError("encoder.hidden_dim must be divisible by encoder.heads")
        return self


def _paper_profile() -> RunConfig:
    cfg = RunConfig(profile="paper")
    cfg.encoder = EncoderSection(hidden_dim=768, layers=12, heads=12, max_seq_len=128, ff_dim=3072, dropout_p=0.5)
    cfg.heads = HeadSection(shared_dim=768, dense_dim=768, dropout_p=0.5)
    cfg.optim = OptimSection(epochs=10, batch_size=112, lr=1e-5, weight_decay=1e-3)
    cfg.gan = GanSection(hidden_dim=768, lr=5e-5, noise_dim=100, epochs=5, batch_size=112, dropout_p=0.1,
                         encoder_dropout_p=0.1)
    cfg.sweep = SweepSection(lambdas=[0.0, 0.2, 0.4, 0.6, 0.8, 0.9])
    return cfg


PROFILES = {"desk": RunConfig, "paper": _paper_profile}


def profile(name: str) -> RunConfig:
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; expected one of {sorted(PROFILES)}")
    return PROFILES[name]()


def _merge(obj, updates: dict, where: str) -> None:
    names = {f.name: f for f in fields(obj)}
    for key, val in updates.items():
        if key not in names:
            raise ConfigError(f"unknown config key {where}{key}")
        cur = getattr(obj, key)
        if is_dataclass(cur):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {where}{key} must be an object")
            _merge(cur, val, f"{where}{key}.")
        else:
            setattr(obj, key, val)


def load_config(path: str | Path | None = None, profile_name: str | None = None) -> RunConfig:
    """Profile defaults overlaid with a JSON file; the file may name its own profile."""
    raw: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        try:
            raw = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{p}: top level must be an object")
    name = profile_name or raw.get("profile", "desk")
    cfg = profile(name)
    _merge(cfg, {k: v for k, v in raw.items() if k != "profile"}, "")
    cfg.profile = name
    return cfg


def default_out_dir(command: str) -> Path:
    return Path(os.environ.get(OUT_ENV, "runs")) / command
