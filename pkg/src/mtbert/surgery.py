"""PCGrad projection, the paired-loss schedule and the AdamW update."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Tensor
from .errors import ContractError
from .heads import is_shared

log = logging.getLogger(__name__)

MODES = ("naive-sum", "pcgrad", "pcgrad-paired")


@dataclass
class GradientSet:
    task: str
    flat: np.ndarray
    layout: dict[str, tuple[int, int]]

    def unflatten(self, shapes: dict[str, tuple]) -> dict[str, np.ndarray]:
        return {n: self.flat[o:o + k].reshape(shapes[n]) for n, (o, k) in self.layout.items()}


def make_layout(params: dict[str, Tensor], names) -> dict[str, tuple[int, int]]:
    layout, off = {}, 0
    for n in names:
        k = params[n].data.size
        layout[n] = (off, k)
        off += k
    return layout


def flatten(task: str, grads: dict[str, np.ndarray], layout: dict[str, tuple[int, int]]) -> GradientSet:
    total = sum(k for _, k in layout.values())
    flat = np.zeros(total)
    for n, (o, k) in layout.items():
        g = grads.get(n)
        if g is not None:
            flat[o:o + k] = g.reshape(-1)
    return GradientSet(task, flat, layout)


def pcgrad_project(grads: list[GradientSet], rng: np.random.Generator) -> list[GradientSet]:
    """Remove pairwise conflicts between task gradients.

    Each task visits the others in a random order and, when ``g_i . g_j < 0``,
    subtracts its component along the *original* ``g_j``. Zero-norm partners
    are skipped with a warning. Inputs are not modified.
    """
    if len(grads) < 2:
        raise ContractError(f"pcgrad_project needs at least 2 gradient sets, got {len(grads)}")
    layout = grads[0].layout
    for g in grads[1:]:
        if g.layout != layout:
            raise ContractError(f"gradient layouts differ between {grads[0].task} and {g.task}")
    m = len(grads)
    G = np.ascontiguousarray(np.stack([g.flat for g in grads]))
    order = np.empty((m, m - 1), dtype=np.int64)
    for i in range(m):
        others = np.array([j for j in range(m) if j != i], dtype=np.int64)
        order[i] = others[rng.permutation(m - 1)]
    out, skips = kernels.pcgrad_project(G, order)
    if skips:
        log.warning("pcgrad: skipped %d projection(s) against zero-norm gradients", skips)
    return [GradientSet(g.task, out[i], layout) for i, g in enumerate(grads)]


@dataclass
class PairedLosses:
    """Loss pairs ``[L_SST, L_P]`` and ``[L_STS, L_P]``."""

    pair1: tuple[Tensor, Tensor]
    pair2: tuple[Tensor, Tensor]

    @classmethod
    def from_bundle(cls, bundle) -> "PairedLosses":
        return cls((bundle.L_SST, bundle.L_P), (bundle.L_STS, bundle.L_P))

    def pairs(self) -> list[tuple[Tensor, Tensor]]:
        return [self.pair1, self.pair2]


def loss_gradients(loss: Tensor, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradient of one loss w.r.t. every parameter (zeros where unreachable)."""
    ad.zero_grads(params.values())
    ad.backward(loss)
    out = {n: (np.zeros_like(p.data) if p.grad is None else p.grad) for n, p in params.items()}
    ad.zero_grads(params.values())
    return out


def surgered_gradients(params: dict[str, Tensor], pairs: list[tuple[Tensor, ...]],
                       rng: np.random.Generator, mode: str = "pcgrad-paired",
                       halve_paraphrase: bool = False) -> dict[str, np.ndarray]:
    """Combined per-parameter gradient for one step.

    ``pcgrad-paired`` projects within each pair on the shared parameters and
    accumulates the surgered sums; ``pcgrad`` projects all distinct losses
    together; ``naive-sum`` adds raw gradients of the distinct losses.
    Head-exclusive parameters always get the raw gradient of each distinct
    loss once.
    """
    if mode not in MODES:
        raise ContractError(f"unknown step mode {mode!r}; expected one of {MODES}")
    for pair in pairs:
        if len(pair) < 2 or any(l is None for l in pair):
            raise ContractError("every loss pair needs two losses")
    cache: dict[int, dict[str, np.ndarray]] = {}
    distinct: list[Tensor] = []
    for pair in pairs:
        for loss in pair:
            if id(loss) not in cache:
                cache[id(loss)] = loss_gradients(loss, params)
                distinct.append(loss)

    shapes = {n: p.shape for n, p in params.items()}
    total = {n: np.zeros_like(p.data) for n, p in params.items()}
    for loss in distinct:
        for n, g in cache[id(loss)].items():
            total[n] = total[n] + g
    if mode == "naive-sum":
        return total

    shared = [n for n in params if is_shared(n)]
    layout = make_layout(params, shared)
    if mode == "pcgrad":
        groups = [distinct]
    else:
        groups = [list(pair) for pair in pairs]
    acc = np.zeros(sum(k for _, k in layout.values()))
    for gi, group in enumerate(groups):
        sets = []
        for li, loss in enumerate(group):
            gs = flatten(f"g{gi}.{li}", cache[id(loss)], layout)
            if halve_paraphrase and mode == "pcgrad-paired" and li == 1:
                gs.flat = 0.5 * gs.flat
            sets.append(gs)
        for gs in pcgrad_project(sets, rng):
            acc = acc + gs.flat
    merged = GradientSet("surgered", acc, layout).unflatten(shapes)
    total.update(merged)
    return total


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class AdamW:
    """Bias-corrected Adam with decoupled weight decay."""

    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> None:
        adam_update(params, grads, self, self.lr, self.betas, self.eps, self.weight_decay)


def adam_update(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamW,
                lr: float, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0) -> None:
    """One in-place AdamW step; aborts before touching anything on a non-finite gradient."""
    for n, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NonFiniteGradient(f"non-finite gradient in parameter {n!r} ({bad} entries)")
    b1, b2 = betas
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for n, p in params.items():
        g = grads.get(n)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(n)
        if m is None:
            m = state.m[n] = np.zeros_like(p.data)
            state.v[n] = np.zeros_like(p.data)
        v = state.v[n]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if weight_decay:
            p.data *= 1.0 - lr * weight_decay
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def paired_step(params: dict[str, Tensor], losses: PairedLosses, opt: AdamW,
                rng: np.random.Generator, mode: str = "pcgrad-paired",
                halve_paraphrase: bool = False) -> dict[str, np.ndarray]:
    """Surgered gradients for both pairs, then one optimizer update. Returns the gradients."""
    grads = surgered_gradients(params, losses.pairs(), rng, mode, halve_paraphrase)
    opt.step(params, grads)
    return grads
