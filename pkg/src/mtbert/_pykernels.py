"""Pure numpy implementations of the hot kernels.

Signatures mirror :mod:`mtbert._ckernels`; :mod:`mtbert.kernels` picks one at
import time.
"""

from __future__ import annotations

import numpy as np


def binary_search_perplexity(sqdist: np.ndarray, perplexity: float, tol: float = 1e-5,
                             max_steps: int = 200):
    """Row-conditional Gaussian affinities with per-row precision chosen by bisection.

    Returns ``(P, beta)`` where row ``i`` of ``P`` is ``p_{j|i}`` (zero
    diagonal) and its perplexity ``exp(H_i)`` is within ``tol`` of the target.
    """
    n = sqdist.shape[0]
    P = np.zeros((n, n))
    betas = np.ones(n)
    for i in range(n):
        d = np.delete(sqdist[i], i)
        d = d - d.min()
        beta, lo, hi = 1.0, 0.0, np.inf
        for _ in range(max_steps):
            w = np.exp(-beta * d)
            s = w.sum()
            H = np.log(s) + beta * np.dot(d, w) / s
            diff = np.exp(H) - perplexity
            if abs(diff) <= tol:
                break
            if diff > 0:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else 0.5 * (beta + hi)
            else:
                hi = beta
                beta = 0.5 * (beta + lo)
        row = w / s
        P[i, :i] = row[:i]
        P[i, i + 1:] = row[i:]
        betas[i] = beta
    return P, betas


def tsne_kl_grad(Y: np.ndarray, P: np.ndarray):
    """KL(P || Q) and its gradient for Student-t (one degree of freedom) Q."""
    sq = np.sum(Y * Y, axis=1)
    num = 1.0 / (1.0 + sq[:, None] + sq[None, :] - 2.0 * (Y @ Y.T))
    np.fill_diagonal(num, 0.0)
    Q = np.maximum(num / num.sum(), 1e-300)
    PQ = (P - Q) * num
    grad = 4.0 * (PQ.sum(axis=1)[:, None] * Y - PQ @ Y)
    mask = P > 0
    kl = float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))
    return kl, grad


def pcgrad_project(G: np.ndarray, order: np.ndarray):
    """Project each row of ``G`` away from conflicting rows.

    ``order[i]`` lists the other rows in the order row ``i`` visits them.
    Projections always use the original rows. Returns ``(projected,
    zero_norm_skips)``.
    """
    out = G.copy()
    skips = 0
    norms = np.einsum("ij,ij->i", G, G)
    for i in range(G.shape[0]):
        gi = out[i]
        for j in order[i]:
            if norms[j] == 0.0:
                skips += 1
                continue
            dot = float(np.dot(gi, G[j]))
            if dot < 0.0:
                gi -= (dot / norms[j]) * G[j]
    return out, skips
