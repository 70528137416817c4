"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from mtbert import _pykernels

try:
    from mtbert import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def cases(rng: np.random.Generator) -> dict:
    X = rng.normal(size=(500, 32))
    sq = np.sum(X * X, axis=1)
    D = np.ascontiguousarray(np.maximum(sq[:, None] + sq[None, :] - 2 * X @ X.T, 0.0))
    np.fill_diagonal(D, 0.0)
    P, _ = _pykernels.binary_search_perplexity(D, 30.0)
    P = np.ascontiguousarray((P + P.T) / (2 * P.shape[0]))
    Y = np.ascontiguousarray(rng.normal(size=(500, 2)))
    G = np.ascontiguousarray(rng.normal(size=(3, 200_000)))
    order = np.array([[1, 2], [2, 0], [0, 1]], dtype=np.int64)
    return {
        "binary_search_perplexity n=500": ("binary_search_perplexity", (D, 30.0)),
        "tsne_kl_grad n=500": ("tsne_kl_grad", (Y, P)),
        "pcgrad_project 3 x 200k": ("pcgrad_project", (G, order)),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = {"python": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    print(f"{'kernel':34s}" + "".join(f"{b:>12s}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for label, (fn, fargs) in cases(np.random.default_rng(0)).items():
        best = {}
        for b, mod in backends.items():
            f = getattr(mod, fn)
            best[b] = min(timeit.repeat(lambda: f(*fargs), number=1, repeat=args.repeat))
        row = f"{label:34s}" + "".join(f"{best[b] * 1e3:10.2f}ms" for b in backends)
        if len(backends) > 1:
            row += f"{best['python'] / best['cython']:11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
