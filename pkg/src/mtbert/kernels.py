"""Kernel backend selection.

Uses the compiled ``_ckernels`` extension when it was built, otherwise the
numpy fallback. Set ``MTBERT_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("MTBERT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

binary_search_perplexity = _impl.binary_search_perplexity
tsne_kl_grad = _impl.tsne_kl_grad
pcgrad_project = _impl.pcgrad_project
