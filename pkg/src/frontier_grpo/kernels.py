"""Backend selection for the hot sampler kernels.

The compiled extension is preferred. Set ``FRONTIER_GRPO_PURE_PYTHON=1``
before import to force the numpy fallback.
"""
from __future__ import annotations

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("FRONTIER_GRPO_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

cooling_factors = _impl.cooling_factors
rank_weights = _impl.rank_weights
sample_without_replacement = _impl.sample_without_replacement


def backends() -> dict:
    """All importable kernel implementations, keyed by name."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels

        found["cython"] = _ckernels
    except ImportError:
        pass
    return found
