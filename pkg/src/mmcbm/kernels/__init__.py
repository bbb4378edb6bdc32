"""Backend dispatch for the numeric hot loops.

The env var ``MMCBM_KERNELS`` picks the implementation:

    auto   (default) numba if it imports, else pure numpy
    numba  require the JIT backend, fail loudly if unavailable
    numpy  force the pure-numpy reference path

``benchmarks/bench_kernels.py`` times the two backends side by side.
"""

from __future__ import annotations

import os

_CHOICES = ("auto", "numba", "numpy")
_requested = os.environ.get("MMCBM_KERNELS", "auto").lower()
if _requested not in _CHOICES:
    raise RuntimeError(
        f"MMCBM_KERNELS must be one of {_CHOICES}, got {_requested!r}"
    )

if _requested == "numpy":
    from . import reference as _impl

    _active = "numpy"
else:
    try:
        from . import jit as _impl  # type: ignore[no-redef]

        _active = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        from . import reference as _impl  # type: ignore[no-redef]

        _active = "numpy"

svm_train = _impl.svm_train
attention_pool = _impl.attention_pool
baseline_loss_grads = _impl.baseline_loss_grads
predictor_loss_grad = _impl.predictor_loss_grad


def active_backend() -> str:
    """Name of the backend serving the kernel calls: 'numba' or 'numpy'."""
    return _active
