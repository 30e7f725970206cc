"""Hot kernels, compiled when the extension is built, numpy otherwise.

Set ``MMGIBBS_KERNELS=python`` to force the fallback. ``BACKEND`` names the
implementation in use.
"""

import os

import numpy as np

from . import _pykernels

if os.environ.get("MMGIBBS_KERNELS", "").lower() == "python":
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
        BACKEND = "python"


def _threads():
    try:
        return max(1, int(os.environ.get("RUN_THREADS", "1")))
    except ValueError:
        return 1


def kernel_sums(X, Y, coef, same):
    c = np.ascontiguousarray
    return _impl.kernel_sums(c(X, dtype=np.float64), c(Y, dtype=np.float64), c(coef, dtype=np.float64),
                             bool(same), _threads())


def mog_eval(X, means, log_w, var, want_hessian=True):
    c = np.ascontiguousarray
    return _impl.mog_eval(c(X, dtype=np.float64), c(means, dtype=np.float64), c(log_w, dtype=np.float64),
                          float(var), bool(want_hessian))


def backends():
    """All importable implementations, keyed by name (used by tests and the benchmark)."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
