"""Kernel backend selection.

The compiled ``_kernels`` extension is used when it imports; otherwise the
numpy versions in ``_pykernels`` stand in. Set ``SATLAB_PURE_PYTHON=1`` to
force the fallback.
"""
import contextlib
import os

import numpy as np

from . import _pykernels

_compiled = None
if os.environ.get("SATLAB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

_active = _compiled if _compiled is not None else _pykernels
BACKEND = "cython" if _compiled is not None else "python"


def compiled_available():
    return _compiled is not None


def backend():
    return "cython" if _active is _compiled and _compiled is not None else "python"


@contextlib.contextmanager
def use_backend(name):
    """Temporarily switch backend ("cython" or "python")."""
    global _active
    if name == "cython" and _compiled is None:
        raise RuntimeError("compiled kernels are not built")
    prev = _active
    _active = _compiled if name == "cython" else _pykernels
    try:
        yield
    finally:
        _active = prev


def mlp_loss_grad(params, widths, act, use_bias, X, y, w, loss):
    return _active.mlp_loss_grad(
        np.ascontiguousarray(params, dtype=np.float64), np.ascontiguousarray(widths, dtype=np.int64),
        int(act), bool(use_bias), np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(y, dtype=np.float64), np.ascontiguousarray(w, dtype=np.float64), int(loss),
    )


def dict_descent(X, y, w, gates, gamma, bias, use_bias, steps, lr, l1, l2, loss, log_every):
    gates, gamma, bias, ts, tl, tr, bad = _active.dict_descent(
        np.ascontiguousarray(X, dtype=np.float64), np.ascontiguousarray(y, dtype=np.float64),
        np.ascontiguousarray(w, dtype=np.float64), np.asarray(gates, dtype=np.float64),
        np.asarray(gamma, dtype=np.float64), float(bias), bool(use_bias), int(steps), float(lr),
        float(l1), float(l2), int(loss), max(1, int(log_every)),
    )
    return np.asarray(gates), np.asarray(gamma), float(bias), list(ts), list(tl), list(tr), int(bad)
