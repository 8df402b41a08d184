"""Backend selection for the coordinate-descent sweeps.

The compiled extension is used when it imports; otherwise the numpy
fallback is used.  Setting ``COHERIT_PURE_PYTHON=1`` forces the fallback.
"""

import os

import numpy as np

from . import _kernels_py

CONVERGED = 0
MAX_SWEEPS = 1
DIVERGED = 2
UNBOUNDED = 3


def _load():
    if os.environ.get("COHERIT_PURE_PYTHON", "") not in ("", "0"):
        return _kernels_py
    try:
        from . import _ckernels
    except ImportError:
        return _kernels_py
    return _ckernels


_backend = _load()

BACKEND = _backend.BACKEND
cd_gram = _backend.cd_gram
cd_design = _backend.cd_design


def get_backend(name=None):
    """Return a kernel module by name (``"cython"`` or ``"python"``).

    ``None`` returns the active backend.  Raises ``ImportError`` if the
    compiled extension was requested but is not built.
    """
    if name is None:
        return _backend
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


class Sweeper:
    """Resumable coordinate descent on ``0.5 a x'Sx - c'x + sum pen|x|``.

    ``S`` is the sample covariance held by ``gram`` (a ``GramView``).  Each
    :meth:`run` call continues from the current iterate, which lets callers
    interleave their own checks between chunks of sweeps.
    """

    def __init__(self, gram, c, pen, a, x0=None, backend=None):
        self.gram = gram
        self.kernels = get_backend(backend)
        self.c = np.ascontiguousarray(c, dtype=np.float64)
        self.pen = np.ascontiguousarray(pen, dtype=np.float64)
        self.a = float(a)
        p = gram.p
        if x0 is None:
            self.x = np.zeros(p)
        else:
            self.x = np.array(x0, dtype=np.float64, copy=True)
        if gram.dense:
            self.aux = self.a * (gram.matrix @ self.x)
        else:
            self.aux = gram.design @ self.x
        self.sweeps = 0

    def run(self, tol, max_sweeps, cap=np.inf):
        gram = self.gram
        if gram.dense:
            done, kkt, status = self.kernels.cd_gram(
                gram.matrix, self.c, self.pen, self.a, self.x, self.aux,
                float(tol), int(max_sweeps), float(cap),
            )
        else:
            done, kkt, status = self.kernels.cd_design(
                gram.fortran_design, gram.diagonal, self.c, self.pen, self.a,
                self.x, self.aux, float(tol), int(max_sweeps), float(cap),
            )
        self.sweeps += done
        return done, kkt, status
