"""Domain types, Gram products, column scaling and seeded sampling."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

#: Above this many columns the Gram matrix is never materialised.
GRAM_MAX_P = 4000


class CoheritError(Exception):
    """Base class for errors raised by this package."""


class ZeroColumnError(CoheritError, ValueError):
    """A design column has zero Euclidean norm."""

    def __init__(self, column: int):
        super().__init__(f"design column {column} has zero norm")
        self.column = column


class InvalidRhoError(CoheritError, ValueError):
    pass


class NoConvergenceError(CoheritError, RuntimeError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RegressionSample:
    """One data set: an ``n x p`` design and a length-``n`` response."""

    design: np.ndarray
    response: np.ndarray
    col_norms: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        X = _frozen(np.atleast_2d(self.design))
        y = _frozen(np.ravel(self.response))
        if X.ndim != 2:
            raise ValueError("design must be a 2-d array")
        n, p = X.shape
        if n < 2 or p < 1:
            raise ValueError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
        if y.shape[0] != n:
            raise ValueError(f"response has length {y.shape[0]}, design has {n} rows")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise ValueError("design and response must be finite")
        object.__setattr__(self, "design", X)
        object.__setattr__(self, "response", y)
        object.__setattr__(self, "col_norms", _frozen(np.linalg.norm(X, axis=0)))

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def p(self) -> int:
        return self.design.shape[1]

    def subset(self, rows) -> RegressionSample:
        rows = np.asarray(rows)
        return RegressionSample(self.design[rows], self.response[rows])

    def with_response(self, response) -> RegressionSample:
        return RegressionSample(self.design, response)


class GramView:
    """Lazy view of the sample covariance ``X'X/n`` of a design.

    The dense matrix is built on first use when ``p <= max_dense_p``;
    otherwise all products go through the design.
    """

    def __init__(self, design: np.ndarray | RegressionSample, max_dense_p: int = GRAM_MAX_P):
        if isinstance(design, RegressionSample):
            design = design.design
        X = np.asarray(design, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("design must be a 2-d array")
        self.n, self.p = X.shape
        self.scale = 1.0 / self.n
        self.max_dense_p = max_dense_p
        self._X = X

    @property
    def design(self) -> np.ndarray:
        return self._X

    @property
    def dense(self) -> bool:
        return self.p <= self.max_dense_p

    @cached_property
    def fortran_design(self) -> np.ndarray:
        return np.asfortranarray(self._X)

    @cached_property
    def matrix(self) -> np.ndarray:
        if not self.dense:
            raise ValueError(f"refusing to materialise a {self.p} x {self.p} Gram matrix")
        G = self._X.T @ self._X
        G *= self.scale
        # exact symmetry keeps row access valid for column updates
        G = 0.5 * (G + G.T)
        G.setflags(write=False)
        return G

    @cached_property
    def diagonal(self) -> np.ndarray:
        d = np.einsum("ij,ij->j", self._X, self._X) * self.scale
        d.setflags(write=False)
        return d

    @cached_property
    def row_space(self) -> np.ndarray:
        """Orthonormal basis (``p x rank``) of the row space of the design."""
        _, s, vt = np.linalg.svd(self._X, full_matrices=False)
        tol = s[0] * max(self._X.shape) * np.finfo(float).eps if s.size else 0.0
        basis = np.ascontiguousarray(vt[s > tol].T)
        basis.setflags(write=False)
        return basis

    @property
    def rank_deficient(self) -> bool:
        return self.row_space.shape[1] < self.p

    def gram_vec(self, v: np.ndarray) -> np.ndarray:
        """``X'(X v)/n``."""
        v = np.asarray(v, dtype=np.float64)
        if self.dense:
            return self.matrix @ v
        return self._X.T @ (self._X @ v) * self.scale

    def quad(self, v: np.ndarray) -> float:
        """``v' (X'X/n) v`` computed as ``||X v||^2 / n``."""
        Xv = self._X @ np.asarray(v, dtype=np.float64)
        return float(Xv @ Xv) * self.scale


def standardize_columns(sample: RegressionSample) -> tuple[RegressionSample, np.ndarray]:
    """Rescale every column to Euclidean norm ``sqrt(n)``.

    Returns the rescaled sample and ``scales`` with ``scales[j] =
    ||X_j|| / sqrt(n)``; a coefficient fitted on the rescaled design maps
    back to the original scale by dividing by ``scales``.
    """
    zero = np.flatnonzero(sample.col_norms == 0.0)
    if zero.size:
        raise ZeroColumnError(int(zero[0]))
    scales = sample.col_norms / np.sqrt(sample.n)
    return RegressionSample(sample.design / scales, sample.response), scales


@dataclass(frozen=True)
class RngStream:
    """Reproducible Gaussian stream keyed by ``(master_seed, stream_id)``.

    Every call to :meth:`generator` restarts the stream from draw zero, so
    a stream gives the same variates no matter which worker consumes it.
    ``path`` addresses independent sub-streams (see :meth:`child`).
    """

    master_seed: int
    stream_id: int = 0
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if self.master_seed < 0 or self.master_seed >= 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if self.stream_id < 0 or any(k < 0 for k in self.path):
            raise ValueError("stream ids must be non-negative")

    def child(self, key: int) -> RngStream:
        return RngStream(self.master_seed, self.stream_id, self.path + (int(key),))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_id, *self.path))
        return np.random.Generator(np.random.Philox(seq))

    def standard_normal(self, size) -> np.ndarray:
        return self.generator().standard_normal(size)


def sample_gaussian_ar1(n: int, p: int, rho: float, rng: RngStream) -> np.ndarray:
    """Draw ``n`` i.i.d. rows from ``N(0, Sigma)`` with ``Sigma_ij = rho**|i-j|``.

    Uses the stationary AR(1) recursion along each row, so no ``p x p``
    factorisation is formed.
    """
    if not -1.0 < rho < 1.0:
        raise InvalidRhoError(f"|rho| must be < 1, got {rho}")
    if n < 1 or p < 1:
        raise ValueError("n and p must be positive")
    Z = rng.standard_normal((n, p))
    if rho == 0.0:
        return Z
    innov = np.sqrt(1.0 - rho * rho)
    X = np.empty_like(Z)
    X[:, 0] = Z[:, 0]
    for j in range(1, p):
        X[:, j] = rho * X[:, j - 1] + innov * Z[:, j]
    return X


def sample_gaussian_cholesky(n: int, chol: np.ndarray, rng: RngStream) -> np.ndarray:
    """Draw rows ``L z`` for a user-supplied lower Cholesky factor ``L``."""
    chol = np.asarray(chol, dtype=np.float64)
    return rng.standard_normal((n, chol.shape[0])) @ chol.T
