"""Fixed-pattern sparse symmetric linear algebra.

Everything in this module operates on a *fixed* sparsity pattern: a cyclic
band of admissible entries around the diagonal of an n x n symmetric matrix.
The pattern never grows: products evaluate admissible entries only, and the
factorization discards any fill-in from its output.

Contents:
  - SparsityPattern: cyclic-band admissibility rule and per-column index sets
  - SparseVector, SparseColumns, SparseSymMatrix: the sparse containers
  - merge: sparse-over-dense vector combination
  - restricted_outer_accumulate / restricted_product: pattern-limited products
  - incomplete_cholesky: pattern-restricted factorization with jitter retries
  - min_eigenvalue: smallest eigenvalue of the represented symmetric matrix
"""

from __future__ import annotations

import numpy as np


class FactorizationError(RuntimeError):
    """Incomplete Cholesky failed even after the jitter retry schedule."""


class SparsityPattern:
    """Cyclic banded sparsity pattern on a periodic n-dimensional state space.

    Entry (i, j) is admissible iff the cyclic distance
    min(|i-j|, n-|i-j|) is at most ``half_bandwidth``. Every column then has
    ``nsp = min(2*half_bandwidth + 1, n)`` admissible entries, centered (in
    the cyclic sense) on the diagonal. ``half_bandwidth = n // 2`` makes the
    pattern dense.
    """

    def __init__(self, n, half_bandwidth):
        n = int(n)
        h = int(half_bandwidth)
        if n < 1:
            raise ValueError(f"state dimension must be positive, got {n}")
        if h < 0 or h > n // 2:
            raise ValueError(
                f"half bandwidth must be in [0, n//2] = [0, {n // 2}], got {h}"
            )
        self.n = n
        self.half_bandwidth = h
        # Offsets of admissible entries relative to the diagonal.  For even n
        # with h == n/2 the offsets -n/2 and +n/2 alias the same entry; keep
        # one of them so every column index appears exactly once.
        if 2 * h == n:
            offsets = np.arange(-h + 1, h + 1)
        else:
            offsets = np.arange(-h, h + 1)
        self._offsets = offsets
        cols = (np.arange(n)[:, None] + offsets[None, :]) % n
        self.columns = np.sort(cols, axis=1)  # (n, nsp), row i = column i indices
        # forward-offset gather indices: _shifted[d] = (0+d, 1+d, ..., n-1+d) mod n
        self._shifted = (np.arange(n)[None, :] + np.arange(h + 1)[:, None]) % n

    @property
    def nsp(self):
        """Number of admissible entries per column."""
        return self.columns.shape[1]

    @classmethod
    def full(cls, n):
        """Pattern admitting every entry (half bandwidth n // 2)."""
        return cls(n, n // 2)

    def cyclic_distance(self, i, j):
        d = abs(int(i) - int(j))
        return min(d, self.n - d)

    def contains(self, i, j):
        return self.cyclic_distance(i, j) <= self.half_bandwidth

    def column_indices(self, i):
        """Sorted indices of admissible entries in column i."""
        return self.columns[i].copy()

    def __eq__(self, other):
        return (
            isinstance(other, SparsityPattern)
            and self.n == other.n
            and self.half_bandwidth == other.half_bandwidth
        )

    def __repr__(self):
        return f"SparsityPattern(n={self.n}, half_bandwidth={self.half_bandwidth})"


class SparseVector:
    """Length-n vector with explicit entries only at a set of indices.

    Reads outside the index set are exactly zero.
    """

    __slots__ = ("n", "indices", "values")

    def __init__(self, n, indices, values):
        self.n = int(n)
        indices = np.asarray(indices, dtype=np.intp).ravel()
        values = np.asarray(values, dtype=float).ravel()
        if indices.shape != values.shape:
            raise ValueError("indices and values must have the same length")
        if indices.size:
            if indices.min() < 0 or indices.max() >= self.n:
                raise ValueError("index out of range")
            if np.unique(indices).size != indices.size:
                raise ValueError("duplicate indices")
            order = np.argsort(indices)
            indices = indices[order]
            values = values[order]
        self.indices = indices
        self.values = values

    @classmethod
    def empty(cls, n):
        return cls(n, np.empty(0, dtype=np.intp), np.empty(0))

    def to_dense(self):
        out = np.zeros(self.n)
        out[self.indices] = self.values
        return out

    def __len__(self):
        return self.n

    def __getitem__(self, i):
        k = np.searchsorted(self.indices, i)
        if k < self.indices.size and self.indices[k] == i:
            return float(self.values[k])
        return 0.0


def merge(x, y):
    """Combine sparse ``x`` over dense ``y``: take x where defined, y elsewhere."""
    y = np.asarray(y, dtype=float)
    if y.shape != (x.n,):
        raise ValueError(f"dimension mismatch: sparse has n={x.n}, dense has shape {y.shape}")
    out = y.copy()
    out[x.indices] = x.values
    return out


class SparseSymMatrix:
    """Symmetric matrix stored only at pattern entries.

    Storage is one slot per unordered admissible pair: ``band[i, d]`` holds
    the value at (i, (i+d) % n) for forward cyclic offsets d = 0..h, so the
    footprint is n*(h+1) scalars. Reads outside the pattern return exactly 0,
    and symmetry holds by construction (a single slot backs both triangles).
    """

    __slots__ = ("pattern", "band")

    def __init__(self, pattern, band):
        self.pattern = pattern
        band = np.asarray(band, dtype=float)
        expected = (pattern.n, pattern.half_bandwidth + 1)
        if band.shape != expected:
            raise ValueError(f"band must have shape {expected}, got {band.shape}")
        self.band = band

    @classmethod
    def zeros(cls, pattern):
        return cls(pattern, np.zeros((pattern.n, pattern.half_bandwidth + 1)))

    @classmethod
    def identity(cls, pattern, scale=1.0):
        band = np.zeros((pattern.n, pattern.half_bandwidth + 1))
        band[:, 0] = scale
        return cls(pattern, band)

    @classmethod
    def from_dense(cls, dense, pattern):
        """Pattern-restricted (and symmetrized) copy of a dense matrix."""
        dense = np.asarray(dense, dtype=float)
        n, h = pattern.n, pattern.half_bandwidth
        if dense.shape != (n, n):
            raise ValueError(f"expected a {n}x{n} matrix, got {dense.shape}")
        band = np.empty((n, h + 1))
        idx = np.arange(n)
        for d in range(h + 1):
            j = (idx + d) % n
            band[:, d] = 0.5 * (dense[idx, j] + dense[j, idx])
        return cls(pattern, band)

    @property
    def n(self):
        return self.pattern.n

    def get(self, i, j):
        """Value at (i, j); exactly 0.0 outside the pattern."""
        n, h = self.pattern.n, self.pattern.half_bandwidth
        d = (j - i) % n
        if d <= h:
            return float(self.band[i, d])
        d = (i - j) % n
        if d <= h:
            return float(self.band[j, d])
        return 0.0

    def __getitem__(self, ij):
        return self.get(*ij)

    def to_dense(self):
        n, h = self.pattern.n, self.pattern.half_bandwidth
        out = np.zeros((n, n))
        idx = np.arange(n)
        for d in range(h + 1):
            j = (idx + d) % n
            out[idx, j] = self.band[:, d]
            out[j, idx] = self.band[:, d]
        return out

    def diagonal(self):
        return self.band[:, 0].copy()

    def add_scaled_identity(self, c):
        band = self.band.copy()
        band[:, 0] += c
        return SparseSymMatrix(self.pattern, band)

    def copy(self):
        return SparseSymMatrix(self.pattern, self.band.copy())

    def _check_same_pattern(self, other):
        if self.pattern != other.pattern:
            raise ValueError("patterns differ")

    def __add__(self, other):
        self._check_same_pattern(other)
        return SparseSymMatrix(self.pattern, self.band + other.band)

    def __sub__(self, other):
        self._check_same_pattern(other)
        return SparseSymMatrix(self.pattern, self.band - other.band)

    def __mul__(self, c):
        return SparseSymMatrix(self.pattern, self.band * float(c))

    __rmul__ = __mul__


class SparseColumns:
    """A set of n sparse column vectors sharing one pattern.

    Column i is supported on the pattern's column-i index set; ``values[i]``
    is aligned with ``pattern.columns[i]``.
    """

    __slots__ = ("pattern", "values")

    def __init__(self, pattern, values):
        self.pattern = pattern
        values = np.asarray(values, dtype=float)
        if values.shape != pattern.columns.shape:
            raise ValueError(
                f"values must have shape {pattern.columns.shape}, got {values.shape}"
            )
        self.values = values

    @classmethod
    def from_dense(cls, dense, pattern):
        """Extract pattern-column entries of a dense matrix (column i of each)."""
        dense = np.asarray(dense, dtype=float)
        vals = dense[pattern.columns, np.arange(pattern.n)[:, None]]
        return cls(pattern, vals)

    def column(self, i):
        return SparseVector(self.pattern.n, self.pattern.columns[i], self.values[i])

    def to_dense(self):
        n = self.pattern.n
        out = np.zeros((n, n))
        out[self.pattern.columns, np.arange(n)[:, None]] = self.values
        return out


def restricted_outer_accumulate(columns, weights, pattern):
    """Weighted sum of outer products, evaluated only at pattern entries.

    result(i, j) = sum_k w_k * c_k[i] * c_k[j] for admissible (i, j); entries
    outside the pattern are never computed.
    """
    C = np.atleast_2d(np.asarray(columns, dtype=float))
    w = np.asarray(weights, dtype=float).ravel()
    n, h = pattern.n, pattern.half_bandwidth
    if C.shape[1] != n:
        raise ValueError(f"columns must have length {n}, got {C.shape[1]}")
    if w.shape[0] != C.shape[0]:
        raise ValueError("one weight per column required")
    band = np.empty((n, h + 1))
    Cw = C * w[:, None]
    for d in range(h + 1):
        band[:, d] = np.einsum("ki,ki->i", Cw, C[:, pattern._shifted[d]])
    return SparseSymMatrix(pattern, band)


def restricted_product(A, B, pattern):
    """Pattern entries of the (symmetric in exact arithmetic) product A @ B.

    The result is symmetrized entrywise: value at admissible (i, j) is
    0.5 * ((A@B)[i, j] + (A@B)[j, i]). The caller is responsible for A @ B
    being symmetric up to rounding.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n = pattern.n
    if A.ndim != 2 or B.ndim != 2 or A.shape[0] != n or B.shape[1] != n \
            or A.shape[1] != B.shape[0]:
        raise ValueError(f"incompatible shapes {A.shape} x {B.shape} for n={n}")
    F = A @ B
    return SparseSymMatrix.from_dense(F, pattern)


def incomplete_cholesky(P, scale=1.0):
    """Incomplete Cholesky factor of ``scale * P``, restricted to P's pattern.

    The standard lower Cholesky recurrence runs in natural index order with
    fill-in allowed (for a cyclic band, fill occurs at the wrap corner); the
    factor is then restricted to the pattern, discarding the fill. If the
    exact factor happens to be supported inside the pattern - as for banded
    matrices without the cyclic wrap, or for a dense pattern - the result is
    the exact factor. Computing through the fill keeps the factorization
    feasible for every positive definite input, which barely-positive
    covariances (fresh out of the gamma repair) do not permit when fill
    contributions are zeroed inside the recurrence.

    On numerical failure the factorization is retried on
    ``scale * P + jitter * I`` with jitter doubling from 1e-10 for at most
    20 retries.

    Returns
    -------
    (L, jitter) : (SparseColumns, float)
        Factor columns (the sigma-point perturbation vectors) and the jitter
        that was finally applied (0.0 when none was needed).
    """
    if scale <= 0.0:
        raise ValueError(f"scale must be positive, got {scale}")
    pattern = P.pattern
    n = pattern.n
    A0 = P.to_dense()
    A0 *= scale
    jitter = 0.0
    for _ in range(21):
        A = A0 if jitter == 0.0 else A0 + jitter * np.eye(n)
        try:
            L = np.linalg.cholesky(A)
        except np.linalg.LinAlgError:
            jitter = 1e-10 if jitter == 0.0 else 2.0 * jitter
            continue
        return SparseColumns.from_dense(L, pattern), jitter
    raise FactorizationError(
        f"incomplete Cholesky failed after 20 jitter retries (last jitter {jitter / 2:g})"
    )


def min_eigenvalue(P):
    """Smallest eigenvalue of the symmetric matrix represented by ``P``.

    Off-pattern entries are zero, i.e. the eigenvalue is that of the full
    symmetric completion. Accepts a SparseSymMatrix or a dense symmetric
    array.
    """
    A = P.to_dense() if isinstance(P, SparseSymMatrix) else np.asarray(P, dtype=float)
    return float(np.linalg.eigvalsh(A)[0])
