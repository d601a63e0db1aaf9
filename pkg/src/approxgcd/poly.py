"""Polynomial arithmetic, weighted seminorms and structured matrices.

Coefficients are always stored in ascending degree order: ``coeffs[j]`` is the
coefficient of ``z**j``.  A polynomial carries a degree *bound* ``n`` with
``len(coeffs) == n + 1``; leading zeros are allowed, so the bound is not the
algebraic degree.

Weights live in ``[0, inf]``.  ``np.inf`` marks a frozen coefficient and ``0``
a free (missing) one; ``0 * inf`` is taken to be ``0``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

INF = np.inf


def _as_float_vector(x, name="coeffs") -> np.ndarray:
    arr = np.array(x, dtype=float).reshape(-1)
    if arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Polynomial:
    """Real polynomial with a degree bound, ascending coefficients."""

    coeffs: np.ndarray

    def __init__(self, coeffs):
        object.__setattr__(self, "coeffs", _as_float_vector(coeffs))

    @property
    def bound(self) -> int:
        return self.coeffs.size - 1

    def __array__(self, dtype=None, copy=None):
        return np.array(self.coeffs, dtype=dtype)

    def __len__(self) -> int:
        return self.coeffs.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, Polynomial):
            return NotImplemented
        return np.array_equal(self.coeffs, other.coeffs)

    def __hash__(self):
        return hash(self.coeffs.tobytes())

    def __repr__(self) -> str:
        return f"Polynomial({self.coeffs.tolist()})"

    def is_zero(self) -> bool:
        return not np.any(self.coeffs)


class PolyTuple(tuple):
    """An N-tuple of polynomials with fixed degree bounds ``n = (n_1, ..., n_N)``."""

    def __new__(cls, polys: Iterable):
        items = tuple(p if isinstance(p, Polynomial) else Polynomial(p) for p in polys)
        if not items:
            raise ValueError("a PolyTuple needs at least one polynomial")
        return super().__new__(cls, items)

    @property
    def degrees(self) -> tuple[int, ...]:
        return tuple(p.bound for p in self)

    @property
    def n_min(self) -> int:
        return min(self.degrees)

    @property
    def n_max(self) -> int:
        return max(self.degrees)

    def stacked(self) -> np.ndarray:
        """All coefficients concatenated, polynomial by polynomial."""
        return np.concatenate([p.coeffs for p in self])

    @classmethod
    def split(cls, vec, degrees: Sequence[int]) -> "PolyTuple":
        """Inverse of :meth:`stacked` for the given degree bounds."""
        vec = np.asarray(vec, dtype=float)
        edges = np.cumsum([0] + [n + 1 for n in degrees])
        if edges[-1] != vec.size:
            raise ValueError(f"vector of length {vec.size} does not split into bounds {tuple(degrees)}")
        return cls(vec[a:b] for a, b in zip(edges[:-1], edges[1:]))

    def is_zero(self) -> bool:
        return all(p.is_zero() for p in self)

    def __repr__(self) -> str:
        return "PolyTuple(" + ", ".join(str(p.coeffs.tolist()) for p in self) + ")"


class WeightScheme(tuple):
    """Per-coefficient weights in ``[0, inf]``, shaped like a PolyTuple."""

    def __new__(cls, weights: Iterable):
        items = []
        for w in weights:
            arr = _as_float_vector(w, "weights")
            if np.any(np.isnan(arr)) or np.any(arr < 0):
                raise ValueError("weights must be nonnegative (inf allowed)")
            items.append(arr)
        if not items:
            raise ValueError("a WeightScheme needs at least one weight vector")
        return super().__new__(cls, items)

    @classmethod
    def uniform(cls, degrees: Sequence[int], value: float = 1.0) -> "WeightScheme":
        return cls(np.full(n + 1, value) for n in degrees)

    @property
    def degrees(self) -> tuple[int, ...]:
        return tuple(w.size - 1 for w in self)

    def stacked(self) -> np.ndarray:
        return np.concatenate(list(self))

    def check_shape(self, p: PolyTuple) -> None:
        if self.degrees != p.degrees:
            raise ValueError(f"weight shape {self.degrees} does not match polynomial bounds {p.degrees}")


@dataclass(frozen=True)
class MosaicSpec:
    """Block sizes of a mosaic Hankel matrix / matrix-polynomial multiplication matrix.

    ``row_blocks`` is ``k = (k_1, ..., k_K)`` and ``col_blocks`` is
    ``l = (l_1, ..., l_L)``.
    """

    row_blocks: tuple[int, ...]
    col_blocks: tuple[int, ...]

    def __init__(self, row_blocks, col_blocks):
        k = tuple(int(x) for x in np.atleast_1d(row_blocks))
        l = tuple(int(x) for x in np.atleast_1d(col_blocks))
        if not k or not l or min(k) < 1 or min(l) < 1:
            raise ValueError("all block sizes must be >= 1")
        object.__setattr__(self, "row_blocks", k)
        object.__setattr__(self, "col_blocks", l)

    @property
    def n_rows(self) -> int:
        return sum(self.row_blocks)

    @property
    def n_cols(self) -> int:
        return sum(self.col_blocks)

    def segment_lengths(self) -> list[int]:
        """Lengths of the data segments ``c^(i,j)`` in column-block-major order."""
        return [ki + lj - 1 for lj in self.col_blocks for ki in self.row_blocks]

    @property
    def data_length(self) -> int:
        return sum(self.segment_lengths())

    def segment_offsets(self) -> np.ndarray:
        """``offsets[j, i]`` is where segment ``c^(i,j)`` starts in the data vector."""
        lens = np.array(self.segment_lengths()).reshape(len(self.col_blocks), len(self.row_blocks))
        starts = np.concatenate([[0], np.cumsum(lens.ravel())[:-1]])
        return starts.reshape(lens.shape)


def conv(p, q) -> Polynomial:
    """Product of two polynomials; the bound of the result is the sum of the bounds."""
    return Polynomial(np.convolve(np.asarray(p, dtype=float), np.asarray(q, dtype=float)))


def multmat(h, m: int) -> np.ndarray:
    """Multiplication matrix ``T_m(h)`` of shape ``(m + d + 1, m + 1)``.

    Column ``j`` holds the coefficients of ``h`` shifted down by ``j`` rows, so
    ``multmat(h, m) @ g == conv(h, g)`` for any ``g`` with bound ``m``.
    """
    if m < 0:
        raise ValueError("m must be >= 0")
    h = np.asarray(h, dtype=float).reshape(-1)
    d = h.size - 1
    T = np.zeros((m + d + 1, m + 1))
    for j in range(m + 1):
        T[j:j + d + 1, j] = h
    return T


def weighted_seminorm_sq(p, w) -> float:
    """``sum_j w_j p_j**2`` with ``0 * inf = 0``; ``inf`` if a frozen entry is nonzero."""
    p = np.asarray(p, dtype=float).reshape(-1)
    w = np.asarray(w, dtype=float).reshape(-1)
    if p.shape != w.shape:
        raise ValueError(f"length mismatch: {p.size} coefficients vs {w.size} weights")
    frozen = np.isinf(w)
    if np.any(p[frozen] != 0):
        return INF
    return float(np.sum(w[~frozen] * p[~frozen] ** 2))


def tuple_dist_sq(p: Sequence, q: Sequence, w: Sequence) -> float:
    """Weighted squared distance between two tuples of equal shape."""
    if not (len(p) == len(q) == len(w)):
        raise ValueError("tuples and weights must have the same number of polynomials")
    total = 0.0
    for pk, qk, wk in zip(p, q, w):
        pk = np.asarray(pk, dtype=float)
        qk = np.asarray(qk, dtype=float)
        if pk.shape != qk.shape:
            raise ValueError(f"shape mismatch {pk.shape} vs {qk.shape}")
        total += weighted_seminorm_sq(pk - qk, wk)
    return total


def _row_blocks_of(P: np.ndarray, spec: MosaicSpec) -> list[np.ndarray]:
    if P.shape[0] != spec.n_rows:
        raise ValueError(f"P has {P.shape[0]} rows, row blocks sum to {spec.n_rows}")
    edges = np.cumsum((0,) + spec.row_blocks)
    return [P[a:b] for a, b in zip(edges[:-1], edges[1:])]


def matmultmat(P, spec: MosaicSpec) -> np.ndarray:
    """Dense matrix-polynomial multiplication matrix ``M_{k,l}(P)``.

    For every column block ``l_j`` the block ``M_{k,l_j}(P)`` has block entries
    ``multmat(P^(i,tau), l_j - 1)`` (row block ``i``, column ``tau`` of ``P``);
    the blocks for different ``l_j`` are placed block-diagonally.  Columns
    inside ``M_{k,l_j}`` are grouped by ``tau``.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    blocks = _row_blocks_of(P, spec)
    t = P.shape[1]
    diag = []
    for lj in spec.col_blocks:
        rows = []
        for Pi in blocks:
            rows.append(np.hstack([multmat(Pi[:, tau], lj - 1) for tau in range(t)]))
        diag.append(np.vstack(rows))
    n_rows = sum(b.shape[0] for b in diag)
    n_cols = sum(b.shape[1] for b in diag)
    M = np.zeros((n_rows, n_cols))
    r = c = 0
    for b in diag:
        M[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return M


def hankel(c, k: int, l: int) -> np.ndarray:
    """``k x l`` Hankel matrix with ``H[a, b] = c[a + b]``."""
    c = np.asarray(c, dtype=float).reshape(-1)
    if c.size != k + l - 1:
        raise ValueError(f"Hankel {k}x{l} needs {k + l - 1} entries, got {c.size}")
    return sliding_window_view(c, l)[:k].copy()


def mosaic_hankel(c, spec: MosaicSpec) -> np.ndarray:
    """Mosaic Hankel matrix ``H_{k,l}(c)``; segments of ``c`` are column-block-major."""
    c = np.asarray(c, dtype=float).reshape(-1)
    if c.size != spec.data_length:
        raise ValueError(f"data length {c.size} does not match mosaic size {spec.data_length}")
    offs = spec.segment_offsets()
    cols = []
    for j, lj in enumerate(spec.col_blocks):
        col = []
        for i, ki in enumerate(spec.row_blocks):
            a = offs[j, i]
            col.append(hankel(c[a:a + ki + lj - 1], ki, lj))
        cols.append(np.vstack(col))
    return np.hstack(cols)
