"""Weighted least-squares / least-norm solvers and fast variable-projection evaluators.

The central object is :class:`VarproSystem`, which for a kernel parameter
``P`` and data ``c`` evaluates

    f_LN(P) = s(P)^T Gamma(P)^{-1} s(P),
    Gamma(P) = M(P)^T diag(w^{-1}) M(P),   s(P) = M(P)^T c,

where ``M(P)`` is the matrix-polynomial multiplication matrix of a mosaic
structure.  ``Gamma`` is banded once its columns are interleaved (unknown
``b * t + tau`` instead of ``tau * l + b``); it is assembled directly in LAPACK
lower-band storage and factored with ``dpbtrf``.  Nothing here ever forms the
dense ``M``.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sl
import scipy.sparse as sp
from numpy.lib.stride_tricks import sliding_window_view
from scipy.linalg import lapack

from .poly import MosaicSpec

EPS = np.finfo(float).eps
# Reciprocal condition number below which Gamma is treated as numerically singular.
DEFAULT_RCOND_TOL = 1e-10


class SingularSystemError(np.linalg.LinAlgError):
    """Raised when a dense least-squares / least-norm system is rank deficient."""


class IllConditionedGamma(np.linalg.LinAlgError):
    """Cholesky factorization of Gamma broke down or Gamma is numerically singular.

    ``pivot`` is the 1-based leading minor reported by LAPACK (``None`` if the
    factorization succeeded but the condition estimate was below tolerance).
    """

    def __init__(self, message: str, pivot: int | None = None, rcond: float | None = None):
        super().__init__(message)
        self.pivot = pivot
        self.rcond = rcond


def _inv_weights(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    with np.errstate(divide="ignore"):
        winv = np.where(np.isinf(w), 0.0, 1.0 / w)
    return winv


def _full_column_rank(B: np.ndarray) -> bool:
    if B.shape[0] < B.shape[1]:
        return False
    sv = np.linalg.svd(B, compute_uv=False)
    return sv.size == 0 or sv[-1] > max(B.shape) * EPS * sv[0]


def solve_wls(A, b, v):
    """Minimize ``||A x - b||_v^2`` for weights ``v`` in ``[0, inf)``.

    Returns ``(x, y, f)`` with ``y = diag(sqrt(v)) (A x - b)`` and ``f = ||y||^2``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    v = np.asarray(v, dtype=float).reshape(-1)
    if np.any(v < 0) or np.any(~np.isfinite(v)):
        raise ValueError("least-squares weights must be finite and nonnegative")
    sv = np.sqrt(v)
    B = sv[:, None] * A
    if not _full_column_rank(B):
        raise SingularSystemError("rank(diag(sqrt(v)) A) < number of unknowns")
    x = np.linalg.lstsq(B, sv * b, rcond=None)[0]
    y = sv * (A @ x - b)
    return x, y, float(y @ y)


def solve_wln(A, c, w):
    """Minimize ``||c - z||_w^2`` subject to ``A^T z = 0`` for ``w`` in ``(0, inf]``.

    Returns ``(z, y, f)`` where ``c - z = diag(sqrt(1/w)) y`` and ``f = ||y||^2``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    c = np.asarray(c, dtype=float).reshape(-1)
    w = np.asarray(w, dtype=float).reshape(-1)
    if np.any(w <= 0):
        raise ValueError("least-norm weights must be positive (inf allowed)")
    winv = _inv_weights(w)
    B = np.sqrt(winv)[:, None] * A
    if not _full_column_rank(B):
        raise SingularSystemError("rank(diag(sqrt(1/w)) A) < number of columns")
    G = B.T @ B
    lam = sl.cho_solve(sl.cho_factor(G), A.T @ c)
    correction = winv * (A @ lam)
    z = c - correction
    y = np.sqrt(winv) * (A @ lam)
    return z, y, float(c @ (A @ lam))


def ls_to_ln_transform(b, v):
    """Map least-squares data ``(b, v)`` to least-norm data ``(c, w)``.

    ``w = 1 / v`` and ``c = diag(1/w) b = v * b``; zero LS weights become
    infinite LN weights.
    """
    b = np.asarray(b, dtype=float).reshape(-1)
    v = np.asarray(v, dtype=float).reshape(-1)
    with np.errstate(divide="ignore"):
        w = np.where(v == 0, np.inf, 1.0 / v)
    return v * b, w


@dataclass(frozen=True)
class KernelParam:
    """Kernel parameter ``P`` (``sum(k)`` rows, ``t`` columns) with its mosaic structure."""

    P: np.ndarray
    spec: MosaicSpec

    def __init__(self, P, spec: MosaicSpec):
        P = np.array(P, dtype=float)
        if P.ndim == 1:
            P = P[:, None]
        if P.shape[0] != spec.n_rows:
            raise ValueError(f"P has {P.shape[0]} rows but row blocks sum to {spec.n_rows}")
        P.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "spec", spec)

    @property
    def t(self) -> int:
        return self.P.shape[1]

    def blocks(self) -> list[np.ndarray]:
        edges = np.cumsum((0,) + self.spec.row_blocks)
        return [self.P[a:b] for a, b in zip(edges[:-1], edges[1:])]

    def full_rank(self) -> bool:
        return np.linalg.matrix_rank(self.P) == self.t


@dataclass
class LnEvaluation:
    cost: float
    grad: np.ndarray
    gn_matrix: np.ndarray
    correction: np.ndarray
    regularized: bool = False


@dataclass(eq=False)
class VarproSystem:
    """Assembled least-norm system for one value of ``P``.

    Attributes are computed once in :func:`build_varpro`; the derived
    quantities (solution, corrected data, Jacobian) are cached on first use.
    """

    param: KernelParam
    data: np.ndarray
    ln_weights: np.ndarray
    winv: np.ndarray
    gamma_band: np.ndarray
    chol: np.ndarray
    bandwidth: int
    s: np.ndarray
    regularized: bool = False
    ridge: float = 0.0
    rcond: float = 1.0
    _inter: np.ndarray = field(default=None, repr=False)

    @property
    def spec(self) -> MosaicSpec:
        return self.param.spec

    @property
    def n_unknowns(self) -> int:
        return self.s.size

    # -- linear algebra with Gamma ------------------------------------------------
    def gamma_solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``Gamma x = rhs`` (canonical ordering; ``rhs`` may be 2-D)."""
        rhs = np.asarray(rhs, dtype=float)
        inter = self._inter
        sol, info = lapack.dpbtrs(self.chol, rhs[inter], lower=1)
        if info != 0:
            raise np.linalg.LinAlgError(f"dpbtrs failed with info={info}")
        out = np.empty_like(sol)
        out[inter] = sol
        return out

    def gamma_dense(self) -> np.ndarray:
        """Dense Gamma in canonical column order (ridge included)."""
        n = self.n_unknowns
        G = np.zeros((n, n))
        inter = self._inter
        for u in range(self.gamma_band.shape[0]):
            jj = np.arange(n - u)
            G[inter[jj + u], inter[jj]] = self.gamma_band[u, : n - u]
            G[inter[jj], inter[jj + u]] = self.gamma_band[u, : n - u]
        return G

    # -- structured products ------------------------------------------------------
    @functools.cached_property
    def sparse_M(self) -> sp.csr_matrix:
        return multiplication_operator(self.param)

    def apply_M(self, x: np.ndarray) -> np.ndarray:
        return self.sparse_M @ x

    def apply_Mt(self, v: np.ndarray) -> np.ndarray:
        return self.sparse_M.T @ v

    # -- solution -------------------------------------------------------------------
    @functools.cached_property
    def solution(self) -> np.ndarray:
        """``Gamma^{-1} s``; in least-squares form this is the inner minimizer."""
        return self.gamma_solve(self.s)

    @functools.cached_property
    def My(self) -> np.ndarray:
        return self.apply_M(self.solution)

    @functools.cached_property
    def corrected(self) -> np.ndarray:
        """Least-norm solution ``z*``: the data corrected onto the kernel of ``M^T``."""
        return self.data - self.winv * self.My

    @property
    def residual(self) -> np.ndarray:
        """``y*_LN = diag(sqrt(1/w)) M Gamma^{-1} s``."""
        return np.sqrt(self.winv) * self.My

    @functools.cached_property
    def cost(self) -> float:
        return max(float(self.s @ self.solution), 0.0)

    def grad_from(self, chat: np.ndarray) -> np.ndarray:
        """``2 * H_{k,l}(chat) Y``: the gradient pairing of ``chat`` with the solution.

        With ``chat = z*`` this is the gradient of ``f_LN`` with respect to ``P``.
        """
        spec = self.spec
        P = self.param.P
        t = P.shape[1]
        y = self.solution
        offs = spec.segment_offsets()
        xoff = _x_offsets(spec, t)
        grad = np.zeros_like(P)
        r0 = 0
        for i, ki in enumerate(spec.row_blocks):
            for j, lj in enumerate(spec.col_blocks):
                seg = chat[offs[j, i]: offs[j, i] + ki + lj - 1]
                Y = y[xoff[j]: xoff[j] + t * lj].reshape(t, lj)
                grad[r0:r0 + ki] += sliding_window_view(seg, lj)[:ki] @ Y.T
            r0 += ki
        return 2.0 * grad

    @functools.cached_property
    def jacobian(self) -> np.ndarray:
        """Jacobian of ``y*_LN`` with respect to ``P.ravel()`` (row-major)."""
        spec = self.spec
        P = self.param.P
        t = P.shape[1]
        y = self.solution
        chat = self.corrected
        offs = spec.segment_offsets()
        xoff = _x_offsets(spec, t)
        m = self.data.size
        n_par = P.size
        A1 = np.zeros((m, n_par))
        B = np.zeros((self.n_unknowns, n_par))
        r0 = 0
        for i, ki in enumerate(spec.row_blocks):
            for a in range(ki):
                for tau in range(t):
                    theta = (r0 + a) * t + tau
                    for j, lj in enumerate(spec.col_blocks):
                        base = offs[j, i]
                        yj = y[xoff[j] + tau * lj: xoff[j] + (tau + 1) * lj]
                        A1[base + a: base + a + lj, theta] = yj
                        B[xoff[j] + tau * lj: xoff[j] + (tau + 1) * lj, theta] = chat[base + a: base + a + lj]
            r0 += ki
        inner = self.gamma_solve(B - self.apply_Mt(self.winv[:, None] * A1))
        return np.sqrt(self.winv)[:, None] * (A1 + self.apply_M(inner))


def _x_offsets(spec: MosaicSpec, t: int) -> np.ndarray:
    return np.concatenate([[0], np.cumsum([t * lj for lj in spec.col_blocks])])


def interleave_order(spec: MosaicSpec, t: int) -> np.ndarray:
    """``order[I]`` is the canonical index of banded (interleaved) unknown ``I``."""
    xoff = _x_offsets(spec, t)
    parts = []
    for j, lj in enumerate(spec.col_blocks):
        b, tau = np.meshgrid(np.arange(lj), np.arange(t), indexing="ij")
        parts.append(xoff[j] + (tau * lj + b).ravel())
    return np.concatenate(parts)


def multiplication_operator(param: KernelParam) -> sp.csr_matrix:
    """Sparse ``M_{k,l}(P)`` with canonical column order."""
    spec = param.spec
    t = param.t
    offs = spec.segment_offsets()
    xoff = _x_offsets(spec, t)
    rows, cols, vals = [], [], []
    for i, (ki, Pi) in enumerate(zip(spec.row_blocks, param.blocks())):
        a = np.arange(ki)
        for j, lj in enumerate(spec.col_blocks):
            b = np.arange(lj)
            for tau in range(t):
                aa, bb = np.meshgrid(a, b, indexing="ij")
                rows.append((offs[j, i] + aa + bb).ravel())
                cols.append((xoff[j] + tau * lj + bb).ravel())
                vals.append(np.repeat(Pi[:, tau], lj))
    m = spec.data_length
    n = xoff[-1]
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, n)
    )


def assemble_gamma_band(param: KernelParam, winv: np.ndarray) -> tuple[np.ndarray, int]:
    """Lower-band storage of ``M^T diag(winv) M`` in interleaved order.

    Entry ``(b, tau), (b - delta, tau2)`` of column block ``j`` equals
    ``sum_i sum_a P_i[a, tau] P_i[a + delta, tau2] winv_ij[a + b]``, a sliding
    correlation of the weights with lagged products of ``P``.
    """
    spec = param.spec
    t = param.t
    offs = spec.segment_offsets()
    mu = min(max(spec.row_blocks), max(spec.col_blocks))
    n = t * spec.n_cols
    bw = min(t * mu - 1, n - 1)
    ab = np.zeros((bw + 1, n))
    xoff = _x_offsets(spec, t)
    blocks = param.blocks()
    tt = np.arange(t)
    tau_a, tau_b = np.meshgrid(tt, tt, indexing="ij")
    tau_a = tau_a.ravel()
    tau_b = tau_b.ravel()
    for j, lj in enumerate(spec.col_blocks):
        for i, ki in enumerate(spec.row_blocks):
            Pi = blocks[i]
            wseg = winv[offs[j, i]: offs[j, i] + ki + lj - 1]
            if not np.any(wseg):
                continue
            wwin = sliding_window_view(wseg, ki)[:lj]
            for delta in range(min(ki, lj)):
                Q = Pi[: ki - delta, :, None] * Pi[delta:, None, :]
                vals = wwin[:, : ki - delta] @ Q.reshape(ki - delta, t * t)
                b = np.arange(delta, lj)
                for col, (ta, tb) in enumerate(zip(tau_a, tau_b)):
                    if delta == 0 and ta < tb:
                        continue
                    I = xoff[j] + b * t + ta
                    J = xoff[j] + (b - delta) * t + tb
                    ab[I - J, J] += vals[b, col]
    return ab, bw


def _structured_s(param: KernelParam, c: np.ndarray) -> np.ndarray:
    spec = param.spec
    t = param.t
    offs = spec.segment_offsets()
    xoff = _x_offsets(spec, t)
    s = np.zeros(xoff[-1])
    blocks = param.blocks()
    for j, lj in enumerate(spec.col_blocks):
        acc = np.zeros((lj, t))
        for i, ki in enumerate(spec.row_blocks):
            seg = c[offs[j, i]: offs[j, i] + ki + lj - 1]
            acc += sliding_window_view(seg, ki)[:lj] @ blocks[i]
        s[xoff[j]: xoff[j + 1]] = acc.T.ravel()
    return s


def _band_norm1(ab: np.ndarray) -> float:
    """1-norm of the symmetric matrix held in lower-band storage ``ab``."""
    n = ab.shape[1]
    a = np.abs(ab)
    col = a.sum(axis=0)
    for u in range(1, ab.shape[0]):
        col[u:] += a[u, : n - u]
    return float(col.max())


def _inv_norm1_estimate(chol: np.ndarray, n_iter: int = 5) -> float:
    """Hager's estimate of ``||Gamma^{-1}||_1`` from the banded Cholesky factor.

    Deterministic (starts from the uniform vector) and costs a few banded solves.
    """
    n = chol.shape[1]

    def solve(v):
        return lapack.dpbtrs(chol, v, lower=1)[0]

    x = np.full(n, 1.0 / n)
    est = 0.0
    last = -1
    for _ in range(n_iter):
        y = solve(x)
        est = max(est, float(np.abs(y).sum()))
        z = solve(np.where(y >= 0, 1.0, -1.0))
        j = int(np.argmax(np.abs(z)))
        if j == last or np.abs(z[j]) <= z @ x:
            break
        last = j
        x = np.zeros(n)
        x[j] = 1.0
    # alternating-sign probe guards against a poor start (as in LAPACK's xLACN2)
    alt = np.array([(-1) ** i * (1 + i / max(n - 1, 1)) for i in range(n)])
    est = max(est, 2.0 * float(np.abs(solve(alt)).sum()) / (3 * n))
    return est


def rcond_estimate(ab: np.ndarray, chol: np.ndarray) -> float:
    """Reciprocal 1-norm condition number estimate of a factored banded SPD matrix."""
    nrm = _band_norm1(ab)
    if nrm == 0:
        return 0.0
    return 1.0 / (nrm * _inv_norm1_estimate(chol))


def build_varpro(
    P,
    c,
    w,
    *,
    spec: MosaicSpec | None = None,
    regularize: bool = False,
    gamma_reg: float = 1e5,
    rcond_tol: float = DEFAULT_RCOND_TOL,
) -> VarproSystem:
    """Assemble and factor the least-norm system for parameter ``P``.

    ``w`` are least-norm weights in ``(0, inf]``; rows with infinite weight drop
    out of Gamma.  If the factorization breaks down, or the reciprocal condition
    number of Gamma is below ``rcond_tol``, :class:`IllConditionedGamma` is raised
    unless ``regularize`` is set, in which case Gamma is replaced by
    ``Gamma + gamma_reg * eps * max(diag(Gamma)) * I`` and the system is flagged.
    """
    param = P if isinstance(P, KernelParam) else KernelParam(P, spec)
    c = np.asarray(c, dtype=float).reshape(-1)
    w = np.asarray(w, dtype=float).reshape(-1)
    if c.size != param.spec.data_length or w.size != c.size:
        raise ValueError(
            f"data/weights of length {c.size}/{w.size} do not match structure size {param.spec.data_length}"
        )
    if np.any(w <= 0):
        raise ValueError("least-norm weights must be positive (inf allowed)")
    winv = _inv_weights(w)

    ab, bw = assemble_gamma_band(param, winv)
    s = _structured_s(param, c)
    inter = interleave_order(param.spec, param.t)

    chol, info = lapack.dpbtrf(ab, lower=1)
    rcond = 0.0
    if info == 0:
        rcond = rcond_estimate(ab, chol)
    ridge = 0.0
    regularized = False
    if info != 0 or rcond < rcond_tol:
        pivot = int(info) if info > 0 else None
        if not regularize:
            msg = (
                f"Cholesky of Gamma failed at leading minor {pivot}"
                if pivot
                else f"Gamma is numerically singular (rcond={rcond:.3e})"
            )
            raise IllConditionedGamma(msg, pivot=pivot, rcond=rcond)
        scale = float(np.max(ab[0])) if np.max(ab[0]) > 0 else 1.0
        ridge = gamma_reg * EPS * scale
        ab = ab.copy()
        ab[0] += ridge
        chol, info = lapack.dpbtrf(ab, lower=1)
        if info != 0:
            raise IllConditionedGamma("regularized Gamma is still not positive definite", pivot=int(info))
        regularized = True

    return VarproSystem(
        param=param,
        data=c,
        ln_weights=w,
        winv=winv,
        gamma_band=ab,
        chol=chol,
        bandwidth=bw,
        s=s,
        regularized=regularized,
        ridge=ridge,
        rcond=rcond,
        _inter=inter,
    )


def eval_cost(sys: VarproSystem) -> float:
    """``f_LN(P) = s^T Gamma^{-1} s``."""
    return sys.cost


def eval_grad(sys: VarproSystem) -> np.ndarray:
    """Exact gradient of ``f_LN`` with respect to ``P`` (same shape as ``P``)."""
    return sys.grad_from(sys.corrected)


def eval_jacobian(sys: VarproSystem) -> np.ndarray:
    return sys.jacobian


def eval_gn(sys: VarproSystem) -> np.ndarray:
    """Gauss-Newton matrix ``2 J^T J`` over ``P.ravel()``."""
    J = sys.jacobian
    return 2.0 * (J.T @ J)


def evaluate(sys: VarproSystem) -> LnEvaluation:
    return LnEvaluation(
        cost=eval_cost(sys),
        grad=eval_grad(sys),
        gn_matrix=eval_gn(sys),
        correction=sys.residual,
        regularized=sys.regularized,
    )
