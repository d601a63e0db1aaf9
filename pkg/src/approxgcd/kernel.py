"""Approximate common divisors in the kernel representation.

Feasibility is expressed as rank deficiency of the generalized Sylvester
subresultant ``S_d^(1)(p)``.  Its transpose is a row selection of a two-block
mosaic Hankel matrix built from zero-padded copies of the data, so the
problem becomes a weighted mosaic-Hankel low-rank approximation in which the
padding zeros are frozen with infinite weights.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image import SolveResult, g_ini, lsdivmult
from .optim import Evaluation, SolverOptions, minimize
from .poly import MosaicSpec, Polynomial, PolyTuple, WeightScheme, conv, mosaic_hankel, multmat, tuple_dist_sq
from .wls import EPS, IllConditionedGamma, build_varpro, eval_grad

# Finite floor (relative to the largest finite weight) for zero user weights in kernel mode.
MISSING_WEIGHT_FLOOR = 1e-8


class SingularGamma(IllConditionedGamma):
    """Gamma is singular for every parameter value (N > 2 kernel formulation)."""


def _check_tuple(p, d):
    p = p if isinstance(p, PolyTuple) else PolyTuple(p)
    if len(p) < 2:
        raise ValueError("a Sylvester matrix needs at least two polynomials")
    if not 1 <= d <= p.n_min:
        raise ValueError(f"d = {d} outside [1, {p.n_min}]")
    return p


def build_sylv1(p, d: int) -> np.ndarray:
    """Generalized Sylvester subresultant ``S_d^(1)(p)``.

    Block row ``k - 1`` (``k = 2..N``) is ``[T(p_k) | 0 ... -T(p_1) ... 0]``, so
    ``S u = 0`` encodes ``u_k p_1 - u_1 p_k = 0``.
    """
    p = _check_tuple(p, d)
    n = p.degrees
    cols = [n[0] - d + 1] + [nk - d + 1 for nk in n[1:]]
    col_off = np.concatenate([[0], np.cumsum(cols)])
    rows = [n[k] + n[0] - d + 1 for k in range(1, len(p))]
    S = np.zeros((sum(rows), col_off[-1]))
    r = 0
    for k in range(1, len(p)):
        S[r:r + rows[k - 1], : cols[0]] = multmat(p[k].coeffs, n[0] - d)
        S[r:r + rows[k - 1], col_off[k]: col_off[k + 1]] = -multmat(p[0].coeffs, n[k] - d)
        r += rows[k - 1]
    return S


def build_sylv_full(p, d: int) -> np.ndarray:
    """Sylvester matrix whose rank deficiency is equivalent to ``deg gcd >= d``.

    For ``N > 2`` the subresultant of ``(p_2, ..., p_N)`` (acting on the trailing
    cofactors) is stacked above ``S_d^(1)(p)``.
    """
    p = _check_tuple(p, d)
    S1 = build_sylv1(p, d)
    if len(p) == 2:
        return S1
    top = build_sylv_full(PolyTuple(p[1:]), d)
    pad = np.zeros((top.shape[0], p[0].bound - d + 1))
    return np.vstack([np.hstack([pad, top]), S1])


@dataclass(frozen=True)
class SylvesterEmbedding:
    """``S_d^(1)(p)^T = Phi @ mosaic_hankel(vcol(q1, q2), spec)`` with frozen padding."""

    q1: np.ndarray
    q2: np.ndarray
    phi: np.ndarray
    L_b: int
    K_b: int
    spec: MosaicSpec
    ext_weights: np.ndarray
    degrees: tuple
    d: int
    p1_slot: slice
    pk_slots: tuple
    flags: tuple = ()

    @property
    def data(self) -> np.ndarray:
        return np.concatenate([self.q1, self.q2])

    @property
    def n_params(self) -> int:
        return self.phi.shape[0]

    def recover(self, c: np.ndarray) -> PolyTuple:
        """Polynomials stored in an embedded data vector (undoing the sign of ``p_1``)."""
        c = np.asarray(c, dtype=float)
        out = [-c[self.p1_slot]]
        out += [c[s] for s in self.pk_slots]
        return PolyTuple(out)


def _embedding_rows(degrees, d):
    n = degrees
    ell = [nk - d for nk in n]
    N = len(n)
    L_b = ell[1] + 1 + sum(ell[k] + 1 + n[0] for k in range(2, N))
    K_b = sum(n[k] + ell[0] + 1 for k in range(1, N))
    assert K_b == L_b + n[0]
    rows = [L_b + ell[0] - a for a in range(ell[0] + 1)]
    offset = 0
    for k in range(1, N):
        start = L_b - 1 - offset - ell[k]
        rows += [start + ell[k] - a for a in range(ell[k] + 1)]
        offset += n[k] + ell[0] + 1
    return L_b, K_b, ell, rows


def sylv_mosaic_embed(p, w=None, d: int = 1) -> SylvesterEmbedding:
    p = _check_tuple(p, d)
    n = p.degrees
    if w is None:
        w = WeightScheme.uniform(n)
    elif not isinstance(w, WeightScheme):
        w = WeightScheme(w)
    w.check_shape(p)
    L_b, K_b, ell, rows = _embedding_rows(n, d)
    flags = []
    wu = [np.array(wk, dtype=float) for wk in w]
    finite = np.concatenate([x[np.isfinite(x) & (x > 0)] for x in wu])
    floor = MISSING_WEIGHT_FLOOR * (finite.max() if finite.size else 1.0)
    for x in wu:
        if np.any(x == 0):
            x[x == 0] = floor
            if "missing-coefficients" not in flags:
                flags.append("missing-coefficients")

    z1 = np.zeros(L_b - 1)
    q1 = np.concatenate([z1, -p[0].coeffs, z1])
    w1 = np.concatenate([np.full(L_b - 1, np.inf), wu[0], np.full(L_b - 1, np.inf)])
    zl = np.zeros(ell[0])
    infl = np.full(ell[0], np.inf)
    q2_parts, w2_parts, slots = [zl], [infl], []
    pos = q1.size + ell[0]
    for k in range(1, len(p)):
        q2_parts += [p[k].coeffs, zl]
        w2_parts += [wu[k], infl]
        slots.append(slice(pos, pos + n[k] + 1))
        pos += n[k] + 1 + ell[0]
    q2 = np.concatenate(q2_parts)
    spec = MosaicSpec([L_b, ell[0] + 1], [K_b])
    assert q1.size == L_b + K_b - 1 and q2.size == ell[0] + K_b
    phi = np.zeros((len(rows), spec.n_rows))
    phi[np.arange(len(rows)), rows] = 1.0
    return SylvesterEmbedding(
        q1=q1, q2=q2, phi=phi, L_b=L_b, K_b=K_b, spec=spec,
        ext_weights=np.concatenate([w1] + w2_parts), degrees=n, d=d,
        p1_slot=slice(L_b - 1, L_b + n[0]), pk_slots=tuple(slots), flags=tuple(flags),
    )


@dataclass
class KernelResult(SolveResult):
    u_hat: PolyTuple = None
    feasibility: float = np.nan


class KernelModel:
    """``u -> f_LN(Phi^T u)`` for a Sylvester embedding."""

    def __init__(self, emb: SylvesterEmbedding, regularize: bool, opts: SolverOptions):
        self.emb = emb
        self.regularize = regularize
        self.opts = opts
        self.c = emb.data
        self.w = emb.ext_weights

    def system(self, u):
        P = self.emb.phi.T @ np.ravel(u)
        return build_varpro(
            P[:, None], self.c, self.w, spec=self.emb.spec, regularize=self.regularize,
            gamma_reg=self.opts.gamma_reg, rcond_tol=self.opts.rcond_tol,
        )

    def evaluate(self, u, derivatives):
        sys = self.system(u)
        f = sys.cost
        if not derivatives:
            return Evaluation(f, regularized=sys.regularized)
        phi = self.emb.phi
        grad = phi @ eval_grad(sys).ravel()
        J = sys.jacobian @ phi.T
        return Evaluation(f, grad, 2.0 * (J.T @ J), regularized=sys.regularized)


def kernel_solve(p, w=None, d: int = 1, u0=None, opts: SolverOptions | None = None) -> KernelResult:
    """Minimize ``f_LN(Phi^T u)`` over unit ``u`` and recover the corrected tuple.

    For ``N = 2`` an ill-conditioned Gamma triggers an automatic ridge retry and
    the result is flagged ``regularized``.  For ``N > 2`` Gamma can be singular
    for every ``u``; that raises :class:`SingularGamma` unless
    ``opts.allow_regularization`` is set.
    """
    opts = opts or SolverOptions()
    p = _check_tuple(p, d)
    w = WeightScheme.uniform(p.degrees) if w is None else (w if isinstance(w, WeightScheme) else WeightScheme(w))
    emb = sylv_mosaic_embed(p, w, d)
    flags = list(emb.flags)
    if u0 is None:
        u0, info = g_ini(p, d, return_info=True)
        if info["tie"]:
            flags.append("init-singular-value-tie")
    u0 = u0.stacked() if isinstance(u0, PolyTuple) else np.asarray(u0, dtype=float).reshape(-1)
    if u0.size != emb.n_params:
        raise ValueError(f"u0 must have {emb.n_params} entries")

    N = len(p)
    regularize = True if N == 2 else opts.allow_regularization
    model = KernelModel(emb, regularize, opts)
    try:
        model.evaluate(u0 / np.linalg.norm(u0), False)
    except IllConditionedGamma as exc:
        if N > 2:
            raise SingularGamma(
                f"Gamma is singular for the N = {N} kernel formulation; "
                "pass allow_regularization to solve with a ridge",
                pivot=exc.pivot, rcond=exc.rcond,
            ) from exc
        raise
    free = np.isfinite(emb.ext_weights)
    data_norm = float(np.sum(emb.ext_weights[free] * emb.data[free] ** 2))
    u, it_log = minimize(model, u0, opts, data_scale=data_norm)
    sys = model.system(u)
    regularized = bool(sys.regularized or it_log.regularized)

    p_hat = emb.recover(sys.corrected)
    u_hat = PolyTuple.split(u, [nk - d for nk in p.degrees])
    S = build_sylv1(p_hat, d)
    feasibility = float(np.linalg.norm(S @ u) / np.linalg.norm(u))
    try:
        h_hat = lsdivmult(p_hat, d, u_hat)
    except np.linalg.LinAlgError:
        h_hat = Polynomial(np.eye(d + 1)[0])
        flags.append("divisor-extraction-failed")
    certificate = max(
        float(np.max(np.abs(pk.coeffs - conv(uk.coeffs, h_hat.coeffs).coeffs))) for pk, uk in zip(p_hat, u_hat)
    )
    w_obj = [np.where(np.asarray(wk) == 0, 0.0, wk) for wk in w]
    objective = tuple_dist_sq(p, p_hat, w_obj)
    euclid = float(np.linalg.norm(p.stacked() - p_hat.stacked()))
    if regularized:
        flags.append("regularized")
    return KernelResult(
        method="kernel", d=d, p_hat=p_hat, h_hat=h_hat, g_hat=u_hat, objective=objective,
        euclid_dist=euclid, log=it_log, certificate=certificate, regularized=regularized,
        flags=flags, u_hat=u_hat, feasibility=feasibility,
    )


def verify_common_divisor(p, d: int, tol: float = 1e-6):
    """Check rank deficiency of the full Sylvester matrix.

    Returns ``(passed, gap)`` with ``gap = sigma_min / sigma_max`` of ``S_d(p)``.
    """
    if not tol > 0:
        raise ValueError("tol must be > 0")
    S = build_sylv_full(p, d)
    if S.shape[0] < S.shape[1]:
        return True, 0.0
    sv = np.linalg.svd(S, compute_uv=False)
    if sv[0] == 0:
        return True, 0.0
    gap = float(sv[-1] / sv[0])
    return gap <= tol, gap


def gamma_singularity_probe(n, d: int, trials: int = 100, seed: int = 0, return_all: bool = False):
    """Worst (largest) ``lambda_min / lambda_max`` of the kernel Gamma over random ``u``.

    Gamma depends only on ``u``, the degree bounds and the frozen padding, so the
    data values are irrelevant; unit weights are used for the free slots.
    """
    n = tuple(int(x) for x in n)
    rng = np.random.default_rng(seed)
    dummy = PolyTuple(np.ones(nk + 1) for nk in n)
    emb = sylv_mosaic_embed(dummy, None, d)
    ratios = []
    for _ in range(trials):
        u = rng.standard_normal(emb.n_params)
        if not np.any(u):
            raise ValueError("u must be nonzero")
        P = emb.phi.T @ (u / np.linalg.norm(u))
        sys = build_varpro(P[:, None], emb.data, emb.ext_weights, spec=emb.spec,
                           regularize=True, rcond_tol=np.finfo(float).tiny)
        G = sys.gamma_dense()
        if sys.ridge:
            G -= sys.ridge * np.eye(G.shape[0])
        ev = np.linalg.eigvalsh(G)
        ratios.append(max(ev[0], 0.0) / ev[-1])
    ratios = np.array(ratios)
    return ratios if return_all else float(ratios.max())


def embedding_hankel(emb: SylvesterEmbedding) -> np.ndarray:
    """Dense ``Phi @ H(q)``; equals ``S_d^(1)(p)^T``."""
    return emb.phi @ mosaic_hankel(emb.data, emb.spec)
