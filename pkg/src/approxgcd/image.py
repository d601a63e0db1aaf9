"""Approximate common divisors in the image representation ``p_hat = (g_1 h, ..., g_N h)``.

Two variable-projection variants are provided:

* :func:`image_h_solve` keeps the divisor ``h`` as the outer parameter and
  eliminates the cofactors (``d + 1`` outer unknowns; good for small ``d``);
* :func:`image_g_solve` keeps the stacked cofactors and eliminates ``h``
  (good when every ``n_k - d`` is small).

Both reduce to weighted least squares with a matrix-polynomial multiplication
matrix and are evaluated through :mod:`approxgcd.wls`.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .optim import CONVERGED, MAX_ITER, Evaluation, IterLog, SolverOptions, fix_sign, minimize
from .poly import MosaicSpec, Polynomial, PolyTuple, WeightScheme, conv, multmat, tuple_dist_sq
from .wls import IllConditionedGamma, build_varpro, eval_grad

log = logging.getLogger(__name__)

EPS = np.finfo(float).eps
IMAGE_H = "image-h"
IMAGE_G = "image-g"
# Finite stand-in for an infinite least-squares weight, relative to the largest finite weight.
FROZEN_PENALTY = 1e6


@dataclass(frozen=True)
class ImageProblem:
    """Data of an image-representation solve.

    ``mode`` is ``"image-h"`` (optimize the divisor, eliminate cofactors) or
    ``"image-g"`` (optimize the cofactors, eliminate the divisor).
    """

    p: PolyTuple
    w: WeightScheme
    d: int
    mode: str = IMAGE_H

    def __init__(self, p, w=None, d: int = 1, mode: str = IMAGE_H):
        p = p if isinstance(p, PolyTuple) else PolyTuple(p)
        if w is None:
            w = WeightScheme.uniform(p.degrees)
        elif not isinstance(w, WeightScheme):
            w = WeightScheme(w)
        w.check_shape(p)
        d = int(d)
        if not 0 <= d <= p.n_min:
            raise ValueError(f"d = {d} outside [0, {p.n_min}]")
        if mode not in (IMAGE_H, IMAGE_G):
            raise ValueError(f"unknown image mode {mode!r}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "mode", mode)


@dataclass
class SolveResult:
    method: str
    d: int
    p_hat: PolyTuple
    h_hat: Polynomial
    g_hat: PolyTuple
    objective: float
    euclid_dist: float
    log: IterLog
    certificate: float
    regularized: bool = False
    flags: list[str] = field(default_factory=list)

    @property
    def status(self) -> str:
        return self.log.status

    @property
    def iterations(self) -> int:
        return self.log.iterations


def _effective_ls_weights(w: WeightScheme) -> tuple[np.ndarray, list[str]]:
    v = w.stacked().copy()
    flags = []
    frozen = np.isinf(v)
    if np.any(frozen):
        finite = v[~frozen]
        top = float(finite.max()) if finite.size and finite.max() > 0 else 1.0
        v[frozen] = FROZEN_PENALTY * top
        flags.append("frozen-coefficients-penalized")
    return v, flags


def angle_weights(p) -> WeightScheme:
    """Weights ``1 / ||p_k||^2`` turning the distance into a sum of squared sines."""
    p = p if isinstance(p, PolyTuple) else PolyTuple(p)
    out = []
    for pk in p:
        nrm2 = float(pk.coeffs @ pk.coeffs)
        if nrm2 == 0:
            raise ValueError("angle weights are undefined for a zero polynomial")
        out.append(np.full(pk.coeffs.size, 1.0 / nrm2))
    return WeightScheme(out)


def lsdivmult(p, d: int, g, w=None) -> Polynomial:
    """Least-squares divisor for given cofactors: ``argmin_h sum_k ||T_d(g_k) h - p_k||_w^2``."""
    p = p if isinstance(p, PolyTuple) else PolyTuple(p)
    g = g if isinstance(g, PolyTuple) else PolyTuple.split(g, [n - d for n in p.degrees])
    if [gk.bound for gk in g] != [n - d for n in p.degrees]:
        raise ValueError("cofactor bounds must be n_k - d")
    A = np.vstack([multmat(gk.coeffs, d) for gk in g])
    b = p.stacked()
    if w is None:
        v = np.ones_like(b)
    else:
        w = w if isinstance(w, WeightScheme) else WeightScheme(w)
        v, _ = _effective_ls_weights(w)
    sv = np.sqrt(v)
    B = sv[:, None] * A
    sing = np.linalg.svd(B, compute_uv=False)
    if sing.size == 0 or sing[0] == 0 or sing[-1] <= max(B.shape) * EPS * sing[0]:
        raise np.linalg.LinAlgError("stacked multiplication matrix is rank deficient (all cofactors zero?)")
    h = np.linalg.lstsq(B, sv * b, rcond=None)[0]
    return Polynomial(h)


def g_ini(p, d: int, return_info: bool = False):
    """Cofactor guess from the last right singular vector of the full Sylvester matrix.

    With ``return_info`` the pair ``(g, info)`` is returned, ``info`` holding the
    two smallest singular values and a ``tie`` flag (set when they coincide to
    relative 1e-12, in which case the choice made by the SVD is kept).
    """
    from .kernel import build_sylv_full

    p = p if isinstance(p, PolyTuple) else PolyTuple(p)
    if p.is_zero():
        raise ValueError("initialization is undefined for an all-zero tuple")
    S = build_sylv_full(p, d)
    _, sv, Vt = np.linalg.svd(S)
    u = fix_sign(Vt[-1])
    tie = False
    if len(sv) >= 2 and Vt.shape[0] == sv.size:
        tie = abs(sv[-1] - sv[-2]) <= 1e-12 * max(sv[0], np.finfo(float).tiny)
    elif Vt.shape[0] > sv.size:
        # wide matrix: the kernel has dimension > 1 by counting alone
        tie = Vt.shape[0] - sv.size > 1
    g = PolyTuple.split(u, [n - d for n in p.degrees])
    if return_info:
        info = {"sigma_min": float(sv[-1]) if Vt.shape[0] == sv.size else 0.0,
                "sigma_max": float(sv[0]), "tie": bool(tie)}
        return g, info
    return g


def image_spec(degrees, d: int, mode: str) -> MosaicSpec:
    if mode == IMAGE_H:
        return MosaicSpec([d + 1], [n - d + 1 for n in degrees])
    return MosaicSpec([n - d + 1 for n in degrees], [d + 1])


class LsVarproModel:
    """Weighted least-squares variable-projection cost ``min_x ||M(P) x - b||_v^2``.

    The least-squares problem is passed to the least-norm machinery with
    ``c = v * b`` and ``w = 1 / v``; the inner minimizer is the least-norm
    solution vector and the residual is formed directly, which keeps tiny
    costs accurate.
    """

    def __init__(self, spec: MosaicSpec, b: np.ndarray, v: np.ndarray, shape, opts: SolverOptions):
        self.spec = spec
        self.b = np.asarray(b, dtype=float)
        self.v = np.asarray(v, dtype=float)
        self.shape = shape
        self.opts = opts
        self.c = self.v * self.b
        with np.errstate(divide="ignore"):
            self.w_ln = np.where(self.v == 0, np.inf, 1.0 / self.v)
        self.sqv = np.sqrt(self.v)
        self.data_norm_sq = float(np.sum(self.v * self.b ** 2))

    def system(self, x):
        return build_varpro(
            np.reshape(x, self.shape),
            self.c,
            self.w_ln,
            spec=self.spec,
            regularize=self.opts.allow_regularization,
            gamma_reg=self.opts.gamma_reg,
            rcond_tol=self.opts.rcond_tol,
        )

    def residual(self, sys) -> np.ndarray:
        return self.sqv * (sys.My - self.b)

    def evaluate(self, x, derivatives: bool) -> Evaluation:
        sys = self.system(x)
        e = self.residual(sys)
        f = float(e @ e)
        if not derivatives:
            return Evaluation(f, regularized=sys.regularized)
        grad = -eval_grad(sys).ravel()
        J = sys.jacobian
        return Evaluation(f, grad, 2.0 * (J.T @ J), regularized=sys.regularized)


def _finish(prob: ImageProblem, g_hat: PolyTuple, h_hat: Polynomial, it_log: IterLog,
            method: str, regularized: bool, flags: list[str]) -> SolveResult:
    p_hat = PolyTuple(conv(gk.coeffs, h_hat.coeffs) for gk in g_hat)
    certificate = max(
        float(np.max(np.abs(pk.coeffs - conv(gk.coeffs, h_hat.coeffs).coeffs))) for pk, gk in zip(p_hat, g_hat)
    )
    v, _ = _effective_ls_weights(prob.w)
    w_eff = PolyTuple.split(v, prob.p.degrees)
    objective = tuple_dist_sq(prob.p, p_hat, w_eff)
    euclid = float(np.linalg.norm(prob.p.stacked() - p_hat.stacked()))
    return SolveResult(
        method=method, d=prob.d, p_hat=p_hat, h_hat=h_hat, g_hat=g_hat, objective=objective,
        euclid_dist=euclid, log=it_log, certificate=certificate, regularized=regularized, flags=flags,
    )


def _trivial_result(prob: ImageProblem, method: str, why: str, h=None) -> SolveResult:
    it_log = IterLog(initial_cost=0.0, status=CONVERGED, message=why)
    if prob.d == 0:
        h_hat = Polynomial([1.0])
        g_hat = PolyTuple(pk.coeffs for pk in prob.p)
    else:
        h_hat = Polynomial(h if h is not None else np.eye(prob.d + 1)[0])
        g_hat = PolyTuple(np.zeros(n - prob.d + 1) for n in prob.p.degrees)
    return _finish(prob, g_hat, h_hat, it_log, method, False, [why])


def _solve(prob: ImageProblem, x0, opts: SolverOptions, mode: str, flags: list[str]) -> SolveResult:
    p = prob.p
    d = prob.d
    spec = image_spec(p.degrees, d, mode)
    v, wflags = _effective_ls_weights(prob.w)
    flags = flags + wflags
    shape = (spec.n_rows, 1)
    model = LsVarproModel(spec, p.stacked(), v, shape, opts)
    P, it_log = minimize(model, np.reshape(x0, shape), opts, data_scale=model.data_norm_sq)
    sys = model.system(P)
    inner = sys.solution
    regularized = bool(sys.regularized or it_log.regularized)
    if mode == IMAGE_H:
        h_hat = Polynomial(P.ravel())
        g_hat = PolyTuple.split(inner, [n - d for n in p.degrees])
    else:
        g_hat = PolyTuple.split(P.ravel(), [n - d for n in p.degrees])
        h_hat = Polynomial(inner)
    return _finish(prob, g_hat, h_hat, it_log, mode, regularized, flags)


def image_h_solve(prob: ImageProblem, h0=None, opts: SolverOptions | None = None) -> SolveResult:
    """Optimize over the divisor ``h`` (unit sphere in ``R^{d+1}``), cofactors eliminated.

    Parameters
    ----------
    prob : ImageProblem
    h0 : array_like, optional
        Starting divisor; by default ``lsdivmult(p, d, g_ini(p, d))``.
    opts : SolverOptions, optional

    Returns
    -------
    SolveResult
    """
    opts = opts or SolverOptions()
    if prob.d == 0:
        return _trivial_result(prob, IMAGE_H, "d = 0: input returned unchanged")
    if prob.p.is_zero():
        return _trivial_result(prob, IMAGE_H, "zero-input", h0)
    flags = []
    if h0 is None:
        g0, info = g_ini(prob.p, prob.d, return_info=True)
        if info["tie"]:
            flags.append("init-singular-value-tie")
        h0 = lsdivmult(prob.p, prob.d, g0, prob.w).coeffs
    h0 = np.asarray(h0, dtype=float).reshape(-1)
    if h0.size != prob.d + 1:
        raise ValueError(f"h0 must have {prob.d + 1} coefficients")
    return _solve(prob, h0, opts, IMAGE_H, flags)


def image_g_solve(prob: ImageProblem, g0=None, opts: SolverOptions | None = None) -> SolveResult:
    """Optimize over the stacked cofactors (unit sphere), divisor eliminated.

    ``g0`` defaults to :func:`g_ini`.
    """
    opts = opts or SolverOptions()
    if prob.d == 0:
        return _trivial_result(prob, IMAGE_G, "d = 0: input returned unchanged")
    if prob.p.is_zero():
        return _trivial_result(prob, IMAGE_G, "zero-input")
    flags = []
    if g0 is None:
        g0, info = g_ini(prob.p, prob.d, return_info=True)
        if info["tie"]:
            flags.append("init-singular-value-tie")
    g0 = g0.stacked() if isinstance(g0, PolyTuple) else np.asarray(g0, dtype=float).reshape(-1)
    if g0.size != sum(n - prob.d + 1 for n in prob.p.degrees):
        raise ValueError("g0 has the wrong number of coefficients")
    return _solve(prob, g0, opts, IMAGE_G, flags)


def auto_mode(degrees, d: int) -> str:
    """``image-h`` when ``d <= n_max / 2`` (few divisor unknowns), otherwise ``image-g``."""
    return IMAGE_H if 2 * d <= max(degrees) else IMAGE_G


def solve_image(p, w, d: int, mode: str = "auto", opts: SolverOptions | None = None, init=None) -> SolveResult:
    p = p if isinstance(p, PolyTuple) else PolyTuple(p)
    if mode == "auto":
        mode = auto_mode(p.degrees, d)
    prob = ImageProblem(p, w, d, mode)
    if mode == IMAGE_H:
        return image_h_solve(prob, init, opts)
    return image_g_solve(prob, init, opts)


def egcd_degree_scan(p, w=None, eps: float = 1e-8, opts: SolverOptions | None = None):
    """Largest ``d`` whose approximate-GCD distance is at most ``eps``.

    Bisection over ``d`` in ``[0, n_min]``, relying on the distances being
    non-decreasing in ``d``.  Every probe is a local solve, so the answer
    carries a ``local-optimum`` caveat flag.

    Returns
    -------
    (d_star, SolveResult)
    """
    if not eps > 0:
        raise ValueError("eps must be > 0")
    p = p if isinstance(p, PolyTuple) else PolyTuple(p)
    w = WeightScheme.uniform(p.degrees) if w is None else w
    cache: dict[int, SolveResult] = {}

    def probe(d):
        if d not in cache:
            try:
                cache[d] = solve_image(p, w, d, "auto", opts)
            except IllConditionedGamma:
                cache[d] = None
        r = cache[d]
        return r is not None and r.objective <= eps ** 2

    lo, hi = 0, p.n_min
    probe(0)
    if probe(hi):
        lo = hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if probe(mid):
            lo = mid
        else:
            hi = mid
    res = cache[lo]
    res.flags.append("local-optimum")
    if res.log.status not in (CONVERGED, MAX_ITER):
        res.flags.append(f"probe-status-{res.log.status}")
    return lo, res
