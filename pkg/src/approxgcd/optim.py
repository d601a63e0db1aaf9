"""Levenberg-Marquardt on the unit sphere for scale-invariant variable-projection costs."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol

import numpy as np

from .wls import DEFAULT_RCOND_TOL, IllConditionedGamma, KernelParam

log = logging.getLogger(__name__)

CONVERGED = "Converged"
MAX_ITER = "MaxIter"
STALLED = "Stalled"
ILL_CONDITIONED = "IllConditioned"

_LAMBDA_FLOOR = 1e-12
_LAMBDA_CEIL = 1e16
_MAX_BREAKDOWNS = 5
_FLAT_STREAK = 3
# Predicted decreases below this fraction of the cost are treated as rounding noise.
_NOISE_FLOOR = 1e-10
# Projected gradients below this multiple of eps * ||data||^2 are rounding noise.
_GRAD_NOISE = 1e3


@dataclass(frozen=True)
class SolverOptions:
    max_iter: int = 100
    grad_tol: float = 1e-20
    step_tol: float = 1e-14
    lm_lambda0: float = 1e-4
    gamma_reg: float = 1e5
    seed: int = 0
    allow_regularization: bool = False
    rcond_tol: float = DEFAULT_RCOND_TOL

    def __post_init__(self):
        if self.max_iter < 0:
            raise ValueError("max_iter must be >= 0")
        if self.grad_tol < 0:
            raise ValueError("grad_tol must be >= 0")
        for name in ("step_tol", "lm_lambda0", "gamma_reg", "rcond_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")

    def with_(self, **kw) -> "SolverOptions":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


@dataclass
class IterRecord:
    cost: float
    grad_norm: float
    lm_lambda: float
    step_norm: float
    regularized: bool


@dataclass
class IterLog:
    initial_cost: float = np.nan
    records: list[IterRecord] = field(default_factory=list)
    status: str = MAX_ITER
    message: str = ""

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def final_cost(self) -> float:
        return self.records[-1].cost if self.records else self.initial_cost

    @property
    def regularized(self) -> bool:
        return any(r.regularized for r in self.records)

    def costs(self) -> np.ndarray:
        return np.array([self.initial_cost] + [r.cost for r in self.records])

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "iterations": self.iterations,
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "records": [vars(r).copy() for r in self.records],
            "message": self.message,
        }


@dataclass
class Evaluation:
    cost: float
    grad: np.ndarray | None = None
    gn: np.ndarray | None = None
    regularized: bool = False


class CostModel(Protocol):
    """Anything with ``evaluate(x, derivatives) -> Evaluation`` over flat parameters."""

    def evaluate(self, x: np.ndarray, derivatives: bool) -> Evaluation: ...


@dataclass
class FunctionModel:
    """Adapter turning plain callables into a :class:`CostModel`."""

    cost: Callable[[np.ndarray], float]
    derivs: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]

    def evaluate(self, x, derivatives):
        f = self.cost(x)
        if not derivatives:
            return Evaluation(f)
        g, H = self.derivs(x)
        return Evaluation(f, g, H)


def normalize(P):
    """Scale ``P`` to unit Frobenius norm (the costs here are invariant under scaling)."""
    if isinstance(P, KernelParam):
        return KernelParam(normalize(P.P), P.spec)
    P = np.asarray(P, dtype=float)
    nrm = np.linalg.norm(P)
    if nrm == 0 or not np.isfinite(nrm):
        raise ValueError("cannot normalize a zero (or non-finite) parameter")
    return P / nrm


def fix_sign(x: np.ndarray) -> np.ndarray:
    """Flip ``x`` so that its largest-magnitude entry is positive (first one on ties)."""
    k = int(np.argmax(np.abs(x)))
    return -x if x.flat[k] < 0 else x


def tangent_basis(x: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the tangent space of the unit sphere at unit ``x``.

    Columns 1.. of the Householder reflector mapping ``e_0`` to ``x``.
    """
    n = x.size
    v = x.copy()
    s = 1.0 if x[0] >= 0 else -1.0
    v[0] += s
    H = np.eye(n) - 2.0 * np.outer(v, v) / (v @ v)
    return H[:, 1:]


def minimize(model: CostModel, P0, opts: SolverOptions | None = None, data_scale: float = 0.0):
    """Minimize a scale-invariant cost over the unit sphere by Levenberg-Marquardt.

    Parameters
    ----------
    model : CostModel
        Evaluates cost, gradient and Gauss-Newton matrix at flat parameters.
    P0 : array_like or KernelParam
        Starting point (any nonzero scaling).
    opts : SolverOptions
    data_scale : float
        Squared (weighted) norm of the data.  Costs below ``(100 eps)^2 * data_scale``
        count as an exact fit, and when no step is acceptable a projected gradient
        below ``1e3 * eps * data_scale`` is accepted as stationary.

    Returns
    -------
    P : same kind as ``P0``, unit norm, sign-normalized.
    log : IterLog
    """
    opts = opts or SolverOptions()
    eps = np.finfo(float).eps
    zero_cost = (100 * eps) ** 2 * data_scale
    grad_noise = _GRAD_NOISE * eps * data_scale
    is_param = isinstance(P0, KernelParam)
    arr0 = P0.P if is_param else np.asarray(P0, dtype=float)
    shape = arr0.shape
    x = normalize(arr0).ravel()

    it_log = IterLog()
    ev = model.evaluate(x, True)  # failure here propagates
    f = ev.cost
    it_log.initial_cost = f
    lam = opts.lm_lambda0
    flat = 0
    n = x.size

    def finish(status, msg=""):
        it_log.status = status
        it_log.message = msg
        xs = fix_sign(x)
        out = xs.reshape(shape)
        return (KernelParam(out, P0.spec) if is_param else out), it_log

    if n == 1:
        return finish(CONVERGED, "one-dimensional parameter: the sphere is two points")

    for _ in range(opts.max_iter):
        g = ev.grad.ravel()
        g_proj = g - (g @ x) * x
        gnorm = float(np.linalg.norm(g_proj))
        if f <= zero_cost:
            return finish(CONVERGED, "zero residual")
        if gnorm <= opts.grad_tol:
            return finish(CONVERGED, "projected gradient below tolerance")

        Q = tangent_basis(x)
        gt = Q.T @ g
        Ht = Q.T @ (0.5 * ev.gn) @ Q
        Ht = 0.5 * (Ht + Ht.T)
        scale = float(np.max(np.diag(Ht)))
        if not scale > 0:
            scale = 1.0
        breakdowns = 0
        first_pred = None
        accepted = False
        while lam <= _LAMBDA_CEIL:
            try:
                step = np.linalg.solve(Ht + lam * scale * np.eye(n - 1), -0.5 * gt)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            pred = -(gt @ step) - step @ Ht @ step
            if first_pred is None:
                first_pred = pred
            x_new = x + Q @ step
            x_new /= np.linalg.norm(x_new)
            try:
                ev_new = model.evaluate(x_new, False)
            except IllConditionedGamma as exc:
                breakdowns += 1
                log.debug("Gamma breakdown at trial point: %s", exc)
                if breakdowns >= _MAX_BREAKDOWNS:
                    return finish(ILL_CONDITIONED, f"repeated Gamma breakdown: {exc}")
                lam *= 10.0
                continue
            if ev_new.cost < f:
                accepted = True
                break
            lam *= 10.0

        if not accepted:
            if gnorm <= grad_noise or (first_pred is not None and first_pred <= _NOISE_FLOOR * f):
                return finish(CONVERGED, "no decrease possible above rounding level")
            return finish(STALLED, "damping exhausted without an acceptable step")

        f_old = f
        x = x_new
        try:
            ev = model.evaluate(x, True)
        except IllConditionedGamma as exc:
            return finish(ILL_CONDITIONED, str(exc))
        f = ev.cost
        lam = max(lam / 10.0, _LAMBDA_FLOOR)
        it_log.records.append(
            IterRecord(
                cost=f,
                grad_norm=gnorm,
                lm_lambda=lam,
                step_norm=float(np.linalg.norm(step)),
                regularized=bool(ev.regularized or ev_new.regularized),
            )
        )
        if f_old - f <= opts.step_tol * f_old:
            flat += 1
            if flat >= _FLAT_STREAK:
                return finish(CONVERGED, "relative cost decrease below step_tol")
        else:
            flat = 0

    if f <= zero_cost:
        return finish(CONVERGED, "zero residual")
    return finish(MAX_ITER, "iteration limit reached")
