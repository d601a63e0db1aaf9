"""Conditioning diagnostics, benchmark generators and the per-iteration timing harness."""
from __future__ import annotations

import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .image import IMAGE_G, IMAGE_H, ImageProblem, auto_mode, g_ini, image_g_solve, image_h_solve, lsdivmult
from .kernel import kernel_solve
from .optim import SolverOptions
from .poly import MosaicSpec, PolyTuple, matmultmat
from .wls import KernelParam

ZERO_SYMBOL_TOL = 1e-12

# Reference distances of the STLN method on the ill-conditioned family, before
# division by ||u||_2 (d = 1..10).
STLN_REFERENCE = (5.17e-1, 6.95e-4, 1.97e-5, 2.89e-6, 5.28e-5, 2.15e-3, 8.34e-2, 2.04e0, 4.70e1, 7.73e2)

# Common divisor of the speed family, z^4 + 10 z^2 + z - 1 (ascending coefficients).
SPEED_DIVISOR = np.array([-1.0, 1.0, 10.0, 0.0, 1.0])
SPEED_EXPONENTS = (25, 15, 10)


@dataclass
class SymbolSpectrum:
    angles: np.ndarray
    eigenvalues: np.ndarray  # (n_samples, t), ascending per sample
    a_F: float
    b_F: float
    kappa: float
    n_samples: int

    @property
    def samples(self):
        return list(zip(self.angles, self.eigenvalues))


def _as_param(P, spec=None) -> KernelParam:
    if isinstance(P, KernelParam):
        return P
    P = np.asarray(P, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if spec is None:
        spec = MosaicSpec([P.shape[0]], [1])
    return KernelParam(P, spec)


def symbol_bounds(P, n_samples: int = 1024, spec: MosaicSpec | None = None) -> SymbolSpectrum:
    """Eigenvalue range of ``F(z) = sum_i P_i(z)^H P_i(z)`` on the unit circle.

    ``P_i(z) = sum_a P_i[a, :] z^a`` for every row block ``i``.  For a single
    column (``t = 1``) this is ``sum_i |P_i(z)|^2``.
    """
    if n_samples < 16:
        raise ValueError("n_samples must be >= 16")
    param = _as_param(P, spec)
    theta = 2 * np.pi * np.arange(n_samples) / n_samples
    z = np.exp(1j * theta)
    t = param.t
    F = np.zeros((n_samples, t, t), dtype=complex)
    for Pi in param.blocks():
        V = np.vander(z, Pi.shape[0], increasing=True) @ Pi  # (n_samples, t)
        F += np.conj(V)[:, :, None] * V[:, None, :]
    ev = np.linalg.eigvalsh(F)
    a_F = float(ev[:, 0].min())
    b_F = float(ev[:, -1].max())
    if a_F <= ZERO_SYMBOL_TOL * b_F:
        a_F = 0.0
    kappa = np.inf if a_F == 0 else b_F / a_F
    return SymbolSpectrum(theta, ev, a_F, b_F, kappa, n_samples)


@dataclass
class ContainmentReport:
    a_F: float
    b_F: float
    ls: list[int]
    lam_min: list[float]
    lam_max: list[float]
    contained: bool
    monotone: bool
    eps: float = 1e-6
    details: dict = field(default_factory=dict)


def eigen_containment_check(P, spec: MosaicSpec | None = None, l_range=(5, 10, 20, 40),
                            n_samples: int = 4096, eps: float = 1e-6) -> ContainmentReport:
    """Compare the spectrum of ``Gamma^(l) = M^T M`` (one column block of size ``l``) with the symbol.

    ``Gamma^(l)`` is a leading principal submatrix of ``Gamma^(l+1)``, so by
    interlacing ``lambda_min`` can only decrease and ``lambda_max`` only increase
    with ``l``.
    """
    param = _as_param(P, spec)
    sym = symbol_bounds(param, n_samples)
    lmins, lmaxs = [], []
    for l in l_range:
        M = matmultmat(param.P, MosaicSpec(param.spec.row_blocks, [l]))
        ev = np.linalg.eigvalsh(M.T @ M)
        lmins.append(float(ev[0]))
        lmaxs.append(float(ev[-1]))
    contained = all(lo >= sym.a_F - eps and hi <= sym.b_F + eps for lo, hi in zip(lmins, lmaxs))
    tol = 1e-12 * max(sym.b_F, 1.0)
    monotone = all(b <= a + tol for a, b in zip(lmins, lmins[1:])) and all(
        b >= a - tol for a, b in zip(lmaxs, lmaxs[1:])
    )
    return ContainmentReport(sym.a_F, sym.b_F, list(l_range), lmins, lmaxs, contained, monotone, eps)


def gen_illcond_family():
    """Two degree-10 polynomials with clustered, slightly perturbed real roots.

    ``u`` has roots ``x_j = (-1)^j j / 2`` and ``v`` has roots ``x_j - 10^-j``
    (``j = 1..10``); both are divided by ``||u||_2``.

    Returns
    -------
    (PolyTuple, float)
        The tuple and the scale ``||u||_2``.
    """
    u = np.array([1.0])
    v = np.array([1.0])
    for j in range(1, 11):
        x = (-1) ** j * j / 2
        u = np.convolve(u, [-x, 1.0])
        v = np.convolve(v, [-x + 10.0 ** (-j), 1.0])
    scale = float(np.linalg.norm(u))
    return PolyTuple([u / scale, v / scale]), scale


def stln_reference(scale: float) -> np.ndarray:
    return np.array(STLN_REFERENCE) / scale


def _binomial_factor(m: int, c: float) -> np.ndarray:
    out = np.zeros(m + 1)
    out[0] = c
    out[m] = 1.0
    return out


def speed_cofactors(k: int) -> tuple[np.ndarray, np.ndarray]:
    e1, e2, e3 = (k * e for e in SPEED_EXPONENTS)
    g1 = np.convolve(np.convolve(_binomial_factor(e1, -1.0), _binomial_factor(e2, -2.0)), _binomial_factor(e3, -3.0))
    g2 = np.convolve(np.convolve(_binomial_factor(e1, 1.0), _binomial_factor(e2, 5.0)), _binomial_factor(e3, 2.0))
    return g1, g2


def gen_speed_family(k: int, sigma: float = 1e-2, seed: int = 0) -> PolyTuple:
    """Pair of degree ``50 k + 4`` polynomials sharing ``z^4 + 10 z^2 + z - 1``, plus noise."""
    if k < 1:
        raise ValueError("k must be >= 1")
    g1, g2 = speed_cofactors(k)
    p1 = np.convolve(g1, SPEED_DIVISOR)
    p2 = np.convolve(g2, SPEED_DIVISOR)
    rng = np.random.default_rng(seed)
    p1 = p1 + sigma * rng.standard_normal(p1.size)
    p2 = p2 + sigma * rng.standard_normal(p2.size)
    return PolyTuple([p1, p2])


def _measure(fn, floor: float) -> float:
    n = 0
    t0 = time.perf_counter()
    while True:
        fn()
        n += 1
        el = time.perf_counter() - t0
        if el >= floor:
            return el / n


def time_per_iteration(method: str = IMAGE_H, k_range=range(1, 9), reps: int = 5, floor: float = 1.0,
                       d: int = 4, sigma: float = 1e-2, seed: int = 0) -> list[dict]:
    """Per-iteration wall time on the speed family.

    For every ``k`` the initialization is computed once and excluded; each rep
    repeats a ``max_iter = 1`` solve until ``floor`` seconds have elapsed and
    records the mean time per call.  The median over reps is reported.  A
    warm-up solve precedes the measurements.
    """
    if method not in (IMAGE_H, IMAGE_G):
        raise ValueError("timing supports image-h and image-g")
    opts = SolverOptions(max_iter=1)
    rows = []
    for k in k_range:
        p = gen_speed_family(k, sigma, seed)
        g0 = g_ini(p, d)
        if method == IMAGE_H:
            prob = ImageProblem(p, None, d, IMAGE_H)
            x0 = lsdivmult(p, d, g0).coeffs

            def run():
                return image_h_solve(prob, x0, opts)
        else:
            prob = ImageProblem(p, None, d, IMAGE_G)

            def run():
                return image_g_solve(prob, g0, opts)
        res = run()  # warm-up
        times = [_measure(run, floor) for _ in range(reps)]
        rows.append({
            "k": k,
            "degree": p.n_max,
            "median_time": statistics.median(times),
            "min_time": min(times),
            "max_time": max(times),
            "iterations": res.iterations,
            "euclid_dist": res.euclid_dist,
        })
    return rows


ACCURACY_COLUMNS = ("d", "lra", "im", "im_method", "im_iter", "im_status", "ker", "ker_iter",
                    "ker_status", "ker_regularized", "stln", "scale")


def lra_distance(p, d: int) -> float:
    """Distance of the unrefined initialization ``g_ini * lsdivmult(g_ini)`` to ``p``."""
    g0 = g_ini(p, d)
    h0 = lsdivmult(p, d, g0).coeffs
    approx = np.concatenate([np.convolve(g.coeffs, h0) for g in g0])
    return float(np.linalg.norm(p.stacked() - approx))


def _accuracy_row(d: int, opts: SolverOptions) -> dict:
    p, scale = gen_illcond_family()
    mode = auto_mode(p.degrees, d)
    prob = ImageProblem(p, None, d, mode)
    im = image_h_solve(prob, None, opts) if mode == IMAGE_H else image_g_solve(prob, None, opts)
    ker = kernel_solve(p, None, d, None, opts)
    return {
        "d": d, "lra": lra_distance(p, d), "im": im.euclid_dist, "im_method": mode,
        "im_iter": im.iterations, "im_status": im.status, "ker": ker.euclid_dist,
        "ker_iter": ker.iterations, "ker_status": ker.status, "ker_regularized": ker.regularized,
        "stln": STLN_REFERENCE[d - 1] / scale, "scale": scale,
    }


def accuracy_table(opts: SolverOptions | None = None, jobs: int = 1, ds=range(1, 11)) -> list[dict]:
    """Distances of the initialization, the image method and the kernel method for ``d = 1..10``.

    The image method follows :func:`approxgcd.image.auto_mode` (divisor
    optimization up to ``d = 5``, cofactor optimization above).
    """
    opts = opts or SolverOptions()
    ds = list(ds)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_accuracy_row, ds, [opts] * len(ds)))
    return [_accuracy_row(d, opts) for d in ds]
