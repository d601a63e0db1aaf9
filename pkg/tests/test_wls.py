import numpy as np
import pytest

from approxgcd.poly import MosaicSpec, matmultmat
from approxgcd.wls import (
    IllConditionedGamma, KernelParam, SingularSystemError, build_varpro, eval_cost, eval_gn, eval_grad,
    eval_jacobian, evaluate, interleave_order, ls_to_ln_transform, multiplication_operator, solve_wln,
    solve_wls,
)

from oracles import central_diff, dense_ln_cost, dense_ls


def random_instance(rng, t=None, with_inf=True):
    K = rng.integers(1, 3)
    L = rng.integers(1, 3)
    k = tuple(rng.integers(1, 4, K))
    l = tuple(rng.integers(1, 4, L))
    t = t or int(rng.integers(1, 4))
    spec = MosaicSpec(k, l)
    P = rng.standard_normal((spec.n_rows, t))
    m = spec.data_length
    c = rng.standard_normal(m)
    w = rng.uniform(0.5, 2.0, m)
    if with_inf and m > 2:
        w[rng.integers(0, m)] = np.inf
    return spec, P, c, w


def test_solve_wls_examples():
    x, y, f = solve_wls([[1], [1]], [1, 3], [1, 1])
    assert np.allclose(x, 2) and np.isclose(f, 2)
    x, y, f = solve_wls([[1], [1]], [1, 3], [3, 1])
    assert np.allclose(x, 1.5) and np.isclose(f, 3)
    b = np.array([1.0, -2.0, 0.5])
    x, y, f = solve_wls(np.eye(3), b, [1, 2, 3])
    assert np.allclose(x, b) and abs(f) < 1e-30


def test_solve_wls_rank_deficient():
    with pytest.raises(SingularSystemError):
        solve_wls([[1, 1], [2, 2]], [1, 2], [1, 1])
    with pytest.raises(SingularSystemError):
        solve_wls([[1], [1]], [1, 2], [0, 0])


def test_solve_wln_examples():
    z, y, f = solve_wln([[1], [-1]], [1, 0], [1, 1])
    assert np.allclose(z, [0.5, 0.5]) and np.isclose(f, 0.5)
    z, y, f = solve_wln([[1], [-1]], [2, 2], [1, 1])
    assert np.allclose(z, [2, 2]) and abs(f) < 1e-30
    # infinite weight freezes the first coordinate
    z, y, f = solve_wln([[1], [-1]], [1, 0], [np.inf, 1])
    assert z[0] == 1 and np.isclose(z[1], 1) and np.isclose(f, 1)


def test_solve_wln_feasibility_random():
    rng = np.random.default_rng(0)
    for _ in range(20):
        A = rng.standard_normal((7, 3))
        c = rng.standard_normal(7)
        w = rng.uniform(0.2, 3, 7)
        z, y, f = solve_wln(A, c, w)
        assert np.linalg.norm(A.T @ z) <= 1e-10 * np.linalg.norm(A) * np.linalg.norm(c)
        assert np.isclose(f, y @ y, rtol=1e-12)
        assert np.isclose(f, np.sum(w * (c - z) ** 2), rtol=1e-10)


def test_ls_to_ln_transform_examples():
    c, w = ls_to_ln_transform([1.0, 2.0], [1.0, 1.0])
    assert np.array_equal(c, [1, 2]) and np.array_equal(w, [1, 1])
    c, w = ls_to_ln_transform([2.0], [4.0])
    assert np.array_equal(c, [8]) and np.array_equal(w, [0.25])


def test_duality_identity():
    rng = np.random.default_rng(1)
    for _ in range(100):
        m, n = rng.integers(3, 9), rng.integers(1, 3)
        A = rng.standard_normal((m, n))
        b = rng.standard_normal(m)
        v = rng.uniform(0.1, 5, m)
        _, yls, fls = solve_wls(A, b, v)
        c, w = ls_to_ln_transform(b, v)
        _, yln, fln = solve_wln(A, c, w)
        total = np.sum(v * b ** 2)
        assert abs(fls + fln - total) <= 1e-12 * total
        # residual relation up to the sign convention of y_LS
        assert np.allclose(np.abs(yls), np.abs(np.sqrt(v) * b - yln), atol=1e-10)


def test_solve_wls_matches_normal_equations():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((8, 3))
    b = rng.standard_normal(8)
    v = rng.uniform(0.1, 2, 8)
    x, _, f = solve_wls(A, b, v)
    xo, fo = dense_ls(A, b, v)
    assert np.allclose(x, xo) and np.isclose(f, fo)


def test_gamma_identity_for_unit_vector():
    spec = MosaicSpec([2], [3])
    sys = build_varpro([1.0, 0.0], np.zeros(spec.data_length), np.ones(spec.data_length), spec=spec)
    assert np.allclose(sys.gamma_dense(), np.eye(3))


def test_gamma_matches_dense_and_band_structure():
    rng = np.random.default_rng(4)
    checked = 0
    while checked < 60:
        spec, P, c, w = random_instance(rng)
        try:
            sys = build_varpro(P, c, w, spec=spec, rcond_tol=1e-300)
        except IllConditionedGamma:
            # structurally singular draw (inf weight on a lone column)
            continue
        checked += 1
        M = matmultmat(P, spec)
        winv = np.where(np.isinf(w), 0, 1 / w)
        G = M.T @ (winv[:, None] * M)
        assert np.allclose(sys.gamma_dense(), G, rtol=1e-13, atol=1e-13 * np.abs(G).max())
        # entries beyond the bandwidth vanish in interleaved order
        order = interleave_order(spec, P.shape[1])
        Gi = G[np.ix_(order, order)]
        i, j = np.indices(Gi.shape)
        assert np.all(Gi[np.abs(i - j) > sys.bandwidth] == 0)
        # cholesky reproduces the band
        n = Gi.shape[0]
        L = np.zeros((n, n))
        for u in range(sys.chol.shape[0]):
            jj = np.arange(n - u)
            L[jj + u, jj] = sys.chol[u, : n - u]
        assert np.allclose(L @ L.T, Gi, rtol=1e-12, atol=1e-12 * np.abs(Gi).max())
        assert np.allclose(multiplication_operator(KernelParam(P, spec)).toarray(), M)


def test_cost_matches_dense_oracle():
    rng = np.random.default_rng(5)
    for _ in range(60):
        spec, P, c, w = random_instance(rng)
        try:
            sys = build_varpro(P, c, w, spec=spec)
        except IllConditionedGamma:
            continue
        M = matmultmat(P, spec)
        f = dense_ln_cost(M, c, w)
        assert np.isclose(eval_cost(sys), f, rtol=1e-10)
        assert np.isclose(sys.cost, sys.residual @ sys.residual, rtol=1e-10)
        z, _, f2 = solve_wln(M, c, w)
        assert np.allclose(sys.corrected, z, atol=1e-10 * np.abs(c).max())
        # infinite-weight coordinates stay exactly at the data
        assert np.array_equal(sys.corrected[np.isinf(w)], c[np.isinf(w)])


def test_cost_zero_in_kernel():
    rng = np.random.default_rng(6)
    spec = MosaicSpec([2, 2], [3])
    P = rng.standard_normal((4, 1))
    M = matmultmat(P, spec)
    c0 = rng.standard_normal(spec.data_length)
    c = c0 - M @ np.linalg.solve(M.T @ M, M.T @ c0)
    sys = build_varpro(P, c, np.ones_like(c), spec=spec)
    assert eval_cost(sys) < 1e-28
    assert np.linalg.norm(eval_grad(sys)) < 1e-10


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 100:
        spec, P, c, w = random_instance(rng)
        if P.size < 2 or P.shape[1] * sum(spec.col_blocks) >= spec.data_length:
            # scalar parameter or square/wide M: the cost is constant in P
            continue

        def f(X):
            return build_varpro(X, c, w, spec=spec, rcond_tol=1e-300).cost

        try:
            sys = build_varpro(P, c, w, spec=spec, rcond_tol=1e-8)
        except IllConditionedGamma:
            continue
        g = eval_grad(sys)
        gfd = central_diff(f, P)
        assert np.linalg.norm(g - gfd) <= 1e-6 * np.linalg.norm(g), (spec, g, gfd)
        # Euler relation for the scale-invariant cost
        assert abs(np.sum(g * P)) <= 1e-10 * max(1.0, np.linalg.norm(g) * np.linalg.norm(P))
        checked += 1


def test_jacobian_and_gn():
    rng = np.random.default_rng(8)
    for _ in range(30):
        spec, P, c, w = random_instance(rng)
        try:
            sys = build_varpro(P, c, w, spec=spec, rcond_tol=1e-8)
        except IllConditionedGamma:
            continue
        J = eval_jacobian(sys)
        Jfd = np.zeros_like(J)
        flat = P.ravel()
        for q in range(flat.size):
            e = np.zeros_like(flat)
            e[q] = 1e-6
            rp = build_varpro((flat + e).reshape(P.shape), c, w, spec=spec, rcond_tol=1e-300).residual
            rm = build_varpro((flat - e).reshape(P.shape), c, w, spec=spec, rcond_tol=1e-300).residual
            Jfd[:, q] = (rp - rm) / 2e-6
        assert np.allclose(J, Jfd, atol=1e-5 * max(1.0, np.abs(J).max()))
        G = eval_gn(sys)
        ev = np.linalg.eigvalsh(G)
        assert ev[0] >= -1e-10 * ev[-1]
        # 2 J^T y = gradient
        assert np.allclose(2 * J.T @ sys.residual, eval_grad(sys).ravel(), atol=1e-9)
        out = evaluate(sys)
        assert out.cost >= 0 and out.grad.shape == P.shape and not out.regularized


def test_gn_taylor_model_at_zero_residual():
    rng = np.random.default_rng(9)
    spec = MosaicSpec([3], [4, 2])
    P = rng.standard_normal((3, 1))
    M = matmultmat(P, spec)
    c0 = rng.standard_normal(spec.data_length)
    c = c0 - M @ np.linalg.solve(M.T @ M, M.T @ c0)
    w = np.ones_like(c)
    G = eval_gn(build_varpro(P, c, w, spec=spec))
    dirn = rng.standard_normal(P.size)
    errs = []
    for s in (1e-2, 1e-3, 1e-4):
        dP = s * dirn
        f = build_varpro(P + dP.reshape(P.shape), c, w, spec=spec).cost
        errs.append(abs(f - 0.5 * dP @ G @ dP) / s ** 2)
    assert errs[2] < errs[0] * 0.05


def test_ill_conditioned_gamma_raises_and_regularizes():
    spec = MosaicSpec([2, 1], [3])
    # second row block is all zero and its weights are infinite -> Gamma has zero rows
    P = np.array([[1.0], [0.0], [0.0]])
    c = np.arange(spec.data_length, dtype=float)
    w = np.ones(spec.data_length)
    w[:4] = np.inf
    with pytest.raises(IllConditionedGamma) as exc:
        build_varpro(P, c, w, spec=spec)
    assert exc.value.pivot is not None and exc.value.pivot >= 1
    sys = build_varpro(P, c, w, spec=spec, regularize=True)
    assert sys.regularized and sys.ridge > 0
    assert np.isfinite(sys.cost)


def test_shape_errors():
    spec = MosaicSpec([2], [2])
    with pytest.raises(ValueError):
        build_varpro([1.0, 0.0, 1.0], np.zeros(3), np.ones(3), spec=spec)
    with pytest.raises(ValueError):
        build_varpro([1.0, 0.0], np.zeros(4), np.ones(4), spec=spec)
    with pytest.raises(ValueError):
        build_varpro([1.0, 0.0], np.zeros(3), np.array([1.0, 0.0, 1.0]), spec=spec)
