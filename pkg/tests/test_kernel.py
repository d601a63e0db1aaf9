import itertools

import numpy as np
import pytest

from approxgcd.image import IMAGE_H, solve_image
from approxgcd.kernel import (
    SingularGamma, build_sylv1, build_sylv_full, embedding_hankel, gamma_singularity_probe, kernel_solve,
    sylv_mosaic_embed, verify_common_divisor,
)
from approxgcd.optim import SolverOptions
from approxgcd.poly import PolyTuple, WeightScheme

from oracles import homog_gcd_degree


def test_build_sylv1_examples():
    S = build_sylv1(PolyTuple([[1, 2, 1], [1, 1]]), 1)
    assert S.shape == (3, 3)
    assert abs(np.linalg.det(S)) < 1e-12
    S = build_sylv1(PolyTuple([[1, 1], [1, -1, 1]]), 1)
    assert np.linalg.matrix_rank(S) == S.shape[1]
    p = PolyTuple([[1, 2, 3], [4, 5, 6, 7]])
    assert np.array_equal(build_sylv_full(p, 2), build_sylv1(p, 2))
    with pytest.raises(ValueError):
        build_sylv1(PolyTuple([[1, 2]]), 1)
    with pytest.raises(ValueError):
        build_sylv1(p, 3)


def test_sylv1_kernel_encodes_cofactors():
    rng = np.random.default_rng(0)
    h = rng.standard_normal(2)
    g = [rng.standard_normal(3) for _ in range(3)]
    p = PolyTuple([np.convolve(gk, h) for gk in g])
    S = build_sylv_full(p, 1)
    u = np.concatenate(g)
    assert np.linalg.norm(S @ u) <= 1e-13 * np.linalg.norm(S) * np.linalg.norm(u)


@pytest.mark.parametrize("degrees", [(2, 2), (1, 1, 1)])
def test_rank_deficiency_iff_common_divisor_exhaustive(degrees):
    """All 729 tuples with coefficients in {-1, 0, 1}."""
    sizes = [n + 1 for n in degrees]
    for coeffs in itertools.product((-1, 0, 1), repeat=sum(sizes)):
        parts, pos = [], 0
        for s in sizes:
            parts.append(np.array(coeffs[pos:pos + s], dtype=float))
            pos += s
        p = PolyTuple(parts)
        g = homog_gcd_degree(parts)
        for d in range(1, min(degrees) + 1):
            S = build_sylv_full(p, d)
            deficient = np.linalg.matrix_rank(S) < S.shape[1]
            assert deficient == (g >= d), (parts, d, g)


def test_full_matrix_fixes_zero_first_polynomial():
    # p1 = 0 and p2, p3 coprime: the single-pivot subresultant is degenerate
    p = PolyTuple([[0, 0, 0], [1, 1, 0], [1, -1, 1]])
    S1 = build_sylv1(p, 1)
    S = build_sylv_full(p, 1)
    assert np.linalg.matrix_rank(S1) < S1.shape[1]
    assert np.linalg.matrix_rank(S) == S.shape[1]
    assert homog_gcd_degree([pk.coeffs for pk in p]) == 0


@pytest.mark.parametrize("N", [2, 3, 4])
def test_embedding_identity(N):
    rng = np.random.default_rng(N)
    count = 0
    while count < 50:
        n = rng.integers(1, 5, N)
        p = PolyTuple([rng.standard_normal(k + 1) for k in n])
        for d in range(1, p.n_min + 1):
            emb = sylv_mosaic_embed(p, None, d)
            lhs = embedding_hankel(emb)
            rhs = build_sylv1(p, d).T
            assert lhs.shape == rhs.shape
            assert np.max(np.abs(lhs - rhs)) <= 1e-13 * np.max(np.abs(rhs))
            assert emb.recover(emb.data) == p
            count += 1


def test_embedding_sizes_and_frozen_count():
    p = PolyTuple([np.ones(11), np.ones(11)])
    emb = sylv_mosaic_embed(p, None, 4)
    assert emb.L_b == 7 and emb.K_b == 17
    assert np.sum(np.isinf(emb.ext_weights)) == 2 * (emb.L_b - 1) + 2 * 6 == 24
    for N, n, d in [(3, (3, 4, 2), 1), (4, (2, 2, 3, 2), 2)]:
        p = PolyTuple([np.ones(k + 1) for k in n])
        emb = sylv_mosaic_embed(p, None, d)
        assert emb.K_b == emb.L_b + n[0]
        assert np.sum(np.isinf(emb.ext_weights)) == 2 * (emb.L_b - 1) + N * (n[0] - d)


def test_missing_coefficients_flag():
    p = PolyTuple([[1, 2, 1], [1, 0, -1]])
    emb = sylv_mosaic_embed(p, WeightScheme([[1, 0, 1], [1, 1, 1]]), 1)
    assert "missing-coefficients" in emb.flags
    assert np.all(emb.ext_weights > 0)


def test_kernel_solve_exact_pair():
    p = PolyTuple([[1, 2, 1], [1, 0, -1]])
    res = kernel_solve(p, None, 1)
    assert res.objective <= 1e-24
    assert res.feasibility <= 1e-12
    assert verify_common_divisor(res.p_hat, 1)[0]


def test_kernel_matches_image_near_exact():
    rng = np.random.default_rng(1)
    h = rng.standard_normal(4)
    p = PolyTuple([np.convolve(h, rng.standard_normal(4)) + 1e-5 * rng.standard_normal(7) for _ in range(2)])
    rk = kernel_solve(p, None, 3)
    ri = solve_image(p, None, 3, IMAGE_H)
    assert abs(rk.euclid_dist - ri.euclid_dist) <= 1e-8


def test_kernel_three_polynomials_singular():
    p = PolyTuple([[1, 2, 1], [1, 0, -1], [2, 3, 1]])
    with pytest.raises(SingularGamma):
        kernel_solve(p, None, 1)
    res = kernel_solve(p, None, 1, opts=SolverOptions(allow_regularization=True))
    assert res.regularized and "regularized" in res.flags
    assert np.isfinite(res.objective)


def test_verify_common_divisor():
    rng = np.random.default_rng(2)
    p = PolyTuple([rng.standard_normal(5), rng.standard_normal(4)])
    res = solve_image(p, None, 2, IMAGE_H)
    ok, gap = verify_common_divisor(res.p_hat, 2)
    assert ok and gap <= 1e-12
    for _ in range(5):
        q = PolyTuple([rng.standard_normal(4), rng.standard_normal(4)])
        ok, gap = verify_common_divisor(q, 1)
        assert not ok and gap >= 1e-3
    outcomes = [verify_common_divisor(q, 1, tol)[0] for tol in np.logspace(-8, 0, 9)]
    assert outcomes == sorted(outcomes)


def test_gamma_singularity_probe():
    assert gamma_singularity_probe((2, 2, 2), 1, trials=100) <= 1e-10
    ratios = gamma_singularity_probe((4, 4), 2, trials=30, return_all=True)
    assert ratios.min() >= 1e-8
