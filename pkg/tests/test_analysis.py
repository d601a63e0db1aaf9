import numpy as np
import pytest

from approxgcd.analysis import (
    ACCURACY_COLUMNS, SPEED_DIVISOR, STLN_REFERENCE, accuracy_table, eigen_containment_check,
    gen_illcond_family, gen_speed_family, lra_distance, stln_reference, symbol_bounds, time_per_iteration,
)
from approxgcd.image import IMAGE_H, ImageProblem, image_h_solve
from approxgcd.poly import MosaicSpec

# frozen from an independent product of the ten linear factors in exact rationals
U_NORM = 11594.441392962566


def test_symbol_examples():
    s = symbol_bounds([2.0])
    assert np.isclose(s.a_F, 4) and np.isclose(s.b_F, 4) and np.isclose(s.kappa, 1)
    s = symbol_bounds([1.0, -1.0])
    assert s.a_F == 0 and np.isclose(s.b_F, 4) and np.isinf(s.kappa)
    s = symbol_bounds([1.0, 0.5])
    assert np.isclose(s.a_F, 0.25) and np.isclose(s.b_F, 2.25)
    # two row blocks add their moduli
    s = symbol_bounds(np.array([[1.0], [1.0], [1.0]]), spec=MosaicSpec([1, 2], [1]))
    assert np.isclose(s.a_F, 1) and np.isclose(s.b_F, 5)
    with pytest.raises(ValueError):
        symbol_bounds([1.0], n_samples=4)


def test_containment_constant_and_unit_root():
    rep = eigen_containment_check([3.0])
    assert np.allclose(rep.lam_min, 9) and np.allclose(rep.lam_max, 9)
    assert rep.contained and rep.monotone
    rep = eigen_containment_check([1.0, -1.0])
    assert rep.contained and rep.monotone
    assert rep.lam_min[-1] < 0.01 and rep.lam_min[-1] < rep.lam_min[0] / 10


def test_containment_roots_off_circle():
    rng = np.random.default_rng(0)
    for _ in range(3):
        roots = rng.uniform(1.3, 2.0, 3) * np.exp(2j * np.pi * rng.uniform(size=3))
        h = np.real(np.poly(np.concatenate([roots, roots.conj()])))[::-1]
        rep = eigen_containment_check(h)
        assert rep.contained and rep.monotone and rep.a_F > 0


def test_illcond_family():
    p, scale = gen_illcond_family()
    assert p.degrees == (10, 10)
    assert np.isclose(scale, U_NORM, rtol=1e-14)
    assert np.isclose(np.linalg.norm(p[0].coeffs), 1.0)
    roots = np.sort(np.roots(p[0].coeffs[::-1]).real)
    expected = np.sort([(-1) ** j * j / 2 for j in range(1, 11)])
    assert np.allclose(roots, expected, atol=1e-8)
    vr = np.sort(np.roots(p[1].coeffs[::-1]).real)
    assert np.allclose(vr, np.sort([(-1) ** j * j / 2 - 10.0 ** (-j) for j in range(1, 11)]), atol=1e-6)
    assert np.allclose(stln_reference(scale) * scale, STLN_REFERENCE)


def test_speed_family():
    p1 = gen_speed_family(1)
    assert p1.degrees == (54, 54)
    assert gen_speed_family(2).degrees == (104, 104)
    assert gen_speed_family(1, seed=3) == gen_speed_family(1, seed=3)
    assert gen_speed_family(1, seed=3) != gen_speed_family(1, seed=4)
    exact = gen_speed_family(1, sigma=0.0)
    res = image_h_solve(ImageProblem(exact, None, 4), h0=SPEED_DIVISOR)
    assert res.objective <= 1e-20 * np.sum(exact.stacked() ** 2)
    with pytest.raises(ValueError):
        gen_speed_family(0)


def test_timing_smoke():
    rows = time_per_iteration(IMAGE_H, [1], reps=2, floor=0.05)
    assert rows[0]["k"] == 1 and rows[0]["degree"] == 54
    assert rows[0]["iterations"] <= 1
    assert 0 < rows[0]["min_time"] <= rows[0]["median_time"] <= rows[0]["max_time"] < 1.0


def test_accuracy_rows_and_lra():
    rows = accuracy_table(ds=[9])
    assert len(rows) == 1 and set(ACCURACY_COLUMNS) <= set(rows[0])
    p, _ = gen_illcond_family()
    assert rows[0]["im"] <= rows[0]["lra"] + 1e-15
    assert np.isclose(rows[0]["lra"], lra_distance(p, 9))
