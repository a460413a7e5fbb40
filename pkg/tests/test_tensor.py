import itertools
import warnings
import zlib

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tensorcert.tensor import (
    FactorTriple,
    SeededRng,
    add_noise_at_snr,
    format_tensor,
    frobenius_inner,
    frobenius_norm,
    haar_orthogonal,
    khatri_rao,
    modal_product,
    outer3,
    parse_tensor,
    random_rank_r,
    read_tensor,
    refold,
    snr_db,
    synthesize,
    unfold,
    write_tensor,
)

from fixtures_data import three_linear_factors

dims3 = st.tuples(*(st.integers(1, 5),) * 3)
seeds = st.integers(0, 2**32)


def rand_tensor(seed, dims):
    return np.random.default_rng(seed).standard_normal(dims)


# --- outer3 -------------------------------------------------------------------


def test_outer3_basis_vectors():
    T = outer3([1, 0], [1, 0], [1, 0])
    expected = np.zeros((2, 2, 2))
    expected[0, 0, 0] = 1
    assert np.array_equal(T, expected)


def test_outer3_direct_product():
    T = outer3([1, 1], [1, 0], [0, 1])
    expected = np.zeros((2, 2, 2))
    expected[0, 0, 1] = expected[1, 0, 1] = 1
    assert np.array_equal(T, expected)


def test_outer3_empty_vector_rejected():
    with pytest.raises(ValueError):
        outer3([], [1.0], [1.0])


@given(seeds, dims3)
def test_outer3_norm_is_product_of_norms(seed, dims):
    rng = np.random.default_rng(seed)
    a, b, c = (rng.standard_normal(n) for n in dims)
    a, b, c = a / np.linalg.norm(a), b / np.linalg.norm(b), c / np.linalg.norm(c)
    T = outer3(a, b, c)
    direct = np.sqrt(sum(T[i, j, k] ** 2 for i, j, k in itertools.product(*map(range, dims))))
    assert abs(direct - 1.0) < 1e-12
    assert abs(frobenius_norm(T) - 1.0) < 1e-12


# --- synthesize ---------------------------------------------------------------


def test_synthesize_identity_factors():
    T = synthesize(np.eye(2), np.eye(2), np.eye(2))
    assert np.array_equal(T[:, :, 0], np.diag([1.0, 0.0]))
    assert np.array_equal(T[:, :, 1], np.diag([0.0, 1.0]))


def test_synthesize_rank_one_is_outer3():
    rng = np.random.default_rng(1)
    a, b, c = rng.standard_normal(3), rng.standard_normal(4), rng.standard_normal(2)
    assert np.allclose(synthesize(a[:, None], b[:, None], c[:, None]), outer3(a, b, c), atol=1e-15)


@given(seeds, dims3, st.integers(1, 4))
def test_synthesize_slices_are_a_dk_bt(seed, dims, R):
    rng = np.random.default_rng(seed)
    A, B, C = (rng.standard_normal((n, R)) for n in dims)
    T = synthesize(A, B, C)
    for k in range(dims[2]):
        assert np.allclose(T[:, :, k], A @ np.diag(C[k]) @ B.T, atol=1e-12)


def test_synthesize_reproduces_fixture_from_slice_factorization():
    # T = sum_{i,k} T_k[:, i] (x) e_i (x) e_k is an exact (rank <= 9) factorization
    T = three_linear_factors()
    cols_a, cols_b, cols_c = [], [], []
    for k in range(3):
        for i in range(3):
            cols_a.append(T[:, i, k])
            cols_b.append(np.eye(3)[i])
            cols_c.append(np.eye(3)[k])
    f = FactorTriple(np.column_stack(cols_a), np.column_stack(cols_b), np.column_stack(cols_c))
    assert np.array_equal(synthesize(f), T)


def test_factor_triple_rank_mismatch():
    with pytest.raises(ValueError, match="column count"):
        FactorTriple(np.ones((2, 2)), np.ones((2, 3)), np.ones((2, 2)))


def test_factor_triple_dict_round_trip():
    _, f = random_rank_r(SeededRng(4), (3, 4, 5), 2)
    g = FactorTriple.from_dict(f.to_dict())
    assert np.array_equal(g.A, f.A) and np.array_equal(g.C, f.C)
    assert g.R == 2 and g.dims == (3, 4, 5)


# --- modal product ------------------------------------------------------------


def test_modal_product_identity():
    T = rand_tensor(0, (2, 3, 4))
    for m in (1, 2, 3):
        assert np.array_equal(modal_product(T, np.eye(T.shape[m - 1]), m), T)


def test_modal_product_row_vector_is_slice_mix():
    T = rand_tensor(1, (3, 3, 4))
    v = np.random.default_rng(2).standard_normal(4)
    v /= np.linalg.norm(v)
    S = modal_product(T, v, 3)
    assert S.shape == (3, 3, 1)
    assert np.allclose(S[:, :, 0], sum(v[k] * T[:, :, k] for k in range(4)), atol=1e-14)


def test_modal_product_matches_fiber_loop():
    T = rand_tensor(3, (2, 3, 4))
    M = np.random.default_rng(4).standard_normal((5, 3))
    S = modal_product(T, M, 2)
    for i in range(2):
        for k in range(4):
            assert np.allclose(S[i, :, k], M @ T[i, :, k])


@given(seeds, st.integers(1, 3))
def test_modal_product_composition(seed, mode):
    rng = np.random.default_rng(seed)
    T = rng.standard_normal((3, 4, 5))
    n = T.shape[mode - 1]
    M, N = rng.standard_normal((3, n)), rng.standard_normal((2, 3))
    lhs = modal_product(modal_product(T, M, mode), N, mode)
    assert np.allclose(lhs, modal_product(T, N @ M, mode), atol=1e-12)


@given(seeds, st.integers(1, 3))
def test_modal_product_orthogonal_preserves_norm(seed, mode):
    T = rand_tensor(seed, (3, 4, 5))
    Q = haar_orthogonal(SeededRng(seed % 1000), T.shape[mode - 1])
    assert abs(frobenius_norm(modal_product(T, Q, mode)) - frobenius_norm(T)) < 1e-12


def test_modal_product_dimension_mismatch():
    with pytest.raises(ValueError):
        modal_product(np.zeros((2, 3, 4)), np.eye(3), 1)
    with pytest.raises(ValueError):
        modal_product(np.zeros((2, 3, 4)), np.eye(2), 4)


# --- unfoldings ---------------------------------------------------------------


def test_unfold_columns_are_fibers_in_lexicographic_order():
    T = rand_tensor(5, (2, 3, 4))
    M = unfold(T, 2)
    cols = [T[i, :, k] for i in range(2) for k in range(4)]
    assert np.array_equal(M, np.column_stack(cols))
    M3 = unfold(T, 3)
    assert np.array_equal(M3, np.column_stack([T[i, j, :] for i in range(2) for j in range(3)]))


def test_unfold_matches_khatri_rao_formula():
    rng = np.random.default_rng(6)
    A, B, C = rng.standard_normal((3, 2)), rng.standard_normal((4, 2)), rng.standard_normal((5, 2))
    kr = np.column_stack([np.kron(B[:, r], C[:, r]) for r in range(2)])
    assert np.allclose(khatri_rao(B, C), kr)
    assert np.allclose(unfold(synthesize(A, B, C), 1), A @ kr.T, atol=1e-12)


def test_unfold_rank_one():
    T = outer3([1.0, 2.0], [3.0, -1.0, 0.5], [1.0, 1.0, 2.0, -2.0])
    for m in (1, 2, 3):
        assert np.linalg.matrix_rank(unfold(T, m)) == 1


@given(seeds, dims3, st.integers(1, 3))
def test_unfold_refold_round_trip(seed, dims, mode):
    T = rand_tensor(seed, dims)
    M = unfold(T, mode)
    assert abs(np.linalg.norm(M) - frobenius_norm(T)) < 1e-12
    assert np.array_equal(refold(M, mode, dims), T)


# --- norms --------------------------------------------------------------------


def test_frobenius_basics():
    assert frobenius_norm(np.zeros((2, 2, 2))) == 0.0
    T = np.zeros((1, 1, 1))
    T[0, 0, 0] = 3
    assert frobenius_norm(T) == 3.0
    S = rand_tensor(7, (3, 3, 3))
    assert abs(frobenius_norm(S) ** 2 - frobenius_inner(S, S)) < 1e-12
    with pytest.raises(ValueError):
        frobenius_inner(S, np.zeros((3, 3, 2)))


# --- random tensors and noise -------------------------------------------------


def test_random_rank_r_deterministic_and_unit_norm():
    T1, f1 = random_rank_r(SeededRng(11), (5, 6, 7), 3)
    T2, f2 = random_rank_r(SeededRng(11), (5, 6, 7), 3)
    assert np.array_equal(T1, T2) and np.array_equal(f1.A, f2.A)
    assert abs(frobenius_norm(T1) - 1.0) < 1e-12
    assert np.allclose(synthesize(f1), T1, atol=1e-15)


def test_random_rank_r_multilinear_rank():
    T, _ = random_rank_r(SeededRng(0), (10, 10, 10), 4)
    for m in (1, 2, 3):
        s = np.linalg.svd(unfold(T, m), compute_uv=False)
        assert int(np.sum(s > 1e-8 * s[0])) == 4


def test_random_rank_r_warns_above_min_dim():
    with pytest.warns(UserWarning, match="exceeds"):
        random_rank_r(SeededRng(0), (3, 3, 2), 3)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        random_rank_r(SeededRng(0), (3, 3, 2), 3, warn=False)


def test_random_rank_r_rejects_zero_rank():
    with pytest.raises(ValueError):
        random_rank_r(SeededRng(0), (3, 3, 3), 0)


@pytest.mark.parametrize("snr,ratio", [(0.0, 1.0), (20.0, 0.1), (-20.0, 10.0)])
def test_add_noise_at_snr(snr, ratio):
    T, _ = random_rank_r(SeededRng(2), (4, 4, 4), 2)
    M, N = add_noise_at_snr(T, SeededRng(3), snr)
    assert np.array_equal(M, T + N)
    assert abs(frobenius_norm(N) - ratio * frobenius_norm(T)) < 1e-9
    assert abs(snr_db(T, N) - snr) < 1e-9


def test_add_noise_rejects_zero_signal():
    with pytest.raises(ValueError):
        add_noise_at_snr(np.zeros((2, 2, 2)), SeededRng(0), 10.0)


# --- seeded streams -----------------------------------------------------------


def test_seeded_rng_frozen_values():
    assert SeededRng(0).standard_normal(3).tolist() == [
        0.1257302210933933,
        -0.1321048632913019,
        0.6404226504432821,
    ]
    assert SeededRng(7).child("existence-radius", 3, 5).standard_normal(3).tolist() == [
        0.1249255641661408,
        -0.6657865085587668,
        -0.10127380525763634,
    ]


def test_seeded_rng_child_matches_seed_sequence_rule():
    key = (zlib.crc32(b"fit"), 4)
    ref = np.random.Generator(np.random.PCG64(np.random.SeedSequence(99, spawn_key=key)))
    assert np.array_equal(SeededRng(99).child("fit", 4).standard_normal(5), ref.standard_normal(5))


def test_seeded_rng_children_are_distinct_and_pure():
    r = SeededRng(5)
    a = r.child(1).standard_normal(4)
    r.standard_normal(100)  # consuming the parent does not move children
    assert np.array_equal(a, r.child(1).standard_normal(4))
    assert not np.array_equal(a, r.child(2).standard_normal(4))


def test_seeded_rng_rejects_bad_seeds():
    with pytest.raises(ValueError):
        SeededRng(-1)
    with pytest.raises(ValueError):
        SeededRng(2**64)
    with pytest.raises(ValueError):
        SeededRng(0).child(-3)


def test_haar_orthogonal():
    Q = haar_orthogonal(SeededRng(1), 6)
    assert np.allclose(Q.T @ Q, np.eye(6), atol=1e-12)
    assert np.array_equal(Q, haar_orthogonal(SeededRng(1), 6))


# --- files --------------------------------------------------------------------


def test_tensor_file_layout_is_mode1_fastest():
    T = np.arange(12, dtype=float).reshape(2, 3, 2)
    lines = format_tensor(T).splitlines()
    assert lines[0] == "dims,2,3,2"
    assert [float(x) for x in lines[1:4]] == [T[0, 0, 0], T[1, 0, 0], T[0, 1, 0]]


@given(seeds, dims3)
def test_tensor_file_round_trip_is_exact(seed, dims):
    T = rand_tensor(seed, dims) * 10.0 ** np.random.default_rng(seed).integers(-300, 300)
    assert np.array_equal(parse_tensor(format_tensor(T)), T)


def test_tensor_file_on_disk(tmp_path):
    T = rand_tensor(8, (2, 2, 3))
    write_tensor(tmp_path / "t.csv", T)
    assert np.array_equal(read_tensor(tmp_path / "t.csv"), T)


@pytest.mark.parametrize(
    "text,msg",
    [
        ("", "empty"),
        ("size,2,2,2\n", "header"),
        ("dims,2,2\n", "header"),
        ("dims,2,a,2\n", "dimensions"),
        ("dims,0,2,2\n", "positive"),
        ("dims,1,1,2\n1.0\n", "expected 2"),
        ("dims,1,1,2\n1.0\nabc\n", "non-numeric"),
    ],
)
def test_tensor_file_errors(text, msg):
    with pytest.raises(ValueError, match=msg):
        parse_tensor(text)
