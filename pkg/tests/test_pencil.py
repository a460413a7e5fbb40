import itertools
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tensorcert.pencil import (
    Line,
    PencilDiagnosis,
    Spectrum,
    Verdict,
    bottleneck_assignment,
    canonical_lines,
    char_poly_eval,
    chordal,
    chordal_matrix,
    factor_spectrum,
    jennrich_cpd,
    jennrich_pencil_cpd,
    matching_distance,
    pencil_spectrum,
    slice_mix,
    slice_mix_probe,
    spectral_variation,
)
from tensorcert.tensor import FactorTriple, SeededRng, frobenius_norm, random_rank_r, synthesize

from fixtures_data import (
    not_mix_invertible,
    slices_to_tensor,
    three_linear_factors,
    three_linear_factors_poly,
)

seeds = st.integers(0, 2**31)


def chordal_oracle(u, v):
    u = np.asarray(u, float) / np.linalg.norm(u)
    v = np.asarray(v, float) / np.linalg.norm(v)
    return np.sqrt(max(0.0, 1.0 - float(u @ v) ** 2))


def matching_oracle(S1, S2):
    L1, L2 = S1.as_array(), S2.as_array()
    R = len(L1)
    return min(
        max(chordal_oracle(L1[k], L2[p[k]]) for k in range(R)) for p in itertools.permutations(range(R))
    )


def random_spectrum(rng, R, K):
    return Spectrum.from_array(rng.standard_normal((R, K)))


# --- lines and spectra --------------------------------------------------------


def test_line_canonical_sign_and_norm():
    l = Line(np.array([0.0, -3.0, 4.0]))
    assert np.allclose(l.rep, [0.0, 0.6, -0.8])
    assert abs(np.linalg.norm(l.rep) - 1.0) < 1e-12
    assert Line([1.0, 1.0]) == Line([-2.0, -2.0])
    assert Line([1.0, 0.0]) != Line([1.0, 1e-3])


def test_line_rejects_zero():
    with pytest.raises(ValueError):
        Line([0.0, 0.0])
    with pytest.raises(ValueError):
        Line([])


def test_canonical_lines_ignores_roundoff_sign():
    X = canonical_lines([[1e-17, -1.0]])
    assert X[0, 1] == 1.0


def test_spectrum_json_round_trip():
    S = Spectrum([[1.0, 2.0], [0.0, -1.0]], eigvectors=np.array([[2.0, 0.0], [0.0, 3.0]]))
    assert S.R == 2 and S.K == 2 and len(S.lines) == 2
    assert np.allclose(np.linalg.norm(S.eigvectors, axis=0), 1.0)
    T = Spectrum.from_json(S.to_json())
    assert np.allclose(T.as_array(), S.as_array(), rtol=0, atol=1e-15) and T.all_real
    assert json.loads(S.to_json())["lines"][1] == [0.0, 1.0]


def test_spectrum_validation():
    with pytest.raises(ValueError):
        Spectrum([])
    with pytest.raises(ValueError):
        Spectrum([[1.0, 0.0], [1.0, 0.0, 0.0]])
    with pytest.raises(ValueError):
        Spectrum([[1.0, 0.0]], eigvectors=np.eye(2))


def test_diagnosis_cpd_iff_simple():
    with pytest.raises(ValueError):
        PencilDiagnosis(Verdict.SIMPLE)
    f = FactorTriple(np.eye(2), np.eye(2), np.eye(2))
    with pytest.raises(ValueError):
        PencilDiagnosis(Verdict.REPEATED, cpd=f)


# --- characteristic polynomial ------------------------------------------------


@pytest.mark.parametrize("gamma,value", [((0, 1, 0), -2.0), ((0, 0, 1), 15.0), ((1, 0, 0), 1.0)])
def test_char_poly_fixture_values(gamma, value):
    assert abs(char_poly_eval(three_linear_factors(), gamma) - value) < 1e-12


def test_char_poly_fixture_factorization():
    rng = np.random.default_rng(0)
    T = three_linear_factors()
    for _ in range(20):
        g = rng.standard_normal(3)
        ref = three_linear_factors_poly(g)
        assert abs(char_poly_eval(T, g) - ref) <= 1e-10 * max(1.0, abs(ref))


def test_char_poly_vanishes_without_invertible_mix():
    rng = np.random.default_rng(1)
    T = not_mix_invertible()
    for _ in range(50):
        assert abs(char_poly_eval(T, rng.standard_normal(3))) < 1e-10


@given(seeds, st.integers(1, 6), st.integers(2, 4), st.floats(-3, 3).filter(lambda t: abs(t) > 0.1))
def test_char_poly_homogeneous(seed, R, K, t):
    rng = np.random.default_rng(seed)
    T = rng.standard_normal((R, R, K))
    g = rng.standard_normal(K)
    p, pt = char_poly_eval(T, g), char_poly_eval(T, t * g)
    assert abs(pt - t**R * p) <= 1e-9 * max(abs(pt), abs(t**R * p), 1e-12)


def test_char_poly_errors():
    with pytest.raises(ValueError, match="square"):
        char_poly_eval(np.zeros((2, 3, 2)), [1, 0])
    with pytest.raises(ValueError):
        char_poly_eval(np.zeros((2, 2, 2)), [1, 0, 0])


# --- slice mix probe ----------------------------------------------------------


def test_probe_fails_without_invertible_mix():
    assert slice_mix_probe(not_mix_invertible(), SeededRng(0), trials=200) == (False, None)


def test_probe_succeeds_on_fixture():
    ok, v = slice_mix_probe(three_linear_factors(), SeededRng(0))
    assert ok and abs(np.linalg.norm(v) - 1) < 1e-12
    assert abs(np.linalg.det(slice_mix(three_linear_factors(), v))) > 1e-6


def test_probe_identity_slices():
    T = slices_to_tensor(np.eye(3), np.zeros((3, 3)))
    ok, v = slice_mix_probe(T, SeededRng(3))
    assert ok
    assert np.linalg.svd(slice_mix(T, v), compute_uv=False)[-1] > 1e-8 * np.linalg.norm(T)


def test_probe_zero_tensor():
    assert slice_mix_probe(np.zeros((2, 2, 2)), SeededRng(0)) == (False, None)


# --- pencil spectrum ----------------------------------------------------------


def test_diagonal_pencil_is_simple():
    P = slices_to_tensor(np.diag([1.0, 0.0]), np.diag([0.0, 1.0]))
    d = pencil_spectrum(P, SeededRng(0))
    assert d.verdict is Verdict.SIMPLE and d.spectrum.all_real
    assert matching_distance(d.spectrum, Spectrum([[1, 0], [0, 1]])) < 1e-12
    f = d.cpd
    assert np.allclose(synthesize(f), P, atol=1e-14)
    # A and B are generalized permutation matrices
    for M in (f.A, f.B):
        assert np.sum(np.abs(M) > 1e-12) == 2


def test_jordan_pencil_is_repeated():
    P = slices_to_tensor(np.eye(2), [[1.0, 1.0], [0.0, 1.0]])
    d = pencil_spectrum(P, SeededRng(0))
    assert d.verdict is Verdict.REPEATED and d.cpd is None
    assert isinstance(jennrich_pencil_cpd(P, SeededRng(0)), PencilDiagnosis)


def test_rotation_pencil_is_complex():
    P = slices_to_tensor(np.eye(2), [[0.0, -1.0], [1.0, 0.0]])
    # independent check: the rotation has eigenvalues +-i
    assert np.allclose(sorted(np.linalg.eigvals(P[:, :, 1]).imag), [-1, 1])
    d = pencil_spectrum(P, SeededRng(0))
    assert d.verdict is Verdict.COMPLEX and not d.spectrum.all_real


def test_singular_pencil():
    P = slices_to_tensor(np.diag([1.0, 0.0]), np.diag([2.0, 0.0]))
    assert pencil_spectrum(P, SeededRng(0)).verdict is Verdict.SINGULAR


def test_pencil_spectrum_requires_two_slices():
    with pytest.raises(ValueError):
        pencil_spectrum(np.zeros((2, 2, 3)))


@pytest.mark.parametrize("R", [1, 2, 4, 7, 10])
def test_jennrich_round_trip(R):
    T, f = random_rank_r(SeededRng(100 + R), (R, R, 2), R, warn=False)
    g = jennrich_pencil_cpd(T, SeededRng(1))
    assert isinstance(g, FactorTriple)
    assert frobenius_norm(synthesize(g) - T) < 1e-8
    assert matching_distance(factor_spectrum(g.C), factor_spectrum(f.C)) < 1e-7
    assert np.allclose(np.linalg.norm(g.C, axis=0), 1.0)


@given(seeds, st.integers(2, 8))
def test_jennrich_spectrum_independent_of_mix(seed, R):
    T, _ = random_rank_r(SeededRng(seed), (R, R, 2), R, warn=False)
    d1 = pencil_spectrum(T, SeededRng(seed).child(1))
    d2 = pencil_spectrum(T, SeededRng(seed).child(2))
    assert d1.simple and d2.simple
    assert matching_distance(d1.spectrum, d2.spectrum) < 1e-8


def test_jennrich_general_k():
    T, f = random_rank_r(SeededRng(5), (5, 5, 4), 5, warn=False)
    d = jennrich_cpd(T, SeededRng(0))
    assert d.simple
    assert frobenius_norm(synthesize(d.cpd) - T) < 1e-8
    assert matching_distance(d.spectrum, factor_spectrum(f.C)) < 1e-7


def test_jennrich_spectrum_lines_are_c_columns_and_b_from_vectors():
    T, f = random_rank_r(SeededRng(9), (3, 3, 2), 3, warn=False)
    d = pencil_spectrum(T, SeededRng(0))
    assert np.allclose(d.cpd.C, d.spectrum.as_array().T)
    assert np.allclose(d.cpd.B, np.linalg.inv(d.spectrum.eigvectors).T)


# --- metrics ------------------------------------------------------------------


def test_chordal_values():
    assert chordal(Line([1, 0]), Line([0, 1])) == 1.0
    assert chordal(Line([1, 2]), Line([1, 2])) == 0.0
    assert abs(chordal(Line([1, 0]), Line([1, 1])) - 1 / np.sqrt(2)) < 1e-15
    with pytest.raises(ValueError):
        chordal(Line([1, 0]), Line([1, 0, 0]))


def test_chordal_accurate_for_close_lines():
    d = 1e-12
    assert abs(chordal(Line([1.0, 0.0]), Line([1.0, d])) - d) < 1e-20


@given(seeds, st.integers(2, 5))
def test_chordal_matches_inner_product_formula(seed, K):
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal(K), rng.standard_normal(K)
    assert abs(chordal(Line(u), Line(v)) - chordal_oracle(u, v)) < 1e-10


@given(seeds, st.integers(2, 5))
def test_chordal_metric_axioms(seed, K):
    rng = np.random.default_rng(seed)
    a, b, c = (Line(rng.standard_normal(K)) for _ in range(3))
    assert chordal(a, b) >= 0 and chordal(a, a) == 0
    assert chordal(a, b) == chordal(b, a)
    assert chordal(a, c) <= chordal(a, b) + chordal(b, c) + 1e-10


def test_spectral_variation_asymmetric():
    S1 = Spectrum([[1, 0], [0, 1]])
    S2 = Spectrum([[1, 0], [1, 0]])
    assert spectral_variation(S1, S2) == 0.0
    assert spectral_variation(S2, S1) == 1.0
    assert spectral_variation(S1, S1) == 0.0
    assert matching_distance(S1, S2) == 1.0
    assert matching_distance(S1, S1) == 0.0


def test_spectral_variation_singletons():
    a, b = Spectrum([[1, 2]]), Spectrum([[3, -1]])
    assert abs(spectral_variation(a, b) - chordal_oracle([1, 2], [3, -1])) < 1e-14


def test_matching_distance_size_mismatch():
    with pytest.raises(ValueError):
        matching_distance(Spectrum([[1, 0]]), Spectrum([[1, 0], [0, 1]]))


@pytest.mark.parametrize("seed", range(5))
def test_matching_distance_r6_against_permutations(seed):
    rng = np.random.default_rng(seed)
    S1, S2 = random_spectrum(rng, 6, 3), random_spectrum(rng, 6, 3)
    ref = matching_oracle(S1, S2)
    assert abs(matching_distance(S1, S2) - ref) < 1e-12
    assert abs(matching_distance(S1, S2, exhaustive_max=0) - ref) < 1e-12


@given(seeds, st.integers(1, 7))
def test_bottleneck_equals_exhaustive(seed, R):
    rng = np.random.default_rng(seed)
    D = chordal_matrix(rng.standard_normal((R, 2)), rng.standard_normal((R, 2)))
    ref = min(max(D[k, p[k]] for k in range(R)) for p in itertools.permutations(range(R)))
    assert bottleneck_assignment(D) == ref


@given(seeds, st.integers(1, 9), st.integers(2, 4))
def test_matching_distance_symmetric_and_dominates_sv(seed, R, K):
    rng = np.random.default_rng(seed)
    S1, S2 = random_spectrum(rng, R, K), random_spectrum(rng, R, K)
    m = matching_distance(S1, S2)
    assert abs(m - matching_distance(S2, S1)) < 1e-15
    assert m >= spectral_variation(S1, S2) - 1e-15
    assert m >= spectral_variation(S2, S1) - 1e-15
