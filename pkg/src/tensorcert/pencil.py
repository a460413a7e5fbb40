"""Joint generalized eigenvalues of R x R x K tensors.

A joint generalized eigenvalue (JGE value) is a line ``span(lam)`` in R^K
for which some nonzero ``x`` gives ``T_k x = lam_k y`` on every frontal slice
``T_k``.  For a rank-R tensor ``[[A, B, C]]`` with invertible ``A`` and ``B``
the JGE values are the spans of the columns of ``C`` and the JGE vectors are
the columns of ``inv(B).T``.  Jennrich's algorithm recovers both from the
eigendecomposition of ``inv(G) @ H`` for two random slice mixes ``G`` and
``H``.
"""

from __future__ import annotations

import enum
import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .tensor import FactorTriple, SeededRng, _as_tensor, _rng

__all__ = [
    "Line",
    "Spectrum",
    "Verdict",
    "PencilDiagnosis",
    "REAL_TOL",
    "GAP_TOL",
    "MIX_TOL",
    "slice_mix",
    "char_poly_eval",
    "slice_mix_probe",
    "pencil_spectrum",
    "jennrich_cpd",
    "jennrich_pencil_cpd",
    "factor_spectrum",
    "chordal",
    "chordal_matrix",
    "spectral_variation",
    "matching_distance",
    "canonical_lines",
]

REAL_TOL = 1e-8  # |Im| <= REAL_TOL * (1 + |Re|) counts as real
GAP_TOL = 1e-8  # lines closer than this (chordal) count as repeated
MIX_TOL = 1e-8  # sigma_min(mix) must exceed MIX_TOL * ||T||_F
N_MIXES = 3  # candidate slice mixes drawn per attempt
MAX_TRIES = 5


# ---------------------------------------------------------------------------
# lines and spectra


def canonical_lines(X) -> np.ndarray:
    """Normalize the rows of ``X`` and flip signs so the first nonzero entry is positive.

    Entries below ``1e-12`` (after normalization) count as zero so that
    round-off does not decide the sign.
    """
    X = np.array(X, dtype=float, ndmin=2)
    X = X / np.linalg.norm(X, axis=1, keepdims=True)
    nz = np.abs(X) > 1e-12
    first = np.where(nz.any(axis=1), nz.argmax(axis=1), 0)
    s = np.sign(X[np.arange(len(X)), first])
    s[s == 0] = 1.0
    return X * s[:, None] + 0.0


@dataclass(frozen=True)
class Line:
    """One-dimensional subspace of R^K stored as a unit vector.

    The sign is fixed so the first nonzero coordinate is positive; ``rep`` is
    normalized on construction.
    """

    rep: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.rep, dtype=float).ravel()
        if v.size == 0:
            raise ValueError("a line needs a nonempty representative")
        if not np.all(np.isfinite(v)) or not np.any(v):
            raise ValueError("a line needs a finite nonzero representative")
        object.__setattr__(self, "rep", canonical_lines(v)[0])

    @property
    def K(self) -> int:
        return self.rep.size

    def distance(self, other: "Line") -> float:
        return chordal(self, other)

    def __eq__(self, other):
        if not isinstance(other, Line):
            return NotImplemented
        return self.K == other.K and chordal(self, other) < GAP_TOL

    def __hash__(self):  # equality is tolerance based; hash only on K
        return hash(self.K)


class Spectrum:
    """Multiset of JGE values.

    Stored as an ``R x K`` array of canonical unit representatives;
    :attr:`lines` exposes them as :class:`Line` objects.  ``eigvectors``
    (when present) holds the unit-norm JGE vectors as columns, in the same
    order as the lines.
    """

    __slots__ = ("_L", "all_real", "eigvectors")

    def __init__(self, lines, all_real: bool = True, eigvectors=None):
        rows = [l.rep if isinstance(l, Line) else np.asarray(l, float).ravel() for l in lines]
        if not rows:
            raise ValueError("a spectrum needs at least one line")
        if len({r.size for r in rows}) != 1:
            raise ValueError("all lines of a spectrum must live in the same R^K")
        L = np.vstack(rows)
        if not np.all(np.isfinite(L)) or not np.all(np.any(L, axis=1)):
            raise ValueError("line representatives must be finite and nonzero")
        self._init(canonical_lines(L), all_real, eigvectors)

    def _init(self, L, all_real, eigvectors):
        self._L = L
        self.all_real = bool(all_real)
        if eigvectors is not None:
            X = np.asarray(eigvectors, dtype=float)
            if X.ndim != 2 or X.shape[1] != L.shape[0]:
                raise ValueError("one eigenvector per line is required")
            eigvectors = X / np.linalg.norm(X, axis=0)
        self.eigvectors = eigvectors

    @classmethod
    def from_array(cls, L, all_real=True, eigvectors=None) -> "Spectrum":
        """Build from an R x K array whose rows are representatives."""
        L = np.array(L, dtype=float, ndmin=2)
        if L.size == 0 or not np.all(np.isfinite(L)) or not np.all(np.any(L, axis=1)):
            raise ValueError("line representatives must be finite and nonzero")
        self = cls.__new__(cls)
        self._init(canonical_lines(L), all_real, eigvectors)
        return self

    @property
    def lines(self) -> tuple:
        return tuple(Line(r) for r in self._L)

    @property
    def R(self) -> int:
        return self._L.shape[0]

    @property
    def K(self) -> int:
        return self._L.shape[1]

    def __len__(self):
        return self.R

    def as_array(self) -> np.ndarray:
        return self._L.copy()

    def __repr__(self):
        return f"Spectrum(R={self.R}, K={self.K}, all_real={self.all_real})"

    def to_dict(self) -> dict:
        return {"lines": self._L.tolist(), "all_real": self.all_real}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "Spectrum":
        d = json.loads(s)
        return cls.from_array(np.array(d["lines"], float), bool(d["all_real"]))


class Verdict(str, enum.Enum):
    SIMPLE = "Simple"
    REPEATED = "RepeatedEigenvalue"
    COMPLEX = "ComplexSpectrum"
    SINGULAR = "NotSliceMixInvertible"


@dataclass
class PencilDiagnosis:
    verdict: Verdict
    spectrum: Spectrum | None = None
    cpd: FactorTriple | None = None
    mix: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if (self.cpd is not None) != (self.verdict is Verdict.SIMPLE):
            raise ValueError("a CPD is attached exactly when the verdict is Simple")

    @property
    def simple(self) -> bool:
        return self.verdict is Verdict.SIMPLE


# ---------------------------------------------------------------------------
# characteristic polynomial and slice mixes


def _square_slices(T) -> np.ndarray:
    T = _as_tensor(T)
    if T.shape[0] != T.shape[1]:
        raise ValueError(f"frontal slices must be square, got {T.shape[0]}x{T.shape[1]}")
    return T


def slice_mix(T, v) -> np.ndarray:
    """``sum_k v[k] T[:, :, k]``."""
    return np.asarray(T, float) @ np.asarray(v, float)


def char_poly_eval(T, gamma) -> float:
    """``det(sum_k gamma_k T_k)``."""
    T = _square_slices(T)
    gamma = np.asarray(gamma, float).ravel()
    if gamma.size != T.shape[2]:
        raise ValueError(f"gamma has {gamma.size} entries for {T.shape[2]} slices")
    return float(np.linalg.det(slice_mix(T, gamma)))


def slice_mix_probe(T, rng=None, trials: int = 20, tol: float = MIX_TOL):
    """Look for a unit ``v`` with ``sigma_min(T ·_3 v) > tol ||T||_F``.

    Returns ``(True, v)`` on success, ``(False, None)`` if every trial fails.
    """
    T = _square_slices(T)
    rng = _rng(rng)
    scale = np.linalg.norm(T)
    if scale == 0.0:
        return False, None
    best, best_v = -1.0, None
    for _ in range(int(trials)):
        v = rng.unit_vector(T.shape[2])
        s = np.linalg.svd(slice_mix(T, v), compute_uv=False)[-1]
        if s > best:
            best, best_v = s, v
    if best > tol * scale:
        return True, best_v
    return False, None


def _best_mix(T, rng, n, scale, tol):
    V = rng.standard_normal((T.shape[2], n))
    V /= np.linalg.norm(V, axis=0)
    Gs = np.moveaxis(T @ V, 2, 0)
    smin = np.linalg.svd(Gs, compute_uv=False)[:, -1]
    i = int(np.argmax(smin))
    return smin[i] > tol * scale, V[:, i], Gs[i]


# ---------------------------------------------------------------------------
# Jennrich


def jennrich_cpd(
    T,
    rng=None,
    tol: float = MIX_TOL,
    real_tol: float = REAL_TOL,
    gap_tol: float = GAP_TOL,
) -> PencilDiagnosis:
    """Simultaneous-diagonalization CPD of an ``R x R x K`` tensor.

    For ``K = 2`` the eigenvalue ``mu`` of ``inv(G) H`` (with ``G = T ·_3 v``,
    ``H = T ·_3 w``) determines the generalized eigenvalue exactly as the line
    orthogonal to ``w - mu v``.  For ``K > 2`` each line is read off as the
    Rayleigh quotients ``<y, T_k x> / <y, y>`` with ``y = G x``; that is only
    meaningful when the tensor actually has rank ``R``, which callers can
    check through the reconstruction error of the returned CPD.

    The returned CPD has unit-norm ``C`` columns (the line representatives),
    ``B = inv(X).T`` where ``X`` holds the unit JGE vectors, and ``A`` is the
    least-squares solution of ``T_k X = A D_k(C)``.
    """
    T = _square_slices(T)
    R, _, K = T.shape
    if K < 2:
        raise ValueError("need at least two frontal slices")
    rng = _rng(rng)
    scale = np.linalg.norm(T)
    if scale == 0.0:
        return PencilDiagnosis(Verdict.SINGULAR)

    ok = False
    for _ in range(MAX_TRIES):
        ok, v, G = _best_mix(T, rng, N_MIXES, scale, tol)
        if ok:
            break
    if not ok:
        return PencilDiagnosis(Verdict.SINGULAR)
    w = rng.unit_vector(K)
    H = slice_mix(T, w)
    mu, Xc = np.linalg.eig(np.linalg.solve(G, H))

    real = bool(np.all(np.abs(mu.imag) <= real_tol * (1.0 + np.abs(mu.real))))
    if not real:
        L = _complex_lines(T, G, v, w, mu, Xc)
        return PencilDiagnosis(Verdict.COMPLEX, Spectrum.from_array(L, all_real=False), mix=v)

    mu = mu.real
    X = _real_vectors(Xc)
    if K == 2:
        L = np.column_stack([-(w[1] - mu * v[1]), w[0] - mu * v[0]])
    else:
        Y = G @ X
        TX = np.einsum("ijk,jr->irk", T, X)
        L = np.einsum("ir,irk->rk", Y, TX) / np.sum(Y * Y, axis=0)[:, None]
    L = canonical_lines(L)
    spec = Spectrum.from_array(L, all_real=True, eigvectors=X)

    if R > 1:
        D = chordal_matrix(L, L)
        D[np.diag_indices(R)] = np.inf
        if D.min() <= gap_tol:
            return PencilDiagnosis(Verdict.REPEATED, spec, mix=v)
    try:
        B = np.linalg.inv(X).T
    except np.linalg.LinAlgError:
        return PencilDiagnosis(Verdict.REPEATED, spec, mix=v)
    if not np.all(np.isfinite(B)):
        return PencilDiagnosis(Verdict.REPEATED, spec, mix=v)
    C = L.T
    # column r of A is sum_k C[k, r] T_k x_r (least squares with unit c_r)
    A = _solve_a(T, X, C)
    return PencilDiagnosis(Verdict.SIMPLE, spec, FactorTriple(A, B, C), mix=v)


def _solve_a(T, X, C):
    TX = np.moveaxis(T, 2, 0) @ X  # K x R x R, TX[k] = T_k X
    return np.einsum("kir,kr->ir", TX, C)


def _real_vectors(Xc) -> np.ndarray:
    X = np.array(Xc)
    # align phases before dropping the imaginary part
    idx = np.abs(X).argmax(axis=0)
    ph = X[idx, np.arange(X.shape[1])]
    X = (X * (np.abs(ph) / ph)).real
    return X / np.linalg.norm(X, axis=0)


def _complex_lines(T, G, v, w, mu, Xc):
    """Real parts of the (complex) lines, only for reporting."""
    if T.shape[2] == 2:
        L = np.column_stack([-(w[1] - mu * v[1]), w[0] - mu * v[0]])
    else:
        Y = G @ Xc
        TX = np.einsum("ijk,jr->irk", T, Xc)
        L = np.einsum("ir,irk->rk", Y.conj(), TX)
    idx = np.abs(L).argmax(axis=1)
    ph = L[np.arange(len(L)), idx]
    L = (L * (np.abs(ph) / ph)[:, None]).real
    L[~np.any(L, axis=1), 0] = 1.0
    return L


def pencil_spectrum(
    P, rng=None, tol: float = MIX_TOL, real_tol: float = REAL_TOL, gap_tol: float = GAP_TOL
) -> PencilDiagnosis:
    """Diagnose an ``R x R x 2`` pencil and, if simple, return its CPD."""
    P = _square_slices(P)
    if P.shape[2] != 2:
        raise ValueError(f"a pencil has exactly two slices, got {P.shape[2]}")
    return jennrich_cpd(P, rng, tol, real_tol, gap_tol)


def jennrich_pencil_cpd(P, rng=None, tol: float = MIX_TOL, **kw):
    """CPD of a simple ``R x R x 2`` pencil.

    Returns a :class:`FactorTriple` when the pencil is simple, otherwise the
    :class:`PencilDiagnosis` explaining why no CPD was produced.
    """
    d = pencil_spectrum(P, rng, tol, **kw)
    return d.cpd if d.simple else d


def factor_spectrum(C) -> Spectrum:
    """Spectrum given by the columns of a factor matrix ``C`` (K x R)."""
    return Spectrum.from_array(np.asarray(C, float).T)


# ---------------------------------------------------------------------------
# metrics


def _reps(S) -> np.ndarray:
    if isinstance(S, Spectrum):
        return S._L
    if isinstance(S, Line):
        return S.rep[None, :]
    X = np.array(S, dtype=float, ndmin=2)
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def chordal_matrix(X, Y) -> np.ndarray:
    """Pairwise chordal distances between the rows of ``X`` and ``Y``.

    Uses ``sin(theta) = |u - v| |u + v| / 2`` for unit ``u, v`` which stays
    accurate for nearly equal lines, unlike ``sqrt(1 - <u, v>^2)``.
    """
    X = _reps(X)
    Y = _reps(Y)
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"lines live in R^{X.shape[1]} and R^{Y.shape[1]}")
    dm = np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=2)
    dp = np.linalg.norm(X[:, None, :] + Y[None, :, :], axis=2)
    return np.clip(0.5 * dm * dp, 0.0, 1.0)


def chordal(L1, L2) -> float:
    """Sine of the angle between two lines (``sqrt(1 - <l1, l2>^2)``)."""
    return float(chordal_matrix(L1, L2)[0, 0])


def spectral_variation(S_from, S_to) -> float:
    """``max_i min_j chordal(S_from[j], S_to[i])``; not symmetric."""
    D = chordal_matrix(S_from, S_to)
    if D.size == 0:
        raise ValueError("empty spectrum")
    return float(D.min(axis=0).max())


_PERM_CACHE: dict = {}


def _perms(R):
    if R not in _PERM_CACHE:
        _PERM_CACHE[R] = np.array(list(itertools.permutations(range(R))), dtype=np.intp)
    return _PERM_CACHE[R]


def matching_distance(S1, S2, exhaustive_max: int = 8) -> float:
    """``min_pi max_k chordal(S1[k], S2[pi(k)])``.

    Exhaustive over permutations for ``R <= exhaustive_max``; larger spectra
    use a bottleneck assignment (binary search over the sorted distances with
    a maximum bipartite matching feasibility test).
    """
    D = chordal_matrix(S1, S2)
    R = D.shape[0]
    if D.shape[1] != R:
        raise ValueError(f"spectra have different sizes {D.shape[0]} and {D.shape[1]}")
    if R == 0:
        raise ValueError("empty spectrum")
    if R <= exhaustive_max:
        P = _perms(R)
        return float(D[np.arange(R), P].max(axis=1).min())
    return bottleneck_assignment(D)


def bottleneck_assignment(D) -> float:
    """Smallest ``t`` such that the bipartite graph ``D <= t`` has a perfect matching."""
    D = np.asarray(D, float)
    R = D.shape[0]
    vals = np.unique(D)
    # the answer is at least the largest row/column minimum
    lo_val = max(D.min(axis=1).max(), D.min(axis=0).max())
    lo = int(np.searchsorted(vals, lo_val))
    hi = len(vals) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        m = maximum_bipartite_matching(csr_matrix(D <= vals[mid]), perm_type="column")
        if np.all(m >= 0):
            hi = mid
        else:
            lo = mid + 1
    return float(vals[lo])
