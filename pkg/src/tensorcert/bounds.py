"""Certificates for existence and uniqueness of best rank-R approximations.

Single pencil
    For a simple ``R x R x 2`` pencil ``P = [[A, B, C]]`` (unit ``C`` columns)
    every pencil within Frobenius distance
    ``eps = smin(A) smin(B) min_{i != j} chordal(c_i, c_j) / 2``
    is simple with a real spectrum, and the matching distance between the
    spectra is at most ``||E|| / (smin(A) smin(B))``.

Many pencils
    For ``S = T ·3 U`` with ``U`` orthogonal, disjoint slice pairs of ``S``
    each give an ``eps_i``; with ``eps = ||(eps_i)||_2`` every tensor within
    ``eps / 2`` of ``T`` has a best rank-R approximation.

Measured tensors
    With ``W'`` a truncated MLSVD of ``M'`` and ``eps`` computed on its core,
    ``M'`` has a best rank-R approximation if some rank-R ``T~'`` satisfies
    ``||M' - T~'|| < eps - ||M' - W'||``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import pencil as pj
from .approx import cpd_als, spectral_norm_bounds
from .compress import RANK_TOL, Compression, compress, leading_subspace, mode_singular_values, multilinear_rank
from .tensor import FactorTriple, _as_tensor, _rng, frobenius_norm, haar_orthogonal, synthesize, unfold

__all__ = [
    "SCHEMA_VERSION",
    "CertVerdict",
    "PencilDetail",
    "BoundReport",
    "MeasuredCertificate",
    "CertifyOptions",
    "BauerFikeBound",
    "balance_factors",
    "normalize_c",
    "pencil_existence_epsilon",
    "matching_distance_bound",
    "bauer_fike_sv_bound",
    "multi_pencil_epsilon",
    "best_pairing",
    "certify_neighborhood",
    "mlsvd_existence_check",
    "BOUND_REPORT_SCHEMA",
    "MEASURED_CERTIFICATE_SCHEMA",
]

SCHEMA_VERSION = 1


class CertVerdict(str, enum.Enum):
    CERTIFIED = "Certified"
    INCONCLUSIVE = "Inconclusive"


# ---------------------------------------------------------------------------
# factor scaling


def normalize_c(f: FactorTriple) -> FactorTriple:
    """Give ``C`` unit columns, moving the scale into ``A``."""
    n = np.linalg.norm(f.C, axis=0)
    if np.any(n == 0):
        raise ValueError("C has a zero column")
    return FactorTriple(f.A * n, f.B, f.C / n)


def _smin_product(A, B):
    return np.linalg.svd(A, compute_uv=False)[-1] * np.linalg.svd(B, compute_uv=False)[-1]


def balance_factors(
    f: FactorTriple, mode: str = "columns", max_sweeps: int = 100, tol: float = 1e-6
) -> FactorTriple:
    """Rescale ``A D`` and ``B D^-1`` (``C`` untouched).

    ``mode="columns"`` equalizes the norms of matching columns of ``A`` and
    ``B``.  ``mode="als"`` starts from that and then maximizes
    ``smin(A D) smin(B D^-1)`` one diagonal entry at a time (a bounded scalar
    search in ``log d_r``), stopping when a sweep improves the objective by
    less than ``tol`` relatively or after ``max_sweeps`` sweeps.
    """
    na = np.linalg.norm(f.A, axis=0)
    nb = np.linalg.norm(f.B, axis=0)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("cannot balance factors with a zero column in A or B")
    d = np.sqrt(nb / na)
    A = f.A * d
    B = f.B / d
    if mode == "columns":
        return FactorTriple(A, B, f.C)
    if mode != "als":
        raise ValueError(f"unknown balancing mode {mode!r}")
    from scipy.optimize import minimize_scalar

    R = A.shape[1]
    best = _smin_product(A, B)
    for _ in range(max_sweeps):
        start = best
        for r in range(R):
            def neg(t, r=r):
                s = np.exp(t)
                A2 = A.copy()
                B2 = B.copy()
                A2[:, r] *= s
                B2[:, r] /= s
                return -_smin_product(A2, B2)

            res = minimize_scalar(neg, bounds=(-3.0, 3.0), method="bounded", options={"xatol": 1e-6})
            if -res.fun > best:
                s = np.exp(res.x)
                A[:, r] *= s
                B[:, r] /= s
                best = -res.fun
        if best - start <= tol * max(start, 1e-300):
            break
    return FactorTriple(A, B, f.C)


# ---------------------------------------------------------------------------
# single pencil


@dataclass
class PencilDetail:
    pair: tuple
    sigma_min_A: float
    sigma_min_B: float
    min_chordal_gap: float
    epsilon_i: float
    diagnosis: str

    def to_dict(self):
        d = asdict(self)
        d["pair"] = list(self.pair)
        return d


def _min_gap(C):
    R = C.shape[1]
    if R < 2:
        return 1.0
    D = pj.chordal_matrix(C.T, C.T)
    D[np.diag_indices(R)] = np.inf
    return float(D.min())


def pencil_existence_epsilon(
    P,
    rng=None,
    tol: float = pj.MIX_TOL,
    real_tol: float = pj.REAL_TOL,
    gap_tol: float = pj.GAP_TOL,
    balance: str = "columns",
    pair=(1, 2),
):
    """Radius ``eps_i`` of a Frobenius ball of simple pencils around ``P``.

    Returns ``(eps_i, detail)``; ``eps_i`` is zero for pencils that are not
    simple.  ``pair`` only labels the detail record.
    """
    d = pj.pencil_spectrum(P, rng, tol, real_tol, gap_tol)
    if not d.simple:
        return 0.0, PencilDetail(tuple(pair), 0.0, 0.0, 0.0, 0.0, d.verdict.value)
    f = balance_factors(d.cpd, balance)
    sa = float(np.linalg.svd(f.A, compute_uv=False)[-1])
    sb = float(np.linalg.svd(f.B, compute_uv=False)[-1])
    gap = _min_gap(f.C)
    eps = sa * sb * gap / 2.0
    return eps, PencilDetail(tuple(pair), sa, sb, gap, eps, d.verdict.value)


def matching_distance_bound(P, f: FactorTriple, W, norm_mode: str = "frobenius", rng=None):
    """Matching-distance bound between the spectra of ``P`` and ``W``.

    Returns ``(bound, certified)`` where ``bound = ||W - P|| / (smin A smin B)``
    and ``certified`` is true when ``||W - P|| < smin A smin B gap / 2``.  With
    ``norm_mode="sp_estimate"`` the HOPM estimate of the spectral norm is
    used; that estimate is a lower bound, so the result is diagnostic only.
    """
    P = _as_tensor(P)
    W = _as_tensor(W)
    if P.shape != W.shape:
        raise ValueError("P and W must have the same shape")
    E = W - P
    if norm_mode == "frobenius":
        e = frobenius_norm(E)
    elif norm_mode == "sp_estimate":
        e = spectral_norm_bounds(E, rng)[0]
    else:
        raise ValueError(f"unknown norm_mode {norm_mode!r}")
    sa = np.linalg.svd(f.A, compute_uv=False)[-1]
    sb = np.linalg.svd(f.B, compute_uv=False)[-1]
    radius = sa * sb * _min_gap(f.C) / 2.0
    return float(e / (sa * sb)), bool(e < radius)


@dataclass
class BauerFikeBound:
    """``coefficient * ||E ·1 A^-1 ·2 B^-1||_sp`` from below and above.

    ``bound`` uses the HOPM estimate (the figure reported in experiments);
    ``upper`` uses the smallest unfolding 2-norm and is a rigorous bound.
    """

    bound: float
    upper: float
    coefficient: float

    def __float__(self):
        return self.bound


def bauer_fike_sv_bound(
    f: FactorTriple,
    E,
    special_case: str = "none",
    rng=None,
    restarts: int = 10,
    balance: str | None = "columns",
    tol: float = 1e-12,
) -> BauerFikeBound:
    """Spectral-variation bound for ``T = [[A, B, C]]`` perturbed by ``E``.

    ``C`` columns are normalized (scale into ``A``) and, unless ``balance`` is
    None, ``A`` and ``B`` are balanced before inverting.  The coefficient is
    ``sqrt(R)`` for ``special_case="none"`` and 1 for ``"K2"`` or
    ``"shared_factor"``.
    """
    E = _as_tensor(E, "E")
    if special_case not in ("none", "K2", "shared_factor"):
        raise ValueError(f"unknown special_case {special_case!r}")
    R = f.R
    if f.A.shape != (R, R) or f.B.shape != (R, R):
        raise ValueError("A and B must be square")
    g = normalize_c(f)
    if balance:
        g = balance_factors(g, balance)
    for name, M in (("A", g.A), ("B", g.B)):
        s = np.linalg.svd(M, compute_uv=False)
        if s[-1] <= tol * s[0]:
            raise ValueError(f"factor {name} is numerically singular (smin/smax = {s[-1] / s[0]:.3g})")
    X = np.einsum("ijk,ai,bj->abk", E, np.linalg.inv(g.A), np.linalg.inv(g.B))
    lo, hi = spectral_norm_bounds(X, rng, restarts)
    c = np.sqrt(R) if special_case == "none" else 1.0
    return BauerFikeBound(c * lo, c * hi, c)


# ---------------------------------------------------------------------------
# many pencils


@dataclass
class BoundReport:
    epsilon_vector: list
    epsilon: float
    existence_radius: float
    unitary: np.ndarray
    pairing: list
    per_pencil: list
    verdict: CertVerdict
    seed: int | None = None
    n_unitaries: int = 1
    reorder: bool = False
    tolerances: dict = field(default_factory=dict)
    history: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "schema": "tensorcert.bound_report",
            "schema_version": SCHEMA_VERSION,
            "epsilon_vector": [float(e) for e in self.epsilon_vector],
            "epsilon": float(self.epsilon),
            "existence_radius": float(self.existence_radius),
            "unitary": np.asarray(self.unitary).tolist(),
            "pairing": [list(p) for p in self.pairing],
            "per_pencil": [p.to_dict() for p in self.per_pencil],
            "verdict": self.verdict.value,
            "seed": self.seed,
            "n_unitaries": int(self.n_unitaries),
            "reorder": bool(self.reorder),
            "tolerances": dict(self.tolerances),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def best_pairing(E):
    """Disjoint slice pairs maximizing ``sum eps_pair^2``.

    ``E`` is the symmetric matrix of pairwise radii.  Exact dynamic program
    over subsets (equivalent to enumerating every perfect matching); for odd
    ``K`` one slice is left out.  Returns ``(value, pairs)`` with 0-based
    pairs.
    """
    E = np.asarray(E, float)
    K = E.shape[0]
    if K > 16:
        raise ValueError("pairing search is limited to K <= 16")
    W = E**2
    full = (1 << K) - 1
    odd = K % 2 == 1
    memo: dict = {}

    def solve(mask, skip_left):
        key = (mask, skip_left)
        if key in memo:
            return memo[key]
        if mask == full:
            return 0.0, ()
        i = 0
        while mask >> i & 1:
            i += 1
        best = (-1.0, ())
        m2 = mask | (1 << i)
        if skip_left:
            v, p = solve(m2, False)
            best = (v, p)
        for j in range(i + 1, K):
            if not mask >> j & 1:
                v, p = solve(m2 | (1 << j), skip_left)
                v += W[i, j]
                if v > best[0]:
                    best = (v, ((i, j),) + p)
        memo[key] = best
        return best

    v, pairs = solve(0, odd)
    return float(v), sorted(pairs)


def _pair_eps(S, pairs, rng, kw):
    eps, details = [], []
    for i, j in pairs:
        e, d = pencil_existence_epsilon(S[:, :, [i, j]], rng, pair=(i + 1, j + 1), **kw)
        eps.append(e)
        details.append(d)
    return eps, details


def multi_pencil_epsilon(
    T,
    rng=None,
    n_unitaries: int = 1,
    reorder: bool = False,
    include_identity: bool = True,
    tol: float = pj.MIX_TOL,
    real_tol: float = pj.REAL_TOL,
    gap_tol: float = pj.GAP_TOL,
    balance: str = "columns",
) -> BoundReport:
    """Largest multi-pencil radius over a set of orthogonal mode-3 mixes.

    The candidate unitaries are the identity (unless ``include_identity`` is
    false) followed by Haar-random orthogonal matrices until ``n_unitaries``
    have been tried.  Without reordering the slices of ``S = T ·3 U`` are
    paired consecutively; with ``reorder`` every pair's radius is computed and
    the pairing maximizing the l2 norm is selected.  ``report.history`` holds
    the best epsilon after each unitary.
    """
    T = pj._square_slices(T)
    K = T.shape[2]
    if K < 2:
        raise ValueError("need at least two frontal slices")
    n_unitaries = int(n_unitaries)
    if n_unitaries < 1:
        raise ValueError("n_unitaries must be at least 1")
    rng = _rng(rng)
    kw = dict(tol=tol, real_tol=real_tol, gap_tol=gap_tol, balance=balance)
    consecutive = [(2 * i, 2 * i + 1) for i in range(K // 2)]
    best = None
    history = []
    for t in range(n_unitaries):
        urng = rng.child("unitary", t)
        if t == 0 and include_identity:
            U = np.eye(K)
        else:
            U = haar_orthogonal(urng, K)
        S = np.einsum("ijk,lk->ijl", T, U)
        prng = urng.child("pencils")
        if reorder:
            Emat = np.zeros((K, K))
            det = {}
            for i in range(K):
                for j in range(i + 1, K):
                    e, d = pencil_existence_epsilon(S[:, :, [i, j]], prng, pair=(i + 1, j + 1), **kw)
                    Emat[i, j] = Emat[j, i] = e
                    det[(i, j)] = d
            _, pairs = best_pairing(Emat)
            eps = [Emat[i, j] for i, j in pairs]
            details = [det[p] for p in pairs]
        else:
            pairs = consecutive
            eps, details = _pair_eps(S, pairs, prng, kw)
        total = float(np.linalg.norm(eps))
        if best is None or total > best[0]:
            best = (total, eps, U, pairs, details)
        history.append(best[0])
    total, eps, U, pairs, details = best
    return BoundReport(
        epsilon_vector=[float(e) for e in eps],
        epsilon=total,
        existence_radius=total / 2.0,
        unitary=U,
        pairing=[(i + 1, j + 1) for i, j in pairs],
        per_pencil=details,
        verdict=CertVerdict.CERTIFIED if total > 0 else CertVerdict.INCONCLUSIVE,
        seed=rng.seed,
        n_unitaries=n_unitaries,
        reorder=reorder,
        tolerances={"mix": tol, "real": real_tol, "gap": gap_tol},
        history=history,
    )


# ---------------------------------------------------------------------------
# full-size tensors


@dataclass
class CertifyOptions:
    n_unitaries: int = 1
    reorder: bool = False
    include_identity: bool = True
    rank_tol: float = RANK_TOL
    mix_tol: float = pj.MIX_TOL
    real_tol: float = pj.REAL_TOL
    gap_tol: float = pj.GAP_TOL
    balance: str = "columns"
    als_max_iters: int = 500
    als_tol: float = 1e-8
    als_restarts: int = 3
    als_init: str | None = "gevd"
    core_only: bool = False

    def pencil_kw(self):
        return dict(
            n_unitaries=self.n_unitaries,
            reorder=self.reorder,
            include_identity=self.include_identity,
            tol=self.mix_tol,
            real_tol=self.real_tol,
            gap_tol=self.gap_tol,
            balance=self.balance,
        )


def certify_neighborhood(Tprime, R: int, rng=None, opts: CertifyOptions | None = None) -> BoundReport:
    """Existence radius around a tensor of multilinear rank ``(R, R, K)``.

    The tensor is compressed by a truncated MLSVD to ``R x R x K`` (``K`` its
    numerical mode-3 rank) and the radius is computed on the core; it applies
    to ``Tprime`` itself because the compression is an isometry on the
    relevant tensor subspace.

    Raises
    ------
    ValueError
        If the numerical multilinear rank exceeds ``(R, R, R)``.
    """
    opts = opts or CertifyOptions()
    T = _as_tensor(Tprime, "Tprime")
    R = int(R)
    if R > min(T.shape[:2]):
        raise ValueError(f"rank {R} exceeds the first two dimensions {T.shape[:2]}")
    mr = multilinear_rank(T, opts.rank_tol)
    if any(r > R for r in mr):
        sv = [np.round(s[: R + 2], 12).tolist() for s in mode_singular_values(T)]
        raise ValueError(
            f"numerical multilinear rank {mr} exceeds ({R}, {R}, {R}); leading mode singular values {sv}"
        )
    K = max(mr[2], 1)
    if K < 2:
        # a single slice admits no pencil
        K = min(2, T.shape[2])
    comp = _compress_to(T, (R, R, K))
    return multi_pencil_epsilon(comp.core, rng, **opts.pencil_kw())


def _compress_to(T, ranks) -> Compression:
    """Truncated MLSVD that leaves modes already of the target size untouched.

    Keeping the identity basis there means an ``R x R x K`` input is
    certified exactly as given, with the same slices (and the same mode-3
    unitaries) that :func:`multi_pencil_epsilon` would see.
    """
    Vs = []
    for m, r in zip((1, 2, 3), ranks):
        if T.shape[m - 1] == r:
            Vs.append(np.eye(r))
        else:
            Vs.append(leading_subspace(unfold(T, m), r)[0])
    core = compress(T, *Vs)
    res = np.sqrt(max(frobenius_norm(T) ** 2 - frobenius_norm(core) ** 2, 0.0))
    return Compression(core, tuple(Vs), float(res))


@dataclass
class MeasuredCertificate:
    mlsvd_error: float
    fit_error: float
    epsilon: float
    slack: float
    verdict: CertVerdict
    core_only: bool
    K: int
    fit_rel_error: float
    fit_converged: bool
    report: BoundReport | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "schema": "tensorcert.measured_certificate",
            "schema_version": SCHEMA_VERSION,
            "mlsvd_error": float(self.mlsvd_error),
            "fit_error": float(self.fit_error),
            "epsilon": float(self.epsilon),
            "slack": float(self.slack),
            "verdict": self.verdict.value,
            "core_only": bool(self.core_only),
            "K": int(self.K),
            "fit_rel_error": float(self.fit_rel_error),
            "fit_converged": bool(self.fit_converged),
            "bound_report": self.report.to_dict() if self.report is not None else None,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def mlsvd_existence_check(Mprime, R: int, rng=None, opts: CertifyOptions | None = None) -> MeasuredCertificate:
    """Existence certificate for a measured tensor.

    ``K = min(R3(M'), R)``; ``W'`` is the truncated MLSVD of multilinear rank
    ``(R, R, K)`` with core ``W``; ``eps`` is the multi-pencil radius of
    ``W``; ``T~`` is a CPD-ALS rank-``R`` fit of ``W``.  The verdict is
    Certified iff ``||M' - T~'|| < eps - ||M' - W'||`` (strict), where
    ``||M' - T~'||^2 = ||M' - W'||^2 + ||W - T~||^2``.  With
    ``opts.core_only`` the question is asked of ``W`` itself and the test
    reduces to ``||W - T~|| < eps``.
    """
    opts = opts or CertifyOptions()
    M = _as_tensor(Mprime, "Mprime")
    R = int(R)
    if R > min(M.shape[:2]):
        raise ValueError(f"rank {R} exceeds the first two dimensions {M.shape[:2]}")
    rng = _rng(rng)
    r3 = multilinear_rank(M, opts.rank_tol)[2]
    K = min(r3, R)
    if K < 2:
        K = min(2, M.shape[2])
    comp = _compress_to(M, (R, R, K))
    W = comp.core
    report = multi_pencil_epsilon(W, rng.child("epsilon"), **opts.pencil_kw())
    eps = report.epsilon
    fit = cpd_als(
        W, R, rng.child("fit"), max_iters=opts.als_max_iters,
        tol=opts.als_tol,
        restarts=opts.als_restarts,
        init=opts.als_init,
    )
    core_err = frobenius_norm(W - synthesize(fit.factors))
    if opts.core_only:
        mlsvd_err = 0.0
        fit_err = core_err
        slack = eps - fit_err
        ok = fit_err < eps
    else:
        mlsvd_err = comp.residual
        fit_err = float(np.hypot(mlsvd_err, core_err))
        slack = eps - mlsvd_err - fit_err
        ok = fit_err < eps - mlsvd_err
    return MeasuredCertificate(
        mlsvd_error=float(mlsvd_err),
        fit_error=float(fit_err),
        epsilon=float(eps),
        slack=float(slack),
        verdict=CertVerdict.CERTIFIED if ok else CertVerdict.INCONCLUSIVE,
        core_only=opts.core_only,
        K=K,
        fit_rel_error=fit.rel_error,
        fit_converged=fit.converged,
        report=report,
    )


# ---------------------------------------------------------------------------
# JSON schemas

_NUM = {"type": "number"}
_PENCIL = {
    "type": "object",
    "required": ["pair", "sigma_min_A", "sigma_min_B", "min_chordal_gap", "epsilon_i", "diagnosis"],
    "properties": {
        "pair": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2, "maxItems": 2},
        "sigma_min_A": _NUM,
        "sigma_min_B": _NUM,
        "min_chordal_gap": _NUM,
        "epsilon_i": {"type": "number", "minimum": 0},
        "diagnosis": {"enum": [v.value for v in pj.Verdict]},
    },
}
BOUND_REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "tensorcert bound report",
    "type": "object",
    "required": [
        "schema",
        "schema_version",
        "epsilon_vector",
        "epsilon",
        "existence_radius",
        "unitary",
        "pairing",
        "per_pencil",
        "verdict",
        "seed",
        "n_unitaries",
        "reorder",
        "tolerances",
    ],
    "properties": {
        "schema": {"const": "tensorcert.bound_report"},
        "schema_version": {"const": SCHEMA_VERSION},
        "epsilon_vector": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "epsilon": {"type": "number", "minimum": 0},
        "existence_radius": {"type": "number", "minimum": 0},
        "unitary": {"type": "array", "items": {"type": "array", "items": _NUM}},
        "pairing": {"type": "array", "items": {"type": "array", "items": {"type": "integer"}}},
        "per_pencil": {"type": "array", "items": _PENCIL},
        "verdict": {"enum": ["Certified", "Inconclusive"]},
        "seed": {"type": ["integer", "null"]},
        "n_unitaries": {"type": "integer", "minimum": 1},
        "reorder": {"type": "boolean"},
        "tolerances": {"type": "object"},
    },
}
MEASURED_CERTIFICATE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "tensorcert measured certificate",
    "type": "object",
    "required": [
        "schema",
        "schema_version",
        "mlsvd_error",
        "fit_error",
        "epsilon",
        "slack",
        "verdict",
        "core_only",
        "K",
    ],
    "properties": {
        "schema": {"const": "tensorcert.measured_certificate"},
        "schema_version": {"const": SCHEMA_VERSION},
        "mlsvd_error": {"type": "number", "minimum": 0},
        "fit_error": {"type": "number", "minimum": 0},
        "epsilon": {"type": "number", "minimum": 0},
        "slack": _NUM,
        "verdict": {"enum": ["Certified", "Inconclusive"]},
        "core_only": {"type": "boolean"},
        "K": {"type": "integer", "minimum": 1},
        "bound_report": {"anyOf": [{"type": "null"}, BOUND_REPORT_SCHEMA]},
    },
}
