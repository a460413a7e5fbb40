"""Rank-R fitting by alternating least squares and rank-1 power iteration."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import FactorTriple, _as_tensor, _rng, frobenius_norm, synthesize, unfold

__all__ = ["FitResult", "cpd_als", "gevd_init", "best_rank1_hopm", "spectral_norm_bounds"]


@dataclass
class FitResult:
    factors: FactorTriple
    rel_error: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list, repr=False)


def _gram_solve(Mt, G):
    # rows of the new factor solve X G = Mt; G is symmetric PSD
    try:
        return np.linalg.solve(G, Mt.T).T
    except np.linalg.LinAlgError:
        return Mt @ np.linalg.pinv(G)


def _als_run(T, init, max_iters, tol, normT2):
    A, B, C = (np.array(M, float) for M in (init.A, init.B, init.C))

    def objective(A, B, C):
        return 0.5 * frobenius_norm(T - synthesize(A, B, C)) ** 2

    hist = [objective(A, B, C)]
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        A = _gram_solve(np.einsum("ijk,jr,kr->ir", T, B, C), (B.T @ B) * (C.T @ C))
        B = _gram_solve(np.einsum("ijk,ir,kr->jr", T, A, C), (A.T @ A) * (C.T @ C))
        C = _gram_solve(np.einsum("ijk,ir,jr->kr", T, A, B), (A.T @ A) * (B.T @ B))
        # move column scale into C
        na = np.linalg.norm(A, axis=0)
        nb = np.linalg.norm(B, axis=0)
        ok = (na > 0) & (nb > 0)
        A[:, ok] /= na[ok]
        B[:, ok] /= nb[ok]
        C[:, ok] *= (na * nb)[ok]
        f = objective(A, B, C)
        prev = hist[-1]
        hist.append(f)
        if abs(prev - f) <= tol * max(prev, 1e-300) or f <= 1e-30 * normT2:
            converged = True
            break
    return FactorTriple(A, B, C), hist, it, converged


def gevd_init(T, R: int, rng=None):
    """Starting point from a Jennrich decomposition of the MLSVD core.

    The tensor is compressed to ``R x R x min(R, I3)``; if the core's random
    slice-mix pencil is simple its CPD is expanded back.  Returns None when
    no real simple pencil is found (e.g. at very low SNR) or when the first
    two dimensions are smaller than ``R``.
    """
    from .compress import mlsvd_truncate
    from .pencil import jennrich_cpd

    T = _as_tensor(T)
    R = int(R)
    if R > min(T.shape[:2]) or T.shape[2] < 2:
        return None
    K = min(R, T.shape[2])
    comp = mlsvd_truncate(T, (R, R, K))
    d = jennrich_cpd(comp.core, rng)
    if not d.simple:
        return None
    V1, V2, V3 = comp.factors
    f = d.cpd
    return FactorTriple(V1 @ f.A, V2 @ f.B, V3 @ f.C)


def cpd_als(
    T,
    R: int,
    rng=None,
    max_iters: int = 500,
    tol: float = 1e-8,
    restarts: int = 1,
    init=None,
) -> FitResult:
    """Rank-``R`` CPD by alternating least squares.

    Each sweep solves exactly for ``A``, ``B`` and ``C`` in turn, so the
    objective ``0.5 ||T - [[A, B, C]]||^2`` never increases.  Column norms of
    ``A`` and ``B`` are moved into ``C`` after every sweep.  A run stops when
    the relative change of the objective drops below ``tol``.

    Parameters
    ----------
    T : (I1, I2, I3) array_like
    R : int
    rng : SeededRng or int, optional
        Source for the random normal initializations.
    max_iters : int
        Sweeps per run.
    tol : float
    restarts : int
        Number of random initializations; the best fit is returned.
    init : FactorTriple, sequence of FactorTriple, or "gevd", optional
        Extra starting points tried before the random ones; ``"gevd"`` uses
        :func:`gevd_init` when it succeeds.

    Returns
    -------
    FitResult
    """
    T = _as_tensor(T)
    R = int(R)
    if R < 1:
        raise ValueError("rank must be at least 1")
    rng = _rng(rng)
    normT = frobenius_norm(T)
    if normT == 0.0:
        z = FactorTriple(np.zeros((T.shape[0], R)), np.zeros((T.shape[1], R)), np.zeros((T.shape[2], R)))
        return FitResult(z, 0.0, 0, True, [0.0])
    starts = []
    if isinstance(init, str):
        if init != "gevd":
            raise ValueError(f"unknown init {init!r}")
        g = gevd_init(T, R, rng.child("gevd"))
        if g is not None:
            starts.append(g)
    elif init is not None:
        starts.extend([init] if isinstance(init, FactorTriple) else list(init))
    for _ in range(int(restarts)):
        starts.append(
            FactorTriple(*(rng.standard_normal((d, R)) for d in T.shape))
        )
    best = None
    for f0 in starts:
        f, hist, it, conv = _als_run(T, f0, int(max_iters), tol, normT**2)
        err = frobenius_norm(T - synthesize(f)) / normT
        if best is None or err < best.rel_error:
            best = FitResult(f, err, it, conv, hist)
    return best


def _hopm_run(T, a, b, c, max_iters, tol):
    sig = float(np.einsum("ijk,i,j,k->", T, a, b, c))
    hist = [abs(sig)]
    for _ in range(max_iters):
        a = np.einsum("ijk,j,k->i", T, b, c)
        na = np.linalg.norm(a)
        if na == 0.0:
            break
        a /= na
        b = np.einsum("ijk,i,k->j", T, a, c)
        b /= np.linalg.norm(b)
        c = np.einsum("ijk,i,j->k", T, a, b)
        nc = np.linalg.norm(c)
        c /= nc
        hist.append(nc)
        if nc - hist[-2] <= tol * nc:
            break
    sig = float(np.einsum("ijk,i,j,k->", T, a, b, c))
    if sig < 0:
        c = -c
        sig = -sig
    return sig, a, b, c, hist


def best_rank1_hopm(
    T, rng=None, restarts: int = 10, max_iters: int = 1000, tol: float = 1e-13, return_history=False
):
    """Best rank-1 approximation by higher-order power iteration.

    Starts from the leading left singular vectors of the unfoldings and from
    ``restarts`` random unit triples; returns the largest
    ``sigma = T ·1 a ·2 b ·3 c`` found.  ``sigma`` is a lower bound on the
    tensor spectral norm.  Each update maximizes over one vector with the
    others fixed, so ``|sigma|`` never decreases along a run.

    Returns
    -------
    sigma : float
    a, b, c : ndarray
        Unit vectors.
    """
    T = _as_tensor(T)
    rng = _rng(rng)
    if not np.any(T):
        e = [np.eye(n)[0] for n in T.shape]
        out = (0.0, *e)
        return (*out, [0.0]) if return_history else out
    inits = [
        tuple(np.linalg.svd(unfold(T, m), full_matrices=False)[0][:, 0] for m in (1, 2, 3))
    ]
    for _ in range(int(restarts)):
        inits.append(tuple(rng.unit_vector(n) for n in T.shape))
    best = None
    for a, b, c in inits:
        res = _hopm_run(T, a.copy(), b.copy(), c.copy(), int(max_iters), tol)
        if best is None or res[0] > best[0]:
            best = res
    sig, a, b, c, hist = best
    return (sig, a, b, c, hist) if return_history else (sig, a, b, c)


def spectral_norm_bounds(T, rng=None, restarts: int = 10):
    """``(lower, upper)`` bounds on the tensor spectral norm.

    ``lower`` comes from :func:`best_rank1_hopm`; ``upper`` is the smallest
    of the three unfolding 2-norms and the Frobenius norm.
    """
    T = _as_tensor(T)
    if not np.any(T):
        return 0.0, 0.0
    lower = best_rank1_hopm(T, rng, restarts)[0]
    upper = min(
        [float(np.linalg.norm(unfold(T, m), 2)) for m in (1, 2, 3)] + [frobenius_norm(T)]
    )
    return min(lower, upper), upper
