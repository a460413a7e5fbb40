"""Dense third-order tensors, CPD synthesis and seeded random generation.

Tensors are plain ``numpy.ndarray`` objects of shape ``(I1, I2, I3)``.  The
*layout* used whenever a tensor is flattened (files, serialization) is
mode-1 fastest, i.e. ``T.ravel(order="F")``.

Mode-``n`` unfoldings put the mode-``n`` fibers in the columns, ordered
lexicographically in the remaining two modes (the later mode varies
fastest).  With this convention

    unfold(synthesize(A, B, C), 1) == A @ khatri_rao(B, C).T
"""

from __future__ import annotations

import io
import os
import warnings
import zlib
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FactorTriple",
    "SeededRng",
    "outer3",
    "synthesize",
    "modal_product",
    "unfold",
    "refold",
    "khatri_rao",
    "frobenius_norm",
    "frobenius_inner",
    "random_rank_r",
    "add_noise_at_snr",
    "snr_db",
    "haar_orthogonal",
    "write_tensor",
    "read_tensor",
    "format_tensor",
    "parse_tensor",
]


def _as_tensor(T, name="T"):
    T = np.asarray(T, dtype=float)
    if T.ndim != 3:
        raise ValueError(f"{name} must be a third-order array, got shape {T.shape}")
    return T


# ---------------------------------------------------------------------------
# random numbers


class SeededRng:
    """Reproducible source of standard-normal draws.

    A thin wrapper around ``numpy.random.Generator`` with a PCG64 bit
    generator.  Child streams are derived with :meth:`child`, which feeds the
    parent seed and a tuple of integer (or string) keys to a
    ``numpy.random.SeedSequence``.  Strings are mapped to integers with CRC-32,
    so ``child("existence-radius", 3, 7)`` always names the same stream.

    Parameters
    ----------
    seed : int
        Unsigned 64-bit seed.
    keys : tuple, optional
        Spawn key path; normally produced by :meth:`child`.
    """

    def __init__(self, seed: int = 0, keys: tuple = ()):
        seed = int(seed)
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        self.seed = seed
        self.keys = tuple(_key_to_int(k) for k in keys)
        ss = np.random.SeedSequence(seed, spawn_key=self.keys)
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def child(self, *keys) -> "SeededRng":
        return SeededRng(self.seed, self.keys + tuple(_key_to_int(k) for k in keys))

    def standard_normal(self, size=None) -> np.ndarray:
        return self.generator.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def unit_vector(self, n: int) -> np.ndarray:
        v = self.standard_normal(n)
        return v / np.linalg.norm(v)

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, keys={self.keys})"


def _key_to_int(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8"))
    k = int(k)
    if k < 0:
        raise ValueError("seed keys must be nonnegative")
    return k


def _rng(rng) -> SeededRng:
    if isinstance(rng, SeededRng):
        return rng
    if rng is None:
        return SeededRng(0)
    return SeededRng(int(rng))


def haar_orthogonal(rng: SeededRng, n: int) -> np.ndarray:
    """Haar-distributed ``n x n`` orthogonal matrix (QR with sign fix)."""
    Z = _rng(rng).standard_normal((n, n))
    Q, R = np.linalg.qr(Z)
    d = np.sign(np.diag(R))
    d[d == 0] = 1.0
    return Q * d


# ---------------------------------------------------------------------------
# factors and products


@dataclass(frozen=True)
class FactorTriple:
    """CPD factors ``A`` (I1 x R), ``B`` (I2 x R), ``C`` (I3 x R)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        mats = []
        for name in "ABC":
            M = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if M.ndim != 2:
                raise ValueError(f"factor {name} must be a matrix")
            mats.append(M)
            object.__setattr__(self, name, M)
        ranks = {M.shape[1] for M in mats}
        if len(ranks) != 1:
            raise ValueError(
                "factor matrices must share the column count, got "
                + ", ".join(str(M.shape[1]) for M in mats)
            )
        if mats[0].shape[1] == 0:
            raise ValueError("rank must be positive")

    @property
    def R(self) -> int:
        return self.A.shape[1]

    @property
    def dims(self) -> tuple:
        return (self.A.shape[0], self.B.shape[0], self.C.shape[0])

    def to_tensor(self) -> np.ndarray:
        return synthesize(self)

    def permuted(self, perm) -> "FactorTriple":
        perm = np.asarray(perm)
        return FactorTriple(self.A[:, perm], self.B[:, perm], self.C[:, perm])

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "B": self.B.tolist(), "C": self.C.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FactorTriple":
        return cls(np.array(d["A"], float), np.array(d["B"], float), np.array(d["C"], float))


def outer3(a, b, c) -> np.ndarray:
    """Outer product ``a ⊗ b ⊗ c`` with entries ``a[i] b[j] c[k]``."""
    a, b, c = (np.asarray(x, dtype=float).ravel() for x in (a, b, c))
    if min(a.size, b.size, c.size) == 0:
        raise ValueError("outer3 needs nonempty vectors")
    return np.einsum("i,j,k->ijk", a, b, c)


def synthesize(f, B=None, C=None) -> np.ndarray:
    """Tensor ``sum_r a_r ⊗ b_r ⊗ c_r``.

    Accepts either a :class:`FactorTriple` or the three matrices.
    """
    if not isinstance(f, FactorTriple):
        f = FactorTriple(f, B, C)
    return np.einsum("ir,jr,kr->ijk", f.A, f.B, f.C)


def unfold(T, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding (``mode`` in 1, 2, 3)."""
    T = _as_tensor(T)
    n = _mode_index(mode)
    return np.moveaxis(T, n, 0).reshape(T.shape[n], -1)


def refold(M, mode: int, dims) -> np.ndarray:
    """Inverse of :func:`unfold`."""
    n = _mode_index(mode)
    dims = tuple(int(d) for d in dims)
    rest = [d for i, d in enumerate(dims) if i != n]
    return np.moveaxis(np.asarray(M, float).reshape([dims[n]] + rest), 0, n)


def modal_product(T, M, mode: int) -> np.ndarray:
    """Mode-``mode`` product ``T ·_mode M``.

    Every mode-``mode`` fiber ``x`` is replaced by ``M @ x``, so ``M`` must have
    ``T.shape[mode-1]`` columns.  A 1-D ``M`` is treated as a row vector, which
    keeps a singleton mode (e.g. ``T ·_3 v`` is a tensor of shape (I1, I2, 1)).
    """
    T = _as_tensor(T)
    n = _mode_index(mode)
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[None, :]
    if M.ndim != 2 or M.shape[1] != T.shape[n]:
        raise ValueError(
            f"matrix with {M.shape[-1]} columns cannot act on mode {mode} of size {T.shape[n]}"
        )
    return np.moveaxis(np.tensordot(M, T, axes=(1, n)), 0, n)


def khatri_rao(B, C) -> np.ndarray:
    """Column-wise Kronecker product, column ``r`` is ``kron(B[:, r], C[:, r])``."""
    B = np.asarray(B, float)
    C = np.asarray(C, float)
    if B.shape[1] != C.shape[1]:
        raise ValueError("Khatri-Rao factors need equal column counts")
    return np.einsum("ir,jr->ijr", B, C).reshape(-1, B.shape[1])


def _mode_index(mode) -> int:
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")
    return int(mode) - 1


def frobenius_norm(T) -> float:
    return float(np.linalg.norm(np.asarray(T, float).ravel()))


def frobenius_inner(T, S) -> float:
    T = np.asarray(T, float)
    S = np.asarray(S, float)
    if T.shape != S.shape:
        raise ValueError(f"shape mismatch {T.shape} vs {S.shape}")
    return float(np.dot(T.ravel(), S.ravel()))


# ---------------------------------------------------------------------------
# random tensors


def random_rank_r(rng, dims, R: int, warn: bool = True):
    """Random rank-``R`` tensor of unit Frobenius norm.

    Factor entries are i.i.d. standard normal; the common scale
    ``norm(T) ** (-1/3)`` is applied to every factor so the synthesized
    tensor has norm one.  A warning is issued when ``R > min(dims)`` unless
    ``warn`` is false (``R x R x 2`` pencils of rank ``R`` are routine).

    Returns
    -------
    T : ndarray
    factors : FactorTriple
    """
    rng = _rng(rng)
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise ValueError(f"dims must be three positive integers, got {dims}")
    R = int(R)
    if R < 1:
        raise ValueError("rank must be at least 1")
    if warn and R > min(dims):
        warnings.warn(f"rank {R} exceeds the smallest dimension {min(dims)}", stacklevel=2)
    A = rng.standard_normal((dims[0], R))
    B = rng.standard_normal((dims[1], R))
    C = rng.standard_normal((dims[2], R))
    s = frobenius_norm(synthesize(A, B, C)) ** (-1.0 / 3.0)
    f = FactorTriple(A * s, B * s, C * s)
    return synthesize(f), f


def snr_db(signal, noise) -> float:
    """``20 log10(||signal||_F / ||noise||_F)``."""
    return 20.0 * np.log10(frobenius_norm(signal) / frobenius_norm(noise))


def add_noise_at_snr(T, rng, snr_db: float):
    """Add i.i.d. Gaussian noise scaled to the requested SNR in dB.

    Returns ``(T + N, N)``.
    """
    T = np.asarray(T, float)
    nt = frobenius_norm(T)
    if nt == 0.0:
        raise ValueError("cannot set an SNR relative to a zero tensor")
    N = _rng(rng).standard_normal(T.shape)
    N *= nt * 10.0 ** (-float(snr_db) / 20.0) / frobenius_norm(N)
    return T + N, N


# ---------------------------------------------------------------------------
# tensor files
#
# Format: first line ``dims,I1,I2,I3``; then one entry per line, mode-1
# fastest, written with 17 significant digits.


def format_tensor(T) -> str:
    T = _as_tensor(T)
    buf = io.StringIO()
    buf.write("dims,%d,%d,%d\n" % T.shape)
    for x in T.ravel(order="F"):
        buf.write("%.17g\n" % x)
    return buf.getvalue()


def parse_tensor(text: str) -> np.ndarray:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty tensor file")
    head = lines[0].split(",")
    if len(head) != 4 or head[0].strip() != "dims":
        raise ValueError(f"bad tensor header {lines[0]!r}; expected 'dims,I1,I2,I3'")
    try:
        dims = tuple(int(h) for h in head[1:])
    except ValueError:
        raise ValueError(f"bad tensor dimensions in header {lines[0]!r}") from None
    if min(dims) < 1:
        raise ValueError(f"tensor dimensions must be positive, got {dims}")
    n = dims[0] * dims[1] * dims[2]
    if len(lines) - 1 != n:
        raise ValueError(f"expected {n} entries for dims {dims}, found {len(lines) - 1}")
    try:
        vals = np.array([float(x) for x in lines[1:]])
    except ValueError as exc:
        raise ValueError(f"non-numeric tensor entry: {exc}") from None
    return vals.reshape(dims, order="F")


def write_tensor(path, T) -> None:
    with open(os.fspath(path), "w", newline="\n") as fh:
        fh.write(format_tensor(T))


def read_tensor(path) -> np.ndarray:
    with open(os.fspath(path)) as fh:
        return parse_tensor(fh.read())
