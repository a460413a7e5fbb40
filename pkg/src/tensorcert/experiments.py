"""Seeded experiment harness producing raw result tables.

Every trial draws from ``SeededRng(seed).child(experiment, grid_index,
trial_index)``; ``grid_index`` enumerates the (case, SNR) grid in row order.
Trials are independent, so they may run in a process pool; rows are always
assembled by index.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .approx import cpd_als
from .bounds import CertifyOptions, bauer_fike_sv_bound, mlsvd_existence_check, multi_pencil_epsilon
from .compress import mlsvd_truncate, procrustes_pair_compress
from .pencil import factor_spectrum, spectral_variation
from .tensor import FactorTriple, SeededRng, add_noise_at_snr, frobenius_norm, random_rank_r, synthesize

__all__ = [
    "EXPERIMENTS",
    "ExperimentConfig",
    "ExperimentTable",
    "run_experiment",
    "rank_r_approximation",
]

EXPERIMENTS = (
    "sv-structured",
    "sv-generic",
    "sv-procrustes",
    "existence-radius",
    "existence-proportion",
    "procrustes-distances",
)

_SNR_0_100 = tuple(float(s) for s in range(0, 101, 5))

# protocol defaults; any field can be overridden
DEFAULTS = {
    "sv-structured": dict(rank=(4, 10), dims=(), snr_grid=_SNR_0_100, trials=20),
    "sv-generic": dict(rank=(4, 10), dims=(), snr_grid=_SNR_0_100, trials=50),
    "sv-procrustes": dict(rank=(4, 10), dims=(10, 20, 100), snr_grid=_SNR_0_100, trials=20),
    "existence-radius": dict(
        rank=tuple(range(2, 11)), dims=(), snr_grid=(), trials=20, n_unitaries=1000
    ),
    "existence-proportion": dict(
        rank=(4,), dims=(20, 100), snr_grid=tuple(float(s) for s in range(-30, 11, 2)), trials=10,
        n_unitaries=1000,
    ),
    "procrustes-distances": dict(
        rank=(4, 10), dims=(20, 100), snr_grid=(-40.0, -20.0, 0.0, 20.0), trials=10
    ),
}

CHECKPOINTS = (1, 10, 100, 1000)


@dataclass(frozen=True)
class ExperimentConfig:
    """Parameters of one experiment run.

    ``rank`` and ``dims`` are tuples; the cases are all pairs with
    ``I >= R`` (``dims`` is ignored by the experiments on ``R x R x R``
    tensors).  Use :meth:`for_experiment` to start from the protocol
    defaults.
    """

    experiment: str
    rank: tuple = ()
    dims: tuple = ()
    snr_grid: tuple = ()
    trials: int = 1
    n_unitaries: int = 1
    reorder: bool = False
    seed: int = 0
    out_path: str | None = None
    format: str = "csv"
    workers: int = 1
    als_restarts: int = 3
    hopm_restarts: int = 10
    options: CertifyOptions = field(default_factory=CertifyOptions)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        object.__setattr__(self, "rank", tuple(int(r) for r in self.rank))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "snr_grid", tuple(float(s) for s in self.snr_grid))
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.n_unitaries < 1:
            raise ValueError("n_unitaries must be at least 1")
        if not self.rank or min(self.rank) < 1:
            raise ValueError("at least one positive rank is required")
        if self.experiment != "existence-radius" and not self.snr_grid:
            raise ValueError(f"{self.experiment} needs a nonempty snr_grid")
        if self.experiment in ("sv-procrustes", "existence-proportion", "procrustes-distances"):
            if not self.dims:
                raise ValueError(f"{self.experiment} needs tensor sizes in dims")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.format not in ("csv", "json"):
            raise ValueError("format must be csv or json")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @classmethod
    def for_experiment(cls, experiment: str, **overrides) -> "ExperimentConfig":
        if experiment not in DEFAULTS:
            raise ValueError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        kw = dict(DEFAULTS[experiment])
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(experiment=experiment, **kw)

    def cases(self) -> list:
        if self.experiment in ("sv-structured", "sv-generic", "existence-radius"):
            return [(R, R) for R in self.rank]
        return [(R, I) for R in self.rank for I in self.dims if I >= R]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["options"] = asdict(self.options)
        return d


@dataclass
class ExperimentTable:
    experiment: str
    columns: list
    rows: list
    config: ExperimentConfig

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([_fmt(row[c]) for c in self.columns])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "schema": "tensorcert.experiment_table",
            "schema_version": 1,
            "experiment": self.experiment,
            "config": self.config.to_dict(),
            "columns": list(self.columns),
            "rows": [{c: _jsonable(row[c]) for c in self.columns} for row in self.rows],
        }
        return json.dumps(doc, indent=2)

    def render(self) -> str:
        return self.to_csv() if self.config.format == "csv" else self.to_json() + "\n"

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.rows])


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    return str(x)


def _jsonable(x):
    if isinstance(x, (np.floating,)):
        x = float(x)
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, np.integer):
        return int(x)
    return x


# ---------------------------------------------------------------------------
# shared pieces


def rank_r_approximation(M, R: int, rng, restarts: int = 3) -> FactorTriple:
    """Rank-``R`` CPD approximation of ``M``.

    Tensors larger than ``R`` in some mode are first compressed by a
    truncated MLSVD; the core is fitted by ALS (GEVD start plus random
    restarts) and the factors are expanded back.
    """
    M = np.asarray(M, float)
    ranks = tuple(min(R, d) for d in M.shape)
    if ranks == M.shape:
        return cpd_als(M, R, rng, restarts=restarts, init="gevd").factors
    comp = mlsvd_truncate(M, ranks)
    f = cpd_als(comp.core, R, rng, restarts=restarts, init="gevd").factors
    V1, V2, V3 = comp.factors
    return FactorTriple(V1 @ f.A, V2 @ f.B, V3 @ f.C)


def _log10(x):
    return math.log10(x) if x > 0 else -math.inf


def _sv_and_bound(f: FactorTriple, fhat: FactorTriple, special_case, rng, restarts):
    """``log10 sv[T, That]`` and ``log10 min(bound, 1)`` for square ``A``, ``B``."""
    sv = spectral_variation(factor_spectrum(f.C), factor_spectrum(fhat.C))
    E = synthesize(fhat) - synthesize(f)
    b = bauer_fike_sv_bound(f, E, special_case, rng, restarts=restarts).bound
    # chordal distances never exceed 1, so the clipped bound is still a bound
    return _log10(sv), _log10(min(b, 1.0))


# ---------------------------------------------------------------------------
# trials; each takes (config, case, snr, rng) and returns a dict of numbers


def _trial_sv_structured(cfg, case, snr, rng):
    R, _ = case
    T, f = random_rank_r(rng.child("signal"), (R, R, R), R)
    E = rng.child("noise").standard_normal((R, R))
    E *= np.linalg.norm(f.C) / np.linalg.norm(E) * 10.0 ** (-snr / 20.0)
    fhat = FactorTriple(f.A, f.B, f.C + E)
    sv, b = _sv_and_bound(f, fhat, "shared_factor", rng.child("hopm"), cfg.hopm_restarts)
    return {"log10_sv": sv, "log10_bound": b}


def _trial_sv_generic(cfg, case, snr, rng):
    R, _ = case
    T, f = random_rank_r(rng.child("signal"), (R, R, R), R)
    M, _ = add_noise_at_snr(T, rng.child("noise"), snr)
    fhat = rank_r_approximation(M, R, rng.child("fit"), cfg.als_restarts)
    sv, b = _sv_and_bound(f, fhat, "none", rng.child("hopm"), cfg.hopm_restarts)
    return {"log10_sv": sv, "log10_bound": b}


def _procrustes_setup(cfg, case, snr, rng):
    R, I = case
    Tp, f = random_rank_r(rng.child("signal"), (I, I, I), R, warn=False)
    Mp, Np = add_noise_at_snr(Tp, rng.child("noise"), snr)
    fhat = rank_r_approximation(Mp, R, rng.child("fit"), cfg.als_restarts)
    That = synthesize(fhat)
    pc = procrustes_pair_compress(Tp, That, (R, R, R))
    return f, fhat, Np, Tp, That, pc


def _trial_sv_procrustes(cfg, case, snr, rng):
    f, fhat, _, _, _, pc = _procrustes_setup(cfg, case, snr, rng)
    core = FactorTriple(*(V.T @ M for V, M in zip(pc.factors, (f.A, f.B, f.C))))
    core_hat = FactorTriple(*(V.T @ M for V, M in zip(pc.factors_hat, (fhat.A, fhat.B, fhat.C))))
    sv, b = _sv_and_bound(core, core_hat, "none", rng.child("hopm"), cfg.hopm_restarts)
    return {"log10_sv": sv, "log10_bound": b}


def _trial_procrustes_distances(cfg, case, snr, rng):
    _, _, Np, Tp, That, pc = _procrustes_setup(cfg, case, snr, rng)
    return {
        "noise_distance": frobenius_norm(Np),
        "approx_distance": frobenius_norm(Tp - That),
        "core_distance": pc.distance,
    }


def _trial_existence_radius(cfg, case, snr, rng):
    R, _ = case
    T, _ = random_rank_r(rng.child("signal"), (R, R, R), R)
    out = {}
    variants = (False, True) if cfg.reorder else (False,)
    for reorder in variants:
        rep = multi_pencil_epsilon(
            T,
            rng.child("unitaries"),
            n_unitaries=cfg.n_unitaries,
            reorder=reorder,
            include_identity=False,
            **_pencil_tols(cfg.options),
        )
        out[reorder] = list(rep.history)
    return out


def _trial_existence_proportion(cfg, case, snr, rng):
    R, I = case
    T, _ = random_rank_r(rng.child("signal"), (I, I, I), R, warn=False)
    M, _ = add_noise_at_snr(T, rng.child("noise"), snr)
    opts = replace(cfg.options, n_unitaries=cfg.n_unitaries, reorder=cfg.reorder, include_identity=False, core_only=True)
    cert = mlsvd_existence_check(M, R, rng.child("certify"), opts)
    return {
        "certified": cert.verdict.value == "Certified",
        "epsilon": cert.epsilon,
        "fit_error": cert.fit_error,
    }


def _pencil_tols(opts: CertifyOptions) -> dict:
    return dict(tol=opts.mix_tol, real_tol=opts.real_tol, gap_tol=opts.gap_tol, balance=opts.balance)


_TRIALS = {
    "sv-structured": _trial_sv_structured,
    "sv-generic": _trial_sv_generic,
    "sv-procrustes": _trial_sv_procrustes,
    "existence-radius": _trial_existence_radius,
    "existence-proportion": _trial_existence_proportion,
    "procrustes-distances": _trial_procrustes_distances,
}


def _run_trial(args):
    cfg, case, snr, gi, ti = args
    rng = SeededRng(cfg.seed).child(cfg.experiment, gi, ti)
    return _TRIALS[cfg.experiment](cfg, case, snr, rng)


# ---------------------------------------------------------------------------
# aggregation


def _grid(cfg):
    snrs = cfg.snr_grid if cfg.experiment != "existence-radius" else (math.nan,)
    return [(case, snr) for case in cfg.cases() for snr in snrs]


def _db(x):
    return -20.0 * math.log10(x) if x > 0 else math.inf


def _aggregate(cfg, case, snr, results) -> list:
    R, I = case
    n = len(results)
    exp = cfg.experiment
    if exp in ("sv-structured", "sv-generic", "sv-procrustes"):
        row = {"rank": R, "dim": I, "snr_db": snr, "trials": n}
        row["mean_log10_sv"] = float(np.mean([r["log10_sv"] for r in results]))
        row["mean_log10_bound"] = float(np.mean([r["log10_bound"] for r in results]))
        return [row]
    if exp == "procrustes-distances":
        row = {"rank": R, "dim": I, "snr_db": snr, "trials": n}
        for k in ("noise_distance", "approx_distance", "core_distance"):
            row["mean_" + k] = float(np.mean([r[k] for r in results]))
        return [row]
    if exp == "existence-proportion":
        k = sum(r["certified"] for r in results)
        return [
            {
                "rank": R,
                "dim": I,
                "snr_db": snr,
                "trials": n,
                "certified": k,
                "proportion": k / n,
                "mean_epsilon": float(np.mean([r["epsilon"] for r in results])),
                "mean_fit_error": float(np.mean([r["fit_error"] for r in results])),
            }
        ]
    # existence-radius: one row per (reorder, checkpoint)
    rows = []
    checkpoints = [c for c in CHECKPOINTS if c < cfg.n_unitaries] + [cfg.n_unitaries]
    for reorder in sorted(results[0]):
        for c in checkpoints:
            eps = float(np.mean([r[reorder][c - 1] for r in results]))
            rows.append(
                {
                    "rank": R,
                    "n_unitaries": c,
                    "reorder": reorder,
                    "trials": n,
                    "mean_epsilon": eps,
                    "mean_radius": eps / 2.0,
                    "epsilon_db": _db(eps),
                    "radius_db": _db(eps / 2.0),
                }
            )
    return rows


COLUMNS = {
    "sv-structured": ["rank", "dim", "snr_db", "trials", "mean_log10_sv", "mean_log10_bound"],
    "sv-generic": ["rank", "dim", "snr_db", "trials", "mean_log10_sv", "mean_log10_bound"],
    "sv-procrustes": ["rank", "dim", "snr_db", "trials", "mean_log10_sv", "mean_log10_bound"],
    "existence-radius": [
        "rank", "n_unitaries", "reorder", "trials",
        "mean_epsilon", "mean_radius", "epsilon_db", "radius_db",
    ],
    "existence-proportion": [
        "rank", "dim", "snr_db", "trials", "certified", "proportion", "mean_epsilon", "mean_fit_error",
    ],
    "procrustes-distances": [
        "rank", "dim", "snr_db", "trials",
        "mean_noise_distance", "mean_approx_distance", "mean_core_distance",
    ],
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentTable:
    """Run every trial of ``cfg`` and return the aggregated table.

    ``existence-radius`` reports the mean epsilon after 1, 10, 100, ...
    unitaries; ``radius_db`` is ``-20 log10`` of half the mean epsilon, the
    radius of the certified ball.
    """
    grid = _grid(cfg)
    jobs = [(cfg, case, snr, gi, ti) for gi, (case, snr) in enumerate(grid) for ti in range(cfg.trials)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_trial, jobs, chunksize=1))
    else:
        results = [_run_trial(j) for j in jobs]
    rows = []
    for gi, (case, snr) in enumerate(grid):
        chunk = results[gi * cfg.trials : (gi + 1) * cfg.trials]
        rows.extend(_aggregate(cfg, case, snr, chunk))
    return ExperimentTable(cfg.experiment, list(COLUMNS[cfg.experiment]), rows, cfg)
