"""Command-line interface: ``tensorcert <subcommand> ...``.

Exit codes: 0 success or Certified, 2 Inconclusive, 1 error.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings

import numpy as np

from . import __version__
from .bounds import (
    CertifyOptions,
    CertVerdict,
    certify_neighborhood,
    matching_distance_bound,
    mlsvd_existence_check,
    pencil_existence_epsilon,
)
from .compress import RANK_TOL, procrustes_pair_compress
from .experiments import EXPERIMENTS, ExperimentConfig, run_experiment
from .pencil import GAP_TOL, MIX_TOL, REAL_TOL, factor_spectrum, jennrich_pencil_cpd, matching_distance, pencil_spectrum
from .tensor import FactorTriple, SeededRng, add_noise_at_snr, format_tensor, random_rank_r, read_tensor

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INCONCLUSIVE = 2


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # usage errors must exit 1, not argparse's 2 (which means Inconclusive here)
    def error(self, message):
        raise CliError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# argument parsing


def _int_list(text):
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _float_grid(text):
    """``a,b,c`` or ``start:stop:step`` (stop inclusive)."""
    try:
        if ":" in text:
            start, stop, step = (float(x) for x in text.split(":"))
            if step <= 0:
                raise ValueError
            n = int(np.floor((stop - start) / step + 1e-9)) + 1
            return [start + i * step for i in range(max(n, 0))]
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}; use a,b,c or start:stop:step") from None


def _seed(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _common(parser, suppress):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    g = parser.add_argument_group("global options")
    g.add_argument("--seed", type=_seed, default=d(0), help="master seed (default 0)")
    g.add_argument("--tol-rank", type=float, default=d(RANK_TOL), help="relative singular value cutoff")
    g.add_argument("--tol-real", type=float, default=d(REAL_TOL), help="imaginary-part tolerance for real eigenvalues")
    g.add_argument("--tol-gap", type=float, default=d(GAP_TOL), help="chordal gap below which lines coincide")
    g.add_argument("--tol-mix", type=float, default=d(MIX_TOL), help="relative smallest singular value of a slice mix")
    g.add_argument("--tol-als", type=float, default=d(1e-8), help="ALS relative objective change stop")
    g.add_argument("--out", default=d(None), help="output file (stdout when omitted); prefix for gen")
    g.add_argument("--format", choices=("csv", "json"), default=d("csv"), help="experiment table format")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(
        prog="tensorcert",
        description="Certificates for best rank-R approximations of third-order tensors.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _common(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, **kw):
        sp = sub.add_parser(name, **kw)
        _common(sp, suppress=True)
        return sp

    g = add("gen", help="write a random rank-R tensor and its factors")
    g.add_argument("--dims", type=_int_list, required=True, help="I1,I2,I3")
    g.add_argument("--rank", "-R", type=int, required=True)
    g.add_argument("--snr-db", type=float, default=None, help="also write a noisy copy and the noise")

    c = add("certify", help="existence radius (or measured certificate) for a tensor file")
    c.add_argument("tensor")
    c.add_argument("--rank", "-R", type=int, required=True)
    c.add_argument("--measured", action="store_true", help="treat the tensor as measured data")
    c.add_argument("--core-only", action="store_true", help="with --measured: certify the MLSVD core only")
    _search_args(c)

    pb = add("pencil-bound", help="epsilon of an R x R x 2 pencil; optional comparison with a second pencil")
    pb.add_argument("tensor")
    pb.add_argument("--against", default=None, help="perturbed pencil file for the matching-distance bound")

    m = add("mlsvd-check", help="measured-tensor certificate (same as certify --measured)")
    m.add_argument("tensor")
    m.add_argument("--rank", "-R", type=int, required=True)
    m.add_argument("--core-only", action="store_true")
    _search_args(m)

    pr = add("procrustes", help="joint orthogonal compression of two tensors")
    pr.add_argument("tensor")
    pr.add_argument("tensor_hat")
    pr.add_argument("--ranks", type=_int_list, required=True, help="R1,R2,R3")
    pr.add_argument("--refine", action="store_true", help="alternate the rotations until stationary")
    pr.add_argument("--save", default=None, help="prefix for the two compressions (core and bases)")

    e = add("experiment", help="run an experiment protocol and emit a table")
    e.add_argument("name", choices=EXPERIMENTS)
    e.add_argument("--rank", "-R", type=_int_list, default=None, help="comma-separated ranks")
    e.add_argument("--dims", type=_int_list, default=None, help="comma-separated cube sizes")
    e.add_argument("--snr-grid", type=_float_grid, default=None, help="a,b,c or start:stop:step in dB")
    e.add_argument("--trials", type=int, default=None)
    e.add_argument("--n-unitaries", type=int, default=None)
    e.add_argument("--reorder", action="store_true", help="also optimize the slice pairing")
    e.add_argument("--workers", type=int, default=1, help="worker processes for the trials")
    return p


def _search_args(sp):
    sp.add_argument("--n-unitaries", type=int, default=1, help="orthogonal mode-3 mixes to try")
    sp.add_argument("--reorder", action="store_true", help="optimize the slice pairing per mix")
    sp.add_argument("--balance", choices=("columns", "als"), default="columns")


def _options(args, **extra) -> CertifyOptions:
    return CertifyOptions(
        n_unitaries=getattr(args, "n_unitaries", 1) or 1,
        reorder=getattr(args, "reorder", False),
        rank_tol=args.tol_rank,
        mix_tol=args.tol_mix,
        real_tol=args.tol_real,
        gap_tol=args.tol_gap,
        balance=getattr(args, "balance", "columns"),
        als_tol=args.tol_als,
        **extra,
    )


# ---------------------------------------------------------------------------
# output


def _emit(text: str, out) -> None:
    if out:
        with open(out, "w", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _load(path):
    try:
        return read_tensor(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror or exc}") from None
    except ValueError as exc:
        raise CliError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    dims = tuple(args.dims)
    if len(dims) != 3:
        raise CliError("--dims needs exactly three sizes")
    prefix = args.out or "tensor"
    rng = SeededRng(args.seed)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        T, f = random_rank_r(rng.child("signal"), dims, args.rank)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    written = {"tensor": prefix + ".tensor.csv", "factors": prefix + ".factors.json"}
    _emit(format_tensor(T), written["tensor"])
    _emit(_dump({"dims": list(dims), "rank": args.rank, "seed": args.seed, **f.to_dict()}), written["factors"])
    if args.snr_db is not None:
        M, N = add_noise_at_snr(T, rng.child("noise"), args.snr_db)
        written["noisy"] = prefix + ".noisy.csv"
        written["noise"] = prefix + ".noise.csv"
        _emit(format_tensor(M), written["noisy"])
        _emit(format_tensor(N), written["noise"])
    for path in written.values():
        print(path)
    return EXIT_OK


def _verdict_code(v: CertVerdict) -> int:
    return EXIT_OK if v == CertVerdict.CERTIFIED else EXIT_INCONCLUSIVE


def _measured(args) -> int:
    T = _load(args.tensor)
    cert = mlsvd_existence_check(T, args.rank, SeededRng(args.seed), _options(args, core_only=args.core_only))
    _emit(_dump(cert.to_dict()), args.out)
    return _verdict_code(cert.verdict)


def cmd_certify(args) -> int:
    if args.measured:
        return _measured(args)
    if args.core_only:
        raise CliError("--core-only needs --measured")
    T = _load(args.tensor)
    report = certify_neighborhood(T, args.rank, SeededRng(args.seed), _options(args))
    _emit(_dump(report.to_dict()), args.out)
    return _verdict_code(report.verdict)


def cmd_mlsvd_check(args) -> int:
    return _measured(args)


def cmd_pencil_bound(args) -> int:
    P = _load(args.tensor)
    if P.shape[2] != 2 or P.shape[0] != P.shape[1]:
        raise CliError(f"pencil must be R x R x 2, got {P.shape}")
    rng = SeededRng(args.seed)
    kw = dict(tol=args.tol_mix, real_tol=args.tol_real, gap_tol=args.tol_gap)
    eps, detail = pencil_existence_epsilon(P, rng.child("pencil"), **kw)
    doc = {"schema": "tensorcert.pencil_bound", "schema_version": 1, "epsilon": eps, "detail": detail.to_dict()}
    if args.against:
        W = _load(args.against)
        if W.shape != P.shape:
            raise CliError(f"shape mismatch {P.shape} vs {W.shape}")
        f = jennrich_pencil_cpd(P, rng.child("pencil"), **kw)
        if isinstance(f, FactorTriple):
            bound, certified = matching_distance_bound(P, f, W)
            dw = pencil_spectrum(W, rng.child("against"), **kw)
            md = matching_distance(factor_spectrum(f.C), dw.spectrum) if dw.spectrum is not None and dw.spectrum.R == f.R else None
            doc["comparison"] = {
                "frobenius_distance": float(np.linalg.norm(W - P)),
                "md_bound": bound,
                "certified": certified,
                "diagnosis": dw.verdict.value,
                "observed_md": md,
            }
        else:
            doc["comparison"] = {"certified": False, "diagnosis": f.verdict.value}
    _emit(_dump(doc), args.out)
    return EXIT_OK if eps > 0 else EXIT_INCONCLUSIVE


def cmd_procrustes(args) -> int:
    W = _load(args.tensor)
    H = _load(args.tensor_hat)
    if len(args.ranks) != 3:
        raise CliError("--ranks needs three entries")
    pc = procrustes_pair_compress(W, H, args.ranks, refine=args.refine, tol=args.tol_als, rank_tol=args.tol_rank)
    doc = {
        "schema": "tensorcert.procrustes",
        "schema_version": 1,
        "ranks": list(args.ranks),
        "original_distance": pc.original_distance,
        "compressed_distance": pc.distance,
        "sweeps": pc.sweeps,
        "history": [float(h) for h in pc.history],
    }
    if args.save:
        from .compress import Compression

        Compression(pc.W, pc.factors, 0.0).save(args.save + ".W")
        Compression(pc.What, pc.factors_hat, 0.0).save(args.save + ".What")
        doc["saved"] = [args.save + ".W.manifest.json", args.save + ".What.manifest.json"]
    _emit(_dump(doc), args.out)
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = ExperimentConfig.for_experiment(
        args.name,
        rank=args.rank,
        dims=args.dims,
        snr_grid=args.snr_grid,
        trials=args.trials,
        n_unitaries=args.n_unitaries,
        reorder=args.reorder or None,
        seed=args.seed,
        out_path=args.out,
        format=args.format,
        workers=args.workers,
        options=_options(args),
    )
    table = run_experiment(cfg)
    _emit(table.render(), args.out)
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "certify": cmd_certify,
    "pencil-bound": cmd_pencil_bound,
    "mlsvd-check": cmd_mlsvd_check,
    "procrustes": cmd_procrustes,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except (CliError, ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
