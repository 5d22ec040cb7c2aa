"""Command-line entry point: ``pepsqst {gen,measure,recover,verify,sweep}``.

Every command is a pure function of its arguments and ``--seed``. Exit codes:
0 ok, 2 invalid input, 3 an identity check failed, 4 the optimiser failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import OptimizationError
from .network import (
    BondDims,
    Kind,
    LatticeShape,
    TensorNetworkState,
    contract,
    dof,
    frobenius_norm,
    hermitize_trace_one,
    load_state,
    random_purified_pepo,
    random_state,
    save_state,
)
from .povm import MeasurementMap, haar_basis, sic_qubit, stabilizer_design
from .recovery import RecoveryConfig, fit
from .sampling import STREAM_BASIS, STREAM_STATE, empirical_probs, read_records, sample_all, stream, write_records
from .verify import estimate_haar_embedding, identity_suite, recovery_error_sweep

EXIT_OK, EXIT_INVALID, EXIT_IDENTITY, EXIT_OPTIMIZATION = 0, 2, 3, 4
HERMITIAN_TOLERANCE = 1e-12

log = logging.getLogger("pepsqst")


def parse_lattice(text: str) -> tuple[int, int]:
    try:
        q, p = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"lattice must look like 2x3, got {text!r}") from None
    return q, p


def parse_grid(text: str) -> list[int]:
    return [int(float(v)) for v in text.split(",") if v]


def build_map(ensemble: str, dim: int, num_bases: int, seed: int) -> MeasurementMap:
    """Measurement map named by ``ensemble``; Haar bases use streams ``(STREAM_BASIS, q)``."""
    if ensemble == "stabilizer":
        n = dim.bit_length() - 1
        if 2**n != dim:
            raise ValueError(f"stabilizer designs need qubits, dimension {dim} is not a power of two")
        return MeasurementMap(stabilizer_design(n))
    if ensemble == "sic":
        if dim != 2:
            raise ValueError("the SIC ensemble is implemented for a single qubit only")
        return MeasurementMap(sic_qubit())
    if ensemble == "haar":
        return MeasurementMap([haar_basis(dim, stream(seed, STREAM_BASIS, q)) for q in range(num_bases)])
    raise ValueError(f"unknown ensemble {ensemble!r}")


def dense_truth(state: TensorNetworkState) -> np.ndarray:
    """State vector of a PEPS or the hermitised, trace-one matrix of a PEPO."""
    if state.kind is Kind.PEPS:
        return contract(state)
    return hermitize_trace_one(state)[0]


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, allow_nan=False) + "\n")


# -- commands ---------------------------------------------------------------------


def cmd_gen(args) -> int:
    q, p = args.lattice
    shape = LatticeShape(q, p, args.d)
    if args.kind == "peps":
        state = random_state(shape, BondDims.uniform(q, p, args.bond), Kind.PEPS, norm_caps=args.norm_cap, seed=args.seed)
    else:
        state = random_purified_pepo(shape, args.bond, kraus_dim=args.kraus, seed=args.seed)
    dense = contract(state)
    metadata = {
        "seed": args.seed,
        "dof": dof(shape, state.bonds, state.kind),
        "site_norms": [float(np.linalg.norm(state.site(a, b))) for a, b in shape.sites()],
        "dense_norm": frobenius_norm(dense),
    }
    if state.kind is Kind.PEPO:
        metadata["purification_bond"] = args.bond
        metadata["hermitian"] = bool(np.abs(dense - dense.conj().T).max() <= HERMITIAN_TOLERANCE)
        metadata["trace_one"] = bool(abs(np.trace(dense) - 1) <= HERMITIAN_TOLERANCE)
        metadata["min_eigenvalue"] = float(np.linalg.eigvalsh((dense + dense.conj().T) / 2).min())
    out = Path(args.out or "state.json")
    save_state(state, out, metadata)
    print(f"wrote {out} (dof {metadata['dof']:.4f})")
    return EXIT_OK


def cmd_measure(args) -> int:
    state = load_state(args.state)
    mmap = build_map(args.ensemble, state.shape.dim, args.num_bases, args.seed)
    p = mmap.probabilities(dense_truth(state))
    records = sample_all(p, mmap.block_sizes, args.shots, args.seed, rep=args.rep)
    out = Path(args.out or "shots.csv")
    rows = write_records(out, records, run_id=args.rep)
    sidecar = {
        "state": str(args.state),
        "ensemble": args.ensemble,
        "num_bases": mmap.num_ensembles,
        "block_sizes": mmap.block_sizes,
        "basis_seed": args.seed,
        "shot_seed": args.seed,
        "rep": args.rep,
        "shots": args.shots,
        "shape": {"q": state.shape.q, "p": state.shape.p, "d": state.shape.d},
        "kind": state.kind.value,
        "bonds": state.bonds.entries.tolist(),
        "streams": "SeedSequence(seed, spawn_key=(1, q, rep)) for shots, (2, q) for Haar bases",
    }
    _write_json(out.with_suffix(".json"), sidecar)
    print(f"wrote {rows} rows to {out}")
    return EXIT_OK


def cmd_recover(args) -> int:
    truth_state = load_state(args.truth) if args.truth else None
    if args.noiseless:
        if truth_state is None:
            raise ValueError("--noiseless needs --truth")
        shape, kind, bonds_entries = truth_state.shape, truth_state.kind, truth_state.bonds.entries
        mmap = build_map(args.ensemble, shape.dim, args.num_bases, args.seed)
        p_hat = mmap.probabilities(dense_truth(truth_state))
        source = {"noiseless": True, "ensemble": args.ensemble}
    else:
        if not args.measurements:
            raise ValueError("give --measurements or --noiseless")
        csv_path = Path(args.measurements)
        side = json.loads((Path(args.sidecar) if args.sidecar else csv_path.with_suffix(".json")).read_text())
        shape, kind = LatticeShape(**side["shape"]), Kind(side["kind"])
        bonds_entries = np.array(side["bonds"])
        mmap = build_map(side["ensemble"], shape.dim, side["num_bases"], side["basis_seed"])
        records = read_records(csv_path)
        if [len(r.frequencies) for r in records] != mmap.block_sizes:
            raise ValueError("shot records do not match the ensemble in the sidecar")
        p_hat = np.concatenate([empirical_probs(r) for r in records])
        source = {"noiseless": False, "measurements": str(csv_path), "ensemble": side["ensemble"]}
    if args.kind:
        kind = Kind(args.kind)
    bonds = BondDims.uniform(shape.q, shape.p, args.bond, kind) if args.bond else BondDims(bonds_entries, kind)
    config = RecoveryConfig(
        shape,
        bonds,
        max_iters=args.max_iters,
        restarts=args.restarts,
        init_seed=args.seed,
        trace_weight=args.trace_weight,
        workers=args.threads,
    )
    truth = dense_truth(truth_state) if truth_state is not None else None
    rank = 1 if truth_state is not None and truth_state.kind is Kind.PEPS else None
    out = Path(args.out or "report.json")
    try:
        report = fit(config, mmap, p_hat, ground_truth=truth, project=args.project_physical, truth_rank=rank)
    except OptimizationError as exc:
        _write_json(out, {"error": str(exc), "trajectories": [[v if np.isfinite(v) else None for v in t] for t in exc.trajectories]})
        print(f"optimisation failed: {exc}", file=sys.stderr)
        return EXIT_OPTIMIZATION
    report.extras["source"] = source
    if args.project_physical:
        final = report.projected if report.projected is not None else report.estimate
        evals = np.linalg.eigvalsh(final)
        if evals.min() < -HERMITIAN_TOLERANCE or abs(evals.sum() - 1) > HERMITIAN_TOLERANCE:
            raise AssertionError("projected estimate is not a density matrix")
        report.extras["min_eigenvalue"] = float(evals.min())
        report.extras["trace"] = float(evals.sum())
    _write_json(out, report.to_dict())
    msg = f"best loss {report.best_loss:.3e} (restart {report.best_restart})"
    if report.trace_error is not None:
        msg += f", trace error {report.trace_error:.3e}, Frobenius error {report.frob_error:.3e}"
    print(msg)
    return EXIT_OK


def cmd_verify(args) -> int:
    reports = identity_suite(args.max_qubits, seed=args.seed)
    haar = None
    if args.haar_trials:
        q, p = args.lattice
        shape = LatticeShape(q, p, args.d)
        haar = estimate_haar_embedding(
            shape, BondDims.uniform(q, p, args.bond, args.kind), args.kind, args.num_bases, args.haar_trials, args.seed
        )
    ok = all(r.passed for r in reports) and (haar is None or haar["passed"])
    if args.format == "json":
        text = json.dumps({"identities": [r.to_dict() for r in reports], "haar_embedding": haar, "passed": ok}, indent=1)
    else:
        lines = ["name,deviation,tolerance,status"] + [r.csv_line() for r in reports]
        if haar is not None:
            status = "pass" if haar["passed"] else "FAIL"
            lines.append(f"haar-embedding-min,{haar['min']:.3e},{haar['threshold']:.1e},{status}")
        text = "\n".join(lines)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK if ok else EXIT_IDENTITY


SWEEP_FIELDS = ("n", "d", "bonds", "Q", "M", "median_error", "dof", "theory_ratio", "failures", "slope", "theory_slope")


def cmd_sweep(args) -> int:
    q, p = args.lattice
    shape = LatticeShape(q, p, args.d)
    kind = Kind(args.kind)
    truth = None
    if kind is Kind.PEPS:
        bonds = BondDims.uniform(q, p, args.bond)
    else:
        # physical ground truth from a purification; the fit uses its bonds
        purified = random_purified_pepo(shape, args.bond, seed=stream(args.seed, STREAM_STATE))
        bonds, truth = purified.bonds, hermitize_trace_one(purified)[0]
    mmap = build_map(args.ensemble, shape.dim, args.num_bases, args.seed)
    result = recovery_error_sweep(
        shape,
        bonds,
        mmap,
        m_grid=args.m_grid,
        reps=args.reps,
        seed=args.seed,
        restarts=args.restarts,
        max_iters=args.max_iters,
        truth=truth,
        workers=args.threads,
        haar=args.ensemble == "haar",
    )
    rows = [
        {
            "n": shape.n,
            "d": shape.d,
            "bonds": bonds.max(),
            "Q": mmap.num_ensembles,
            "M": row["M"],
            "median_error": repr(row["median_error"]),
            "dof": repr(result["dof"]),
            "theory_ratio": repr(row["theory_ratio"]),
            "failures": row["failures"],
            "slope": repr(result["slope"]),
            "theory_slope": -0.5,
        }
        for row in sorted(result["rows"], key=lambda r: r["M"])
    ]
    out = Path(args.out or f"sweep.{args.format}")
    if args.format == "json":
        _write_json(out, {"rows": rows, "slope": result["slope"], "theory_slope": -0.5})
    else:
        with open(out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, SWEEP_FIELDS, lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
    print(f"slope {result['slope']:.3f} (theory -0.5), wrote {out}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--seed", type=int, default=0, help="root seed for every random stream")
    shared.add_argument("--out", help="output path")
    shared.add_argument("--threads", type=int, default=1, help="worker threads")
    shared.add_argument("--format", choices=("csv", "json"), default="csv")
    shared.add_argument("-v", "--verbose", action="store_true")

    lattice = argparse.ArgumentParser(add_help=False)
    lattice.add_argument("--lattice", type=parse_lattice, default=(1, 2), help="rows x columns, e.g. 2x2")
    lattice.add_argument("--d", type=int, default=2, help="local dimension")
    lattice.add_argument("--bond", type=int, default=2)
    lattice.add_argument("--kind", choices=("peps", "pepo"), default="peps")

    ensemble = argparse.ArgumentParser(add_help=False)
    ensemble.add_argument("--ensemble", choices=("stabilizer", "sic", "haar"), default="stabilizer")
    ensemble.add_argument("--Q", dest="num_bases", type=int, default=1, help="number of Haar bases")

    parser = argparse.ArgumentParser(prog="pepsqst", description="Tomography of PEPS and PEPO states.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", parents=[shared, lattice], help="write a random PEPS or physical PEPO")
    gen.add_argument("--norm-cap", type=float, help="cap on every site's Frobenius norm (PEPS)")
    gen.add_argument("--kraus", type=int, default=2, help="ancilla dimension of the PEPO purification")
    gen.set_defaults(func=cmd_gen)

    measure = sub.add_parser("measure", parents=[shared, ensemble], help="simulate shot records")
    measure.add_argument("--state", required=True)
    measure.add_argument("--M", dest="shots", type=int, required=True, help="shots per ensemble")
    measure.add_argument("--rep", type=int, default=0, help="repetition index (run_id)")
    measure.set_defaults(func=cmd_measure)

    recover = sub.add_parser("recover", parents=[shared, ensemble], help="fit a network to measurements")
    recover.add_argument("--measurements", help="shot-record CSV from 'measure'")
    recover.add_argument("--sidecar", help="ensemble sidecar JSON (default: CSV path with .json)")
    recover.add_argument("--truth", help="ground-truth state file for error reporting")
    recover.add_argument("--noiseless", action="store_true", help="fit population probabilities of --truth")
    recover.add_argument("--bond", type=int, help="uniform fit bond (default: bonds of the measured state)")
    recover.add_argument("--kind", choices=("peps", "pepo"))
    recover.add_argument("--restarts", type=int, default=8)
    recover.add_argument("--max-iters", type=int, default=3000)
    recover.add_argument("--trace-weight", type=float)
    recover.add_argument("--project-physical", action="store_true", help="project onto density matrices")
    recover.set_defaults(func=cmd_recover)

    verify = sub.add_parser("verify", parents=[shared, lattice], help="check exact design identities")
    verify.add_argument("--max-qubits", type=int, default=2)
    verify.add_argument("--haar-trials", type=int, default=0, help="also estimate the Haar embedding ratio")
    verify.add_argument("--Q", dest="num_bases", type=int, default=20)
    verify.set_defaults(func=cmd_verify)

    sweep = sub.add_parser("sweep", parents=[shared, lattice, ensemble], help="recovery error against M")
    sweep.add_argument("--M-grid", dest="m_grid", type=parse_grid, default=[10**3, 10**4, 10**5])
    sweep.add_argument("--reps", type=int, default=5)
    sweep.add_argument("--restarts", type=int, default=2)
    sweep.add_argument("--max-iters", type=int, default=3000)
    sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
