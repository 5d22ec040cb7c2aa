from __future__ import annotations

import csv
import json

import jsonschema
import numpy as np
import pytest

from pepsqst.cli import main
from pepsqst.network import contract, load_state
from pepsqst.recovery import REPORT_SCHEMA


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def test_gen_metadata_and_determinism(workdir):
    args = ["gen", "--lattice", "2x2", "--d", "2", "--bond", "2", "--kind", "peps", "--seed", "7"]
    assert main(args + ["--out", "a.json"]) == 0
    assert main(args + ["--out", "b.json"]) == 0
    assert (workdir / "a.json").read_bytes() == (workdir / "b.json").read_bytes()
    meta = json.loads((workdir / "a.json").read_text())["metadata"]
    assert meta["dof"] == pytest.approx(51.50, abs=5e-3)


def test_gen_pepo_flags(workdir):
    assert main(["gen", "--lattice", "1x2", "--kind", "pepo", "--out", "o.json"]) == 0
    meta = json.loads((workdir / "o.json").read_text())["metadata"]
    assert meta["hermitian"] and meta["trace_one"]
    assert meta["min_eigenvalue"] >= -1e-12


def test_measure_rows_and_zero_shots(workdir):
    main(["gen", "--lattice", "1x2", "--out", "s.json"])
    assert main(["measure", "--state", "s.json", "--ensemble", "haar", "--Q", "3", "--M", "0", "--out", "z.csv"]) == 0
    rows = list(csv.DictReader(open(workdir / "z.csv")))
    assert len(rows) == 3 * 4
    assert all(row["f_k"] == "0" for row in rows)
    side = json.loads((workdir / "z.json").read_text())
    assert side["num_bases"] == 3 and side["basis_seed"] == 0


def test_measure_maximally_mixed_is_uniform(workdir):
    # a single-site PEPO with the identity/2 as its only tensor
    from pepsqst.network import BondDims, Kind, LatticeShape, TensorNetworkState, save_state

    site = (np.eye(2) / 2).reshape(2, 2, 1, 1, 1, 1).astype(complex)
    state = TensorNetworkState(LatticeShape(1, 1, 2), BondDims.uniform(1, 1, 1, Kind.PEPO), ((site,),))
    save_state(state, workdir / "mixed.json")
    shots = 10**6
    assert main(["measure", "--state", "mixed.json", "--ensemble", "sic", "--M", str(shots), "--out", "m.csv"]) == 0
    freq = np.array([int(r["f_k"]) for r in csv.DictReader(open(workdir / "m.csv"))]) / shots
    sigma = np.sqrt(0.25 * 0.75 / shots)
    assert np.all(np.abs(freq - 0.25) <= 4 * sigma)


def test_recover_noiseless_and_schema(workdir):
    main(["gen", "--lattice", "1x2", "--bond", "2", "--seed", "3", "--out", "s.json"])
    assert main(["recover", "--noiseless", "--truth", "s.json", "--out", "r.json"]) == 0
    report = json.loads((workdir / "r.json").read_text())
    jsonschema.validate(report, REPORT_SCHEMA)
    assert report["trace_error"] <= 1e-3
    assert len(report["trajectories"]) == 8


def test_recover_from_shots_project_physical(workdir):
    main(["gen", "--lattice", "1x2", "--kind", "pepo", "--seed", "2", "--out", "o.json"])
    main(["measure", "--state", "o.json", "--M", "10000", "--out", "shots.csv"])
    code = main(
        ["recover", "--measurements", "shots.csv", "--truth", "o.json", "--project-physical",
         "--restarts", "2", "--out", "r.json"]
    )
    assert code == 0
    report = json.loads((workdir / "r.json").read_text())
    jsonschema.validate(report, REPORT_SCHEMA)
    assert report["physical"] and report["min_eigenvalue"] >= -1e-12
    assert report["trace"] == pytest.approx(1, abs=1e-12)
    assert load_state  # state file still readable below
    rho = contract(load_state(workdir / "o.json"))
    assert report["frob_error"] < np.linalg.norm(rho)


def test_verify_passes(workdir, capsys):
    assert main(["verify", "--max-qubits", "2", "--out", "v.csv"]) == 0
    lines = (workdir / "v.csv").read_text().splitlines()
    assert lines[0] == "name,deviation,tolerance,status"
    assert all(line.endswith("pass") for line in lines[1:])
    assert main(["verify", "--max-qubits", "1", "--format", "json", "--out", "v.json"]) == 0
    assert json.loads((workdir / "v.json").read_text())["passed"]


def test_verify_identity_failure_exit_code(workdir, monkeypatch):
    from pepsqst import cli
    from pepsqst.verify import IdentityReport

    monkeypatch.setattr(cli, "identity_suite", lambda *a, **k: [IdentityReport("broken", 1.0, 1e-9, False)])
    assert main(["verify"]) == 3


def test_sweep_deterministic(workdir):
    args = ["sweep", "--lattice", "1x2", "--M-grid", "1e3,1e5", "--reps", "2", "--seed", "4"]
    assert main(args + ["--out", "a.csv"]) == 0
    assert main(args + ["--out", "b.csv", "--threads", "2"]) == 0
    assert (workdir / "a.csv").read_bytes() == (workdir / "b.csv").read_bytes()
    rows = list(csv.DictReader(open(workdir / "a.csv")))
    assert list(rows[0]) == ["n", "d", "bonds", "Q", "M", "median_error", "dof", "theory_ratio", "failures", "slope", "theory_slope"]
    assert [int(r["M"]) for r in rows] == [1000, 100000]


def test_sweep_slope_one_by_two(workdir):
    args = ["sweep", "--lattice", "1x2", "--M-grid", "1e3,1e4,1e5,1e6", "--reps", "10", "--out", "s.json", "--format", "json"]
    assert main(args) == 0
    slope = json.loads((workdir / "s.json").read_text())["slope"]
    assert slope == pytest.approx(-0.5, abs=0.15)


def test_validation_exit_code(workdir):
    assert main(["measure", "--state", "missing.json", "--M", "10"]) == 2
    main(["gen", "--lattice", "1x2", "--d", "3", "--out", "q.json"])
    assert main(["measure", "--state", "q.json", "--M", "10"]) == 2


def test_optimization_failure_exit_code(workdir, monkeypatch):
    from pepsqst import cli
    from pepsqst.errors import OptimizationError

    def boom(*args, **kwargs):
        raise OptimizationError("diverged", [[1.0, float("nan")]])

    main(["gen", "--lattice", "1x2", "--out", "s.json"])
    monkeypatch.setattr(cli, "fit", boom)
    assert main(["recover", "--noiseless", "--truth", "s.json", "--out", "r.json"]) == 4
    assert json.loads((workdir / "r.json").read_text())["trajectories"] == [[1.0, None]]
