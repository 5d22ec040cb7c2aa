"""Numerical certificates for exact moment identities and statistical scaling laws."""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import ScaleError
from .network import BondDims, Kind, LatticeShape, contract, dof, random_state
from .povm import DesignEnsemble, MeasurementMap, haar_basis, symmetric_projector
from .recovery import RecoveryConfig, error_metrics, fit
from .sampling import STREAM_BASIS, STREAM_STATE, STREAM_TRIAL, measurement_error, sample_all, stacked, stream

HAAR_RATIO_THRESHOLD = 0.05  # empirical stand-in for the unspecified embedding constant
DENSE_MOMENT_LIMIT = 1024


@dataclass
class IdentityReport:
    name: str
    deviation: float
    tolerance: float
    passed: bool
    negative_control: bool = False
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def csv_line(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return f"{self.name},{self.deviation:.3e},{self.tolerance:.1e},{status}"


def _report(name, deviation, tolerance, negative=False, **metadata) -> IdentityReport:
    passed = deviation > tolerance if negative else deviation <= tolerance
    return IdentityReport(name, float(deviation), tolerance, bool(passed), negative, metadata)


# -- design moments -------------------------------------------------------------


def _tensor_powers(vectors: NDArray, s: int) -> NDArray:
    out = vectors
    for _ in range(s - 1):
        out = np.einsum("ka,kb->kab", out, vectors).reshape(vectors.shape[0], -1)
    return out


def moment_deviation_dense(ens: DesignEnsemble, s: int) -> float:
    """``||(1/K) sum (w w^H)^{(x)s} - P_sym / C(D+s-1, s)||_F`` with the projector
    built from permutation operators."""
    dim = ens.dim
    if dim**s > DENSE_MOMENT_LIMIT:
        raise ScaleError(f"dense moment of size {dim}^{s} exceeds {DENSE_MOMENT_LIMIT}")
    moment = np.zeros((dim**s, dim**s), dtype=np.complex128)
    for start in range(0, ens.size, 4096):
        v = _tensor_powers(ens.vectors[start : start + 4096], s)
        moment += v.T @ v.conj()
    moment /= ens.size
    target = symmetric_projector(dim, s) / math.comb(dim + s - 1, s)
    return float(np.linalg.norm(moment - target))


def moment_deviation_symmetric(ens: DesignEnsemble, s: int) -> float:
    """Same deviation computed inside the symmetric subspace.

    ``w^{(x)s}`` lies in the symmetric subspace, so both operators live there and
    the Frobenius distance equals ``||(1/K) sum z z^H - I / dim_sym||_F`` with
    ``z`` the coordinates in the orthonormal occupation-number basis.
    """
    dim = ens.dim
    combos = np.array(list(itertools.combinations_with_replacement(range(dim), s)), dtype=np.int64)
    counts = [np.bincount(c, minlength=dim) for c in combos]
    coef = np.array([math.sqrt(math.factorial(s) / math.prod(math.factorial(m) for m in c)) for c in counts])
    moment = np.zeros((len(combos), len(combos)), dtype=np.complex128)
    for start in range(0, ens.size, 2048):
        w = ens.vectors[start : start + 2048]
        z = coef * np.prod(w[:, combos], axis=2)
        moment += z.T @ z.conj()
    moment /= ens.size
    return float(np.linalg.norm(moment - np.eye(len(combos)) / len(combos)))


def check_design_moments(ens: DesignEnsemble, s: int, tolerance: float = 1e-9, negative: bool = False) -> IdentityReport:
    """Compare the ``s``-th frame moment with the Haar average ``P_sym / C(D+s-1, s)``."""
    if s < 1 or s > 3:
        raise ScaleError("moment checks support s = 1, 2, 3")
    if ens.dim**s > 4096:
        raise ScaleError(f"D^s = {ens.dim**s} exceeds 4096")
    if ens.dim**s <= DENSE_MOMENT_LIMIT:
        deviation, method = moment_deviation_dense(ens, s), "dense"
    else:
        deviation, method = moment_deviation_symmetric(ens, s), "symmetric-subspace"
    return _report(f"moment[{ens.name},s={s}]", deviation, tolerance, negative, dim=ens.dim, K=ens.size, s=s, method=method)


# -- exact POVM identities -----------------------------------------------------------


def random_hermitian(dim: int, rng: np.random.Generator) -> NDArray[np.complex128]:
    z = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return (z + z.conj().T) / 2


def random_density(dim: int, rng: np.random.Generator, rank: int | None = None) -> NDArray[np.complex128]:
    rank = dim if rank is None else rank
    z = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    rho = z @ z.conj().T
    return rho / np.trace(rho).real


def embedding_sides(ens: DesignEnsemble, rho: NDArray) -> tuple[float, float]:
    """``||A(rho)||^2`` and ``D (||rho||_F^2 + tr(rho)^2) / (K (D + 1))``."""
    lhs = float(np.sum(MeasurementMap(ens).probabilities(rho) ** 2))
    dim, k = ens.dim, ens.size
    rhs = dim * (np.linalg.norm(rho) ** 2 + np.trace(rho).real ** 2) / (k * (dim + 1))
    return lhs, float(rhs)


def check_embedding_identity(
    ens: DesignEnsemble, trials: int = 100, seed: int = 0, tolerance: float = 1e-10
) -> IdentityReport:
    """Exact 2-design identity on random Hermitian matrices."""
    rng = np.random.default_rng(seed)
    deviation = 0.0
    for _ in range(trials):
        lhs, rhs = embedding_sides(ens, random_hermitian(ens.dim, rng))
        deviation = max(deviation, abs(lhs - rhs))
    return _report(f"embedding[{ens.name}]", deviation, tolerance, dim=ens.dim, K=ens.size, trials=trials, seed=seed)


def third_moment_sides(ens: DesignEnsemble, x: NDArray, rho: NDArray) -> tuple[float, float, float]:
    """Left side ``sum_k <A_k, X>^2 <A_k, rho>``, the general closed form and the
    traceless/unit-trace closed form (only meaningful when ``tr X = 0``, ``tr rho = 1``)."""
    mmap = MeasurementMap(ens)
    a, b = mmap.probabilities(x), mmap.probabilities(rho)
    lhs = float(np.sum(a**2 * b))
    dim, k = ens.dim, ens.size
    pref = dim**3 / k**2 * 6 / ((dim + 2) * (dim + 1) * dim)
    tr_x, tr_r = np.trace(x).real, np.trace(rho).real
    x2 = x @ x
    general = (tr_x**2 * tr_r + np.trace(x2).real * tr_r + 2 * np.trace(x @ rho).real * tr_x + 2 * np.trace(x2 @ rho).real) / 6
    special = np.linalg.norm(x) ** 2 / 6 + np.trace(x2 @ rho).real / 3
    return lhs, float(pref * general), float(pref * special)


def check_third_moment_identity(
    ens: DesignEnsemble, trials: int = 50, seed: int = 0, tolerance: float = 1e-9
) -> IdentityReport:
    """Exact 3-design identity for random Hermitian ``X`` and random states ``rho``.

    Each trial checks the general form and, after removing the trace of ``X``,
    the traceless form.
    """
    rng = np.random.default_rng(seed)
    deviation, scale = 0.0, 0.0
    for t in range(trials):
        x = random_hermitian(ens.dim, rng)
        rho = random_density(ens.dim, rng, rank=1 if t % 2 else None)
        lhs, general, _ = third_moment_sides(ens, x, rho)
        x0 = x - np.trace(x).real / ens.dim * np.eye(ens.dim)
        lhs0, _, special = third_moment_sides(ens, x0, rho)
        deviation = max(deviation, abs(lhs - general), abs(lhs0 - special))
        scale = max(scale, abs(lhs), abs(lhs0))
    return _report(
        f"third-moment[{ens.name}]", deviation, tolerance, dim=ens.dim, K=ens.size, trials=trials, seed=seed, scale=scale
    )


def identity_suite(max_qubits: int = 2, seed: int = 0) -> list[IdentityReport]:
    """Every exact identity on the SIC and stabilizer designs, plus negative controls."""
    from .povm import random_frame, sic_qubit, stabilizer_design

    sic = sic_qubit()
    reports = [check_design_moments(sic, s) for s in (1, 2)]
    reports.append(check_design_moments(sic, 3, tolerance=1e-3, negative=True))
    reports.append(check_embedding_identity(sic, seed=seed))
    for n in range(1, max_qubits + 1):
        stab = stabilizer_design(n)
        reports += [check_design_moments(stab, s) for s in (1, 2, 3)]
        reports.append(check_embedding_identity(stab, seed=seed))
        reports.append(check_third_moment_identity(stab, seed=seed))
    frame = random_frame(4, 60, seed)
    reports.append(check_design_moments(frame, 2, tolerance=1e-3, negative=True))
    return reports


# -- Haar embedding ---------------------------------------------------------------


def haar_embedding_ratio(rho: NDArray, bases: list, scaled: bool = True) -> float:
    """``D ||A(rho)||^2 / (Q ||rho||_F^2)`` for the projective bases given.

    With ``scaled=False`` the factor ``D`` is dropped; that version equals 1
    for ``rho = I/D`` whatever the bases.
    """
    mmap = MeasurementMap(bases)
    probs = mmap.probabilities(rho)
    ratio = np.sum(probs**2) / (len(bases) * np.linalg.norm(rho) ** 2)
    return float(mmap.dim * ratio if scaled else ratio)


def estimate_haar_embedding(
    shape: LatticeShape,
    bonds: BondDims,
    kind: Kind | str | None = None,
    num_bases: int = 20,
    trials: int = 200,
    seed: int = 0,
    threshold: float = HAAR_RATIO_THRESHOLD,
) -> dict:
    """Monte-Carlo minimum and mean of the normalised embedding ratio.

    Every trial draws a fresh random state and ``num_bases`` fresh Haar bases.
    ``threshold`` is an empirical constant, not a derived one.
    """
    kind = Kind(kind) if kind is not None else bonds.kind
    bonds = BondDims(bonds.entries, kind)
    ratios = []
    for t in range(trials):
        state = random_state(shape, bonds, kind, seed=stream(seed, STREAM_STATE, t))
        dense = contract(state)
        rho = np.outer(dense, dense.conj()) if kind is Kind.PEPS else (dense + dense.conj().T) / 2
        bases = [haar_basis(shape.dim, stream(seed, STREAM_BASIS, t, q)) for q in range(num_bases)]
        ratios.append(haar_embedding_ratio(rho, bases))
    ratios = np.array(ratios)
    return {
        "min": float(ratios.min()),
        "mean": float(ratios.mean()),
        "min_unscaled": float(ratios.min() / shape.dim),
        "mean_unscaled": float(ratios.mean() / shape.dim),
        "threshold": threshold,
        "passed": bool(ratios.min() >= threshold),
        "trials": trials,
        "num_bases": num_bases,
        "seed": seed,
        "ratios": ratios.tolist(),
    }


# -- statistical scaling -------------------------------------------------------------


def loglog_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])


def check_povm_error_bound_scaling(
    ens: DesignEnsemble, rho: NDArray, m_grid=(10**3, 10**4, 10**5, 10**6), reps: int = 20, seed: int = 0
) -> dict:
    """Slope of ``log mean ||p_hat - p||_2`` against ``log M`` (about -1/2)."""
    mmap = MeasurementMap(ens)
    p = mmap.probabilities(rho)
    means = []
    for i, shots in enumerate(m_grid):
        norms = [
            measurement_error(stacked(sample_all(p, mmap.block_sizes, shots, seed, rep=i * reps + r)), p)[1]
            for r in range(reps)
        ]
        means.append(float(np.mean(norms)))
    return {"slope": loglog_slope(m_grid, means), "M": list(m_grid), "mean_error": means, "reps": reps, "seed": seed}


def _sweep_cell(shape, bonds, mmap, p, truth, shots, index, rep, reps, seed, restarts, max_iters):
    kind = bonds.kind
    p_hat = stacked(sample_all(p, mmap.block_sizes, shots, seed, rep=index * reps + rep))
    init_seed = int(stream(seed, STREAM_TRIAL, index, rep).integers(2**31))
    config = RecoveryConfig(shape, bonds, restarts=restarts, max_iters=max_iters, init_seed=init_seed)
    try:
        report = fit(config, mmap, p_hat, ground_truth=truth)
    except Exception:  # noqa: BLE001 - a failed cell is flagged, the sweep continues
        return None
    return report.trace_error if kind is Kind.PEPS else report.frob_error


def theory_scale(dof_value: float, shots: int, num_bases: int | None = None, n: int = 1, d: int = 2) -> float:
    """Rate shape ``sqrt(dof / M)`` for a design, and
    ``sqrt(dof (log Q + n log d)^2 / (Q M))`` for ``Q`` Haar bases."""
    if num_bases is None:
        return math.sqrt(dof_value / shots)
    return math.sqrt(dof_value * (math.log(num_bases) + n * math.log(d)) ** 2 / (num_bases * shots))


def recovery_error_sweep(
    shape: LatticeShape,
    bonds: BondDims,
    mmap: MeasurementMap,
    m_grid=(10**3, 10**4, 10**5, 10**6),
    reps: int = 20,
    seed: int = 0,
    restarts: int = 2,
    max_iters: int = 3000,
    truth=None,
    workers: int = 1,
    haar: bool = False,
) -> dict:
    """Median recovery error over ``reps`` shot samples per ``M`` and the log-log slope.

    The ground truth is a random PEPS (or a hermitised, trace-one PEPO) drawn from
    ``seed`` unless given. Errors are trace distances for PEPS and Frobenius
    distances for PEPO. Each (M, rep) cell owns its random streams, so the
    result does not depend on ``workers``. Failed cells are counted per row.
    """
    kind = bonds.kind
    if truth is None:
        state = random_state(shape, bonds, kind, seed=stream(seed, STREAM_STATE))
        dense = contract(state)
        truth = dense if kind is Kind.PEPS else (dense + dense.conj().T) / 2 / np.trace(dense).real
    p = mmap.probabilities(truth)
    cells = [(i, r) for i in range(len(m_grid)) for r in range(reps)]

    def run(cell):
        i, r = cell
        return _sweep_cell(shape, bonds, mmap, p, truth, m_grid[i], i, r, reps, seed, restarts, max_iters)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, cells))
    else:
        results = [run(c) for c in cells]
    d_value = dof(shape, bonds, kind)
    rows = []
    for i, shots in enumerate(m_grid):
        errors = [results[i * reps + r] for r in range(reps)]
        good = [e for e in errors if e is not None and np.isfinite(e)]
        median = float(np.median(good)) if good else float("nan")
        scale = theory_scale(d_value, shots, mmap.num_ensembles if haar else None, shape.n, shape.d)
        rows.append(
            {
                "M": shots,
                "median_error": median,
                "errors": good,
                "failures": len(errors) - len(good),
                "theory_ratio": median / scale,
            }
        )
    ok = [row for row in rows if np.isfinite(row["median_error"])]
    slope = loglog_slope([r["M"] for r in ok], [r["median_error"] for r in ok]) if len(ok) >= 2 else float("nan")
    return {"rows": rows, "slope": slope, "dof": d_value, "medians": [r["median_error"] for r in rows]}


def trace_frobenius_bound_violations(trials: int = 100, dim: int = 4, seed: int = 0) -> tuple[int, float]:
    """Count violations of ``||D||_1 <= 2 ||D||_F`` for random states against rank-1 truths.

    Returns the count and the largest ratio ``||D||_1 / (2 ||D||_F)`` seen.
    """
    rng = np.random.default_rng(seed)
    violations, worst = 0, 0.0
    for t in range(trials):
        truth = random_density(dim, rng, rank=1)
        other = random_density(dim, rng, rank=1 + t % dim)
        metrics = error_metrics(other, truth, rank=1)
        violations += not metrics["bound_holds"]
        worst = max(worst, metrics["trace_dist"] / metrics["bound"])
    return violations, worst


def gradient_check(
    state,
    mmap: MeasurementMap,
    p_hat: NDArray,
    coordinates: int = 20,
    h: float = 1e-5,
    seed: int = 0,
    trace_weight: float | None = None,
) -> float:
    """Largest relative error between analytic and central-difference partials.

    Random site entries are probed along their real and imaginary directions;
    under the Wirtinger convention those partials are ``2 Re G`` and ``2 Im G``.
    """
    from .recovery import gradient, loss

    rng = np.random.default_rng(seed)
    grads = gradient(state, mmap, p_hat, trace_weight)
    sites = state.shape.sites()
    worst = 0.0
    for _ in range(coordinates):
        a, b = sites[rng.integers(len(sites))]
        site = state.site(a, b)
        idx = tuple(int(rng.integers(s)) for s in site.shape)
        for direction, analytic in ((1.0, 2 * grads[a][b][idx].real), (1j, 2 * grads[a][b][idx].imag)):
            values = []
            for sign in (1, -1):
                moved = site.copy()
                moved[idx] += sign * h * direction
                values.append(loss(state.replace(a, b, moved), mmap, p_hat, trace_weight))
            numeric = (values[0] - values[1]) / (2 * h)
            worst = max(worst, abs(numeric - analytic) / max(abs(analytic), abs(numeric), 1e-12))
    return worst
