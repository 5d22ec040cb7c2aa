"""Factorised least-squares state recovery over PEPS/PEPO site tensors.

The objective is ``||A(rho(X)) - p_hat||^2`` where ``rho(X)`` is

* ``u u^H / ||u||^2`` for a PEPS with amplitudes ``u = contract(X)``;
* ``sym(C) = (C + C^H)/2`` for a PEPO with ``C = contract(X)``, plus the
  penalty ``lam * (tr sym(C) - 1)^2``.

Gradients follow the Wirtinger convention: the returned ``G`` satisfies
``loss(X + h D) = loss(X) + 2 h Re<G, D> + O(h^2)`` for real ``h``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import OptimizationError, StructureError
from .network import (
    BondDims,
    Kind,
    LatticeShape,
    TensorNetworkState,
    contract,
    frobenius_norm,
    site_adjoint,
    site_shape,
    trace_norm,
)
from .povm import MeasurementMap
from .sampling import STREAM_INIT, stream

log = logging.getLogger(__name__)

SiteGrads = list[list[NDArray[np.complex128]]]


def default_trace_weight(mmap: MeasurementMap) -> float:
    """Ten times the curvature the data term already puts on the trace direction."""
    trace_energy = sum(ens.effect_scale**2 * ens.size for ens in mmap.ensembles)
    return 10.0 * trace_energy / mmap.dim**2


@dataclass
class RecoveryConfig:
    shape: LatticeShape
    bonds: BondDims
    max_iters: int = 3000
    restarts: int = 8
    init_seed: int = 0
    initial_step: float = 1.0
    shrink: float = 0.5
    sufficient_decrease: float = 1e-4
    growth: float = 2.0
    trace_weight: float | None = None
    tol: float = 1e-12
    max_backtracks: int = 60
    bb: bool = True
    rebalance_every: int = 50
    workers: int = 1

    def __post_init__(self) -> None:
        if not 0 < self.shrink < 1 or not 0 < self.sufficient_decrease < 1:
            raise ValueError("shrink and sufficient_decrease must lie in (0, 1)")
        if self.trace_weight is not None and self.trace_weight < 0:
            raise ValueError("trace_weight must be nonnegative")
        if self.growth < 1:
            raise ValueError("growth must be >= 1")
        if (self.bonds.q, self.bonds.p) != (self.shape.q, self.shape.p):
            raise StructureError("bond matrix does not match the lattice")

    @property
    def kind(self) -> Kind:
        return self.bonds.kind


# -- dense objective ----------------------------------------------------------


class _Objective:
    """Loss and dense cotangent as a function of the contracted tensor.

    With ``use_gram`` the data term is evaluated through the Gram operator,
    ``vec(rho)^H G vec(rho) - 2 Re tr(B rho) + ||p_hat||^2`` with
    ``B = A^*(p_hat)``; algebraically identical and O(D^4) instead of O(K D^2).
    """

    def __init__(self, mmap: MeasurementMap, p_hat: NDArray, kind: Kind, trace_weight: float, use_gram=None):
        self.mmap = mmap
        self.p_hat = np.asarray(p_hat, dtype=float)
        if self.p_hat.shape != (mmap.num_outcomes,):
            raise StructureError(f"p_hat has length {self.p_hat.size}, the map has {mmap.num_outcomes} outcomes")
        self.kind = kind
        self.lam = trace_weight
        if use_gram is None:
            use_gram = mmap.num_outcomes > mmap.dim**2 and mmap.dim**2 <= 4096
        self.use_gram = use_gram
        if use_gram:
            self.gram = mmap.gram()
            self.b = mmap.adjoint(self.p_hat)
            self.p_sq = float(self.p_hat @ self.p_hat)

    def _data(self, rho: NDArray) -> tuple[float, NDArray]:
        """Data term and ``A^*(A(rho) - p_hat)`` for Hermitian ``rho``."""
        v = rho.reshape(-1)
        gv = self.gram @ v
        value = float((v.conj() @ gv).real - 2 * np.vdot(self.b, rho).real + self.p_sq)
        return max(value, 0.0), gv.reshape(rho.shape) - self.b

    def __call__(self, dense: NDArray, want_grad: bool = True) -> tuple[float, NDArray | None]:
        if self.kind is Kind.PEPS:
            return self._peps(dense, want_grad)
        return self._pepo(dense, want_grad)

    def _peps(self, u: NDArray, want_grad: bool):
        norm_sq = float(np.vdot(u, u).real)
        if not np.isfinite(norm_sq) or norm_sq == 0:
            return float("nan"), None
        if self.use_gram:
            rho = np.outer(u, u.conj()) / norm_sq
            value, h = self._data(rho)
            if not want_grad:
                return value, None
            hu = h @ u
        else:
            probs = self.mmap.probabilities(u) / norm_sq
            r = probs - self.p_hat
            value = float(r @ r)
            if not want_grad:
                return value, None
            hu = self.mmap.adjoint_apply(r, u)
        uhu = np.vdot(u, hu).real
        return value, 2 * (hu / norm_sq - uhu * u / norm_sq**2)

    def _pepo(self, c: NDArray, want_grad: bool):
        sym = (c + c.conj().T) / 2
        tr = float(np.trace(sym).real)
        if self.use_gram:
            value, g = self._data(sym)
        else:
            r = self.mmap.probabilities(sym) - self.p_hat
            value = float(r @ r)
            g = self.mmap.adjoint(r) if want_grad else None
        value += self.lam * (tr - 1.0) ** 2
        if not want_grad:
            return value, None
        return value, g + self.lam * (tr - 1.0) * np.eye(c.shape[0])


def _resolve_weight(mmap: MeasurementMap, kind: Kind, trace_weight: float | None) -> float:
    if kind is Kind.PEPS:
        return 0.0
    return default_trace_weight(mmap) if trace_weight is None else float(trace_weight)


def loss(
    state: TensorNetworkState, mmap: MeasurementMap, p_hat: NDArray, trace_weight: float | None = None
) -> float:
    """Least-squares objective evaluated straight from the measurement map."""
    lam = _resolve_weight(mmap, state.kind, trace_weight)
    return _Objective(mmap, p_hat, state.kind, lam, use_gram=False)(contract(state), want_grad=False)[0]


def _site_grads(state: TensorNetworkState, dense_grad: NDArray) -> SiteGrads:
    return [
        [site_adjoint(state, a, b, dense_grad) for b in range(state.shape.p)] for a in range(state.shape.q)
    ]


def gradient(
    state: TensorNetworkState, mmap: MeasurementMap, p_hat: NDArray, trace_weight: float | None = None
) -> SiteGrads:
    """Per-site Wirtinger gradients ``dL/d conj(X_ab)``."""
    lam = _resolve_weight(mmap, state.kind, trace_weight)
    _, dense_grad = _Objective(mmap, p_hat, state.kind, lam, use_gram=False)(contract(state))
    return _site_grads(state, dense_grad)


# -- physical projection and metrics -------------------------------------------


def project_simplex(values: NDArray) -> NDArray[np.float64]:
    """Euclidean projection onto ``{x >= 0, sum x = 1}`` by sort-and-threshold."""
    v = np.asarray(values, dtype=float)
    mu = np.sort(v)[::-1]
    cumulative = np.cumsum(mu) - 1.0
    ks = np.arange(1, v.size + 1)
    last = ks[mu - cumulative / ks > 0][-1]
    theta = cumulative[last - 1] / last
    return np.maximum(v - theta, 0.0)


def project_physical(rho: NDArray) -> NDArray[np.complex128]:
    """Nearest (Frobenius) density matrix: PSD with unit trace."""
    rho = np.asarray(rho, dtype=np.complex128)
    sym = (rho + rho.conj().T) / 2
    evals, evecs = np.linalg.eigh(sym)
    weights = project_simplex(evals)
    out = (evecs * weights) @ evecs.conj().T
    return (out + out.conj().T) / 2


def as_density(x: NDArray) -> NDArray[np.complex128]:
    """Density matrix of a state vector (normalised) or a matrix (unchanged)."""
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim == 1:
        return np.outer(x, x.conj()) / np.vdot(x, x).real
    return x


def error_metrics(rho_hat: NDArray, rho_star: NDArray, rank: int | None = None) -> dict:
    """Frobenius and trace-norm distances; with ``rank`` also the bound
    ``||D||_1 <= 2 sqrt(rank) ||D||_F`` and whether it holds."""
    rho_hat, rho_star = as_density(rho_hat), as_density(rho_star)
    if rho_hat.shape != rho_star.shape:
        raise StructureError(f"dimension mismatch {rho_hat.shape} vs {rho_star.shape}")
    delta = rho_hat - rho_star
    out = {"frob": frobenius_norm(delta), "trace_dist": trace_norm(delta)}
    if rank is not None:
        bound = 2 * np.sqrt(rank) * out["frob"]
        out["bound"] = float(bound)
        out["bound_holds"] = bool(out["trace_dist"] <= bound + 1e-10)
    return out


# -- optimiser --------------------------------------------------------------------


@dataclass
class RestartResult:
    restart: int
    seed_key: tuple[int, int, int]
    losses: list[float]
    steps: list[float]
    state: TensorNetworkState | None
    converged: bool


@dataclass
class RecoveryReport:
    best_loss: float
    best_restart: int
    trajectories: list[list[float]]
    steps: list[list[float]]
    iterations: list[int]
    converged: list[bool]
    state: TensorNetworkState
    estimate: NDArray[np.complex128]
    projected: NDArray[np.complex128] | None
    init_seed: int
    trace_weight: float
    frob_error: float | None = None
    trace_error: float | None = None
    extras: dict = field(default_factory=dict)

    def to_dict(self, include_state: bool = True) -> dict:
        from .network import state_to_dict

        out = {
            "kind": self.state.kind.value,
            "best_loss": self.best_loss,
            "best_restart": self.best_restart,
            "iterations": self.iterations,
            "converged": self.converged,
            "trajectories": [[v if np.isfinite(v) else None for v in traj] for traj in self.trajectories],
            "init_seed": self.init_seed,
            "trace_weight": self.trace_weight,
            "frob_error": self.frob_error,
            "trace_error": self.trace_error,
            "physical": self.projected is not None,
        }
        if include_state:
            out["state"] = state_to_dict(self.state)
        out.update(self.extras)
        return out


REPORT_SCHEMA = {
    "type": "object",
    "required": [
        "kind",
        "best_loss",
        "best_restart",
        "iterations",
        "converged",
        "trajectories",
        "init_seed",
        "trace_weight",
        "frob_error",
        "trace_error",
        "physical",
    ],
    "properties": {
        "kind": {"enum": ["peps", "pepo"]},
        "best_loss": {"type": "number", "minimum": 0},
        "best_restart": {"type": "integer", "minimum": 0},
        "iterations": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "converged": {"type": "array", "items": {"type": "boolean"}},
        "trajectories": {"type": "array", "items": {"type": "array", "items": {"type": ["number", "null"]}}},
        "init_seed": {"type": "integer"},
        "trace_weight": {"type": "number", "minimum": 0},
        "frob_error": {"type": ["number", "null"], "minimum": 0},
        "trace_error": {"type": ["number", "null"], "minimum": 0},
        "physical": {"type": "boolean"},
        "state": {"type": "object", "required": ["shape", "kind", "bonds", "sites"]},
    },
}


def _balance(state: TensorNetworkState) -> TensorNetworkState:
    """Gauge move that equalises site norms; for a PEPS also fixes ``||u|| = 1``.

    The objective is unchanged by it.
    """
    norms = np.array([np.linalg.norm(t) for row in state.tensors for t in row])
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        return state
    target = np.exp(np.mean(np.log(norms)))
    if state.kind is Kind.PEPS:
        total = np.linalg.norm(contract(state))
        if total > 0 and np.isfinite(total):
            target /= total ** (1.0 / state.shape.n)
    factors = iter(target / norms)
    return state.map_sites(lambda t: t * next(factors))


def random_init(config: RecoveryConfig, rng: np.random.Generator, mmap: MeasurementMap) -> TensorNetworkState:
    """Gaussian sites scaled by ``1/sqrt(site size)``; a PEPO is rescaled so that
    ``||sym(C)||_F = 1/sqrt(D)`` and its probabilities start at O(1/K)."""
    shape, bonds = config.shape, config.bonds
    grid = []
    for a in range(shape.q):
        row = []
        for b in range(shape.p):
            dims = site_shape(shape, bonds, a, b)
            z = (rng.standard_normal(dims) + 1j * rng.standard_normal(dims)) / np.sqrt(2)
            row.append(z / np.sqrt(np.prod(dims)))
        grid.append(tuple(row))
    state = TensorNetworkState(shape, bonds, tuple(grid))
    if config.kind is Kind.PEPO:
        c = contract(state)
        norm = np.linalg.norm((c + c.conj().T) / 2)
        if norm > 0:
            factor = (1.0 / np.sqrt(shape.dim) / norm) ** (1.0 / shape.n)
            state = state.map_sites(lambda t: t * factor)
    return _balance(state)


def _descend(
    config: RecoveryConfig, objective: _Objective, state: TensorNetworkState, restart: int
) -> RestartResult:
    value, dense_grad = objective(contract(state))
    losses, steps = [value], []
    key = (config.init_seed, STREAM_INIT, restart)
    if not np.isfinite(value):
        return RestartResult(restart, key, losses, steps, None, False)
    step = config.initial_step
    converged = False
    prev = None
    for it in range(config.max_iters):
        if value <= 1e-30:
            converged = True
            break
        grads = _site_grads(state, dense_grad)
        flat = state.flat()
        gflat = np.concatenate([g.ravel() for row in grads for g in row])
        gnorm_sq = float(np.vdot(gflat, gflat).real)
        if gnorm_sq == 0 or not np.isfinite(gnorm_sq):
            converged = gnorm_sq == 0
            break
        if config.bb and prev is not None:
            s_vec, y_vec = flat - prev[0], gflat - prev[1]
            sy = float(np.vdot(s_vec, y_vec).real)
            if sy > 0:
                step = float(np.vdot(s_vec, s_vec).real) / sy
        for _ in range(config.max_backtracks):
            trial = state.unflatten(flat - step * gflat)
            trial_value, _ = objective(contract(trial), want_grad=False)
            if np.isfinite(trial_value) and trial_value <= value - config.sufficient_decrease * step * gnorm_sq:
                break
            step *= config.shrink
        else:
            converged = True  # no representable descent step left
            break
        decrease = (value - trial_value) / value
        if config.rebalance_every and (it + 1) % config.rebalance_every == 0:
            state, prev = _balance(trial), None
        else:
            state, prev = trial, (flat, gflat)
        value = trial_value
        losses.append(value)
        steps.append(step)
        _, dense_grad = objective(contract(state))
        step *= config.growth
        if decrease < config.tol:
            converged = True
            break
    return RestartResult(restart, key, losses, steps, state, converged)


def fit(
    config: RecoveryConfig,
    mmap: MeasurementMap,
    p_hat: NDArray,
    ground_truth: NDArray | None = None,
    project: bool = True,
    truth_rank: int | None = None,
) -> RecoveryReport:
    """Gradient descent with backtracking from ``config.restarts`` random starts.

    The restart with the lowest final loss is returned. PEPO estimates are also
    projected onto density matrices (``project=True``). With ``ground_truth``
    (a state vector or density matrix) the report carries Frobenius and trace
    errors of the final estimate.
    """
    kind = config.kind
    if config.shape.dim != mmap.dim:
        raise StructureError(f"lattice dimension {config.shape.dim} does not match map dimension {mmap.dim}")
    lam = _resolve_weight(mmap, kind, config.trace_weight)
    objective = _Objective(mmap, p_hat, kind, lam)

    def run(r: int) -> RestartResult:
        rng = stream(config.init_seed, STREAM_INIT, r)
        return _descend(config, objective, random_init(config, rng, mmap), r)

    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            results = list(pool.map(run, range(config.restarts)))
    else:
        results = [run(r) for r in range(config.restarts)]
    results.sort(key=lambda res: res.restart)

    finite = [res for res in results if res.state is not None and np.isfinite(res.losses[-1])]
    trajectories = [res.losses for res in results]
    if not finite:
        raise OptimizationError("every restart diverged", trajectories)
    best = min(finite, key=lambda res: res.losses[-1])
    log.debug("best restart %d, loss %.3e", best.restart, best.losses[-1])

    dense = contract(best.state)
    if kind is Kind.PEPS:
        estimate = as_density(dense)
        projected = None
        final = estimate
    else:
        estimate = (dense + dense.conj().T) / 2
        projected = project_physical(estimate) if project else None
        final = projected if project else estimate
    report = RecoveryReport(
        best_loss=best.losses[-1],
        best_restart=best.restart,
        trajectories=trajectories,
        steps=[res.steps for res in results],
        iterations=[len(res.steps) for res in results],
        converged=[res.converged for res in results],
        state=best.state,
        estimate=estimate,
        projected=projected,
        init_seed=config.init_seed,
        trace_weight=lam,
    )
    if ground_truth is not None:
        metrics = error_metrics(final, ground_truth, rank=truth_rank)
        report.frob_error = metrics["frob"]
        report.trace_error = metrics["trace_dist"]
    return report
