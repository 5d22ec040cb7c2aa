"""Measurement ensembles and the stacked linear measurement map.

A design ensemble of ``K`` unit vectors induces the POVM ``A_k = (D/K) w w^H``;
a projective basis contributes the rank-one projectors onto the columns of a
unitary. Both are stored as a ``D x K`` matrix of measurement vectors plus a
scalar weight, so effect matrices are never materialised.
"""

from __future__ import annotations

import itertools
import json
import math
import os
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from numpy.typing import NDArray

from .errors import ScaleError, StructureError

MAX_STABILIZER_QUBITS = 4
MAX_HAAR_DIM = 1024


@dataclass(frozen=True, eq=False)
class DesignEnsemble:
    """Uniformly weighted set of unit vectors (rows of ``vectors``)."""

    vectors: NDArray[np.complex128]
    declared_t: int
    name: str = "design"

    def __post_init__(self) -> None:
        vectors = np.array(self.vectors, dtype=np.complex128)
        if vectors.ndim != 2:
            raise StructureError("design vectors must be a K x D array")
        norms = np.linalg.norm(vectors, axis=1)
        if np.any(np.abs(norms - 1) > 1e-12):
            raise StructureError(f"design vectors must be unit norm (worst {np.abs(norms - 1).max():.2e})")
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @property
    def weight(self) -> float:
        return 1.0 / self.size

    @property
    def columns(self) -> NDArray[np.complex128]:
        return self.vectors.T

    @property
    def effect_scale(self) -> float:
        return self.dim / self.size


@dataclass(frozen=True, eq=False)
class ProjectiveBasis:
    unitary: NDArray[np.complex128]

    def __post_init__(self) -> None:
        unitary = np.array(self.unitary, dtype=np.complex128)
        if unitary.ndim != 2 or unitary.shape[0] != unitary.shape[1]:
            raise StructureError("a projective basis needs a square unitary")
        dev = np.abs(unitary.conj().T @ unitary - np.eye(unitary.shape[0])).max()
        if dev > 1e-12:
            raise StructureError(f"basis is not unitary (deviation {dev:.2e})")
        unitary.setflags(write=False)
        object.__setattr__(self, "unitary", unitary)

    @property
    def dim(self) -> int:
        return self.unitary.shape[0]

    @property
    def size(self) -> int:
        return self.unitary.shape[1]

    @property
    def columns(self) -> NDArray[np.complex128]:
        return self.unitary

    @property
    def effect_scale(self) -> float:
        return 1.0


Ensemble = Union[DesignEnsemble, ProjectiveBasis]


class MeasurementMap:
    """Stacked map ``rho -> [<A_{q,k}, rho>]``, ensembles in order, outcomes in vector order."""

    def __init__(self, ensembles: Ensemble | Sequence[Ensemble]) -> None:
        if isinstance(ensembles, (DesignEnsemble, ProjectiveBasis)):
            ensembles = [ensembles]
        ensembles = list(ensembles)
        if not ensembles:
            raise StructureError("a measurement map needs at least one ensemble")
        dims = {e.dim for e in ensembles}
        if len(dims) != 1:
            raise StructureError(f"ensembles act on different dimensions {sorted(dims)}")
        self.ensembles = tuple(ensembles)
        self.dim = dims.pop()
        self._gram: NDArray[np.complex128] | None = None

    @property
    def num_ensembles(self) -> int:
        return len(self.ensembles)

    @property
    def block_sizes(self) -> list[int]:
        return [e.size for e in self.ensembles]

    @property
    def num_outcomes(self) -> int:
        return sum(self.block_sizes)

    def blocks(self, values: NDArray) -> list[NDArray]:
        """Split a stacked vector into per-ensemble blocks."""
        return np.split(np.asarray(values), np.cumsum(self.block_sizes)[:-1])

    def _check_dim(self, n: int) -> None:
        if n != self.dim:
            raise StructureError(f"state dimension {n} does not match measurement dimension {self.dim}")

    def probabilities(self, rho: NDArray) -> NDArray[np.float64]:
        """Real parts of ``<A_k, rho>``; a 1-D input is read as a pure state ``u u^H``."""
        rho = np.asarray(rho)
        self._check_dim(rho.shape[0])
        out = []
        for ens in self.ensembles:
            phi = ens.columns
            if rho.ndim == 1:
                vals = np.abs(phi.conj().T @ rho) ** 2
            else:
                self._check_dim(rho.shape[1])
                vals = np.einsum("ik,ik->k", phi.conj(), rho @ phi).real
            out.append(ens.effect_scale * vals)
        return np.concatenate(out)

    def adjoint(self, weights: NDArray) -> NDArray[np.complex128]:
        """``sum_k weights_k A_k`` as a dense Hermitian matrix."""
        weights = np.asarray(weights, dtype=float)
        out = np.zeros((self.dim, self.dim), dtype=np.complex128)
        for ens, block in zip(self.ensembles, self.blocks(weights)):
            phi = ens.columns
            out += (phi * (ens.effect_scale * block)) @ phi.conj().T
        return out

    def adjoint_apply(self, weights: NDArray, u: NDArray) -> NDArray[np.complex128]:
        """``(sum_k weights_k A_k) @ u`` without forming the matrix."""
        out = np.zeros(self.dim, dtype=np.complex128)
        for ens, block in zip(self.ensembles, self.blocks(weights)):
            phi = ens.columns
            out += phi @ (ens.effect_scale * block * (phi.conj().T @ u))
        return out

    def gram(self) -> NDArray[np.complex128]:
        """``G`` with ``||A(rho)||^2 = vec(rho)^H G vec(rho)`` for Hermitian rho.

        ``vec`` is row-major. Built once and cached; size ``D^2 x D^2``.
        """
        if self._gram is None:
            if self.dim**2 > 4096:
                raise ScaleError(f"Gram operator of a dimension-{self.dim} map is too large")
            g = np.zeros((self.dim**2, self.dim**2), dtype=np.complex128)
            for ens in self.ensembles:
                phi = ens.columns
                for start in range(0, phi.shape[1], 2048):
                    cols = phi[:, start : start + 2048]
                    y = ens.effect_scale * np.einsum("ik,jk->kij", cols, cols.conj()).reshape(cols.shape[1], -1)
                    g += y.T @ y.conj()
            self._gram = g
        return self._gram


def apply_map(mmap: MeasurementMap, rho: NDArray) -> NDArray[np.float64]:
    """Population probabilities of ``rho`` (matrix or pure-state vector)."""
    rho = np.asarray(rho)
    if rho.ndim == 2 and np.allclose(rho, rho.conj().T, rtol=0, atol=1e-12):
        for ens in mmap.ensembles:
            phi = ens.columns
            imag = np.einsum("ik,ik->k", phi.conj(), rho @ phi).imag
            if np.abs(imag).max() * ens.effect_scale > 1e-10:
                raise ArithmeticError("complex probability from a Hermitian state")
    return mmap.probabilities(rho)


def effects_sum_check(mmap: MeasurementMap) -> float:
    """Largest entrywise deviation of ``sum_k A_{q,k}`` from the identity, over ``q``."""
    worst = 0.0
    eye = np.eye(mmap.dim)
    for ens in mmap.ensembles:
        phi = ens.columns
        total = ens.effect_scale * (phi @ phi.conj().T)
        worst = max(worst, float(np.abs(total - eye).max()))
    return worst


# -- constructions ------------------------------------------------------------


def sic_qubit() -> DesignEnsemble:
    """Tetrahedral SIC-POVM on a qubit: four states with pairwise overlap 1/3."""
    vectors = [np.array([1.0, 0.0], dtype=complex)]
    for k in range(3):
        phase = np.exp(2j * np.pi * k / 3)
        vectors.append(np.array([1 / np.sqrt(3), np.sqrt(2 / 3) * phase]))
    return DesignEnsemble(np.array(vectors), declared_t=2, name="sic")


def stabilizer_count(n_qubits: int) -> int:
    return 2**n_qubits * math.prod(2**k + 1 for k in range(1, n_qubits + 1))


def _span(basis: Sequence[int]) -> frozenset[int]:
    points = {0}
    for v in basis:
        points |= {x ^ v for x in points}
    return frozenset(points)


def _affine_subspaces(n: int):
    """Yield ``(offset, basis)`` for every affine subspace of F_2^n exactly once."""
    size = 2**n
    for k in range(n + 1):
        seen: set[frozenset[int]] = set()
        for basis in itertools.combinations(range(1, size), k):
            span = _span(basis)
            if len(span) != 2**k or span in seen:
                continue
            seen.add(span)
            cosets: set[frozenset[int]] = set()
            for x0 in range(size):
                coset = frozenset(x0 ^ v for v in span)
                if coset in cosets:
                    continue
                cosets.add(coset)
                yield min(coset), basis


def _enumerate_stabilizers(n: int) -> NDArray[np.complex128]:
    size = 2**n
    states: dict[bytes, NDArray[np.complex128]] = {}
    for offset, basis in _affine_subspaces(n):
        k = len(basis)
        coords = np.array(list(itertools.product((0, 1), repeat=k)), dtype=np.int64).reshape(2**k, k)
        points = np.full(2**k, offset, dtype=np.int64)
        for i, v in enumerate(basis):
            points ^= coords[:, i] * v
        pairs = [(i, j) for i in range(k) for j in range(i, k)]
        quad_terms = np.array([coords[:, i] * coords[:, j] for i, j in pairs], dtype=np.int64).reshape(-1, 2**k)
        for qbits in itertools.product((0, 1), repeat=len(pairs)):
            sign = (np.asarray(qbits, dtype=np.int64) @ quad_terms) % 2 if pairs else np.zeros(2**k, np.int64)
            for lbits in itertools.product((0, 1), repeat=k):
                lin = (coords @ np.asarray(lbits, dtype=np.int64)) % 2 if k else np.zeros(1, np.int64)
                amp = (1j) ** lin * (-1.0) ** sign
                # the offset is the smallest point and carries phase 1, so the
                # first nonzero entry is already real positive
                scaled = np.zeros(size, dtype=np.complex128)
                scaled[points] = amp
                key = np.concatenate([scaled.real, scaled.imag]).round().astype(np.int8).tobytes()
                if key not in states:
                    states[key] = scaled / np.sqrt(2**k)
    return np.array(list(states.values()))


def _cache_dir() -> Path:
    return Path(os.environ.get("PEPSQST_CACHE", Path.home() / ".cache" / "pepsqst"))


def save_ensemble(ens: DesignEnsemble, path: str | Path) -> None:
    obj = {
        "dim": ens.dim,
        "declared_t": ens.declared_t,
        "K": ens.size,
        "name": ens.name,
        "vectors": {"re": ens.vectors.real.ravel().tolist(), "im": ens.vectors.imag.ravel().tolist()},
    }
    Path(path).write_text(json.dumps(obj))


def load_ensemble(path: str | Path) -> DesignEnsemble:
    obj = json.loads(Path(path).read_text())
    vec = np.array(obj["vectors"]["re"]) + 1j * np.array(obj["vectors"]["im"])
    return DesignEnsemble(vec.reshape(obj["K"], obj["dim"]), obj["declared_t"], obj.get("name", "design"))


@lru_cache(maxsize=None)
def stabilizer_design(n_qubits: int, cache: bool = True) -> DesignEnsemble:
    """All ``n``-qubit stabilizer states (a 3-design), up to global phase.

    Built from affine subspaces with quadratic and linear phase forms and
    cached to ``$PEPSQST_CACHE`` (default ``~/.cache/pepsqst``).
    """
    if n_qubits < 1 or n_qubits > MAX_STABILIZER_QUBITS:
        raise ScaleError(f"stabilizer enumeration supports 1..{MAX_STABILIZER_QUBITS} qubits, got {n_qubits}")
    path = _cache_dir() / f"stabilizer_n{n_qubits}.json"
    if cache and path.exists():
        ens = load_ensemble(path)
        if ens.size == stabilizer_count(n_qubits):
            return ens
    vectors = _enumerate_stabilizers(n_qubits)
    if len(vectors) != stabilizer_count(n_qubits):
        raise AssertionError(f"enumerated {len(vectors)} stabilizer states, expected {stabilizer_count(n_qubits)}")
    ens = DesignEnsemble(vectors, declared_t=3, name=f"stabilizer{n_qubits}")
    if cache:
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            save_ensemble(ens, path)
        except OSError:
            pass
    return ens


def random_frame(dim: int, size: int, rng: np.random.Generator | int | None = None) -> DesignEnsemble:
    """Unit vectors drawn uniformly from the sphere; not a design (used as a control)."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    z = rng.standard_normal((size, dim)) + 1j * rng.standard_normal((size, dim))
    return DesignEnsemble(z / np.linalg.norm(z, axis=1, keepdims=True), declared_t=0, name="random-frame")


def haar_basis(dim: int, rng: np.random.Generator | int | None = None) -> ProjectiveBasis:
    """Haar-random unitary from a QR of a complex Ginibre matrix with fixed phases."""
    if dim > MAX_HAAR_DIM:
        raise ScaleError(f"Haar bases are limited to dimension {MAX_HAAR_DIM}")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    diag = np.diagonal(r)
    q = q * (diag / np.abs(diag))
    return ProjectiveBasis(q)


def symmetric_projector(dim: int, s: int) -> NDArray[np.float64]:
    """Projector onto the symmetric subspace of ``(C^dim)^{(x)s}``, as the mean of permutations."""
    if dim**s > 4096:
        raise ScaleError(f"dense symmetric projector of size {dim}^{s} is too large")
    eye = np.eye(dim**s).reshape((dim,) * (2 * s))
    total = np.zeros((dim**s, dim**s))
    for perm in itertools.permutations(range(s)):
        total += eye.transpose(list(perm) + list(range(s, 2 * s))).reshape(dim**s, dim**s)
    return total / math.factorial(s)
