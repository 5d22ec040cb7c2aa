"""Dense-exact PEPS and PEPO on a small q x p lattice.

Site tensors use the axis order ``(i, [j,] left, up, right, down)``; ``j`` is
present only for operators. Boundary bonds are stored as axes of size 1.

Bond dimensions are kept in the ``p x (2q - 1)`` layout used for the bond
matrix of a PEPS/PEPO: with 0-based site coordinates ``(a, b)`` (row, column),

* ``entries[b, 2a]`` is the horizontal bond between ``(a, b)`` and ``(a, b+1)``,
  for ``b < p - 1``;
* ``entries[b, 2a + 1]`` is the vertical bond between ``(a, b)`` and
  ``(a + 1, b)``, for ``a < q - 1``.

The even columns of the last row have no edge behind them and are structural
zeros. Dense states are flattened little-endian in row-major site order:
site ``(0, 0)`` is the least significant digit.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import DegenerateTraceError, ScaleError, StructureError

MAX_DENSE_DIM = 2**20
DEGENERATE_TRACE = 1e-10

Label = tuple


class Kind(str, Enum):
    PEPS = "peps"
    PEPO = "pepo"


@dataclass(frozen=True)
class LatticeShape:
    """A ``q x p`` lattice of ``d``-level sites."""

    q: int
    p: int
    d: int = 2

    def __post_init__(self) -> None:
        if self.q < 1 or self.p < 1:
            raise StructureError(f"lattice must be at least 1x1, got {self.q}x{self.p}")
        if self.d < 2:
            raise StructureError(f"physical dimension must be >= 2, got {self.d}")
        if self.d**self.n > MAX_DENSE_DIM:
            raise ScaleError(f"d^n = {self.d}^{self.n} exceeds the dense limit {MAX_DENSE_DIM}")

    @property
    def n(self) -> int:
        return self.q * self.p

    @property
    def dim(self) -> int:
        return self.d**self.n

    def sites(self) -> list[tuple[int, int]]:
        """Row-major list of 0-based site coordinates."""
        return [(a, b) for a in range(self.q) for b in range(self.p)]


@dataclass(frozen=True, eq=False)
class BondDims:
    entries: NDArray[np.int64]
    kind: Kind = Kind.PEPS

    def __post_init__(self) -> None:
        entries = np.array(self.entries, dtype=np.int64)
        if entries.ndim != 2 or entries.shape[1] % 2 != 1:
            raise StructureError(f"bond matrix must be p x (2q-1), got shape {entries.shape}")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "kind", Kind(self.kind))
        entries.setflags(write=False)
        for (b, c), value in np.ndenumerate(entries):
            if self._structural_zero(b, c):
                if value != 0:
                    raise StructureError(f"entry ({b}, {c}) of the bond matrix must be 0")
            elif value < 1:
                raise StructureError(f"bond dimension at ({b}, {c}) must be >= 1, got {value}")

    def _structural_zero(self, b: int, c: int) -> bool:
        return b == self.p - 1 and c % 2 == 0

    @property
    def p(self) -> int:
        return self.entries.shape[0]

    @property
    def q(self) -> int:
        return (self.entries.shape[1] + 1) // 2

    @classmethod
    def uniform(cls, q: int, p: int, value: int, kind: Kind | str = Kind.PEPS) -> BondDims:
        entries = np.full((p, 2 * q - 1), value, dtype=np.int64)
        entries[p - 1, 0::2] = 0
        return cls(entries, Kind(kind))

    def horizontal(self, a: int, b: int) -> int:
        """Bond between ``(a, b)`` and ``(a, b + 1)``; 1 past the right edge."""
        if b < 0 or b >= self.p - 1:
            return 1
        return int(self.entries[b, 2 * a])

    def vertical(self, a: int, b: int) -> int:
        """Bond between ``(a, b)`` and ``(a + 1, b)``; 1 past the bottom edge."""
        if a < 0 or a >= self.q - 1:
            return 1
        return int(self.entries[b, 2 * a + 1])

    def site_bonds(self, a: int, b: int) -> tuple[int, int, int, int]:
        """(left, up, right, down) bond sizes of site ``(a, b)``."""
        return (
            self.horizontal(a, b - 1),
            self.vertical(a - 1, b),
            self.horizontal(a, b),
            self.vertical(a, b),
        )

    def __add__(self, other: BondDims) -> BondDims:
        if self.entries.shape != other.entries.shape or self.kind != other.kind:
            raise StructureError("cannot add bond matrices of different shape or kind")
        return BondDims(self.entries + other.entries, self.kind)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BondDims):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.entries, other.entries)

    def max(self) -> int:
        return int(self.entries.max()) if self.entries.size else 1


def site_shape(shape: LatticeShape, bonds: BondDims, a: int, b: int) -> tuple[int, ...]:
    phys = (shape.d,) if bonds.kind is Kind.PEPS else (shape.d, shape.d)
    return phys + bonds.site_bonds(a, b)


@dataclass(frozen=True, eq=False)
class TensorNetworkState:
    """Grid of site tensors plus the bond matrix that sizes them.

    ``caps`` optionally records per-site Frobenius-norm caps.
    """

    shape: LatticeShape
    bonds: BondDims
    tensors: tuple[tuple[NDArray[np.complex128], ...], ...]
    caps: NDArray[np.float64] | None = field(default=None)

    def __post_init__(self) -> None:
        shape, bonds = self.shape, self.bonds
        if (bonds.q, bonds.p) != (shape.q, shape.p):
            raise StructureError(
                f"bond matrix is for a {bonds.q}x{bonds.p} lattice, state is {shape.q}x{shape.p}"
            )
        if len(self.tensors) != shape.q or any(len(row) != shape.p for row in self.tensors):
            raise StructureError("tensor grid does not match the lattice shape")
        grid = []
        for a in range(shape.q):
            row = []
            for b in range(shape.p):
                data = np.asarray(self.tensors[a][b], dtype=np.complex128)
                expected = site_shape(shape, bonds, a, b)
                if data.shape != expected:
                    raise StructureError(f"site ({a}, {b}) has shape {data.shape}, expected {expected}")
                if not np.all(np.isfinite(data)):
                    raise StructureError(f"site ({a}, {b}) has non-finite entries")
                data.setflags(write=False)
                row.append(data)
            grid.append(tuple(row))
        object.__setattr__(self, "tensors", tuple(grid))
        if self.caps is not None:
            caps = np.broadcast_to(np.asarray(self.caps, dtype=float), (shape.q, shape.p)).copy()
            if np.any(caps <= 0):
                raise StructureError("norm caps must be positive")
            object.__setattr__(self, "caps", caps)

    @property
    def kind(self) -> Kind:
        return self.bonds.kind

    def site(self, a: int, b: int) -> NDArray[np.complex128]:
        return self.tensors[a][b]

    def replace(self, a: int, b: int, data: NDArray[np.complex128]) -> TensorNetworkState:
        grid = [list(row) for row in self.tensors]
        grid[a][b] = data
        return TensorNetworkState(self.shape, self.bonds, tuple(map(tuple, grid)), self.caps)

    def map_sites(self, fn) -> TensorNetworkState:
        grid = tuple(tuple(fn(t) for t in row) for row in self.tensors)
        return TensorNetworkState(self.shape, self.bonds, grid, self.caps)

    def flat(self) -> NDArray[np.complex128]:
        """All site entries concatenated in row-major site order."""
        return np.concatenate([t.ravel() for row in self.tensors for t in row])

    def unflatten(self, values: NDArray[np.complex128]) -> TensorNetworkState:
        grid, offset = [], 0
        for row in self.tensors:
            new_row = []
            for t in row:
                new_row.append(np.asarray(values[offset : offset + t.size]).reshape(t.shape))
                offset += t.size
            grid.append(tuple(new_row))
        return TensorNetworkState(self.shape, self.bonds, tuple(grid), self.caps)


def flatten_index(shape: LatticeShape, multi: Sequence[Sequence[int]]) -> int:
    """Linear index of a grid of per-site indices, 1-based on both ends.

    ``multi[a][b]`` is the index (in ``1..d``) of site ``(a+1, b+1)``. Site
    ``(1, 1)`` is the least significant digit and sites count row-major.

    >>> flatten_index(LatticeShape(1, 2, 2), [[2, 1]])
    2
    """
    grid = np.asarray(multi)
    if grid.shape != (shape.q, shape.p):
        raise StructureError(f"index grid has shape {grid.shape}, expected {(shape.q, shape.p)}")
    if np.any(grid < 1) or np.any(grid > shape.d):
        raise IndexError(f"site indices must lie in 1..{shape.d}")
    index = 1
    for a in range(shape.q):
        for b in range(shape.p):
            index += shape.d ** (a * shape.p + b) * (int(grid[a, b]) - 1)
    return index


def _site_labels(shape: LatticeShape, kind: Kind, a: int, b: int) -> list[Label | None]:
    phys: list[Label | None] = [("i", a, b)] if kind is Kind.PEPS else [("i", a, b), ("j", a, b)]
    return phys + [
        ("h", a, b - 1) if b > 0 else None,
        ("v", a - 1, b) if a > 0 else None,
        ("h", a, b) if b < shape.p - 1 else None,
        ("v", a, b) if a < shape.q - 1 else None,
    ]


def _squeezed(state: TensorNetworkState, a: int, b: int) -> tuple[NDArray, list[Label]]:
    data = state.site(a, b)
    labels = _site_labels(state.shape, state.kind, a, b)
    keep = [k for k, lab in enumerate(labels) if lab is not None]
    index = tuple(slice(None) if lab is not None else 0 for lab in labels)
    return data[index], [labels[k] for k in keep]


def _absorb(acc, acc_labels, data, labels):
    if acc is None:
        return data, list(labels)
    shared = [lab for lab in acc_labels if lab in labels]
    out = np.tensordot(
        acc, data, axes=([acc_labels.index(s) for s in shared], [labels.index(s) for s in shared])
    )
    out_labels = [lab for lab in acc_labels if lab not in shared] + [lab for lab in labels if lab not in shared]
    return out, out_labels


def _sweep(state: TensorNetworkState, skip: tuple[int, int] | None = None):
    """Absorb sites column by column; returns the tensor and its open labels."""
    acc, acc_labels = None, []
    for b in range(state.shape.p):
        for a in range(state.shape.q):
            if (a, b) == skip:
                continue
            data, labels = _squeezed(state, a, b)
            acc, acc_labels = _absorb(acc, acc_labels, data, labels)
    if acc is None:
        acc, acc_labels = np.ones((), dtype=np.complex128), []
    return acc, acc_labels


def _output_labels(shape: LatticeShape, kind: Kind) -> list[Label]:
    rev = list(reversed(shape.sites()))
    labels: list[Label] = [("i", a, b) for a, b in rev]
    if kind is Kind.PEPO:
        labels += [("j", a, b) for a, b in rev]
    return labels


def _to_dense(tensor: NDArray, labels: list[Label], shape: LatticeShape, kind: Kind) -> NDArray:
    order = _output_labels(shape, kind)
    tensor = np.transpose(tensor, [labels.index(lab) for lab in order])
    if kind is Kind.PEPS:
        return tensor.reshape(shape.dim)
    return tensor.reshape(shape.dim, shape.dim)


def contract(state: TensorNetworkState) -> NDArray[np.complex128]:
    """Exact dense contraction: a length-``d^n`` vector (PEPS) or matrix (PEPO)."""
    tensor, labels = _sweep(state)
    return _to_dense(tensor, labels, state.shape, state.kind)


def contract_naive(state: TensorNetworkState) -> NDArray[np.complex128]:
    """Reference contraction by explicit enumeration of every bond assignment."""
    shape, kind = state.shape, state.kind
    edges: list[Label] = []
    sizes: list[int] = []
    for a, b in shape.sites():
        if b < shape.p - 1:
            edges.append(("h", a, b))
            sizes.append(state.bonds.horizontal(a, b))
        if a < shape.q - 1:
            edges.append(("v", a, b))
            sizes.append(state.bonds.vertical(a, b))
    nphys = 1 if kind is Kind.PEPS else 2
    out = np.zeros((shape.dim,) * nphys, dtype=np.complex128)
    for assignment in itertools.product(*(range(s) for s in sizes)):
        value = dict(zip(edges, assignment))
        term = np.ones((1,) * nphys, dtype=np.complex128)
        # most significant site first so np.kron builds the little-endian layout
        for a, b in reversed(shape.sites()):
            labels = _site_labels(shape, kind, a, b)[nphys:]
            idx = tuple(value[lab] if lab is not None else 0 for lab in labels)
            local = state.site(a, b)[(Ellipsis,) + idx]
            term = np.kron(term, local if nphys == 2 else local.reshape(-1))
        out += term.reshape(out.shape)
    return out


def environment(state: TensorNetworkState, a: int, b: int) -> tuple[NDArray, list[Label]]:
    """Contraction of every site except ``(a, b)``; open labels are returned too."""
    return _sweep(state, skip=(a, b))


def site_adjoint(
    state: TensorNetworkState, a: int, b: int, dense_grad: NDArray[np.complex128]
) -> NDArray[np.complex128]:
    """Pull a dense cotangent back onto site ``(a, b)``.

    ``contract`` is linear in each site tensor, ``contract = J @ vec(X_ab)``;
    this returns ``J^H @ dense_grad`` in the site's own shape.
    """
    shape, kind = state.shape, state.kind
    env, env_labels = environment(state, a, b)
    order = _output_labels(shape, kind)
    grad = np.asarray(dense_grad).reshape((shape.d,) * len(order))
    own_labels = _site_labels(shape, kind, a, b)
    phys_own = [lab for lab in own_labels[: (1 if kind is Kind.PEPS else 2)]]
    others = [lab for lab in order if lab not in phys_own]
    out = np.tensordot(
        env.conj(), grad, axes=([env_labels.index(lab) for lab in others], [order.index(lab) for lab in others])
    )
    out_labels = [lab for lab in env_labels if lab not in others] + [lab for lab in order if lab not in others]
    present = [lab for lab in own_labels if lab is not None]
    out = np.transpose(out, [out_labels.index(lab) for lab in present])
    return out.reshape(site_shape(shape, state.bonds, a, b))


def zero_state(shape: LatticeShape, bonds: BondDims) -> TensorNetworkState:
    grid = tuple(
        tuple(np.zeros(site_shape(shape, bonds, a, b), dtype=np.complex128) for b in range(shape.p))
        for a in range(shape.q)
    )
    return TensorNetworkState(shape, bonds, grid)


def direct_sum(x: TensorNetworkState, y: TensorNetworkState) -> TensorNetworkState:
    """Block-diagonal combination whose contraction is ``contract(x) + contract(y)``.

    ``x`` fills the leading block and ``y`` the trailing block of every internal
    bond axis; boundary axes stay at size 1.
    """
    if x.shape != y.shape or x.kind != y.kind:
        raise StructureError("direct_sum needs states of equal shape and kind")
    bonds = x.bonds + y.bonds
    nphys = 1 if x.kind is Kind.PEPS else 2
    grid = []
    for a in range(x.shape.q):
        row = []
        for b in range(x.shape.p):
            out = np.zeros(site_shape(x.shape, bonds, a, b), dtype=np.complex128)
            xs, ys = x.site(a, b), y.site(a, b)
            labels = _site_labels(x.shape, x.kind, a, b)[nphys:]
            lead = tuple(slice(0, n) for n in xs.shape[nphys:])
            trail = tuple(
                slice(0, 1) if lab is None else slice(nx, nx + ny)
                for lab, nx, ny in zip(labels, xs.shape[nphys:], ys.shape[nphys:])
            )
            # a site without internal bonds (1x1 lattice) reduces to a plain sum
            out[(Ellipsis,) + lead] += xs
            out[(Ellipsis,) + trail] += ys
            row.append(out)
        grid.append(tuple(row))
    return TensorNetworkState(x.shape, bonds, tuple(grid))


def _complex_gaussian(rng: np.random.Generator, size) -> NDArray[np.complex128]:
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2)


def rescale(state: TensorNetworkState, factor: float) -> TensorNetworkState:
    """Multiply the contraction by ``factor``, spread evenly over the sites."""
    per_site = factor ** (1.0 / state.shape.n)
    return state.map_sites(lambda t: t * per_site)


def random_state(
    shape: LatticeShape,
    bonds: BondDims,
    kind: Kind | str | None = None,
    norm_caps: float | NDArray | None = None,
    seed: int | np.random.Generator | None = None,
) -> TensorNetworkState:
    """Gaussian random PEPS/PEPO.

    Sites whose Frobenius norm exceeds their cap are scaled down to it. A PEPS
    is then rescaled globally to unit 2-norm. PEPO outputs are not normalised;
    pass them through :func:`hermitize_trace_one` to get a ground truth.
    """
    kind = Kind(kind) if kind is not None else bonds.kind
    if kind != bonds.kind:
        bonds = BondDims(bonds.entries, kind)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    caps = None
    if norm_caps is not None:
        caps = np.broadcast_to(np.asarray(norm_caps, dtype=float), (shape.q, shape.p))
        if np.any(caps <= 0):
            raise StructureError("norm caps must be positive")
    grid = []
    for a in range(shape.q):
        row = []
        for b in range(shape.p):
            data = _complex_gaussian(rng, site_shape(shape, bonds, a, b))
            if caps is not None:
                norm = np.linalg.norm(data)
                if norm > caps[a, b]:
                    data *= caps[a, b] / norm
            row.append(data)
        grid.append(tuple(row))
    state = TensorNetworkState(shape, bonds, tuple(grid), caps)
    if kind is Kind.PEPS:
        state = rescale(state, 1.0 / np.linalg.norm(contract(state)))
    return state


def random_purified_pepo(
    shape: LatticeShape,
    bond: int,
    kraus_dim: int = 2,
    seed: int | np.random.Generator | None = None,
) -> TensorNetworkState:
    """Random PSD, trace-one PEPO from a locally purified PEPS.

    Each site is ``sum_k U[i, k] (x) conj(U[j, k])`` for a PEPS site ``U`` with
    an extra ``kraus_dim``-dimensional ancilla, so internal bonds are
    ``bond**2``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    peps_bonds = BondDims.uniform(shape.q, shape.p, bond)
    grid = []
    for a in range(shape.q):
        row = []
        for b in range(shape.p):
            l, u, r, dn = peps_bonds.site_bonds(a, b)
            site = _complex_gaussian(rng, (shape.d, kraus_dim, l, u, r, dn))
            op = np.einsum("ikabcd,jkefgh->ijaebfcgdh", site, site.conj())
            row.append(op.reshape(shape.d, shape.d, l * l, u * u, r * r, dn * dn))
        grid.append(tuple(row))
    bonds = BondDims.uniform(shape.q, shape.p, bond * bond, Kind.PEPO)
    state = TensorNetworkState(shape, bonds, tuple(grid))
    return rescale(state, 1.0 / np.trace(contract(state)).real)


def hermitize_trace_one(
    state: TensorNetworkState | NDArray[np.complex128],
) -> tuple[NDArray[np.complex128], complex]:
    """Return ``sym(C) / tr(sym(C))`` and the trace used, ``sym(C) = (C + C^H)/2``."""
    if isinstance(state, TensorNetworkState):
        if state.kind is not Kind.PEPO:
            raise StructureError("hermitize_trace_one needs a PEPO")
        dense = contract(state)
    else:
        dense = np.asarray(state, dtype=np.complex128)
        if dense.ndim != 2 or dense.shape[0] != dense.shape[1]:
            raise StructureError(f"expected a square matrix, got shape {dense.shape}")
    sym = (dense + dense.conj().T) / 2
    trace = np.trace(sym)
    if abs(trace) < DEGENERATE_TRACE:
        raise DegenerateTraceError(f"trace {abs(trace):.3e} is below {DEGENERATE_TRACE:g}")
    return sym / trace, trace


def dof(shape: LatticeShape, bonds: BondDims, kind: Kind | str | None = None) -> float:
    """Degrees-of-freedom surrogate: sum over sites of d (or d^2) times the
    product of the four incident bonds, times ``log(1 + qp)``."""
    kind = Kind(kind) if kind is not None else bonds.kind
    local = shape.d if kind is Kind.PEPS else shape.d**2
    total = sum(local * math.prod(bonds.site_bonds(a, b)) for a, b in shape.sites())
    return total * math.log(1 + shape.n)


def network_dof(num_params: float, num_factors: int) -> float:
    """The same accounting for an arbitrary network: ``d_tn * log(1 + n_tn)``."""
    return num_params * math.log(1 + num_factors)


def frobenius_norm(x: NDArray) -> float:
    return float(np.linalg.norm(np.asarray(x).ravel()))


def trace_norm(x: NDArray) -> float:
    """Sum of singular values (absolute eigenvalues for Hermitian input)."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise StructureError(f"trace norm needs a square matrix, got shape {x.shape}")
    if np.allclose(x, x.conj().T, rtol=0, atol=1e-12):
        return float(np.abs(np.linalg.eigvalsh((x + x.conj().T) / 2)).sum())
    return float(np.linalg.svd(x, compute_uv=False).sum())


# -- JSON state files ---------------------------------------------------------


def state_to_dict(state: TensorNetworkState) -> dict:
    sites = []
    for a, b in state.shape.sites():
        data = state.site(a, b)
        sites.append(
            {
                "a": a,
                "b": b,
                "dims": list(data.shape),
                "re": data.real.ravel().tolist(),
                "im": data.imag.ravel().tolist(),
            }
        )
    out = {
        "shape": {"q": state.shape.q, "p": state.shape.p, "d": state.shape.d},
        "kind": state.kind.value,
        "bonds": state.bonds.entries.tolist(),
        "sites": sites,
    }
    if state.caps is not None:
        out["caps"] = state.caps.tolist()
    return out


def state_from_dict(obj: dict) -> TensorNetworkState:
    shape = LatticeShape(**obj["shape"])
    bonds = BondDims(np.array(obj["bonds"], dtype=np.int64).reshape(shape.p, 2 * shape.q - 1), Kind(obj["kind"]))
    grid = [[None] * shape.p for _ in range(shape.q)]
    for site in obj["sites"]:
        data = np.array(site["re"], dtype=float) + 1j * np.array(site["im"], dtype=float)
        grid[site["a"]][site["b"]] = data.reshape(site["dims"])
    return TensorNetworkState(shape, bonds, tuple(map(tuple, grid)), obj.get("caps"))


def save_state(state: TensorNetworkState, path: str | Path, metadata: dict | None = None) -> None:
    obj = state_to_dict(state)
    if metadata:
        obj["metadata"] = metadata
    # float repr is the shortest string that round-trips, so this is bit-exact
    Path(path).write_text(json.dumps(obj, indent=1) + "\n")


def load_state(path: str | Path) -> TensorNetworkState:
    return state_from_dict(json.loads(Path(path).read_text()))
