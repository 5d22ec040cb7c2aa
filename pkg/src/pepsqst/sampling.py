"""Finite-shot simulation of measurement outcomes.

Random streams are derived from a root seed with :class:`numpy.random.SeedSequence`:
the stream for key ``(k1, k2, ...)`` is ``SeedSequence(root, spawn_key=(k1, k2, ...))``.
Keys used in this package: ``(STREAM_SHOTS, q, rep)`` for shot records,
``(STREAM_BASIS, q)`` for Haar bases and ``(STREAM_INIT, restart)`` for fit
initialisations.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from numpy.typing import NDArray

from .errors import InvalidDistributionError

NEGATIVE_CLAMP = 1e-10
SUM_TOLERANCE = 1e-8

STREAM_SHOTS = 1
STREAM_BASIS = 2
STREAM_INIT = 3
STREAM_STATE = 4
STREAM_TRIAL = 5


def stream(root_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``key`` under ``root_seed``."""
    return np.random.default_rng(np.random.SeedSequence(root_seed, spawn_key=tuple(int(k) for k in key)))


@dataclass(frozen=True, eq=False)
class ShotRecord:
    q: int
    frequencies: NDArray[np.int64]
    shots: int

    def __post_init__(self) -> None:
        freq = np.asarray(self.frequencies, dtype=np.int64)
        if np.any(freq < 0) or int(freq.sum()) != self.shots:
            raise InvalidDistributionError("frequencies must be nonnegative and sum to the shot count")
        object.__setattr__(self, "frequencies", freq)


def _clean(p_block: NDArray) -> NDArray[np.float64]:
    p = np.asarray(p_block, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise InvalidDistributionError("probability block must be a nonempty vector")
    if np.any(~np.isfinite(p)) or np.any(p < -NEGATIVE_CLAMP):
        raise InvalidDistributionError(f"probability below -{NEGATIVE_CLAMP:g}: {p.min():.3e}")
    p = np.clip(p, 0.0, None)
    total = p.sum()
    if abs(total - 1.0) > SUM_TOLERANCE:
        raise InvalidDistributionError(f"probability block sums to {total!r}")
    return p / total


def sample_shots(p_block: NDArray, shots: int, rng: np.random.Generator, q: int = 0) -> ShotRecord:
    """Multinomial outcome counts for ``shots`` repetitions of one POVM."""
    if shots < 0:
        raise ValueError("shot count must be nonnegative")
    p = _clean(p_block)
    # numpy draws the multinomial by sequential binomial conditioning: O(K) in M
    return ShotRecord(q, rng.multinomial(shots, p), shots)


def empirical_probs(record: ShotRecord) -> NDArray[np.float64]:
    if record.shots == 0:
        raise ZeroDivisionError("empirical probabilities are undefined for zero shots")
    return record.frequencies / record.shots


def sample_all(p: NDArray, block_sizes: list[int], shots: int, root_seed: int, rep: int = 0) -> list[ShotRecord]:
    """One shot record per ensemble block, each from its own stream."""
    records = []
    offset = 0
    for q, size in enumerate(block_sizes):
        rng = stream(root_seed, STREAM_SHOTS, q, rep)
        records.append(sample_shots(p[offset : offset + size], shots, rng, q=q))
        offset += size
    return records


def stacked(records: Iterable[ShotRecord]) -> NDArray[np.float64]:
    """Concatenated empirical probability vector."""
    return np.concatenate([empirical_probs(r) for r in records])


def measurement_error(p_hat: NDArray, p: NDArray) -> tuple[NDArray[np.float64], float]:
    p_hat, p = np.asarray(p_hat, dtype=float), np.asarray(p, dtype=float)
    if p_hat.shape != p.shape:
        raise ValueError(f"length mismatch: {p_hat.shape} vs {p.shape}")
    eta = p_hat - p
    return eta, float(np.linalg.norm(eta))


CSV_FIELDS = ("run_id", "q", "M", "k", "f_k")


def write_records(path: str | Path, records: Iterable[ShotRecord], run_id: str | int = 0) -> int:
    rows = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_FIELDS)
        for rec in records:
            for k, f in enumerate(rec.frequencies):
                writer.writerow((run_id, rec.q, rec.shots, k, int(f)))
                rows += 1
    return rows


def read_records(path: str | Path) -> list[ShotRecord]:
    blocks: dict[int, dict[int, int]] = {}
    shots: dict[int, int] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            q = int(row["q"])
            blocks.setdefault(q, {})[int(row["k"])] = int(row["f_k"])
            shots[q] = int(row["M"])
    out = []
    for q in sorted(blocks):
        freq = np.zeros(max(blocks[q]) + 1, dtype=np.int64)
        for k, f in blocks[q].items():
            freq[k] = f
        out.append(ShotRecord(q, freq, shots[q]))
    return out
