from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pepsqst.errors import InvalidDistributionError
from pepsqst.sampling import (
    CSV_FIELDS,
    ShotRecord,
    empirical_probs,
    measurement_error,
    read_records,
    sample_all,
    sample_shots,
    stacked,
    stream,
    write_records,
)

probability_vectors = st.lists(st.floats(0, 1), min_size=1, max_size=12).filter(lambda v: sum(v) > 1e-3)


@settings(max_examples=50, deadline=None)
@given(weights=probability_vectors, shots=st.integers(0, 10**7), seed=st.integers(0, 2**32 - 1))
def test_frequencies_sum_to_shots(weights, shots, seed):
    p = np.array(weights) / sum(weights)
    rec = sample_shots(p, shots, np.random.default_rng(seed))
    assert rec.frequencies.sum() == shots and rec.frequencies.min() >= 0
    if shots:
        assert stacked([rec]).sum() == pytest.approx(1, abs=1e-15)


def test_degenerate_and_zero_shots():
    rng = np.random.default_rng(0)
    assert sample_shots([1, 0, 0], 1234, rng).frequencies.tolist() == [1234, 0, 0]
    rec = sample_shots([0.5, 0.5], 0, rng)
    assert rec.frequencies.tolist() == [0, 0]
    with pytest.raises(ZeroDivisionError):
        empirical_probs(rec)
    assert empirical_probs(ShotRecord(0, np.array([7, 0]), 7)).tolist() == [1.0, 0.0]


def test_invalid_distributions():
    rng = np.random.default_rng(0)
    with pytest.raises(InvalidDistributionError):
        sample_shots([0.6, 0.6], 10, rng)
    with pytest.raises(InvalidDistributionError):
        sample_shots([1.1, -0.1], 10, rng)
    # round-off negatives are clamped
    assert sample_shots([1 + 5e-11, -5e-11], 10, rng).frequencies.tolist() == [10, 0]


def test_record_invariant():
    with pytest.raises(InvalidDistributionError):
        ShotRecord(0, np.array([3, 2]), 6)


def test_uniform_four_sigma():
    shots = 10**6
    freq = sample_shots(np.full(4, 0.25), shots, stream(1, 0)).frequencies / shots
    sigma = np.sqrt(0.25 * 0.75 / shots)
    assert np.all(np.abs(freq - 0.25) <= 4 * sigma)
    assert np.all(np.abs(freq - 0.25) <= 0.002)


def test_unbiased():
    p = np.array([0.5, 0.3, 0.15, 0.05])
    shots, reps = 200, 1000
    mean = np.mean([empirical_probs(sample_shots(p, shots, stream(3, r))) for r in range(reps)], axis=0)
    sigma = np.sqrt(p * (1 - p) / (shots * reps))
    assert np.all(np.abs(mean - p) <= 5 * sigma)


def test_error_shrinks_like_inverse_root():
    p = np.full(6, 1 / 6)

    def mean_error(shots, offset):
        return np.mean(
            [measurement_error(empirical_probs(sample_shots(p, shots, stream(5, offset, r))), p)[1] for r in range(50)]
        )

    assert 8 <= mean_error(10**3, 0) / mean_error(10**5, 1) <= 12


def test_measurement_error_examples():
    p = np.array([0.2, 0.3, 0.5])
    eta, norm = measurement_error(p, p)
    assert norm == 0 and not eta.any()
    eps = 0.01
    _, norm = measurement_error(p + np.array([eps, -eps, 0]), p)
    assert norm == pytest.approx(eps * np.sqrt(2))
    with pytest.raises(ValueError):
        measurement_error(p, p[:2])


def test_streams_deterministic_and_distinct():
    p = np.full(5, 0.2)
    a = sample_all(np.tile(p, 2), [5, 5], 1000, root_seed=9)
    b = sample_all(np.tile(p, 2), [5, 5], 1000, root_seed=9)
    assert all(np.array_equal(x.frequencies, y.frequencies) for x, y in zip(a, b))
    # different blocks and reps draw from different streams
    assert not np.array_equal(a[0].frequencies, a[1].frequencies)
    c = sample_all(np.tile(p, 2), [5, 5], 1000, root_seed=9, rep=1)
    assert not np.array_equal(a[0].frequencies, c[0].frequencies)
    draws = np.array([stream(0, k).random(2000) for k in range(4)])
    assert np.abs(np.corrcoef(draws)[np.triu_indices(4, 1)]).max() < 0.1


def test_csv_round_trip(tmp_path):
    p = np.concatenate([np.full(4, 0.25), [0.7, 0.3, 0, 0]])
    records = sample_all(p, [4, 4], 321, root_seed=2)
    path = tmp_path / "shots.csv"
    assert write_records(path, records, run_id=3) == 8
    assert path.read_text().splitlines()[0] == ",".join(CSV_FIELDS)
    back = read_records(path)
    assert [r.q for r in back] == [0, 1]
    assert all(np.array_equal(x.frequencies, y.frequencies) and x.shots == y.shots for x, y in zip(records, back))
