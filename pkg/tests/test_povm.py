from __future__ import annotations

import itertools

import numpy as np
import pytest

from pepsqst.errors import ScaleError, StructureError
from pepsqst.povm import (
    DesignEnsemble,
    MeasurementMap,
    ProjectiveBasis,
    apply_map,
    effects_sum_check,
    haar_basis,
    load_ensemble,
    random_frame,
    save_ensemble,
    sic_qubit,
    stabilizer_count,
    stabilizer_design,
    symmetric_projector,
)
from pepsqst.verify import check_design_moments, random_density, random_hermitian


def test_sic_overlaps_and_completeness():
    sic = sic_qubit()
    assert sic.size == 4 and sic.declared_t == 2
    for j, k in itertools.combinations(range(4), 2):
        assert abs(abs(np.vdot(sic.vectors[j], sic.vectors[k])) ** 2 - 1 / 3) <= 1e-12
    assert effects_sum_check(MeasurementMap(sic)) <= 1e-12


@pytest.mark.parametrize("n,count", [(1, 6), (2, 60), (3, 1080), (4, 36720)])
def test_stabilizer_counts(n, count):
    assert stabilizer_count(n) == count
    ens = stabilizer_design(n)
    assert ens.size == count and ens.declared_t == 3
    assert np.allclose(np.linalg.norm(ens.vectors, axis=1), 1, atol=1e-12)


def test_single_qubit_stabilizer_states():
    ens = stabilizer_design(1)
    s = 1 / np.sqrt(2)
    expected = [[1, 0], [0, 1], [s, s], [s, -s], [s, 1j * s], [s, -1j * s]]
    for target in expected:
        assert max(abs(np.vdot(target, v)) for v in ens.vectors) == pytest.approx(1, abs=1e-12)


def test_stabilizer_states_distinct_up_to_phase():
    ens = stabilizer_design(2)
    overlaps = np.abs(ens.vectors.conj() @ ens.vectors.T) ** 2
    np.fill_diagonal(overlaps, 0)
    assert overlaps.max() < 1 - 1e-9


def test_stabilizer_scale_guard():
    with pytest.raises(ScaleError):
        stabilizer_design(5)


def test_stabilizer_cache_round_trip(tmp_path, monkeypatch):
    monkeypatch.setenv("PEPSQST_CACHE", str(tmp_path))
    ens = stabilizer_design.__wrapped__(2)
    assert (tmp_path / "stabilizer_n2.json").exists()
    again = stabilizer_design.__wrapped__(2)
    assert np.array_equal(ens.vectors, again.vectors)


def test_ensemble_file_round_trip(tmp_path):
    sic = sic_qubit()
    save_ensemble(sic, tmp_path / "e.json")
    back = load_ensemble(tmp_path / "e.json")
    assert np.array_equal(back.vectors, sic.vectors) and back.declared_t == 2


@pytest.mark.parametrize("n", [1, 2])
def test_stabilizer_third_moment(n):
    assert check_design_moments(stabilizer_design(n), 3, tolerance=1e-10).passed


def test_effects_sum_to_identity():
    assert effects_sum_check(MeasurementMap(stabilizer_design(2))) <= 1e-10
    assert effects_sum_check(MeasurementMap(haar_basis(4, 0))) <= 1e-12


def test_haar_basis_unitary_and_deterministic():
    u = haar_basis(8, 3).unitary
    assert np.abs(u.conj().T @ u - np.eye(8)).max() <= 1e-12
    assert np.array_equal(u, haar_basis(8, 3).unitary)


def test_haar_first_moment():
    rng = np.random.default_rng(0)
    values = [abs(haar_basis(2, rng).unitary[0, 0]) ** 2 for _ in range(2000)]
    assert np.mean(values) == pytest.approx(0.5, abs=0.03)


def test_haar_scale_guard():
    with pytest.raises(ScaleError):
        haar_basis(2048, 0)


def test_projective_basis_rejects_non_unitary():
    with pytest.raises(StructureError):
        ProjectiveBasis(np.array([[1.0, 1.0], [0.0, 1.0]]))


def test_maximally_mixed_probabilities():
    stab = stabilizer_design(2)
    mmap = MeasurementMap([stab, haar_basis(4, 1)])
    p = apply_map(mmap, np.eye(4) / 4)
    np.testing.assert_allclose(p[:60], 1 / 60, atol=1e-15)
    np.testing.assert_allclose(p[60:], 1 / 4, atol=1e-15)


def test_eigenbasis_measurement():
    basis = haar_basis(4, 5)
    phi = basis.unitary[:, 0]
    p = apply_map(MeasurementMap(basis), np.outer(phi, phi.conj()))
    np.testing.assert_allclose(p, [1, 0, 0, 0], atol=1e-12)


def test_pure_vector_matches_matrix():
    rng = np.random.default_rng(2)
    u = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    u /= np.linalg.norm(u)
    mmap = MeasurementMap(stabilizer_design(2))
    np.testing.assert_allclose(mmap.probabilities(u), mmap.probabilities(np.outer(u, u.conj())), atol=1e-14)


def test_map_linearity_and_block_sums():
    rng = np.random.default_rng(4)
    mmap = MeasurementMap([stabilizer_design(2), haar_basis(4, 0), haar_basis(4, 1)])
    for _ in range(20):
        x, y = random_hermitian(4, rng), random_hermitian(4, rng)
        a, b = rng.standard_normal(2)
        np.testing.assert_allclose(
            mmap.probabilities(a * x + b * y), a * mmap.probabilities(x) + b * mmap.probabilities(y), atol=1e-12
        )
        rho = random_density(4, rng)
        p = mmap.probabilities(rho)
        assert p.min() >= -1e-10 and p.max() <= 1 + 1e-10
        for block in mmap.blocks(p):
            assert abs(block.sum() - 1) <= 1e-10


def test_adjoint_is_map_adjoint():
    rng = np.random.default_rng(6)
    mmap = MeasurementMap([sic_qubit(), haar_basis(2, 0)])
    x = random_hermitian(2, rng)
    w = rng.standard_normal(mmap.num_outcomes)
    lhs = w @ mmap.probabilities(x)
    rhs = np.vdot(mmap.adjoint(w), x).real
    assert lhs == pytest.approx(rhs, rel=1e-12)
    u = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    np.testing.assert_allclose(mmap.adjoint_apply(w, u), mmap.adjoint(w) @ u, atol=1e-13)


def test_gram_reproduces_squared_norm():
    rng = np.random.default_rng(8)
    mmap = MeasurementMap(stabilizer_design(2))
    x = random_hermitian(4, rng)
    v = x.reshape(-1)
    assert (v.conj() @ mmap.gram() @ v).real == pytest.approx(np.sum(mmap.probabilities(x) ** 2), rel=1e-12)


def test_dimension_mismatch():
    with pytest.raises(StructureError):
        MeasurementMap(sic_qubit()).probabilities(np.eye(4) / 4)
    with pytest.raises(StructureError):
        MeasurementMap([sic_qubit(), haar_basis(4, 0)])


def test_design_rejects_non_unit_vectors():
    with pytest.raises(StructureError):
        DesignEnsemble(np.array([[1.0, 1.0]]), declared_t=1)


def test_symmetric_projector_properties():
    for dim, s in [(2, 2), (2, 3), (3, 2)]:
        proj = symmetric_projector(dim, s)
        assert np.allclose(proj @ proj, proj)
        rank = round(np.trace(proj))
        from math import comb

        assert rank == comb(dim + s - 1, s)


def test_random_frame_is_not_a_two_design():
    assert check_design_moments(random_frame(4, 60, 0), 2, tolerance=1e-3, negative=True).passed
