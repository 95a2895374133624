import numpy as np
import pytest

import interpretation
from cocluster import assign, embed, fit_gmm_1d
from complexity import eci_pci_svd
from errors import UndefinedPartitionError
from fixtures import fixture_f1, fixture_f2, random_instance
from interpretation import (
    average_pci_profile,
    build_incidence,
    build_walk,
    canonical_correlation_check,
    ncut,
    ncut_bipartite,
    verify_identities,
)
from specmatrix import SpecializationMatrix

R2 = 1 / np.sqrt(2)


def two_blocks():
    dense = np.zeros((4, 4))
    dense[:2, :2] = 1
    dense[2:, 2:] = 1
    return SpecializationMatrix.from_dense(dense)


def test_walk_f1_country_projection():
    walk = build_walk(fixture_f1())
    np.testing.assert_allclose(walk.s_c_rw.toarray(), [[0.75, 0.25], [0.25, 0.75]], atol=1e-15)


def test_walk_projections_are_row_stochastic():
    walk = build_walk(random_instance(30, 45, 0.2, seed=4))
    assert walk.row_sum_residual() < 1e-12
    assert walk.row_sum_residual(walk.s_c_rw) < 1e-12
    assert walk.row_sum_residual(walk.s_p_rw) < 1e-12
    assert walk.row_sum_residual(walk.chi) < 1e-12


@pytest.mark.parametrize("seed", range(50))
def test_two_step_walk_is_stochastic_complement(seed):
    density = 0.1 + 0.3 * (seed % 10) / 10
    walk = build_walk(random_instance(40 + seed % 7, 60 + seed % 11, density, seed=seed))
    assert walk.complementation_residual() < 1e-12


def test_complementation_probe_path(monkeypatch):
    monkeypatch.setattr(interpretation, "DENSE_WALK_LIMIT", 1)
    walk = build_walk(random_instance(30, 40, 0.3, seed=8))
    assert walk.complementation_residual(probes=4, seed=1) < 1e-12


def test_block_diagonal_walk_has_no_cross_mass():
    walk = build_walk(two_blocks())
    two_step = (walk.W @ walk.W).toarray()
    countries, products = slice(0, 4), slice(4, 8)
    assert not two_step[countries, products].any()
    assert not two_step[0:2, 2:4].any()
    assert not two_step[4:6, 6:8].any()


def test_ncut_of_components_is_zero():
    assert ncut(two_blocks(), ["A", "A", "B", "B"]) == 0.0
    assert ncut(two_blocks(), [False, False, True, True], side="product") == 0.0


def test_ncut_grows_when_entity_moves():
    assert ncut(two_blocks(), ["A", "B", "B", "B"]) > 0.0


def test_ncut_empty_side_is_undefined():
    with pytest.raises(UndefinedPartitionError):
        ncut(two_blocks(), ["B", "B", "B", "B"])


def test_spectral_partition_beats_random_balanced_partitions():
    M = fixture_f2().matrix
    scores = eci_pci_svd(M)
    z = embed(M, scores)
    assignment = assign(fit_gmm_1d(z), z, scores)
    spectral = ncut(M, assignment.country_labels, side="country")

    m = M.shape[0]
    rng = np.random.default_rng(0)
    balanced = np.array(["A"] * (m // 2) + ["B"] * (m - m // 2))
    random_cuts = np.array([ncut(M, rng.permutation(balanced), side="country") for _ in range(1000)])
    assert np.mean(random_cuts < spectral) <= 0.01

    joint = ncut_bipartite(M, assignment.country_labels, assignment.product_labels)
    assert 0.0 < joint < 1.0


def test_incidence_f1():
    M = fixture_f1()
    pair = build_incidence(M)
    assert pair.edges == (("c1", "p1"), ("c1", "p2"), ("c2", "p2"), ("c2", "p3"))
    assert np.all(pair.R.sum(axis=1) == 1) and np.all(pair.C.sum(axis=1) == 1)
    np.testing.assert_array_equal((pair.R.T @ pair.C).toarray(), M.to_dense())


def test_incidence_single_edge():
    pair = build_incidence(SpecializationMatrix.from_dense([[0, 1], [0, 0]]))
    assert pair.n_edges == 1
    assert pair.R.toarray().tolist() == [[1, 0]]
    assert pair.C.toarray().tolist() == [[0, 1]]


def test_canonical_correlation_f1():
    M = fixture_f1()
    assert abs(canonical_correlation_check(M, eci_pci_svd(M)) - R2) < 1e-10


@pytest.mark.parametrize("seed", range(5))
def test_canonical_correlation_equals_sigma2(seed):
    M = random_instance(25, 40, 0.3, seed=20 + seed)
    scores = eci_pci_svd(M)
    assert abs(canonical_correlation_check(M, scores) - scores.sigma2) < 1e-8


def test_average_profile_f1():
    M = fixture_f1()
    country_means, product_means = average_pci_profile(M, eci_pci_svd(M))
    np.testing.assert_allclose(country_means, [0.5, -0.5], atol=1e-10)
    np.testing.assert_allclose(product_means, [0.5, 0.0, -0.5], atol=1e-10)


@pytest.mark.parametrize("make", [fixture_f1, lambda: fixture_f2().matrix])
def test_verify_identities_all_pass(make):
    M = make()
    checks = verify_identities(M, eci_pci_svd(M))
    failed = [c.name for c in checks if not c.passed]
    assert failed == []
    names = {c.name for c in checks}
    assert {"stochastic_complementation", "standardized_reverse_identity",
            "canonical_correlation_is_sigma2"} <= names


def test_reverse_identity_reported_broken_on_generic_instance():
    M = fixture_f2().matrix
    check = next(c for c in verify_identities(M, eci_pci_svd(M)) if c.name == "standardized_reverse_identity")
    assert check.expect == "broken"
    assert check.residual > 1e-3
