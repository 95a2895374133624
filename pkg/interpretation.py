"""Numerical certificates for the random-walk reading of ECI/PCI.

The one-step walk W on the country-product graph, its two-step projections
S_c^rw and S_p^rw, normalized cuts on either projection or on W itself, the
edge incidence factorization M = R^T C and the canonical-correlation property
of the scores.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from complexity import pearson
from errors import ContractViolation, DegeneracyError, UndefinedPartitionError

logger = logging.getLogger(__name__)

DENSE_WALK_LIMIT = 5000
WALK_TOL = 1e-12
IDENTITY_TOL = 1e-10
CCA_TOL = 1e-8
BROKEN_TOL = 1e-3


def _inverse(weights: np.ndarray) -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    out = np.zeros_like(weights)
    np.divide(1.0, weights, out=out, where=weights > 0)
    return out


@dataclass(frozen=True, eq=False)
class BipartiteWalk:
    """W = [[0, D^-1 M], [U^-1 M^T, 0]] with its two-step projections."""

    W: sparse.csr_matrix
    s_c_rw: sparse.csr_matrix
    s_p_rw: sparse.csr_matrix
    chi: sparse.csr_matrix
    n_countries: int

    def row_sum_residual(self, matrix: Optional[sparse.spmatrix] = None) -> float:
        matrix = self.W if matrix is None else matrix
        sums = np.asarray(matrix.sum(axis=1)).ravel()
        return float(np.max(np.abs(sums - 1.0)))

    def complementation_residual(self, probes: int = 8, seed: int = 0) -> float:
        """max |W^2 - blockdiag(S_c^rw, S_p^rw)|; sampled with mat-vec probes on large graphs."""
        size = self.W.shape[0]
        if size <= DENSE_WALK_LIMIT:
            diff = (self.W @ self.W - self.chi).tocoo()
            return float(np.max(np.abs(diff.data))) if diff.nnz else 0.0
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((size, probes))
        X /= np.linalg.norm(X, axis=0)
        return float(np.max(np.abs(self.W @ (self.W @ X) - self.chi @ X)))


def build_walk(M) -> BipartiteWalk:
    d, u = M.diversity, M.ubiquity
    if np.any(d <= 0) or np.any(u <= 0):
        raise ContractViolation("build_walk needs a pruned matrix")
    entries = M.entries.astype(float)
    to_products = sparse.diags(_inverse(d)) @ entries
    to_countries = sparse.diags(_inverse(u)) @ entries.T
    W = sparse.bmat([[None, to_products], [to_countries, None]], format="csr")
    s_c = sparse.csr_matrix(to_products @ to_countries)
    s_p = sparse.csr_matrix(to_countries @ to_products)
    chi = sparse.csr_matrix(sparse.block_diag([s_c, s_p]))
    return BipartiteWalk(W, s_c, s_p, chi, M.shape[0])


def _side_mask(labels) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.dtype == bool:
        return labels
    return labels == "B"


def _ncut_from(similarity, degree, in_b: np.ndarray) -> float:
    if in_b.all() or not in_b.any():
        raise UndefinedPartitionError("Ncut needs both sides of the partition to be non-empty")
    a_idx, b_idx = np.flatnonzero(~in_b), np.flatnonzero(in_b)
    cut = float(similarity[a_idx][:, b_idx].sum())
    return cut / float(degree[a_idx].sum()) + cut / float(degree[b_idx].sum())


def ncut(M, labels: Sequence, side: Optional[str] = None) -> float:
    """Ncut(A, B) = cut/vol(A) + cut/vol(B) on S_c = M U^-1 M^T (degrees d)
    or S_p = M^T D^-1 M (degrees u).

    `labels` are 'A'/'B' strings or booleans (True = B) over countries or products;
    `side` is inferred from the length unless the matrix is square.
    """
    m, n = M.shape
    labels = list(labels)
    if side is None:
        if len(labels) == m and m != n:
            side = "country"
        elif len(labels) == n and m != n:
            side = "product"
        elif len(labels) == m:
            side = "country"
        else:
            raise ContractViolation(f"{len(labels)} labels match neither side of M {M.shape}")
    entries = M.entries.astype(float)
    if side == "country":
        similarity = entries @ sparse.diags(_inverse(M.ubiquity)) @ entries.T
        degree = M.diversity
    elif side == "product":
        similarity = entries.T @ sparse.diags(_inverse(M.diversity)) @ entries
        degree = M.ubiquity
    else:
        raise ValueError(f"side must be 'country' or 'product', got {side!r}")
    if len(labels) != len(degree):
        raise ContractViolation(f"{len(labels)} labels for {len(degree)} {side} entities")
    return _ncut_from(sparse.csr_matrix(similarity), np.asarray(degree, dtype=float), _side_mask(labels))


def ncut_bipartite(M, country_labels: Sequence, product_labels: Sequence) -> float:
    """Joint co-cluster cut: the same formula on the bipartite adjacency [[0, M], [M^T, 0]]."""
    entries = M.entries.astype(float)
    adjacency = sparse.bmat([[None, entries], [entries.T, None]], format="csr")
    degree = np.concatenate([M.diversity, M.ubiquity]).astype(float)
    in_b = np.concatenate([_side_mask(list(country_labels)), _side_mask(list(product_labels))])
    return _ncut_from(adjacency, degree, in_b)


@dataclass(frozen=True, eq=False)
class IncidencePair:
    R: sparse.csr_matrix
    C: sparse.csr_matrix
    edges: Tuple[Tuple[str, str], ...]

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_scores(self, country_scores, product_scores) -> Tuple[np.ndarray, np.ndarray]:
        """rho = R . country scores, psi = C . product scores."""
        return self.R @ np.asarray(country_scores), self.C @ np.asarray(product_scores)


def build_incidence(M) -> IncidencePair:
    coo = M.entries.tocoo()
    order = np.lexsort((coo.col, coo.row))
    rows, cols = coo.row[order], coo.col[order]
    k = len(rows)
    ones = np.ones(k, dtype=np.int8)
    R = sparse.csr_matrix((ones, (np.arange(k), rows)), shape=(k, M.shape[0]))
    C = sparse.csr_matrix((ones, (np.arange(k), cols)), shape=(k, M.shape[1]))
    if (R.T.astype(np.int64) @ C.astype(np.int64) != M.entries.astype(np.int64)).nnz:
        raise ContractViolation("R^T C does not reproduce M")
    edges = tuple((M.countries[i], M.products[j]) for i, j in zip(rows, cols))
    return IncidencePair(R, C, edges)


def canonical_correlation_check(M, scores, incidence: Optional[IncidencePair] = None) -> float:
    """Edge-level Pearson correlation of eci_raw and sigma2 * pci_raw (equals sigma2)."""
    incidence = incidence or build_incidence(M)
    rho, psi = incidence.edge_scores(scores.eci_raw, scores.sigma2 * scores.pci_raw)
    if np.std(rho) == 0 or np.std(psi) == 0:
        raise DegeneracyError("edge scores have zero variance", sigma2=scores.sigma2)
    return pearson(rho, psi)


def average_pci_profile(M, scores) -> Tuple[np.ndarray, np.ndarray]:
    """(mean PCI of each country's products, mean ECI of each product's exporters)."""
    entries = M.entries.astype(float)
    country_means = (entries @ scores.pci_raw) * _inverse(M.diversity)
    product_means = (entries.T @ scores.eci_raw) * _inverse(M.ubiquity)
    return country_means, product_means


@dataclass
class IdentityCheck:
    name: str
    residual: float
    tolerance: float
    passed: bool
    expect: str = "holds"

    def to_dict(self):
        return {
            "name": self.name,
            "residual": self.residual,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "expect": self.expect,
        }


def _holds(name, residual, tolerance) -> IdentityCheck:
    return IdentityCheck(name, float(residual), tolerance, bool(residual < tolerance))


def verify_identities(M, scores, walk: Optional[BipartiteWalk] = None, seed: int = 0) -> List[IdentityCheck]:
    """Evaluate every certified identity on one instance."""
    walk = walk or build_walk(M)
    checks = [
        _holds("walk_row_stochastic", walk.row_sum_residual(), WALK_TOL),
        _holds("chi_row_stochastic", walk.row_sum_residual(walk.chi), WALK_TOL),
        _holds("stochastic_complementation", walk.complementation_residual(seed=seed), WALK_TOL),
    ]

    country_means, product_means = average_pci_profile(M, scores)
    sigma_sq = scores.sigma2 ** 2
    checks.append(_holds("eci_is_mean_pci", np.max(np.abs(country_means - scores.eci_raw)), IDENTITY_TOL))
    checks.append(
        _holds("pci_is_scaled_mean_eci", np.max(np.abs(product_means - sigma_sq * scores.pci_raw)), IDENTITY_TOL)
    )

    if scores.eci_std is not None:
        entries = M.entries.astype(float)
        inv_d, inv_u = _inverse(M.diversity), _inverse(M.ubiquity)
        std_forward = (entries @ scores.pci_std) * inv_d
        checks.append(
            _holds("standardized_eci_is_mean_pci", np.max(np.abs(std_forward - scores.eci_std)), IDENTITY_TOL)
        )
        reverse = (entries.T @ scores.eci_std) * inv_u / sigma_sq
        broken = float(np.max(np.abs(scores.pci_std - reverse)))
        # the residual is the constant |mean(eci_raw)| (sigma2^-2 - 1) / sd(eci_raw)
        balanced = abs(float(np.mean(scores.eci_raw))) < 1e-12
        checks.append(
            IdentityCheck(
                "standardized_reverse_identity",
                broken,
                BROKEN_TOL,
                bool(broken > BROKEN_TOL or balanced),
                "broken",
            )
        )

    correlation = canonical_correlation_check(M, scores)
    checks.append(_holds("canonical_correlation_is_sigma2", abs(correlation - scores.sigma2), CCA_TOL))

    for check in checks:
        if not check.passed:
            logger.warning("Identity %s failed: residual %.3e (tolerance %.1e)", check.name, check.residual, check.tolerance)
    return checks
