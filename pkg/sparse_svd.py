"""Sparse kernels: the symmetric normalization of M, a deflated truncated SVD,
and a dense SVD used as a test oracle on small instances.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import List, Optional, Tuple

import numpy as np
from scipy import sparse

from errors import ContractViolation, ConvergenceError, OracleSizeError

logger = logging.getLogger(__name__)

ORACLE_LIMIT = 512
SIGMA_FLOOR = float(np.sqrt(np.finfo(float).eps))
GAP_WARNING = 1e-12


@dataclass(frozen=True, eq=False)
class NormalizedMatrix:
    """M_sym = D^(-1/2) M U^(-1/2) with the weights it was built from."""

    m_sym: sparse.csr_matrix
    diversity: np.ndarray
    ubiquity: np.ndarray
    countries: Tuple[str, ...] = ()
    products: Tuple[str, ...] = ()

    @property
    def shape(self) -> Tuple[int, int]:
        return self.m_sym.shape

    @cached_property
    def m_sym_t(self) -> sparse.csr_matrix:
        # row-compressed transpose, built on first use
        return self.m_sym.T.tocsr()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.m_sym @ x

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        return self.m_sym_t @ y

    def to_dense(self) -> np.ndarray:
        return self.m_sym.toarray()

    def leading_pair(self) -> "SpectralPair":
        """The analytic top triple: u1 ~ D^(1/2)1, v1 ~ U^(1/2)1, sigma1 = 1."""
        left = np.sqrt(self.diversity)
        right = np.sqrt(self.ubiquity)
        return SpectralPair(left / np.linalg.norm(left), right / np.linalg.norm(right), 1.0)


@dataclass(frozen=True, eq=False)
class SpectralPair:
    left: np.ndarray
    right: np.ndarray
    sigma: float

    @property
    def eigenvalue(self) -> float:
        """Random-walk Laplacian eigenvalue lambda = 1 - sigma^2."""
        return 1.0 - self.sigma ** 2


@dataclass
class SvdResult:
    pairs: List[SpectralPair]
    iterations: int = 0
    residual: float = 0.0
    warnings: List[str] = field(default_factory=list)

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]

    def __iter__(self):
        return iter(self.pairs)

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([p.sigma for p in self.pairs])


@dataclass(frozen=True, eq=False)
class DenseSvd:
    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray

    def pairs(self) -> List[SpectralPair]:
        return [SpectralPair(self.u[:, i], self.vt[i], float(self.s[i])) for i in range(len(self.s))]

    def reconstruct(self) -> np.ndarray:
        k = len(self.s)
        return (self.u[:, :k] * self.s) @ self.vt[:k]


def normalize_sym(M) -> NormalizedMatrix:
    """Entrywise M_cp / sqrt(d_c u_p); M must already be pruned."""
    d = np.asarray(M.diversity, dtype=float)
    u = np.asarray(M.ubiquity, dtype=float)
    if np.any(d <= 0) or np.any(u <= 0):
        raise ContractViolation(
            "normalize_sym needs positive diversity and ubiquity; prune the matrix first"
        )
    m_sym = sparse.diags(1.0 / np.sqrt(d)) @ M.entries.astype(float) @ sparse.diags(1.0 / np.sqrt(u))
    return NormalizedMatrix(sparse.csr_matrix(m_sym), d, u, tuple(M.countries), tuple(M.products))


def _ritz_residuals(A: NormalizedMatrix, U, AtU, sig, count):
    res = np.empty(count)
    for i in range(count):
        if sig[i] > SIGMA_FLOOR:
            v = AtU[:, i] / sig[i]
            res[i] = np.linalg.norm(A.matvec(v) - sig[i] * U[:, i]) / sig[i]
        else:
            # numerically null direction: nothing left to converge
            res[i] = 0.0
    return res


def complement_basis(u1: np.ndarray):
    """(lift, restrict) for the orthogonal complement of the unit vector u1.

    Both apply the Householder reflector H with H u1 = +-e1, whose last m-1
    columns are an orthonormal basis P of the complement: lift(Y) = P Y and
    restrict(X) = P^T X. Lifted vectors are orthogonal to u1 to rounding,
    whatever Y holds.
    """
    w = np.array(u1, dtype=float)
    w[0] += 1.0 if w[0] >= 0 else -1.0
    w /= np.linalg.norm(w)

    def reflect(X):
        return X - 2.0 * np.outer(w, w @ X)

    def lift(Y):
        return reflect(np.vstack([np.zeros((1, Y.shape[1])), Y]))

    def restrict(X):
        return reflect(X)[1:]

    return lift, restrict


def truncated_svd(A: NormalizedMatrix, k: int = 2, tol: float = 1e-10, max_iter: int = 10_000,
                  warm_start: Optional[np.ndarray] = None, seed: int = 0) -> SvdResult:
    """Top-k singular triples of M_sym.

    The leading pair is analytic, so only the remaining k-1 triples are iterated:
    block power iteration on P^T M_sym M_sym^T P, where P spans the complement
    of u1, with a Rayleigh-Ritz rotation each step. Working in the complement
    keeps u1 out of the block even when M_sym is rank-deficient and the
    iterates are pure rounding noise.
    Converged when every wanted triple has ||A v - sigma u|| / sigma < tol;
    singular values below SIGMA_FLOOR are reported as numerically zero.
    """
    m, n = A.shape
    if not 1 <= k <= min(m, n):
        raise ValueError(f"k must be in [1, {min(m, n)}], got {k}")
    if tol <= 0:
        raise ValueError("tol must be positive")

    lead = A.leading_pair()
    lead_residual = float(np.linalg.norm(A.matvec(lead.right) - lead.left))
    if k == 1:
        return SvdResult([lead], 0, lead_residual)

    wanted = k - 1
    block = min(m - 1, max(wanted + 8, 2 * wanted))
    lift, restrict = complement_basis(lead.left)

    rng = np.random.default_rng(seed)
    Q = rng.standard_normal((m - 1, block))
    if warm_start is not None:
        guess = restrict(np.asarray(warm_start, dtype=float).reshape(m, -1))[:, :block]
        Q[:, : guess.shape[1]] = guess
    Q, _ = np.linalg.qr(Q)

    residual = np.inf
    for iteration in range(1, max_iter + 1):
        Q, _ = np.linalg.qr(restrict(A.matvec(A.rmatvec(lift(Q)))))
        U = lift(Q)
        AtU = A.rmatvec(U)
        evals, evecs = np.linalg.eigh(AtU.T @ AtU)
        order = np.argsort(evals)[::-1]
        evecs = evecs[:, order]
        Q, U, AtU = Q @ evecs, U @ evecs, AtU @ evecs
        sig = np.sqrt(np.clip(evals[order], 0.0, None))
        residual = float(_ritz_residuals(A, U, AtU, sig, wanted).max())
        if residual < tol:
            break
    else:
        raise ConvergenceError(residual, max_iter)

    warnings = []
    if block > wanted and sig[wanted - 1] > SIGMA_FLOOR and sig[wanted - 1] - sig[wanted] < GAP_WARNING:
        warnings.append(
            f"spectral gap between sigma_{k} and sigma_{k + 1} is below {GAP_WARNING:g}; "
            "singular vectors are not unique"
        )
    pairs = [lead]
    for i in range(wanted):
        if sig[i] > SIGMA_FLOOR:
            pairs.append(SpectralPair(U[:, i].copy(), AtU[:, i] / sig[i], float(sig[i])))
        else:
            warnings.append(f"sigma_{i + 2} is numerically zero (rank-deficient matrix)")
            pairs.append(SpectralPair(U[:, i].copy(), np.zeros(n), 0.0))
    for message in warnings:
        logger.warning(message)
    logger.debug("truncated_svd converged in %d iterations (residual %.3e)", iteration, residual)
    return SvdResult(pairs, iteration, max(residual, lead_residual), warnings)


def dense_oracle_svd(A) -> DenseSvd:
    """Full SVD by LAPACK, refused above ORACLE_LIMIT to avoid accidental dense work."""
    if isinstance(A, NormalizedMatrix):
        dense = A.to_dense()
    elif sparse.issparse(A):
        dense = A.toarray()
    else:
        dense = np.atleast_2d(np.asarray(A, dtype=float))
    if min(dense.shape) > ORACLE_LIMIT:
        raise OracleSizeError(
            f"dense oracle refused for shape {dense.shape}; min dimension exceeds {ORACLE_LIMIT}"
        )
    u, s, vt = np.linalg.svd(dense, full_matrices=True)
    return DenseSvd(u, s, vt)
