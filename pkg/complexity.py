"""ECI and PCI by three routes: SVD co-clustering, random-walk eigenproblems and
the Method of Reflections, plus the sign and standardization conventions.

Raw scores follow the singular-vector definitions

    eci_raw = D^(-1/2) u2            pci_raw = sigma2^-1 U^(-1/2) v2

so that eci_raw = D^-1 M pci_raw and U^-1 M^T eci_raw = sigma2^2 pci_raw hold exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
import scipy.linalg
from scipy.stats import spearmanr

from errors import ContractViolation, DegeneracyError
from sparse_svd import normalize_sym, truncated_svd

logger = logging.getLogger(__name__)

DISCONNECTED_TOL = 1e-9
RANK_ONE_TOL = 1e-12
ORIENT_TIE = 1e-12
ROUTES = ("svd", "eigen", "mor")


@dataclass(frozen=True)
class Orientation:
    rule: str = "unoriented"
    flipped: bool = False
    correlation: float = 0.0
    fallback: bool = False

    def to_dict(self):
        return {
            "rule": self.rule,
            "flipped": self.flipped,
            "correlation": self.correlation,
            "fallback": self.fallback,
        }


@dataclass(frozen=True, eq=False)
class ComplexityScores:
    countries: Tuple[str, ...]
    products: Tuple[str, ...]
    eci_raw: np.ndarray
    pci_raw: np.ndarray
    sigma2: float
    lambda2: float
    diversity: np.ndarray
    ubiquity: np.ndarray
    route: str
    eci_std: Optional[np.ndarray] = None
    pci_std: Optional[np.ndarray] = None
    orientation: Orientation = Orientation()
    diagnostics: dict = field(default_factory=dict)

    def flipped(self) -> "ComplexityScores":
        """ECI and PCI negated together, so the coupled identities still hold."""
        return replace(
            self,
            eci_raw=-self.eci_raw,
            pci_raw=-self.pci_raw,
            eci_std=None if self.eci_std is None else -self.eci_std,
            pci_std=None if self.pci_std is None else -self.pci_std,
        )

    def eci_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"code": list(self.countries), "eci_raw": self.eci_raw, "eci_std": self.eci_std}
        )

    def pci_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"code": list(self.products), "pci_raw": self.pci_raw, "pci_std": self.pci_std}
        )

    def to_dict(self):
        return {
            "route": self.route,
            "sigma2": self.sigma2,
            "lambda2": self.lambda2,
            "n_countries": len(self.countries),
            "n_products": len(self.products),
            "eci_raw_mean": float(np.mean(self.eci_raw)),
            "eci_raw_sd": float(np.std(self.eci_raw)),
            "orientation": self.orientation,
            "diagnostics": self.diagnostics,
        }


@dataclass
class ReflectionsTrace:
    """Method of Reflections iterates; index 0 holds (diversity, ubiquity)."""

    countries: Tuple[str, ...]
    products: Tuple[str, ...]
    country_iterates: List[np.ndarray]
    product_iterates: List[np.ndarray]
    renormalized: bool

    @property
    def iterations(self) -> int:
        return len(self.country_iterates) - 1

    def country_frame(self) -> pd.DataFrame:
        data = {"code": list(self.countries)}
        data.update({f"k_{n}": k for n, k in enumerate(self.country_iterates)})
        return pd.DataFrame(data)

    def product_frame(self) -> pd.DataFrame:
        data = {"code": list(self.products)}
        data.update({f"k_{n}": k for n, k in enumerate(self.product_iterates)})
        return pd.DataFrame(data)

    def rank_agreement(self, scores: ComplexityScores) -> dict:
        """Spearman correlation of the latest iterates with spectral ECI / PCI.

        Countries are read at the last even iteration and products at the last
        odd one; the other parity ranks in reverse order. The renormalized
        iterates converge to +-ECI depending on how the degree vector projects
        on it, so both are first oriented by the rule orient_sign uses
        (country iterate correlates non-negatively with diversity). Agreement
        after N iterations is limited by (sigma3 / sigma2)^N.
        """
        n = self.iterations
        country_at = n if n % 2 == 0 else n - 1
        product_at = n if n % 2 == 1 else n - 1
        kc = self.country_iterates[country_at]
        kp = self.product_iterates[product_at]
        flip = pearson(kc, self.country_iterates[0]) < 0
        if flip:
            kc, kp = -kc, -kp
        eci_rho = spearmanr(kc, scores.eci_raw)[0]
        pci_rho = spearmanr(kp, scores.pci_raw)[0]
        return {
            "iterations": n,
            "country_iteration": country_at,
            "product_iteration": product_at,
            "flipped": bool(flip),
            "spearman_eci": float(eci_rho),
            "spearman_pci": float(pci_rho),
        }


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation, 0 when either vector is constant."""
    xc = np.asarray(x, dtype=float) - np.mean(x)
    yc = np.asarray(y, dtype=float) - np.mean(y)
    denom = np.sqrt(np.dot(xc, xc) * np.dot(yc, yc))
    if denom == 0:
        return 0.0
    return float(np.dot(xc, yc) / denom)


def _check_sigma2(sigma2: float) -> None:
    if abs(sigma2 - 1.0) <= DISCONNECTED_TOL:
        raise DegeneracyError(
            f"sigma2 = {sigma2:.12g} is numerically 1: the specialization graph is disconnected",
            sigma2=sigma2,
        )
    if sigma2 <= RANK_ONE_TOL:
        raise DegeneracyError(
            "sigma2 = 0: rank-one specialization matrix, ECI has zero variance", sigma2=0.0
        )


def eci_pci_svd(M, tol: float = 1e-10, max_iter: int = 10_000,
                warm_start: Optional[np.ndarray] = None, seed: int = 0) -> ComplexityScores:
    """Scores from the second singular triple of M_sym (co-clustering route)."""
    A = normalize_sym(M)
    result = truncated_svd(A, 2, tol=tol, max_iter=max_iter, warm_start=warm_start, seed=seed)
    pair = result[1]
    sigma2 = pair.sigma
    _check_sigma2(sigma2)

    pci_raw = pair.right / (sigma2 * np.sqrt(A.ubiquity))
    # D^(-1/2) u2 written as the product-average of PCI, which it equals at convergence
    eci_raw = (M.entries @ pci_raw) / A.diversity
    scores = ComplexityScores(
        countries=tuple(M.countries),
        products=tuple(M.products),
        eci_raw=eci_raw,
        pci_raw=pci_raw,
        sigma2=sigma2,
        lambda2=1.0 - sigma2 ** 2,
        diversity=A.diversity,
        ubiquity=A.ubiquity,
        route="svd",
        diagnostics={
            "iterations": result.iterations,
            "residual": result.residual,
            "warnings": list(result.warnings),
        },
    )
    return standardize(orient_sign(scores, M))


def eci_pci_eigen(M) -> ComplexityScores:
    """Scores from the random-walk eigenproblems of S_c^rw and S_p^rw.

    Solved as the symmetric-definite pencils (D - M U^-1 M^T) x = lambda D x and
    (U - M^T D^-1 M) y = lambda U y, whose eigenvectors come back D- and
    U-normalized, i.e. already in the D^(-1/2) u / U^(-1/2) v scaling.
    """
    d = M.diversity.astype(float)
    u = M.ubiquity.astype(float)
    if np.any(d <= 0) or np.any(u <= 0):
        raise ContractViolation("eci_pci_eigen needs a pruned matrix")
    dense = M.to_dense()

    sim_c = (dense / u) @ dense.T
    lam_c, vec_c = scipy.linalg.eigh(np.diag(d) - sim_c, np.diag(d))
    sim_p = (dense.T / d) @ dense
    lam_p, vec_p = scipy.linalg.eigh(np.diag(u) - sim_p, np.diag(u))

    lambda2 = float(lam_c[1])
    sigma2 = float(np.sqrt(max(1.0 - lambda2, 0.0)))
    _check_sigma2(sigma2)

    eci_raw = vec_c[:, 1]
    product_vec = vec_p[:, 1]
    # couple the two eigenvectors through eci = D^-1 M pci
    if np.dot(eci_raw, (dense @ product_vec) / d) < 0:
        product_vec = -product_vec

    scores = ComplexityScores(
        countries=tuple(M.countries),
        products=tuple(M.products),
        eci_raw=eci_raw,
        pci_raw=product_vec / sigma2,
        sigma2=sigma2,
        lambda2=lambda2,
        diversity=d,
        ubiquity=u,
        route="eigen",
        diagnostics={"lambda2_products": float(lam_p[1])},
    )
    return standardize(orient_sign(scores, M))


def _renormalize(x: np.ndarray) -> np.ndarray:
    centered = x - x.mean()
    sd = centered.std()
    if sd <= 1e-15:
        return x
    return centered / sd


def method_of_reflections(M, n_iter: int = 20, renormalize: bool = True) -> ReflectionsTrace:
    """k_c,N = d_c^-1 sum_p M_cp k_p,N-1 and k_p,N = u_p^-1 sum_c M_cp k_c,N-1."""
    if n_iter < 1:
        raise ValueError("n_iter must be at least 1")
    entries = M.entries.astype(float)
    entries_t = entries.T.tocsr()
    d = M.diversity.astype(float)
    u = M.ubiquity.astype(float)

    kc, kp = [d.copy()], [u.copy()]
    for _ in range(n_iter):
        next_c = (entries @ kp[-1]) / d
        next_p = (entries_t @ kc[-1]) / u
        if renormalize:
            next_c, next_p = _renormalize(next_c), _renormalize(next_p)
        if not (np.all(np.isfinite(next_c)) and np.all(np.isfinite(next_p))):
            raise ContractViolation("Method of Reflections produced non-finite values")
        kc.append(next_c)
        kp.append(next_p)
    return ReflectionsTrace(tuple(M.countries), tuple(M.products), kc, kp, renormalize)


def orient_sign(scores: ComplexityScores, M=None) -> ComplexityScores:
    """Orient so that ECI correlates non-negatively with diversity.

    When that correlation vanishes, the first non-zero ECI component is made
    positive instead. PCI always flips with ECI.
    """
    diversity = M.diversity if M is not None else scores.diversity
    corr = pearson(scores.eci_raw, diversity)
    if abs(corr) <= ORIENT_TIE:
        nonzero = np.flatnonzero(np.abs(scores.eci_raw) > ORIENT_TIE)
        flip = bool(nonzero.size and scores.eci_raw[nonzero[0]] < 0)
        rule = "first_component"
    else:
        flip = corr < 0
        rule = "diversity_correlation"
    oriented = scores.flipped() if flip else scores
    return replace(oriented, orientation=Orientation(rule, flip, -corr if flip else corr))


def standardize(scores: ComplexityScores) -> ComplexityScores:
    """eci_std = (eci - mean)/sd and pci_std = (pci - mean_eci)/sd_eci (population sd)."""
    mean = float(np.mean(scores.eci_raw))
    sd = float(np.std(scores.eci_raw))
    if sd <= 1e-15:
        raise DegeneracyError("ECI has zero variance; cannot standardize", sigma2=scores.sigma2)
    return replace(
        scores,
        eci_std=(scores.eci_raw - mean) / sd,
        pci_std=(scores.pci_raw - mean) / sd,
    )


def compute_scores(M, route: str = "svd", tol: float = 1e-10, max_iter: int = 10_000,
                   seed: int = 0) -> ComplexityScores:
    if route == "svd":
        return eci_pci_svd(M, tol=tol, max_iter=max_iter, seed=seed)
    if route == "eigen":
        return eci_pci_eigen(M)
    raise ValueError(f"route {route!r} does not produce spectral scores")


def cross_route_report(svd_scores: ComplexityScores, eigen_scores: ComplexityScores) -> dict:
    """Residuals between the SVD and eigen routes (both oriented the same way)."""
    return {
        "max_abs_eci_raw_diff": float(np.max(np.abs(svd_scores.eci_raw - eigen_scores.eci_raw))),
        "max_abs_pci_raw_diff": float(np.max(np.abs(svd_scores.pci_raw - eigen_scores.pci_raw))),
        "sigma2_sq_vs_one_minus_lambda2": abs(svd_scores.sigma2 ** 2 - (1.0 - eigen_scores.lambda2)),
    }
