"""Spectral co-clustering of countries and products.

Countries and products share one axis: z2 = [D^(-1/2) u2, U^(-1/2) v2], i.e.
eci_raw for countries and sigma2 * pci_raw for products. A two-component
Gaussian mixture fitted on that axis gives each entity a probability of
belonging to co-cluster B (the high-complexity side); an exact 1-D 2-means
split is kept as the hard baseline.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import expit, logsumexp

from errors import ContractViolation, DegenerateFitError

logger = logging.getLogger(__name__)

VAR_FLOOR = 1e-12
NEAR_EMPTY_WEIGHT = 0.02
SSE_TIE = 1e-12
HISTOGRAM_EDGES = np.linspace(0.0, 1.0, 21)
COUNTRY, PRODUCT = "country", "product"
PLURAL = {COUNTRY: "countries", PRODUCT: "products"}


@dataclass(frozen=True, eq=False)
class JointEmbedding:
    values: np.ndarray
    kinds: Tuple[str, ...]
    codes: Tuple[str, ...]

    def __len__(self):
        return len(self.values)

    @property
    def n_countries(self) -> int:
        return sum(1 for k in self.kinds if k == COUNTRY)

    @property
    def country_values(self) -> np.ndarray:
        return self.values[: self.n_countries]

    @property
    def product_values(self) -> np.ndarray:
        return self.values[self.n_countries:]


def embed(M, scores) -> JointEmbedding:
    """Concatenate eci_raw and sigma2 * pci_raw with provenance tags."""
    if scores.orientation.rule == "unoriented":
        raise ContractViolation("embed needs oriented scores")
    if tuple(M.countries) != tuple(scores.countries) or tuple(M.products) != tuple(scores.products):
        raise ContractViolation("scores were computed for a different specialization matrix")
    m, n = M.shape
    if len(scores.eci_raw) != m or len(scores.pci_raw) != n:
        raise ContractViolation(
            f"score lengths ({len(scores.eci_raw)}, {len(scores.pci_raw)}) do not match M {M.shape}"
        )
    values = np.concatenate([scores.eci_raw, scores.sigma2 * scores.pci_raw])
    return JointEmbedding(
        values,
        (COUNTRY,) * m + (PRODUCT,) * n,
        tuple(M.countries) + tuple(M.products),
    )


@dataclass(frozen=True, eq=False)
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood: List[float]
    converged: bool
    iterations: int

    def log_joint(self, z) -> np.ndarray:
        z = _values(z)[:, None]
        return (
            np.log(self.weights)
            - 0.5 * np.log(2.0 * np.pi * self.variances)
            - (z - self.means) ** 2 / (2.0 * self.variances)
        )

    def responsibilities(self, z) -> np.ndarray:
        log_p = self.log_joint(z)
        return np.exp(log_p - logsumexp(log_p, axis=1, keepdims=True))

    def prob_high(self, z) -> np.ndarray:
        """Posterior of the higher-mean component; equal log-joints give exactly 0.5."""
        log_p = self.log_joint(z)
        b = self.high_component
        return expit(log_p[:, b] - log_p[:, 1 - b])

    def score(self, z) -> float:
        return float(logsumexp(self.log_joint(z), axis=1).sum())

    def bic(self, z) -> float:
        # 2 means, 2 variances, 1 free weight
        return 5 * np.log(len(_values(z))) - 2.0 * self.score(z)

    @property
    def high_component(self) -> int:
        """Index of the component labelled B (higher mean)."""
        return int(np.argmax(self.means))

    def to_dict(self):
        return {
            "weights": self.weights,
            "means": self.means,
            "variances": self.variances,
            "log_likelihood": self.log_likelihood,
            "converged": self.converged,
            "iterations": self.iterations,
            "b_component": self.high_component,
        }


def _values(z) -> np.ndarray:
    return np.asarray(getattr(z, "values", z), dtype=float)


def _m_step(z, resp, var_floor):
    nk = resp.sum(axis=0)
    for k in range(resp.shape[1]):
        if nk[k] <= 0:
            raise DegenerateFitError(k, 0.0, 0.0)
        if nk[k] < 2.0:
            center = float(resp[:, k] @ z / nk[k])
            spread = float(np.sum(resp[:, k] * (z - center) ** 2) / nk[k])
            if spread < var_floor:
                raise DegenerateFitError(k, spread, float(nk[k] / len(z)))
    weights = nk / len(z)
    means = (resp.T @ z) / nk
    variances = np.einsum("ik,ik->k", resp, (z[:, None] - means) ** 2) / nk
    return weights, means, np.maximum(variances, var_floor)


def _run_em(z, resp, tol, max_iter, var_floor) -> GmmModel:
    trace = []
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        weights, means, variances = _m_step(z, resp, var_floor)
        model = GmmModel(weights, means, variances, trace, False, iteration)
        log_p = model.log_joint(z)
        norm = logsumexp(log_p, axis=1, keepdims=True)
        resp = np.exp(log_p - norm)
        trace.append(float(norm.sum()))
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < tol:
            converged = True
            break
    return GmmModel(weights, means, variances, trace, converged, iteration)


def fit_gmm_1d(z, seed: int = 0, tol: float = 1e-8, max_iter: int = 500, restarts: int = 1,
               var_floor: float = VAR_FLOOR) -> GmmModel:
    """Two-component univariate GMM by EM.

    The first start is deterministic: entities below the median (stable rank
    order) start fully in component 0, the rest in component 1. Further
    restarts draw random responsibilities from `seed`; the best final
    log-likelihood wins, earlier starts winning ties.
    """
    z = _values(z)
    if len(z) < 4:
        raise ContractViolation(f"fit_gmm_1d needs at least 4 observations, got {len(z)}")
    if tol <= 0:
        raise ValueError("tol must be positive")

    order = np.argsort(z, kind="stable")
    resp = np.zeros((len(z), 2))
    resp[order[: len(z) // 2], 0] = 1.0
    resp[order[len(z) // 2:], 1] = 1.0

    best = _run_em(z, resp, tol, max_iter, var_floor)
    rng = np.random.default_rng(seed)
    for _ in range(1, max(1, restarts)):
        candidate = _run_em(z, rng.dirichlet(np.ones(2), size=len(z)), tol, max_iter, var_floor)
        if candidate.log_likelihood[-1] > best.log_likelihood[-1]:
            best = candidate

    if not best.converged:
        logger.warning(
            "GMM did not converge in %d iterations (last change %.3e)",
            max_iter,
            abs(best.log_likelihood[-1] - best.log_likelihood[-2]) if len(best.log_likelihood) > 1 else np.nan,
        )
    logger.debug("GMM fit: means %s, weights %s", best.means, best.weights)
    return best


@dataclass(frozen=True, eq=False)
class CoClusterAssignment:
    codes: Tuple[str, ...]
    kinds: Tuple[str, ...]
    prob_b: np.ndarray
    labels: np.ndarray
    boundary: np.ndarray
    alignment: dict = field(default_factory=dict)
    flags: List[str] = field(default_factory=list)
    method: str = "gmm"

    @property
    def _is_country(self) -> np.ndarray:
        return np.array([k == COUNTRY for k in self.kinds])

    @property
    def country_codes(self) -> Tuple[str, ...]:
        return tuple(c for c, k in zip(self.codes, self.kinds) if k == COUNTRY)

    @property
    def product_codes(self) -> Tuple[str, ...]:
        return tuple(c for c, k in zip(self.codes, self.kinds) if k == PRODUCT)

    @property
    def country_prob_b(self) -> np.ndarray:
        return self.prob_b[self._is_country]

    @property
    def product_prob_b(self) -> np.ndarray:
        return self.prob_b[~self._is_country]

    @property
    def country_labels(self) -> np.ndarray:
        return self.labels[self._is_country]

    @property
    def product_labels(self) -> np.ndarray:
        return self.labels[~self._is_country]

    def label_of(self, code: str, kind: str = PRODUCT) -> str:
        for i, (c, k) in enumerate(zip(self.codes, self.kinds)):
            if c == code and k == kind:
                return str(self.labels[i])
        raise KeyError(f"{kind} {code} not in assignment")

    def prob_b_of(self, code: str, kind: str = PRODUCT) -> float:
        for i, (c, k) in enumerate(zip(self.codes, self.kinds)):
            if c == code and k == kind:
                return float(self.prob_b[i])
        raise KeyError(f"{kind} {code} not in assignment")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "code": list(self.codes),
                "kind": list(self.kinds),
                "prob_B": self.prob_b,
                "label": list(self.labels),
            }
        )

    def agreement(self, labels: Sequence[str]) -> float:
        """Fraction of entities whose label matches `labels` (names not swapped)."""
        return float(np.mean(self.labels == np.asarray(labels)))


def _labels_from_prob(prob_b):
    labels = np.where(prob_b > 0.5, "B", "A")
    boundary = prob_b == 0.5
    return labels, boundary


def single_gaussian_bic(z, var_floor: float = VAR_FLOOR) -> float:
    """BIC of one Gaussian fitted by maximum likelihood."""
    values = _values(z)
    variance = max(float(np.var(values)), var_floor)
    log_likelihood = -0.5 * len(values) * (np.log(2.0 * np.pi * variance) + 1.0)
    return 2 * np.log(len(values)) - 2.0 * log_likelihood


def _cluster_flags(labels, boundary, weights=None, one_component_preferred=False) -> List[str]:
    flags = []
    if len(set(labels.tolist())) < 2:
        flags.append("empty_cluster")
    if boundary.any():
        flags.append(f"boundary_ties:{int(boundary.sum())}")
    # a second component the data does not support is effectively empty, whatever its weight
    light = weights is not None and float(np.min(weights)) < NEAR_EMPTY_WEIGHT
    if light or one_component_preferred:
        flags.append("near_empty_component")
    if one_component_preferred:
        flags.append("single_component")
    return flags


def assign(model: GmmModel, z: JointEmbedding, scores=None) -> CoClusterAssignment:
    """Soft and hard co-cluster membership; B is the component with the higher mean."""
    b = model.high_component
    prob_b = model.prob_high(z)
    labels, boundary = _labels_from_prob(prob_b)
    bic_two, bic_one = model.bic(z), single_gaussian_bic(z)
    flags = _cluster_flags(labels, boundary, model.weights, bic_one <= bic_two)
    for flag in flags:
        logger.warning("Co-cluster assignment flag: %s", flag)
    alignment = {
        "rule": "higher_mean_is_B",
        "b_component": b,
        "b_mean": float(model.means[b]),
        "bic_two_components": float(bic_two),
        "bic_one_component": float(bic_one),
        "orientation": scores.orientation.rule if scores is not None else None,
    }
    return CoClusterAssignment(
        tuple(z.codes), tuple(z.kinds), prob_b, labels, boundary, alignment, flags, "gmm"
    )


def kmeans_baseline(z: JointEmbedding, seed: int = 0) -> CoClusterAssignment:
    """Exact 1-D 2-means by scanning every sorted split.

    Splits are only placed between distinct values. Equal SSE (within 1e-12)
    goes to the split with the larger low side. `seed` is unused: the scan is
    exhaustive.
    """
    values = _values(z)
    if len(values) < 2:
        raise ContractViolation("kmeans_baseline needs at least 2 observations")
    order = np.argsort(values, kind="stable")
    x = values[order]
    s1 = np.concatenate([[0.0], np.cumsum(x)])
    s2 = np.concatenate([[0.0], np.cumsum(x * x)])
    total_n = len(x)

    best_k, best_sse = None, np.inf
    for k in range(1, total_n):
        if x[k - 1] == x[k]:
            continue
        left = s2[k] - s1[k] ** 2 / k
        right = (s2[total_n] - s2[k]) - (s1[total_n] - s1[k]) ** 2 / (total_n - k)
        sse = left + right
        if sse < best_sse - SSE_TIE:
            best_k, best_sse = k, sse
        elif abs(sse - best_sse) <= SSE_TIE:
            best_k = k

    prob_b = np.zeros(total_n)
    if best_k is not None:
        prob_b[order[best_k:]] = 1.0
    labels, boundary = _labels_from_prob(prob_b)
    flags = _cluster_flags(labels, boundary)
    alignment = {"rule": "upper_split_is_B", "split_index": best_k, "sse": best_sse if best_k else None}
    return CoClusterAssignment(
        tuple(z.codes), tuple(z.kinds), prob_b, labels, boundary, alignment, flags, "kmeans"
    )


def joint_membership(assignment: CoClusterAssignment) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """P(c in B) P(p in B) and the same-cluster probability, assuming independence."""
    pc = assignment.country_prob_b
    pp = assignment.product_prob_b
    joint = np.outer(pc, pp)
    same = joint + np.outer(1.0 - pc, 1.0 - pp)
    index, columns = list(assignment.country_codes), list(assignment.product_codes)
    return (
        pd.DataFrame(joint, index=index, columns=columns),
        pd.DataFrame(same, index=index, columns=columns),
    )


def composition(assignment: CoClusterAssignment, top: int = 10) -> dict:
    """Member counts per co-cluster and its most firmly assigned countries and products."""
    own = np.where(assignment.labels == "B", assignment.prob_b, 1.0 - assignment.prob_b)
    report = {}
    for label in ("A", "B"):
        entry = {}
        for kind in (COUNTRY, PRODUCT):
            members = [
                (assignment.codes[i], float(own[i]))
                for i in range(len(assignment.codes))
                if assignment.labels[i] == label and assignment.kinds[i] == kind
            ]
            members.sort(key=lambda item: (-item[1], item[0]))
            entry[f"n_{PLURAL[kind]}"] = len(members)
            entry[f"top_{PLURAL[kind]}"] = [{"code": c, "probability": p} for c, p in members[:top]]
        report[label] = entry
    return report


def probability_histogram(assignment: CoClusterAssignment, edges: Optional[np.ndarray] = None) -> pd.DataFrame:
    """Counts of prob_B per kind over fixed bins; 0.5 is always a bin edge."""
    edges = HISTOGRAM_EDGES if edges is None else edges
    rows = []
    kinds = np.asarray(assignment.kinds)
    for kind in (COUNTRY, PRODUCT):
        counts, _ = np.histogram(assignment.prob_b[kinds == kind], bins=edges)
        for lo, hi, count in zip(edges[:-1], edges[1:], counts):
            rows.append({"kind": kind, "bin_left": lo, "bin_right": hi, "count": int(count)})
    return pd.DataFrame(rows)
