"""Counterfactual specialization experiments.

A sweep adds one absent (country, product) entry at a time and recomputes
scores and co-cluster membership against a fixed baseline. The greedy run
keeps adding to one target country the product that raises its ECI most,
until no addition helps.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from cocluster import assign, embed, fit_gmm_1d
from complexity import Orientation, eci_pci_svd, orient_sign, pearson
from errors import ContractViolation, ConvergenceError, DegeneracyError, PreconditionError

logger = logging.getLogger(__name__)

ALIGN_TIE = 1e-12
# a counterfactual that makes the matrix rank-one or stalls the solver is recorded, not fatal
SOLVER_FAILURES = {DegeneracyError: "degenerate", ConvergenceError: "not_converged"}


@dataclass(frozen=True, eq=False)
class Baseline:
    matrix: object
    scores: object
    embedding: object
    model: object
    assignment: object
    solver: dict = field(default_factory=dict)


def prepare_baseline(M, tol: float = 1e-10, max_iter: int = 10_000, seed: int = 0,
                     gmm_tol: float = 1e-8, gmm_max_iter: int = 500, gmm_restarts: int = 1) -> Baseline:
    scores = eci_pci_svd(M, tol=tol, max_iter=max_iter, seed=seed)
    z = embed(M, scores)
    model = fit_gmm_1d(z, seed=seed, tol=gmm_tol, max_iter=gmm_max_iter, restarts=gmm_restarts)
    solver = {
        "tol": tol,
        "max_iter": max_iter,
        "seed": seed,
        "gmm_tol": gmm_tol,
        "gmm_max_iter": gmm_max_iter,
        "gmm_restarts": gmm_restarts,
    }
    return Baseline(M, scores, z, model, assign(model, z, scores), solver)


@dataclass(frozen=True)
class ProductSets:
    a_core: Tuple[str, ...]
    b_core: Tuple[str, ...]
    borderline: Tuple[str, ...]

    def as_dict(self) -> Dict[str, Tuple[str, ...]]:
        return {"A-core": self.a_core, "B-core": self.b_core, "borderline": self.borderline}

    def to_dict(self):
        return {name: list(codes) for name, codes in self.as_dict().items()}


def select_product_sets(assignment, high_thr: float = 0.997, borderline_thr: float = 0.6) -> ProductSets:
    """A-core: P(A) > high_thr, B-core: P(B) > high_thr, borderline: max(P(A), P(B)) < borderline_thr."""
    if not 0.5 < borderline_thr < high_thr <= 1.0:
        raise PreconditionError(
            f"thresholds must satisfy 0.5 < borderline ({borderline_thr}) < high ({high_thr}) <= 1"
        )
    codes = assignment.product_codes
    prob_b = assignment.product_prob_b
    prob_a = 1.0 - prob_b
    sets = ProductSets(
        a_core=tuple(c for c, p in zip(codes, prob_a) if p > high_thr),
        b_core=tuple(c for c, p in zip(codes, prob_b) if p > high_thr),
        borderline=tuple(c for c, a, b in zip(codes, prob_a, prob_b) if max(a, b) < borderline_thr),
    )
    if not (sets.a_core or sets.b_core or sets.borderline):
        logger.warning(
            "All product sets are empty at thresholds high=%s, borderline=%s", high_thr, borderline_thr
        )
    return sets


def align_orientation(counterfactual, baseline):
    """Flip counterfactual (ECI, PCI) together when its ECI anti-correlates with the baseline's."""
    if tuple(counterfactual.countries) != tuple(baseline.countries):
        raise ContractViolation("counterfactual and baseline scores cover different countries")
    corr = pearson(counterfactual.eci_raw, baseline.eci_raw)
    if abs(corr) <= ALIGN_TIE:
        logger.warning("ECI uncorrelated with baseline; falling back to the diversity orientation rule")
        fallback = orient_sign(counterfactual)
        return replace(fallback, orientation=replace(fallback.orientation, fallback=True))
    flip = corr < 0
    aligned = counterfactual.flipped() if flip else counterfactual
    return replace(aligned, orientation=Orientation("baseline_correlation", flip, abs(corr), False))


def _warm_start(M, reference):
    # left singular vector of M_sym is D^(1/2) eci_raw
    return reference.eci_raw * np.sqrt(M.diversity.astype(float))


def evaluate_addition(baseline: Baseline, country: str, product: str, reference=None,
                      matrix=None, audit: bool = False, membership: bool = True):
    """Scores and membership with one extra entry; aligned to `reference` (default: baseline scores).

    With membership=False the co-cluster assignment is skipped and returned as None.
    """
    matrix = baseline.matrix if matrix is None else matrix
    reference = baseline.scores if reference is None else reference
    counterfactual = matrix.with_entry(country, product)
    solver = baseline.solver
    scores = eci_pci_svd(
        counterfactual,
        tol=solver.get("tol", 1e-10),
        max_iter=solver.get("max_iter", 10_000),
        warm_start=_warm_start(counterfactual, reference),
        seed=solver.get("seed", 0),
    )
    scores = align_orientation(scores, reference)
    if not membership:
        return counterfactual, scores, None
    z = embed(counterfactual, scores)
    if audit:
        model = fit_gmm_1d(
            z,
            seed=solver.get("seed", 0),
            tol=solver.get("gmm_tol", 1e-8),
            max_iter=solver.get("gmm_max_iter", 500),
            restarts=solver.get("gmm_restarts", 1),
        )
    else:
        model = baseline.model
    return counterfactual, scores, assign(model, z, scores)


def try_addition(baseline: Baseline, country: str, product: str, **kwargs):
    """(evaluate_addition result, "ok"), or (None, status) when the counterfactual has no usable scores."""
    try:
        return evaluate_addition(baseline, country, product, **kwargs), "ok"
    except tuple(SOLVER_FAILURES) as exc:
        status = next(name for kind, name in SOLVER_FAILURES.items() if isinstance(exc, kind))
        logger.warning("%s + %s skipped (%s): %s", country, product, status, exc)
        return None, status


@dataclass
class SimulationRecord:
    country: str
    product: str
    eci_before: float
    eci_after: float
    pci_before: float
    pci_after: float
    prob_b_country_before: float
    prob_b_country_after: float
    prob_b_product_before: float
    prob_b_product_after: float
    label_country_before: str
    label_country_after: str
    label_product_before: str
    label_product_after: str
    sigma2_before: float
    sigma2_after: float
    orientation_fallback: bool = False
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def delta_eci(self) -> float:
        return self.eci_after - self.eci_before

    @property
    def delta_pci(self) -> float:
        return self.pci_after - self.pci_before

    def to_dict(self):
        return dict(self.__dict__)


def _same_matrix(left, right) -> bool:
    if left is right:
        return True
    if left.countries != right.countries or left.products != right.products:
        return False
    return (left.entries != right.entries).nnz == 0


def _check_candidates(M, candidates) -> List[Tuple[str, str]]:
    checked = []
    for country, product in candidates:
        if M.has_entry(country, product):
            raise PreconditionError(
                f"({country}, {product}) is already a specialization; sweeps only add absent entries",
                pair=(country, product),
            )
        checked.append((country, product))
    return checked


def sweep_single_additions(M, candidates: Iterable[Tuple[str, str]], baseline: Optional[Baseline] = None,
                           audit: bool = False, threads: int = 1) -> List[SimulationRecord]:
    """One SimulationRecord per candidate, in candidate order."""
    candidates = _check_candidates(M, candidates)
    baseline = baseline or prepare_baseline(M)
    if not _same_matrix(baseline.matrix, M):
        raise ContractViolation("baseline was prepared for a different matrix")
    before = baseline.scores
    total = len(candidates)
    logger.info("Sweeping %d single additions (%s mode)", total, "audit" if audit else "frozen-GMM")

    def run(item):
        idx, (country, product) = item
        i, j = M.country_index(country), M.product_index(product)
        record = dict(
            country=country,
            product=product,
            eci_before=float(before.eci_raw[i]),
            pci_before=float(before.pci_raw[j]),
            prob_b_country_before=baseline.assignment.prob_b_of(country, "country"),
            prob_b_product_before=baseline.assignment.prob_b_of(product, "product"),
            label_country_before=baseline.assignment.label_of(country, "country"),
            label_product_before=baseline.assignment.label_of(product, "product"),
            sigma2_before=before.sigma2,
        )
        result, status = try_addition(baseline, country, product, audit=audit)
        if result is None:
            logger.info("[%d/%d] %s + %s: ✗ %s", idx, total, country, product, status)
            return SimulationRecord(
                eci_after=np.nan,
                pci_after=np.nan,
                prob_b_country_after=np.nan,
                prob_b_product_after=np.nan,
                label_country_after="",
                label_product_after="",
                sigma2_after=np.nan,
                status=status,
                **record,
            )
        _, after, membership = result
        logger.info("[%d/%d] %s + %s: ECI %+.4g", idx, total, country, product, after.eci_raw[i] - before.eci_raw[i])
        return SimulationRecord(
            eci_after=float(after.eci_raw[i]),
            pci_after=float(after.pci_raw[j]),
            prob_b_country_after=membership.prob_b_of(country, "country"),
            prob_b_product_after=membership.prob_b_of(product, "product"),
            label_country_after=membership.label_of(country, "country"),
            label_product_after=membership.label_of(product, "product"),
            sigma2_after=after.sigma2,
            orientation_fallback=after.orientation.fallback,
            **record,
        )

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return list(pool.map(run, enumerate(candidates, 1)))


def records_frame(records: Sequence[SimulationRecord]) -> pd.DataFrame:
    columns = list(SimulationRecord.__dataclass_fields__)
    return pd.DataFrame([r.to_dict() for r in records], columns=columns)


def summarize_sweep(records: Sequence[SimulationRecord], product_sets: ProductSets) -> dict:
    """Per product set: mean PCI change of the added product, mean ECI change of the adopter,
    mean starting PCI and the number of label transitions. Records without
    usable counterfactual scores are counted under "failed" only."""
    summary = {}
    for name, codes in product_sets.as_dict().items():
        chosen = [r for r in records if r.product in set(codes)]
        members = [r for r in chosen if r.ok]
        if not members:
            summary[name] = {"n": 0, "failed": len(chosen)} if chosen else {"n": 0}
            continue
        summary[name] = {
            "n": len(members),
            "failed": len(chosen) - len(members),
            "mean_pci_before": float(np.mean([r.pci_before for r in members])),
            "mean_delta_pci": float(np.mean([r.delta_pci for r in members])),
            "mean_delta_eci": float(np.mean([r.delta_eci for r in members])),
            "product_label_transitions": sum(r.label_product_before != r.label_product_after for r in members),
            "country_label_transitions": sum(r.label_country_before != r.label_country_after for r in members),
        }
    return summary


def ascending_rank(eci: np.ndarray, index: int) -> int:
    """Position of a country when ECI is sorted ascending (1 = lowest)."""
    return int(np.sum(eci < eci[index])) + 1


@dataclass
class GreedyStep:
    iteration: int
    product: str
    eci_raw: float
    rank: int
    prob_b_baseline: float
    ranking: Dict[str, int]

    def to_dict(self):
        return {
            "iteration": self.iteration,
            "product": self.product,
            "eci_raw": self.eci_raw,
            "rank": self.rank,
            "prob_b_baseline": self.prob_b_baseline,
        }


@dataclass
class GreedyTrajectory:
    target: str
    initial_eci: float
    initial_rank: int
    steps: List[GreedyStep] = field(default_factory=list)
    termination: str = ""
    top_reached_at: Optional[int] = None
    evaluations: List[dict] = field(default_factory=list)

    @property
    def products(self) -> List[str]:
        return [s.product for s in self.steps]

    @property
    def ranks(self) -> List[int]:
        return [s.rank for s in self.steps]

    def to_dict(self):
        return {
            "target": self.target,
            "initial_eci": self.initial_eci,
            "initial_rank": self.initial_rank,
            "termination": self.termination,
            "top_reached_at": self.top_reached_at,
            "steps": self.steps,
            "evaluations": self.evaluations,
        }

    def ranking_frame(self) -> pd.DataFrame:
        rows = [
            {"iteration": s.iteration, "code": code, "rank": rank}
            for s in self.steps
            for code, rank in sorted(s.ranking.items())
        ]
        return pd.DataFrame(rows, columns=["iteration", "code", "rank"])


def greedy_maximize(M, target: str, max_iter: int = 200, baseline: Optional[Baseline] = None,
                    audit: bool = False, threads: int = 1) -> GreedyTrajectory:
    """Repeatedly commit the absent product that maximizes the target's aligned eci_raw.

    Ties go to the lowest product code. Candidates whose counterfactual is
    degenerate or does not converge count as non-improving. Stops when the target exports everything
    ("saturated"), when no candidate strictly increases its ECI ("no_improvement"),
    or after max_iter commits ("max_iter").
    """
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    t = M.country_index(target)
    baseline = baseline or prepare_baseline(M)
    m = M.shape[0]

    current_matrix, current_scores = M, baseline.scores
    trajectory = GreedyTrajectory(
        target=target,
        initial_eci=float(current_scores.eci_raw[t]),
        initial_rank=ascending_rank(current_scores.eci_raw, t),
    )
    if trajectory.initial_rank == m:
        trajectory.top_reached_at = 0

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for iteration in range(1, max_iter + 1):
            row = current_matrix.entries.getrow(t).toarray().ravel()
            absent = [M.products[j] for j in np.flatnonzero(row == 0)]
            if not absent:
                trajectory.termination = "saturated"
                break

            def run(product, matrix=current_matrix, reference=current_scores):
                return try_addition(
                    baseline, target, product, reference=reference, matrix=matrix,
                    audit=audit, membership=audit,
                )

            outcomes = list(pool.map(run, absent))
            # a candidate without usable scores never improves the target
            values = np.array([
                result[1].eci_raw[t] if result is not None else -np.inf for result, _ in outcomes
            ])
            if audit:
                trajectory.evaluations.extend(
                    {
                        "iteration": iteration,
                        "product": p,
                        "status": status,
                        "eci_raw": float(v) if result is not None else None,
                        "prob_b_product": result[2].prob_b_of(p, "product") if result is not None else None,
                    }
                    for p, v, (result, status) in zip(absent, values, outcomes)
                )
            best = int(np.argmax(values))
            if values[best] <= current_scores.eci_raw[t]:
                trajectory.termination = "no_improvement"
                break

            current_matrix, current_scores, _ = outcomes[best][0]
            eci = current_scores.eci_raw
            rank = ascending_rank(eci, t)
            trajectory.steps.append(
                GreedyStep(
                    iteration=iteration,
                    product=absent[best],
                    eci_raw=float(eci[t]),
                    rank=rank,
                    prob_b_baseline=baseline.assignment.prob_b_of(absent[best], "product"),
                    ranking={code: ascending_rank(eci, i) for i, code in enumerate(M.countries)},
                )
            )
            if rank == m and trajectory.top_reached_at is None:
                trajectory.top_reached_at = iteration
            logger.info("[%d/%d] %s adds %s: ECI %.6g, rank %d/%d", iteration, max_iter, target, absent[best], eci[t], rank, m)
        else:
            trajectory.termination = "max_iter"
    return trajectory
