"""Pipeline stages behind the command-line interface.

Each stage reads the artifacts of the previous one from `config.input`, writes
its own artifacts and `effective_config.json` into `config.out`, and returns
its main result so callers and tests can inspect it.
"""

import logging
from pathlib import Path

import numpy as np
import pandas as pd

import report_io
from bench import run_benchmark
from cocluster import (
    assign,
    composition,
    embed,
    fit_gmm_1d,
    joint_membership,
    kmeans_baseline,
    probability_histogram,
)
from complexity import compute_scores, cross_route_report, eci_pci_eigen, eci_pci_svd, method_of_reflections
from errors import ContractViolation, InputError
from interpretation import average_pci_profile, build_incidence, verify_identities
from simulate import (
    greedy_maximize,
    prepare_baseline,
    records_frame,
    select_product_sets,
    summarize_sweep,
    sweep_single_additions,
)
from specmatrix import build_yearly_matrices, read_matrix_artifacts, read_trade_flows, write_matrix_artifacts

logger = logging.getLogger(__name__)

CROSS_ROUTE_LIMIT = 2000
STORED_SCORE_TOL = 1e-6


def banner(title):
    print(f"\n{'=' * 70}")
    print(title)
    print(f"{'=' * 70}")


class ComplexityAnalyzer:
    def __init__(self, config):
        self.config = config
        self.out = Path(config.out)

    # ------------------------------------------------------------------ helpers

    def _input_dir(self) -> Path:
        if not self.config.input:
            raise InputError("--input is required for this command")
        path = Path(self.config.input)
        if not path.exists():
            raise FileNotFoundError(f"Input not found: {path}")
        return path

    def _write_config(self):
        return report_io.write_json(self.out / "effective_config.json", self.config.to_dict())

    def _solve(self, M, route=None):
        cfg = self.config
        return compute_scores(M, route or "svd", tol=cfg.tol, max_iter=cfg.max_iter, seed=cfg.seed)

    def load_matrix(self):
        M, report, sidecar = read_matrix_artifacts(self._input_dir())
        print(f"  ✓ Loaded specialization matrix {M.shape[0]} countries x {M.shape[1]} products ({M.nnz} entries)")
        return M, report, sidecar

    def load_scores(self, M):
        """Recompute scores at full precision and check them against the stored CSVs."""
        directory = self._input_dir()
        meta_path, eci_path = directory / "scores.json", directory / "eci.csv"
        for path in (meta_path, eci_path):
            if not path.exists():
                raise FileNotFoundError(f"Missing scores artifact: {path} (run the scores command first)")
        meta = report_io.read_json(meta_path)
        scores = self._solve(M, meta.get("route", "svd"))
        stored = pd.read_csv(eci_path, dtype={"code": str}, keep_default_na=False)
        if list(stored["code"]) != list(scores.countries):
            raise ContractViolation("stored ECI codes do not match the specialization matrix")
        gap = np.abs(stored["eci_raw"].to_numpy(dtype=float) - scores.eci_raw)
        if np.any(gap > STORED_SCORE_TOL * (1.0 + np.abs(scores.eci_raw))):
            raise ContractViolation(
                f"stored ECI differs from recomputed ECI by {gap.max():.3e}; rerun the scores command"
            )
        return scores

    # ------------------------------------------------------------------- stages

    def ingest(self):
        cfg = self.config
        banner("PHASE 1: Ingest trade flows")
        table = read_trade_flows(self._input_dir())
        years = cfg.years or table.years
        print(f"  ✓ Parsed {len(table)} rows, {len(table.countries)} countries, "
              f"{len(table.products)} products, years {years}")
        matrices = build_yearly_matrices(table, years, cfg.rca_threshold, cfg.prune_policy, cfg.threads)
        written = []
        for idx, year in enumerate(years, 1):
            M, report = matrices[year]
            directory = self.out if len(years) == 1 else self.out / f"year={year}"
            write_matrix_artifacts(
                M, report, directory, {"year": year, "rca_threshold": cfg.rca_threshold}
            )
            print(f"[{idx}/{len(years)}] {year}: {M.shape[0]} x {M.shape[1]}, "
                  f"dropped {len(report.dropped_countries)} countries / {len(report.dropped_products)} products")
            written.append(directory)
        self._write_config()
        return written

    def scores(self):
        cfg = self.config
        banner(f"PHASE 2: ECI / PCI ({cfg.route} route)")
        M, _, _ = self.load_matrix()
        scores = self._solve(M, "eigen" if cfg.route == "eigen" else "svd")
        payload = scores.to_dict()
        payload["requested_route"] = cfg.route

        if cfg.route == "mor":
            trace = method_of_reflections(M, cfg.mor_iters)
            report_io.write_frame(self.out / "reflections_countries.csv", trace.country_frame())
            report_io.write_frame(self.out / "reflections_products.csv", trace.product_frame())
            payload["reflections"] = trace.rank_agreement(scores)
            print(f"  ✓ Method of Reflections: Spearman vs spectral ECI "
                  f"{payload['reflections']['spearman_eci']:.4f} after {cfg.mor_iters} iterations")

        if max(M.shape) <= CROSS_ROUTE_LIMIT:
            other = eci_pci_eigen(M) if scores.route == "svd" else eci_pci_svd(M, cfg.tol, cfg.max_iter, seed=cfg.seed)
            svd_scores, eigen_scores = (scores, other) if scores.route == "svd" else (other, scores)
            payload["cross_route"] = cross_route_report(svd_scores, eigen_scores)
        else:
            payload["cross_route"] = None

        report_io.write_frame(self.out / "eci.csv", scores.eci_frame())
        report_io.write_frame(self.out / "pci.csv", scores.pci_frame())
        report_io.write_json(self.out / "scores.json", payload)
        print(f"  ✓ sigma2 = {scores.sigma2:.6f}, lambda2 = {scores.lambda2:.6f}, "
              f"orientation: {scores.orientation.rule}")
        if cfg.verify:
            self._write_verification(M, scores)
        self._write_config()
        return scores

    def _write_verification(self, M, scores):
        checks = verify_identities(M, scores, seed=self.config.seed)
        for check in checks:
            mark = "✓" if check.passed else "✗"
            print(f"  {mark} {check.name}: residual {check.residual:.3e} (tolerance {check.tolerance:.0e})")
        report_io.write_json(
            self.out / "verification_report.json",
            {"checks": checks, "all_passed": all(c.passed for c in checks)},
        )
        return checks

    def verify(self):
        banner("PHASE 3: Verify identities")
        M, _, _ = self.load_matrix()
        scores = self._solve(M, "svd")
        checks = self._write_verification(M, scores)
        self._write_config()
        return all(c.passed for c in checks)

    def cocluster(self):
        cfg = self.config
        banner("PHASE 4: Co-clustering")
        M, _, _ = self.load_matrix()
        scores = self.load_scores(M)
        z = embed(M, scores)
        model = fit_gmm_1d(z, seed=cfg.seed, tol=cfg.gmm_tol, max_iter=cfg.gmm_max_iter, restarts=cfg.gmm_restarts)
        assignment = assign(model, z, scores)
        hard = kmeans_baseline(z, seed=cfg.seed)
        agreement = assignment.agreement(hard.labels)
        print(f"  ✓ GMM means {model.means[0]:.4g} / {model.means[1]:.4g}, "
              f"converged={model.converged} in {model.iterations} iterations")
        print(f"  ✓ Agreement with 2-means baseline: {agreement:.1%}")

        joint, same = joint_membership(assignment)
        report_io.write_frame(self.out / "assignment.csv", assignment.to_frame())
        report_io.write_json(
            self.out / "gmm.json",
            {"model": model, "flags": assignment.flags, "alignment": assignment.alignment,
             "kmeans_agreement": agreement},
        )
        report_io.write_frame(self.out / "joint_membership.csv", joint, index=True)
        report_io.write_frame(self.out / "same_cluster.csv", same, index=True)
        report_io.write_json(self.out / "composition.json", composition(assignment))
        self._write_plot_data(M, scores, assignment)
        self._write_config()
        return assignment

    def _write_plot_data(self, M, scores, assignment):
        row_pos = np.empty(M.shape[0], dtype=int)
        row_pos[np.argsort(scores.eci_raw, kind="stable")] = np.arange(M.shape[0])
        col_pos = np.empty(M.shape[1], dtype=int)
        col_pos[np.argsort(scores.pci_raw, kind="stable")] = np.arange(M.shape[1])

        labels_c = dict(zip(assignment.country_codes, assignment.country_labels))
        labels_p = dict(zip(assignment.product_codes, assignment.product_labels))
        incidence = build_incidence(M)
        rows = []
        for country, product in incidence.edges:
            i, j = M.country_index(country), M.product_index(product)
            rows.append(
                {
                    "country": country,
                    "product": product,
                    "row_pos": row_pos[i],
                    "col_pos": col_pos[j],
                    "eci_raw": scores.eci_raw[i],
                    "pci_raw": scores.pci_raw[j],
                    "same_cluster": labels_c[country] == labels_p[product],
                }
            )
        report_io.write_frame(self.out / "plot_edges.csv", pd.DataFrame(rows))
        report_io.write_frame(self.out / "plot_histogram.csv", probability_histogram(assignment))

        country_means, product_means = average_pci_profile(M, scores)
        report_io.write_frame(
            self.out / "plot_country_profile.csv",
            pd.DataFrame({"code": list(M.countries), "eci_raw": scores.eci_raw, "mean_pci": country_means}),
        )
        report_io.write_frame(
            self.out / "plot_product_profile.csv",
            pd.DataFrame({"code": list(M.products), "pci_raw": scores.pci_raw, "mean_eci": product_means}),
        )

    def _baseline(self, M):
        cfg = self.config
        self.load_scores(M)
        return prepare_baseline(
            M, tol=cfg.tol, max_iter=cfg.max_iter, seed=cfg.seed,
            gmm_tol=cfg.gmm_tol, gmm_max_iter=cfg.gmm_max_iter, gmm_restarts=cfg.gmm_restarts,
        )

    def _read_candidates(self, M, product_sets):
        if self.config.candidates:
            path = Path(self.config.candidates)
            if not path.exists():
                raise FileNotFoundError(f"Candidate file not found: {path}")
            frame = pd.read_csv(path, dtype=str, keep_default_na=False)
            if list(frame.columns) != ["country", "product"]:
                raise InputError(f"Candidate file {path} must have header country,product")
            return list(zip(frame["country"], frame["product"]))
        chosen = set(product_sets.a_core) | set(product_sets.b_core) | set(product_sets.borderline)
        dense = M.to_dense()
        return [
            (country, product)
            for i, country in enumerate(M.countries)
            for j, product in enumerate(M.products)
            if product in chosen and dense[i, j] == 0
        ]

    def simulate_sweep(self):
        cfg = self.config
        banner("PHASE 5: Single-specialization sweep")
        M, _, _ = self.load_matrix()
        baseline = self._baseline(M)
        product_sets = select_product_sets(baseline.assignment, cfg.high_threshold, cfg.borderline_threshold)
        candidates = self._read_candidates(M, product_sets)
        print(f"  ✓ {len(product_sets.a_core)} A-core, {len(product_sets.b_core)} B-core, "
              f"{len(product_sets.borderline)} borderline products; {len(candidates)} candidates")
        records = sweep_single_additions(M, candidates, baseline, audit=cfg.audit, threads=cfg.threads)
        report_io.write_frame(self.out / "sweep.csv", records_frame(records))
        report_io.write_json(
            self.out / "sweep_summary.json",
            {"product_sets": product_sets, "summary": summarize_sweep(records, product_sets)},
        )
        self._write_config()
        return records

    def simulate_greedy(self):
        cfg = self.config
        banner("PHASE 5: Greedy ECI maximization")
        if not cfg.target:
            raise InputError("--target is required for simulate greedy")
        M, _, _ = self.load_matrix()
        M.country_index(cfg.target)
        baseline = self._baseline(M)
        trajectory = greedy_maximize(
            M, cfg.target, cfg.greedy_max_iter, baseline, audit=cfg.audit, threads=cfg.threads
        )
        print(f"  ✓ {len(trajectory.steps)} additions, stopped: {trajectory.termination}, "
              f"top reached at: {trajectory.top_reached_at}")
        report_io.write_json(self.out / "greedy.json", trajectory)
        report_io.write_frame(self.out / "greedy_ranking.csv", trajectory.ranking_frame())
        self._write_config()
        return trajectory

    def bench(self):
        cfg = self.config
        banner("Benchmark: truncated SVD vs dense eigen")
        frame = run_benchmark([tuple(s) for s in cfg.bench_sizes], cfg.bench_density, cfg.seed, cfg.tol, cfg.max_iter)
        report_io.write_frame(self.out / "bench.csv", frame)
        self._write_config()
        return frame
