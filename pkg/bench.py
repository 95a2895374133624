"""Timing comparison of the truncated-SVD route against the dense eigen route."""

import logging
import time

import numpy as np
import pandas as pd

from complexity import eci_pci_eigen, eci_pci_svd
from fixtures import planted_instance

logger = logging.getLogger(__name__)

BENCH_COLUMNS = ["m", "n", "density", "route", "seconds", "residual", "max_abs_eci_diff"]


def _averaging_residual(M, scores) -> float:
    entries = M.entries.astype(float)
    return float(np.max(np.abs((entries @ scores.pci_raw) / M.diversity - scores.eci_raw)))


def bench_instance(m: int, n: int, density: float, seed: int = 0):
    """Two-block planted instance with overall fill close to `density`."""
    p_out = density / 4.0
    p_in = min(1.0, 2.0 * density - p_out)
    return planted_instance(m, n, m // 3, n // 3, p_in, p_out, seed).matrix


def run_benchmark(sizes, density: float = 0.3, seed: int = 0, tol: float = 1e-10,
                  max_iter: int = 10_000) -> pd.DataFrame:
    rows = []
    total = len(sizes)
    for idx, (m, n) in enumerate(sizes, 1):
        M = bench_instance(m, n, density, seed)
        fill = M.nnz / float(M.shape[0] * M.shape[1])
        logger.info("[%d/%d] Benchmarking %dx%d (fill %.3f)", idx, total, M.shape[0], M.shape[1], fill)

        start = time.perf_counter()
        svd_scores = eci_pci_svd(M, tol=tol, max_iter=max_iter, seed=seed)
        svd_seconds = time.perf_counter() - start

        start = time.perf_counter()
        eigen_scores = eci_pci_eigen(M)
        eigen_seconds = time.perf_counter() - start

        diff = float(np.max(np.abs(svd_scores.eci_raw - eigen_scores.eci_raw)))
        for route, seconds, scores in (
            ("svd", svd_seconds, svd_scores),
            ("eigen", eigen_seconds, eigen_scores),
        ):
            rows.append(
                {
                    "m": M.shape[0],
                    "n": M.shape[1],
                    "density": fill,
                    "route": route,
                    "seconds": seconds,
                    "residual": _averaging_residual(M, scores),
                    "max_abs_eci_diff": diff,
                }
            )
    return pd.DataFrame(rows, columns=BENCH_COLUMNS)
