"""Reference instances shared by the tests, the bench command and the bundled data.

F1 is the smallest connected, non-degenerate specialization matrix; F2 is a
planted two-block checkerboard with known co-clusters.
"""

from dataclasses import dataclass

import numpy as np

from specmatrix import SpecializationMatrix, default_codes, prune

F1_DENSE = np.array([[1, 1, 0], [0, 1, 1]])


def fixture_f1() -> SpecializationMatrix:
    return SpecializationMatrix.from_dense(F1_DENSE)


@dataclass(frozen=True, eq=False)
class PlantedInstance:
    matrix: SpecializationMatrix
    country_labels: np.ndarray
    product_labels: np.ndarray

    @property
    def labels(self) -> np.ndarray:
        """Planted labels in embedding order (countries, then products)."""
        return np.concatenate([self.country_labels, self.product_labels])

    def recovery(self, labels) -> float:
        """Share of entities matching the planted partition, up to swapping A and B."""
        agree = float(np.mean(np.asarray(labels) == self.labels))
        return max(agree, 1.0 - agree)


def planted_instance(m: int, n: int, m_first: int, n_first: int, p_in: float = 0.8,
                     p_out: float = 0.1, seed: int = 0) -> PlantedInstance:
    """Two dense diagonal blocks (first m_first x n_first, then the rest) over a sparse background.

    The second block is labelled B. The matrix is pruned to its largest component.
    """
    rng = np.random.default_rng(seed)
    in_first_row = np.arange(m) < m_first
    in_first_col = np.arange(n) < n_first
    same_block = in_first_row[:, None] == in_first_col[None, :]
    dense = rng.random((m, n)) < np.where(same_block, p_in, p_out)

    countries, products = default_codes("c", m), default_codes("p", n)
    planted_c = dict(zip(countries, np.where(in_first_row, "A", "B")))
    planted_p = dict(zip(products, np.where(in_first_col, "A", "B")))
    M, _ = prune(SpecializationMatrix.from_dense(dense, countries, products))
    return PlantedInstance(
        M,
        np.array([planted_c[c] for c in M.countries]),
        np.array([planted_p[p] for p in M.products]),
    )


def fixture_f2(seed: int = 7) -> PlantedInstance:
    """40 x 60 checkerboard: countries 1-15 with products 1-20, countries 16-40 with products 21-60."""
    return planted_instance(40, 60, 15, 20, 0.8, 0.1, seed)


def random_instance(m: int, n: int, density: float, seed: int = 0) -> SpecializationMatrix:
    """Bernoulli(density) matrix pruned to its largest connected component."""
    rng = np.random.default_rng(seed)
    M, _ = prune(SpecializationMatrix.from_dense(rng.random((m, n)) < density))
    return M
