"""Trade-flow ingestion, revealed comparative advantage and the binary
specialization matrix M (countries x products) the rest of the package works on.
"""

from __future__ import annotations

import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from errors import (
    ConnectivityError,
    DuplicateKeyError,
    EmptyYearError,
    InputError,
    InvalidValueError,
    TradeFormatError,
    UnusableInstanceError,
)
from report_io import read_json, write_frame, write_json

logger = logging.getLogger(__name__)

TRADE_COLUMNS = ("year", "country", "product", "value")
PRUNE_POLICIES = ("component", "strict")
MATRIX_CSV = "specialization_matrix.csv"
MATRIX_JSON = "specialization_matrix.json"


@dataclass(frozen=True)
class TradeFlowTable:
    """Long-format export records, one row per (year, country, product)."""

    frame: pd.DataFrame

    def __len__(self):
        return len(self.frame)

    @property
    def years(self) -> List[int]:
        return sorted(int(y) for y in self.frame["year"].unique())

    @property
    def countries(self) -> List[str]:
        return sorted(self.frame["country"].unique())

    @property
    def products(self) -> List[str]:
        return sorted(self.frame["product"].unique())

    def for_year(self, year: int) -> pd.DataFrame:
        return self.frame[self.frame["year"] == year]


def parse_trade_flows(stream, delimiter: str = ",") -> TradeFlowTable:
    """Parse a UTF-8 CSV byte stream with header year,country,product,value.

    Row indices in diagnostics count data rows from 1 (the header is not a row).
    """
    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
    try:
        raw = pd.read_csv(
            stream, sep=delimiter, dtype=str, keep_default_na=False, encoding="utf-8"
        )
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise TradeFormatError(f"Unreadable trade CSV: {exc}") from exc

    raw.columns = [str(c).strip().lower() for c in raw.columns]
    if sorted(raw.columns) != sorted(TRADE_COLUMNS):
        raise TradeFormatError(
            f"Expected header {','.join(TRADE_COLUMNS)}, got {','.join(raw.columns)}"
        )
    raw = raw[list(TRADE_COLUMNS)].apply(lambda col: col.str.strip())

    years = pd.to_numeric(raw["year"], errors="coerce")
    values = pd.to_numeric(raw["value"], errors="coerce")

    problems = []
    for i in range(len(raw)):
        row_no = i + 1
        year, value = years.iat[i], values.iat[i]
        if not np.isfinite(year) or float(year) != int(year):
            problems.append((row_no, raw["year"].iat[i], "year is not an integer"))
        if not raw["country"].iat[i]:
            problems.append((row_no, raw["country"].iat[i], "empty country code"))
        if not raw["product"].iat[i]:
            problems.append((row_no, raw["product"].iat[i], "empty product code"))
        if not np.isfinite(value):
            problems.append((row_no, raw["value"].iat[i], "value is not a finite number"))
        elif value < 0:
            problems.append((row_no, raw["value"].iat[i], "negative value"))
    if problems:
        raise InvalidValueError(problems)

    frame = pd.DataFrame(
        {
            "year": years.astype(np.int64),
            "country": raw["country"],
            "product": raw["product"],
            "value": values.astype(float),
        }
    )
    dup_mask = frame.duplicated(subset=["year", "country", "product"], keep=False)
    if dup_mask.any():
        first = frame[dup_mask].iloc[0]
        key = (int(first["year"]), first["country"], first["product"])
        same = (
            (frame["year"] == key[0]) & (frame["country"] == key[1]) & (frame["product"] == key[2])
        )
        raise DuplicateKeyError(key, [int(i) + 1 for i in np.flatnonzero(same.to_numpy())])

    return TradeFlowTable(frame.reset_index(drop=True))


def read_trade_flows(path, delimiter: str = ",") -> TradeFlowTable:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Trade flow file not found: {path}")
    with open(path, "rb") as f:
        return parse_trade_flows(f, delimiter=delimiter)


def write_trade_flows(table: TradeFlowTable, stream, delimiter: str = ",") -> None:
    """Write a table back out in the format parse_trade_flows reads.

    Values use Python's shortest round-tripping repr, so write-then-parse is lossless.
    """
    text = table.frame.to_csv(index=False, sep=delimiter, lineterminator="\n")
    if isinstance(stream, io.TextIOBase):
        stream.write(text)
    else:
        stream.write(text.encode("utf-8"))


def compute_rca(table: TradeFlowTable, year: int) -> pd.DataFrame:
    """Balassa revealed comparative advantage for one year.

    Rows are countries and columns products, both in lexicographic code order.
    Rows or columns with zero totals get RCA 0.
    """
    rows = table.for_year(year)
    if rows.empty:
        raise EmptyYearError(year, "year not present in table")
    exports = rows.pivot_table(
        index="country", columns="product", values="value", aggfunc="sum", fill_value=0.0
    )
    exports = exports.sort_index().sort_index(axis=1)
    x = exports.to_numpy(dtype=float)
    total = x.sum()
    if total <= 0:
        raise EmptyYearError(year, "total trade is zero")

    country_totals = x.sum(axis=1, keepdims=True)
    product_totals = x.sum(axis=0, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        rca = (x / country_totals) / (product_totals / total)
    rca = np.nan_to_num(rca, nan=0.0, posinf=0.0, neginf=0.0)
    return pd.DataFrame(rca, index=list(exports.index), columns=list(exports.columns))


def default_codes(prefix: str, count: int) -> Tuple[str, ...]:
    """Zero-padded codes (c01, c02, ...) so lexicographic order matches numbering."""
    width = len(str(count))
    return tuple(f"{prefix}{i:0{width}d}" for i in range(1, count + 1))


@dataclass(frozen=True, eq=False)
class SpecializationMatrix:
    """Binary country x product matrix with its code lists.

    Instances are never mutated; every edit returns a new matrix.
    """

    entries: sparse.csr_matrix
    countries: Tuple[str, ...]
    products: Tuple[str, ...]

    def __post_init__(self):
        entries = sparse.csr_matrix(self.entries, dtype=np.int8)
        entries.eliminate_zeros()
        entries.sort_indices()
        m, n = entries.shape
        if len(self.countries) != m or len(self.products) != n:
            raise InputError(
                f"Code lists ({len(self.countries)}, {len(self.products)}) do not match shape {entries.shape}"
            )
        if entries.nnz and not np.all(entries.data == 1):
            raise InputError("Specialization matrix entries must be 0 or 1")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "countries", tuple(self.countries))
        object.__setattr__(self, "products", tuple(self.products))

    @classmethod
    def from_dense(cls, array, countries: Optional[Sequence[str]] = None,
                   products: Optional[Sequence[str]] = None) -> "SpecializationMatrix":
        array = np.asarray(array)
        m, n = array.shape
        return cls(
            sparse.csr_matrix((array != 0).astype(np.int8)),
            tuple(countries) if countries is not None else default_codes("c", m),
            tuple(products) if products is not None else default_codes("p", n),
        )

    @property
    def shape(self) -> Tuple[int, int]:
        return self.entries.shape

    @property
    def nnz(self) -> int:
        return int(self.entries.nnz)

    @cached_property
    def diversity(self) -> np.ndarray:
        return np.asarray(self.entries.sum(axis=1)).ravel().astype(np.int64)

    @cached_property
    def ubiquity(self) -> np.ndarray:
        return np.asarray(self.entries.sum(axis=0)).ravel().astype(np.int64)

    @cached_property
    def _country_pos(self) -> Dict[str, int]:
        return {code: i for i, code in enumerate(self.countries)}

    @cached_property
    def _product_pos(self) -> Dict[str, int]:
        return {code: j for j, code in enumerate(self.products)}

    def country_index(self, code: str) -> int:
        try:
            return self._country_pos[code]
        except KeyError:
            raise InputError(f"Unknown country code: {code}") from None

    def product_index(self, code: str) -> int:
        try:
            return self._product_pos[code]
        except KeyError:
            raise InputError(f"Unknown product code: {code}") from None

    def to_dense(self) -> np.ndarray:
        return self.entries.toarray().astype(float)

    def has_entry(self, country: str, product: str) -> bool:
        return bool(self.entries[self.country_index(country), self.product_index(product)])

    def with_entry(self, country: str, product: str, value: int = 1) -> "SpecializationMatrix":
        edited = self.entries.tolil(copy=True)
        edited[self.country_index(country), self.product_index(product)] = 1 if value else 0
        return SpecializationMatrix(edited.tocsr(), self.countries, self.products)

    def submatrix(self, rows: Sequence[int], cols: Sequence[int]) -> "SpecializationMatrix":
        rows, cols = np.asarray(rows, dtype=int), np.asarray(cols, dtype=int)
        return SpecializationMatrix(
            self.entries[rows][:, cols],
            tuple(self.countries[i] for i in rows),
            tuple(self.products[j] for j in cols),
        )

    def permuted(self, country_order: Sequence[int]) -> "SpecializationMatrix":
        """Same matrix with rows listed in a different order (codes travel with rows)."""
        return self.submatrix(country_order, range(self.shape[1]))

    def edges(self) -> List[Tuple[str, str]]:
        coo = self.entries.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return [(self.countries[coo.row[k]], self.products[coo.col[k]]) for k in order]


def binarize(rca, threshold: float = 1.0) -> SpecializationMatrix:
    """M_cp = 1 iff RCA_cp >= threshold. The result is not pruned."""
    if not threshold > 0:
        raise ValueError(f"RCA threshold must be positive, got {threshold}")
    if isinstance(rca, pd.DataFrame):
        values = rca.to_numpy(dtype=float)
        countries, products = [str(c) for c in rca.index], [str(p) for p in rca.columns]
    else:
        values = np.asarray(rca, dtype=float)
        countries = products = None
    return SpecializationMatrix.from_dense(values >= threshold, countries, products)


@dataclass
class PruneReport:
    policy: str
    dropped_countries: Tuple[str, ...] = ()
    dropped_products: Tuple[str, ...] = ()
    component_sizes: List[Tuple[int, int]] = field(default_factory=list)
    rounds: int = 0
    warnings: List[str] = field(default_factory=list)

    @property
    def is_empty(self) -> bool:
        return not self.dropped_countries and not self.dropped_products

    def to_dict(self):
        return {
            "policy": self.policy,
            "dropped_countries": list(self.dropped_countries),
            "dropped_products": list(self.dropped_products),
            "component_sizes": [list(s) for s in self.component_sizes],
            "rounds": self.rounds,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            policy=data["policy"],
            dropped_countries=tuple(data.get("dropped_countries", ())),
            dropped_products=tuple(data.get("dropped_products", ())),
            component_sizes=[tuple(s) for s in data.get("component_sizes", [])],
            rounds=data.get("rounds", 0),
            warnings=list(data.get("warnings", [])),
        )


def bipartite_components(entries: sparse.spmatrix) -> Tuple[int, np.ndarray]:
    """Connected components of the bipartite graph; labels cover rows then columns."""
    adjacency = sparse.bmat([[None, entries], [entries.T, None]], format="csr")
    return connected_components(adjacency, directed=False)


def prune(M: SpecializationMatrix, policy: str = "component") -> Tuple[SpecializationMatrix, PruneReport]:
    """Drop empty rows/columns to a fixed point, then enforce connectivity."""
    if policy not in PRUNE_POLICIES:
        raise ValueError(f"Unknown prune policy {policy!r}; expected one of {PRUNE_POLICIES}")
    report = PruneReport(policy=policy)

    rows = np.arange(M.shape[0])
    cols = np.arange(M.shape[1])
    sub = M.entries
    while True:
        row_mask = np.asarray(sub.sum(axis=1)).ravel() > 0
        col_mask = np.asarray(sub.sum(axis=0)).ravel() > 0
        if row_mask.all() and col_mask.all():
            break
        sub = sub[row_mask][:, col_mask]
        rows, cols = rows[row_mask], cols[col_mask]
        report.rounds += 1
        if sub.shape[0] == 0 or sub.shape[1] == 0:
            break
    if sub.shape[0] == 0 or sub.shape[1] == 0 or sub.nnz == 0:
        raise UnusableInstanceError("Specialization matrix is empty after pruning")

    m_sub = sub.shape[0]
    n_comp, labels = bipartite_components(sub)
    sizes = [
        (int(np.sum(labels[:m_sub] == k)), int(np.sum(labels[m_sub:] == k))) for k in range(n_comp)
    ]
    order = sorted(range(n_comp), key=lambda k: (-(sizes[k][0] + sizes[k][1]), k))
    report.component_sizes = [sizes[k] for k in order]

    if n_comp > 1:
        if policy == "strict":
            raise ConnectivityError(report.component_sizes)
        keep = order[0]
        message = (
            f"Specialization graph has {n_comp} components; keeping the largest "
            f"({sizes[keep][0]} countries x {sizes[keep][1]} products)"
        )
        logger.warning(message)
        report.warnings.append(message)
        rows = rows[labels[:m_sub] == keep]
        cols = cols[labels[m_sub:] == keep]

    kept_rows, kept_cols = set(rows.tolist()), set(cols.tolist())
    report.dropped_countries = tuple(c for i, c in enumerate(M.countries) if i not in kept_rows)
    report.dropped_products = tuple(p for j, p in enumerate(M.products) if j not in kept_cols)
    if report.is_empty:
        return M, report
    logger.info(
        "Pruned %d countries and %d products", len(report.dropped_countries), len(report.dropped_products)
    )
    return M.submatrix(rows, cols), report


def build_yearly_matrices(table: TradeFlowTable, years: Iterable[int], threshold: float = 1.0,
                          policy: str = "component", threads: int = 1):
    """Specialization matrices for several years; years are processed concurrently."""

    def one_year(year):
        return year, prune(binarize(compute_rca(table, year), threshold), policy)

    years = list(years)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return dict(pool.map(one_year, years))


def write_matrix_artifacts(M: SpecializationMatrix, report: PruneReport, directory, metadata=None):
    """Sparse triplet CSV of the 1-entries plus a JSON sidecar."""
    directory = Path(directory)
    edges = M.edges()
    write_frame(
        directory / MATRIX_CSV,
        pd.DataFrame(edges, columns=["country", "product"]),
    )
    sidecar = {
        "countries": list(M.countries),
        "products": list(M.products),
        "diversity": M.diversity,
        "ubiquity": M.ubiquity,
        "prune_report": report,
    }
    sidecar.update(metadata or {})
    write_json(directory / MATRIX_JSON, sidecar)
    return directory


def read_matrix_artifacts(directory) -> Tuple[SpecializationMatrix, PruneReport, dict]:
    directory = Path(directory)
    csv_path, json_path = directory / MATRIX_CSV, directory / MATRIX_JSON
    for path in (csv_path, json_path):
        if not path.exists():
            raise FileNotFoundError(f"Missing matrix artifact: {path}")
    sidecar = read_json(json_path)
    countries, products = sidecar["countries"], sidecar["products"]
    edges = pd.read_csv(csv_path, dtype=str, keep_default_na=False)
    c_pos = {c: i for i, c in enumerate(countries)}
    p_pos = {p: j for j, p in enumerate(products)}
    try:
        rows = [c_pos[c] for c in edges["country"]]
        cols = [p_pos[p] for p in edges["product"]]
    except KeyError as exc:
        raise InputError(f"Matrix CSV references unknown code {exc}") from None
    entries = sparse.csr_matrix(
        (np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(len(countries), len(products))
    )
    M = SpecializationMatrix(entries, tuple(countries), tuple(products))
    return M, PruneReport.from_dict(sidecar["prune_report"]), sidecar
