import io
from pathlib import Path

import numpy as np
import pytest

from errors import (
    ConnectivityError,
    DuplicateKeyError,
    EmptyYearError,
    InputError,
    InvalidValueError,
    TradeFormatError,
    UnusableInstanceError,
)
from fixtures import fixture_f1
from specmatrix import (
    SpecializationMatrix,
    TradeFlowTable,
    binarize,
    build_yearly_matrices,
    compute_rca,
    default_codes,
    parse_trade_flows,
    prune,
    read_matrix_artifacts,
    read_trade_flows,
    write_matrix_artifacts,
    write_trade_flows,
)

SYNTHETIC = Path(__file__).parent / "data" / "synthetic_trade.csv"


def table_from(text):
    return parse_trade_flows(text.encode("utf-8"))


def test_parse_accepts_case_insensitive_header():
    table = table_from("Year,COUNTRY,product,Value\n2000,c1,p1,3\n2000,c1,p2,1.5\n")
    assert len(table) == 2
    assert table.years == [2000]
    assert table.frame["value"].tolist() == [3.0, 1.5]


def test_parse_rejects_wrong_header():
    with pytest.raises(TradeFormatError):
        table_from("year,country,value\n2000,c1,3\n")


def test_parse_reports_duplicate_rows():
    text = "year,country,product,value\n2000,c1,p1,1\n2000,c2,p1,1\n2000,c1,p1,2\n"
    with pytest.raises(DuplicateKeyError) as info:
        table_from(text)
    assert info.value.key == (2000, "c1", "p1")
    assert info.value.rows == [1, 3]
    assert "rows [1, 3]" in str(info.value)


def test_parse_rejects_negative_and_non_numeric_values():
    text = "year,country,product,value\n2000,c1,p1,-1\n2000,c1,p2,abc\n2000.5,c2,p1,1\n"
    with pytest.raises(InvalidValueError) as info:
        table_from(text)
    rows = [row for row, _, _ in info.value.problems]
    assert rows == [1, 2, 3]
    assert "negative value" in str(info.value)


def test_read_missing_file_names_path(tmp_path):
    missing = tmp_path / "nope.csv"
    with pytest.raises(FileNotFoundError, match="nope.csv"):
        read_trade_flows(missing)


def test_write_then_parse_keeps_values():
    table = table_from("year,country,product,value\n2001,c1,p1,0.1\n2001,c2,p1,12345.678901234\n")
    buffer = io.BytesIO()
    write_trade_flows(table, buffer)
    again = parse_trade_flows(buffer.getvalue())
    assert again.frame.equals(table.frame)


def test_thousand_rows_survive_write_then_parse():
    rng = np.random.default_rng(12)
    keys = [(y, c, p) for y in (2001, 2002) for c in default_codes("c", 20) for p in default_codes("p", 25)]
    lines = ["year,country,product,value"]
    lines += [f"{y},{c},{p},{v}" for (y, c, p), v in zip(keys, rng.integers(0, 10 ** 7, len(keys)) / 100)]
    table = table_from("\n".join(lines) + "\n")
    assert len(table) == 1000

    buffer = io.BytesIO()
    write_trade_flows(table, buffer)
    again = parse_trade_flows(buffer.getvalue())
    assert again.frame[["year", "country", "product"]].equals(table.frame[["year", "country", "product"]])
    np.testing.assert_allclose(again.frame["value"], table.frame["value"], rtol=1e-15, atol=0)


def test_rca_balassa_values():
    table = table_from(
        "year,country,product,value\n2000,c1,p1,3\n2000,c1,p2,1\n2000,c2,p1,1\n2000,c2,p2,3\n"
    )
    rca = compute_rca(table, 2000)
    np.testing.assert_allclose(rca.to_numpy(), [[1.5, 0.5], [0.5, 1.5]])
    assert list(rca.index) == ["c1", "c2"]


def random_table(seed=0, countries=8, products=12):
    rng = np.random.default_rng(seed)
    rows = [
        f"2000,{c},{p},{rng.lognormal(3.0, 1.5)}"
        for c in default_codes("c", countries)
        for p in default_codes("p", products)
        if rng.random() < 0.7
    ]
    return table_from("year,country,product,value\n" + "\n".join(rows) + "\n")


@pytest.mark.parametrize("factor", [1024.0, 3.7, 1e-4])
def test_specialization_is_scale_free(factor):
    table = random_table(seed=5)
    scaled = TradeFlowTable(table.frame.assign(value=table.frame["value"] * factor))
    base = binarize(compute_rca(table, 2000))
    again = binarize(compute_rca(scaled, 2000))
    assert again.countries == base.countries and again.products == base.products
    assert (again.entries != base.entries).nnz == 0


def test_rca_threshold_is_inclusive():
    table = table_from(
        "year,country,product,value\n2000,c1,p1,1\n2000,c1,p2,1\n2000,c2,p1,1\n2000,c2,p2,1\n"
    )
    M = binarize(compute_rca(table, 2000), 1.0)
    assert M.to_dense().tolist() == [[1, 1], [1, 1]]


def test_rca_missing_or_empty_year():
    table = table_from("year,country,product,value\n2000,c1,p1,0\n2000,c2,p2,0\n")
    with pytest.raises(EmptyYearError):
        compute_rca(table, 1999)
    with pytest.raises(EmptyYearError):
        compute_rca(table, 2000)


def test_binarize_rejects_non_positive_threshold():
    with pytest.raises(ValueError):
        binarize(np.ones((2, 2)), 0.0)


def test_default_codes_sort_like_numbers():
    assert default_codes("c", 2) == ("c1", "c2")
    codes = default_codes("c", 40)
    assert codes[0] == "c01" and list(codes) == sorted(codes)


def test_matrix_rejects_non_binary_entries():
    from scipy import sparse

    with pytest.raises(InputError):
        SpecializationMatrix(sparse.csr_matrix(np.array([[2, 0], [0, 1]])), ("a", "b"), ("x", "y"))


def test_with_entry_returns_new_matrix():
    M = fixture_f1()
    edited = M.with_entry("c1", "p3")
    assert not M.has_entry("c1", "p3")
    assert edited.has_entry("c1", "p3")
    assert edited.nnz == M.nnz + 1


def test_unknown_code_is_input_error():
    with pytest.raises(InputError, match="zz"):
        fixture_f1().country_index("zz")


def test_prune_drops_empty_rows_and_columns():
    M = SpecializationMatrix.from_dense([[1, 1, 0], [0, 0, 0], [0, 1, 0]])
    pruned, report = prune(M)
    assert pruned.countries == ("c1", "c3")
    assert pruned.products == ("p1", "p2")
    assert report.dropped_countries == ("c2",)
    assert report.dropped_products == ("p3",)
    assert (pruned.diversity > 0).all() and (pruned.ubiquity > 0).all()


def test_prune_keeps_connected_matrix_unchanged():
    M = fixture_f1()
    pruned, report = prune(M)
    assert pruned is M
    assert report.is_empty


def test_prune_empty_matrix_is_unusable():
    with pytest.raises(UnusableInstanceError):
        prune(SpecializationMatrix.from_dense(np.zeros((3, 2))))


def test_prune_disconnected_component_policy_keeps_largest():
    dense = np.zeros((5, 5))
    dense[:2, :2] = 1
    dense[2:, 2:] = 1
    pruned, report = prune(SpecializationMatrix.from_dense(dense), "component")
    assert pruned.countries == ("c3", "c4", "c5")
    assert pruned.products == ("p3", "p4", "p5")
    assert report.component_sizes == [(3, 3), (2, 2)]
    assert report.warnings


@pytest.mark.parametrize("seed", range(5))
def test_prune_is_idempotent(seed):
    dense = np.random.default_rng(seed).random((15, 20)) < 0.08
    once, _ = prune(SpecializationMatrix.from_dense(dense), "component")
    twice, report = prune(once, "component")
    assert twice.countries == once.countries and twice.products == once.products
    assert (twice.entries != once.entries).nnz == 0
    assert report.is_empty


def test_prune_disconnected_strict_policy_raises():
    with pytest.raises(ConnectivityError) as info:
        prune(SpecializationMatrix.from_dense(np.eye(2)), "strict")
    assert info.value.component_sizes == [(1, 1), (1, 1)]


def test_prune_equal_components_keep_lowest_label():
    pruned, _ = prune(SpecializationMatrix.from_dense(np.eye(2)), "component")
    assert pruned.countries == ("c1",)


def test_edges_are_lexicographic():
    assert fixture_f1().edges() == [("c1", "p1"), ("c1", "p2"), ("c2", "p2"), ("c2", "p3")]


def test_matrix_artifacts_read_back(tmp_path):
    M, report = prune(SpecializationMatrix.from_dense([[1, 1, 0], [0, 0, 0], [0, 1, 1]]))
    write_matrix_artifacts(M, report, tmp_path, {"year": 2000})
    again, report_again, sidecar = read_matrix_artifacts(tmp_path)
    assert again.countries == M.countries and again.products == M.products
    assert (again.entries != M.entries).nnz == 0
    assert report_again.dropped_countries == ("c2",)
    assert sidecar["year"] == 2000


def test_read_matrix_artifacts_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_matrix_artifacts(tmp_path)


def test_yearly_matrices_on_bundled_data():
    table = read_trade_flows(SYNTHETIC)
    assert table.years == [2019, 2020]
    matrices = build_yearly_matrices(table, table.years, threads=2)
    assert sorted(matrices) == [2019, 2020]
    for M, report in matrices.values():
        assert M.shape == (12, 18)
        assert report.component_sizes == [(12, 18)]
