import numpy as np
import pytest

from synthgate.simulate import nhis_schema
from synthgate.tabular import (
    DataError,
    Dataset,
    EncodingOptions,
    SchemaError,
    VariableSchema,
    clean,
    derive_income_forms,
    design_matrix,
    expected_columns,
    format_csv,
    format_schema,
    parse_schema,
    read_csv_text,
    sample_rows,
)

HEADER = "Income,Age,Sex,Race,Education,HoursWorked\n"


def test_parse_three_rows(toy_schema):
    ds = read_csv_text(HEADER + "0,30,1,1,1,40\n5000,41,2,2,3,38\n149000,55,1,3,2,60\n", toy_schema)
    assert ds.n == 3
    assert ds.target.name == "Income"
    np.testing.assert_array_equal(ds["Income"], [0, 5000, 149000])


def test_missing_header_column_is_named(toy_schema):
    with pytest.raises(DataError) as err:
        read_csv_text("Income,Age,Sex,Education,HoursWorked\n1,2,1,1,3\n", toy_schema)
    assert "Race" in str(err.value)


def test_missing_code_loads_and_is_flagged(toy_schema):
    ds = read_csv_text(HEADER + "10,30,1,1,97,40\n20,31,1,1,1,40\n", toy_schema)
    assert ds.n == 2
    np.testing.assert_array_equal(ds.missing_mask(), [True, False])


def test_illegal_code_and_type_mismatch_report_row_and_column(toy_schema):
    with pytest.raises(DataError) as err:
        read_csv_text(HEADER + "10,30,1,7,1,40\n10,abc,1,1,1,40\n", toy_schema)
    rows = {(r, c) for r, c, _ in err.value.problems}
    assert rows == {(1, "Race"), (2, "Age")}


def test_clean_drops_missing_hours(toy_schema):
    lines = [f"{100 * i},{30 + i},1,1,1,{99 if i in (3, 7) else 40}" for i in range(10)]
    ds = clean(read_csv_text(HEADER + "\n".join(lines) + "\n", toy_schema))
    assert ds.n == 8
    hours = [r for r in ds.cleaning_log if r.variable == "HoursWorked" and r.rule == "missing-codes"]
    assert hours[0].dropped == 2


def test_clean_recodes_and_is_idempotent(toy_schema):
    ds = clean(read_csv_text(HEADER + "1,30,1,1,4,40\n2,31,2,2,5,41\n3,32,1,3,2,42\n", toy_schema))
    np.testing.assert_array_equal(ds["Education"], [3, 3, 2])
    again = clean(ds)
    assert again.equals(ds)
    assert again.cleaning_log == ds.cleaning_log


def test_clean_without_missing_is_identity(toy_schema):
    text = HEADER + "1,30,1,1,1,40\n2,31,2,2,2,41\n"
    raw = read_csv_text(text, toy_schema)
    assert clean(raw).equals(raw)


def test_empty_cells_dropped_before_codes(toy_schema):
    ds = clean(read_csv_text(HEADER + "1,,1,1,1,40\n2,31,2,2,2,41\n", toy_schema))
    assert ds.n == 1
    assert ds.cleaning_log[1].variable == "Age" and ds.cleaning_log[1].dropped == 1


def test_education_grades_collapse_to_three():
    schema = parse_schema(
        "Income; kind=continuous; role=target\n"
        "Education; kind=categorical; codes=1,2,3; recode=10:1,11:1,12:1,13:2,14:2,15:2,16:2,17:3,18:3,21:3"
    )
    text = "Income,Education\n" + "".join(f"1,{c}\n" for c in (10, 11, 12, 13, 14, 15, 16, 17, 18, 21))
    ds = clean(read_csv_text(text, schema))
    assert sorted(set(ds["Education"])) == [1, 2, 3]


def test_schema_rules():
    with pytest.raises(SchemaError):
        VariableSchema("Race", "categorical", allowed_codes=(1,))
    with pytest.raises(SchemaError):
        VariableSchema("Race", "categorical", allowed_codes=(1, 2), missing_codes=(2,))
    with pytest.raises(SchemaError):
        parse_schema("A; kind=continuous; role=predictor\n")  # no target
    with pytest.raises(SchemaError):
        parse_schema("A; kind=continuous; role=target\nB; kind=continuous; role=target\n")
    with pytest.raises(SchemaError):
        parse_schema("A; kind=categorical; role=target; codes=1,2\n")


def test_schema_text_round_trip():
    schema = nhis_schema()
    assert parse_schema(format_schema(schema)) == schema


def test_csv_round_trip(sim_small, toy_schema):
    ds, _ = sim_small
    back = read_csv_text(format_csv(ds), ds.schema)
    assert back.equals(ds)


def test_income_forms():
    forms = derive_income_forms(np.array([0.0, 5000.0, 149000.0]))
    np.testing.assert_array_equal(forms.income_b, [0, 1, 1])
    np.testing.assert_array_equal(forms.income_c, [5000, 149000])
    np.testing.assert_array_equal(forms.scatter(), [0, 5000, 149000])
    empty = derive_income_forms(np.zeros(4))
    assert empty.income_b.sum() == 0 and empty.income_c.size == 0
    with pytest.raises(ValueError):
        derive_income_forms(np.array([1.0, -2.0]))


def test_income_forms_count_zeros():
    y = np.r_[np.zeros(200), np.arange(1, 4801, dtype=float)]
    assert (1 - derive_income_forms(y).income_b).sum() == 200


def test_sample_rows(sim_small):
    ds, _ = sim_small
    assert sample_rows(ds, ds.n, seed=1).equals(ds)
    a, b = sample_rows(ds, 120, seed=5), sample_rows(ds, 120, seed=5)
    assert a.equals(b) and a.n == 120
    with pytest.raises(ValueError):
        sample_rows(ds, ds.n + 1, seed=0)


def test_sample_rows_distinct():
    schema = parse_schema("Income; kind=continuous; role=target\n")
    ds = Dataset(tuple(schema), {"Income": np.arange(33599, dtype=float)})
    out = sample_rows(ds, 5000, seed=9)
    assert len(np.unique(out["Income"])) == 5000


def test_design_column_arithmetic():
    schema = parse_schema(
        "Y; kind=continuous; role=target\nC; kind=categorical; codes=1,2,3\nX; kind=continuous\n"
    )
    ds = Dataset(tuple(schema), {"Y": np.zeros(6), "C": np.array([1, 2, 3, 1, 2, 3.0]), "X": np.arange(6.0)})
    dm = design_matrix(ds)
    assert dm.n_cols == 4
    assert dm.names == ("(Intercept)", "C=2", "C=3", "X")
    np.testing.assert_array_equal(dm.matrix[:, 0], 1.0)
    assert abs(dm.matrix[:, 3].mean()) < 1e-10
    assert dm.matrix[:, 3].std(ddof=1) == pytest.approx(1.0)
    assert dm.manifest()["transforms"]["X"]["mean"] == 2.5
    raw = design_matrix(ds, EncodingOptions(standardize=False))
    np.testing.assert_array_equal(raw.matrix[:, 3], np.arange(6.0))


def test_nhis_design_has_thirteen_columns(sim_small):
    ds, _ = sim_small
    assert design_matrix(ds).n_cols == 13
    assert expected_columns(ds.predictors) == 13


def test_level_absent_from_schema_raises():
    schema = parse_schema("Y; kind=continuous; role=target\nC; kind=categorical; codes=1,2\n")
    ds = Dataset(tuple(schema), {"Y": np.zeros(3), "C": np.array([1.0, 2.0, 5.0])})
    with pytest.raises(ValueError, match="absent"):
        design_matrix(ds)
