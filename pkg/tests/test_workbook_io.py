import random
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spillgrid import Workbook
from spillgrid.values import Date, ErrorValue
from spillgrid.workbook_io import (
    LoadError,
    dump_all,
    dump_formula_map,
    dump_spill_map,
    dump_values,
    dump_workbook,
    ingest_csv,
    load_workbook,
    parse_csv,
    parse_literal,
    parse_workbook,
    render_literal,
    table_to_csv,
)

from oracles import FIXTURES
from randomgrid import random_workbook

# --- CSV -------------------------------------------------------------------


def test_sales_csv_column_types():
    t = ingest_csv(FIXTURES / "sales.csv")
    assert t.name == "sales"
    assert t.nrows == 12
    assert all(isinstance(v, float) and not isinstance(v, Date) for v in t.column("units"))
    assert all(isinstance(v, str) for v in t.column("region"))
    assert all(isinstance(v, Date) for v in t.column("date"))


def test_header_only_csv_is_an_empty_table():
    t = parse_csv("a,b\n")
    assert t.headers == ["a", "b"]
    assert t.nrows == 0


def test_inference_rules():
    t = parse_csv('n,d,b,mixed,gap,slash\n1,2013-12-25,TRUE,1,1,25/12/2013\n2.5,2014-01-02,false,x,,26/12/2013\n')
    assert t.column("n") == [1.0, 2.5]
    assert [type(v) for v in t.column("d")] == [Date, Date]
    assert t.column("b") == [True, False]
    assert t.column("mixed") == ["1", "x"]
    assert t.column("gap") == ["1", ""]
    assert t.column("slash") == ["25/12/2013", "26/12/2013"]


def test_quoting_and_crlf():
    t = parse_csv('name,note\r\n"a, b","say ""hi"""\r\n')
    assert t.column("name") == ["a, b"]
    assert t.column("note") == ['say "hi"']


def test_ragged_row_reports_row_number():
    with pytest.raises(LoadError) as e:
        parse_csv("a,b\n1,2\n3\n")
    assert e.value.line == 3


@pytest.mark.parametrize("text", ["a,,c\n1,2,3\n", "a,A\n1,2\n", ""])
def test_bad_headers_abort(text):
    with pytest.raises(LoadError):
        parse_csv(text)


def test_missing_csv_is_a_load_error(tmp_path):
    with pytest.raises(LoadError):
        ingest_csv(tmp_path / "nope.csv")


@settings(max_examples=200)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=8))
def test_numbers_survive_csv_round_trip(xs):
    t = parse_csv("x\n" + "\n".join(repr(x) for x in xs) + "\n")
    again = parse_csv(table_to_csv(t))
    assert again.column("x") == [float(x) for x in xs]


def test_sales_csv_round_trip_is_exact():
    t = ingest_csv(FIXTURES / "sales.csv")
    again = parse_csv(table_to_csv(t))
    assert again.headers == t.headers
    for a, b in zip(t.columns, again.columns):
        assert a == b and [type(x) for x in a] == [type(x) for x in b]


# --- literals --------------------------------------------------------------


@pytest.mark.parametrize(
    "text, value",
    [("3", 3.0), ('"3"', "3"), ("TRUE", True), ("false", False), ("#N/A", None), ("hello", "hello"), ('"a""b"', 'a"b')],
)
def test_literal_syntax(text, value):
    got = parse_literal(text)
    if value is None:
        assert isinstance(got, ErrorValue)
    else:
        assert got == value and type(got) is type(value)


@pytest.mark.parametrize("v", [1.5, -0.0, 1e-5, "text", 'q"uote', True, Date(42094.0)])
def test_literal_round_trip(v):
    back = parse_literal(render_literal(v))
    assert back == v and type(back) is type(v)


# --- workbook files --------------------------------------------------------


def test_crosstab_fixture_has_four_formula_nodes():
    wb = load_workbook(FIXTURES / "crosstab.sg")
    statements = [ln for ln in (FIXTURES / "crosstab.sg").read_text().splitlines() if " formula =" in ln and ln.startswith("cell")]
    assert len(wb.formula_cells()) == len(statements) == 4
    assert len(dump_formula_map(wb).splitlines()) == 4


def test_empty_file_is_a_valid_workbook():
    wb = parse_workbook("")
    assert wb.sheets == []
    assert dump_values(wb) == ""
    assert dump_spill_map(wb) == ""


@pytest.mark.parametrize(
    "text, line",
    [
        ("sheet S\ncell A1 value 1\nbogus A2\n", 3),
        ("cell A1 value 1\n", 1),
        ("sheet S\nsheet S\n", 2),
        ("sheet S\ncell A1 formula =1+\n", 2),
        ("sheet S\ncell A1 formula 1+2\n", 2),
        ("sheet S\ncell A1 value 1\ncell A1 value 2\n", 3),
        ("sheet S\ncell A1 value 1\nname demand ref S!A1\nname demand ref S!A1\n", 4),
        ("sheet S\nname A1 ref S!A1\n", 2),
        ("sheet S\nname x ref Nope!A1\n", 2),
        ("sheet S\n# fine\n\ncell A1 value 1\ntable T at S!A1 from missing.csv\n", None),
    ],
)
def test_load_errors_carry_line_numbers(text, line, tmp_path):
    with pytest.raises(LoadError) as e:
        parse_workbook(text, base_dir=tmp_path)
    if line is not None:
        assert e.value.line == line
        assert f":{line}:" in str(e.value)


def test_duplicate_name_diagnostic():
    with pytest.raises(LoadError, match="duplicate name"):
        parse_workbook("sheet S\nname demand ref S!A1\nname demand ref S!B1\n")


def test_table_over_cell_is_rejected(tmp_path):
    (tmp_path / "t.csv").write_text("a,b\n1,2\n")
    with pytest.raises(LoadError) as e:
        parse_workbook("sheet S\ncell B2 value 9\ntable T at S!A1 from t.csv\n", base_dir=tmp_path)
    assert e.value.line == 3


def test_table_is_materialized_at_anchor(tmp_path):
    (tmp_path / "t.csv").write_text("a,b\n1,x\n2,y\n")
    wb = parse_workbook("sheet S\ntable T at S!B2 from t.csv\ncell E2 formula =SUM(T[a])\n", base_dir=tmp_path)
    assert wb.value_at("B2") == "a"
    assert wb.value_at("C4") == "y"
    assert wb.value_at("E2") == 3.0


def test_names_may_precede_their_sheet_and_table(tmp_path):
    (tmp_path / "t.csv").write_text("a\n5\n")
    text = "name n ref Later!A1\nsheet First\ncell A1 formula =n+SUM(T[a])\nsheet Later\ncell A1 value 2\ntable T at Later!C1 from t.csv\n"
    wb = parse_workbook(text, base_dir=tmp_path)
    assert wb.value_at("First!A1") == 7.0


def test_range_names_and_formula_names():
    wb = parse_workbook("sheet S\ncell A1 value 1\ncell B1 value 2\nname r ref S!A1:B1\nname twice formula =r*2\ncell A3 formula =twice\n")
    assert dump_values(wb).splitlines()[2] == "2\t4"


def test_unknown_sheet_in_dump_is_rejected():
    wb = load_workbook(FIXTURES / "crosstab.sg")
    with pytest.raises((KeyError, ValueError)):
        dump_values(wb, "Nope")


# --- dumps -----------------------------------------------------------------


def test_amount_column_values():
    wb = load_workbook(FIXTURES / "amount.sg")
    grid = [row.split("\t") for row in dump_values(wb).splitlines()]
    amounts = [row[-1] for row in grid if row[-1] not in ("", "amount")]
    assert amounts == ["712", "471", "570", "1396"]
    assert dump_spill_map(wb).splitlines() == ["Data!J8 4x1 ok"]


def test_blocked_amount_anchor():
    wb = load_workbook(FIXTURES / "amount_blocked.sg")
    assert "#SPILL!" in dump_values(wb)
    assert dump_spill_map(wb).splitlines() == ["Data!J8 1x1 SPILL:J10"]


def test_formula_map_line_for_crosstab():
    wb = load_workbook(FIXTURES / "crosstab.sg")
    lines = dump_formula_map(wb).splitlines()
    assert "M8\t5x5\t=SUMIFS(amount#,Sales[region],region#,Sales[goods],goods#)" in lines


def test_all_literal_sheet_has_empty_formula_map():
    wb = parse_workbook("sheet S\ncell A1 value 1\ncell C3 value x\n")
    assert dump_formula_map(wb) == ""
    assert dump_values(wb) == "1\t\t\n\t\t\n\t\tx\n"


def test_dates_render_iso():
    wb = load_workbook(FIXTURES / "timeruler.sg")
    row8 = dump_values(wb, "Model").splitlines()[7].split("\t")
    assert row8[:4] == ["2015-04-01", "2015-07-01", "2015-10-01", "2016-01-01"]


@pytest.mark.parametrize("seed", range(25))
def test_values_grid_covers_literals_and_spills(seed):
    wb = random_workbook(random.Random(700 + seed))
    lines = dump_values(wb).splitlines()
    rows = len(lines)
    cols = len(lines[0].split("\t")) if lines else 0
    want_r = want_c = 0
    for (r, c) in wb.sheets[0].cells:
        want_r, want_c = max(want_r, r), max(want_c, c)
    for (s, r, c), (rows_, cols_) in ((a, wb.spill_extent(a)) for a in wb.formula_cells()):
        want_r, want_c = max(want_r, r + rows_ - 1), max(want_c, c + cols_ - 1)
    assert (rows, cols) == (want_r, want_c)
    assert all(len(line.split("\t")) == cols for line in lines)


def _round_trip(wb: Workbook, tmp_path: Path, stem: str) -> Workbook:
    paths = dump_workbook(wb, tmp_path / f"{stem}.sg")
    return load_workbook(paths[0])


@pytest.mark.parametrize("fixture", ["crosstab.sg", "amount.sg", "amount_blocked.sg", "timeruler.sg", "empty.sg", "ghost.sg"])
def test_load_dump_load_is_a_fixed_point(fixture, tmp_path):
    wb = load_workbook(FIXTURES / fixture)
    once = _round_trip(wb, tmp_path, "once")
    twice = _round_trip(once, tmp_path, "twice")
    assert dump_all(once) == dump_all(wb)
    assert (tmp_path / "once.sg").read_text().replace("once.", "twice.") == (tmp_path / "twice.sg").read_text()
    assert dump_all(twice) == dump_all(once)


@pytest.mark.parametrize("seed", range(15))
def test_random_workbooks_round_trip(seed, tmp_path):
    wb = random_workbook(random.Random(900 + seed))
    assert dump_all(_round_trip(wb, tmp_path, "rt")) == dump_all(wb)


def test_dumps_are_byte_deterministic():
    a = load_workbook(FIXTURES / "crosstab.sg")
    b = load_workbook(FIXTURES / "crosstab.sg")
    assert dump_all(a) == dump_all(b)
    assert "\r" not in dump_all(a)
