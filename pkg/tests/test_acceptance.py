"""Acceptance criteria, one test per criterion.

Each test records PASS or FAIL in ``RESULTS``; conftest prints the table at
the end of the session. Run directly with ``python3 tests/test_acceptance.py``.
"""

import datetime
import functools
import random
import time

import pytest

from spillgrid import Workbook
from spillgrid.parser import ParseError, parse_formula, render_formula
from spillgrid.values import Array, ErrorValue
from spillgrid.workbook_io import dump_all, load_workbook, parse_workbook

import oracles
from corpus import FORMULAS
from oracles import FIXTURES
from randomgrid import SIZE, random_content, random_ref, random_workbook, rebuild, spill_rects_ok

RESULTS: dict = {}


def criterion(label: str, title: str):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException as e:
                first = (str(e).strip().splitlines() or [""])[0]
                RESULTS[label] = ("FAIL", title, f"{type(e).__name__}: {first}"[:160])
                raise
            RESULTS[label] = ("PASS", title, "")

        return run

    return wrap


def report_lines() -> list[str]:
    lines = []
    for label in sorted(RESULTS):
        verdict, title, why = RESULTS[label]
        lines.append(f"{verdict} {label} {title}" + (f" ({why})" if why else ""))
    return lines


def cells(v) -> list:
    return list(v.cells) if isinstance(v, Array) else [v]


def rows_of(v) -> list[list]:
    return [[v.get(i, j) for j in range(v.cols)] for i in range(v.rows)]


# --- 1 -----------------------------------------------------------------------


@criterion("1", "crosstab pipeline equals the scan-and-sum oracle")
def test_crosstab_pipeline():
    t0 = time.perf_counter()
    wb = load_workbook(FIXTURES / "crosstab.sg")
    elapsed = time.perf_counter() - t0

    records = oracles.read_sales()
    regions = sorted(oracles.first_appearance(r["region"] for r in records), key=str.casefold)
    goods = oracles.first_appearance(r["goods"] for r in records)
    assert cells(wb.formula_value("Data!L8")) == regions
    assert regions == ["east", "midwest", "mountain", "south", "west"]
    # UNIQUE keeps first-appearance order; the listed header set is the same
    assert cells(wb.formula_value("Data!M7")) == goods
    assert sorted(goods) == ["desktops", "laptops", "servers", "software", "tablets"]

    grid = wb.formula_value("Data!M8")
    assert grid.shape == (5, 5)
    assert rows_of(grid) == oracles.crosstab(records, regions, goods)

    amounts = cells(wb.formula_value("Data!J8"))
    assert amounts == [float(r["units"]) * float(r["price"]) for r in records]
    grand = sum(sum(row) for row in rows_of(grid))
    assert grand == sum(amounts)
    assert all(float(x).is_integer() for x in grid.cells)
    assert elapsed < 1.0, f"{elapsed:.3f}s"


# --- 2 -----------------------------------------------------------------------


@criterion("2", "spill blocking reports the first blocker and clears on delete")
def test_spill_blocking():
    wb = load_workbook(FIXTURES / "amount_blocked.sg")
    assert wb.spill_status("Data!J8") == ("blocked", "J10")
    v = wb.formula_value("Data!J8")
    assert isinstance(v, ErrorValue) and v.kind.value == "#SPILL!"

    wb.apply_edit("Data!J10", None)
    assert wb.spill_status("Data!J8") == ("ok", 4, 1)
    assert cells(wb.formula_value("Data!J8")) == [712.0, 471.0, 570.0, 1396.0]
    assert dump_all(wb) == dump_all(load_workbook(FIXTURES / "amount.sg"))

    # two blockers: the first in reading order is named
    wb.apply_edit("Data!J11", 1.0)
    wb.apply_edit("Data!J9", "x")
    assert wb.spill_status("Data!J8") == ("blocked", "J9")
    wb.apply_edit("Data!J9", None)
    assert wb.spill_status("Data!J8") == ("blocked", "J11")
    wb.apply_edit("Data!J11", None)
    assert dump_all(wb) == dump_all(load_workbook(FIXTURES / "amount.sg"))


# --- 3 -----------------------------------------------------------------------


@criterion("3", "time ruler period starts and ends match the civil calendar")
def test_time_ruler():
    wb = load_workbook(FIXTURES / "timeruler.sg")
    start = datetime.date(2015, 3, 31)
    months = 3
    assert cells(wb.formula_value("Model!A7")) == [0.0, 1.0, 2.0, 3.0]
    starts = [oracles.month_end(start, p * months) + datetime.timedelta(days=1) for p in range(4)]
    ends = [oracles.month_end(start, (p + 1) * months) for p in range(4)]
    assert starts == [datetime.date(2015, 4, 1), datetime.date(2015, 7, 1), datetime.date(2015, 10, 1), datetime.date(2016, 1, 1)]
    assert ends[0] == datetime.date(2015, 6, 30)
    assert cells(wb.formula_value("Model!A8")) == [oracles.serial(d) for d in starts]
    assert cells(wb.formula_value("Model!A9")) == [oracles.serial(d) for d in ends]


# --- 4 -----------------------------------------------------------------------


def _rel(a: float, b: float) -> float:
    return abs(a - b) / abs(b) if b else abs(a)


@criterion("4", "escalation closed form equals the recurrence within 1e-12")
def test_escalation():
    rng = random.Random(4)
    periods = 61
    for _ in range(100):
        r = rng.uniform(0.0, 0.5)
        p0 = rng.uniform(0.01, 10_000.0)
        wb = parse_workbook(
            "sheet S\n"
            f"cell B1 value {r!r}\ncell B2 value {p0!r}\n"
            f"cell A4 formula =SEQUENCE(1,{periods},0,1)\n"
            "cell A5 formula =(1+r)^p*p0\n"
            "name r ref S!B1\nname p0 ref S!B2\nname p formula =S!A4#\n"
        )
        got = cells(wb.formula_value("A5"))
        assert len(got) == periods
        for p, x in enumerate(got):
            assert _rel(x, oracles.escalate(p0, r, p)) <= 1e-12, (r, p0, p)

    products = [(0.02, 100.0, True), (0.5, 7.5, True), (0.1, 42.0, False)]
    lines = ["sheet S", "cell F1 formula =SEQUENCE(1,8,0,1)"]
    for i, (rate, init, flag) in enumerate(products, start=2):
        lines += [f"cell B{i} value {rate!r}", f"cell C{i} value {init!r}", f"cell D{i} value {flag}"]
    lines += [
        "cell F2 formula =IF(isEscalated,(1+price.escalationPerPeriod)^p,1)*price.initial",
        "name price.escalationPerPeriod ref S!B2:B4",
        "name price.initial ref S!C2:C4",
        "name isEscalated ref S!D2:D4",
        "name p formula =S!F1#",
    ]
    wb = parse_workbook("\n".join(lines) + "\n")
    grid = wb.formula_value("F2")
    assert grid.shape == (len(products), 8)
    for i, (rate, init, flag) in enumerate(products):
        for p in range(8):
            want = oracles.escalate(init, rate, p) if flag else init
            assert _rel(grid.get(i, p), want) <= 1e-12


# --- 5 -----------------------------------------------------------------------


def _column_literals(col: str, values, first_row: int = 1) -> list[str]:
    return [f"cell {col}{first_row + i} value {v!r}" for i, v in enumerate(values)]


@criterion("5", "MMULT accumulation and masked totals equal their oracles exactly")
def test_mmult_accumulation():
    rng = random.Random(5)
    for _ in range(100):
        d = [float(rng.randint(-1000, 1000)) for _ in range(12)]
        text = "\n".join(["sheet S", *_column_literals("A", d), "cell C1 formula =MMULT(SIGN(SEQUENCE(1,12)<SEQUENCE(12,1)),A1:A12)"])
        wb = parse_workbook(text + "\n")
        assert cells(wb.formula_value("C1")) == oracles.exclusive_prefix_sums(d)

    for _ in range(20):
        n, periods = rng.randint(2, 8), rng.randint(1, 10)
        active = [rng.randint(0, 1) for _ in range(n)]
        revenue = [[round(rng.uniform(0, 1000), 2) for _ in range(periods)] for _ in range(n)]
        lines = ["sheet S", *_column_literals("A", active, 2)]
        for i, row in enumerate(revenue):
            for j, v in enumerate(row):
                lines.append(f"cell {chr(ord('C') + j)}{i + 2} value {v!r}")
        lines += [
            "cell A20 formula =MMULT(TRANSPOSE(active),product.revenue)",
            "cell A22 formula =SUM(BYCOLUMN(product.revenue))",
            f"cell A24 formula =MMULT(SEQUENCE(1,{n},1,0),product.revenue)",
            f"name active ref S!A2:A{n + 1}",
            f"name product.revenue ref S!C2:{chr(ord('C') + periods - 1)}{n + 1}",
        ]
        wb = parse_workbook("\n".join(lines) + "\n")
        assert cells(wb.formula_value("A20")) == oracles.masked_column_sums(active, revenue)
        by_column = cells(wb.formula_value("A22"))
        assert by_column == cells(wb.formula_value("A24"))
        assert by_column == oracles.column_sums(revenue)


# --- 6 -----------------------------------------------------------------------


@criterion("6a", "spill rectangles are disjoint over 500 random workbooks")
def test_disjointness_500():
    for seed in range(500):
        rng = random.Random(60_000 + seed)
        wb = random_workbook(rng, cells=rng.choice([20, 40, 80, 120]))
        ok, why = spill_rects_ok(wb)
        assert ok, f"seed {seed}: {why}"


@criterion("6b", "incremental edits match a full recalculation over 200-edit scripts")
def test_incremental_scripts():
    for script in range(6):
        rng = random.Random(61_000 + script)
        wb = random_workbook(rng, cells=rng.choice([30, 60, 100]))
        for step in range(200):
            wb.apply_edit(random_ref(rng), random_content(rng, formula_rate=0.5))
            assert dump_all(wb) == dump_all(rebuild(wb)), f"script {script} step {step}"


_FUZZ_PIECES = list("AB1$:!#[]()\",.+-*/^&=<>'@ {}%;\t") + [
    "SUM", "Sales", "TRUE", "x.y", "12", "A1", "1e5", "Sheet1!", "'My Sheet'!", "[units]", "#REF!", "é", "XFD1048577",
]


@criterion("6c", "parser round-trips the corpus and survives 10,000 fuzzed inputs")
def test_parser_corpus_and_fuzz():
    for text in FORMULAS:
        ast = parse_formula(text)
        assert parse_formula(render_formula(ast)) == ast
    rng = random.Random(62)
    parsed = 0
    for i in range(10_000):
        if i % 2:
            text = "".join(rng.choice(_FUZZ_PIECES) for _ in range(rng.randint(0, 30)))
        else:
            base = rng.choice(FORMULAS)
            k = rng.randrange(len(base) + 1)
            text = base[:k] + rng.choice(_FUZZ_PIECES) + base[k + rng.randint(0, 3):]
        try:
            ast = parse_formula(text)
        except ParseError:
            continue
        parsed += 1
        assert parse_formula(render_formula(ast)) == ast, text
    assert parsed > 0


@criterion("6d", "ISFORMULA is TRUE exactly at anchor cells")
def test_isformula_anchors():
    probes = 0
    for seed in range(100):
        wb = random_workbook(random.Random(63_000 + seed))
        wb.apply_edit("V1", f"=ISFORMULA(A1:T{SIZE})")
        flags = wb.formula_value("V1")
        if not isinstance(flags, Array):
            continue
        probes += 1
        for r in range(SIZE):
            for c in range(SIZE):
                assert flags.get(r, c) == wb.is_formula(0, r + 1, c + 1)
    assert probes >= 50


# --- 7 -----------------------------------------------------------------------


def _synthetic_sales(path, rows: int, seed: int = 7) -> list[dict]:
    rng = random.Random(seed)
    regions = ["east", "south", "west", "midwest", "mountain"]
    goods = ["laptops", "desktops", "tablets", "software", "servers"]
    records = []
    for i in range(rows):
        records.append({
            "record": i + 1,
            "region": rng.choice(regions),
            "goods": rng.choice(goods),
            "units": rng.randint(1, 9),
            "price": rng.randint(10, 2000),
        })
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write("record,region,goods,units,price\n")
        for rec in records:
            f.write(f"{rec['record']},{rec['region']},{rec['goods']},{rec['units']},{rec['price']}\n")
    return [{k: str(v) for k, v in rec.items()} for rec in records]


@criterion("7", "5000-row pipeline recalculates under 1 s and re-runs an edit under 250 ms")
def test_performance(tmp_path):
    records = _synthetic_sales(tmp_path / "big.csv", 5000)
    (tmp_path / "big.sg").write_text(
        "sheet Data\n"
        "cell J1 formula =Sales[units]*Sales[price]\n"
        "cell L1 formula =SORT(UNIQUE(Sales[region]))\n"
        "cell N1 formula =TRANSPOSE(UNIQUE(Sales[goods]))\n"
        "cell N2 formula =SUMIFS(amount#,Sales[region],region#,Sales[goods],goods#)\n"
        "table Sales at Data!A1 from big.csv\n"
        "name amount ref Data!J1\nname region ref Data!L1\nname goods ref Data!N1\n"
    )
    wb = load_workbook(tmp_path / "big.sg")
    t0 = time.perf_counter()
    wb.recalculate()
    full = time.perf_counter() - t0

    def check(records):
        regions = sorted(oracles.first_appearance(r["region"] for r in records), key=str.casefold)
        goods = oracles.first_appearance(r["goods"] for r in records)
        assert rows_of(wb.formula_value("Data!N2")) == oracles.crosstab(records, regions, goods)

    check(records)
    t0 = time.perf_counter()
    wb.apply_edit("Data!D2", 1000.0)  # units of the first record
    edit = time.perf_counter() - t0
    records[0]["units"] = "1000"
    check(records)
    assert full < 1.0, f"full recalculation {full:.3f}s"
    assert edit < 0.25, f"incremental edit {edit * 1000:.0f}ms"


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
