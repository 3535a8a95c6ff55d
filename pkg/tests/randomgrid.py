"""Random workbook and edit-script generators for the engine property suites."""

from __future__ import annotations

import random

from spillgrid import Workbook
from spillgrid.parser import col_to_letters

SIZE = 20


def addr(r: int, c: int) -> str:
    return f"{col_to_letters(c)}{r}"


def random_ref(rng: random.Random, size: int = SIZE) -> str:
    return addr(rng.randint(1, size), rng.randint(1, size))


def random_range(rng: random.Random, size: int = SIZE) -> str:
    r, c = rng.randint(1, size - 3), rng.randint(1, size - 3)
    return f"{addr(r, c)}:{addr(r + rng.randint(0, 3), c + rng.randint(0, 3))}"


def random_formula(rng: random.Random, size: int = SIZE) -> str:
    a, b = random_ref(rng, size), random_ref(rng, size)
    n, m = rng.randint(1, 4), rng.randint(1, 4)
    choices = [
        lambda: f"=SEQUENCE({n},{m})",
        lambda: f"=SEQUENCE({n},{m},{a})",
        lambda: f"={a}+{b}",
        lambda: f"={a}#*2",
        lambda: f"=SUM({random_range(rng, size)})",
        lambda: f"=SUM({a}#)",
        lambda: f"=TRANSPOSE({a}#)",
        lambda: f"=IF({a}>2,SEQUENCE({n},{m}),{b})",
        lambda: f"=SEQUENCE(MAX(1,MIN(4,ROWS({a}#))),2)",
        lambda: f"=SORT({random_range(rng, size)})",
        lambda: f"=UNIQUE({a}#)",
        lambda: f"=ISFORMULA({random_range(rng, size)})",
        lambda: f"={a}&\"x\"",
        lambda: f"=SEQUENCE(1,{m})+{a}",
    ]
    return rng.choice(choices)()


def random_content(rng: random.Random, size: int = SIZE, formula_rate: float = 0.35):
    x = rng.random()
    if x < formula_rate:
        return random_formula(rng, size)
    if x < formula_rate + 0.35:
        return float(rng.randint(-3, 9))
    if x < formula_rate + 0.45:
        return rng.choice(["a", "b", "B"])
    return None


def random_workbook(rng: random.Random, cells: int = 40, size: int = SIZE) -> Workbook:
    wb = Workbook()
    wb.add_sheet("S")
    for _ in range(cells):
        content = random_content(rng, size)
        if content is not None:
            wb.set_cell(random_ref(rng, size), content)
    wb.recalculate()
    return wb


def rebuild(wb: Workbook) -> Workbook:
    """A fresh workbook with the same contents, recalculated from scratch."""
    fresh = Workbook()
    for sheet in wb.sheets:
        s = fresh.add_sheet(sheet.name)
        for (r, c), content in sheet.cells.items():
            fresh.set_cell((s, r, c), content)
    fresh.recalculate()
    return fresh


def spill_rects_ok(wb: Workbook) -> tuple[bool, str]:
    """Spill rectangles are pairwise disjoint and cover no content except their own anchor."""
    claimed: dict = {}
    for a, (s, top, left, bottom, right) in wb.spill_rects().items():
        cells = wb.sheets[s].cells
        for r in range(top, bottom + 1):
            for c in range(left, right + 1):
                if (r, c) != (a[1], a[2]) and (r, c) in cells:
                    return False, f"{wb.address_text(a)} covers content at {addr(r, c)}"
                if (s, r, c) in claimed:
                    return False, f"{wb.address_text(a)} overlaps {wb.address_text(claimed[(s, r, c)])}"
                claimed[(s, r, c)] = a
    return True, ""
