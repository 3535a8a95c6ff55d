"""Cell grid, reference resolution, spill placement and recalculation.

Formulas live in anchor cells. An anchor whose value is an array claims the
rectangle below and to the right of it; the claim succeeds only when every
other cell of the rectangle is empty and unclaimed, otherwise the anchor shows
#SPILL!. Claims are granted in (sheet, row, col) order, so the outcome is a
function of the anchors' raw values and the grid contents, never of the order
in which formulas happened to be evaluated.

Recalculation evaluates a dirty set in dependency order, places spills, and
repeats on whatever the new placement invalidated until nothing changes.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Union

from . import builtins
from .builtins import Mode, Reference, SliceView
from .graph import plan_order
from .parser import (
    MAX_COLS,
    MAX_ROWS,
    Binary,
    BoolLit,
    Call,
    CellAddress,
    CellRef,
    NameRef,
    Node,
    NumberLit,
    ParseError,
    RangeRef,
    SpillRef,
    TableColumnRef,
    TextLit,
    Unary,
    col_to_letters,
    parse_address,
    parse_formula,
    render_formula,
    render_sheet,
    walk,
)
from .values import (
    Array,
    Date,
    ErrorKind,
    ErrorValue,
    Scalar,
    Value,
    as_array,
    collapse,
    elementwise_binary,
    err,
    lift,
    scalar_negate,
)

log = logging.getLogger(__name__)

CellKey = tuple  # (sheet index, row, col)
Rect = tuple  # (sheet index, top, left, bottom, right)
NodeKey = Union[CellKey, str]  # str keys are case-folded formula-bound names

BLANK = 0.0
_SMALL_REGION = 64


@dataclass(frozen=True)
class Formula:
    ast: Node

    @property
    def text(self) -> str:
        return "=" + render_formula(self.ast)


@dataclass(frozen=True)
class CellBinding:
    sheet: int
    row: int
    col: int


@dataclass(frozen=True)
class RangeBinding:
    sheet: int
    top: int
    left: int
    bottom: int
    right: int


@dataclass(frozen=True)
class FormulaBinding:
    ast: Node


@dataclass(frozen=True)
class NameDef:
    name: str
    binding: Union[CellBinding, RangeBinding, FormulaBinding]


@dataclass
class Table:
    name: str
    sheet: int
    row: int
    col: int
    headers: list[str]
    nrows: int

    def column_index(self, column: str) -> Optional[int]:
        folded = column.casefold()
        for i, h in enumerate(self.headers):
            if h.casefold() == folded:
                return i
        return None

    def column_rect(self, i: int) -> Optional[Rect]:
        if self.nrows == 0:
            return None
        c = self.col + i
        return (self.sheet, self.row + 1, c, self.row + self.nrows, c)

    def rect(self) -> Rect:
        return (self.sheet, self.row, self.col, self.row + self.nrows, self.col + len(self.headers) - 1)


@dataclass
class Sheet:
    name: str
    cells: dict = field(default_factory=dict)  # (row, col) -> Scalar | Formula


@dataclass
class SpillOutcome:
    rows: int
    cols: int
    blocker: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.blocker is None


@dataclass
class CalcReport:
    rounds: int
    evaluated: list[str]
    extents: dict[str, tuple[int, int]]
    errors: Counter
    dirty: set[str] = field(default_factory=set)
    cycles: list[list[str]] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)

    @property
    def error_count(self) -> int:
        return sum(self.errors.values())


class _Node:
    __slots__ = ("key", "ast", "sheet", "regions", "spill_targets", "names", "tables", "raw", "value")

    def __init__(self, key: NodeKey, ast: Node, sheet: int):
        self.key = key
        self.ast = ast
        self.sheet = sheet
        self.regions: list[Rect] = []
        self.spill_targets: set = set()
        self.names: set = set()
        self.tables: set = set()
        self.raw: Optional[Value] = None
        self.value: Optional[Value] = None


def _order_key(k: NodeKey) -> tuple:
    if isinstance(k, tuple):
        return (0,) + k + ("",)
    return (1, 0, 0, 0, k)


def _intersects(a: Rect, b: Rect) -> bool:
    return a[0] == b[0] and a[1] <= b[3] and b[1] <= a[3] and a[2] <= b[4] and b[2] <= a[4]


def _contains(rect: Rect, s: int, r: int, c: int) -> bool:
    return rect[0] == s and rect[1] <= r <= rect[3] and rect[2] <= c <= rect[4]


def _area(rect: Rect) -> int:
    return (rect[3] - rect[1] + 1) * (rect[4] - rect[2] + 1)


def _cells_of(rect: Rect):
    s, top, left, bottom, right = rect
    for r in range(top, bottom + 1):
        for c in range(left, right + 1):
            yield (s, r, c)


def place_spill(anchor: CellKey, value: Value, is_occupied: Callable[[int, int, int], bool]) -> SpillOutcome:
    """Decide whether ``value`` can spill from ``anchor``.

    ``is_occupied`` reports cells holding content or already claimed by another
    spill. The first occupied cell in row-major order is named as the blocker.
    """
    if not isinstance(value, Array) or (value.rows == 1 and value.cols == 1):
        return SpillOutcome(1, 1)
    s, r, c = anchor
    if r + value.rows - 1 > MAX_ROWS or c + value.cols - 1 > MAX_COLS:
        return SpillOutcome(1, 1, "out of bounds")
    for i in range(value.rows):
        for j in range(value.cols):
            if (i or j) and is_occupied(s, r + i, c + j):
                return SpillOutcome(1, 1, f"{col_to_letters(c + j)}{r + i}")
    return SpillOutcome(value.rows, value.cols)


class Workbook:
    def __init__(self):
        self.sheets: list[Sheet] = []
        self.names: dict[str, NameDef] = {}
        self.tables: dict[str, Table] = {}
        self.nodes: dict[NodeKey, _Node] = {}
        self._sheet_index: dict[str, int] = {}
        self._anchors: set = set()
        self._status: dict = {}  # anchor -> ("ok", rows, cols) | ("blocked", detail)
        self._covered: dict = {}
        self._unstable: set = set()
        # largest candidate shape each anchor produced during the last run
        self._reach: dict = {}
        self._evaluated: set = set()
        self._readers: dict = {}
        self._big_readers: dict = {}
        self._spill_readers: dict = {}
        self._name_readers: dict = {}
        self._table_readers: dict = {}
        self._stale = True
        self.last_report: Optional[CalcReport] = None

    # ------------------------------------------------------------------
    # structure
    # ------------------------------------------------------------------

    def add_sheet(self, name: str) -> int:
        folded = name.casefold()
        if folded in self._sheet_index:
            raise ValueError(f"duplicate sheet {name!r}")
        self.sheets.append(Sheet(name))
        self._sheet_index[folded] = len(self.sheets) - 1
        self._stale = True
        return len(self.sheets) - 1

    def sheet_index(self, name: str) -> Optional[int]:
        return self._sheet_index.get(name.casefold())

    def locate(self, address: Union[str, CellAddress, CellKey], default_sheet: int = 0) -> CellKey:
        if isinstance(address, tuple):
            return address
        if isinstance(address, str):
            address = parse_address(address)
        if address.sheet is None:
            if not self.sheets:
                raise KeyError("workbook has no sheets")
            return (default_sheet, address.row, address.col)
        s = self.sheet_index(address.sheet)
        if s is None:
            raise KeyError(f"unknown sheet {address.sheet!r}")
        return (s, address.row, address.col)

    def address_text(self, key: CellKey) -> str:
        s, r, c = key
        return f"{render_sheet(self.sheets[s].name)}!{col_to_letters(c)}{r}"

    def rect_text(self, rect: Rect) -> str:
        s, top, left, bottom, right = rect
        text = f"{render_sheet(self.sheets[s].name)}!{col_to_letters(left)}{top}"
        if (top, left) != (bottom, right):
            text += f":{col_to_letters(right)}{bottom}"
        return text

    def define_name(self, name: str, binding) -> None:
        folded = name.casefold()
        if folded in self.names:
            raise ValueError(f"duplicate name {name!r}")
        if isinstance(binding, str):
            binding = FormulaBinding(parse_formula(binding[1:] if binding.startswith("=") else binding))
        elif isinstance(binding, Node.__args__):
            binding = FormulaBinding(binding)
        self.names[folded] = NameDef(name, binding)
        if isinstance(binding, FormulaBinding):
            self.nodes[folded] = _Node(folded, binding.ast, 0)
        self._stale = True

    def add_table(self, name: str, sheet: int, row: int, col: int, headers: list[str], columns: list[list]) -> Table:
        folded = name.casefold()
        if folded in self.tables:
            raise ValueError(f"duplicate table {name!r}")
        nrows = len(columns[0]) if columns else 0
        table = Table(name, sheet, row, col, list(headers), nrows)
        if row + nrows > MAX_ROWS or col + len(headers) - 1 > MAX_COLS:
            raise ValueError(f"table {name!r} does not fit on the sheet")
        cells = self.sheets[sheet].cells
        for key in _cells_of(table.rect()):
            if (key[1], key[2]) in cells:
                raise ValueError(f"table {name!r} overlaps {self.address_text(key)}")
        for j, h in enumerate(headers):
            cells[(row, col + j)] = h
            for i, v in enumerate(columns[j]):
                cells[(row + 1 + i, col + j)] = v
        self.tables[folded] = table
        self._stale = True
        return table

    def set_cell(self, address, content) -> None:
        """Store content without recalculating (bulk loading)."""
        s, r, c = self.locate(address)
        self._check_bounds(r, c)
        content = self._make_content(content, [])
        self._store(s, r, c, content)
        self._stale = True

    def _store(self, s: int, r: int, c: int, content) -> None:
        cells = self.sheets[s].cells
        key = (s, r, c)
        if key in self.nodes:
            self._drop_node(key)
        if content is None:
            cells.pop((r, c), None)
        else:
            cells[(r, c)] = content
        if isinstance(content, Formula):
            node = _Node(key, content.ast, s)
            self.nodes[key] = node
            self._anchors.add(key)

    @staticmethod
    def _check_bounds(r: int, c: int) -> None:
        if not (1 <= r <= MAX_ROWS and 1 <= c <= MAX_COLS):
            raise ValueError(f"cell out of bounds: row {r}, col {c}")

    @staticmethod
    def _make_content(content, diagnostics: list[str]):
        if content is None or isinstance(content, Formula):
            return content
        if isinstance(content, str):
            if content.startswith("="):
                try:
                    return Formula(parse_formula(content[1:]))
                except ParseError as e:
                    diagnostics.append(f"ParseError: {e}")
                    return content
            return content
        if isinstance(content, (bool, ErrorValue, Date)):
            return content
        if isinstance(content, (int, float)):
            v = float(content)
            return v
        if isinstance(content, Node.__args__):
            return Formula(content)
        raise TypeError(f"unsupported cell content {content!r}")

    # ------------------------------------------------------------------
    # queries
    # ------------------------------------------------------------------

    def content(self, address):
        s, r, c = self.locate(address)
        return self.sheets[s].cells.get((r, c))

    def is_formula(self, sheet: int, row: int, col: int) -> bool:
        return isinstance(self.sheets[sheet].cells.get((row, col)), Formula)

    def value_at(self, address) -> Optional[Scalar]:
        """Displayed scalar at a cell; None for an empty cell."""
        s, r, c = self.locate(address)
        return self._display(s, r, c)

    def _display(self, s: int, r: int, c: int) -> Optional[Scalar]:
        content = self.sheets[s].cells.get((r, c))
        if content is None:
            a = self._covered.get((s, r, c))
            if a is None:
                return None
            v = self.nodes[a].value
            if isinstance(v, Array):
                i, j = r - a[1], c - a[2]
                if i < v.rows and j < v.cols:
                    return v.get(i, j)
            return None
        if isinstance(content, Formula):
            v = self.nodes[(s, r, c)].value
            if isinstance(v, Array):
                return v.cells[0]
            return v
        return content

    def formula_value(self, address) -> Optional[Value]:
        """The whole value computed by the formula at ``address``."""
        key = self.locate(address)
        node = self.nodes.get(key)
        return None if node is None else node.value

    def name_value(self, name: str) -> Optional[Value]:
        node = self.nodes.get(name.casefold())
        return None if node is None else node.value

    def spill_extent(self, address) -> Optional[tuple[int, int]]:
        key = self.locate(address)
        st = self._status.get(key)
        if st is None:
            return None
        return (st[1], st[2]) if st[0] == "ok" else (1, 1)

    def spill_status(self, address) -> Optional[tuple]:
        return self._status.get(self.locate(address))

    def covering_anchor(self, address) -> Optional[CellKey]:
        return self._covered.get(self.locate(address))

    def spill_rects(self) -> dict:
        out = {}
        for a, st in self._status.items():
            if st[0] == "ok":
                out[a] = (a[0], a[1], a[2], a[1] + st[1] - 1, a[2] + st[2] - 1)
        return out

    def used_extent(self, sheet: int) -> tuple[int, int]:
        rows = cols = 0
        for (r, c) in self.sheets[sheet].cells:
            rows, cols = max(rows, r), max(cols, c)
        for a, rect in self.spill_rects().items():
            if a[0] == sheet:
                rows, cols = max(rows, rect[3]), max(cols, rect[4])
        return rows, cols

    def formula_cells(self, sheet: Optional[int] = None) -> list[CellKey]:
        return sorted(k for k in self._anchors if sheet is None or k[0] == sheet)

    # ------------------------------------------------------------------
    # dependency bookkeeping
    # ------------------------------------------------------------------

    def _resolve_sheet(self, addr: CellAddress, context: int) -> Optional[int]:
        if addr.sheet is None:
            return context
        return self.sheet_index(addr.sheet)

    def _range_rect(self, start: CellAddress, end: CellAddress, context: int) -> Optional[Rect]:
        s = self._resolve_sheet(start, context)
        if s is None:
            return None
        return (s, min(start.row, end.row), min(start.col, end.col), max(start.row, end.row), max(start.col, end.col))

    def _compute_deps(self, node: _Node) -> None:
        regions, spills, names, tables = [], set(), set(), set()
        for n in walk(node.ast):
            if isinstance(n, CellRef):
                s = self._resolve_sheet(n.addr, node.sheet)
                if s is not None:
                    regions.append((s, n.addr.row, n.addr.col, n.addr.row, n.addr.col))
            elif isinstance(n, RangeRef):
                rect = self._range_rect(n.start, n.end, node.sheet)
                if rect is not None:
                    regions.append(rect)
            elif isinstance(n, NameRef):
                folded = n.name.casefold()
                names.add(folded)
                nd = self.names.get(folded)
                if nd is not None:
                    b = nd.binding
                    if isinstance(b, CellBinding):
                        regions.append((b.sheet, b.row, b.col, b.row, b.col))
                    elif isinstance(b, RangeBinding):
                        regions.append((b.sheet, b.top, b.left, b.bottom, b.right))
            elif isinstance(n, SpillRef):
                t = n.target
                if isinstance(t, CellRef):
                    s = self._resolve_sheet(t.addr, node.sheet)
                    if s is not None:
                        spills.add((s, t.addr.row, t.addr.col))
                else:
                    folded = t.name.casefold()
                    names.add(folded)
                    nd = self.names.get(folded)
                    if nd is not None and isinstance(nd.binding, CellBinding):
                        b = nd.binding
                        spills.add((b.sheet, b.row, b.col))
            elif isinstance(n, TableColumnRef):
                folded = n.table.casefold()
                tables.add(folded)
                table = self.tables.get(folded)
                if table is not None:
                    i = table.column_index(n.column)
                    rect = table.column_rect(i) if i is not None else None
                    if rect is not None:
                        regions.append(rect)
        node.regions = regions
        node.spill_targets = spills
        node.names = names
        node.tables = tables

    def _index_node(self, node: _Node) -> None:
        k = node.key
        for rect in node.regions:
            if _area(rect) <= _SMALL_REGION:
                for cell in _cells_of(rect):
                    self._readers.setdefault(cell, set()).add(k)
            else:
                self._big_readers.setdefault(k, []).append(rect)
        for t in node.spill_targets:
            self._spill_readers.setdefault(t, set()).add(k)
        for nm in node.names:
            self._name_readers.setdefault(nm, set()).add(k)
        for tb in node.tables:
            self._table_readers.setdefault(tb, set()).add(k)

    def _unindex_node(self, node: _Node) -> None:
        k = node.key
        for rect in node.regions:
            if _area(rect) <= _SMALL_REGION:
                for cell in _cells_of(rect):
                    readers = self._readers.get(cell)
                    if readers is not None:
                        readers.discard(k)
                        if not readers:
                            del self._readers[cell]
        self._big_readers.pop(k, None)
        for index, keys in (
            (self._spill_readers, node.spill_targets),
            (self._name_readers, node.names),
            (self._table_readers, node.tables),
        ):
            for t in keys:
                readers = index.get(t)
                if readers is not None:
                    readers.discard(k)
                    if not readers:
                        del index[t]

    def _drop_node(self, key: CellKey) -> None:
        node = self.nodes.pop(key)
        self._unindex_node(node)
        self._anchors.discard(key)
        self._uncover(key)
        self._status.pop(key, None)
        self._unstable.discard(key)
        self._reach.pop(key, None)

    def _uncover(self, key: CellKey) -> None:
        st = self._status.get(key)
        if st is not None and st[0] == "ok" and (st[1] > 1 or st[2] > 1):
            s, r, c = key
            for i in range(st[1]):
                for j in range(st[2]):
                    if (i or j) and self._covered.get((s, r + i, c + j)) == key:
                        del self._covered[(s, r + i, c + j)]

    def _rebuild_indexes(self) -> None:
        self._readers, self._big_readers = {}, {}
        self._spill_readers, self._name_readers, self._table_readers = {}, {}, {}
        for node in self.nodes.values():
            self._compute_deps(node)
            self._index_node(node)
        self._stale = False

    def _placed_rect(self, key: CellKey) -> Optional[Rect]:
        st = self._status.get(key)
        if st is None:
            return None
        s, r, c = key
        if st[0] == "ok":
            return (s, r, c, r + st[1] - 1, c + st[2] - 1)
        return (s, r, c, r, c)

    def _readers_of(self, rect: Rect) -> set:
        out: set = set()
        if _area(rect) <= max(len(self._readers), 1):
            for cell in _cells_of(rect):
                readers = self._readers.get(cell)
                if readers:
                    out |= readers
        else:
            for cell, readers in self._readers.items():
                if _contains(rect, *cell):
                    out |= readers
        for k, rects in self._big_readers.items():
            if k not in out and any(_intersects(rect, r) for r in rects):
                out.add(k)
        return out

    def _dependents(self, key: NodeKey) -> set:
        if isinstance(key, str):
            return set(self._name_readers.get(key, ()))
        out = set(self._spill_readers.get(key, ()))
        rect = self._placed_rect(key) or (key[0], key[1], key[2], key[1], key[2])
        out |= self._readers_of(rect)
        return out

    def _anchors_in(self, rect: Rect) -> set:
        out: set = set()
        if _area(rect) <= 2 * len(self._anchors) + 2:
            for cell in _cells_of(rect):
                if cell in self._anchors:
                    out.add(cell)
                else:
                    a = self._covered.get(cell)
                    if a is not None:
                        out.add(a)
        else:
            for a in self._anchors:
                placed = self._placed_rect(a) or (a[0], a[1], a[2], a[1], a[2])
                if _intersects(rect, placed):
                    out.add(a)
        return out

    def _producers(self, node: _Node) -> set:
        out: set = set()
        for rect in node.regions:
            out |= self._anchors_in(rect)
        for t in node.spill_targets:
            if t in self.nodes:
                out.add(t)
        for nm in node.names:
            if nm in self.nodes:
                out.add(nm)
        return out

    def _closure(self, seeds: Iterable[NodeKey]) -> set:
        seen = {k for k in seeds if k in self.nodes}
        stack = list(seen)
        while stack:
            k = stack.pop()
            for d in self._dependents(k):
                if d not in seen and d in self.nodes:
                    seen.add(d)
                    stack.append(d)
        return seen

    def _reach_rect(self, a: CellKey) -> Rect:
        rows, cols = self._reach.get(a, (1, 1))
        s, r, c = a
        return (s, r, c, r + rows - 1, c + cols - 1)

    def _anchors_reaching(self, rect: Rect) -> set:
        return {a for a in self._anchors if _intersects(rect, self._reach_rect(a))}

    def _neighbours(self, k: NodeKey) -> set:
        # anything whose trajectory can influence k or be influenced by it
        if isinstance(k, str):
            out = set(self._name_readers.get(k, ()))
        else:
            reach = self._reach_rect(k)
            out = set(self._spill_readers.get(k, ()))
            out |= self._readers_of(reach)
            out |= self._anchors_reaching(reach)
        node = self.nodes.get(k)
        if node is not None:
            for rect in node.regions:
                out |= self._anchors_reaching(rect)
            out.update(t for t in node.spill_targets if t in self.nodes)
            out.update(nm for nm in node.names if nm in self.nodes)
        out.discard(k)
        return out

    def _component(self, seeds: Iterable[NodeKey]) -> set:
        seen = {k for k in seeds if k in self.nodes}
        stack = list(seen)
        while stack:
            for d in self._neighbours(stack.pop()):
                if d not in seen and d in self.nodes:
                    seen.add(d)
                    stack.append(d)
        return seen

    # ------------------------------------------------------------------
    # evaluation
    # ------------------------------------------------------------------

    def read(self, ref: Reference) -> Value:
        return self._read_rect((ref.sheet, ref.top, ref.left, ref.bottom, ref.right))

    def _read_rect(self, rect: Rect) -> Value:
        s, top, left, bottom, right = rect
        cells = [self._cell_value(s, r, c) for r in range(top, bottom + 1) for c in range(left, right + 1)]
        return collapse(Array(bottom - top + 1, right - left + 1, cells))

    def _cell_value(self, s: int, r: int, c: int) -> Scalar:
        v = self._display(s, r, c)
        return BLANK if v is None else v

    def _spill_value(self, key: CellKey) -> Value:
        s, r, c = key
        if not isinstance(self.sheets[s].cells.get((r, c)), Formula):
            return err(ErrorKind.REF, f"{self.address_text(key)} holds no formula")
        v = self.nodes[key].value
        if v is None:
            return BLANK
        if isinstance(v, ErrorValue) and v.kind is ErrorKind.SPILL:
            return err(ErrorKind.REF, f"{self.address_text(key)} is not spilling")
        return v

    def _name_lookup(self, name: str) -> Optional[NameDef]:
        return self.names.get(name.casefold())

    def _eval(self, n: Node, sheet: int, allow_view: bool = False):
        if isinstance(n, NumberLit):
            return n.value
        if isinstance(n, TextLit):
            return n.value
        if isinstance(n, BoolLit):
            return n.value
        if isinstance(n, CellRef):
            s = self._resolve_sheet(n.addr, sheet)
            if s is None:
                return err(ErrorKind.REF, f"unknown sheet {n.addr.sheet!r}")
            return self._cell_value(s, n.addr.row, n.addr.col)
        if isinstance(n, RangeRef):
            rect = self._range_rect(n.start, n.end, sheet)
            if rect is None:
                return err(ErrorKind.REF, f"unknown sheet {n.start.sheet!r}")
            return self._read_rect(rect)
        if isinstance(n, NameRef):
            nd = self._name_lookup(n.name)
            if nd is None:
                return err(ErrorKind.NAME, f"unknown name {n.name}")
            b = nd.binding
            if isinstance(b, CellBinding):
                return self._cell_value(b.sheet, b.row, b.col)
            if isinstance(b, RangeBinding):
                return self._read_rect((b.sheet, b.top, b.left, b.bottom, b.right))
            v = self.nodes[n.name.casefold()].value
            return BLANK if v is None else v
        if isinstance(n, SpillRef):
            t = n.target
            if isinstance(t, CellRef):
                s = self._resolve_sheet(t.addr, sheet)
                if s is None:
                    return err(ErrorKind.REF, f"unknown sheet {t.addr.sheet!r}")
                return self._spill_value((s, t.addr.row, t.addr.col))
            nd = self._name_lookup(t.name)
            if nd is None:
                return err(ErrorKind.NAME, f"unknown name {t.name}")
            b = nd.binding
            if isinstance(b, CellBinding):
                return self._spill_value((b.sheet, b.row, b.col))
            if isinstance(b, RangeBinding):
                return err(ErrorKind.REF, f"{t.name} names a range, not an anchor")
            v = self.nodes[t.name.casefold()].value
            return BLANK if v is None else v
        if isinstance(n, TableColumnRef):
            table = self.tables.get(n.table.casefold())
            if table is None:
                return err(ErrorKind.NAME, f"unknown table {n.table}")
            i = table.column_index(n.column)
            if i is None:
                return err(ErrorKind.NAME, f"table {table.name} has no column {n.column}")
            rect = table.column_rect(i)
            if rect is None:
                return err(ErrorKind.CALC, f"table {table.name} is empty")
            return self._read_rect(rect)
        if isinstance(n, Unary):
            v = self._eval(n.operand, sheet)
            if n.op == "+":
                return v
            return lift(scalar_negate, v)
        if isinstance(n, Binary):
            return elementwise_binary(n.op, self._eval(n.left, sheet), self._eval(n.right, sheet))
        if isinstance(n, Call):
            return self._call(n, sheet, allow_view)
        raise TypeError(f"unknown node {n!r}")

    def _reference(self, n: Node, sheet: int) -> Optional[Reference]:
        rect = None
        if isinstance(n, CellRef):
            s = self._resolve_sheet(n.addr, sheet)
            if s is not None:
                rect = (s, n.addr.row, n.addr.col, n.addr.row, n.addr.col)
        elif isinstance(n, RangeRef):
            rect = self._range_rect(n.start, n.end, sheet)
        elif isinstance(n, NameRef):
            nd = self._name_lookup(n.name)
            if nd is not None and isinstance(nd.binding, CellBinding):
                b = nd.binding
                rect = (b.sheet, b.row, b.col, b.row, b.col)
            elif nd is not None and isinstance(nd.binding, RangeBinding):
                b = nd.binding
                rect = (b.sheet, b.top, b.left, b.bottom, b.right)
        elif isinstance(n, SpillRef):
            t = n.target
            key = None
            if isinstance(t, CellRef):
                s = self._resolve_sheet(t.addr, sheet)
                if s is not None:
                    key = (s, t.addr.row, t.addr.col)
            else:
                nd = self._name_lookup(t.name)
                if nd is not None and isinstance(nd.binding, CellBinding):
                    key = (nd.binding.sheet, nd.binding.row, nd.binding.col)
            if key is not None:
                rect = self._placed_rect(key) or (key[0], key[1], key[2], key[1], key[2])
        elif isinstance(n, TableColumnRef):
            table = self.tables.get(n.table.casefold())
            if table is not None:
                i = table.column_index(n.column)
                if i is not None:
                    rect = table.column_rect(i)
        if rect is None:
            return None
        return Reference(*rect)

    def _call(self, n: Call, sheet: int, allow_view: bool):
        sig = builtins.signature(n.name)
        if sig is None:
            return err(ErrorKind.NAME, f"unknown function {n.name}")
        args = []
        for i, arg in enumerate(n.args):
            mode = sig.mode(i)
            if mode is Mode.REF:
                ref = self._reference(arg, sheet)
                args.append(ref if ref is not None else self._eval(arg, sheet))
                continue
            v = self._eval(arg, sheet, allow_view=sig.aggregator)
            if sig.aggregator and not isinstance(v, (Array, SliceView)) and _is_reference(arg):
                v = as_array(v)
            args.append(v)
        out = builtins.dispatch(n.name, args, ctx=self)
        if isinstance(out, SliceView) and not allow_view:
            out = collapse(out.array)
        return out

    def _evaluate(self, node: _Node) -> Value:
        v = self._eval(node.ast, node.sheet)
        if isinstance(v, SliceView):
            v = v.array
        return collapse(v)

    # ------------------------------------------------------------------
    # placement
    # ------------------------------------------------------------------

    def _place_all(self) -> None:
        covered: dict = {}
        status: dict = {}
        sheets = self.sheets

        for a in sorted(self._anchors):
            node = self.nodes[a]
            if a in self._unstable:
                status[a] = ("blocked", "unstable")
                node.value = err(ErrorKind.SPILL, "unstable spill")
                continue
            raw = node.raw
            if raw is None:
                continue
            cells = sheets[a[0]].cells

            def occupied(s, r, c, cells=cells):
                return (r, c) in cells or (s, r, c) in covered

            outcome = place_spill(a, raw, occupied)
            if outcome.ok:
                status[a] = ("ok", outcome.rows, outcome.cols)
                node.value = raw
                if outcome.rows > 1 or outcome.cols > 1:
                    s, r, c = a
                    for i in range(outcome.rows):
                        for j in range(outcome.cols):
                            if i or j:
                                covered[(s, r + i, c + j)] = a
            else:
                status[a] = ("blocked", outcome.blocker)
                prev = self._status.get(a)
                if prev == status[a] and isinstance(node.value, ErrorValue) and node.value.kind is ErrorKind.SPILL:
                    continue
                detail = "out of bounds" if outcome.blocker == "out of bounds" else f"blocked by {outcome.blocker}"
                node.value = err(ErrorKind.SPILL, detail)
        self._covered = covered
        self._status = status

    # ------------------------------------------------------------------
    # recalculation
    # ------------------------------------------------------------------

    def recalculate(self) -> CalcReport:
        """Full recalculation from scratch."""
        self._rebuild_indexes()
        self._status = {}
        self._covered = {}
        self._unstable = set()
        self._reach = {}
        for node in self.nodes.values():
            node.raw = node.value = None
        return self._run(set(self.nodes), edited=set())

    def _run(self, dirty: set, edited: set, diagnostics: Optional[list] = None) -> CalcReport:
        # dirty anchors restart unplaced, exactly as in a from-scratch run
        for k in dirty:
            if isinstance(k, tuple):
                self._uncover(k)
                self._status.pop(k, None)
                self._unstable.discard(k)
            node = self.nodes[k]
            node.raw = node.value = None
            self._reach.pop(k, None)

        limit = len(self.nodes) + 1
        rounds = 0
        budget = 0  # rounds that found no new cycle; only these count toward the limit
        evaluated: set = set()
        circular: set = set()
        cycles_seen: list = []
        moved_before: set = set()
        while True:
            rounds += 1
            deps = {k: {p for p in self._producers(self.nodes[k]) if p in dirty} for k in dirty}
            order, cycles = plan_order(deps, key=_order_key)
            fresh = [cyc for cyc in cycles if not circular.issuperset(cyc)]
            for cyc in fresh:
                circular.update(cyc)
                cycles_seen.append(cyc)
            if not fresh:
                budget += 1
            for k in order:
                node = self.nodes[k]
                if k in circular:
                    node.raw = err(ErrorKind.CIRC, "circular reference")
                else:
                    node.raw = self._evaluate(node)
                node.value = node.raw
                evaluated.add(k)
                self._grow_reach(k, node.raw)

            before = dict(self._status)
            shown = {a: self.nodes[a].value for a in self._anchors}
            self._place_all()
            moved = set()
            seeds: set = set()
            for a in self._anchors:
                old, new = before.get(a), self._status.get(a)
                old_rect, new_rect = self._status_rect(a, old), self._status_rect(a, new)
                if old != new:
                    moved.add(a)
                # readers saw the anchor's value and, through coverage, its rectangle
                if self.nodes[a].value is not shown.get(a):
                    seeds |= self._spill_readers.get(a, set())
                    seeds |= self._readers_of(old_rect) | self._readers_of(new_rect)
                elif old_rect != new_rect:
                    seeds |= self._readers_of(old_rect) | self._readers_of(new_rect)
            next_dirty = self._closure(seeds) - circular
            if not next_dirty:
                if moved:
                    # the confirming round would evaluate nothing and reproduce this placement
                    rounds += 1
                break
            if budget >= limit:
                # two rounds cover a period-two oscillation whatever phase it stopped in
                self._mark_unstable(sorted(moved | moved_before), circular, evaluated)
                break
            moved_before = moved
            dirty = next_dirty

        self._evaluated = evaluated
        report = self._report(rounds, evaluated, cycles_seen, edited, diagnostics or [])
        self.last_report = report
        return report

    def _grow_reach(self, k: NodeKey, raw) -> None:
        if isinstance(k, tuple):
            rows, cols = raw.shape if isinstance(raw, Array) else (1, 1)
            r0, c0 = self._reach.get(k, (1, 1))
            self._reach[k] = (max(r0, rows), max(c0, cols))

    def _status_rect(self, a: CellKey, st) -> Rect:
        s, r, c = a
        if st is not None and st[0] == "ok":
            return (s, r, c, r + st[1] - 1, c + st[2] - 1)
        return (s, r, c, r, c)

    def _mark_unstable(self, anchors: list, circular: set, evaluated: set) -> None:
        log.warning("spill placement did not settle; marking %d anchors unstable", len(anchors))
        self._unstable.update(anchors)
        seeds: set = set()
        for a in anchors:
            seeds |= self._spill_readers.get(a, set()) | self._readers_of(self._reach_rect(a))
        self._place_all()
        dirty = self._closure(seeds) - circular - self._unstable
        deps = {k: {p for p in self._producers(self.nodes[k]) if p in dirty} for k in dirty}
        order, _ = plan_order(deps, key=_order_key)
        for k in order:
            node = self.nodes[k]
            node.raw = node.value = self._evaluate(node)
            evaluated.add(k)
            self._grow_reach(k, node.raw)
        self._place_all()

    def _report(self, rounds, evaluated, cycles, edited, diagnostics) -> CalcReport:
        errors: Counter = Counter()
        extents = {}
        for a in sorted(self._anchors):
            v = self.nodes[a].value
            for c in as_array(v).cells if v is not None else ():
                if isinstance(c, ErrorValue):
                    errors[c.kind.value] += 1
            extents[self.address_text(a)] = self.spill_extent(a)
        evaluated_text = [self._key_text(k) for k in sorted(evaluated, key=_order_key)]
        return CalcReport(
            rounds=rounds,
            evaluated=evaluated_text,
            extents=extents,
            errors=errors,
            dirty=set(evaluated_text) | {self.address_text(k) for k in edited},
            cycles=[[self._key_text(k) for k in cyc] for cyc in cycles],
            diagnostics=diagnostics,
        )

    def _key_text(self, k: NodeKey) -> str:
        if isinstance(k, tuple):
            return self.address_text(k)
        return self.names[k].name

    # ------------------------------------------------------------------
    # edits
    # ------------------------------------------------------------------

    def apply_edit(self, address, content) -> CalcReport:
        """Change one cell and recalculate only what the change can reach."""
        if self._stale:
            self.recalculate()
        key = self.locate(address)
        s, r, c = key
        self._check_bounds(r, c)
        diagnostics: list[str] = []
        new = self._make_content(content, diagnostics)

        point = (s, r, c, r, c)
        seeds = self._readers_of(point) | self._anchors_reaching(point)
        if key in self.nodes:
            seeds.add(key)
        comp = self._component(seeds)

        self._store(s, r, c, new)
        comp = {k for k in comp if k in self.nodes}
        if isinstance(new, Formula):
            node = self.nodes[key]
            self._compute_deps(node)
            self._index_node(node)
            comp = self._component(comp | {key})
        return self._incremental(comp, edited={key}, diagnostics=diagnostics)

    def _incremental(self, comp: set, edited: set, diagnostics: Optional[list] = None) -> CalcReport:
        """Rerun the part of the workbook an edit can interact with.

        A from-scratch run evolves each interaction component independently,
        so resetting a whole component and replaying it reproduces the full
        result exactly. Reach can grow during the replay; when it touches
        anything outside the component, the component is widened and replayed.
        """
        while True:
            before = {a: self._status.get(a) for a in self._anchors if a not in comp}
            report = self._run(set(comp), edited, diagnostics)
            escaped = {k for k in self._evaluated if k not in comp}
            escaped.update(a for a, st in before.items() if self._status.get(a) != st)
            for a in comp:
                if isinstance(a, tuple):
                    reach = self._reach_rect(a)
                    escaped |= (self._readers_of(reach) | self._anchors_reaching(reach)) - comp
            if not escaped:
                return report
            log.debug("widening incremental run by %d nodes", len(escaped))
            comp = self._component(comp | escaped)

    def append_table_row(self, table_name: str, values: list) -> CalcReport:
        """Write a record directly under a table and grow the table over it."""
        if self._stale:
            self.recalculate()
        table = self.tables.get(table_name.casefold())
        if table is None:
            raise KeyError(f"unknown table {table_name!r}")
        if len(values) != len(table.headers):
            raise ValueError(f"table {table.name} has {len(table.headers)} columns, got {len(values)} values")
        row = table.row + table.nrows + 1
        self._check_bounds(row, table.col + len(values) - 1)
        cells = self.sheets[table.sheet].cells
        for j in range(len(values)):
            if (row, table.col + j) in cells:
                raise ValueError(f"{self.address_text((table.sheet, row, table.col + j))} is not empty")
        seeds: set = set(self._table_readers.get(table.name.casefold(), ()))
        for j, v in enumerate(values):
            point = (table.sheet, row, table.col + j, row, table.col + j)
            seeds |= self._readers_of(point) | self._anchors_reaching(point)
            cells[(row, table.col + j)] = self._make_content(v, [])
        table.nrows += 1
        for k in self._table_readers.get(table.name.casefold(), ()):
            node = self.nodes[k]
            self._unindex_node(node)
            self._compute_deps(node)
            self._index_node(node)
        comp = self._component(seeds)
        return self._incremental(comp, edited={(table.sheet, row, table.col + j) for j in range(len(values))})

    # ------------------------------------------------------------------
    # tracing
    # ------------------------------------------------------------------

    def _precedent_rects(self, node: _Node, seen: Optional[set] = None) -> set:
        seen = seen if seen is not None else set()
        if node.key in seen:
            return set()
        seen.add(node.key)
        out = set(node.regions)
        for t in node.spill_targets:
            out.add(self._placed_rect(t) or (t[0], t[1], t[2], t[1], t[2]))
        for nm in node.names:
            sub = self.nodes.get(nm)
            if sub is not None:
                out |= self._precedent_rects(sub, seen)
        return out

    def trace(self, address) -> tuple[set, set]:
        if self._stale:
            self.recalculate()
        key = self.locate(address)
        s, r, c = key
        precedents: set = set()
        node = self.nodes.get(key)
        if node is not None:
            precedents = self._precedent_rects(node)
        dependents = set()
        for a in self._anchors:
            if any(_contains(rect, s, r, c) for rect in self._precedent_rects(self.nodes[a])):
                dependents.add(a)
        return (
            {self.rect_text(rect) for rect in precedents},
            {self.address_text(a) for a in dependents},
        )

    def trace_sorted(self, address) -> tuple[list[str], list[str]]:
        key = self.locate(address)
        prec, dep = self.trace(key)
        node = self.nodes.get(key)
        prec_rects = sorted(self._precedent_rects(node)) if node is not None else []
        dep_keys = sorted(self.locate(d) for d in dep)
        return [self.rect_text(r) for r in prec_rects], [self.address_text(k) for k in dep_keys]

    def cells_with_errors(self) -> list[tuple[CellKey, ErrorValue]]:
        out = []
        for s, sheet in enumerate(self.sheets):
            keys = set((s, r, c) for (r, c) in sheet.cells) | {k for k in self._covered if k[0] == s}
            for k in sorted(keys):
                v = self._display(*k)
                if isinstance(v, ErrorValue):
                    out.append((k, v))
        return out


def _is_reference(n: Node) -> bool:
    return isinstance(n, (CellRef, RangeRef, NameRef, SpillRef, TableColumnRef))


# ---------------------------------------------------------------------------
# module-level entry points
# ---------------------------------------------------------------------------


def recalculate_full(workbook: Workbook) -> CalcReport:
    return workbook.recalculate()


def apply_edit(workbook: Workbook, address, new_content) -> CalcReport:
    return workbook.apply_edit(address, new_content)


def trace(workbook: Workbook, address) -> tuple[set, set]:
    return workbook.trace(address)


def resolve_reference(workbook: Workbook, ref: Union[str, Node], sheet: int = 0) -> Value:
    """Evaluate a reference expression (``demand#``, ``Sales[units]``, ``A1:B2``...)."""
    if isinstance(ref, str):
        ref = parse_formula(ref)
    return collapse(workbook._eval(ref, sheet))
