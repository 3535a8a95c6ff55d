"""Text workbook format, CSV table ingestion and byte-exact dumps.

A workbook file is a list of line statements::

    # comment
    sheet Data
    cell A1 value "header"
    cell B2 formula =SUM(A1:A9)
    name rate ref Data!B1
    name accumulate formula =SIGN(SEQUENCE(1,12)<SEQUENCE(12,1))
    table Sales at Data!D7 from sales.csv

Cell statements attach to the most recent ``sheet``. Table paths are relative
to the workbook file.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from .engine import CellBinding, Formula, FormulaBinding, RangeBinding, Workbook
from .parser import ParseError, col_to_letters, is_cell_address, parse_address, parse_formula, render_sheet
from .values import (
    Date,
    ErrorValue,
    Scalar,
    date_value,
    format_date,
    format_number,
    looks_numeric,
    parse_iso_date,
    render_scalar,
)

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*\Z")
_TABLE_STMT = re.compile(r"table\s+(\S+)\s+at\s+(.+?)\s+from\s+(.+)\Z")


class LoadError(ValueError):
    """A workbook or CSV file could not be loaded."""

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.message = message
        self.line = line
        self.path = path
        where = path or "<workbook>"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}")


@dataclass
class TableData:
    name: str
    headers: list[str]
    columns: list[list[Scalar]] = field(default_factory=list)

    @property
    def nrows(self) -> int:
        return len(self.columns[0]) if self.columns else 0

    def column(self, header: str) -> list[Scalar]:
        folded = header.casefold()
        for h, col in zip(self.headers, self.columns):
            if h.casefold() == folded:
                return col
        raise KeyError(header)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _infer_column(raw: list[str]) -> list[Scalar]:
    if not raw or any(s == "" for s in raw):
        return list(raw)
    if all(looks_numeric(s) for s in raw):
        return [float(s) for s in raw]
    dates = [parse_iso_date(s.strip()) for s in raw]
    if all(d is not None for d in dates):
        return [date_value(d) for d in dates]
    upper = [s.strip().upper() for s in raw]
    if all(u in ("TRUE", "FALSE") for u in upper):
        return [u == "TRUE" for u in upper]
    return list(raw)


def parse_csv(text: str, name: str = "Table", source: Optional[str] = None) -> TableData:
    rows = list(csv.reader(io.StringIO(text, newline="")))
    if not rows:
        raise LoadError("CSV has no header row", path=source)
    headers = rows[0]
    seen: set[str] = set()
    for j, h in enumerate(headers):
        if h.strip() == "":
            raise LoadError(f"empty header in column {j + 1}", line=1, path=source)
        if h.casefold() in seen:
            raise LoadError(f"duplicate header {h!r}", line=1, path=source)
        seen.add(h.casefold())
    body = rows[1:]
    for i, row in enumerate(body, start=2):
        if len(row) != len(headers):
            raise LoadError(f"row {i} has {len(row)} fields, header has {len(headers)}", line=i, path=source)
    columns = [_infer_column([row[j] for row in body]) for j in range(len(headers))]
    return TableData(name, list(headers), columns)


def ingest_csv(path: Union[str, Path], name: Optional[str] = None) -> TableData:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise LoadError(f"cannot read CSV: {e.strerror or e}", path=str(path)) from e
    return parse_csv(text, name or path.stem, source=str(path))


def _csv_field(v: Scalar) -> str:
    if isinstance(v, Date):
        return format_date(v) or format_number(v)
    return render_scalar(v)


def table_to_csv(table: TableData) -> str:
    out = io.StringIO(newline="")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(table.headers)
    for i in range(table.nrows):
        writer.writerow([_csv_field(col[i]) for col in table.columns])
    return out.getvalue()


# ---------------------------------------------------------------------------
# workbook files
# ---------------------------------------------------------------------------


def parse_literal(text: str) -> Scalar:
    """Literal syntax of ``cell ... value``: quoted text, booleans, numbers, ISO dates, errors, bare text."""
    text = text.strip()
    if len(text) >= 2 and text.startswith('"') and text.endswith('"'):
        return text[1:-1].replace('""', '"')
    upper = text.upper()
    if upper in ("TRUE", "FALSE"):
        return upper == "TRUE"
    if looks_numeric(text):
        return float(text)
    d = parse_iso_date(text)
    if d is not None:
        return date_value(d)
    e = ErrorValue.parse(text)
    if e is not None:
        return e
    return text


def render_literal(v: Scalar) -> str:
    if isinstance(v, str):
        return '"' + v.replace('"', '""') + '"'
    return render_scalar(v)


def _split(line: str, n: int) -> list[str]:
    return line.split(None, n)


def parse_workbook(text: str, base_dir: Union[str, Path] = ".", source: Optional[str] = None) -> Workbook:
    base_dir = Path(base_dir)
    wb = Workbook()
    current: Optional[int] = None
    seen_cells: set = set()
    deferred: list = []

    def fail(msg: str, lineno: int):
        raise LoadError(msg, line=lineno, path=source)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        kind = line.split(None, 1)[0]
        if kind == "sheet":
            name = line[len("sheet"):].strip()
            if not name:
                fail("sheet statement needs a name", lineno)
            try:
                current = wb.add_sheet(name)
            except ValueError as e:
                fail(str(e), lineno)
        elif kind == "cell":
            parts = _split(line, 3)
            if len(parts) < 3 or parts[2] not in ("value", "formula"):
                fail("expected: cell <A1> value|formula <content>", lineno)
            if current is None:
                fail("cell statement before any sheet statement", lineno)
            body = parts[3] if len(parts) > 3 else ""
            try:
                addr = parse_address(parts[1])
            except ValueError as e:
                fail(str(e), lineno)
            if addr.sheet is not None:
                fail("cell addresses are relative to the current sheet", lineno)
            key = (current, addr.row, addr.col)
            if key in seen_cells:
                fail(f"duplicate cell {addr.a1()}", lineno)
            seen_cells.add(key)
            if parts[2] == "value":
                wb.set_cell(key, parse_literal(body))
            else:
                if not body.startswith("="):
                    fail("formula must start with '='", lineno)
                try:
                    ast = parse_formula(body[1:])
                except ParseError as e:
                    fail(f"ParseError: {e}", lineno)
                wb.set_cell(key, Formula(ast))
        elif kind in ("name", "table"):
            deferred.append((lineno, kind, line))
        else:
            fail(f"unknown statement {kind!r}", lineno)

    for lineno, kind, line in (d for d in deferred if d[1] == "table"):
        m = _TABLE_STMT.match(line)
        if not m:
            fail("expected: table <Name> at <Sheet>!<A1> from <csv-path>", lineno)
        tname, where, rel = m[1], m[2], m[3].strip()
        if not _IDENT.match(tname):
            fail(f"invalid table name {tname!r}", lineno)
        try:
            s, r, c = wb.locate(where)
        except (ValueError, KeyError) as e:
            fail(str(e).strip('"'), lineno)
        data = ingest_csv(base_dir / rel, tname)
        try:
            wb.add_table(tname, s, r, c, data.headers, data.columns)
        except ValueError as e:
            fail(str(e), lineno)

    for lineno, kind, line in (d for d in deferred if d[1] == "name"):
        parts = _split(line, 3)
        if len(parts) < 4 or parts[2] not in ("ref", "formula"):
            fail("expected: name <ident> ref|formula <target>", lineno)
        ident, how, body = parts[1], parts[2], parts[3]
        if not _IDENT.match(ident) or is_cell_address(ident) or ident.upper() in ("TRUE", "FALSE"):
            fail(f"invalid name {ident!r}", lineno)
        if ident.casefold() in wb.names or ident.casefold() in wb.tables:
            fail(f"duplicate name {ident!r}", lineno)
        if how == "ref":
            binding = _name_target(wb, body, lineno, fail)
        else:
            if not body.startswith("="):
                fail("formula must start with '='", lineno)
            try:
                binding = FormulaBinding(parse_formula(body[1:]))
            except ParseError as e:
                fail(f"ParseError: {e}", lineno)
        wb.define_name(ident, binding)

    wb.recalculate()
    return wb


def _name_target(wb: Workbook, body: str, lineno: int, fail):
    body = body.strip()
    start, sep, end = body.partition(":")
    try:
        a = wb.locate(start)
        if not sep:
            return CellBinding(*a)
        b = wb.locate(parse_address(end, sheet=parse_address(start).sheet))
    except (ValueError, KeyError) as e:
        fail(str(e).strip('"'), lineno)
    return RangeBinding(a[0], min(a[1], b[1]), min(a[2], b[2]), max(a[1], b[1]), max(a[2], b[2]))


def load_workbook(path: Union[str, Path]) -> Workbook:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise LoadError(f"cannot read workbook: {e.strerror or e}", path=str(path)) from e
    return parse_workbook(text, base_dir=path.parent, source=str(path))


def table_data(wb: Workbook, name: str) -> TableData:
    """Read a table's current contents back out of the grid."""
    t = wb.tables[name.casefold()]
    cells = wb.sheets[t.sheet].cells
    columns = [[cells.get((t.row + 1 + i, t.col + j), "") for i in range(t.nrows)] for j in range(len(t.headers))]
    return TableData(t.name, list(t.headers), columns)


def dump_workbook(wb: Workbook, path: Union[str, Path]) -> list[Path]:
    """Write ``wb`` as a workbook file plus one CSV per table; returns the paths written."""
    path = Path(path)
    written = []
    in_table: set = set()
    table_lines = []
    for t in wb.tables.values():
        s, top, left, bottom, right = t.rect()
        for r in range(top, bottom + 1):
            for c in range(left, right + 1):
                in_table.add((s, r, c))
        csv_path = path.with_name(f"{path.stem}.{t.name}.csv")
        csv_path.write_text(table_to_csv(table_data(wb, t.name)), encoding="utf-8", newline="")
        written.append(csv_path)
        table_lines.append(
            f"table {t.name} at {render_sheet(wb.sheets[t.sheet].name)}!{col_to_letters(t.col)}{t.row} from {csv_path.name}"
        )
    lines = []
    for s, sheet in enumerate(wb.sheets):
        lines.append(f"sheet {sheet.name}")
        for (r, c) in sorted(sheet.cells):
            if (s, r, c) in in_table:
                continue
            content = sheet.cells[(r, c)]
            addr = f"{col_to_letters(c)}{r}"
            if isinstance(content, Formula):
                lines.append(f"cell {addr} formula {content.text}")
            else:
                lines.append(f"cell {addr} value {render_literal(content)}")
    lines.extend(table_lines)
    for nd in wb.names.values():
        b = nd.binding
        if isinstance(b, CellBinding):
            lines.append(f"name {nd.name} ref {wb.address_text((b.sheet, b.row, b.col))}")
        elif isinstance(b, RangeBinding):
            lines.append(f"name {nd.name} ref {wb.rect_text((b.sheet, b.top, b.left, b.bottom, b.right))}")
        else:
            lines.append(f"name {nd.name} formula {Formula(b.ast).text}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="")
    written.insert(0, path)
    return written


# ---------------------------------------------------------------------------
# dumps
# ---------------------------------------------------------------------------


def _sheet_arg(wb: Workbook, sheet: Union[str, int, None]) -> int:
    if sheet is None:
        if not wb.sheets:
            raise KeyError("workbook has no sheets")
        return 0
    if isinstance(sheet, int):
        if not 0 <= sheet < len(wb.sheets):
            raise KeyError(f"no sheet at index {sheet}")
        return sheet
    s = wb.sheet_index(sheet)
    if s is None:
        raise KeyError(f"unknown sheet {sheet!r}")
    return s


def dump_values(wb: Workbook, sheet: Union[str, int, None] = None) -> str:
    if sheet is None and not wb.sheets:
        return ""
    s = _sheet_arg(wb, sheet)
    rows, cols = wb.used_extent(s)
    out = []
    for r in range(1, rows + 1):
        fields = []
        for c in range(1, cols + 1):
            v = wb._display(s, r, c)
            fields.append("" if v is None else render_scalar(v))
        out.append("\t".join(fields) + "\n")
    return "".join(out)


def dump_formula_map(wb: Workbook, sheet: Union[str, int, None] = None) -> str:
    if sheet is None and not wb.sheets:
        return ""
    s = _sheet_arg(wb, sheet)
    out = []
    for key in wb.formula_cells(s):
        rows, cols = wb.spill_extent(key) or (1, 1)
        content = wb.sheets[s].cells[(key[1], key[2])]
        out.append(f"{col_to_letters(key[2])}{key[1]}\t{rows}x{cols}\t{content.text}\n")
    return "".join(out)


def dump_spill_map(wb: Workbook) -> str:
    out = []
    for key in wb.formula_cells():
        st = wb.spill_status(key)
        if st is None:
            continue
        if st[0] == "ok":
            out.append(f"{wb.address_text(key)} {st[1]}x{st[2]} ok\n")
        else:
            blocker = {"out of bounds": "bounds"}.get(st[1], st[1])
            out.append(f"{wb.address_text(key)} 1x1 SPILL:{blocker}\n")
    return "".join(out)


def dump_all(wb: Workbook) -> str:
    """Every sheet's values and formula map plus the spill map, for equality checks."""
    parts = []
    for s, sheet in enumerate(wb.sheets):
        parts.append(f"== {sheet.name} values\n{dump_values(wb, s)}")
        parts.append(f"== {sheet.name} formulas\n{dump_formula_map(wb, s)}")
    parts.append(f"== spills\n{dump_spill_map(wb)}")
    return "".join(parts)
