"""Scalar and array values, the error lattice, date serials and broadcasting."""

from __future__ import annotations

import datetime
import enum
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence, Union


class ErrorKind(enum.Enum):
    SPILL = "#SPILL!"
    NAME = "#NAME?"
    REF = "#REF!"
    VALUE = "#VALUE!"
    NA = "#N/A"
    DIV0 = "#DIV/0!"
    NUM = "#NUM!"
    CALC = "#CALC!"
    CIRC = "#CIRC!"


_ERROR_BY_TEXT = {k.value: k for k in ErrorKind}


@dataclass(frozen=True)
class ErrorValue:
    """An error scalar. Two errors are equal when their kinds match."""

    kind: ErrorKind
    detail: str = field(default="", compare=False)

    def __str__(self) -> str:
        return self.kind.value

    @classmethod
    def parse(cls, text: str) -> ErrorValue | None:
        kind = _ERROR_BY_TEXT.get(text.strip().upper())
        return cls(kind) if kind is not None else None


def err(kind: ErrorKind, detail: str = "") -> ErrorValue:
    return ErrorValue(kind, detail)


class Date(float):
    """A number tagged as a day serial so dumps render it as a calendar date."""

    __slots__ = ()

    def __repr__(self) -> str:
        return f"Date({float(self)!r})"


Scalar = Union[float, str, bool, ErrorValue]


class Array:
    """Rectangular row-major block of scalars, at least 1x1."""

    __slots__ = ("rows", "cols", "cells")

    def __init__(self, rows: int, cols: int, cells: Sequence[Scalar]):
        if rows < 1 or cols < 1:
            raise ValueError(f"array must be at least 1x1, got {rows}x{cols}")
        cells = tuple(cells)
        if len(cells) != rows * cols:
            raise ValueError(f"{rows}x{cols} array needs {rows * cols} cells, got {len(cells)}")
        self.rows = rows
        self.cols = cols
        self.cells = cells

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[Scalar]]) -> Array:
        width = len(rows[0]) if rows else 0
        if any(len(r) != width for r in rows):
            raise ValueError("ragged rows")
        return cls(len(rows), width, [c for r in rows for c in r])

    @classmethod
    def column(cls, values: Sequence[Scalar]) -> Array:
        return cls(len(values), 1, values)

    @classmethod
    def row(cls, values: Sequence[Scalar]) -> Array:
        return cls(1, len(values), values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def get(self, i: int, j: int) -> Scalar:
        return self.cells[i * self.cols + j]

    def to_rows(self) -> list[list[Scalar]]:
        c = self.cols
        return [list(self.cells[i * c:(i + 1) * c]) for i in range(self.rows)]

    def column_values(self, j: int) -> list[Scalar]:
        return [self.cells[i * self.cols + j] for i in range(self.rows)]

    def row_values(self, i: int) -> list[Scalar]:
        return list(self.cells[i * self.cols:(i + 1) * self.cols])

    def __iter__(self) -> Iterator[Scalar]:
        return iter(self.cells)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Array):
            return NotImplemented
        return self.shape == other.shape and _cells_equal(self.cells, other.cells)

    def __hash__(self) -> int:
        return hash((self.rows, self.cols))

    def __repr__(self) -> str:
        return f"Array({self.rows}x{self.cols}, {self.to_rows()!r})"


Value = Union[Scalar, Array]


def _cells_equal(a: Sequence[Scalar], b: Sequence[Scalar]) -> bool:
    # bool is an int subclass, so True == 1.0 would otherwise pass
    return all(type(x) is type(y) or (is_number(x) and is_number(y)) for x, y in zip(a, b)) and all(
        x == y for x, y in zip(a, b)
    )


# ---------------------------------------------------------------------------
# scalar helpers
# ---------------------------------------------------------------------------


def is_number(v: object) -> bool:
    return isinstance(v, float)


def is_error(v: object) -> bool:
    return isinstance(v, ErrorValue)


def number(x: float) -> float | ErrorValue:
    """Build a Number, mapping NaN/Inf to #NUM!."""
    x = float(x)
    if math.isfinite(x):
        return x
    return err(ErrorKind.NUM, "non-finite result")


def same_scalar(a: Scalar, b: Scalar) -> bool:
    return _cells_equal((a,), (b,))


def as_array(v: Value) -> Array:
    if isinstance(v, Array):
        return v
    return Array(1, 1, (v,))


def collapse(v: Value) -> Value:
    """A 1x1 array and its sole scalar are interchangeable; prefer the scalar."""
    if isinstance(v, Array) and v.rows == 1 and v.cols == 1:
        return v.cells[0]
    return v


def values_equal(a: Value, b: Value) -> bool:
    a, b = collapse(a), collapse(b)
    if isinstance(a, Array) or isinstance(b, Array):
        return isinstance(a, Array) and isinstance(b, Array) and a == b
    return same_scalar(a, b)


_NUMERIC_TEXT = re.compile(r"\s*[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?\s*\Z")


def looks_numeric(text: str) -> bool:
    return _NUMERIC_TEXT.match(text) is not None


def coerce_to_number(s: Scalar) -> float | ErrorValue:
    if isinstance(s, ErrorValue):
        return s
    if isinstance(s, bool):
        return 1.0 if s else 0.0
    if isinstance(s, float):
        return s
    if isinstance(s, str) and looks_numeric(s):
        return number(float(s))
    return err(ErrorKind.VALUE, f"not a number: {s!r}")


def format_number(x: float) -> str:
    """Shortest text that parses back to exactly ``x``."""
    if x == 0:
        return "0"
    if x.is_integer() and abs(x) < 1e16:
        return str(int(x))
    text = repr(float(x))
    if "e" in text:
        mantissa, exp = text.split("e")
        exp_i = int(exp)
        text = f"{mantissa}e{'-' if exp_i < 0 else '+'}{abs(exp_i)}"
    return text


def to_text(s: Scalar) -> str | ErrorValue:
    """Stringify for the ``&`` operator."""
    if isinstance(s, ErrorValue):
        return s
    if isinstance(s, bool):
        return "TRUE" if s else "FALSE"
    if isinstance(s, float):
        return format_number(s)
    return s


def type_rank(s: Scalar) -> int:
    if isinstance(s, bool):
        return 2
    if isinstance(s, float):
        return 0
    if isinstance(s, str):
        return 1
    return 3


def fold(text: str) -> str:
    return text.casefold()


def sort_key(s: Scalar) -> tuple:
    """Total order: numbers < text (case-folded) < FALSE < TRUE < errors."""
    rank = type_rank(s)
    if rank == 0:
        return (0, s)
    if rank == 1:
        return (1, fold(s))
    if rank == 2:
        return (2, int(s))
    return (3, s.kind.value)


def identity_key(s: Scalar) -> tuple:
    """Hashable key under which equal scalars (text case-insensitively) collide."""
    if isinstance(s, bool):
        return ("b", s)
    if isinstance(s, float):
        return ("n", s + 0.0)
    if isinstance(s, str):
        return ("t", fold(s))
    return ("e", s.kind)


def truthy(s: Scalar) -> bool | ErrorValue:
    if isinstance(s, ErrorValue):
        return s
    if isinstance(s, bool):
        return s
    if isinstance(s, float):
        return s != 0
    if fold(s) == "true":
        return True
    if fold(s) == "false":
        return False
    return err(ErrorKind.VALUE, f"not a condition: {s!r}")


# ---------------------------------------------------------------------------
# dates
# ---------------------------------------------------------------------------

EPOCH = datetime.date(1899, 12, 30)


def to_serial(d: datetime.date) -> int:
    return (d - EPOCH).days


def from_serial(n: int) -> datetime.date:
    return EPOCH + datetime.timedelta(days=int(n))


def date_value(d: datetime.date) -> Date:
    return Date(to_serial(d))


_ISO_DATE = re.compile(r"(\d{4})-(\d{2})-(\d{2})\Z")


def parse_iso_date(text: str) -> datetime.date | None:
    m = _ISO_DATE.match(text.strip())
    if not m:
        return None
    try:
        return datetime.date(int(m[1]), int(m[2]), int(m[3]))
    except ValueError:
        return None


def format_date(x: float) -> str | None:
    if not x.is_integer():
        return None
    try:
        return from_serial(int(x)).isoformat()
    except (OverflowError, ValueError):
        return None


# ---------------------------------------------------------------------------
# broadcasting
# ---------------------------------------------------------------------------


def broadcast_shape(a_rows: int, a_cols: int, b_rows: int, b_cols: int) -> tuple[int, int]:
    return max(a_rows, b_rows), max(a_cols, b_cols)


_NA_FILL = ErrorValue(ErrorKind.NA, "outside broadcast operand")


def _index_map(dim: int, out: int) -> list[int]:
    if dim == out:
        return list(range(out))
    if dim == 1:
        return [0] * out
    return [i if i < dim else -1 for i in range(out)]


def broadcast(arrays: Sequence[Array]) -> tuple[int, int, Callable[[int, int], list[Scalar]]]:
    """Joint broadcast of several arrays.

    Returns the result shape and a getter yielding the per-operand scalars at
    (i, j); operands that do not reach (i, j) contribute #N/A.
    """
    rows = max(a.rows for a in arrays)
    cols = max(a.cols for a in arrays)
    rmaps = [_index_map(a.rows, rows) for a in arrays]
    cmaps = [_index_map(a.cols, cols) for a in arrays]

    def at(i: int, j: int) -> list[Scalar]:
        out = []
        for a, rm, cm in zip(arrays, rmaps, cmaps):
            ri, cj = rm[i], cm[j]
            out.append(_NA_FILL if ri < 0 or cj < 0 else a.cells[ri * a.cols + cj])
        return out

    return rows, cols, at


def lift(fn: Callable[..., Scalar], *args: Value) -> Value:
    """Apply a scalar function elementwise over jointly broadcast arguments."""
    if not any(isinstance(a, Array) for a in args):
        return fn(*args)
    arrays = [as_array(a) for a in args]
    rows, cols, at = broadcast(arrays)
    return collapse(Array(rows, cols, [fn(*at(i, j)) for i in range(rows) for j in range(cols)]))


# ---------------------------------------------------------------------------
# binary operators
# ---------------------------------------------------------------------------

ARITHMETIC = ("+", "-", "*", "/", "^")
COMPARISON = ("=", "<>", "<", "<=", ">", ">=")
BINARY_OPS = ARITHMETIC + ("&",) + COMPARISON


def _arith(op: str, a: float, b: float) -> Scalar:
    if op == "+":
        r = a + b
    elif op == "-":
        r = a - b
    elif op == "*":
        r = a * b
    elif op == "/":
        if b == 0:
            return err(ErrorKind.DIV0)
        r = a / b
    else:
        if a == 0 and b <= 0:
            return err(ErrorKind.NUM if b == 0 else ErrorKind.DIV0)
        try:
            r = math.pow(a, b)
        except (ValueError, OverflowError):
            return err(ErrorKind.NUM)
    return number(r)


def _compare(op: str, a: Scalar, b: Scalar) -> bool:
    ka, kb = sort_key(a), sort_key(b)
    if op == "=":
        return ka == kb
    if op == "<>":
        return ka != kb
    if op == "<":
        return ka < kb
    if op == "<=":
        return ka <= kb
    if op == ">":
        return ka > kb
    return ka >= kb


def scalar_binary(op: str, a: Scalar, b: Scalar) -> Scalar:
    if isinstance(a, ErrorValue):
        return a
    if isinstance(b, ErrorValue):
        return b
    if op in COMPARISON:
        return _compare(op, a, b)
    if op == "&":
        return to_text(a) + to_text(b)
    x, y = coerce_to_number(a), coerce_to_number(b)
    if isinstance(x, ErrorValue):
        return x
    if isinstance(y, ErrorValue):
        return y
    r = _arith(op, x, y)
    # date +/- offset keeps the date tag; date - date is a plain day count
    if op in "+-" and isinstance(r, float):
        da, db = isinstance(a, Date), isinstance(b, Date)
        if da != db and (op == "+" or da):
            return Date(r)
    return r


def elementwise_binary(op: str, a: Value, b: Value) -> Value:
    if op not in BINARY_OPS:
        raise ValueError(f"unknown operator {op!r}")
    if not isinstance(a, Array) and not isinstance(b, Array):
        return scalar_binary(op, a, b)
    A, B = as_array(a), as_array(b)
    rows, cols = broadcast_shape(A.rows, A.cols, B.rows, B.cols)
    if A.shape == B.shape:
        cells = [scalar_binary(op, x, y) for x, y in zip(A.cells, B.cells)]
    else:
        _, _, at = broadcast((A, B))
        cells = [scalar_binary(op, *at(i, j)) for i in range(rows) for j in range(cols)]
    return collapse(Array(rows, cols, cells))


def scalar_negate(s: Scalar) -> Scalar:
    x = coerce_to_number(s)
    if isinstance(x, ErrorValue):
        return x
    return -x + 0.0


def scalar_plus(s: Scalar) -> Scalar:
    return s


def render_scalar(s: Scalar) -> str:
    """Canonical display text used by dumps."""
    if isinstance(s, ErrorValue):
        return s.kind.value
    if isinstance(s, bool):
        return "TRUE" if s else "FALSE"
    if isinstance(s, Date):
        text = format_date(s)
        if text is not None:
            return text
        return format_number(s)
    if isinstance(s, float):
        return format_number(s)
    return s
