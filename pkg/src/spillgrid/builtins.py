"""Function registry and the builtin library.

Every parameter has a mode.  ScalarLifting parameters that receive arrays
broadcast the whole call elementwise (jointly across all lifted parameters);
ArrayConsuming parameters take the value whole; ReferenceLike parameters take
the grid rectangle itself and reject plain values.
"""

from __future__ import annotations

import calendar
import datetime
import enum
from dataclasses import dataclass
from typing import Callable, Optional, Protocol, Sequence

from .values import (
    Array,
    Date,
    ErrorKind,
    ErrorValue,
    Scalar,
    Value,
    as_array,
    coerce_to_number,
    collapse,
    err,
    from_serial,
    fold,
    identity_key,
    lift,
    looks_numeric,
    sort_key,
    to_serial,
    truthy,
)


class Mode(enum.Enum):
    LIFT = "ScalarLifting"
    ARRAY = "ArrayConsuming"
    REF = "ReferenceLike"


@dataclass(frozen=True)
class Reference:
    """A rectangle of grid cells, 1-based and inclusive."""

    sheet: int
    top: int
    left: int
    bottom: int
    right: int

    @property
    def rows(self) -> int:
        return self.bottom - self.top + 1

    @property
    def cols(self) -> int:
        return self.right - self.left + 1


@dataclass(frozen=True)
class SliceView:
    """Marks an array for per-column or per-row aggregation."""

    array: Array
    by: str  # "col" | "row"

    def slices(self) -> list[Array]:
        a = self.array
        if self.by == "col":
            return [Array.column(a.column_values(j)) for j in range(a.cols)]
        return [Array.row(a.row_values(i)) for i in range(a.rows)]


class GridContext(Protocol):
    def is_formula(self, sheet: int, row: int, col: int) -> bool: ...

    def read(self, ref: Reference) -> Value: ...


@dataclass(frozen=True)
class FunctionSignature:
    name: str
    min_args: int
    max_args: Optional[int]
    modes: tuple
    impl: Callable
    repeat: tuple = ()
    aggregator: bool = False
    self_lifting: bool = False
    needs_context: bool = False

    def mode(self, index: int) -> Mode:
        if index < len(self.modes):
            return self.modes[index]
        if self.repeat:
            return self.repeat[(index - len(self.modes)) % len(self.repeat)]
        return self.modes[-1]


REGISTRY: dict[str, FunctionSignature] = {}


def register(name: str, min_args: int, max_args: Optional[int], modes: Sequence[Mode], **kw):
    def deco(fn):
        REGISTRY[name] = FunctionSignature(name, min_args, max_args, tuple(modes), fn, **kw)
        return fn

    return deco


L, A, R = Mode.LIFT, Mode.ARRAY, Mode.REF


def dispatch(name: str, args: Sequence, ctx: GridContext | None = None) -> Value | SliceView:
    sig = REGISTRY.get(name.upper())
    if sig is None:
        return err(ErrorKind.NAME, f"unknown function {name}")
    n = len(args)
    if n < sig.min_args or (sig.max_args is not None and n > sig.max_args):
        return err(ErrorKind.VALUE, f"{sig.name} takes {_arity_text(sig)} arguments, got {n}")
    prepared = []
    for i, a in enumerate(args):
        mode = sig.mode(i)
        if mode is R:
            if not isinstance(a, Reference):
                return err(ErrorKind.VALUE, f"{sig.name} needs a reference")
        elif isinstance(a, Reference):
            if ctx is None:
                return err(ErrorKind.REF, "no grid to read from")
            a = ctx.read(a)
        if isinstance(a, SliceView) and not sig.aggregator:
            a = a.array
        prepared.append(a)
    if sig.needs_context:
        return sig.impl(ctx, *prepared)
    lifted = [i for i, a in enumerate(prepared) if sig.mode(i) is L and isinstance(a, Array)]
    if sig.self_lifting or not lifted:
        return sig.impl(*prepared)

    def per_cell(*scalars):
        call_args = list(prepared)
        for i, s in zip(lifted, scalars):
            call_args[i] = s
        out = collapse(sig.impl(*call_args))
        if isinstance(out, Array):
            return err(ErrorKind.CALC, "nested array")
        return out

    return lift(per_cell, *(prepared[i] for i in lifted))


def _arity_text(sig: FunctionSignature) -> str:
    if sig.max_args is None:
        return f"at least {sig.min_args}"
    if sig.max_args == sig.min_args:
        return str(sig.min_args)
    return f"{sig.min_args}..{sig.max_args}"


def _scalar_arg(v: Value) -> Scalar:
    v = collapse(v)
    if isinstance(v, Array):
        return err(ErrorKind.VALUE, "expected a single value")
    return v


def _int_arg(v: Value) -> int | ErrorValue:
    s = _scalar_arg(v)
    x = coerce_to_number(s)
    if isinstance(x, ErrorValue):
        return x
    return int(x)  # truncates toward zero


# ---------------------------------------------------------------------------
# aggregators
# ---------------------------------------------------------------------------


def _numbers(args: Sequence[Value]) -> list[float] | ErrorValue:
    out: list[float] = []
    for a in args:
        if isinstance(a, Array):
            for c in a.cells:
                if isinstance(c, ErrorValue):
                    return c
                if isinstance(c, float):
                    out.append(c)
        else:
            x = coerce_to_number(a)
            if isinstance(x, ErrorValue):
                return x
            out.append(x)
    return out


def _logicals(args: Sequence[Value]) -> list[bool] | ErrorValue:
    out: list[bool] = []
    for a in args:
        if isinstance(a, Array):
            for c in a.cells:
                if isinstance(c, ErrorValue):
                    return c
                if isinstance(c, (bool, float)):
                    out.append(bool(c))
        else:
            t = truthy(a)
            if isinstance(t, ErrorValue):
                return t
            out.append(t)
    return out


def _sum(xs: list[float]) -> Scalar:
    total = 0.0
    for x in xs:
        total += x
    return total


def _product(xs: list[float]) -> Scalar:
    if not xs:
        return 0.0
    p = 1.0
    for x in xs:
        p *= x
    return p


def _reducer(collect, reduce):
    def agg(*args):
        views = [a for a in args if isinstance(a, SliceView)]
        if not views:
            return _reduce_once(collect, reduce, args)
        by = views[0].by
        if any(v.by != by for v in views):
            return err(ErrorKind.VALUE, "mixed BYCOLUMN/BYROW")
        count = len(views[0].slices())
        sliced = [a.slices() if isinstance(a, SliceView) else None for a in args]
        if any(s is not None and len(s) != count for s in sliced):
            return err(ErrorKind.VALUE, "slice counts differ")
        results = []
        for k in range(count):
            part = [s[k] if s is not None else a for a, s in zip(args, sliced)]
            results.append(_reduce_once(collect, reduce, part))
        return collapse(Array.row(results) if by == "col" else Array.column(results))

    return agg


def _reduce_once(collect, reduce, args):
    items = collect(args)
    if isinstance(items, ErrorValue):
        return items
    return reduce(items)


def _and(bs: list[bool]) -> Scalar:
    if not bs:
        return err(ErrorKind.VALUE, "no logical values")
    return all(bs)


def _or(bs: list[bool]) -> Scalar:
    if not bs:
        return err(ErrorKind.VALUE, "no logical values")
    return any(bs)


for _name, _collect, _reduce in (
    ("SUM", _numbers, _sum),
    ("PRODUCT", _numbers, _product),
    ("MIN", _numbers, lambda xs: min(xs) if xs else 0.0),
    ("MAX", _numbers, lambda xs: max(xs) if xs else 0.0),
    ("AND", _logicals, _and),
    ("OR", _logicals, _or),
):
    register(_name, 1, None, (A,), aggregator=True)(_reducer(_collect, _reduce))


def _kth(largest: bool):
    def fn(array, k):
        xs = _numbers([as_array(array)])
        if isinstance(xs, ErrorValue):
            return xs
        kk = coerce_to_number(k)
        if isinstance(kk, ErrorValue):
            return kk
        kk = int(kk)
        if kk < 1 or kk > len(xs):
            return err(ErrorKind.NUM, f"k={kk} outside 1..{len(xs)}")
        xs = sorted(xs, reverse=largest)
        return xs[kk - 1]

    return fn


register("SMALL", 2, 2, (A, L))(_kth(False))
register("LARGE", 2, 2, (A, L))(_kth(True))


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


@register("IF", 2, 3, (L, L, L))
def fn_if(cond, if_true, if_false=False):
    c = truthy(cond)
    if isinstance(c, ErrorValue):
        return c
    return if_true if c else if_false


@register("SIGN", 1, 1, (L,))
def fn_sign(x):
    v = coerce_to_number(x)
    if isinstance(v, ErrorValue):
        return v
    return 1.0 if v > 0 else (-1.0 if v < 0 else 0.0)


@register("EOMONTH", 2, 2, (L, L))
def fn_eomonth(start, months):
    s = coerce_to_number(start)
    if isinstance(s, ErrorValue):
        return s
    m = coerce_to_number(months)
    if isinstance(m, ErrorValue):
        return m
    s, m = int(s), int(m)
    if s < 0:
        return err(ErrorKind.NUM, "start before epoch")
    try:
        d = from_serial(s)
    except OverflowError:
        return err(ErrorKind.NUM, "start out of range")
    y, mo = divmod(d.month - 1 + m, 12)
    year = d.year + y
    if not 1 <= year <= 9999:
        return err(ErrorKind.NUM, "result out of range")
    last = calendar.monthrange(year, mo + 1)[1]
    serial = to_serial(datetime.date(year, mo + 1, last))
    if serial < 0:
        return err(ErrorKind.NUM, "result before epoch")
    return Date(serial)


# ---------------------------------------------------------------------------
# shape and array functions
# ---------------------------------------------------------------------------


@register("COLUMNS", 1, 1, (A,))
def fn_columns(v):
    if isinstance(v, ErrorValue):
        return v
    return float(as_array(v).cols)


@register("ROWS", 1, 1, (A,))
def fn_rows(v):
    if isinstance(v, ErrorValue):
        return v
    return float(as_array(v).rows)


MAX_SEQUENCE_CELLS = 5_000_000


@register("SEQUENCE", 1, 4, (A, A, A, A))
def fn_sequence(rows, cols=1.0, start=1.0, step=1.0):
    r, c = _int_arg(rows), _int_arg(cols)
    for v in (r, c):
        if isinstance(v, ErrorValue):
            return v
    if r < 1 or c < 1:
        return err(ErrorKind.VALUE, f"SEQUENCE needs at least 1x1, got {r}x{c}")
    if r * c > MAX_SEQUENCE_CELLS:
        return err(ErrorKind.NUM, "SEQUENCE too large")
    s = coerce_to_number(_scalar_arg(start))
    d = coerce_to_number(_scalar_arg(step))
    for v in (s, d):
        if isinstance(v, ErrorValue):
            return v
    return collapse(Array(r, c, [s + k * d for k in range(r * c)]))


@register("TRANSPOSE", 1, 1, (A,))
def fn_transpose(v):
    if not isinstance(v, Array):
        return v
    return collapse(Array(v.cols, v.rows, [v.get(i, j) for j in range(v.cols) for i in range(v.rows)]))


@register("UNIQUE", 1, 1, (A,))
def fn_unique(v):
    if not isinstance(v, Array):
        return v
    seen = set()
    rows = []
    for i in range(v.rows):
        row = v.row_values(i)
        key = tuple(identity_key(c) for c in row)
        if key not in seen:
            seen.add(key)
            rows.append(row)
    return collapse(Array.from_rows(rows))


@register("SORT", 1, 3, (A, A, A))
def fn_sort(v, sort_index=1.0, sort_order=1.0):
    idx, order = _int_arg(sort_index), _int_arg(sort_order)
    for x in (idx, order):
        if isinstance(x, ErrorValue):
            return x
    arr = as_array(v)
    if not 1 <= idx <= arr.cols:
        return err(ErrorKind.VALUE, f"sort index {idx} outside 1..{arr.cols}")
    if order not in (1, -1):
        return err(ErrorKind.VALUE, f"sort order must be 1 or -1, got {order}")
    rows = arr.to_rows()
    good = [r for r in rows if not isinstance(r[idx - 1], ErrorValue)]
    bad = [r for r in rows if isinstance(r[idx - 1], ErrorValue)]
    good.sort(key=lambda r: sort_key(r[idx - 1]), reverse=order == -1)
    return collapse(Array.from_rows(good + bad))


def _criteria_key(s: Scalar):
    if isinstance(s, ErrorValue):
        return None
    if isinstance(s, bool):
        return ("b", s)
    if isinstance(s, float):
        return ("n", s + 0.0)
    if looks_numeric(s):
        return ("n", float(s) + 0.0)
    return ("t", fold(s))


@register("SUMIFS", 3, None, (A, A, L), repeat=(A, L), self_lifting=True)
def fn_sumifs(sum_range, *pairs):
    if len(pairs) % 2:
        return err(ErrorKind.VALUE, "SUMIFS needs criteria_range/criterion pairs")
    values = as_array(sum_range).cells
    ranges = [as_array(r).cells for r in pairs[0::2]]
    criteria = pairs[1::2]
    for r in ranges:
        if len(r) != len(values):
            return err(ErrorKind.VALUE, f"criteria range has {len(r)} cells, sum range {len(values)}")
    # one pass over the data; each criteria combination is then a dict lookup
    groups: dict[tuple, list] = {}
    for k, v in enumerate(values):
        key = tuple(_criteria_key(r[k]) for r in ranges)
        if None in key:
            continue
        acc = groups.get(key)
        if acc is None:
            acc = groups[key] = [0.0, None]
        if acc[1] is not None:
            continue
        if isinstance(v, ErrorValue):
            acc[1] = v
        elif isinstance(v, float):
            acc[0] += v

    def one(*crit):
        for c in crit:
            if isinstance(c, ErrorValue):
                return c
        acc = groups.get(tuple(_criteria_key(c) for c in crit))
        if acc is None:
            return 0.0
        return acc[1] if acc[1] is not None else acc[0]

    return lift(one, *criteria)


@register("MMULT", 2, 2, (A, A))
def fn_mmult(a, b):
    A_, B_ = as_array(a), as_array(b)
    for c in A_.cells + B_.cells:
        if not isinstance(c, float):
            return err(ErrorKind.VALUE, "MMULT operands must be numeric")
    if A_.cols != B_.rows:
        return err(ErrorKind.VALUE, f"inner dimensions differ: {A_.rows}x{A_.cols} by {B_.rows}x{B_.cols}")
    n, k, m = A_.rows, A_.cols, B_.cols
    ac, bc = A_.cells, B_.cells
    out = []
    for i in range(n):
        row = ac[i * k:(i + 1) * k]
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += row[t] * bc[t * m + j]
            out.append(s)
    return collapse(Array(n, m, out))


@register("BYCOLUMN", 1, 1, (A,), aggregator=True)
def fn_bycolumn(v):
    return SliceView(as_array(v), "col")


@register("BYROW", 1, 1, (A,), aggregator=True)
def fn_byrow(v):
    return SliceView(as_array(v), "row")


@register("ISFORMULA", 1, 1, (R,), needs_context=True)
def fn_isformula(ctx, ref: Reference):
    if ctx is None:
        return err(ErrorKind.REF, "no grid to inspect")
    cells = [
        ctx.is_formula(ref.sheet, r, c)
        for r in range(ref.top, ref.bottom + 1)
        for c in range(ref.left, ref.right + 1)
    ]
    return collapse(Array(ref.rows, ref.cols, cells))


def is_aggregator(name: str) -> bool:
    sig = REGISTRY.get(name.upper())
    return sig is not None and sig.aggregator and name.upper() not in ("BYCOLUMN", "BYROW")


def signature(name: str) -> FunctionSignature | None:
    return REGISTRY.get(name.upper())
