"""Spreadsheet engine with dynamic-array spill semantics."""

from .engine import CalcReport, Workbook, apply_edit, place_spill, recalculate_full, resolve_reference, trace
from .parser import ParseError, LexError, parse_formula, render_formula
from .values import Array, Date, ErrorKind, ErrorValue
from .workbook_io import (
    LoadError,
    TableData,
    dump_formula_map,
    dump_spill_map,
    dump_values,
    ingest_csv,
    load_workbook,
    parse_workbook,
)

__all__ = [
    "Array",
    "CalcReport",
    "Date",
    "ErrorKind",
    "ErrorValue",
    "LexError",
    "LoadError",
    "ParseError",
    "TableData",
    "Workbook",
    "apply_edit",
    "dump_formula_map",
    "dump_spill_map",
    "dump_values",
    "ingest_csv",
    "load_workbook",
    "parse_formula",
    "parse_workbook",
    "place_spill",
    "recalculate_full",
    "render_formula",
    "resolve_reference",
    "trace",
]
__version__ = "0.1.0"
