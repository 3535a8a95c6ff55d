"""``spillgrid`` command line: eval, trace and lint.

Exit codes: 0 success, 1 lint found error cells, 2 usage or load failure.
Dumps go to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import sys
from collections import Counter
from pathlib import Path
from typing import Optional, Sequence

from .workbook_io import LoadError, dump_formula_map, dump_spill_map, dump_values, load_workbook

EXIT_OK, EXIT_ERRORS, EXIT_FAILURE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_FAILURE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spillgrid", description="Evaluate dynamic-array spreadsheet workbooks.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    ev = sub.add_parser("eval", help="recalculate a workbook and print a dump")
    ev.add_argument("path")
    ev.add_argument("--dump", choices=("values", "formulas", "spills"), default="values")
    ev.add_argument("--sheet", help="sheet to dump (default: first sheet)")
    ev.add_argument("--out", help="write the dump to this file instead of stdout")

    tr = sub.add_parser("trace", help="list precedents and dependents of a cell")
    tr.add_argument("path")
    tr.add_argument("cellref")

    li = sub.add_parser("lint", help="report cells holding error values")
    li.add_argument("path")
    return p


def _load(path: str):
    try:
        return load_workbook(path)
    except LoadError as e:
        print(f"spillgrid: {e}", file=sys.stderr)
        return None


def cmd_eval(path: str, dump: str = "values", sheet: Optional[str] = None, out: Optional[str] = None) -> int:
    wb = _load(path)
    if wb is None:
        return EXIT_FAILURE
    try:
        if dump == "values":
            text = dump_values(wb, sheet)
        elif dump == "formulas":
            text = dump_formula_map(wb, sheet)
        else:
            text = dump_spill_map(wb)
    except KeyError as e:
        print(f"spillgrid: {e.args[0]}", file=sys.stderr)
        return EXIT_FAILURE
    if out is None:
        sys.stdout.write(text)
    else:
        try:
            Path(out).write_text(text, encoding="utf-8", newline="")
        except OSError as e:
            print(f"spillgrid: cannot write {out}: {e.strerror or e}", file=sys.stderr)
            return EXIT_FAILURE
    return EXIT_OK


def cmd_trace(path: str, cellref: str) -> int:
    wb = _load(path)
    if wb is None:
        return EXIT_FAILURE
    try:
        key = wb.locate(cellref)
    except (ValueError, KeyError) as e:
        print(f"spillgrid: bad cell reference {cellref!r}: {e}", file=sys.stderr)
        return EXIT_FAILURE
    precedents, dependents = wb.trace_sorted(key)
    lines = ["precedents:"] + [f"  {p}" for p in precedents]
    lines += ["dependents:"] + [f"  {d}" for d in dependents]
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_lint(path: str) -> int:
    wb = _load(path)
    if wb is None:
        return EXIT_FAILURE
    census: Counter = Counter()
    for key, e in wb.cells_with_errors():
        census[e.kind.value] += 1
        detail = f" {e.detail}" if e.detail else ""
        sys.stdout.write(f"{wb.address_text(key)} {e.kind.value}{detail}\n")
    for kind in sorted(census):
        sys.stdout.write(f"{kind} {census[kind]}\n")
    total = sum(census.values())
    sys.stdout.write(f"{total} error{'' if total == 1 else 's'}\n")
    return EXIT_ERRORS if total else EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_FAILURE
    if args.command == "eval":
        return cmd_eval(args.path, args.dump, args.sheet, args.out)
    if args.command == "trace":
        return cmd_trace(args.path, args.cellref)
    return cmd_lint(args.path)


if __name__ == "__main__":
    raise SystemExit(main())
