"""Formula lexer, recursive-descent parser, reference extraction and renderer."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

from .values import format_number

MAX_ROWS = 1_048_576
MAX_COLS = 16_384
MAX_DEPTH = 200


class ParseError(Exception):
    def __init__(self, message: str, offset: int = 0, expected: str | None = None):
        self.message = message
        self.offset = offset
        self.expected = expected
        text = f"{message} at offset {offset}"
        if expected:
            text += f" (expected {expected})"
        super().__init__(text)


class LexError(ParseError):
    pass


# ---------------------------------------------------------------------------
# addresses
# ---------------------------------------------------------------------------


def col_to_letters(col: int) -> str:
    if col < 1:
        raise ValueError(f"column index must be >= 1, got {col}")
    out = []
    while col:
        col, rem = divmod(col - 1, 26)
        out.append(chr(65 + rem))
    return "".join(reversed(out))


def letters_to_col(letters: str) -> int:
    n = 0
    for ch in letters.upper():
        if not "A" <= ch <= "Z":
            raise ValueError(f"bad column letters {letters!r}")
        n = n * 26 + ord(ch) - 64
    return n


_SHEET_PLAIN = re.compile(r"[^\W\d]\w*(\.\w+)*\Z")


def render_sheet(name: str) -> str:
    if _SHEET_PLAIN.match(name) and not _ADDR_RE.match(name) and name.upper() not in ("TRUE", "FALSE"):
        return name
    return "'" + name.replace("'", "''") + "'"


@dataclass(frozen=True)
class CellAddress:
    row: int
    col: int
    sheet: Optional[str] = None
    row_abs: bool = False
    col_abs: bool = False

    def __post_init__(self):
        if not (1 <= self.row <= MAX_ROWS and 1 <= self.col <= MAX_COLS):
            raise ValueError(f"address out of range: row {self.row}, col {self.col}")

    def a1(self) -> str:
        return (
            ("$" if self.col_abs else "")
            + col_to_letters(self.col)
            + ("$" if self.row_abs else "")
            + str(self.row)
        )

    def __str__(self) -> str:
        if self.sheet is not None:
            return f"{render_sheet(self.sheet)}!{self.a1()}"
        return self.a1()


_ADDR_RE = re.compile(r"(\$?)([A-Za-z]{1,3})(\$?)([0-9]+)\Z")


def parse_address(text: str, sheet: str | None = None) -> CellAddress:
    """Parse ``A1``/``$A$1`` (optionally ``Sheet!A1``) into a CellAddress."""
    text = text.strip()
    if "!" in text:
        sheet_part, _, text = text.rpartition("!")
        if sheet_part.startswith("'") and sheet_part.endswith("'") and len(sheet_part) >= 2:
            sheet_part = sheet_part[1:-1].replace("''", "'")
        if not sheet_part:
            raise ValueError("empty sheet name")
        sheet = sheet_part
    m = _ADDR_RE.match(text)
    if not m:
        raise ValueError(f"not an A1 address: {text!r}")
    return CellAddress(int(m[4]), letters_to_col(m[2]), sheet, bool(m[3]), bool(m[1]))


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NumberLit:
    value: float


@dataclass(frozen=True)
class TextLit:
    value: str


@dataclass(frozen=True)
class BoolLit:
    value: bool


@dataclass(frozen=True)
class CellRef:
    addr: CellAddress


@dataclass(frozen=True)
class RangeRef:
    start: CellAddress
    end: CellAddress


@dataclass(frozen=True)
class NameRef:
    name: str


@dataclass(frozen=True)
class SpillRef:
    target: Union[CellRef, NameRef]


@dataclass(frozen=True)
class TableColumnRef:
    table: str
    column: str


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Node"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple = ()


Node = Union[NumberLit, TextLit, BoolLit, CellRef, RangeRef, NameRef, SpillRef, TableColumnRef, Unary, Binary, Call]


# ---------------------------------------------------------------------------
# lexer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    pos: int

    def __repr__(self) -> str:
        return f"{self.kind}:{self.text}"


_WS = re.compile(r"\s+")
_NUMBER = re.compile(r"(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?")
_ADDR_TOKEN = re.compile(r"\$?[A-Za-z]{1,3}\$?[0-9]+")
_IDENT = re.compile(r"[^\W\d]\w*(\.\w+)*")
_WORD_CHAR = re.compile(r"[\w.(\[]")
_PUNCT = {
    "(": "lparen",
    ")": "rparen",
    ",": "comma",
    "[": "lbracket",
    "]": "rbracket",
    "!": "bang",
    "#": "hash",
    ":": "colon",
}
_OPERATORS = ("<>", "<=", ">=", "+", "-", "*", "/", "^", "&", "=", "<", ">")


def _byte_offset(text: str, i: int) -> int:
    return len(text[:i].encode("utf-8", "surrogatepass"))


def is_cell_address(word: str) -> bool:
    m = _ADDR_RE.match(word)
    return bool(m) and letters_to_col(m[2]) <= MAX_COLS and 1 <= int(m[4]) <= MAX_ROWS


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        m = _WS.match(text, i)
        if m:
            i = m.end()
            continue
        if ch == '"':
            j = i + 1
            buf = []
            while True:
                if j >= n:
                    raise LexError("unterminated string", _byte_offset(text, i))
                if text[j] == '"':
                    if j + 1 < n and text[j + 1] == '"':
                        buf.append('"')
                        j += 2
                        continue
                    break
                buf.append(text[j])
                j += 1
            tokens.append(Token("string", "".join(buf), i))
            i = j + 1
            continue
        if ch == "'":
            j = i + 1
            buf = []
            while True:
                if j >= n:
                    raise LexError("unterminated sheet name", _byte_offset(text, i))
                if text[j] == "'":
                    if j + 1 < n and text[j + 1] == "'":
                        buf.append("'")
                        j += 2
                        continue
                    break
                buf.append(text[j])
                j += 1
            tokens.append(Token("sheet", "".join(buf), i))
            i = j + 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and text[i + 1].isdigit()):
            m = _NUMBER.match(text, i)
            tokens.append(Token("number", m.group(), i))
            i = m.end()
            continue
        if ch == "$" or ch.isalpha() or ch == "_":
            m = _ADDR_TOKEN.match(text, i)
            if m and not _WORD_CHAR.match(text, m.end()) and is_cell_address(m.group()):
                tokens.append(Token("addr", m.group(), i))
                i = m.end()
                continue
            m = _IDENT.match(text, i)
            if not m:
                raise LexError(f"unexpected character {ch!r}", _byte_offset(text, i))
            word = m.group()
            follow = text[m.end()] if m.end() < n else ""
            if word.upper() in ("TRUE", "FALSE") and follow not in ("(", "["):
                tokens.append(Token("bool", word.upper(), i))
            else:
                tokens.append(Token("ident", word, i))
            i = m.end()
            continue
        if ch in _PUNCT:
            tokens.append(Token(_PUNCT[ch], ch, i))
            i += 1
            continue
        for op in _OPERATORS:
            if text.startswith(op, i):
                tokens.append(Token("op", op, i))
                i += len(op)
                break
        else:
            raise LexError(f"unexpected character {ch!r}", _byte_offset(text, i))
    return tokens


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

_COMPARE_OPS = ("=", "<>", "<", "<=", ">", ">=")


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = tokenize(text)
        self.i = 0
        self.depth = 0

    def peek(self, ahead: int = 0) -> Token | None:
        j = self.i + ahead
        return self.tokens[j] if j < len(self.tokens) else None

    def offset(self) -> int:
        tok = self.peek()
        pos = tok.pos if tok is not None else len(self.text)
        return _byte_offset(self.text, pos)

    def fail(self, message: str, expected: str | None = None):
        raise ParseError(message, self.offset(), expected)

    def take(self) -> Token:
        tok = self.peek()
        if tok is None:
            self.fail("unexpected end of formula", "more input")
        self.i += 1
        return tok

    def expect(self, kind: str, expected: str) -> Token:
        tok = self.peek()
        if tok is None or tok.kind != kind:
            self.fail("unexpected " + (repr(tok.text) if tok else "end of formula"), expected)
        self.i += 1
        return tok

    def at_op(self, *ops: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.kind == "op" and tok.text in ops

    def parse(self) -> Node:
        if not self.tokens:
            self.fail("empty formula", "an expression")
        node = self.expression()
        if self.peek() is not None:
            self.fail(f"unexpected {self.peek().text!r}", "end of formula")
        return node

    def expression(self) -> Node:
        self.depth += 1
        if self.depth > MAX_DEPTH:
            self.fail("formula nested too deeply")
        try:
            return self.comparison()
        finally:
            self.depth -= 1

    def _left_assoc(self, ops: tuple, operand) -> Node:
        node = operand()
        while self.at_op(*ops):
            op = self.take().text
            node = Binary(op, node, operand())
        return node

    def comparison(self) -> Node:
        return self._left_assoc(_COMPARE_OPS, self.concat)

    def concat(self) -> Node:
        return self._left_assoc(("&",), self.additive)

    def additive(self) -> Node:
        return self._left_assoc(("+", "-"), self.multiplicative)

    def multiplicative(self) -> Node:
        return self._left_assoc(("*", "/"), self.power)

    def power(self) -> Node:
        return self._left_assoc(("^",), self.unary)

    def unary(self) -> Node:
        if self.at_op("-", "+"):
            op = self.take().text
            self.depth += 1
            if self.depth > MAX_DEPTH:
                self.fail("formula nested too deeply")
            try:
                return Unary(op, self.unary())
            finally:
                self.depth -= 1
        return self.postfix()

    def postfix(self) -> Node:
        node = self.primary()
        tok = self.peek()
        if tok is not None and tok.kind == "hash":
            if not isinstance(node, (CellRef, NameRef)):
                self.fail("'#' applies only to a cell reference or a name")
            self.i += 1
            node = SpillRef(node)
            after = self.peek()
            if after is not None and after.kind == "hash":
                self.fail("'#' applies only to a cell reference or a name")
        return node

    def primary(self) -> Node:
        tok = self.peek()
        if tok is None:
            self.fail("unexpected end of formula", "an expression")
        kind = tok.kind
        if kind == "number":
            self.i += 1
            value = float(tok.text)
            if value == float("inf"):
                raise ParseError("number out of range", _byte_offset(self.text, tok.pos))
            return NumberLit(value)
        if kind == "string":
            self.i += 1
            return TextLit(tok.text)
        if kind == "bool":
            self.i += 1
            return BoolLit(tok.text == "TRUE")
        if kind == "lparen":
            self.i += 1
            node = self.expression()
            self.expect("rparen", "')'")
            return node
        if kind == "sheet":
            self.i += 1
            return self.sheet_reference(tok.text)
        if kind in ("addr", "ident"):
            nxt = self.peek(1)
            if nxt is not None and nxt.kind == "bang":
                self.i += 1
                return self.sheet_reference(tok.text)
            if kind == "addr":
                self.i += 1
                return self.cell_or_range(None, tok)
            if nxt is not None and nxt.kind == "lparen":
                return self.call()
            if nxt is not None and nxt.kind == "lbracket":
                return self.table_column()
            self.i += 1
            return NameRef(tok.text)
        self.fail(f"unexpected {tok.text!r}", "an expression")

    def sheet_reference(self, sheet: str) -> Node:
        self.expect("bang", "'!'")
        tok = self.expect("addr", "a cell address after '!'")
        return self.cell_or_range(sheet, tok)

    def cell_or_range(self, sheet: str | None, tok: Token) -> Node:
        start = parse_address(tok.text, sheet)
        nxt = self.peek()
        if nxt is None or nxt.kind != "colon":
            return CellRef(start)
        self.i += 1
        end_tok = self.peek()
        end_sheet = sheet
        if end_tok is not None and end_tok.kind in ("sheet", "ident", "addr"):
            after = self.peek(1)
            if after is not None and after.kind == "bang":
                self.i += 2
                end_sheet = end_tok.text
                if end_sheet != sheet:
                    self.fail("range endpoints must be on the same sheet")
        end_tok = self.expect("addr", "a cell address after ':'")
        return RangeRef(start, parse_address(end_tok.text, end_sheet))

    def call(self) -> Node:
        name = self.take().text.upper()
        self.expect("lparen", "'('")
        args = []
        if self.peek() is not None and self.peek().kind == "rparen":
            self.i += 1
            return Call(name, ())
        while True:
            args.append(self.expression())
            tok = self.peek()
            if tok is not None and tok.kind == "comma":
                self.i += 1
                continue
            self.expect("rparen", "',' or ')'")
            return Call(name, tuple(args))

    def table_column(self) -> Node:
        table = self.take().text
        self.expect("lbracket", "'['")
        tok = self.peek()
        if tok is not None and tok.kind == "hash":
            self.fail("structured reference selectors are not supported", "a column name")
        if tok is None or tok.kind not in ("ident", "addr", "bool"):
            self.fail("bad structured reference", "a column name")
        self.i += 1
        self.expect("rbracket", "']'")
        return TableColumnRef(table, tok.text)


def parse_formula(text: str) -> Node:
    """Parse a formula body (no leading ``=``) into an AST."""
    try:
        return _Parser(text).parse()
    except RecursionError:
        raise ParseError("formula nested too deeply", 0) from None


# ---------------------------------------------------------------------------
# reference extraction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReferenceSet:
    cells: frozenset = field(default_factory=frozenset)
    ranges: frozenset = field(default_factory=frozenset)
    names: frozenset = field(default_factory=frozenset)
    spill_targets: frozenset = field(default_factory=frozenset)
    table_columns: frozenset = field(default_factory=frozenset)

    def is_empty(self) -> bool:
        return not (self.cells or self.ranges or self.names or self.spill_targets or self.table_columns)


def walk(node: Node) -> Iterator[Node]:
    stack = [node]
    while stack:
        n = stack.pop()
        yield n
        if isinstance(n, Unary):
            stack.append(n.operand)
        elif isinstance(n, Binary):
            stack.extend((n.right, n.left))
        elif isinstance(n, Call):
            stack.extend(reversed(n.args))


def extract_references(ast: Node) -> ReferenceSet:
    cells, ranges, names, spills, cols = set(), set(), set(), set(), set()
    stack = [ast]
    while stack:
        n = stack.pop()
        if isinstance(n, CellRef):
            cells.add(n.addr)
        elif isinstance(n, RangeRef):
            ranges.add((n.start, n.end))
        elif isinstance(n, NameRef):
            names.add(n.name)
        elif isinstance(n, SpillRef):
            t = n.target
            spills.add(t.addr if isinstance(t, CellRef) else t.name)
        elif isinstance(n, TableColumnRef):
            cols.add((n.table, n.column))
        elif isinstance(n, Unary):
            stack.append(n.operand)
        elif isinstance(n, Binary):
            stack.extend((n.left, n.right))
        elif isinstance(n, Call):
            stack.extend(n.args)
    return ReferenceSet(frozenset(cells), frozenset(ranges), frozenset(names), frozenset(spills), frozenset(cols))


# ---------------------------------------------------------------------------
# renderer
# ---------------------------------------------------------------------------

_PRECEDENCE = {
    "=": 1, "<>": 1, "<": 1, "<=": 1, ">": 1, ">=": 1,
    "&": 2,
    "+": 3, "-": 3,
    "*": 4, "/": 4,
    "^": 5,
}
_UNARY_PREC = 6
_ATOM_PREC = 8


def _prec(node: Node) -> int:
    if isinstance(node, Binary):
        return _PRECEDENCE[node.op]
    if isinstance(node, Unary):
        return _UNARY_PREC
    return _ATOM_PREC


def _quote(text: str) -> str:
    return '"' + text.replace('"', '""') + '"'


def render_formula(ast: Node) -> str:
    if isinstance(ast, NumberLit):
        return format_number(ast.value)
    if isinstance(ast, TextLit):
        return _quote(ast.value)
    if isinstance(ast, BoolLit):
        return "TRUE" if ast.value else "FALSE"
    if isinstance(ast, CellRef):
        return str(ast.addr)
    if isinstance(ast, RangeRef):
        return f"{ast.start}:{ast.end.a1()}"
    if isinstance(ast, NameRef):
        return ast.name
    if isinstance(ast, SpillRef):
        return render_formula(ast.target) + "#"
    if isinstance(ast, TableColumnRef):
        return f"{ast.table}[{ast.column}]"
    if isinstance(ast, Unary):
        inner = render_formula(ast.operand)
        if _prec(ast.operand) < _UNARY_PREC:
            inner = f"({inner})"
        return ast.op + inner
    if isinstance(ast, Binary):
        p = _PRECEDENCE[ast.op]
        left = render_formula(ast.left)
        right = render_formula(ast.right)
        if _prec(ast.left) < p:
            left = f"({left})"
        if _prec(ast.right) <= p:
            right = f"({right})"
        return f"{left}{ast.op}{right}"
    if isinstance(ast, Call):
        return f"{ast.name}({','.join(render_formula(a) for a in ast.args)})"
    raise TypeError(f"not a formula node: {ast!r}")
