"""A small Wireshark-style display filter language for 802.15.4 / Zigbee frames.

Supported::

    wpan.src16 == 0x1234 && !(wpan.frame_type == 2)
    zbee_nwk.radius >= 5 or wpan.dst16 == 0xffff
    wpan.src64                      # presence test

Comparisons against a field that the frame does not carry are false; a bare
field name is true iff the field is present.
"""
from __future__ import annotations

import operator
import re
from dataclasses import dataclass
from typing import Callable, Optional, Union

from .codec import FcsStatus, MacFrame, NwkHeader

__all__ = [
    "FIELDS",
    "And",
    "Compare",
    "Exists",
    "FilterError",
    "FilterSyntaxError",
    "Not",
    "Or",
    "TypeMismatch",
    "UnknownField",
    "compile_filter",
    "eval_filter",
    "field_values",
    "parse_filter",
    "pretty_print",
]


class FilterError(ValueError):
    position: Optional[int] = None


class FilterSyntaxError(FilterError):
    def __init__(self, position: int, expected: set[str], found: str):
        self.position = position
        self.expected = frozenset(expected)
        self.found = found
        super().__init__(f"at position {position}: expected {' or '.join(sorted(expected))}, found {found!r}")


class UnknownField(FilterError):
    def __init__(self, name: str, position: int):
        self.name = name
        self.position = position
        super().__init__(f"unknown field {name!r} at position {position}")


class TypeMismatch(FilterError):
    def __init__(self, msg: str, position: int):
        self.position = position
        super().__init__(f"{msg} at position {position}")


@dataclass(frozen=True)
class Compare:
    field: str
    op: str
    value: int


@dataclass(frozen=True)
class Exists:
    field: str


@dataclass(frozen=True)
class Not:
    operand: "FilterExpr"


@dataclass(frozen=True)
class And:
    left: "FilterExpr"
    right: "FilterExpr"


@dataclass(frozen=True)
class Or:
    left: "FilterExpr"
    right: "FilterExpr"


FilterExpr = Union[Compare, Exists, Not, And, Or]

Getter = Callable[[Optional[MacFrame], Optional[NwkHeader], Optional[int]], Optional[int]]


def _mac(fn: Callable[[MacFrame], Optional[int]]) -> Getter:
    def get(mac, nwk, length):
        return None if mac is None else fn(mac)
    return get


def _nwk(fn: Callable[[NwkHeader], int]) -> Getter:
    def get(mac, nwk, length):
        return None if nwk is None else fn(nwk)
    return get


def _fcs_ok(mac: MacFrame) -> Optional[int]:
    if mac.fcs_ok is FcsStatus.ABSENT:
        return None
    return 1 if mac.fcs_ok is FcsStatus.VALID else 0


def _frame_len(mac, nwk, length):
    if length is not None:
        return length
    return None if mac is None else mac.length


# name -> (bit width, accessor)
FIELDS: dict[str, tuple[int, Getter]] = {
    "wpan.frame_type": (3, _mac(lambda m: int(m.frame_type))),
    "wpan.seq_no": (8, _mac(lambda m: m.seq_no)),
    "wpan.dst_pan": (16, _mac(lambda m: m.dst_pan)),
    "wpan.src_pan": (16, _mac(lambda m: m.effective_src_pan)),
    "wpan.dst16": (16, _mac(lambda m: m.dst16)),
    "wpan.src16": (16, _mac(lambda m: m.src16)),
    "wpan.dst64": (64, _mac(lambda m: m.dst64)),
    "wpan.src64": (64, _mac(lambda m: m.src64)),
    "wpan.ack_request": (1, _mac(lambda m: int(m.ack_request))),
    "wpan.fcs_ok": (1, _mac(_fcs_ok)),
    "zbee_nwk.src": (16, _nwk(lambda n: n.src)),
    "zbee_nwk.dst": (16, _nwk(lambda n: n.dst)),
    "zbee_nwk.radius": (8, _nwk(lambda n: n.radius)),
    "frame.len": (8, _frame_len),
}

OPS: dict[str, Callable[[int, int], bool]] = {
    "==": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}
_WORD_OPS = {"eq": "==", "ne": "!=", "lt": "<", "le": "<=", "gt": ">", "ge": ">="}

_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<num>0[xX][0-9a-fA-F]+|\d+)(?![\w.])"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z0-9_]+)*)"
    r"|(?P<op>==|!=|<=|>=|<|>|&&|\|\||!|\(|\))"
    r")"
)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        n = len(text)
        while pos < n:
            if text[pos:].strip() == "":
                break
            m = _TOKEN_RE.match(text, pos)
            if m is None or m.end() == pos:
                bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
                raise FilterSyntaxError(bad, {"field", "literal", "operator"}, text[bad])
            kind = m.lastgroup
            value = m.group(kind)
            start = m.start(kind)
            if kind == "name":
                low = value.lower()
                if low in ("and", "or", "not"):
                    kind, value = "op", {"and": "&&", "or": "||", "not": "!"}[low]
                elif low in _WORD_OPS:
                    kind, value = "op", _WORD_OPS[low]
                elif low in ("true", "false"):
                    kind = "bool"
            self.tokens.append((kind, value, start))
            pos = m.end()
        self.tokens.append(("eof", "", len(text)))
        self.i = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def advance(self) -> tuple[str, str, int]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, expected: set[str]) -> FilterSyntaxError:
        kind, value, pos = self.peek()
        return FilterSyntaxError(pos, expected, value if kind != "eof" else "end of input")

    def parse(self) -> FilterExpr:
        expr = self.or_expr()
        if self.peek()[0] != "eof":
            raise self.fail({"'&&'", "'||'", "end of input"})
        return expr

    def or_expr(self) -> FilterExpr:
        left = self.and_expr()
        while self.peek()[:2] == ("op", "||"):
            self.advance()
            left = Or(left, self.and_expr())
        return left

    def and_expr(self) -> FilterExpr:
        left = self.unary()
        while self.peek()[:2] == ("op", "&&"):
            self.advance()
            left = And(left, self.unary())
        return left

    def unary(self) -> FilterExpr:
        if self.peek()[:2] == ("op", "!"):
            self.advance()
            return Not(self.unary())
        return self.primary()

    def primary(self) -> FilterExpr:
        kind, value, pos = self.peek()
        if (kind, value) == ("op", "("):
            self.advance()
            expr = self.or_expr()
            if self.peek()[:2] != ("op", ")"):
                raise self.fail({"')'"})
            self.advance()
            return expr
        if kind != "name":
            raise self.fail({"field", "'('", "'!'"})
        self.advance()
        if value not in FIELDS:
            raise UnknownField(value, pos)
        width = FIELDS[value][0]
        kind2, op, _ = self.peek()
        if kind2 != "op" or op not in OPS:
            return Exists(value)
        self.advance()
        lkind, lit, lpos = self.advance()
        if lkind == "num":
            number = int(lit, 0)
        elif lkind == "bool":
            if width != 1:
                raise TypeMismatch(f"boolean literal compared with {width}-bit field {value}", lpos)
            number = 1 if lit.lower() == "true" else 0
        else:
            self.i -= 1
            raise self.fail({"literal"})
        if number >= 1 << width:
            raise TypeMismatch(f"literal {lit} exceeds {width}-bit field {value}", lpos)
        return Compare(value, op, number)


def parse_filter(text: str) -> FilterExpr:
    return _Parser(text).parse()


def pretty_print(expr: FilterExpr) -> str:
    """Render ``expr`` so that ``parse_filter`` gives back an equal tree."""
    if isinstance(expr, Compare):
        return f"{expr.field} {expr.op} 0x{expr.value:x}"
    if isinstance(expr, Exists):
        return expr.field
    if isinstance(expr, Not):
        return f"!({pretty_print(expr.operand)})"
    if isinstance(expr, And):
        return f"({pretty_print(expr.left)} && {pretty_print(expr.right)})"
    if isinstance(expr, Or):
        return f"({pretty_print(expr.left)} || {pretty_print(expr.right)})"
    raise TypeError(f"not a filter expression: {expr!r}")


Predicate = Callable[[Optional[MacFrame], Optional[NwkHeader], Optional[int]], bool]


def compile_filter(expr: FilterExpr) -> Predicate:
    """Turn an AST into a closure ``pred(mac, nwk, length) -> bool``."""
    if isinstance(expr, Compare):
        get = FIELDS[expr.field][1]
        op = OPS[expr.op]
        value = expr.value

        def cmp(mac, nwk, length):
            v = get(mac, nwk, length)
            return v is not None and op(v, value)
        return cmp
    if isinstance(expr, Exists):
        get = FIELDS[expr.field][1]
        return lambda mac, nwk, length: get(mac, nwk, length) is not None
    if isinstance(expr, Not):
        inner = compile_filter(expr.operand)
        return lambda mac, nwk, length: not inner(mac, nwk, length)
    if isinstance(expr, And):
        a, b = compile_filter(expr.left), compile_filter(expr.right)
        return lambda mac, nwk, length: a(mac, nwk, length) and b(mac, nwk, length)
    if isinstance(expr, Or):
        a, b = compile_filter(expr.left), compile_filter(expr.right)
        return lambda mac, nwk, length: a(mac, nwk, length) or b(mac, nwk, length)
    raise TypeError(f"not a filter expression: {expr!r}")


def eval_filter(expr: FilterExpr, mac: Optional[MacFrame], nwk: Optional[NwkHeader] = None,
                length: Optional[int] = None) -> bool:
    return compile_filter(expr)(mac, nwk, length)


def field_values(mac: Optional[MacFrame], nwk: Optional[NwkHeader] = None,
                 length: Optional[int] = None) -> dict[str, int]:
    """All fields present on a frame, keyed by filter name."""
    out = {}
    for name, (_, get) in FIELDS.items():
        v = get(mac, nwk, length)
        if v is not None:
            out[name] = v
    return out
