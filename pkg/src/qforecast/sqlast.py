"""SQL lexer, parser, AST and printer for the supported SELECT subset.

The grammar covers SELECT projections (columns, aggregates, arithmetic),
FROM with comma joins and INNER/LEFT JOIN ... ON, WHERE with AND/OR/NOT,
the six comparison operators, BETWEEN, IN over a literal list, LIKE,
IS [NOT] NULL, GROUP BY, HAVING, ORDER BY and LIMIT.  Parameter markers
($1, $2, ...) are first-class tokens so canonical template text re-parses
to the exact template AST.

All AST nodes are frozen dataclasses: two queries are structurally equal
iff their node trees compare equal.  ``print_sql`` is the inverse of
``parse_sql`` up to whitespace and keyword case.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Union


class SqlError(Exception):
    """Base class for parser failures."""


class SqlSyntaxError(SqlError):
    """Malformed input; carries the character offset of the failure."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


class UnsupportedSqlError(SqlError):
    """Syntactically plausible input using a construct outside the subset."""


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

KEYWORDS = {
    "SELECT", "DISTINCT", "FROM", "WHERE", "GROUP", "BY", "HAVING",
    "ORDER", "LIMIT", "AS", "AND", "OR", "NOT", "BETWEEN", "IN", "LIKE",
    "IS", "NULL", "TRUE", "FALSE", "JOIN", "INNER", "LEFT", "OUTER", "ON",
    "ASC", "DESC",
    # Recognized so they raise UnsupportedSqlError instead of a syntax error.
    "RIGHT", "FULL", "CROSS", "UNION", "INTERSECT", "EXCEPT", "INSERT",
    "UPDATE", "DELETE", "CREATE", "DROP", "WITH", "EXISTS", "OFFSET",
}

_TWO_CHAR_OPS = ("<=", ">=", "<>", "!=")
_ONE_CHAR_OPS = "=<>+-*/%(),."

_NUMBER_RE = re.compile(r"\d+(\.\d+)?([eE][+-]?\d+)?")
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")
_MARKER_RE = re.compile(r"\$(\d+)")


@dataclass(frozen=True)
class Token:
    kind: str          # KEYWORD | IDENT | NUMBER | STRING | OP | MARKER | EOF
    value: str
    pos: int


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch == "'":
            j = i + 1
            buf = []
            while True:
                if j >= n:
                    raise SqlSyntaxError("unterminated string literal", i)
                if text[j] == "'":
                    if j + 1 < n and text[j + 1] == "'":
                        buf.append("'")
                        j += 2
                        continue
                    break
                buf.append(text[j])
                j += 1
            tokens.append(Token("STRING", "".join(buf), i))
            i = j + 1
            continue
        if ch == "$":
            m = _MARKER_RE.match(text, i)
            if not m:
                raise SqlSyntaxError("bad parameter marker", i)
            tokens.append(Token("MARKER", m.group(1), i))
            i = m.end()
            continue
        if ch.isdigit():
            m = _NUMBER_RE.match(text, i)
            tokens.append(Token("NUMBER", m.group(0), i))
            i = m.end()
            continue
        if ch.isalpha() or ch == "_":
            m = _IDENT_RE.match(text, i)
            word = m.group(0)
            kind = "KEYWORD" if word.upper() in KEYWORDS else "IDENT"
            value = word.upper() if kind == "KEYWORD" else word
            tokens.append(Token(kind, value, i))
            i = m.end()
            continue
        two = text[i:i + 2]
        if two in _TWO_CHAR_OPS:
            tokens.append(Token("OP", "<>" if two == "!=" else two, i))
            i += 2
            continue
        if ch in _ONE_CHAR_OPS:
            tokens.append(Token("OP", ch, i))
            i += 1
            continue
        if ch == ";" and text[i:].strip() == ";":
            i += 1
            continue
        raise SqlSyntaxError(f"unexpected character {ch!r}", i)
    tokens.append(Token("EOF", "", n))
    return tokens


# ---------------------------------------------------------------------------
# AST nodes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Literal:
    """A constant: int, float, str or bool.  NULL is its own node."""
    value: Union[int, float, str, bool]


@dataclass(frozen=True)
class NullLiteral:
    pass


@dataclass(frozen=True)
class Marker:
    index: int  # 1-based position in the template's parameter list


@dataclass(frozen=True)
class SetLiteral:
    """Literal list of an IN clause, stored sorted for canonical equality."""
    items: tuple


@dataclass(frozen=True)
class Column:
    table: Optional[str]
    name: str


@dataclass(frozen=True)
class Star:
    pass


@dataclass(frozen=True)
class FuncCall:
    name: str           # uppercased
    args: tuple         # expressions, or (Star(),)
    distinct: bool = False


@dataclass(frozen=True)
class BinaryOp:
    op: str             # arithmetic or comparison operator
    left: object
    right: object


@dataclass(frozen=True)
class UnaryOp:
    op: str             # 'NOT' or '-'
    operand: object


@dataclass(frozen=True)
class Between:
    expr: object
    low: object
    high: object
    negated: bool = False


@dataclass(frozen=True)
class InSet:
    expr: object
    collection: object  # SetLiteral or Marker
    negated: bool = False


@dataclass(frozen=True)
class LikePattern:
    expr: object
    pattern: object     # Literal(str) or Marker
    negated: bool = False


@dataclass(frozen=True)
class IsNull:
    expr: object
    negated: bool = False


@dataclass(frozen=True)
class Projection:
    expr: object
    alias: Optional[str] = None


@dataclass(frozen=True)
class TableRef:
    name: str
    alias: Optional[str] = None


@dataclass(frozen=True)
class Join:
    kind: str           # 'INNER' or 'LEFT'
    left: object        # TableRef or Join
    right: TableRef
    condition: object


@dataclass(frozen=True)
class OrderItem:
    expr: object
    direction: str = "ASC"


@dataclass(frozen=True)
class SelectStmt:
    projections: tuple      # Projection nodes, or (Star(),)
    tables: tuple           # TableRef / Join nodes (comma-separated roots)
    where: Optional[object] = None
    group_by: tuple = ()
    having: Optional[object] = None
    order_by: tuple = ()
    limit: Optional[object] = None  # Literal(int) or Marker


COMPARISON_OPS = {"=", "<", ">", "<=", ">=", "<>"}
_FLIP = {"<": ">", ">": "<", "<=": ">=", ">=": "<=", "=": "=", "<>": "<>"}


# ---------------------------------------------------------------------------
# Parser (recursive descent, precedence climbing for expressions)
# ---------------------------------------------------------------------------

class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.i = 0

    def peek(self) -> Token:
        return self.tokens[self.i]

    def advance(self) -> Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message: str) -> SqlSyntaxError:
        return SqlSyntaxError(message, self.peek().pos)

    def accept(self, kind: str, value: Optional[str] = None) -> Optional[Token]:
        tok = self.peek()
        if tok.kind == kind and (value is None or tok.value == value):
            return self.advance()
        return None

    def expect(self, kind: str, value: Optional[str] = None) -> Token:
        tok = self.accept(kind, value)
        if tok is None:
            want = value or kind
            raise self.error(f"expected {want}, found {self.peek().value or 'end of input'!r}")
        return tok

    def at_keyword(self, *words: str) -> bool:
        tok = self.peek()
        return tok.kind == "KEYWORD" and tok.value in words

    # -- statement ---------------------------------------------------------

    def parse_statement(self) -> SelectStmt:
        tok = self.peek()
        if tok.kind == "KEYWORD" and tok.value in (
                "INSERT", "UPDATE", "DELETE", "CREATE", "DROP", "WITH"):
            raise UnsupportedSqlError(f"{tok.value} statements are not supported")
        self.expect("KEYWORD", "SELECT")
        distinct = bool(self.accept("KEYWORD", "DISTINCT"))
        if distinct:
            raise UnsupportedSqlError("SELECT DISTINCT is not supported")
        projections = self.parse_projections()
        tables: tuple = ()
        if self.accept("KEYWORD", "FROM"):
            tables = self.parse_tables()
        where = None
        if self.accept("KEYWORD", "WHERE"):
            where = self.parse_expr()
        group_by: tuple = ()
        if self.accept("KEYWORD", "GROUP"):
            self.expect("KEYWORD", "BY")
            group_by = tuple(self.parse_expr_list())
        having = None
        if self.accept("KEYWORD", "HAVING"):
            having = self.parse_expr()
        order_by: tuple = ()
        if self.accept("KEYWORD", "ORDER"):
            self.expect("KEYWORD", "BY")
            order_by = tuple(self.parse_order_items())
        limit = None
        if self.accept("KEYWORD", "LIMIT"):
            limit = self.parse_limit_value()
        tok = self.peek()
        if tok.kind != "EOF":
            if tok.kind == "KEYWORD" and tok.value in ("UNION", "INTERSECT", "EXCEPT"):
                raise UnsupportedSqlError(f"{tok.value} is not supported")
            raise self.error(f"unexpected trailing input {tok.value!r}")
        return SelectStmt(projections, tables, where, group_by, having, order_by, limit)

    def parse_projections(self) -> tuple:
        if self.accept("OP", "*"):
            return (Star(),)
        items = [self.parse_projection()]
        while self.accept("OP", ","):
            items.append(self.parse_projection())
        return tuple(items)

    def parse_projection(self) -> Projection:
        expr = self.parse_expr()
        alias = None
        if self.accept("KEYWORD", "AS"):
            alias = self.expect("IDENT").value
        elif self.peek().kind == "IDENT":
            alias = self.advance().value
        return Projection(expr, alias)

    def parse_tables(self) -> tuple:
        roots = [self.parse_table_with_joins()]
        while self.accept("OP", ","):
            roots.append(self.parse_table_with_joins())
        return tuple(roots)

    def parse_table_with_joins(self):
        node = self.parse_table_ref()
        while True:
            if self.at_keyword("RIGHT", "FULL", "CROSS"):
                raise UnsupportedSqlError(f"{self.peek().value} JOIN is not supported")
            kind = None
            if self.accept("KEYWORD", "INNER"):
                kind = "INNER"
            elif self.accept("KEYWORD", "LEFT"):
                self.accept("KEYWORD", "OUTER")
                kind = "LEFT"
            if kind is None and self.at_keyword("JOIN"):
                kind = "INNER"
            if kind is None:
                return node
            self.expect("KEYWORD", "JOIN")
            right = self.parse_table_ref()
            self.expect("KEYWORD", "ON")
            condition = self.parse_expr()
            node = Join(kind, node, right, condition)

    def parse_table_ref(self) -> TableRef:
        tok = self.peek()
        if tok.kind == "OP" and tok.value == "(":
            raise UnsupportedSqlError("subqueries in FROM are not supported")
        name = self.expect("IDENT").value
        alias = None
        if self.accept("KEYWORD", "AS"):
            alias = self.expect("IDENT").value
        elif self.peek().kind == "IDENT":
            alias = self.advance().value
        return TableRef(name, alias)

    def parse_order_items(self) -> list:
        items = []
        while True:
            expr = self.parse_expr()
            direction = "ASC"
            if self.accept("KEYWORD", "ASC"):
                direction = "ASC"
            elif self.accept("KEYWORD", "DESC"):
                direction = "DESC"
            items.append(OrderItem(expr, direction))
            if not self.accept("OP", ","):
                return items

    def parse_limit_value(self):
        tok = self.peek()
        if tok.kind == "MARKER":
            self.advance()
            return Marker(int(tok.value))
        if tok.kind == "NUMBER":
            self.advance()
            return Literal(_parse_number(tok.value))
        raise self.error("LIMIT expects an integer literal")

    def parse_expr_list(self) -> list:
        items = [self.parse_expr()]
        while self.accept("OP", ","):
            items.append(self.parse_expr())
        return items

    # -- expressions -------------------------------------------------------

    def parse_expr(self):
        return self.parse_or()

    def parse_or(self):
        node = self.parse_and()
        while self.accept("KEYWORD", "OR"):
            node = BinaryOp("OR", node, self.parse_and())
        return node

    def parse_and(self):
        node = self.parse_not()
        while self.accept("KEYWORD", "AND"):
            node = BinaryOp("AND", node, self.parse_not())
        return node

    def parse_not(self):
        if self.accept("KEYWORD", "NOT"):
            return UnaryOp("NOT", self.parse_not())
        return self.parse_predicate()

    def parse_predicate(self):
        left = self.parse_additive()
        tok = self.peek()
        if tok.kind == "OP" and tok.value in COMPARISON_OPS:
            self.advance()
            right = self.parse_additive()
            return BinaryOp(tok.value, left, right)
        negated = False
        if self.at_keyword("NOT"):
            # NOT here can only begin NOT BETWEEN / NOT IN / NOT LIKE.
            nxt = self.tokens[self.i + 1]
            if nxt.kind == "KEYWORD" and nxt.value in ("BETWEEN", "IN", "LIKE"):
                self.advance()
                negated = True
        if self.accept("KEYWORD", "BETWEEN"):
            low = self.parse_additive()
            self.expect("KEYWORD", "AND")
            high = self.parse_additive()
            return Between(left, low, high, negated)
        if self.accept("KEYWORD", "IN"):
            return InSet(left, self.parse_in_collection(), negated)
        if self.accept("KEYWORD", "LIKE"):
            pattern = self.parse_additive()
            if not isinstance(pattern, (Literal, Marker)) or (
                    isinstance(pattern, Literal) and not isinstance(pattern.value, str)):
                raise UnsupportedSqlError("LIKE requires a string literal pattern")
            return LikePattern(left, pattern, negated)
        if self.accept("KEYWORD", "IS"):
            neg = bool(self.accept("KEYWORD", "NOT"))
            self.expect("KEYWORD", "NULL")
            return IsNull(left, neg)
        if negated:
            raise self.error("expected BETWEEN, IN or LIKE after NOT")
        return left

    def parse_in_collection(self):
        tok = self.peek()
        if tok.kind == "MARKER":
            self.advance()
            return Marker(int(tok.value))
        self.expect("OP", "(")
        if self.at_keyword("SELECT"):
            raise UnsupportedSqlError("IN subqueries are not supported")
        items = []
        while True:
            items.append(self.parse_in_item())
            if not self.accept("OP", ","):
                break
        self.expect("OP", ")")
        return SetLiteral(sort_set_items(items))

    def parse_in_item(self):
        tok = self.peek()
        if tok.kind == "NUMBER":
            self.advance()
            return _parse_number(tok.value)
        if tok.kind == "STRING":
            self.advance()
            return tok.value
        if tok.kind == "KEYWORD" and tok.value in ("TRUE", "FALSE"):
            self.advance()
            return tok.value == "TRUE"
        if tok.kind == "OP" and tok.value == "-":
            self.advance()
            num = self.expect("NUMBER")
            return -_parse_number(num.value)
        raise UnsupportedSqlError("IN lists may only contain literals")

    def parse_additive(self):
        node = self.parse_multiplicative()
        while True:
            tok = self.peek()
            if tok.kind == "OP" and tok.value in ("+", "-"):
                self.advance()
                node = BinaryOp(tok.value, node, self.parse_multiplicative())
            else:
                return node

    def parse_multiplicative(self):
        node = self.parse_unary()
        while True:
            tok = self.peek()
            if tok.kind == "OP" and tok.value in ("*", "/", "%"):
                self.advance()
                node = BinaryOp(tok.value, node, self.parse_unary())
            else:
                return node

    def parse_unary(self):
        if self.accept("OP", "-"):
            operand = self.parse_unary()
            if isinstance(operand, Literal) and isinstance(operand.value, (int, float)):
                return Literal(-operand.value)
            return UnaryOp("-", operand)
        return self.parse_primary()

    def parse_primary(self):
        tok = self.peek()
        if tok.kind == "NUMBER":
            self.advance()
            return Literal(_parse_number(tok.value))
        if tok.kind == "STRING":
            self.advance()
            return Literal(tok.value)
        if tok.kind == "MARKER":
            self.advance()
            return Marker(int(tok.value))
        if tok.kind == "KEYWORD":
            if tok.value == "TRUE":
                self.advance()
                return Literal(True)
            if tok.value == "FALSE":
                self.advance()
                return Literal(False)
            if tok.value == "NULL":
                self.advance()
                return NullLiteral()
            if tok.value == "SELECT":
                raise UnsupportedSqlError("subqueries are not supported")
            if tok.value == "EXISTS":
                raise UnsupportedSqlError("EXISTS is not supported")
            raise self.error(f"unexpected keyword {tok.value}")
        if tok.kind == "OP" and tok.value == "(":
            self.advance()
            if self.at_keyword("SELECT"):
                raise UnsupportedSqlError("subqueries are not supported")
            node = self.parse_expr()
            self.expect("OP", ")")
            return node
        if tok.kind == "IDENT":
            self.advance()
            nxt = self.peek()
            if nxt.kind == "OP" and nxt.value == "(":
                return self.parse_func_call(tok.value)
            if nxt.kind == "OP" and nxt.value == ".":
                self.advance()
                col = self.expect("IDENT")
                return Column(tok.value, col.value)
            return Column(None, tok.value)
        raise self.error(f"unexpected token {tok.value or 'end of input'!r}")

    def parse_func_call(self, name: str) -> FuncCall:
        self.expect("OP", "(")
        distinct = bool(self.accept("KEYWORD", "DISTINCT"))
        if self.accept("OP", "*"):
            self.expect("OP", ")")
            return FuncCall(name.upper(), (Star(),), distinct)
        args = tuple(self.parse_expr_list())
        self.expect("OP", ")")
        return FuncCall(name.upper(), args, distinct)


def _parse_number(text: str) -> Union[int, float]:
    if "." in text or "e" in text or "E" in text:
        return float(text)
    return int(text)


def sort_set_items(items: list) -> tuple:
    """Deduplicate and canonically order IN-list items."""
    def key(v):
        if isinstance(v, bool):
            return (0, str(v))
        if isinstance(v, (int, float)):
            return (1, float(v), "")
        return (2, 0.0, str(v))
    return tuple(sorted(set(items), key=key))


def parse_sql(text: str) -> SelectStmt:
    """Parse a statement of the supported subset into an AST.

    Raises SqlSyntaxError for malformed input and UnsupportedSqlError for
    recognized-but-unsupported constructs.
    """
    if not text or not text.strip():
        raise SqlSyntaxError("empty statement", 0)
    return _Parser(tokenize(text)).parse_statement()


# ---------------------------------------------------------------------------
# Printer
# ---------------------------------------------------------------------------

_PRECEDENCE = {
    "OR": 1, "AND": 2,
    "=": 4, "<": 4, ">": 4, "<=": 4, ">=": 4, "<>": 4,
    "+": 5, "-": 5,
    "*": 6, "/": 6, "%": 6,
}


def format_value(value) -> str:
    """Render one literal value as SQL text."""
    if isinstance(value, bool):
        return "TRUE" if value else "FALSE"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return "'" + value.replace("'", "''") + "'"
    raise TypeError(f"cannot format {type(value).__name__} as a SQL literal")


def _print_expr(node, parent_prec: int = 0) -> str:
    if isinstance(node, Literal):
        return format_value(node.value)
    if isinstance(node, NullLiteral):
        return "NULL"
    if isinstance(node, Marker):
        return f"${node.index}"
    if isinstance(node, SetLiteral):
        return "(" + ", ".join(format_value(v) for v in node.items) + ")"
    if isinstance(node, Column):
        return f"{node.table}.{node.name}" if node.table else node.name
    if isinstance(node, Star):
        return "*"
    if isinstance(node, FuncCall):
        inner = ", ".join(_print_expr(a) for a in node.args)
        if node.distinct:
            inner = "DISTINCT " + inner
        return f"{node.name}({inner})"
    if isinstance(node, BinaryOp):
        prec = _PRECEDENCE[node.op]
        text = f"{_print_expr(node.left, prec)} {node.op} {_print_expr(node.right, prec + 1)}"
        return f"({text})" if prec < parent_prec else text
    if isinstance(node, UnaryOp):
        if node.op == "NOT":
            text = f"NOT {_print_expr(node.operand, 3)}"
            return f"({text})" if parent_prec > 3 else text
        return f"-{_print_expr(node.operand, 7)}"
    if isinstance(node, Between):
        kw = "NOT BETWEEN" if node.negated else "BETWEEN"
        text = (f"{_print_expr(node.expr, 5)} {kw} "
                f"{_print_expr(node.low, 5)} AND {_print_expr(node.high, 5)}")
        return f"({text})" if parent_prec > 3 else text
    if isinstance(node, InSet):
        kw = "NOT IN" if node.negated else "IN"
        text = f"{_print_expr(node.expr, 5)} {kw} {_print_expr(node.collection)}"
        return f"({text})" if parent_prec > 3 else text
    if isinstance(node, LikePattern):
        kw = "NOT LIKE" if node.negated else "LIKE"
        text = f"{_print_expr(node.expr, 5)} {kw} {_print_expr(node.pattern)}"
        return f"({text})" if parent_prec > 3 else text
    if isinstance(node, IsNull):
        kw = "IS NOT NULL" if node.negated else "IS NULL"
        text = f"{_print_expr(node.expr, 5)} {kw}"
        return f"({text})" if parent_prec > 3 else text
    raise TypeError(f"cannot print node {type(node).__name__}")


def _print_table(node) -> str:
    if isinstance(node, TableRef):
        return f"{node.name} AS {node.alias}" if node.alias else node.name
    if isinstance(node, Join):
        return (f"{_print_table(node.left)} {node.kind} JOIN "
                f"{_print_table(node.right)} ON {_print_expr(node.condition)}")
    raise TypeError(f"cannot print table node {type(node).__name__}")


def print_sql(stmt: SelectStmt) -> str:
    """Render an AST back to SQL text; parse_sql(print_sql(t)) == t."""
    if len(stmt.projections) == 1 and isinstance(stmt.projections[0], Star):
        proj = "*"
    else:
        parts = []
        for p in stmt.projections:
            text = _print_expr(p.expr)
            if p.alias:
                text += f" AS {p.alias}"
            parts.append(text)
        proj = ", ".join(parts)
    out = [f"SELECT {proj}"]
    if stmt.tables:
        out.append("FROM " + ", ".join(_print_table(t) for t in stmt.tables))
    if stmt.where is not None:
        out.append("WHERE " + _print_expr(stmt.where))
    if stmt.group_by:
        out.append("GROUP BY " + ", ".join(_print_expr(e) for e in stmt.group_by))
    if stmt.having is not None:
        out.append("HAVING " + _print_expr(stmt.having))
    if stmt.order_by:
        items = []
        for o in stmt.order_by:
            text = _print_expr(o.expr)
            if o.direction == "DESC":
                text += " DESC"
            items.append(text)
        out.append("ORDER BY " + ", ".join(items))
    if stmt.limit is not None:
        out.append("LIMIT " + _print_expr(stmt.limit))
    return " ".join(out)
