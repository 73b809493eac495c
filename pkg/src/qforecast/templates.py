"""Query templatization: literal extraction, template identity, rendering.

A template is a query AST with every data literal replaced by a numbered
marker.  Identity is structural: two queries share a template iff their
masked ASTs are equal.  Literals are extracted in a single deterministic
preorder walk (projections, FROM/ON, WHERE, GROUP BY, HAVING, ORDER BY,
LIMIT), so marker numbering is stable across runs.

Boolean literals used directly as predicate atoms (e.g. a catch-all TRUE)
are structural and never parameterized; booleans compared against a column
are parameters like any other literal.
"""

from __future__ import annotations

import datetime as dt
import re
import threading
from dataclasses import dataclass, field, replace
from typing import Optional

from .sqlast import (
    Between, BinaryOp, Column, FuncCall, InSet, IsNull, LikePattern, Literal,
    Marker, NullLiteral, OrderItem, Projection, SelectStmt, SetLiteral, Star,
    TableRef, Join, UnaryOp, COMPARISON_OPS, _FLIP, format_value, parse_sql,
    print_sql, sort_set_items,
)

NUMERIC = "numeric"
CATEGORICAL = "categorical"
DATETIME = "datetime"
SET = "set"
BOOLEAN = "boolean"

EQUALITY = "equality"
RANGE_LOW = "range_low"
RANGE_HIGH = "range_high"
IN_KIND = "in"
OTHER = "other"

_DATE_RE = re.compile(r"^\d{4}-\d{2}-\d{2}$")
_DATETIME_RE = re.compile(r"^\d{4}-\d{2}-\d{2}[ T]\d{2}:\d{2}(:\d{2})?$")


class TemplateError(Exception):
    pass


class TypeConflictError(TemplateError):
    """A parameter position saw literals of irreconcilable types."""


class ArityError(TemplateError):
    """Value count does not match the template's parameter count."""


@dataclass
class ParamDescriptor:
    position: int                      # 1-based, in extraction order
    inferred_type: str = CATEGORICAL
    predicate_kind: str = OTHER
    range_key: Optional[str] = None    # canonical text of the compared side
    integer: bool = True               # numeric positions: all values ints
    date_only: bool = True             # datetime positions: no time-of-day
    generalized: bool = False


@dataclass
class Template:
    id: int
    ast: SelectStmt                    # masked; markers for live positions
    canonical_text: str
    descriptors: list[ParamDescriptor]
    marker_map: dict[int, int] = field(default_factory=dict)  # position -> marker

    @property
    def param_count(self) -> int:
        return len(self.descriptors)

    def live_positions(self) -> list[int]:
        return [d.position for d in self.descriptors if not d.generalized]


@dataclass(frozen=True)
class ParamBinding:
    template_id: int
    values: tuple
    arrival: dt.datetime


@dataclass(frozen=True)
class _Site:
    position: int
    value: object
    predicate_kind: str
    range_key: Optional[str]


def _key_text(node) -> str:
    """Canonical text of an expression with every literal masked to '?'."""
    if isinstance(node, (Literal, SetLiteral, Marker)):
        return "?"
    if isinstance(node, NullLiteral):
        return "NULL"
    if isinstance(node, Column):
        return f"{node.table}.{node.name}" if node.table else node.name
    if isinstance(node, Star):
        return "*"
    if isinstance(node, FuncCall):
        return f"{node.name}({', '.join(_key_text(a) for a in node.args)})"
    if isinstance(node, BinaryOp):
        return f"({_key_text(node.left)} {node.op} {_key_text(node.right)})"
    if isinstance(node, UnaryOp):
        return f"({node.op} {_key_text(node.operand)})"
    return type(node).__name__


class _Masker:
    """Replaces data literals with markers, recording one site per marker."""

    def __init__(self):
        self.sites: list[_Site] = []

    def _mask(self, value, kind: str, key: Optional[str]) -> Marker:
        position = len(self.sites) + 1
        self.sites.append(_Site(position, value, kind, key))
        return Marker(position)

    def mask_statement(self, stmt: SelectStmt) -> SelectStmt:
        projections = tuple(
            p if isinstance(p, Star) else Projection(self.visit(p.expr, False), p.alias)
            for p in stmt.projections)
        tables = tuple(self._visit_table(t) for t in stmt.tables)
        where = self.visit(stmt.where, True) if stmt.where is not None else None
        group_by = tuple(self.visit(e, False) for e in stmt.group_by)
        having = self.visit(stmt.having, True) if stmt.having is not None else None
        order_by = tuple(OrderItem(self.visit(o.expr, False), o.direction)
                         for o in stmt.order_by)
        limit = self.visit(stmt.limit, False) if stmt.limit is not None else None
        return SelectStmt(projections, tables, where, group_by, having, order_by, limit)

    def _visit_table(self, node):
        if isinstance(node, TableRef):
            return node
        return Join(node.kind, self._visit_table(node.left), node.right,
                    self.visit(node.condition, True))

    def visit(self, node, bool_ctx: bool, kind: str = OTHER, key: Optional[str] = None):
        if isinstance(node, Literal):
            if bool_ctx and isinstance(node.value, bool):
                return node  # structural truth constant, not data
            return self._mask(node.value, kind, key)
        if isinstance(node, (NullLiteral, Marker, Column, Star)):
            return node
        if isinstance(node, SetLiteral):
            return self._mask(frozenset(node.items), kind, key)
        if isinstance(node, FuncCall):
            return FuncCall(node.name,
                            tuple(self.visit(a, False) for a in node.args),
                            node.distinct)
        if isinstance(node, UnaryOp):
            return UnaryOp(node.op, self.visit(node.operand, node.op == "NOT"))
        if isinstance(node, BinaryOp):
            if node.op in ("AND", "OR"):
                return BinaryOp(node.op, self.visit(node.left, True),
                                self.visit(node.right, True))
            if node.op in COMPARISON_OPS:
                return self._visit_comparison(node)
            return BinaryOp(node.op, self.visit(node.left, False),
                            self.visit(node.right, False))
        if isinstance(node, Between):
            ref = _key_text(node.expr)
            low_kind, high_kind = (RANGE_LOW, RANGE_HIGH) if not node.negated else (OTHER, OTHER)
            return Between(self.visit(node.expr, False),
                           self.visit(node.low, False, low_kind, ref),
                           self.visit(node.high, False, high_kind, ref),
                           node.negated)
        if isinstance(node, InSet):
            ref = _key_text(node.expr)
            kind = IN_KIND if not node.negated else OTHER
            expr = self.visit(node.expr, False)
            if isinstance(node.collection, SetLiteral):
                collection = self._mask(frozenset(node.collection.items), kind, ref)
            else:
                collection = node.collection
            return InSet(expr, collection, node.negated)
        if isinstance(node, LikePattern):
            pattern = (self.visit(node.pattern, False, OTHER, _key_text(node.expr))
                       if isinstance(node.pattern, Literal) else node.pattern)
            return LikePattern(self.visit(node.expr, False), pattern, node.negated)
        if isinstance(node, IsNull):
            return IsNull(self.visit(node.expr, False), node.negated)
        raise TemplateError(f"unexpected node {type(node).__name__}")

    def _visit_comparison(self, node: BinaryOp) -> BinaryOp:
        left_lit = isinstance(node.left, Literal)
        right_lit = isinstance(node.right, Literal)
        kind_map = {"=": EQUALITY, ">": RANGE_LOW, ">=": RANGE_LOW,
                    "<": RANGE_HIGH, "<=": RANGE_HIGH, "<>": OTHER}
        left_kind = right_kind = OTHER
        left_key = right_key = None
        if right_lit and not left_lit:
            right_kind = kind_map[node.op]
            right_key = _key_text(node.left)
        elif left_lit and not right_lit:
            left_kind = kind_map[_FLIP[node.op]]
            left_key = _key_text(node.right)
        return BinaryOp(node.op,
                        self.visit(node.left, False, left_kind, left_key),
                        self.visit(node.right, False, right_kind, right_key))


def mask_query(stmt: SelectStmt) -> tuple[SelectStmt, list[_Site]]:
    """Replace literals with markers; return the masked AST and its sites."""
    masker = _Masker()
    masked = masker.mask_statement(stmt)
    return masked, masker.sites


def canonical_key(masked_ast: SelectStmt) -> str:
    """Byte-stable identity key of a masked AST (dataclass reprs are stable)."""
    return repr(masked_ast)


# ---------------------------------------------------------------------------
# Value typing
# ---------------------------------------------------------------------------

def literal_type(value) -> str:
    if isinstance(value, bool):
        return BOOLEAN
    if isinstance(value, (int, float)):
        return NUMERIC
    if isinstance(value, frozenset):
        return SET
    if isinstance(value, str):
        if _DATE_RE.match(value) or _DATETIME_RE.match(value):
            return DATETIME
        return CATEGORICAL
    if isinstance(value, (dt.datetime, dt.date)):
        return DATETIME
    raise TemplateError(f"unsupported literal value {value!r}")


def value_as_datetime(value) -> dt.datetime:
    """Normalize a datetime-typed parameter value to a naive datetime."""
    if isinstance(value, dt.datetime):
        return value.replace(tzinfo=None, microsecond=0)
    if isinstance(value, dt.date):
        return dt.datetime(value.year, value.month, value.day)
    if isinstance(value, str):
        text = value.replace("T", " ")
        for fmt in ("%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%d"):
            try:
                return dt.datetime.strptime(text, fmt)
            except ValueError:
                continue
    raise TemplateError(f"not a datetime value: {value!r}")


def normalize_value(value, descriptor: ParamDescriptor):
    """Canonical comparison form for a bound value given its descriptor."""
    if descriptor.inferred_type == DATETIME:
        return value_as_datetime(value)
    if descriptor.inferred_type == NUMERIC and descriptor.integer:
        return int(round(value)) if not isinstance(value, bool) else value
    return value


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

class TemplateRegistry:
    """Append-only map from masked-AST identity to Template.

    Lookups are read-mostly; insertion is guarded by a lock so concurrent
    templatization threads assign a single id per structure.
    """

    def __init__(self):
        self._by_key: dict[str, int] = {}
        self.templates: dict[int, Template] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.templates)

    def get(self, template_id: int) -> Template:
        return self.templates[template_id]

    def register(self, masked_ast: SelectStmt, sites: list[_Site]) -> Template:
        key = canonical_key(masked_ast)
        existing = self._by_key.get(key)
        if existing is not None:
            return self.templates[existing]
        with self._lock:
            existing = self._by_key.get(key)
            if existing is not None:
                return self.templates[existing]
            template_id = len(self.templates)
            descriptors = []
            for site in sites:
                value_type = literal_type(site.value)
                descriptors.append(ParamDescriptor(
                    position=site.position,
                    inferred_type=value_type,
                    predicate_kind=site.predicate_kind,
                    range_key=site.range_key,
                    integer=not isinstance(site.value, (float,)),
                    date_only=(value_type != DATETIME
                               or bool(_DATE_RE.match(str(site.value)))),
                ))
            template = Template(
                id=template_id,
                ast=masked_ast,
                canonical_text=print_sql(masked_ast),
                descriptors=descriptors,
                marker_map={d.position: d.position for d in descriptors},
            )
            self.templates[template_id] = template
            self._by_key[key] = template_id
            return template

    def to_json(self) -> dict:
        out = {}
        for tid, t in sorted(self.templates.items()):
            out[str(tid)] = {
                "canonical_text": t.canonical_text,
                "descriptors": [vars(d).copy() for d in t.descriptors],
                "marker_map": {str(k): v for k, v in t.marker_map.items()},
            }
        return {"version": 1, "templates": out}

    @classmethod
    def from_json(cls, payload: dict) -> "TemplateRegistry":
        registry = cls()
        for tid_str, entry in sorted(payload["templates"].items(), key=lambda kv: int(kv[0])):
            tid = int(tid_str)
            ast = parse_sql(entry["canonical_text"])
            descriptors = [ParamDescriptor(**d) for d in entry["descriptors"]]
            template = Template(
                id=tid, ast=ast, canonical_text=entry["canonical_text"],
                descriptors=descriptors,
                marker_map={int(k): v for k, v in entry["marker_map"].items()},
            )
            registry.templates[tid] = template
            registry._by_key[canonical_key(ast)] = tid
        return registry


def templatize(text: str, arrival: dt.datetime, registry: TemplateRegistry) -> ParamBinding:
    """Parse a query, extract its literals and bind it to a template id."""
    stmt = parse_sql(text)
    masked, sites = mask_query(stmt)
    template = registry.register(masked, sites)
    return ParamBinding(template.id, tuple(site.value for site in sites), arrival)


# ---------------------------------------------------------------------------
# Type inference over observed bindings
# ---------------------------------------------------------------------------

def infer_param_types(template: Template, bindings: list[ParamBinding],
                      schema_overrides: Optional[dict] = None) -> Template:
    """Consolidate per-position types from sample bindings, in place.

    Numeric widths merge (int+float -> float); a datetime-looking string
    merged with a plain string widens to categorical; anything else mixed
    is a conflict.  ``schema_overrides`` maps a column name to a type name
    and wins over inference for positions filtering that column.
    """
    if not bindings:
        raise TemplateError("type inference needs at least one binding")
    for desc in template.descriptors:
        idx = desc.position - 1
        seen = set()
        all_int = True
        all_date_only = True
        for b in bindings:
            value = b.values[idx]
            vtype = literal_type(value)
            seen.add(vtype)
            if vtype == NUMERIC and isinstance(value, float):
                all_int = False
            if vtype == DATETIME and isinstance(value, str) and not _DATE_RE.match(value):
                all_date_only = False
        if seen == {DATETIME, CATEGORICAL}:
            seen = {CATEGORICAL}
        if len(seen) > 1:
            raise TypeConflictError(
                f"template {template.id} position {desc.position} saw types {sorted(seen)}")
        desc.inferred_type = seen.pop()
        desc.integer = desc.inferred_type == NUMERIC and all_int
        desc.date_only = all_date_only
        if schema_overrides and desc.range_key in schema_overrides:
            forced = schema_overrides[desc.range_key]
            if forced not in (NUMERIC, CATEGORICAL, DATETIME, SET, BOOLEAN):
                raise TemplateError(f"unknown override type {forced!r}")
            if forced == DATETIME:
                for b in bindings:
                    value_as_datetime(b.values[idx])  # raises if unparsable
            desc.inferred_type = forced
    return template


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _value_node(value, descriptor: ParamDescriptor):
    if isinstance(value, frozenset):
        return SetLiteral(sort_set_items(list(value)))
    if isinstance(value, (dt.datetime, dt.date)):
        stamp = value_as_datetime(value)
        if descriptor.date_only:
            return Literal(stamp.strftime("%Y-%m-%d"))
        return Literal(stamp.strftime("%Y-%m-%d %H:%M:%S"))
    if isinstance(value, (bool, int, float, str)):
        return Literal(value)
    raise TemplateError(f"cannot render value {value!r}")


def _substitute(node, values_by_marker: dict):
    if isinstance(node, Marker):
        return values_by_marker[node.index]
    if isinstance(node, (Literal, NullLiteral, Column, Star, TableRef)):
        return node
    if isinstance(node, SetLiteral):
        return node
    if isinstance(node, FuncCall):
        return FuncCall(node.name, tuple(_substitute(a, values_by_marker) for a in node.args),
                        node.distinct)
    if isinstance(node, UnaryOp):
        return UnaryOp(node.op, _substitute(node.operand, values_by_marker))
    if isinstance(node, BinaryOp):
        return BinaryOp(node.op, _substitute(node.left, values_by_marker),
                        _substitute(node.right, values_by_marker))
    if isinstance(node, Between):
        return Between(_substitute(node.expr, values_by_marker),
                       _substitute(node.low, values_by_marker),
                       _substitute(node.high, values_by_marker), node.negated)
    if isinstance(node, InSet):
        return InSet(_substitute(node.expr, values_by_marker),
                     _substitute(node.collection, values_by_marker), node.negated)
    if isinstance(node, LikePattern):
        return LikePattern(_substitute(node.expr, values_by_marker),
                           _substitute(node.pattern, values_by_marker), node.negated)
    if isinstance(node, IsNull):
        return IsNull(_substitute(node.expr, values_by_marker), node.negated)
    if isinstance(node, Join):
        return Join(node.kind, _substitute(node.left, values_by_marker), node.right,
                    _substitute(node.condition, values_by_marker))
    raise TemplateError(f"cannot substitute into {type(node).__name__}")


def render_query(template: Template, values) -> str:
    """Fill parameter values into the template and print the statement.

    Generalized positions are skipped; the remaining values must match the
    template's arity and types.
    """
    values = tuple(values)
    if len(values) != len(template.descriptors):
        raise ArityError(
            f"template {template.id} takes {len(template.descriptors)} values, "
            f"got {len(values)}")
    by_marker = {}
    for desc in template.descriptors:
        if desc.generalized:
            continue
        marker = template.marker_map[desc.position]
        by_marker[marker] = _value_node(values[desc.position - 1], desc)
    stmt = template.ast
    filled = SelectStmt(
        projections=tuple(
            p if isinstance(p, Star) else Projection(_substitute(p.expr, by_marker), p.alias)
            for p in stmt.projections),
        tables=tuple(_substitute(t, by_marker) if isinstance(t, Join) else t
                     for t in stmt.tables),
        where=_substitute(stmt.where, by_marker) if stmt.where is not None else None,
        group_by=tuple(_substitute(e, by_marker) for e in stmt.group_by),
        having=_substitute(stmt.having, by_marker) if stmt.having is not None else None,
        order_by=tuple(OrderItem(_substitute(o.expr, by_marker), o.direction)
                       for o in stmt.order_by),
        limit=_substitute(stmt.limit, by_marker) if stmt.limit is not None else None,
    )
    return print_sql(filled)


# ---------------------------------------------------------------------------
# Catch-all generalization of unpredictable predicates
# ---------------------------------------------------------------------------

class _AtomCollector:
    """Maps each marker index to its enclosing predicate atom id, if any."""

    def __init__(self):
        self.atom_of_marker: dict[int, int] = {}
        self._atoms: list = []

    def collect(self, node, bool_ctx: bool, atom: Optional[int] = None):
        if isinstance(node, Marker):
            if atom is not None:
                self.atom_of_marker[node.index] = atom
            return
        if isinstance(node, (Literal, NullLiteral, Column, Star, SetLiteral, TableRef)):
            return
        if isinstance(node, BinaryOp):
            if node.op in ("AND", "OR"):
                self.collect(node.left, True)
                self.collect(node.right, True)
                return
            if node.op in COMPARISON_OPS and bool_ctx and atom is None:
                atom = self._new_atom(node)
            self.collect(node.left, False, atom)
            self.collect(node.right, False, atom)
            return
        if isinstance(node, UnaryOp):
            self.collect(node.operand, node.op == "NOT", atom)
            return
        if isinstance(node, (Between, InSet, LikePattern, IsNull)):
            if bool_ctx and atom is None:
                atom = self._new_atom(node)
            for child in _predicate_children(node):
                self.collect(child, False, atom)
            return
        if isinstance(node, FuncCall):
            for a in node.args:
                self.collect(a, False, atom)
            return
        if isinstance(node, Join):
            self.collect(node.condition, True)
            return

    def _new_atom(self, node) -> int:
        self._atoms.append(node)
        return len(self._atoms) - 1

    def atom_node(self, atom_id: int):
        return self._atoms[atom_id]


def _predicate_children(node):
    if isinstance(node, Between):
        return (node.expr, node.low, node.high)
    if isinstance(node, InSet):
        return (node.expr, node.collection)
    if isinstance(node, LikePattern):
        return (node.expr, node.pattern)
    if isinstance(node, IsNull):
        return (node.expr,)
    raise TemplateError(type(node).__name__)


def _collect_markers(node, out: set):
    if isinstance(node, Marker):
        out.add(node.index)
    elif isinstance(node, BinaryOp):
        _collect_markers(node.left, out)
        _collect_markers(node.right, out)
    elif isinstance(node, UnaryOp):
        _collect_markers(node.operand, out)
    elif isinstance(node, (Between, InSet, LikePattern, IsNull)):
        for child in _predicate_children(node):
            _collect_markers(child, out)
    elif isinstance(node, FuncCall):
        for a in node.args:
            _collect_markers(a, out)


def _replace_atoms(node, doomed: set):
    """Rebuild an expression with doomed predicate atoms replaced by TRUE."""
    if id(node) in doomed:
        return Literal(True)
    if isinstance(node, BinaryOp):
        return BinaryOp(node.op, _replace_atoms(node.left, doomed),
                        _replace_atoms(node.right, doomed))
    if isinstance(node, UnaryOp):
        return UnaryOp(node.op, _replace_atoms(node.operand, doomed))
    return node


def _renumber(node, mapping: dict):
    if isinstance(node, Marker):
        return Marker(mapping[node.index])
    if isinstance(node, (Literal, NullLiteral, Column, Star, SetLiteral, TableRef)):
        return node
    if isinstance(node, FuncCall):
        return FuncCall(node.name, tuple(_renumber(a, mapping) for a in node.args),
                        node.distinct)
    if isinstance(node, UnaryOp):
        return UnaryOp(node.op, _renumber(node.operand, mapping))
    if isinstance(node, BinaryOp):
        return BinaryOp(node.op, _renumber(node.left, mapping), _renumber(node.right, mapping))
    if isinstance(node, Between):
        return Between(_renumber(node.expr, mapping), _renumber(node.low, mapping),
                       _renumber(node.high, mapping), node.negated)
    if isinstance(node, InSet):
        return InSet(_renumber(node.expr, mapping), _renumber(node.collection, mapping),
                     node.negated)
    if isinstance(node, LikePattern):
        return LikePattern(_renumber(node.expr, mapping), _renumber(node.pattern, mapping),
                           node.negated)
    if isinstance(node, IsNull):
        return IsNull(_renumber(node.expr, mapping), node.negated)
    if isinstance(node, Join):
        return Join(node.kind, _renumber(node.left, mapping), node.right,
                    _renumber(node.condition, mapping))
    raise TemplateError(f"cannot renumber {type(node).__name__}")


def generalize_template(template: Template, positions) -> Template:
    """Replace the predicates holding the given parameter positions by TRUE.

    Returns a new Template with the same id: flagged positions (and any
    sibling positions sharing a replaced predicate, as in BETWEEN) are
    marked generalized, surviving markers are renumbered left to right.
    """
    positions = sorted(set(positions))
    if not positions:
        return template
    valid = {d.position for d in template.descriptors}
    for p in positions:
        if p not in valid:
            raise TemplateError(f"position {p} out of range for template {template.id}")

    collector = _AtomCollector()
    stmt = template.ast
    for proj in stmt.projections:
        if not isinstance(proj, Star):
            collector.collect(proj.expr, False)
    for t in stmt.tables:
        collector.collect(t, False)
    if stmt.where is not None:
        collector.collect(stmt.where, True)
    for e in stmt.group_by:
        collector.collect(e, False)
    if stmt.having is not None:
        collector.collect(stmt.having, True)
    for o in stmt.order_by:
        collector.collect(o.expr, False)
    if stmt.limit is not None:
        collector.collect(stmt.limit, False)

    doomed_atoms = set()
    for p in positions:
        if template.descriptors[p - 1].generalized:
            continue
        marker = template.marker_map[p]
        atom_id = collector.atom_of_marker.get(marker)
        if atom_id is None:
            raise TemplateError(
                f"position {p} is not inside a predicate and cannot be generalized")
        doomed_atoms.add(atom_id)

    doomed_nodes = {id(collector.atom_node(a)) for a in doomed_atoms}
    removed_markers: set = set()
    for a in doomed_atoms:
        _collect_markers(collector.atom_node(a), removed_markers)

    new_where = _replace_atoms(stmt.where, doomed_nodes) if stmt.where is not None else None
    new_having = _replace_atoms(stmt.having, doomed_nodes) if stmt.having is not None else None
    new_tables = []
    for t in stmt.tables:
        if isinstance(t, Join):
            new_tables.append(_replace_join_atoms(t, doomed_nodes))
        else:
            new_tables.append(t)
    interim = SelectStmt(stmt.projections, tuple(new_tables), new_where, stmt.group_by,
                         new_having, stmt.order_by, stmt.limit)

    surviving = sorted(m for m in template.marker_map.values() if m not in removed_markers)
    renumber = {old: i + 1 for i, old in enumerate(surviving)}
    new_ast = SelectStmt(
        projections=tuple(
            p if isinstance(p, Star) else Projection(_renumber(p.expr, renumber), p.alias)
            for p in interim.projections),
        tables=tuple(_renumber(t, renumber) if isinstance(t, Join) else t
                     for t in interim.tables),
        where=_renumber(interim.where, renumber) if interim.where is not None else None,
        group_by=tuple(_renumber(e, renumber) for e in interim.group_by),
        having=_renumber(interim.having, renumber) if interim.having is not None else None,
        order_by=tuple(OrderItem(_renumber(o.expr, renumber), o.direction)
                       for o in interim.order_by),
        limit=_renumber(interim.limit, renumber) if interim.limit is not None else None,
    )

    new_descriptors = []
    new_marker_map = {}
    for desc in template.descriptors:
        old_marker = template.marker_map.get(desc.position)
        gone = desc.generalized or old_marker in removed_markers
        new_descriptors.append(replace(desc, generalized=gone))
        if not gone:
            new_marker_map[desc.position] = renumber[old_marker]
    return Template(template.id, new_ast, print_sql(new_ast), new_descriptors,
                    new_marker_map)


def _replace_join_atoms(node, doomed: set):
    if isinstance(node, Join):
        return Join(node.kind, _replace_join_atoms(node.left, doomed), node.right,
                    _replace_atoms(node.condition, doomed))
    return node
