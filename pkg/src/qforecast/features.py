"""Featurization: bindings and arrival times to numeric rows and back.

Every parameter is encoded by its inferred type (numbers pass through,
categoricals and sets are dictionary-coded through a fixed 64-bit FNV-1a
hash, datetimes explode into calendar parts), and every encoded slot is
paired with a delta slot holding the difference from the same template's
previous query.  Arrival times contribute calendar parts plus the
inter-arrival gap in seconds; decoding treats predicted gaps as the
authoritative clock and rebuilds datetimes from day-level parts.

Per-bin feature maps interleave all member templates by arrival, carry a
single hashed template-id slot, and carry forward inactive members' last
encodings so their deltas read zero.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import UTC, epoch_seconds, from_epoch
from .templates import (
    BOOLEAN, CATEGORICAL, DATETIME, NUMERIC, SET, ParamBinding, Template,
    TemplateRegistry, value_as_datetime,
)


class FeatureError(Exception):
    pass


# ---------------------------------------------------------------------------
# Hashing and dictionaries
# ---------------------------------------------------------------------------

_FNV_OFFSET = 14695981039346656037
_FNV_PRIME = 1099511628211
_FNV_MASK = (1 << 64) - 1


def fnv1a_64(data: bytes) -> int:
    value = _FNV_OFFSET
    for byte in data:
        value ^= byte
        value = (value * _FNV_PRIME) & _FNV_MASK
    return value


def hash_category(value_key: str, buckets: int, dictionary: dict) -> int:
    """Deterministic code for a categorical value; records it for decoding."""
    if buckets < 2:
        raise FeatureError("hash buckets must be >= 2")
    code = fnv1a_64(value_key.encode("utf-8")) % buckets
    dictionary.setdefault(value_key, code)
    return code


def _tag(value) -> list:
    if isinstance(value, bool):
        return ["b", value]
    if isinstance(value, (int, float)):
        return ["n", value]
    return ["s", str(value)]


def _untag(item):
    kind, raw = item
    if kind == "b":
        return bool(raw)
    if kind == "n":
        return int(raw) if float(raw).is_integer() else float(raw)
    return raw


def dict_key(value) -> str:
    """Stable dictionary key for a categorical or set value."""
    if isinstance(value, frozenset):
        items = sorted((_tag(v) for v in value), key=lambda t: (t[0], str(t[1])))
        return "set:" + json.dumps(items, separators=(",", ":"))
    return "s:" + str(value)


def key_to_value(key: str):
    if key.startswith("set:"):
        return frozenset(_untag(item) for item in json.loads(key[4:]))
    return key[2:]


# ---------------------------------------------------------------------------
# Calendar decomposition
# ---------------------------------------------------------------------------

DATETIME_PARTS = ("year", "month", "day", "hour", "minute", "second",
                  "dow", "doy", "weekend", "holiday", "season")


def season_of(month: int) -> int:
    """Meteorological northern-hemisphere season, winter=0 .. autumn=3."""
    return {12: 0, 1: 0, 2: 0, 3: 1, 4: 1, 5: 1,
            6: 2, 7: 2, 8: 2, 9: 3, 10: 3, 11: 3}[month]


def decompose_datetime(stamp: dt.datetime, holidays: frozenset = frozenset()) -> list:
    """Calendar parts of an instant, in DATETIME_PARTS order."""
    dow = stamp.weekday()
    return [
        stamp.year, stamp.month, stamp.day, stamp.hour, stamp.minute, stamp.second,
        dow, stamp.timetuple().tm_yday,
        1 if dow >= 5 else 0,
        1 if stamp.date().isoformat() in holidays else 0,
        season_of(stamp.month),
    ]


def load_holiday_calendar(path: str) -> frozenset:
    """Read a holiday file (one ISO date per line) into a frozenset."""
    days = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                days.add(dt.date.fromisoformat(line).isoformat())
    return frozenset(days)


_DAYS_IN_MONTH = (31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31)


def _days_in_month(year: int, month: int) -> int:
    if month == 2 and (year % 4 == 0 and (year % 100 != 0 or year % 400 == 0)):
        return 29
    return _DAYS_IN_MONTH[month - 1]


def compose_datetime(parts: dict, date_only: bool) -> dt.datetime:
    """Rebuild a datetime from predicted parts, clamping out-of-range fields."""
    year = int(np.clip(round(parts["year"]), 1, 9999))
    month = int(np.clip(round(parts["month"]), 1, 12))
    day = int(np.clip(round(parts["day"]), 1, _days_in_month(year, month)))
    if date_only:
        return dt.datetime(year, month, day)
    hour = int(np.clip(round(parts["hour"]), 0, 23))
    minute = int(np.clip(round(parts["minute"]), 0, 59))
    second = int(np.clip(round(parts["second"]), 0, 59))
    return dt.datetime(year, month, day, hour, minute, second)


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------

NUMERIC_SLOT = "numeric"
CAT_SLOT = "cat_hash"
PART_SLOT = "datetime_part"
BOOL_SLOT = "boolean"
SET_SLOT = "set_code"
TID_SLOT = "template_id"
ARRIVAL_SLOT = "arrival_part"
DELTA_SLOT = "delta"


@dataclass
class Slot:
    name: str
    kind: str
    member: Optional[str] = None     # member id owning a parameter slot
    position: Optional[int] = None   # 1-based parameter position
    part: Optional[str] = None       # calendar part name
    delta_of: Optional[str] = None   # for delta slots: the paired slot name


@dataclass
class MemberSpec:
    """One template (or sub-template time slice) inside a schema."""
    member_id: str
    template_id: int
    slices: Optional[tuple] = None   # fine-slot indices, None = whole template
    params: list = field(default_factory=list)  # per-position decode metadata

    @classmethod
    def for_template(cls, member_id: str, template: Template,
                     slices: Optional[tuple] = None) -> "MemberSpec":
        params = [{
            "position": d.position,
            "type": d.inferred_type,
            "integer": d.integer,
            "date_only": d.date_only,
            "generalized": d.generalized,
        } for d in template.descriptors]
        return cls(member_id, template.id, slices, params)


@dataclass
class FeatureSchema:
    slots: list
    members: list
    hash_buckets: int
    dictionaries: dict = field(default_factory=dict)   # slot name -> {key: code}
    holidays: frozenset = frozenset()
    norm_mean: Optional[np.ndarray] = None
    norm_std: Optional[np.ndarray] = None

    @property
    def width(self) -> int:
        return len(self.slots)

    def slot_index(self, name: str) -> int:
        for i, slot in enumerate(self.slots):
            if slot.name == name:
                return i
        raise FeatureError(f"no slot named {name}")

    def member(self, member_id: str) -> MemberSpec:
        for m in self.members:
            if m.member_id == member_id:
                return m
        raise FeatureError(f"no member {member_id}")

    def fingerprint(self) -> str:
        """Stable hash of the slot layout (not the dictionaries)."""
        desc = ";".join(f"{s.name}|{s.kind}" for s in self.slots)
        return format(fnv1a_64(desc.encode("utf-8")), "016x")

    def to_json(self) -> dict:
        return {
            "slots": [vars(s).copy() for s in self.slots],
            "members": [{"member_id": m.member_id, "template_id": m.template_id,
                         "slices": list(m.slices) if m.slices is not None else None,
                         "params": m.params} for m in self.members],
            "hash_buckets": self.hash_buckets,
            "dictionaries": self.dictionaries,
            "holidays": sorted(self.holidays),
            "norm_mean": self.norm_mean.tolist() if self.norm_mean is not None else None,
            "norm_std": self.norm_std.tolist() if self.norm_std is not None else None,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "FeatureSchema":
        schema = cls(
            slots=[Slot(**s) for s in payload["slots"]],
            members=[MemberSpec(m["member_id"], m["template_id"],
                                tuple(m["slices"]) if m["slices"] is not None else None,
                                m["params"])
                     for m in payload["members"]],
            hash_buckets=payload["hash_buckets"],
            dictionaries={k: dict(v) for k, v in payload["dictionaries"].items()},
            holidays=frozenset(payload.get("holidays", [])),
        )
        if payload.get("norm_mean") is not None:
            schema.norm_mean = np.asarray(payload["norm_mean"], dtype=np.float64)
            schema.norm_std = np.asarray(payload["norm_std"], dtype=np.float64)
        return schema


def _param_slots(member_id: str, spec: dict) -> list:
    pos = spec["position"]
    base = f"{member_id}.p{pos}"
    ptype = spec["type"]
    slots = []
    if ptype == NUMERIC:
        slots.append(Slot(f"{base}.value", NUMERIC_SLOT, member_id, pos))
    elif ptype == BOOLEAN:
        slots.append(Slot(f"{base}.value", BOOL_SLOT, member_id, pos))
    elif ptype == CATEGORICAL:
        slots.append(Slot(f"{base}.code", CAT_SLOT, member_id, pos))
    elif ptype == SET:
        slots.append(Slot(f"{base}.code", SET_SLOT, member_id, pos))
    elif ptype == DATETIME:
        for part in DATETIME_PARTS:
            slots.append(Slot(f"{base}.{part}", PART_SLOT, member_id, pos, part))
    else:
        raise FeatureError(f"unknown parameter type {ptype}")
    deltas = [Slot(f"{s.name}.delta", DELTA_SLOT, member_id, pos, s.part, delta_of=s.name)
              for s in slots]
    return slots + deltas


def _arrival_slots() -> list:
    slots = [Slot(f"arrival.{part}", ARRIVAL_SLOT, part=part) for part in DATETIME_PARTS]
    slots.append(Slot("arrival.gap", DELTA_SLOT, delta_of="arrival"))
    return slots


def build_template_schema(template: Template, hash_buckets: int,
                          holidays: frozenset = frozenset()) -> FeatureSchema:
    """Schema for one template: parameter slots plus arrival slots."""
    member = MemberSpec.for_template(f"t{template.id}", template)
    slots = []
    for spec in member.params:
        if spec["generalized"]:
            continue
        slots.extend(_param_slots(member.member_id, spec))
    slots.extend(_arrival_slots())
    return FeatureSchema(slots, [member], hash_buckets, holidays=holidays)


def build_bin_schema(members: list, hash_buckets: int,
                     holidays: frozenset = frozenset()) -> FeatureSchema:
    """Schema for a bin: template-id slot, member parameter slots, arrival."""
    if not members:
        raise FeatureError("a bin schema needs at least one member")
    slots = [Slot("tid", TID_SLOT)]
    for member in members:
        for spec in member.params:
            if spec["generalized"]:
                continue
            slots.extend(_param_slots(member.member_id, spec))
    slots.extend(_arrival_slots())
    return FeatureSchema(slots, list(members), hash_buckets, holidays=holidays)


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------

def encode_param(value, spec: dict, schema: FeatureSchema, slot_base: str) -> list:
    ptype = spec["type"]
    if ptype == NUMERIC:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise FeatureError(f"expected numeric value, got {value!r}")
        return [float(value)]
    if ptype == BOOLEAN:
        return [1.0 if value else 0.0]
    if ptype in (CATEGORICAL, SET):
        dictionary = schema.dictionaries.setdefault(f"{slot_base}.code", {})
        return [float(hash_category(dict_key(value), schema.hash_buckets, dictionary))]
    if ptype == DATETIME:
        return [float(x) for x in
                decompose_datetime(value_as_datetime(value), schema.holidays)]
    raise FeatureError(f"unknown parameter type {ptype}")


def build_query_vector(binding: ParamBinding, prev: Optional[ParamBinding],
                       member: MemberSpec, schema: FeatureSchema) -> np.ndarray:
    """Parameter value slots plus delta slots against the previous binding."""
    values = []
    deltas = []
    for spec in member.params:
        if spec["generalized"]:
            continue
        idx = spec["position"] - 1
        base = f"{member.member_id}.p{spec['position']}"
        cur = encode_param(binding.values[idx], spec, schema, base)
        if prev is not None:
            before = encode_param(prev.values[idx], spec, schema, base)
            delta = [c - b for c, b in zip(cur, before)]
        else:
            delta = [0.0] * len(cur)
        values.extend(cur + delta)
    return np.asarray(values, dtype=np.float64)


def build_arrival_vector(arrival: dt.datetime, prev: Optional[dt.datetime],
                         schema: FeatureSchema) -> np.ndarray:
    """Calendar parts of the arrival plus the inter-arrival gap in seconds."""
    if prev is not None and arrival < prev:
        raise FeatureError("arrival precedes its predecessor")
    parts = decompose_datetime(arrival.astimezone(UTC), schema.holidays)
    gap = float(epoch_seconds(arrival) - epoch_seconds(prev)) if prev is not None else 0.0
    return np.asarray([float(p) for p in parts] + [gap], dtype=np.float64)


@dataclass
class FeatureMap:
    """Time-ordered feature rows for one template or one bin."""
    schema: FeatureSchema
    rows: np.ndarray                      # (n, width) float64, unstandardized
    arrivals: list = field(default_factory=list)
    row_members: list = field(default_factory=list)  # member id per row

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def anchor(self) -> dt.datetime:
        if not self.arrivals:
            raise FeatureError("empty feature map has no anchor")
        return self.arrivals[-1]


def assemble_template_map(template: Template, bindings: list,
                          schema: FeatureSchema) -> FeatureMap:
    """Feature map of one template's bindings, ordered by arrival."""
    if not bindings:
        raise FeatureError("cannot featurize an empty binding list")
    ordered = sorted(bindings, key=lambda b: b.arrival)
    member = schema.members[0]
    rows = []
    prev = None
    for binding in ordered:
        qvec = build_query_vector(binding, prev, member, schema)
        avec = build_arrival_vector(binding.arrival, prev.arrival if prev else None, schema)
        rows.append(np.concatenate([qvec, avec]))
        prev = binding
    rows = np.vstack(rows)
    if rows.shape[1] != schema.width:
        raise FeatureError(f"row width {rows.shape[1]} != schema width {schema.width}")
    return FeatureMap(schema, rows, [b.arrival for b in ordered],
                      [member.member_id] * len(ordered))


def member_tid_code(member_id: str, schema: FeatureSchema) -> int:
    dictionary = schema.dictionaries.setdefault("tid", {})
    return hash_category(member_id, schema.hash_buckets, dictionary)


def assemble_bin_map(bindings_by_member: dict, schema: FeatureSchema) -> FeatureMap:
    """Interleave member templates' bindings into one per-bin feature map.

    Inactive members carry forward their last observed value slots with
    zero deltas (zeros before their first observation).
    """
    stream = []
    for order, member in enumerate(schema.members):
        for seq, binding in enumerate(
                sorted(bindings_by_member.get(member.member_id, []),
                       key=lambda b: b.arrival)):
            stream.append((binding.arrival, order, seq, member, binding))
    if not stream:
        raise FeatureError("cannot featurize an empty bin")
    stream.sort(key=lambda item: (item[0], item[1], item[2]))

    width = schema.width
    slot_range = {}   # member id -> (start, stop) of its slot block
    for i, slot in enumerate(schema.slots):
        if slot.member is not None:
            start, _ = slot_range.get(slot.member, (i, i))
            slot_range[slot.member] = (min(start, i), i + 1)
    delta_cols = np.asarray([i for i, s in enumerate(schema.slots)
                             if s.kind == DELTA_SLOT and s.member is not None], dtype=int)

    rows = np.zeros((len(stream), width), dtype=np.float64)
    carry = np.zeros(width, dtype=np.float64)
    last_binding: dict = {}
    prev_arrival = None
    arrivals = []
    row_members = []
    for i, (arrival, _, _, member, binding) in enumerate(stream):
        row = carry.copy()
        if delta_cols.size:
            row[delta_cols] = 0.0
        qvec = build_query_vector(binding, last_binding.get(member.member_id),
                                  member, schema)
        start, stop = slot_range[member.member_id]
        row[start:stop] = qvec
        row[schema.slot_index("tid")] = float(member_tid_code(member.member_id, schema))
        avec = build_arrival_vector(arrival, prev_arrival, schema)
        row[width - len(avec):] = avec
        rows[i] = row
        carry = row
        last_binding[member.member_id] = binding
        prev_arrival = arrival
        arrivals.append(arrival)
        row_members.append(member.member_id)
    return FeatureMap(schema, rows, arrivals, row_members)


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------

def fit_standardization(schema: FeatureSchema, rows: np.ndarray) -> None:
    """Fit per-slot mean/std on training rows; zero-variance slots keep std 1."""
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)
    std[std == 0.0] = 1.0
    schema.norm_mean = mean
    schema.norm_std = std


def standardize(schema: FeatureSchema, rows: np.ndarray) -> np.ndarray:
    if schema.norm_mean is None:
        raise FeatureError("schema has no standardization stats")
    return (rows - schema.norm_mean) / schema.norm_std


def destandardize(schema: FeatureSchema, rows: np.ndarray) -> np.ndarray:
    if schema.norm_mean is None:
        raise FeatureError("schema has no standardization stats")
    return rows * schema.norm_std + schema.norm_mean


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------

def _reverse_dictionary(dictionary: dict) -> tuple[np.ndarray, list]:
    codes = []
    keys = []
    seen = set()
    for key, code in dictionary.items():
        if code in seen:
            continue  # hash collision: first registered value wins
        seen.add(code)
        codes.append(float(code))
        keys.append(key)
    order = np.argsort(np.asarray(codes))
    return np.asarray(codes)[order], [keys[i] for i in order]


def _snap_code(predicted: float, dictionary: dict, slot_name: str):
    if not dictionary:
        raise FeatureError(f"empty dictionary for slot {slot_name}")
    codes, keys = _reverse_dictionary(dictionary)
    idx = int(np.argmin(np.abs(codes - predicted)))
    return keys[idx]


def decode_vector(row: np.ndarray, schema: FeatureSchema, cumulative_gap: float,
                  registry: TemplateRegistry) -> tuple[int, tuple, float, str]:
    """Decode one predicted row.

    Returns (template_id, values, cumulative_gap', member_id); the caller
    anchors arrivals at ``anchor + cumulative_gap'`` seconds.  Generalized
    positions decode to None and are skipped at render time.
    """
    if row.shape[0] != schema.width:
        raise FeatureError(f"row width {row.shape[0]} != schema width {schema.width}")
    if len(schema.members) == 1:
        member = schema.members[0]
    else:
        key = _snap_code(row[schema.slot_index("tid")], schema.dictionaries.get("tid", {}),
                         "tid")
        member = schema.member(key)

    values = []
    for spec in member.params:
        if spec["generalized"]:
            values.append(None)
            continue
        base = f"{member.member_id}.p{spec['position']}"
        ptype = spec["type"]
        if ptype == NUMERIC:
            raw = float(row[schema.slot_index(f"{base}.value")])
            values.append(int(round(raw)) if spec["integer"] else raw)
        elif ptype == BOOLEAN:
            values.append(bool(row[schema.slot_index(f"{base}.value")] >= 0.5))
        elif ptype in (CATEGORICAL, SET):
            key = _snap_code(row[schema.slot_index(f"{base}.code")],
                             schema.dictionaries.get(f"{base}.code", {}), f"{base}.code")
            values.append(key_to_value(key))
        elif ptype == DATETIME:
            parts = {part: float(row[schema.slot_index(f"{base}.{part}")])
                     for part in ("year", "month", "day", "hour", "minute", "second")}
            values.append(compose_datetime(parts, spec["date_only"]))
        else:
            raise FeatureError(f"unknown parameter type {ptype}")

    gap = max(0.0, float(row[schema.slot_index("arrival.gap")]))
    return member.template_id, tuple(values), cumulative_gap + gap, member.member_id


def decode_rows(rows: np.ndarray, schema: FeatureSchema, anchor: dt.datetime,
                registry: TemplateRegistry) -> list:
    """Decode predicted rows into (template_id, values, arrival, member_id)."""
    out = []
    cumulative = 0.0
    base = epoch_seconds(anchor)
    for row in rows:
        template_id, values, cumulative, member_id = decode_vector(
            row, schema, cumulative, registry)
        arrival = from_epoch(base + round(cumulative))
        out.append((template_id, values, arrival, member_id))
    return out
