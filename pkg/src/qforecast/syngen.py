"""Deterministic synthetic workload generation with ground-truth labels.

Parameter series follow four evolving-pattern classes: trending values
(arithmetic ladders or advancing dates), periodic values (sawtooth
ladders for numbers, cyclic rotation for categoricals), combinations of
both, and seeded random picks (the only class labeled unpredictable).
Every value is a pure function of (seed, query index), so equal seeds
give byte-identical logs and drift injection can re-render the tail of a
series without touching the prefix.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field
from typing import Optional

from .core import TimedQuery, TimedWorkload, parse_timestamp
from .features import fnv1a_64
from .metrics import PREDICTABLE_BY_MODEL, TRIVIAL_TO_PREDICT, UNPREDICTABLE
from .sqlast import format_value, parse_sql
from .templates import TemplateRegistry, templatize


class GeneratorError(Exception):
    pass


def _pick(seed: int, index: int, n: int) -> int:
    """Stateless uniform pick in [0, n) from (seed, index)."""
    return fnv1a_64(f"{seed}:{index}".encode()) % n


@dataclass
class PatternSpec:
    """One parameter's evolving pattern.

    kind: trend | periodic | combined | random
    type: int | str | date | datetime | bool | set
    """
    kind: str
    type: str
    # trend fields
    start: Optional[object] = None      # int intercept or ISO date
    step: int = 1
    step_every: int = 1
    # periodic fields
    period: int = 0
    values: Optional[list] = None
    # random fields
    choices: Optional[list] = None

    @classmethod
    def from_json(cls, payload: dict) -> "PatternSpec":
        return cls(**payload)

    def label(self) -> str:
        if self.kind == "random":
            return UNPREDICTABLE
        distinct = len(self.values) if self.values else self.period
        if self.kind == "periodic" and 0 < distinct <= 3:
            return TRIVIAL_TO_PREDICT
        return PREDICTABLE_BY_MODEL

    def value_at(self, index: int, seed: int):
        if self.kind == "trend":
            return self._trend_at(index)
        if self.kind == "periodic":
            return self._periodic_at(index)
        if self.kind == "combined":
            return self._combined_at(index)
        if self.kind == "random":
            if not self.choices:
                raise GeneratorError("random pattern needs choices")
            return _coerce(self.choices[_pick(seed, index, len(self.choices))], self.type)
        raise GeneratorError(f"unknown pattern kind {self.kind}")

    def _trend_at(self, index: int):
        steps = (index // max(1, self.step_every)) * self.step
        if self.type == "int":
            return int(self.start or 0) + steps
        if self.type in ("date", "datetime"):
            base = dt.datetime.fromisoformat(str(self.start))
            stamp = base + dt.timedelta(days=steps)
            return stamp.strftime("%Y-%m-%d" if self.type == "date"
                                  else "%Y-%m-%d %H:%M:%S")
        raise GeneratorError(f"trend unsupported for type {self.type}")

    def _periodic_at(self, index: int):
        if self.values:
            return _coerce(self.values[index % len(self.values)], self.type)
        if self.period < 2:
            raise GeneratorError("periodic pattern needs period >= 2 or values")
        if self.type == "int":
            return int(self.start or 0) + (index % self.period)
        raise GeneratorError(f"periodic waveform unsupported for type {self.type}")

    def _combined_at(self, index: int):
        if self.type == "int":
            steps = (index // max(1, self.step_every)) * self.step
            return int(self.start or 0) + steps + (index % max(2, self.period))
        if self.type == "datetime":
            base = dt.datetime.fromisoformat(str(self.start))
            days = (index // max(1, self.step_every)) * self.step
            hours = index % max(2, self.period)
            return (base + dt.timedelta(days=days, hours=hours)).strftime(
                "%Y-%m-%d %H:%M:%S")
        raise GeneratorError(f"combined unsupported for type {self.type}")


def _coerce(value, type_name: str):
    if type_name == "set":
        if isinstance(value, (list, tuple)):
            return frozenset(value)
        return frozenset([value])
    if type_name == "bool":
        return bool(value)
    return value


@dataclass
class TemplateSpec:
    sql: str                       # statement with $1..$p markers
    count: int
    params: list                   # PatternSpec per marker position
    arrival_kind: str = "constant"
    gap_seconds: int = 60
    amplitude: float = 0.0         # time-of-day modulation for 'daily'

    @classmethod
    def from_json(cls, payload: dict) -> "TemplateSpec":
        arrival = payload.get("arrival", {})
        return cls(
            sql=payload["sql"],
            count=payload["count"],
            params=[PatternSpec.from_json(p) for p in payload["params"]],
            arrival_kind=arrival.get("kind", "constant"),
            gap_seconds=arrival.get("gap_seconds", 60),
            amplitude=arrival.get("amplitude", 0.0),
        )

    def to_json(self) -> dict:
        return {
            "sql": self.sql,
            "count": self.count,
            "params": [{k: v for k, v in vars(p).items() if v not in (None, 0, 1, [])
                        or k in ("kind", "type")} for p in self.params],
            "arrival": {"kind": self.arrival_kind, "gap_seconds": self.gap_seconds,
                        "amplitude": self.amplitude},
        }


@dataclass
class WorkloadSpec:
    templates: list
    seed: int = 0
    start: str = "2023-01-01T00:00:00Z"

    @classmethod
    def from_json(cls, payload: dict) -> "WorkloadSpec":
        return cls(
            templates=[TemplateSpec.from_json(t) for t in payload["templates"]],
            seed=payload.get("seed", 0),
            start=payload.get("start", "2023-01-01T00:00:00Z"),
        )

    @classmethod
    def load(cls, path: str) -> "WorkloadSpec":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def to_json(self) -> dict:
        return {"seed": self.seed, "start": self.start,
                "templates": [t.to_json() for t in self.templates]}


@dataclass
class GenResult:
    workload: TimedWorkload
    labels: list                    # {template_index, position, kind, label}
    template_sqls: list
    per_template: list = field(default_factory=list)  # TimedWorkload shards


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def _format_param(value) -> str:
    if isinstance(value, frozenset):
        items = sorted(value, key=lambda v: (str(type(v)), str(v)))
        return "(" + ", ".join(format_value(v) for v in items) + ")"
    return format_value(value)


def _render_marker_sql(sql: str, values: list) -> str:
    out = sql
    for i in range(len(values), 0, -1):
        out = out.replace(f"${i}", _format_param(values[i - 1]))
    return out


def _validate_marker_sql(sql: str, n_params: int) -> None:
    parse_sql(sql)  # must be inside the supported subset
    for i in range(1, n_params + 1):
        if f"${i}" not in sql:
            raise GeneratorError(f"marker ${i} missing from template sql")


def _arrivals(spec: TemplateSpec, start: dt.datetime) -> list:
    stamps = []
    current = start
    for i in range(spec.count):
        stamps.append(current)
        gap = float(spec.gap_seconds)
        if spec.arrival_kind == "daily" and spec.amplitude:
            import math
            frac = (current.hour * 3600 + current.minute * 60 + current.second) / 86400.0
            gap = gap * (1.0 + spec.amplitude * math.sin(2 * math.pi * frac))
        current = current + dt.timedelta(seconds=max(1, round(gap)))
    return stamps


def _param_values(tspec: TemplateSpec, index: int, seed: int,
                  t_index: int, overrides: Optional[dict] = None) -> list:
    values = []
    for pos, pattern in enumerate(tspec.params, start=1):
        active = pattern
        if overrides and (t_index, pos) in overrides:
            at_index, mutated = overrides[(t_index, pos)]
            if index >= at_index:
                active = mutated
        values.append(active.value_at(index, seed * 1000003 + t_index * 101 + pos))
    return values


def generate_workload(spec: WorkloadSpec,
                      _overrides: Optional[dict] = None) -> GenResult:
    """Render a deterministic timed workload plus ground-truth labels."""
    start = parse_timestamp(spec.start)
    shards = []
    labels = []
    for t_index, tspec in enumerate(spec.templates):
        _validate_marker_sql(tspec.sql, len(tspec.params))
        stamps = _arrivals(tspec, start)
        queries = []
        for i, stamp in enumerate(stamps):
            values = _param_values(tspec, i, spec.seed, t_index, _overrides)
            queries.append(TimedQuery(_render_marker_sql(tspec.sql, values), stamp))
        shards.append(TimedWorkload(queries))
        for pos, pattern in enumerate(tspec.params, start=1):
            labels.append({"template_index": t_index, "position": pos,
                           "kind": pattern.kind, "label": pattern.label()})
    workload = TimedWorkload.merge(*shards)
    return GenResult(workload, labels, [t.sql for t in spec.templates], shards)


def inject_drift(spec: WorkloadSpec, at: dt.datetime, template_index: int,
                 position: int, mutated: PatternSpec) -> GenResult:
    """Regenerate with one parameter following a mutated pattern from ``at``.

    Queries arriving before ``at`` are bit-identical to the undrifted
    workload; on and after ``at`` the flagged parameter follows the new
    pattern (evaluated at the same per-template indices).
    """
    tspec = spec.templates[template_index]
    if not (1 <= position <= len(tspec.params)):
        raise GeneratorError(f"position {position} out of range")
    start = parse_timestamp(spec.start)
    stamps = _arrivals(tspec, start)
    at_index = next((i for i, s in enumerate(stamps) if s >= at), len(stamps))
    overrides = {(template_index, position): (at_index, mutated)}
    return generate_workload(spec, overrides)


def add_emerging_template(workload: TimedWorkload, tspec: TemplateSpec,
                          start_at: dt.datetime, seed: int = 0) -> TimedWorkload:
    """Merge a new template's queries, appearing only from ``start_at`` on."""
    _validate_marker_sql(tspec.sql, len(tspec.params))
    stamps = _arrivals(tspec, start_at)
    queries = []
    for i, stamp in enumerate(stamps):
        values = [p.value_at(i, seed * 1000003 + 999 + pos)
                  for pos, p in enumerate(tspec.params, start=1)]
        queries.append(TimedQuery(_render_marker_sql(tspec.sql, values), stamp))
    return TimedWorkload.merge(workload, TimedWorkload(queries))


def bindings_by_template(workload: TimedWorkload,
                         registry: Optional[TemplateRegistry] = None):
    """Templatize a workload; returns (registry, {template_id: [bindings]})."""
    registry = registry if registry is not None else TemplateRegistry()
    grouped: dict = {}
    for q in workload:
        binding = templatize(q.text, q.arrival, registry)
        grouped.setdefault(binding.template_id, []).append(binding)
    return registry, grouped


# ---------------------------------------------------------------------------
# Bundled demo suite
# ---------------------------------------------------------------------------

def demo_suite() -> dict:
    """The bundled synthetic workloads: periodic, trend, combined, mixed.

    The three pattern workloads arrive hourly so the period-24 parameter
    cycles ride the daily calendar, matching the telemetry shape they
    imitate; the mixed workload runs at minute scale to exercise cutting
    and packing at one-hour target windows.
    """
    periodic = WorkloadSpec(seed=11, start="2023-01-01T00:00:00Z", templates=[
        TemplateSpec(
            sql="SELECT * FROM telemetry WHERE deviceType = $1 AND errorType = $2",
            count=2000,
            params=[
                PatternSpec("periodic", "str",
                            values=["dev-a", "dev-b", "dev-c", "dev-d"]),
                PatternSpec("periodic", "int", period=24),
            ],
            gap_seconds=3600,
        ),
    ])
    trend = WorkloadSpec(seed=12, start="2023-01-01T00:00:00Z", templates=[
        TemplateSpec(
            sql=("SELECT * FROM events WHERE eventDate BETWEEN $1 AND $2 "
                 "AND region = $3"),
            count=2000,
            params=[
                PatternSpec("trend", "date", start="2023-01-01", step=1, step_every=24),
                PatternSpec("trend", "date", start="2023-01-07", step=1, step_every=24),
                PatternSpec("periodic", "str", values=["global"]),
            ],
            gap_seconds=3600,
        ),
    ])
    combined = WorkloadSpec(seed=13, start="2023-02-01T00:00:00Z", templates=[
        TemplateSpec(
            sql="SELECT * FROM sales WHERE snapshotTime = $1 AND storeId = $2",
            count=2000,
            params=[
                PatternSpec("combined", "datetime", start="2023-02-01",
                            step=1, step_every=24, period=24),
                PatternSpec("periodic", "int", start=100, period=12),
            ],
            gap_seconds=3600,
        ),
    ])
    mixed = WorkloadSpec(seed=14, start="2023-03-01T00:00:00Z", templates=[
        TemplateSpec(
            sql="SELECT * FROM hits WHERE pageId = $1 AND status = $2",
            count=2000,
            params=[
                PatternSpec("periodic", "int", period=20),
                PatternSpec("periodic", "str", values=["ok", "err"]),
            ],
            gap_seconds=90,
        ),
        TemplateSpec(
            sql="SELECT * FROM jobs WHERE queue = $1 AND prio = $2",
            count=600,
            params=[
                PatternSpec("periodic", "str", values=["etl", "adhoc", "report"]),
                PatternSpec("periodic", "int", period=6),
            ],
            gap_seconds=300,
        ),
        TemplateSpec(
            sql="SELECT * FROM audit WHERE actor = $1",
            count=300,
            params=[
                PatternSpec("periodic", "str",
                            values=["svc-1", "svc-2", "svc-3", "svc-4", "svc-5"]),
            ],
            gap_seconds=600,
        ),
    ])
    return {"periodic": periodic, "trend": trend, "combined": combined, "mixed": mixed}
