"""End-to-end orchestration: train sessions, forecast, persist, emit.

Per-template mode trains one window forecaster per template for next-k;
per-bin mode first estimates template sizes over the preview horizon,
cuts and packs templates into a bin plan, then trains one forecaster per
bin for next-interval forecasting.  Templates (or bins) without enough
rows fall back to the history baseline and are flagged.

A trained session round-trips losslessly through the model store: each
model blob carries its schema, its trailing input window and its anchor,
so forecasts after reload are bit-identical.
"""

from __future__ import annotations

import datetime as dt
import json
import multiprocessing
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (
    EngineConfig, ForecastResult, ModelStore, TimedQuery, TimedWorkload,
    epoch_seconds, format_timestamp, pack_arrays, parse_timestamp,
    save_model_store, unpack_arrays, write_workload_log,
)
from .features import (
    FeatureMap, FeatureSchema, MemberSpec, assemble_bin_map,
    assemble_template_map, build_bin_schema, build_template_schema,
    decode_rows, fnv1a_64,
)
from .models import (
    RateForecaster, Seq2SeqForecaster, history_forecast_dt, history_forecast_k,
    train_forecaster, train_rate_forecaster,
)
from .planner import BinPlan, plan_bins, summarize_rate_forecast
from .syngen import bindings_by_template
from .templates import (
    ParamBinding, Template, TemplateRegistry, generalize_template,
    infer_param_types, render_query,
)


class PipelineError(Exception):
    pass


PER_TEMPLATE = "per-template"
PER_BIN = "per-bin"


def derive_seed(base_seed: int, model_id: str) -> int:
    """Stable per-model seed so parallel training is schedule-invariant."""
    return (base_seed * 1000003 + fnv1a_64(model_id.encode()) % 65521) % (1 << 31)


@dataclass
class ModelEntry:
    model_id: str
    kind: str                              # 'seq2seq' or 'history'
    model: Optional[Seq2SeqForecaster] = None
    tail_rows: Optional[np.ndarray] = None  # last k raw feature rows
    anchor: Optional[dt.datetime] = None    # last arrival seen by this model
    history: list = field(default_factory=list)   # (text, arrival) fallback tail
    members: list = field(default_factory=list)   # unit ids covered


@dataclass
class ForecastSession:
    config: EngineConfig
    registry: TemplateRegistry
    mode: str
    anchor: dt.datetime
    models: dict = field(default_factory=dict)        # model id -> ModelEntry
    plan: Optional[BinPlan] = None
    templates_view: dict = field(default_factory=dict)  # id -> (generalized) Template
    fallbacks: set = field(default_factory=set)
    rate_models: dict = field(default_factory=dict)   # template id -> RateForecaster
    holidays: frozenset = frozenset()

    def template_for(self, template_id: int) -> Template:
        return self.templates_view.get(template_id, self.registry.get(template_id))


# ---------------------------------------------------------------------------
# Rate series and size estimation
# ---------------------------------------------------------------------------

def rate_series(bindings: list, fine_seconds: int,
                end: Optional[dt.datetime] = None) -> np.ndarray:
    """Counts per fine slot on a UTC-aligned grid from first binding to end."""
    if not bindings:
        return np.zeros(0)
    arrivals = sorted(epoch_seconds(b.arrival) for b in bindings)
    first_slot = arrivals[0] // fine_seconds
    last_slot = (epoch_seconds(end) if end else arrivals[-1]) // fine_seconds
    counts = np.zeros(last_slot - first_slot + 1)
    for a in arrivals:
        counts[a // fine_seconds - first_slot] += 1
    return counts


def historical_sizes(series: np.ndarray, window_slots: int) -> tuple[int, np.ndarray]:
    """Observed-max fallback when a rate model cannot be trained."""
    full = (series.size // window_slots) * window_slots
    if full == 0:
        total = int(series.sum())
        per_slot = np.ceil(np.resize(series, window_slots)).astype(int)
        return total, per_slot
    windows = series[-full:].reshape(-1, window_slots)
    return int(windows.sum(axis=1).max()), np.ceil(windows.max(axis=0)).astype(int)


def estimate_template_sizes(grouped: dict, cfg: EngineConfig,
                            anchor: dt.datetime) -> tuple[dict, dict]:
    """Conservative (window, per-slot) size estimates per template.

    Trains the one-layer rate model where the count series is long enough
    (4x the preview horizon) and falls back to observed maxima otherwise.
    Returns (sizes, rate_models).
    """
    horizon_slots = cfg.horizon_t // cfg.delta_t_fine
    window_slots = cfg.delta_t // cfg.delta_t_fine
    sizes = {}
    rate_models = {}
    for template_id in sorted(grouped):
        series = rate_series(grouped[template_id], cfg.delta_t_fine, anchor)
        if series.size >= 4 * horizon_slots:
            model = train_rate_forecaster(
                series, cfg, horizon_slots,
                seed=derive_seed(cfg.seed, f"rate{template_id}"))
            rate_models[template_id] = model
            fine_forecast = model.predict_raw(series)
            sizes[template_id] = summarize_rate_forecast(fine_forecast, window_slots)
        else:
            sizes[template_id] = historical_sizes(series, window_slots)
    return sizes, rate_models


def fine_slot_index(arrival: dt.datetime, cfg: EngineConfig) -> int:
    """Index of an arrival's fine slot within the target window grid."""
    window_slots = cfg.delta_t // cfg.delta_t_fine
    return (epoch_seconds(arrival) // cfg.delta_t_fine) % window_slots


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _train_template_job(args) -> tuple[str, bytes]:
    model_id, template, bindings, cfg, holidays = args
    schema = build_template_schema(template, cfg.hash_buckets, holidays)
    fmap = assemble_template_map(template, bindings, schema)
    model = train_forecaster(fmap, cfg, seed=derive_seed(cfg.seed, model_id))
    extra = _entry_extra(model_id, fmap, cfg.k, [f"t{template.id}"])
    return model_id, model.to_bytes(extra)


def _train_bin_job(args) -> tuple[str, bytes]:
    model_id, members, bindings_by_member, cfg, holidays = args
    schema = build_bin_schema(members, cfg.hash_buckets, holidays)
    fmap = assemble_bin_map(bindings_by_member, schema)
    model = train_forecaster(fmap, cfg, seed=derive_seed(cfg.seed, model_id))
    extra = _entry_extra(model_id, fmap, cfg.k, [m.member_id for m in members])
    return model_id, model.to_bytes(extra)


def _entry_extra(model_id: str, fmap: FeatureMap, k: int, members: list) -> dict:
    return {
        "model_id": model_id,
        "tail_rows": fmap.rows[-k:].tolist(),
        "anchor": format_timestamp(fmap.anchor),
        "members": members,
    }


def _entry_from_blob(blob: bytes) -> ModelEntry:
    header, _ = unpack_arrays(blob)
    if header["kind"] == "history":
        extra = header["extra"]
        return ModelEntry(
            extra["model_id"], "history",
            anchor=parse_timestamp(extra["anchor"]),
            history=[(text, parse_timestamp(ts), tid)
                     for text, ts, tid in extra["queries"]],
            members=extra.get("members", []))
    model, extra = Seq2SeqForecaster.from_bytes(blob)
    return ModelEntry(
        extra["model_id"], "seq2seq", model=model,
        tail_rows=np.asarray(extra["tail_rows"], dtype=np.float64),
        anchor=parse_timestamp(extra["anchor"]),
        members=extra.get("members", []))


def _history_blob(model_id: str, queries: list, anchor: dt.datetime,
                  members: list) -> bytes:
    header = {"kind": "history",
              "extra": {"model_id": model_id,
                        "queries": [(text, format_timestamp(ts), tid)
                                    for text, ts, tid in queries],
                        "anchor": format_timestamp(anchor),
                        "members": members}}
    return pack_arrays(header, [])


def _run_jobs(jobs: list, worker, workers: int) -> list:
    if workers > 1 and len(jobs) > 1:
        with multiprocessing.Pool(min(workers, len(jobs))) as pool:
            return pool.map(worker, jobs)
    return [worker(job) for job in jobs]


def train_all(workload: TimedWorkload, mode: str, cfg: EngineConfig,
              holidays: frozenset = frozenset(), workers: int = 1,
              generalize_positions: Optional[dict] = None,
              registry: Optional[TemplateRegistry] = None) -> ForecastSession:
    """Templatize a workload and train one model per template or per bin."""
    if not len(workload):
        raise PipelineError("cannot train on an empty workload")
    if mode not in (PER_TEMPLATE, PER_BIN):
        raise PipelineError(f"unknown mode {mode!r}")
    registry, grouped = bindings_by_template(workload, registry)
    for template_id, bindings in grouped.items():
        infer_param_types(registry.get(template_id), bindings)

    session = ForecastSession(cfg, registry, mode, workload.anchor,
                              holidays=holidays)
    if generalize_positions:
        for template_id, positions in generalize_positions.items():
            session.templates_view[template_id] = generalize_template(
                registry.get(template_id), positions)

    min_rows = 2 * cfg.k + 1
    if mode == PER_TEMPLATE:
        jobs = []
        for template_id in sorted(grouped):
            bindings = grouped[template_id]
            template = session.template_for(template_id)
            model_id = str(template_id)
            if len(bindings) >= min_rows:
                jobs.append((model_id, template, bindings, cfg, holidays))
            else:
                session.fallbacks.add(model_id)
                tail = sorted(bindings, key=lambda b: b.arrival)[-cfg.k:]
                queries = [(render_query(template, b.values), b.arrival, template_id)
                           for b in tail]
                session.models[model_id] = ModelEntry(
                    model_id, "history", anchor=tail[-1].arrival,
                    history=queries, members=[f"t{template_id}"])
        for model_id, blob in _run_jobs(jobs, _train_template_job, workers):
            session.models[model_id] = _entry_from_blob(blob)
        return session

    # per-bin: estimate sizes, plan, then train per bin
    sizes, rate_models = estimate_template_sizes(grouped, cfg, workload.anchor)
    session.rate_models = rate_models
    session.plan = plan_bins(sizes, cfg.k, cfg.bin_cap)

    jobs = []
    for bin_ in session.plan.bins:
        model_id = f"bin{bin_.bin_id}"
        members = []
        bindings_by_member = {}
        for unit_id in bin_.members:
            meta = session.plan.units[unit_id]
            template = session.template_for(meta["template"])
            slices = tuple(meta["slices"]) if meta["slices"] is not None else None
            member = MemberSpec.for_template(unit_id, template, slices)
            members.append(member)
            bindings = grouped[meta["template"]]
            if slices is not None:
                allowed = set(slices)
                bindings = [b for b in bindings
                            if fine_slot_index(b.arrival, cfg) in allowed]
            bindings_by_member[unit_id] = bindings
        total_rows = sum(len(v) for v in bindings_by_member.values())
        if total_rows >= min_rows:
            jobs.append((model_id, members, bindings_by_member, cfg, holidays))
        else:
            session.fallbacks.add(model_id)
            tail_bindings = sorted(
                ((b, m.template_id) for m in members
                 for b in bindings_by_member[m.member_id]),
                key=lambda pair: pair[0].arrival)[-cfg.k:]
            if not tail_bindings:
                continue
            queries = [(render_query(session.template_for(tid), b.values), b.arrival, tid)
                       for b, tid in tail_bindings]
            session.models[model_id] = ModelEntry(
                model_id, "history", anchor=queries[-1][1], history=queries,
                members=[m.member_id for m in members])
    for model_id, blob in _run_jobs(jobs, _train_bin_job, workers):
        session.models[model_id] = _entry_from_blob(blob)
    return session


# ---------------------------------------------------------------------------
# Forecasting
# ---------------------------------------------------------------------------

def _decode_entry_queries(session: ForecastSession, entry: ModelEntry) -> list:
    """Predict k rows for one model and decode them to timed statements."""
    pred = entry.model.predict(entry.tail_rows)
    decoded = decode_rows(pred, entry.model.schema, entry.anchor, session.registry)
    out = []
    for local_idx, (template_id, values, arrival, member_id) in enumerate(decoded):
        template = session.template_for(template_id)
        out.append((arrival, template_id, local_idx, render_query(template, values)))
    return out


def _history_entry_queries(entry: ModelEntry, k: int) -> list:
    """Replay the stored tail shifted by its span, keeping template ids."""
    shard = TimedWorkload([TimedQuery(text, ts) for text, ts, _ in entry.history])
    replay = history_forecast_k(shard, min(k, len(shard)))
    tail_ids = [tid for _, _, tid in entry.history][-len(replay):]
    return [(q.arrival, tid, local_idx, q.text)
            for local_idx, (q, tid) in enumerate(zip(replay, tail_ids))]


def forecast_next_k(session: ForecastSession, k: int) -> ForecastResult:
    """Merge every template model's k decoded predictions; keep the first k."""
    if session.mode != PER_TEMPLATE:
        raise PipelineError("next-k forecasting needs a per-template session")
    pool = []
    for model_id in sorted(session.models):
        entry = session.models[model_id]
        if entry.kind == "seq2seq":
            pool.extend(_decode_entry_queries(session, entry))
        else:
            pool.extend(_history_entry_queries(entry, session.config.k))
    if len(pool) < k:
        raise PipelineError(f"cannot produce {k} entries from {len(pool)} predictions")
    pool.sort(key=lambda item: (item[0], item[1], item[2]))
    entries = [(tid, text, arrival) for arrival, tid, _, text in pool[:k]]
    return ForecastResult(entries, "k", k)


def forecast_next_dt(session: ForecastSession, delta_seconds: int) -> ForecastResult:
    """Per-bin predictions truncated to [anchor, anchor + delta)."""
    if session.mode != PER_BIN:
        raise PipelineError("next-interval forecasting needs a per-bin session")
    anchor = session.anchor
    end = anchor + dt.timedelta(seconds=delta_seconds)
    pool = []
    warnings = []
    for model_id in sorted(session.models):
        entry = session.models[model_id]
        if entry.kind == "seq2seq":
            decoded = _decode_entry_queries(session, entry)
        else:
            shard = TimedWorkload([TimedQuery(text, ts) for text, ts, _ in entry.history])
            by_key = {(text, ts): tid for text, ts, tid in entry.history}
            decoded = []
            shift = dt.timedelta(seconds=delta_seconds)
            for i, q in enumerate(history_forecast_dt(shard, delta_seconds)):
                tid = by_key.get((q.text, q.arrival - shift), -1)
                decoded.append((q.arrival, tid, i, q.text))
        inside = [item for item in decoded if anchor <= item[0] < end]
        if entry.kind == "seq2seq" and len(inside) == len(decoded):
            est = session.plan.bins[int(model_id[3:])].est_total if session.plan else 0
            if len(decoded) > est:
                warnings.append(
                    f"{model_id}: all {len(decoded)} predictions fall inside the window "
                    f"but the plan estimated {est}; window coverage may be truncated")
        pool.extend(inside)
    pool.sort(key=lambda item: (item[0], item[1], item[2]))
    entries = [(tid, text, arrival) for arrival, tid, _, text in pool]
    return ForecastResult(entries, "dt", delta_seconds, anchor=anchor,
                          warnings=warnings)


def emit_forecast(result: ForecastResult, path: str) -> None:
    """Write a forecast as JSONL re-ingestable by the workload reader."""
    workload = TimedWorkload([TimedQuery(text, arrival)
                              for _, text, arrival in result.entries])
    write_workload_log(workload, path,
                       template_ids=[tid for tid, _, _ in result.entries])


# ---------------------------------------------------------------------------
# Session persistence
# ---------------------------------------------------------------------------

def save_session(session: ForecastSession, directory: str) -> None:
    models = {}
    for model_id, entry in session.models.items():
        if entry.kind == "seq2seq":
            extra = {"model_id": model_id,
                     "tail_rows": entry.tail_rows.tolist(),
                     "anchor": format_timestamp(entry.anchor),
                     "members": entry.members}
            models[model_id] = entry.model.to_bytes(extra)
        else:
            models[model_id] = _history_blob(model_id, entry.history, entry.anchor,
                                             entry.members)
    for template_id, rate in session.rate_models.items():
        models[f"rate{template_id}"] = rate.to_bytes({"template_id": template_id})
    meta = {
        "mode": session.mode,
        "anchor": format_timestamp(session.anchor),
        "config": session.config.to_json(),
        "registry": session.registry.to_json(),
        "plan": session.plan.to_json() if session.plan else None,
        "fallbacks": sorted(session.fallbacks),
        "holidays": sorted(session.holidays),
        "generalized": {str(tid): [d.position for d in t.descriptors if d.generalized]
                        for tid, t in session.templates_view.items()},
    }
    save_model_store(models, directory, meta)
    if session.plan:
        with open(os.path.join(directory, "plan.json"), "w", encoding="utf-8") as fh:
            json.dump(session.plan.to_json(), fh, indent=2, sort_keys=True)


def load_session(directory: str) -> ForecastSession:
    store = ModelStore(directory)
    meta = store.meta
    cfg = EngineConfig.from_json(meta["config"])
    registry = TemplateRegistry.from_json(meta["registry"])
    session = ForecastSession(
        cfg, registry, meta["mode"], parse_timestamp(meta["anchor"]),
        plan=BinPlan.from_json(meta["plan"]) if meta.get("plan") else None,
        fallbacks=set(meta.get("fallbacks", [])),
        holidays=frozenset(meta.get("holidays", [])),
    )
    for tid_str, positions in meta.get("generalized", {}).items():
        tid = int(tid_str)
        if positions:
            session.templates_view[tid] = generalize_template(registry.get(tid), positions)
    for model_id in store.ids():
        if model_id.startswith("rate"):
            model, extra = RateForecaster.from_bytes(store[model_id])
            session.rate_models[extra["template_id"]] = model
        else:
            session.models[model_id] = _entry_from_blob(store[model_id])
    return session
