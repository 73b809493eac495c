"""Drift handling: accuracy monitoring, fine-tuning, template lifecycle.

A model is flagged for fine-tuning after ``consecutive_rounds`` forecast
rounds in a row score below the accuracy threshold; a round at or above
the threshold resets the counter.  Fine-tuning warm-starts the existing
weights on newly observed data only, capped at twenty epochs, after the
schema's categorical dictionaries have been extended with any unseen
values.  Emerging templates join the first bin with spare capacity
(fewest members wins) or open a new one; inactive templates are flagged
for reporting after three quiet windows; bins whose realized sizes keep
exceeding capacity are re-packed into fresh sub-bins.
"""

from __future__ import annotations

import datetime as dt
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import EngineConfig, format_timestamp
from .features import (
    FeatureMap, FeatureSchema, build_arrival_vector, build_query_vector,
    decode_vector, dict_key, hash_category, member_tid_code,
)
from .models import Seq2SeqForecaster, fine_tune_forecaster
from .planner import BinPlan, Bin, cut_template, pack_units
from .templates import ParamBinding


class FeedbackError(Exception):
    pass


HEALTHY = "healthy"
FINE_TUNING = "fine_tuning"
RESPLITTING = "resplitting"

FINE_TUNE_EPOCH_CAP = 20


@dataclass
class ModelMonitor:
    recent: deque = field(default_factory=lambda: deque(maxlen=10))
    consecutive_below: int = 0
    status: str = HEALTHY


@dataclass
class DriftEvent:
    time: dt.datetime
    model_id: str
    event: str                    # trigger | finetuned | emerged | retired | resplit
    accuracy_before: Optional[float] = None
    accuracy_after: Optional[float] = None

    def to_json(self) -> dict:
        return {"time": format_timestamp(self.time), "model_id": self.model_id,
                "event": self.event, "accuracy_before": self.accuracy_before,
                "accuracy_after": self.accuracy_after}


class AccuracyMonitor:
    """Per-model accuracy rings with a consecutive-below-threshold trigger."""

    def __init__(self, alpha: float, consecutive_rounds: int = 3, ring: int = 10):
        self.alpha = alpha
        self.consecutive_rounds = consecutive_rounds
        self.ring = ring
        self.states: dict = {}

    def register(self, model_id: str) -> None:
        self.states.setdefault(model_id, ModelMonitor(deque(maxlen=self.ring)))

    def record_round(self, model_id: str, accuracy: float) -> bool:
        """Record one round's accuracy; True when fine-tuning should fire.

        An accuracy exactly at the threshold counts as healthy.
        """
        if not 0.0 <= accuracy <= 1.0:
            raise FeedbackError(f"accuracy {accuracy} outside [0, 1]")
        if model_id not in self.states:
            raise FeedbackError(f"unknown model id {model_id!r}")
        state = self.states[model_id]
        state.recent.append(accuracy)
        if accuracy >= self.alpha:
            state.consecutive_below = 0
            if state.status == FINE_TUNING:
                state.status = HEALTHY
            return False
        state.consecutive_below += 1
        if state.consecutive_below >= self.consecutive_rounds:
            state.status = FINE_TUNING
            state.consecutive_below = 0
            return True
        return False


# ---------------------------------------------------------------------------
# Vocabulary extension
# ---------------------------------------------------------------------------

def extend_vocabulary(schema: FeatureSchema, new_values: dict) -> FeatureSchema:
    """Grow categorical dictionaries with unseen values, in place.

    ``new_values`` maps slot name to an iterable of raw values.  Existing
    codes never change and the row width is untouched; duplicates are
    no-ops.
    """
    for slot_name, values in new_values.items():
        slot = schema.slots[schema.slot_index(slot_name)]
        if slot.kind not in ("cat_hash", "set_code", "template_id"):
            raise FeedbackError(f"slot {slot_name} is not dictionary-coded")
        dictionary = schema.dictionaries.setdefault(slot_name, {})
        for value in values:
            key = value if slot.kind == "template_id" else dict_key(value)
            hash_category(key, schema.hash_buckets, dictionary)
    return schema


def fine_tune(model: Seq2SeqForecaster, new_map, cfg: EngineConfig,
              max_epochs: int = FINE_TUNE_EPOCH_CAP) -> int:
    """Incrementally adapt a model to newly observed data; returns epochs.

    The feature map must be assembled against the model's schema (which
    auto-extends dictionaries for unseen categorical values); a changed
    slot layout cannot be fine-tuned and raises instead.
    """
    return fine_tune_forecaster(model, new_map, cfg, max_epochs)


# ---------------------------------------------------------------------------
# Template lifecycle
# ---------------------------------------------------------------------------

def place_emerging_template(plan: BinPlan, template_id: int, est_size: int,
                            observed_count: int, recurrence_threshold: int = 2
                            ) -> tuple[Optional[int], str]:
    """Assign a newly recurrent template to a bin.

    Joins the first-fit bin with spare estimated capacity and a free
    member slot (fewest members, then lowest id), queueing that bin for
    fine-tuning; otherwise opens a fresh singleton bin whose model must be
    trained from scratch.  Returns (bin id, 'joined' | 'new' | 'ignored').
    """
    if observed_count < recurrence_threshold:
        return None, "ignored"
    unit_id = str(template_id)
    if unit_id in plan.units:
        raise FeedbackError(f"template {template_id} is already planned")
    if est_size > plan.k:
        raise FeedbackError(
            f"template {template_id} estimate {est_size} exceeds k; cut it first")
    candidates = [b for b in plan.bins
                  if b.est_total + est_size <= plan.k and len(b.members) < plan.bin_cap]
    if candidates:
        target = min(candidates, key=lambda b: (len(b.members), b.bin_id))
        action = "joined"
    else:
        target = Bin(max((b.bin_id for b in plan.bins), default=-1) + 1)
        plan.bins.append(target)
        action = "new"
    target.members.append(unit_id)
    target.est_total += est_size
    plan.units[unit_id] = {"template": template_id, "slices": None, "est": int(est_size)}
    plan.validate()
    return target.bin_id, action


def retire_inactive(last_seen: dict, now: dt.datetime, delta_t: int,
                    windows: int = 3) -> list:
    """Template ids with no arrivals over the last ``windows`` target windows.

    Reporting only: forecasting suppression happens through fine-tuning on
    data that no longer contains the template.
    """
    cutoff = now - dt.timedelta(seconds=windows * delta_t)
    return sorted(tid for tid, seen in last_seen.items() if seen <= cutoff)


def resplit_bin(plan: BinPlan, bin_id: int, fresh_sizes: dict,
                fine_sizes: Optional[dict] = None) -> list:
    """Re-pack one overflowing bin's members into fresh sub-bins.

    ``fresh_sizes`` maps each member unit to its new estimate; a member
    alone exceeding k must come with ``fine_sizes`` so it can be cut
    first.  Returns the new bin ids; their models must be trained from
    scratch.
    """
    target = next((b for b in plan.bins if b.bin_id == bin_id), None)
    if target is None:
        raise FeedbackError(f"no bin {bin_id}")
    items = []
    unit_meta = {}
    for unit_id in target.members:
        meta = plan.units[unit_id]
        size = int(fresh_sizes[unit_id])
        if size > plan.k:
            if not fine_sizes or unit_id not in fine_sizes:
                raise FeedbackError(
                    f"unit {unit_id} grew past k={plan.k}; supply fine sizes to cut it")
            template_id = meta.get("template", str(unit_id).split("#")[0])
            for sub in cut_template(template_id, fine_sizes[unit_id], plan.k):
                items.append((sub.unit_id, sub.est_size))
                unit_meta[sub.unit_id] = {"template": template_id,
                                          "slices": list(sub.slice_indices),
                                          "est": sub.est_size}
        else:
            items.append((unit_id, size))
            unit_meta[unit_id] = {**meta, "est": size}
    repacked = pack_units(items, plan.k, plan.bin_cap)

    next_id = max(b.bin_id for b in plan.bins) + 1
    plan.bins = [b for b in plan.bins if b.bin_id != bin_id]
    for unit_id in target.members:
        plan.units.pop(unit_id, None)
    new_ids = []
    for new_bin in repacked.bins:
        assigned = Bin(next_id, list(new_bin.members), new_bin.est_total)
        plan.bins.append(assigned)
        new_ids.append(next_id)
        next_id += 1
    for unit_id, meta in unit_meta.items():
        plan.units[unit_id] = meta
    plan.validate()
    return new_ids


def write_drift_log(events: list, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for event in events:
            fh.write(json.dumps(event.to_json(), sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Online feature window maintenance
# ---------------------------------------------------------------------------

class OnlineWindow:
    """Grows a model's raw feature rows as ground truth arrives.

    Previous parameter values per member are recovered by decoding the
    carried state of the last row (lossless on clean rows), so deltas and
    inter-arrival gaps continue seamlessly from the training tail.
    """

    def __init__(self, schema: FeatureSchema, rows: np.ndarray,
                 last_arrival: dt.datetime):
        self.schema = schema
        self.rows = np.array(rows, dtype=np.float64)
        self.last_arrival = last_arrival
        self.new_rows = 0
        self._slot_range: dict = {}
        for i, slot in enumerate(schema.slots):
            if slot.member is not None:
                start, _ = self._slot_range.get(slot.member, (i, i))
                self._slot_range[slot.member] = (min(start, i), i + 1)
        self._delta_cols = np.asarray(
            [i for i, s in enumerate(schema.slots)
             if s.kind == "delta" and s.member is not None], dtype=int)

    def _prev_binding(self, member) -> Optional[ParamBinding]:
        if not len(self.rows):
            return None
        start, stop = self._slot_range[member.member_id]
        if not np.any(self.rows[-1][start:stop]):
            return None  # member not observed yet: zero block
        row = self.rows[-1]
        if len(self.schema.members) > 1:
            # point the tid slot at this member so only its block decodes
            row = row.copy()
            row[self.schema.slot_index("tid")] = float(
                member_tid_code(member.member_id, self.schema))
        _, values, _, _ = decode_vector(row, self.schema, 0.0, None)
        return ParamBinding(member.template_id, values, self.last_arrival)

    def append(self, binding: ParamBinding, member_id: str) -> None:
        member = self.schema.member(member_id)
        width = self.schema.width
        row = self.rows[-1].copy() if len(self.rows) else np.zeros(width)
        if self._delta_cols.size:
            row[self._delta_cols] = 0.0
        prev = self._prev_binding(member)
        qvec = build_query_vector(binding, prev, member, self.schema)
        start, stop = self._slot_range[member.member_id]
        row[start:stop] = qvec
        if len(self.schema.members) > 1:
            row[self.schema.slot_index("tid")] = float(
                member_tid_code(member.member_id, self.schema))
        avec = build_arrival_vector(binding.arrival, self.last_arrival, self.schema)
        row[width - len(avec):] = avec
        self.rows = np.vstack([self.rows, row])
        self.last_arrival = binding.arrival
        self.new_rows += 1

    def new_map(self) -> FeatureMap:
        """Feature map over the rows observed since construction."""
        return FeatureMap(self.schema, self.rows[-self.new_rows:] if self.new_rows
                          else self.rows[:0])

    def tail(self, k: int) -> np.ndarray:
        return self.rows[-k:]
