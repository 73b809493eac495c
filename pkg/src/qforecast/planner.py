"""Model-granularity planning: cut oversize templates, pack small ones.

A template whose conservative size estimate for the target window exceeds
the model window k is cut along fine time slots into sub-templates, each
covering a disjoint set of slot indices with estimated size at most k.
All resulting units are then packed into bins by first-fit over items
sorted by descending size, preferring the bin with the fewest members
(then the lowest bin id) among those that fit; a bin holds at most
``bin_cap`` members and at most k estimated queries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class PlanningError(Exception):
    pass


@dataclass
class SubTemplate:
    parent_id: int
    slice_indices: tuple         # fine-slot indices inside the target window
    est_size: int

    @property
    def unit_id(self) -> str:
        return f"{self.parent_id}#{min(self.slice_indices)}"


@dataclass
class Bin:
    bin_id: int
    members: list = field(default_factory=list)   # unit ids
    est_total: int = 0


@dataclass
class BinPlan:
    k: int
    bin_cap: int
    bins: list = field(default_factory=list)
    units: dict = field(default_factory=dict)     # unit id -> unit metadata

    @property
    def assignment(self) -> dict:
        out = {}
        for b in self.bins:
            for member in b.members:
                out[member] = b.bin_id
        return out

    def bin_of(self, unit_id: str) -> Bin:
        target = self.assignment[unit_id]
        for b in self.bins:
            if b.bin_id == target:
                return b
        raise PlanningError(f"unit {unit_id} has no bin")

    def validate(self) -> None:
        seen = set()
        for b in self.bins:
            if b.est_total > self.k:
                raise PlanningError(f"bin {b.bin_id} exceeds capacity: {b.est_total} > {self.k}")
            if len(b.members) > self.bin_cap:
                raise PlanningError(f"bin {b.bin_id} holds too many members")
            for member in b.members:
                if member in seen:
                    raise PlanningError(f"unit {member} assigned twice")
                seen.add(member)
        if seen != set(self.units):
            raise PlanningError("units and assignments disagree")

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "bin_cap": self.bin_cap,
            "bins": [{"bin_id": b.bin_id, "members": list(b.members),
                      "est_total": b.est_total} for b in self.bins],
            "units": {uid: dict(meta) for uid, meta in sorted(self.units.items())},
        }

    @classmethod
    def from_json(cls, payload: dict) -> "BinPlan":
        plan = cls(payload["k"], payload["bin_cap"])
        plan.bins = [Bin(b["bin_id"], list(b["members"]), b["est_total"])
                     for b in payload["bins"]]
        plan.units = {uid: dict(meta) for uid, meta in payload["units"].items()}
        return plan


# ---------------------------------------------------------------------------
# Size estimation over the preview horizon
# ---------------------------------------------------------------------------

def summarize_rate_forecast(fine_forecast, window_slots: int):
    """Conservative window and per-slot sizes from a horizon of fine forecasts.

    ``fine_forecast`` covers the whole preview horizon at fine granularity
    (real-valued rates are summed before rounding, so sub-slot rates do not
    inflate); it is reshaped into consecutive target windows of
    ``window_slots`` fine slots.  Returns (window_size, per_slot_sizes):
    the max window sum over the horizon, and the per-slot max across
    windows, both rounded up.
    """
    fine = np.asarray(fine_forecast, dtype=float)
    if fine.size % window_slots != 0:
        raise PlanningError(
            f"horizon of {fine.size} fine slots is not whole windows of {window_slots}")
    windows = fine.reshape(-1, window_slots)
    window_size = int(np.ceil(windows.sum(axis=1).max()))
    per_slot = np.ceil(windows.max(axis=0)).astype(int)
    return window_size, per_slot


# ---------------------------------------------------------------------------
# Template cutting
# ---------------------------------------------------------------------------

def cut_template(parent_id: int, slot_sizes, k: int) -> list[SubTemplate]:
    """Greedy left-to-right cut of a template's fine slots into sub-templates.

    Slots accumulate while the running total stays within k; a slot that
    does not fit closes the current sub-template and starts a new one.
    A single slot larger than k is a planning error (shrink the fine
    granularity instead).
    """
    sizes = [int(s) for s in slot_sizes]
    for j, size in enumerate(sizes):
        if size > k:
            raise PlanningError(
                f"template {parent_id}: fine slot {j} alone holds {size} > k={k}; "
                "use a finer slot granularity")
    if sum(sizes) <= k:
        return [SubTemplate(parent_id, tuple(range(len(sizes))), sum(sizes))]
    subs: list[SubTemplate] = []
    current: list[int] = []
    remaining = k
    for j, size in enumerate(sizes):
        if size <= remaining:
            current.append(j)
            remaining -= size
        else:
            subs.append(SubTemplate(parent_id, tuple(current),
                                    sum(sizes[i] for i in current)))
            current = [j]
            remaining = k - size
    if current:
        subs.append(SubTemplate(parent_id, tuple(current),
                                sum(sizes[i] for i in current)))
    return subs


# ---------------------------------------------------------------------------
# Packing
# ---------------------------------------------------------------------------

def pack_units(items: list[tuple[str, int]], k: int, bin_cap: int) -> BinPlan:
    """First-fit-decreasing with a fewest-members tie-break.

    Items are (unit id, estimated size); sizes above k are rejected.
    Among open bins that can hold an item, the one with the fewest members
    wins, then the lowest bin id.
    """
    for unit_id, size in items:
        if size > k:
            raise PlanningError(f"unit {unit_id} of size {size} exceeds k={k}")
    plan = BinPlan(k, bin_cap)
    ordered = sorted(items, key=lambda item: (-item[1], str(item[0])))
    for unit_id, size in ordered:
        candidates = [b for b in plan.bins
                      if b.est_total + size <= k and len(b.members) < bin_cap]
        if candidates:
            best = min(candidates, key=lambda b: (len(b.members), b.bin_id))
        else:
            best = Bin(len(plan.bins))
            plan.bins.append(best)
        best.members.append(unit_id)
        best.est_total += size
        plan.units[unit_id] = {"est": int(size)}
    plan.validate()
    return plan


def plan_bins(template_sizes: dict, k: int, bin_cap: int) -> BinPlan:
    """Cut every oversize template, then pack all resulting units.

    ``template_sizes`` maps template id to (window_size, per_slot_sizes):
    the conservative estimate for the target window and the conservative
    per-fine-slot estimates inside it.
    """
    items: list[tuple[str, int]] = []
    unit_meta: dict = {}
    for template_id in sorted(template_sizes):
        window_size, per_slot = template_sizes[template_id]
        if window_size > k:
            for sub in cut_template(template_id, per_slot, k):
                items.append((sub.unit_id, sub.est_size))
                unit_meta[sub.unit_id] = {
                    "template": template_id,
                    "slices": list(sub.slice_indices),
                    "est": sub.est_size,
                }
        else:
            unit_id = str(template_id)
            items.append((unit_id, int(window_size)))
            unit_meta[unit_id] = {"template": template_id, "slices": None,
                                  "est": int(window_size)}
    plan = pack_units(items, k, bin_cap)
    for unit_id, meta in unit_meta.items():
        plan.units[unit_id].update(meta)
    plan.validate()
    return plan
