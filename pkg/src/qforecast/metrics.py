"""Forecast effectiveness: containment matching, cnt-diff, predictability.

A ground-truth query is matched by a prediction of the same template when
every parameter agrees under its predicate's semantics: equality values
equal, predicted ranges contain truth ranges, predicted sets superset
truth sets, and generalized (catch-all) positions match vacuously.
Matching over the two bags is greedy in arrival order, with an exact
augmenting-path maximum matching available as the oracle.  The cnt-diff
ratio measures how far a matching range or set prediction overshoots.

Approximate entropy plus per-model accuracies feed the three-way
predictability classification (trivial / model-predictable /
unpredictable) with threshold tau.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .templates import (
    DATETIME, EQUALITY, IN_KIND, NUMERIC, OTHER, RANGE_HIGH, RANGE_LOW,
    ParamBinding, Template, generalize_template, normalize_value,
    value_as_datetime,
)

generalize_unpredictable = generalize_template

TRIVIAL_TO_PREDICT = "trivial_to_predict"
PREDICTABLE_BY_MODEL = "predictable_by_model"
UNPREDICTABLE = "unpredictable"


@dataclass
class MatchReport:
    matched_pairs: list
    recall: float
    precision: float
    f1: float
    avg_cnt_diff: float
    truth_count: int
    pred_count: int
    per_template: dict = field(default_factory=dict)


@dataclass
class PredictabilityLabel:
    template_id: int
    position: int
    label: str
    best_acc: float
    ap_en: float


# ---------------------------------------------------------------------------
# Containment
# ---------------------------------------------------------------------------

def _scalar(value, descriptor) -> Optional[float]:
    """Numeric scale for range arithmetic; None for unscalable types."""
    if descriptor.inferred_type == NUMERIC:
        return float(value)
    if descriptor.inferred_type == DATETIME:
        return value_as_datetime(value).timestamp()
    return None


def _range_groups(template: Template) -> list:
    """Group range positions into (low_pos, high_pos) intervals per column.

    A column with exactly one lower and one upper bound forms an interval;
    anything else is treated per-position as half-bounded.
    """
    by_key: dict = {}
    for d in template.descriptors:
        if d.generalized:
            continue
        if d.predicate_kind in (RANGE_LOW, RANGE_HIGH):
            by_key.setdefault(d.range_key, []).append(d)
    groups = []
    for key, descs in sorted(by_key.items(), key=lambda kv: str(kv[0])):
        lows = [d for d in descs if d.predicate_kind == RANGE_LOW]
        highs = [d for d in descs if d.predicate_kind == RANGE_HIGH]
        if len(lows) == 1 and len(highs) == 1:
            groups.append((key, lows[0], highs[0]))
        else:
            for d in descs:
                groups.append((key, d if d.predicate_kind == RANGE_LOW else None,
                               d if d.predicate_kind == RANGE_HIGH else None))
    return groups


def _value(binding: ParamBinding, descriptor) -> object:
    return normalize_value(binding.values[descriptor.position - 1], descriptor)


def query_contains(truth: ParamBinding, pred: ParamBinding, template: Template) -> bool:
    """True when the prediction contains the ground-truth query.

    Both bindings must carry the template's id; a differing id is a
    non-match, not an error.  The template object supplies the predicate
    kinds and generalization flags (pass the generalized variant when
    catch-all predicates are in play).
    """
    if truth.template_id != pred.template_id or truth.template_id != template.id:
        return False
    in_range_group = set()
    for key, low, high in _range_groups(template):
        for d in (low, high):
            if d is not None:
                in_range_group.add(d.position)
        if low is not None:
            if _value(pred, low) > _value(truth, low):
                return False
        if high is not None:
            if _value(pred, high) < _value(truth, high):
                return False
    for d in template.descriptors:
        if d.generalized or d.position in in_range_group:
            continue
        truth_val = _value(truth, d)
        pred_val = _value(pred, d)
        if d.predicate_kind == IN_KIND:
            if not (isinstance(pred_val, frozenset) and isinstance(truth_val, frozenset)
                    and pred_val >= truth_val):
                return False
        else:
            if pred_val != truth_val:
                return False
    return True


# ---------------------------------------------------------------------------
# cnt-diff ratios
# ---------------------------------------------------------------------------

def cnt_diff_range(truth_low, truth_high, pred_low, pred_high,
                   col_bounds: Optional[tuple] = None, unit: float = 1.0) -> float:
    """Overshoot of a containing range: |pred minus truth| / |truth|.

    Bounds given as None are half-open and are clipped to the observed
    column extremes first.  A zero-length truth range counts 0 when the
    ranges coincide, otherwise its length is floored at one ``unit`` of
    the column's granularity.
    """
    if col_bounds is not None:
        lo, hi = col_bounds
        truth_low = lo if truth_low is None else truth_low
        truth_high = hi if truth_high is None else truth_high
        pred_low = lo if pred_low is None else pred_low
        pred_high = hi if pred_high is None else pred_high
    if None in (truth_low, truth_high, pred_low, pred_high):
        raise ValueError("half-bounded range needs observed column bounds")
    if not (pred_low <= truth_low and pred_high >= truth_high):
        raise ValueError("cnt-diff is defined for containing ranges only")
    outside = (truth_low - pred_low) + (pred_high - truth_high)
    length = truth_high - truth_low
    if length == 0:
        if outside == 0:
            return 0.0
        length = unit
    return float(outside) / float(length)


def cnt_diff_set(truth_set: frozenset, pred_set: frozenset) -> float:
    """Overshoot of a superset prediction: |pred minus truth| / |truth|."""
    if not truth_set:
        raise ValueError("cnt-diff needs a non-empty ground-truth set")
    if not pred_set >= truth_set:
        raise ValueError("cnt-diff is defined for superset predictions only")
    return len(pred_set - truth_set) / len(truth_set)


def _pair_cnt_diffs(truth: ParamBinding, pred: ParamBinding, template: Template,
                    col_bounds: dict) -> list:
    """All range/set cnt-diff ratios for one matched pair."""
    ratios = []
    for key, low, high in _range_groups(template):
        ref = low or high
        if ref.inferred_type not in (NUMERIC, DATETIME):
            continue
        # scaled space puts both integers and epoch seconds on unit 1.0
        unit = 1.0
        bounds = col_bounds.get((template.id, key))
        tl = _scalar(_value(truth, low), low) if low is not None else None
        th = _scalar(_value(truth, high), high) if high is not None else None
        pl = _scalar(_value(pred, low), low) if low is not None else None
        ph = _scalar(_value(pred, high), high) if high is not None else None
        if (tl is None or th is None) and bounds is None:
            continue
        ratios.append(cnt_diff_range(tl, th, pl, ph, bounds, unit))
    for d in template.descriptors:
        if d.generalized or d.predicate_kind != IN_KIND:
            continue
        ratios.append(cnt_diff_set(_value(truth, d), _value(pred, d)))
    return ratios


# ---------------------------------------------------------------------------
# Matching
# ---------------------------------------------------------------------------

def greedy_match(truth: list, pred: list, contains) -> list[tuple[int, int]]:
    """Greedy bipartite matching: truth in order takes the first free
    containing prediction; one-to-one on both sides."""
    taken = [False] * len(pred)
    pairs = []
    for ti, t in enumerate(truth):
        for pi, p in enumerate(pred):
            if not taken[pi] and contains(t, p):
                taken[pi] = True
                pairs.append((ti, pi))
                break
    return pairs


def max_matching(adjacency: list[list[int]], n_right: int) -> int:
    """Exact maximum bipartite matching size via augmenting paths.

    ``adjacency[i]`` lists the right-side vertices reachable from left
    vertex i.  Test-oracle role for the greedy matcher.
    """
    match_right = [-1] * n_right

    def augment(u: int, visited: list) -> bool:
        for v in adjacency[u]:
            if not visited[v]:
                visited[v] = True
                if match_right[v] == -1 or augment(match_right[v], visited):
                    match_right[v] = u
                    return True
        return False

    size = 0
    for u in range(len(adjacency)):
        if augment(u, [False] * n_right):
            size += 1
    return size


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

def _observed_bounds(bindings: list, templates: dict) -> dict:
    """Observed min/max scale per (template, range column) from a bag."""
    bounds: dict = {}
    for b in bindings:
        template = templates.get(b.template_id)
        if template is None:
            continue
        for d in template.descriptors:
            if d.generalized or d.predicate_kind not in (RANGE_LOW, RANGE_HIGH):
                continue
            scale = _scalar(b.values[d.position - 1], d)
            if scale is None:
                continue
            key = (template.id, d.range_key)
            lo, hi = bounds.get(key, (scale, scale))
            bounds[key] = (min(lo, scale), max(hi, scale))
    return bounds


def score_forecast(truth: list, pred: list, templates: dict) -> MatchReport:
    """Recall / precision / F1 under containment, plus average cnt-diff.

    ``templates`` maps template id to the Template (or generalized variant)
    used for predicate semantics.  The cnt-diff average runs over all range
    and IN predicates of matched pairs only.
    """
    def contains(t: ParamBinding, p: ParamBinding) -> bool:
        template = templates.get(t.template_id)
        return template is not None and query_contains(t, p, template)

    pairs = greedy_match(truth, pred, contains)
    matched = len(pairs)
    recall = matched / len(truth) if truth else 0.0
    precision = matched / len(pred) if pred else 0.0
    f1 = (2 * precision * recall / (precision + recall)) if (precision + recall) else 0.0

    col_bounds = _observed_bounds(truth, templates)
    ratios = []
    for ti, pi in pairs:
        template = templates[truth[ti].template_id]
        ratios.append(_pair_cnt_diffs(truth[ti], pred[pi], template, col_bounds))
    flat = [r for rs in ratios for r in rs]
    avg_cnt_diff = float(np.mean(flat)) if flat else 0.0

    per_template: dict = {}
    truth_by_template: dict = {}
    for ti, t in enumerate(truth):
        truth_by_template.setdefault(t.template_id, []).append(ti)
    matched_truth = {ti for ti, _ in pairs}
    for tid, indices in sorted(truth_by_template.items()):
        hit = sum(1 for ti in indices if ti in matched_truth)
        per_template[tid] = {"truth": len(indices), "matched": hit,
                             "recall": hit / len(indices)}
    return MatchReport(pairs, recall, precision, f1, avg_cnt_diff,
                       len(truth), len(pred), per_template)


# ---------------------------------------------------------------------------
# Approximate entropy and predictability
# ---------------------------------------------------------------------------

def approx_entropy(series, m: int = 2, r: Optional[float] = None) -> float:
    """ApEn(m, r) with Chebyshev distance and self-matches.

    ``r`` defaults to 0.2 times the series standard deviation; a constant
    series (or zero tolerance on zero variance) returns 0 by convention.
    """
    x = np.asarray(series, dtype=np.float64)
    n = x.size
    if n < m + 1:
        raise ValueError(f"series of length {n} too short for m={m}")
    if r is None:
        std = float(x.std())
        if std == 0.0:
            return 0.0
        r = 0.2 * std

    def phi(mm: int) -> float:
        count = n - mm + 1
        windows = np.lib.stride_tricks.sliding_window_view(x, mm)
        total = 0.0
        for i in range(count):
            dist = np.max(np.abs(windows - windows[i]), axis=1)
            total += math.log(np.count_nonzero(dist <= r) / count)
        return total / count

    return phi(m) - phi(m + 1)


def classify_parameter(per_model_accuracies: dict, distinct_count: int,
                       last_value_acc: float, tau: float,
                       template_id: int = -1, position: int = -1,
                       ap_en: float = float("nan")) -> PredictabilityLabel:
    """Three-way predictability label from the best model accuracy.

    Below tau the parameter is unpredictable; otherwise it is trivial to
    predict when it cycles through at most three values that a last-value
    heuristic already gets right, and model-predictable otherwise.
    """
    if not per_model_accuracies:
        raise ValueError("need at least one model accuracy")
    best_acc = max(per_model_accuracies.values())
    if best_acc < tau:
        label = UNPREDICTABLE
    elif distinct_count <= 3 and last_value_acc >= tau:
        label = TRIVIAL_TO_PREDICT
    else:
        label = PREDICTABLE_BY_MODEL
    return PredictabilityLabel(template_id, position, label, best_acc, ap_en)
