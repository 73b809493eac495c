import datetime as dt
import itertools
import math

import numpy as np
import pytest

from qforecast.metrics import (
    PREDICTABLE_BY_MODEL, TRIVIAL_TO_PREDICT, UNPREDICTABLE, approx_entropy,
    classify_parameter, cnt_diff_range, cnt_diff_set, generalize_unpredictable,
    greedy_match, max_matching, query_contains, score_forecast,
)
from qforecast.templates import ParamBinding, infer_param_types, templatize

RANGE_SQL = "SELECT * FROM t WHERE v >= {} AND v <= {}"


def range_binding(registry, t0, low, high):
    return templatize(RANGE_SQL.format(low, high), t0, registry)


# ---------------------------------------------------------------------------
# Reference ApEn: independent pure-python transliteration of the definition
# ---------------------------------------------------------------------------

def apen_reference(series, m, r):
    x = [float(v) for v in series]
    n = len(x)

    def phi(mm):
        count = n - mm + 1
        vecs = [x[i:i + mm] for i in range(count)]
        total = 0.0
        for i in range(count):
            matches = sum(
                1 for j in range(count)
                if max(abs(a - b) for a, b in zip(vecs[i], vecs[j])) <= r)
            total += math.log(matches / count)
        return total / count

    return phi(m) - phi(m + 1)


def matching_brute_force(adjacency, n_right):
    """Maximum matching by exhaustive search over edge subsets."""
    edges = [(u, v) for u, nbrs in enumerate(adjacency) for v in nbrs]
    best = 0
    for size in range(len(edges), 0, -1):
        if size <= best:
            break
        for subset in itertools.combinations(edges, size):
            lefts = {u for u, _ in subset}
            rights = {v for _, v in subset}
            if len(lefts) == size and len(rights) == size:
                best = max(best, size)
                break
    return best


class TestContainment:
    def test_containing_range_matches(self, registry, t0):
        truth = range_binding(registry, t0, 3, 7)
        pred = range_binding(registry, t0, 2, 8)
        template = registry.get(truth.template_id)
        infer_param_types(template, [truth, pred])
        assert query_contains(truth, pred, template)

    def test_reflexive(self, registry, t0):
        truth = range_binding(registry, t0, 3, 7)
        template = registry.get(truth.template_id)
        infer_param_types(template, [truth])
        assert query_contains(truth, truth, template)

    def test_narrower_range_fails(self, registry, t0):
        truth = range_binding(registry, t0, 3, 7)
        pred = range_binding(registry, t0, 4, 8)
        template = registry.get(truth.template_id)
        infer_param_types(template, [truth, pred])
        assert not query_contains(truth, pred, template)

    def test_set_superset_semantics(self, registry, t0):
        truth = templatize("SELECT * FROM t WHERE a IN (1, 2, 4)", t0, registry)
        bad = templatize("SELECT * FROM t WHERE a IN (1, 2, 3)", t0, registry)
        good = templatize("SELECT * FROM t WHERE a IN (1, 2, 3, 4)", t0, registry)
        template = registry.get(truth.template_id)
        infer_param_types(template, [truth, bad, good])
        assert not query_contains(truth, bad, template)
        assert query_contains(truth, good, template)

    def test_template_mismatch_is_false_not_error(self, registry, t0):
        a = templatize("SELECT * FROM t WHERE x = 1", t0, registry)
        b = templatize("SELECT * FROM u WHERE x = 1", t0, registry)
        template = registry.get(a.template_id)
        assert not query_contains(a, b, template)

    def test_equality_needs_exact_value(self, registry, t0):
        a = templatize("SELECT * FROM t WHERE x = 1", t0, registry)
        b = templatize("SELECT * FROM t WHERE x = 2", t0, registry)
        template = registry.get(a.template_id)
        infer_param_types(template, [a, b])
        assert not query_contains(a, b, template)

    def test_generalized_position_is_vacuous(self, registry, t0):
        a = templatize("SELECT * FROM t WHERE id = 111 AND age > 30", t0, registry)
        b = templatize("SELECT * FROM t WHERE id = 999 AND age > 18", t0, registry)
        template = registry.get(a.template_id)
        infer_param_types(template, [a, b])
        assert not query_contains(a, b, template)
        generalized = generalize_unpredictable(template, [1])
        assert query_contains(a, b, generalized)

    def test_half_bounded_range(self, registry, t0):
        truth = templatize("SELECT * FROM t WHERE v >= 5", t0, registry)
        pred_ok = templatize("SELECT * FROM t WHERE v >= 3", t0, registry)
        pred_bad = templatize("SELECT * FROM t WHERE v >= 6", t0, registry)
        template = registry.get(truth.template_id)
        infer_param_types(template, [truth, pred_ok, pred_bad])
        assert query_contains(truth, pred_ok, template)
        assert not query_contains(truth, pred_bad, template)

    def test_containment_monotone_on_generated_triples(self, registry, t0):
        rng = np.random.RandomState(0)
        template = None
        for _ in range(100):
            lo = int(rng.randint(0, 50))
            hi = lo + int(rng.randint(0, 20))
            inner = range_binding(registry, t0, lo, hi)
            mid = range_binding(registry, t0, lo - int(rng.randint(0, 5)),
                                hi + int(rng.randint(0, 5)))
            outer = range_binding(registry, t0, lo - 10, hi + 10)
            if template is None:
                template = registry.get(inner.template_id)
                infer_param_types(template, [inner, mid, outer])
            assert query_contains(inner, mid, template)
            assert query_contains(inner, outer, template)


class TestMatching:
    def test_single_pair(self, registry, t0):
        a = templatize("SELECT * FROM t WHERE x = 1", t0, registry)
        template = registry.get(a.template_id)
        infer_param_types(template, [a])
        report = score_forecast([a], [a], {template.id: template})
        assert report.recall == report.precision == 1.0
        assert report.matched_pairs == [(0, 0)]

    def test_disjoint_templates_empty_matching(self, registry, t0):
        a = templatize("SELECT * FROM t WHERE x = 1", t0, registry)
        b = templatize("SELECT * FROM u WHERE y = 1", t0, registry)
        templates = {tid: registry.get(tid) for tid in (a.template_id, b.template_id)}
        report = score_forecast([a], [b], templates)
        assert report.matched_pairs == [] and report.f1 == 0.0

    def test_one_to_one(self):
        pairs = greedy_match([0, 1], ["p"], lambda t, p: True)
        assert pairs == [(0, 0)]

    def test_max_matching_complete_3x3(self):
        assert max_matching([[0, 1, 2]] * 3, 3) == 3

    def test_max_matching_empty(self):
        assert max_matching([[], []], 2) == 0

    def test_oracle_equals_brute_force_on_small_graphs(self):
        rng = np.random.RandomState(5)
        # all 3+3 graphs, exhaustively
        for mask in range(1 << 9):
            adjacency = [[v for v in range(3) if mask >> (u * 3 + v) & 1]
                         for u in range(3)]
            assert max_matching(adjacency, 3) == matching_brute_force(adjacency, 3)
        # plus random graphs up to 5+5
        for _ in range(200):
            n_left, n_right = rng.randint(1, 6), rng.randint(1, 6)
            adjacency = [[v for v in range(n_right) if rng.rand() < 0.4]
                         for _ in range(n_left)]
            assert max_matching(adjacency, n_right) == \
                matching_brute_force(adjacency, n_right)

    def test_greedy_at_least_half_of_optimal(self):
        rng = np.random.RandomState(9)
        for _ in range(500):
            n_left, n_right = rng.randint(1, 10), rng.randint(1, 10)
            adjacency = [[v for v in range(n_right) if rng.rand() < 0.3]
                         for _ in range(n_left)]
            adj_set = [set(nbrs) for nbrs in adjacency]
            pairs = greedy_match(list(range(n_left)), list(range(n_right)),
                                 lambda tu, pv: pv in adj_set[tu])
            assert 2 * len(pairs) >= max_matching(adjacency, n_right)


class TestScores:
    def test_formula_values(self, registry, t0):
        a = templatize("SELECT * FROM t WHERE x = 1", t0, registry)
        template = registry.get(a.template_id)
        infer_param_types(template, [a])
        other = ParamBinding(template.id, (2,), t0)
        truth = [a] * 8 + [other] * 2
        pred = [a] * 8 + [ParamBinding(template.id, (3,), t0)] * 2
        report = score_forecast(truth, pred, {template.id: template})
        assert report.recall == pytest.approx(0.8, abs=1e-12)
        assert report.precision == pytest.approx(0.8, abs=1e-12)
        assert report.f1 == pytest.approx(0.8, abs=1e-12)

    def test_empty_prediction_conventions(self, registry, t0):
        a = templatize("SELECT * FROM t WHERE x = 1", t0, registry)
        template = registry.get(a.template_id)
        infer_param_types(template, [a])
        report = score_forecast([a], [], {template.id: template})
        assert (report.recall, report.precision, report.f1) == (0.0, 0.0, 0.0)

    def test_perfect_forecast(self, registry, t0):
        truth = [range_binding(registry, t0, i, i + 5) for i in range(5)]
        template = registry.get(truth[0].template_id)
        infer_param_types(template, truth)
        report = score_forecast(truth, list(truth), {template.id: template})
        assert report.recall == report.precision == report.f1 == 1.0
        assert report.avg_cnt_diff == 0.0


class TestCntDiff:
    def test_worked_range_example(self):
        assert cnt_diff_range(3, 7, 2, 8) == pytest.approx(0.5, abs=1e-12)

    def test_equal_ranges_are_zero(self):
        assert cnt_diff_range(3, 7, 3, 7) == 0.0

    def test_half_bounded_clipped_to_column_max(self):
        # truth [3,7], predicted (3, inf) with observed column max 11
        assert cnt_diff_range(3, 7, 3, None, col_bounds=(0, 11)) == \
            pytest.approx(1.0, abs=1e-12)

    def test_point_interval_conventions(self):
        assert cnt_diff_range(5, 5, 5, 5) == 0.0
        assert cnt_diff_range(5, 5, 4, 6, unit=1.0) == pytest.approx(2.0, abs=1e-12)

    def test_non_containing_rejected(self):
        with pytest.raises(ValueError):
            cnt_diff_range(3, 7, 4, 8)

    def test_set_examples(self):
        assert cnt_diff_set(frozenset({1, 2}), frozenset({1, 2, 3})) == 0.5
        assert cnt_diff_set(frozenset({1, 2}), frozenset({1, 2})) == 0.0
        assert cnt_diff_set(frozenset({"a"}), frozenset({"a", "b", "c"})) == 2.0

    def test_empty_truth_set_rejected(self):
        with pytest.raises(ValueError):
            cnt_diff_set(frozenset(), frozenset({1}))

    def test_scored_pair_average(self, registry, t0):
        truth = range_binding(registry, t0, 3, 7)
        pred = range_binding(registry, t0, 2, 8)
        template = registry.get(truth.template_id)
        infer_param_types(template, [truth, pred])
        report = score_forecast([truth], [pred], {template.id: template})
        assert report.avg_cnt_diff == pytest.approx(0.5, abs=1e-12)

    def test_unmatched_pairs_do_not_contribute(self, registry, t0):
        truth = [range_binding(registry, t0, 3, 7), range_binding(registry, t0, 50, 60)]
        pred = [range_binding(registry, t0, 2, 8)]
        template = registry.get(truth[0].template_id)
        infer_param_types(template, truth + pred)
        report = score_forecast(truth, pred, {template.id: template})
        assert len(report.matched_pairs) == 1
        assert report.avg_cnt_diff == pytest.approx(0.5, abs=1e-12)


class TestApEn:
    def test_constant_series_is_zero(self):
        assert approx_entropy([4.2] * 100) == 0.0

    def test_periodic_below_random(self):
        rng = np.random.RandomState(42)
        periodic = [float(i % 2) for i in range(200)]
        random_series = rng.uniform(0, 1, 200)
        assert approx_entropy(periodic) < approx_entropy(random_series)

    def test_golden_value_from_reference(self):
        rng = np.random.RandomState(42)
        series = rng.uniform(0, 1, 200)
        # frozen from the reference implementation above
        assert approx_entropy(series) == pytest.approx(1.02003020421352, abs=1e-9)
        r = 0.2 * series.std()
        assert approx_entropy(series) == pytest.approx(
            apen_reference(series, 2, r), abs=1e-9)

    def test_matches_reference_on_more_series(self):
        rng = np.random.RandomState(7)
        for _ in range(5):
            series = rng.randn(60)
            r = 0.2 * series.std()
            assert approx_entropy(series, 2, r) == pytest.approx(
                apen_reference(series, 2, r), abs=1e-9)

    def test_translation_invariance(self):
        rng = np.random.RandomState(3)
        series = rng.randn(120)
        assert approx_entropy(series) == pytest.approx(
            approx_entropy(series + 100.0), abs=1e-9)

    def test_non_negative(self):
        rng = np.random.RandomState(1)
        for _ in range(10):
            assert approx_entropy(rng.randn(80)) >= 0.0

    def test_too_short_series(self):
        with pytest.raises(ValueError):
            approx_entropy([1.0, 2.0], m=2)


class TestClassify:
    def test_below_tau_is_unpredictable(self):
        label = classify_parameter({"m": 0.6}, 10, 0.2, tau=0.75)
        assert label.label == UNPREDICTABLE and label.best_acc == 0.6

    def test_constant_parameter_is_trivial(self):
        label = classify_parameter({"m": 1.0}, 1, 1.0, tau=0.75)
        assert label.label == TRIVIAL_TO_PREDICT

    def test_many_values_is_model_predictable(self):
        label = classify_parameter({"m": 0.9}, 50, 0.1, tau=0.75)
        assert label.label == PREDICTABLE_BY_MODEL

    def test_best_accuracy_is_max_over_models(self):
        label = classify_parameter({"a": 0.5, "b": 0.9}, 50, 0.1, tau=0.75)
        assert label.best_acc == 0.9 and label.label == PREDICTABLE_BY_MODEL

    def test_needs_at_least_one_model(self):
        with pytest.raises(ValueError):
            classify_parameter({}, 1, 1.0, tau=0.75)
