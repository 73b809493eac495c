import datetime as dt

import numpy as np
import pytest

from qforecast.core import parse_timestamp
from qforecast.features import (
    FeatureError, assemble_bin_map, assemble_template_map, build_arrival_vector,
    build_bin_schema, build_query_vector, build_template_schema, decompose_datetime,
    decode_rows, destandardize, dict_key, fit_standardization, fnv1a_64,
    hash_category, key_to_value, load_holiday_calendar, MemberSpec, season_of,
    standardize,
)
from qforecast.templates import (
    ParamBinding, TemplateRegistry, infer_param_types, normalize_value, templatize,
)

# Frozen from an independent FNV-1a transliteration (offset 0xcbf29ce484222325,
# prime 0x100000001b3, fold over UTF-8 bytes, mod 2^64).
FNV_AMD64FRE = 12994618856457397874


class TestHashing:
    def test_reference_value_against_independent_oracle(self):
        assert fnv1a_64(b"amd64fre") == FNV_AMD64FRE
        assert hash_category("amd64fre", 1 << 20, {}) == FNV_AMD64FRE % (1 << 20)

    def test_deterministic_across_calls(self):
        assert hash_category("v", 64, {}) == hash_category("v", 64, {})

    def test_codes_bounded_by_buckets(self):
        rng = np.random.RandomState(0)
        for _ in range(10000):
            value = "".join(chr(rng.randint(97, 123)) for _ in range(8))
            assert 0 <= hash_category(value, 64, {}) < 64

    def test_dictionary_records_value(self):
        dictionary = {}
        code = hash_category(dict_key("alpha"), 1024, dictionary)
        assert dictionary == {dict_key("alpha"): code}

    def test_buckets_minimum(self):
        with pytest.raises(FeatureError):
            hash_category("x", 1, {})

    def test_set_key_roundtrip(self):
        value = frozenset({1, 2, "a"})
        assert key_to_value(dict_key(value)) == value
        assert key_to_value(dict_key("plain")) == "plain"


class TestCalendar:
    def test_reference_instant(self):
        parts = decompose_datetime(dt.datetime(2023, 1, 25, 14, 30, 0))
        # (year month day hour minute second dow doy weekend holiday season)
        assert parts == [2023, 1, 25, 14, 30, 0, 2, 25, 0, 0, 0]

    def test_saturday_is_weekend(self):
        parts = decompose_datetime(dt.datetime(2023, 1, 28))
        assert parts[8] == 1

    def test_holiday_lookup(self, tmp_path):
        cal = tmp_path / "holidays.txt"
        cal.write_text("2023-07-04\n# comment\n")
        holidays = load_holiday_calendar(str(cal))
        assert decompose_datetime(dt.datetime(2023, 7, 4, 9), holidays)[9] == 1
        assert decompose_datetime(dt.datetime(2023, 7, 5, 9), holidays)[9] == 0

    def test_seasons(self):
        assert [season_of(m) for m in (1, 4, 7, 10, 12)] == [0, 1, 2, 3, 0]


def _template_with_bindings(registry, t0, texts):
    bindings = [templatize(text, t0 + dt.timedelta(seconds=60 * i), registry)
                for i, text in enumerate(texts)]
    template = registry.get(bindings[0].template_id)
    infer_param_types(template, bindings)
    return template, bindings


class TestVectors:
    def test_numeric_delta(self, registry, t0):
        template, bindings = _template_with_bindings(registry, t0, [
            "SELECT * FROM t WHERE n = 5", "SELECT * FROM t WHERE n = 7"])
        schema = build_template_schema(template, 1024)
        frag = build_query_vector(bindings[1], bindings[0], schema.members[0], schema)
        assert frag.tolist() == [7.0, 2.0]

    def test_first_row_deltas_are_zero(self, registry, t0):
        template, bindings = _template_with_bindings(registry, t0, [
            "SELECT * FROM t WHERE n = 5"])
        schema = build_template_schema(template, 1024)
        frag = build_query_vector(bindings[0], None, schema.members[0], schema)
        assert frag.tolist() == [5.0, 0.0]

    def test_daily_date_has_constant_day_delta(self, registry, t0):
        texts = [f"SELECT * FROM t WHERE d = '2023-01-{i:02d}'" for i in range(1, 21)]
        template, bindings = _template_with_bindings(registry, t0, texts)
        schema = build_template_schema(template, 1024)
        fmap = assemble_template_map(template, bindings, schema)
        day_delta = fmap.rows[1:, schema.slot_index("t0.p1.day.delta")]
        assert np.all(day_delta == 1.0)

    def test_arrival_gaps(self, t0):
        schema = build_template_schema(
            _dummy_template(), 1024)
        vec0 = build_arrival_vector(t0, None, schema)
        vec1 = build_arrival_vector(t0 + dt.timedelta(seconds=3600), t0, schema)
        assert vec0[-1] == 0.0 and vec1[-1] == 3600.0

    def test_arrival_regression_rejected(self, t0):
        schema = build_template_schema(_dummy_template(), 1024)
        with pytest.raises(FeatureError):
            build_arrival_vector(t0, t0 + dt.timedelta(seconds=1), schema)

    def test_cumulative_gap_reconstructs_timestamps(self, registry, t0):
        texts = [f"SELECT * FROM t WHERE n = {i}" for i in range(50)]
        template, bindings = _template_with_bindings(registry, t0, texts)
        schema = build_template_schema(template, 1024)
        fmap = assemble_template_map(template, bindings, schema)
        gaps = fmap.rows[:, schema.slot_index("arrival.gap")]
        rebuilt = [t0 + dt.timedelta(seconds=float(np.sum(gaps[:i + 1])))
                   for i in range(len(gaps))]
        assert rebuilt == [b.arrival for b in bindings]


def _dummy_template():
    registry = TemplateRegistry()
    binding = templatize("SELECT * FROM t WHERE n = 1",
                         parse_timestamp("2023-01-01T00:00:00Z"), registry)
    template = registry.get(binding.template_id)
    infer_param_types(template, [binding])
    return template


class TestMaps:
    def test_determinism(self, t0):
        def build():
            registry = TemplateRegistry()
            texts = [f"SELECT * FROM t WHERE n = {i} AND tag = 'v{i % 3}'"
                     for i in range(30)]
            bindings = [templatize(text, t0 + dt.timedelta(seconds=60 * i), registry)
                        for i, text in enumerate(texts)]
            template = registry.get(bindings[0].template_id)
            infer_param_types(template, bindings)
            schema = build_template_schema(template, 1024)
            return assemble_template_map(template, bindings, schema)
        a, b = build(), build()
        assert np.array_equal(a.rows, b.rows)

    def test_bin_width_covers_member_parameters(self, registry, t0):
        t_a, binds_a = _template_with_bindings(registry, t0, [
            "SELECT * FROM a WHERE x = 1 AND y = 2 AND z = 3",
            "SELECT * FROM a WHERE x = 4 AND y = 5 AND z = 6"])
        t_b, binds_b = _template_with_bindings(registry, t0, [
            "SELECT * FROM b WHERE u = 1 AND v = 2",
            "SELECT * FROM b WHERE u = 3 AND v = 4"])
        members = [MemberSpec.for_template(f"{t_a.id}", t_a),
                   MemberSpec.for_template(f"{t_b.id}", t_b)]
        schema = build_bin_schema(members, 1024)
        value_slots = [s for s in schema.slots
                       if s.member is not None and s.kind != "delta"]
        # 3 + 2 = 5 parameter value slots, one tid slot, plus deltas/arrival
        assert len(value_slots) == 5
        assert sum(1 for s in schema.slots if s.kind == "template_id") == 1

    def test_single_member_bin_matches_template_map_plus_tid(self, registry, t0):
        template, bindings = _template_with_bindings(registry, t0, [
            f"SELECT * FROM t WHERE n = {i}" for i in range(6)])
        t_schema = build_template_schema(template, 1024)
        t_map = assemble_template_map(template, bindings, t_schema)
        member = MemberSpec.for_template("m", template)
        b_schema = build_bin_schema([member], 1024)
        b_map = assemble_bin_map({"m": bindings}, b_schema)
        tid_col = b_schema.slot_index("tid")
        kept = [i for i in range(b_schema.width) if i != tid_col]
        assert np.array_equal(b_map.rows[:, kept], t_map.rows)
        assert len(set(b_map.rows[:, tid_col])) == 1

    def test_interleaving_preserves_arrival_order(self, registry, t0):
        t_a, _ = _template_with_bindings(registry, t0, [
            "SELECT * FROM a WHERE x = 1", "SELECT * FROM a WHERE x = 2"])
        t_b, _ = _template_with_bindings(registry, t0, [
            "SELECT * FROM b WHERE u = 1", "SELECT * FROM b WHERE u = 2"])
        binds_a = [ParamBinding(t_a.id, (i,), t0 + dt.timedelta(seconds=20 * i))
                   for i in range(10)]
        binds_b = [ParamBinding(t_b.id, (i,), t0 + dt.timedelta(seconds=30 * i + 5))
                   for i in range(10)]
        members = [MemberSpec.for_template("a", t_a), MemberSpec.for_template("b", t_b)]
        schema = build_bin_schema(members, 1024)
        fmap = assemble_bin_map({"a": binds_a, "b": binds_b}, schema)
        assert fmap.arrivals == sorted(fmap.arrivals)
        merged = sorted(binds_a + binds_b, key=lambda b: b.arrival)
        assert [b.arrival for b in merged] == fmap.arrivals

    def test_inactive_member_carries_forward_with_zero_delta(self, registry, t0):
        t_a, _ = _template_with_bindings(registry, t0, [
            "SELECT * FROM a WHERE x = 1", "SELECT * FROM a WHERE x = 2"])
        t_b, _ = _template_with_bindings(registry, t0, [
            "SELECT * FROM b WHERE u = 1", "SELECT * FROM b WHERE u = 2"])
        binds_a = [ParamBinding(t_a.id, (7,), t0)]
        binds_b = [ParamBinding(t_b.id, (i,), t0 + dt.timedelta(seconds=10 + i))
                   for i in range(3)]
        members = [MemberSpec.for_template("a", t_a), MemberSpec.for_template("b", t_b)]
        schema = build_bin_schema(members, 1024)
        fmap = assemble_bin_map({"a": binds_a, "b": binds_b}, schema)
        col_a = schema.slot_index("a.p1.value")
        col_a_delta = schema.slot_index("a.p1.value.delta")
        # rows 1.. belong to template b: a's slot carries 7 with zero delta
        assert np.all(fmap.rows[1:, col_a] == 7.0)
        assert np.all(fmap.rows[1:, col_a_delta] == 0.0)

    def test_delta_consistency_invariant(self, registry, t0):
        texts = [f"SELECT * FROM t WHERE n = {i * i}" for i in range(20)]
        template, bindings = _template_with_bindings(registry, t0, texts)
        schema = build_template_schema(template, 1024)
        fmap = assemble_template_map(template, bindings, schema)
        value = fmap.rows[:, schema.slot_index("t0.p1.value")]
        delta = fmap.rows[:, schema.slot_index("t0.p1.value.delta")]
        assert np.allclose(value[1:] - value[:-1], delta[1:])
        assert delta[0] == 0.0


class TestDecode:
    def test_nearest_code_snap(self):
        registry = TemplateRegistry()
        t0 = parse_timestamp("2023-01-01T00:00:00Z")
        texts = ["SELECT * FROM t WHERE c = 'a'", "SELECT * FROM t WHERE c = 'b'",
                 "SELECT * FROM t WHERE c = 'z'"]
        bindings = [templatize(text, t0 + dt.timedelta(seconds=i), registry)
                    for i, text in enumerate(texts)]
        template = registry.get(bindings[0].template_id)
        infer_param_types(template, bindings)
        schema = build_template_schema(template, 1024)
        fmap = assemble_template_map(template, bindings, schema)
        dictionary = schema.dictionaries["t0.p1.code"]
        codes = sorted(dictionary.values())
        # nudge a row's code towards but not past the midpoint: still snaps back
        row = fmap.rows[0].copy()
        code_col = schema.slot_index("t0.p1.code")
        row[code_col] = fmap.rows[0][code_col] + 0.3
        decoded = decode_rows(row[None, :], schema, t0, registry)
        assert decoded[0][1] == (bindings[0].values[0],)

    def test_synthetic_nearest_neighbor(self):
        # predicted 4.3 with dictionary codes {1, 4, 9} snaps to 4
        codes = np.asarray([1.0, 4.0, 9.0])
        assert codes[int(np.argmin(np.abs(codes - 4.3)))] == 4.0

    def test_gap_cumsum_and_rounding(self, registry, t0):
        template, bindings = _template_with_bindings(registry, t0, [
            f"SELECT * FROM t WHERE n = {i}" for i in range(3)])
        schema = build_template_schema(template, 1024)
        fmap = assemble_template_map(template, bindings, schema)
        gap_col = schema.slot_index("arrival.gap")
        rows = fmap.rows[1:].copy()
        rows[0][gap_col] = 60.2
        rows[1][gap_col] = 59.8
        decoded = decode_rows(rows, schema, t0, registry)
        assert decoded[0][2] == t0 + dt.timedelta(seconds=60)
        assert decoded[1][2] == t0 + dt.timedelta(seconds=120)

    def test_full_roundtrip_on_clean_rows(self, registry, t0):
        texts = []
        for i in range(40):
            day = 1 + (i % 27)
            texts.append(
                f"SELECT * FROM t WHERE n = {i} AND tag = 'v{i % 5}' AND flag = TRUE "
                f"AND d BETWEEN '2023-01-{day:02d}' AND '2023-02-{day:02d}' "
                f"AND s IN ({i % 3}, {10 + i % 3})")
        template, bindings = _template_with_bindings(registry, t0, texts)
        schema = build_template_schema(template, 1024)
        fmap = assemble_template_map(template, bindings, schema)
        decoded = decode_rows(fmap.rows, schema, bindings[0].arrival, registry)
        for binding, (tid, values, arrival, member) in zip(bindings, decoded):
            assert tid == template.id
            expect = tuple(normalize_value(v, d)
                           for v, d in zip(binding.values, template.descriptors))
            got = tuple(normalize_value(v, d)
                        for v, d in zip(values, template.descriptors))
            assert got == expect
            assert arrival == binding.arrival

    def test_standardize_roundtrip(self, registry, t0):
        texts = [f"SELECT * FROM t WHERE n = {i}" for i in range(10)]
        template, bindings = _template_with_bindings(registry, t0, texts)
        schema = build_template_schema(template, 1024)
        fmap = assemble_template_map(template, bindings, schema)
        fit_standardization(schema, fmap.rows)
        again = destandardize(schema, standardize(schema, fmap.rows))
        assert np.allclose(again, fmap.rows, atol=1e-12)

    def test_empty_dictionary_is_an_error(self, registry, t0):
        template, bindings = _template_with_bindings(registry, t0, [
            "SELECT * FROM t WHERE c = 'a'"])
        schema = build_template_schema(template, 1024)
        fmap = assemble_template_map(template, bindings, schema)
        schema.dictionaries["t0.p1.code"] = {}
        with pytest.raises(FeatureError):
            decode_rows(fmap.rows, schema, t0, registry)
