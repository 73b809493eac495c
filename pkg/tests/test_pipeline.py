import datetime as dt

import numpy as np
import pytest

from qforecast.core import EngineConfig, parse_timestamp, read_workload_log
from qforecast.pipeline import (
    PER_BIN, PER_TEMPLATE, PipelineError, emit_forecast, forecast_next_dt,
    forecast_next_k, load_session, save_session, train_all,
)
from qforecast.syngen import PatternSpec, TemplateSpec, WorkloadSpec, generate_workload


def quick_cfg(**kw):
    base = dict(k=6, delta_t=600, delta_t_fine=60, horizon_t=1200,
                max_epochs=6, seed=3)
    base.update(kw)
    return EngineConfig(**base)


def spec_three_templates(count=150):
    return WorkloadSpec(seed=2, start="2023-01-01T00:00:00Z", templates=[
        TemplateSpec(sql="SELECT * FROM a WHERE x = $1", count=count,
                     params=[PatternSpec("periodic", "int", period=6)],
                     gap_seconds=60),
        TemplateSpec(sql="SELECT * FROM b WHERE y = $1", count=count,
                     params=[PatternSpec("periodic", "int", period=3)],
                     gap_seconds=90),
        TemplateSpec(sql="SELECT * FROM c WHERE z = $1", count=count,
                     params=[PatternSpec("periodic", "str",
                                         values=["u", "v", "w"])],
                     gap_seconds=120),
    ])


@pytest.fixture(scope="module")
def trained_session():
    workload = generate_workload(spec_three_templates()).workload
    return train_all(workload, PER_TEMPLATE, quick_cfg()), workload


@pytest.fixture(scope="module")
def trained_bin_session():
    workload = generate_workload(spec_three_templates()).workload
    return train_all(workload, PER_BIN, quick_cfg()), workload


class TestTrainAll:
    def test_one_model_per_template(self, trained_session):
        session, _ = trained_session
        assert len(session.models) == 3
        assert all(e.kind == "seq2seq" for e in session.models.values())
        assert not session.fallbacks

    def test_per_bin_model_count_matches_plan(self, trained_bin_session):
        session, _ = trained_bin_session
        assert session.plan is not None
        assert len(session.models) == len(session.plan.bins)

    def test_fallback_flag_for_scarce_templates(self):
        spec = WorkloadSpec(seed=4, templates=[
            TemplateSpec(sql="SELECT * FROM a WHERE x = $1", count=100,
                         params=[PatternSpec("periodic", "int", period=4)],
                         gap_seconds=60),
            TemplateSpec(sql="SELECT * FROM rare WHERE y = $1", count=5,
                         params=[PatternSpec("periodic", "int", period=2)],
                         gap_seconds=60),
        ])
        workload = generate_workload(spec).workload
        session = train_all(workload, PER_TEMPLATE, quick_cfg())
        fallback_entry = [session.models[m] for m in session.fallbacks]
        assert len(session.fallbacks) == 1
        assert fallback_entry[0].kind == "history"

    def test_empty_workload_rejected(self):
        from qforecast.core import TimedWorkload
        with pytest.raises(PipelineError):
            train_all(TimedWorkload([]), PER_TEMPLATE, quick_cfg())

    def test_workers_do_not_change_results(self):
        workload = generate_workload(spec_three_templates(count=60)).workload
        cfg = quick_cfg(max_epochs=3)
        serial = train_all(workload, PER_TEMPLATE, cfg, workers=1)
        parallel = train_all(workload, PER_TEMPLATE, cfg, workers=3)
        fk_serial = forecast_next_k(serial, 6)
        fk_parallel = forecast_next_k(parallel, 6)
        assert fk_serial.entries == fk_parallel.entries


class TestNextK:
    def test_output_size_exactly_k(self, trained_session):
        session, _ = trained_session
        for k in (3, 6, 12):
            assert len(forecast_next_k(session, k).entries) == k

    def test_single_template_output_is_that_models_decode(self):
        spec = WorkloadSpec(seed=9, templates=[
            TemplateSpec(sql="SELECT * FROM solo WHERE x = $1", count=120,
                         params=[PatternSpec("periodic", "int", period=4)],
                         gap_seconds=60)])
        workload = generate_workload(spec).workload
        session = train_all(workload, PER_TEMPLATE, quick_cfg())
        result = forecast_next_k(session, 6)
        assert len(result.entries) == 6
        assert {tid for tid, _, _ in result.entries} == {0}

    def test_merge_order_is_global_arrival_order(self, trained_session):
        session, _ = trained_session
        result = forecast_next_k(session, 12)
        arrivals = [arrival for _, _, arrival in result.entries]
        assert arrivals == sorted(arrivals)

    def test_requesting_more_than_pool_errors(self, trained_session):
        session, _ = trained_session
        with pytest.raises(PipelineError):
            forecast_next_k(session, 1000)

    def test_mode_mismatch(self, trained_bin_session):
        session, _ = trained_bin_session
        with pytest.raises(PipelineError):
            forecast_next_k(session, 6)


class TestNextDt:
    def test_window_law(self, trained_bin_session):
        session, _ = trained_bin_session
        for seconds in (120, 600):
            result = forecast_next_dt(session, seconds)
            end = session.anchor + dt.timedelta(seconds=seconds)
            for _, _, arrival in result.entries:
                assert session.anchor <= arrival < end

    def test_rate_bound_per_template(self):
        # one query a minute cannot produce more than ten in ten minutes
        spec = WorkloadSpec(seed=6, templates=[
            TemplateSpec(sql="SELECT * FROM solo WHERE x = $1", count=150,
                         params=[PatternSpec("periodic", "int", period=5)],
                         gap_seconds=60)])
        workload = generate_workload(spec).workload
        session = train_all(workload, PER_BIN, quick_cfg(k=8))
        result = forecast_next_dt(session, 600)
        assert len(result.entries) <= 10

    def test_empty_window_is_not_an_error(self):
        # arrivals every 20 minutes; a 2-minute window holds no predictions
        spec = WorkloadSpec(seed=6, templates=[
            TemplateSpec(sql="SELECT * FROM slow WHERE x = $1", count=80,
                         params=[PatternSpec("periodic", "int", period=5)],
                         gap_seconds=1200)])
        workload = generate_workload(spec).workload
        session = train_all(workload, PER_BIN,
                            quick_cfg(delta_t=1200, delta_t_fine=120,
                                      horizon_t=2400))
        result = forecast_next_dt(session, 120)
        assert result.entries == [] and result.horizon_kind == "dt"

    def test_union_over_bins_equals_window_filter(self, trained_bin_session):
        session, _ = trained_bin_session
        from qforecast.pipeline import _decode_entry_queries
        seconds = 600
        result = forecast_next_dt(session, seconds)
        end = session.anchor + dt.timedelta(seconds=seconds)
        brute = []
        for model_id in sorted(session.models):
            entry = session.models[model_id]
            decoded = _decode_entry_queries(session, entry)
            brute.extend(item for item in decoded
                         if session.anchor <= item[0] < end)
        brute.sort(key=lambda item: (item[0], item[1], item[2]))
        assert [(t, x, a) for a, t, _, x in brute] == \
            [(t, x, a) for t, x, a in result.entries]

    def test_mode_mismatch(self, trained_session):
        session, _ = trained_session
        with pytest.raises(PipelineError):
            forecast_next_dt(session, 600)


class TestEmitAndPersistence:
    def test_emit_round_trips_through_reader(self, trained_session, tmp_path):
        session, _ = trained_session
        result = forecast_next_k(session, 9)
        path = tmp_path / "forecast.jsonl"
        emit_forecast(result, str(path))
        again, malformed = read_workload_log(str(path))
        assert malformed == 0
        assert [(q.text, q.arrival) for q in again] == \
            [(text, arrival) for _, text, arrival in result.entries]

    def test_empty_result_writes_empty_file(self, tmp_path):
        from qforecast.core import ForecastResult
        path = tmp_path / "empty.jsonl"
        t0 = parse_timestamp("2023-01-01T00:00:00Z")
        emit_forecast(ForecastResult([], "dt", 60, anchor=t0), str(path))
        assert path.read_text() == ""

    def test_store_round_trip_is_bit_exact(self, trained_session, tmp_path):
        session, _ = trained_session
        before = forecast_next_k(session, 10)
        save_session(session, str(tmp_path / "store"))
        loaded = load_session(str(tmp_path / "store"))
        after = forecast_next_k(loaded, 10)
        assert before.entries == after.entries

    def test_per_bin_store_round_trip(self, trained_bin_session, tmp_path):
        session, _ = trained_bin_session
        before = forecast_next_dt(session, 600)
        save_session(session, str(tmp_path / "store"))
        loaded = load_session(str(tmp_path / "store"))
        after = forecast_next_dt(loaded, 600)
        assert before.entries == after.entries
        assert loaded.plan is not None and len(loaded.plan.bins) == len(session.plan.bins)


class TestModeAgreement:
    def test_next_k_prefix_matches_next_dt_on_single_easy_template(self):
        # constant parameter, constant cadence: both granularities converge
        # to the same decoded statements, so only the plumbing can differ
        spec = WorkloadSpec(seed=8, templates=[
            TemplateSpec(sql="SELECT * FROM s WHERE x = $1", count=200,
                         params=[PatternSpec("periodic", "int", values=[5])],
                         gap_seconds=120)])
        workload = generate_workload(spec).workload
        cfg = quick_cfg(max_epochs=12)
        per_template = train_all(workload, PER_TEMPLATE, cfg)
        per_bin = train_all(workload, PER_BIN, cfg)
        k_result = forecast_next_k(per_template, cfg.k)
        dt_result = forecast_next_dt(per_bin, cfg.delta_t)
        end = per_bin.anchor + dt.timedelta(seconds=cfg.delta_t)
        k_prefix = [(text, arrival) for _, text, arrival in k_result.entries
                    if arrival < end]
        dt_entries = [(text, arrival) for _, text, arrival in dt_result.entries]
        assert dt_entries == k_prefix
