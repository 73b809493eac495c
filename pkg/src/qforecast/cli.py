"""Command-line interface wiring the engine into batch commands.

Subcommands: gen, templatize, plan, train, forecast, evaluate, analyze,
monitor.  Reports are written as JSON plus delimited CSV, with matplotlib
figures rendered alongside.  Exit codes: 0 success, 1 usage error, 2 data
error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import os
import sys
from collections import Counter

import numpy as np

from .core import (
    ConfigError, EngineConfig, ModelStoreError, TimedWorkload, WorkloadLogError,
    format_timestamp, load_config, parse_duration, read_workload_log,
    write_workload_log,
)
from .features import load_holiday_calendar
from .feedback import (
    AccuracyMonitor, DriftEvent, OnlineWindow, fine_tune, retire_inactive,
    write_drift_log,
)
from .metrics import approx_entropy, classify_parameter, score_forecast
from .models import ModelError
from .pipeline import (
    PER_BIN, PER_TEMPLATE, PipelineError, emit_forecast, estimate_template_sizes,
    forecast_next_dt, forecast_next_k, load_session, save_session, train_all,
)
from .planner import PlanningError, plan_bins
from .syngen import (
    GeneratorError, WorkloadSpec, bindings_by_template, demo_suite,
    generate_workload,
)
from .sqlast import SqlError
from .templates import (
    CATEGORICAL, DATETIME, NUMERIC, SET, BOOLEAN, TemplateError, value_as_datetime,
)

DATA_ERRORS = (WorkloadLogError, ModelStoreError, ConfigError, PipelineError,
               PlanningError, GeneratorError, SqlError, TemplateError, ModelError,
               OSError, KeyError, ValueError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="qforecast",
                     description="Forecast future SQL workloads from history logs.")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--config", default=None, help="flat key=value config file")
    parser.add_argument("--workers", type=int, default=1,
                        help="parallel training workers")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic workload log")
    p.add_argument("spec", nargs="?", help="workload spec JSON file")
    p.add_argument("--demo", choices=["periodic", "trend", "combined", "mixed"],
                   help="use a bundled demo spec instead of a file")
    p.add_argument("--dump-spec", help="also write the effective spec JSON here")
    p.add_argument("-o", "--output", required=True, help="output JSONL log")

    p = sub.add_parser("templatize", help="extract templates and recurrence stats")
    p.add_argument("log")
    p.add_argument("-o", "--output", required=True, help="registry JSON output")

    p = sub.add_parser("plan", help="estimate sizes and cut-and-pack into bins")
    p.add_argument("log")
    p.add_argument("-o", "--output", required=True, help="plan JSON output")

    p = sub.add_parser("train", help="train forecasting models into a store")
    p.add_argument("log")
    p.add_argument("--mode", choices=[PER_TEMPLATE, PER_BIN], default=PER_TEMPLATE)
    p.add_argument("--holidays", help="holiday calendar file (one ISO date per line)")
    p.add_argument("-o", "--output", required=True, help="model store directory")

    p = sub.add_parser("forecast", help="forecast from a trained store")
    p.add_argument("--store", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--next-k", type=int, help="forecast exactly K queries")
    group.add_argument("--next-dt", help="forecast the next interval (e.g. 1h)")
    p.add_argument("-o", "--output", required=True, help="forecast JSONL output")

    p = sub.add_parser("evaluate", help="score a forecast against ground truth")
    p.add_argument("truth_log")
    p.add_argument("forecast_log")
    p.add_argument("-o", "--output", required=True, help="report JSON output")

    p = sub.add_parser("analyze", help="per-parameter entropy and predictability")
    p.add_argument("log")
    p.add_argument("--tau", type=float, default=None,
                   help="predictability threshold (default from config)")
    p.add_argument("-o", "--output", required=True, help="report JSON output")

    p = sub.add_parser("monitor", help="run feedback rounds, fine-tuning in place")
    p.add_argument("truth_log")
    p.add_argument("--store", required=True, help="per-template model store")
    p.add_argument("--rounds", type=int, default=None, help="cap on rounds per model")
    p.add_argument("-o", "--outdir", default=None,
                   help="directory for drift log, rounds CSV and figure")
    return parser


# ---------------------------------------------------------------------------
# Command implementations
# ---------------------------------------------------------------------------

def _load_cfg(args) -> EngineConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    return load_config(args.config, overrides)


def cmd_gen(args) -> int:
    if bool(args.spec) == bool(args.demo):
        raise UsageError("gen needs exactly one of a spec file or --demo")
    spec = demo_suite()[args.demo] if args.demo else WorkloadSpec.load(args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    result = generate_workload(spec)
    write_workload_log(result.workload, args.output)
    labels_path = args.output + ".labels.json"
    with open(labels_path, "w", encoding="utf-8") as fh:
        json.dump({"labels": result.labels, "templates": result.template_sqls},
                  fh, indent=2, sort_keys=True)
    if args.dump_spec:
        with open(args.dump_spec, "w", encoding="utf-8") as fh:
            json.dump(spec.to_json(), fh, indent=2, sort_keys=True)
    print(f"wrote {len(result.workload)} queries to {args.output} "
          f"({len(spec.templates)} templates; labels in {labels_path})")
    return 0


def cmd_templatize(args) -> int:
    workload, malformed = read_workload_log(args.log)
    registry, grouped = bindings_by_template(workload)
    from .templates import infer_param_types
    for tid, bindings in grouped.items():
        infer_param_types(registry.get(tid), bindings)
    with open(args.output, "w", encoding="utf-8") as fh:
        json.dump(registry.to_json(), fh, indent=2, sort_keys=True)
    counts = Counter({tid: len(bindings) for tid, bindings in grouped.items()})
    recurrent = {tid for tid, n in counts.items() if n >= 2}
    recurrent_queries = sum(counts[tid] for tid in recurrent)
    print(f"queries: {len(workload)} ({malformed} malformed lines skipped)")
    print(f"templates: {len(registry)}")
    print(f"recurrent templates: {len(recurrent)}")
    share = 100.0 * recurrent_queries / len(workload)
    print(f"recurrent queries: {recurrent_queries} ({share:.1f}%)")
    for tid, n in counts.most_common(5):
        print(f"  template {tid} x{n}: {registry.get(tid).canonical_text[:90]}")
    return 0


def cmd_plan(args, cfg: EngineConfig) -> int:
    workload, _ = read_workload_log(args.log)
    registry, grouped = bindings_by_template(workload)
    sizes, _ = estimate_template_sizes(grouped, cfg, workload.anchor)
    plan = plan_bins(sizes, cfg.k, cfg.bin_cap)
    with open(args.output, "w", encoding="utf-8") as fh:
        json.dump(plan.to_json(), fh, indent=2, sort_keys=True)
    cut = sum(1 for meta in plan.units.values() if meta.get("slices") is not None)
    print(f"templates: {len(grouped)}; units after cutting: {len(plan.units)} "
          f"({cut} sub-templates); bins: {len(plan.bins)} "
          f"(k={cfg.k}, cap={cfg.bin_cap})")
    for b in plan.bins:
        print(f"  bin {b.bin_id}: est {b.est_total:4d}  members {b.members}")
    return 0


def cmd_train(args, cfg: EngineConfig) -> int:
    workload, _ = read_workload_log(args.log)
    holidays = load_holiday_calendar(args.holidays) if args.holidays else frozenset()
    session = train_all(workload, args.mode, cfg, holidays=holidays,
                        workers=args.workers)
    save_session(session, args.output)
    trained = sum(1 for e in session.models.values() if e.kind == "seq2seq")
    print(f"trained {trained} models ({len(session.fallbacks)} history fallbacks) "
          f"into {args.output} [mode={args.mode}, k={cfg.k}]")
    if session.plan:
        print(f"plan: {len(session.plan.bins)} bins over {len(session.plan.units)} units")
    return 0


def cmd_forecast(args) -> int:
    session = load_session(args.store)
    if args.next_k is not None:
        result = forecast_next_k(session, args.next_k)
        label = f"next-{args.next_k}"
    else:
        seconds = parse_duration(args.next_dt)
        result = forecast_next_dt(session, seconds)
        label = f"next-{args.next_dt}"
    emit_forecast(result, args.output)
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"wrote {len(result.entries)} forecast entries ({label}) to {args.output}")
    return 0


def _score_logs(truth_log: str, forecast_log: str):
    from .templates import TemplateRegistry, infer_param_types, templatize

    truth_wl, _ = read_workload_log(truth_log)
    pred_wl, _ = read_workload_log(forecast_log)
    registry = TemplateRegistry()
    truth_flat = [templatize(q.text, q.arrival, registry) for q in truth_wl]
    pred_flat = [templatize(q.text, q.arrival, registry) for q in pred_wl]
    # inference sees truth and predictions together so types agree
    merged: dict = {}
    for b in truth_flat + pred_flat:
        merged.setdefault(b.template_id, []).append(b)
    for tid, bindings in merged.items():
        infer_param_types(registry.get(tid), bindings)
    report = score_forecast(truth_flat, pred_flat, registry.templates)
    return report, registry


def cmd_evaluate(args) -> int:
    report, registry = _score_logs(args.truth_log, args.forecast_log)
    payload = {
        "recall": report.recall,
        "precision": report.precision,
        "f1": report.f1,
        "avg_cnt_diff": report.avg_cnt_diff,
        "matched": len(report.matched_pairs),
        "truth_count": report.truth_count,
        "pred_count": report.pred_count,
        "per_template": {
            str(tid): {**stats,
                       "canonical_text": registry.get(tid).canonical_text}
            for tid, stats in report.per_template.items()},
    }
    with open(args.output, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    base, _ = os.path.splitext(args.output)
    csv_path = base + ".csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["template_id", "truth", "matched", "recall", "canonical_text"])
        for tid, stats in sorted(report.per_template.items()):
            writer.writerow([tid, stats["truth"], stats["matched"],
                             f"{stats['recall']:.6f}",
                             registry.get(tid).canonical_text])
    from .plots import plot_evaluation
    fig_path = plot_evaluation(payload, base + ".png")
    print(f"recall={report.recall:.4f} precision={report.precision:.4f} "
          f"f1={report.f1:.4f} avg_cnt_diff={report.avg_cnt_diff:.4f}")
    print(f"report: {args.output}; breakdown: {csv_path}; figure: {fig_path}")
    return 0


def _series_encoding(bindings, descriptor):
    values = [b.values[descriptor.position - 1] for b in bindings]
    if descriptor.inferred_type == NUMERIC:
        return np.asarray([float(v) for v in values]), values
    if descriptor.inferred_type == DATETIME:
        return np.asarray([value_as_datetime(v).timestamp() for v in values]), values
    if descriptor.inferred_type == BOOLEAN:
        return np.asarray([1.0 if v else 0.0 for v in values]), values
    codes: dict = {}
    encoded = []
    for v in values:
        encoded.append(float(codes.setdefault(repr(v), len(codes))))
    return np.asarray(encoded), values


def _simple_accuracies(values) -> tuple[dict, float]:
    n = len(values)
    last = sum(1 for i in range(1, n) if values[i] == values[i - 1]) / max(1, n - 1)
    modal = Counter(repr(v) for v in values).most_common(1)[0][1] / n
    best_seasonal = 0.0
    for lag in range(2, min(49, n // 2)):
        acc = sum(1 for i in range(lag, n) if values[i] == values[i - lag]) / (n - lag)
        best_seasonal = max(best_seasonal, acc)
    return ({"last_value": last, "modal": modal, "seasonal_naive": best_seasonal}, last)


def cmd_analyze(args, cfg: EngineConfig) -> int:
    workload, _ = read_workload_log(args.log)
    registry, grouped = bindings_by_template(workload)
    from .templates import infer_param_types
    tau = args.tau if args.tau is not None else cfg.tau
    rows = []
    for tid in sorted(grouped):
        bindings = sorted(grouped[tid], key=lambda b: b.arrival)
        template = registry.get(tid)
        infer_param_types(template, bindings)
        for descriptor in template.descriptors:
            series, values = _series_encoding(bindings, descriptor)
            ap_en = approx_entropy(series) if series.size >= 3 else 0.0
            accs, last_acc = _simple_accuracies(values)
            label = classify_parameter(
                accs, len(set(map(repr, values))), last_acc, tau,
                template_id=tid, position=descriptor.position, ap_en=ap_en)
            rows.append({
                "template_id": tid,
                "position": descriptor.position,
                "type": descriptor.inferred_type,
                "predicate": descriptor.predicate_kind,
                "ap_en": round(float(ap_en), 6),
                "best_acc": round(label.best_acc, 6),
                "label": label.label,
            })
    payload = {"tau": tau, "parameters": rows}
    with open(args.output, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    base, _ = os.path.splitext(args.output)
    csv_path = base + ".csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    from .plots import plot_apen_histogram
    fig_path = plot_apen_histogram(rows, base + ".png")
    counts = Counter(r["label"] for r in rows)
    print(f"parameters: {len(rows)}  " +
          "  ".join(f"{label}={counts.get(label, 0)}" for label in
                    ("trivial_to_predict", "predictable_by_model", "unpredictable")))
    print(f"report: {args.output}; table: {csv_path}; figure: {fig_path}")
    return 0


def cmd_monitor(args, cfg_ignored) -> int:
    session = load_session(args.store)
    if session.mode != PER_TEMPLATE:
        raise PipelineError("monitor requires a per-template store")
    cfg = session.config
    truth_wl, _ = read_workload_log(args.truth_log)
    registry = session.registry
    known_before = set(registry.templates)
    _, grouped = bindings_by_template(truth_wl, registry)

    outdir = args.outdir or os.path.dirname(os.path.abspath(args.store))
    os.makedirs(outdir, exist_ok=True)
    monitor = AccuracyMonitor(cfg.alpha)
    events: list = []
    round_rows: list = []
    last_seen: dict = {}

    for tid in sorted(grouped):
        bindings = sorted(grouped[tid], key=lambda b: b.arrival)
        last_seen[tid] = bindings[-1].arrival
        model_id = str(tid)
        if tid not in known_before or model_id not in session.models:
            if len(bindings) >= 2:
                events.append(DriftEvent(bindings[0].arrival, model_id, "emerged"))
            continue
        entry = session.models[model_id]
        if entry.kind != "seq2seq":
            continue
        monitor.register(model_id)
        template = session.template_for(tid)
        window = OnlineWindow(entry.model.schema, entry.tail_rows, entry.anchor)
        k = entry.model.k
        # only arrivals after the model's anchor are new observations
        bindings = [b for b in bindings if b.arrival > entry.anchor]
        n_rounds = len(bindings) // k
        if args.rounds:
            n_rounds = min(n_rounds, args.rounds)
        from .features import decode_rows
        from .templates import ParamBinding
        for round_idx in range(n_rounds):
            chunk = bindings[round_idx * k:(round_idx + 1) * k]
            pred_rows = entry.model.predict(window.tail(k))
            decoded = decode_rows(pred_rows, entry.model.schema,
                                  window.last_arrival, registry)
            preds = [ParamBinding(t, v, a) for t, v, a, _ in decoded]
            report = score_forecast(chunk, preds, {tid: template})
            accuracy = report.recall
            round_rows.append({"round": round_idx, "model_id": model_id,
                               "accuracy": accuracy})
            triggered = monitor.record_round(model_id, accuracy)
            for b in chunk:
                window.append(b, f"t{tid}")
            if triggered:
                events.append(DriftEvent(chunk[-1].arrival, model_id, "trigger",
                                         accuracy_before=accuracy))
                new_map = window.new_map()
                if len(new_map.rows) >= 2 * k + 1:
                    epochs = fine_tune(entry.model, new_map, cfg)
                    pred_rows = entry.model.predict(window.tail(k))
                    decoded = decode_rows(pred_rows, entry.model.schema,
                                          window.last_arrival, registry)
                    preds = [ParamBinding(t, v, a) for t, v, a, _ in decoded]
                    # accuracy_after previews the refreshed model on this round
                    after = score_forecast(chunk, preds, {tid: template}).recall
                    events.append(DriftEvent(chunk[-1].arrival, model_id, "finetuned",
                                             accuracy_before=accuracy,
                                             accuracy_after=after))
        entry.tail_rows = window.tail(k)
        entry.anchor = window.last_arrival

    for tid in retire_inactive(last_seen, truth_wl.anchor, cfg.delta_t):
        events.append(DriftEvent(truth_wl.anchor, str(tid), "retired"))

    save_session(session, args.store)
    drift_path = os.path.join(outdir, "drift_events.jsonl")
    write_drift_log(events, drift_path)
    rounds_path = os.path.join(outdir, "rounds.csv")
    with open(rounds_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["round", "model_id", "accuracy"])
        writer.writeheader()
        writer.writerows(round_rows)
    from .plots import plot_accuracy_rounds
    fig_path = plot_accuracy_rounds(round_rows, cfg.alpha,
                                    os.path.join(outdir, "rounds.png"))
    tunes = sum(1 for e in events if e.event == "finetuned")
    print(f"rounds: {len(round_rows)}; triggers: "
          f"{sum(1 for e in events if e.event == 'trigger')}; fine-tunes: {tunes}")
    print(f"drift log: {drift_path}; rounds: {rounds_path}; figure: {fig_path}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        if args.command == "gen":
            return cmd_gen(args)
        if args.command == "templatize":
            return cmd_templatize(args)
        if args.command == "plan":
            return cmd_plan(args, _load_cfg(args))
        if args.command == "train":
            return cmd_train(args, _load_cfg(args))
        if args.command == "forecast":
            return cmd_forecast(args)
        if args.command == "evaluate":
            return cmd_evaluate(args)
        if args.command == "analyze":
            return cmd_analyze(args, _load_cfg(args))
        if args.command == "monitor":
            return cmd_monitor(args, None)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
