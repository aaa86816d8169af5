"""Command-line driver.

Subcommands:
    run       execute a scenario file, print its report, write the bundle
    replay    classify a CAR-Hacking-format CSV offline, print metrics
    serve     start the network control service
    train     fit the reference float MLP on a labeled trace
    quantise  int4-quantise a trained float model
    eval      score a model (or a predictions file) against a labeled trace
    report    render a previously written report bundle

Exit codes: 0 success, 1 scenario checks failed, 2 usage error,
3 validation/data error.  All commands are deterministic under explicit
``--seed``; nothing reads hidden entropy.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import labels
from .attack import load_replay
from .detector import (
    CALIBRATIONS,
    classify,
    line_rate_budget_us,
    records_from_trace,
    windows_from_records,
)
from .engine import DEFAULT_BITRATE, Timebase
from .errors import CanLabError
from .monitor import MetricsReport, compute_metrics
from .qnn import (
    float_infer,
    load_float_model,
    load_model,
    quantise_model,
    save_float_model,
    save_model,
    train_reference,
)
from .scenario import load_scenario, run_scenario
from .service import DEFAULT_PORT, ControlService

STRATEGY_FLAGS = {"ecu": ("EcuCoupled",),
                  "controller": ("ControllerCoupled",),
                  "both": ("EcuCoupled", "ControllerCoupled")}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except CanLabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="canlab",
        description="Deterministic CAN security testbed simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a scenario file")
    p.add_argument("scenario", help="scenario JSON document")
    p.add_argument("--out", help="directory for the report bundle")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--bitrate", type=int, help="override the bus bitrate")
    _format_flag(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("replay", help="classify a recorded trace offline")
    p.add_argument("trace", help="CAR-Hacking-format CSV")
    p.add_argument("--model", required=True, help="quantised model JSON")
    p.add_argument("--strategy", choices=sorted(STRATEGY_FLAGS),
                   default="both")
    p.add_argument("--calibration", default="paper-artix7")
    p.add_argument("--bitrate", type=int, default=DEFAULT_BITRATE)
    p.add_argument("--attack-type",
                   help="label applied to rows marked injected (T)")
    _format_flag(p)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("serve", help="start the control service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=DEFAULT_PORT)
    p.add_argument("--static", help="directory served to browsers")
    p.add_argument("--scenario", help="scenario to load at startup")
    p.add_argument("--realtime", action="store_true",
                   help="pace virtual time against the wall clock")
    p.add_argument("--speed", type=float, default=1.0,
                   help="realtime pacing factor")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("train", help="fit the reference float MLP")
    p.add_argument("corpus", help="labeled CAR-Hacking-format CSV")
    p.add_argument("--out", required=True, help="float model output path")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--holdout", type=float, default=0.3,
                   help="fraction of windows reserved for evaluation")
    p.add_argument("--bitrate", type=int, default=DEFAULT_BITRATE)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("quantise", help="int4-quantise a float model")
    p.add_argument("model", help="float model JSON from `train`")
    p.add_argument("--out", required=True, help="quantised model output path")
    p.set_defaults(func=cmd_quantise)

    p = sub.add_parser("eval", help="score predictions against a labeled trace")
    p.add_argument("trace", help="labeled CAR-Hacking-format CSV")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--model", help="quantised model JSON")
    group.add_argument("--predictions",
                       help="CSV of `index,label` rows to score instead")
    p.add_argument("--write-predictions",
                   help="write the model's verdicts as `index,label` rows")
    p.add_argument("--bitrate", type=int, default=DEFAULT_BITRATE)
    _format_flag(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="render a report bundle directory")
    p.add_argument("bundle", help="directory written by `run --out`")
    _format_flag(p)
    p.set_defaults(func=cmd_report)

    return parser


def _format_flag(p: argparse.ArgumentParser):
    p.add_argument("--format", choices=("table", "records"), default="table",
                   help="human table or machine-readable JSON records")


def _emit(doc: dict):
    print(json.dumps(doc, sort_keys=True))


# ---------------------------------------------------------------------- run

def cmd_run(args) -> int:
    config = load_scenario(args.scenario)
    if args.seed is not None:
        config.seed = args.seed
    if args.bitrate is not None:
        config.bitrate = args.bitrate
    result = run_scenario(config, out_dir=args.out)
    report = result.report

    if args.format == "records":
        _emit(report)
        return 0 if result.passed else 1

    print(f"scenario {report['name']}   seed {report['seed']}   "
          f"bitrate {report['bitrate']}   stop {report['stop_time_us']:.0f} us")
    print(f"frames {report['frames']}   "
          + "   ".join(f"{k} {v}" for k, v in
                       sorted(report["frames_by_label"].items())))
    if report["ids"] is not None:
        ids = report["ids"]
        print(f"ids {ids['strategy']} verdicts {ids['verdicts']}   "
              + "   ".join(f"{k} {v}" for k, v in
                           sorted(ids["verdicts_by_label"].items())))
    for a in report["anomalies"]:
        print(f"anomaly at {a['at_us']:.0f} us: {a['message']}")
    for c in report["checks"]:
        mark = "pass" if c["pass"] else "FAIL"
        print(f"[{mark}] {c['check']}: {c['detail']}")
    print("result:", "PASS" if result.passed else "FAIL")
    if args.out:
        print(f"bundle written to {args.out}")
    return 0 if result.passed else 1


# ------------------------------------------------------------------- replay

def _metrics_table(metrics: MetricsReport) -> str:
    names = labels.CLASSES
    head = "truth \\ predicted".rjust(18) + "".join(f"{n:>10}" for n in names)
    lines = [head]
    for i, n in enumerate(names):
        row = "".join(f"{int(v):>10}" for v in metrics.matrix[i])
        lines.append(f"{n:>18}{row}")
    lines.append(f"total {metrics.total}   accuracy {metrics.accuracy:.4%}   "
                 f"misclassified {metrics.misclassified}   "
                 f"benign false positives {metrics.false_positives}")
    lines.append(f"{'class':>10} {'precision':>10} {'recall':>10} {'f1':>10}")
    for n in names:
        lines.append(f"{n:>10} {metrics.precision[n]:>10.4%} "
                     f"{metrics.recall[n]:>10.4%} {metrics.f1[n]:>10.4%}")
    return "\n".join(lines)


def _latency_stats(verdicts, budget_us: float) -> dict:
    lat = [v.latency.elapsed_us for v in verdicts]
    return {
        "count": len(lat),
        "min_us": min(lat),
        "mean_us": sum(lat) / len(lat),
        "max_us": max(lat),
        "budget_us": budget_us,
        "within_budget": sum(1 for v in lat if v <= budget_us) / len(lat),
    }


def cmd_replay(args) -> int:
    trace = load_replay(args.trace, default_attack=args.attack_type)
    model = load_model(args.model)
    tb = Timebase(args.bitrate)
    records = records_from_trace(trace, tb)
    budget = line_rate_budget_us(tb)
    strategies = STRATEGY_FLAGS[args.strategy]

    runs = {}
    for strategy in strategies:
        profile = CALIBRATIONS[args.calibration][strategy]
        runs[strategy] = classify(model, records, profile, tb)

    first = runs[strategies[0]]
    metrics = compute_metrics([v.truth for v in first],
                              [v.label for v in first])
    stats = {s: _latency_stats(v, budget) for s, v in runs.items()}

    if args.format == "records":
        _emit({"trace": args.trace, "frames": len(records),
               "metrics": metrics.to_dict(), "latency": stats})
        return 0

    print(f"trace {args.trace}   frames {len(records)}   "
          f"verdicts {len(first)}")
    print(_metrics_table(metrics))
    print(f"{'strategy':>18} {'count':>8} {'min_us':>9} {'mean_us':>9} "
          f"{'max_us':>9} {'budget':>8} {'within':>8}")
    for s in strategies:
        st = stats[s]
        print(f"{s:>18} {st['count']:>8} {st['min_us']:>9.1f} "
              f"{st['mean_us']:>9.1f} {st['max_us']:>9.1f} "
              f"{st['budget_us']:>8.0f} {st['within_budget']:>8.2%}")
    if len(strategies) == 2:
        ratio = stats["EcuCoupled"]["mean_us"] / \
            stats["ControllerCoupled"]["mean_us"]
        print(f"latency ratio EcuCoupled / ControllerCoupled: {ratio:.2f}x")
    return 0


# -------------------------------------------------------------------- serve

def cmd_serve(args) -> int:
    svc = ControlService(host=args.host, port=args.port,
                         static_dir=args.static, realtime=args.realtime,
                         speed=args.speed).start()
    try:
        if args.scenario:
            loaded = svc._submit("load_scenario", {"path": args.scenario})
            print(f"loaded scenario {loaded['name']}")
        print(f"control endpoint  tcp://{args.host}:{svc.port}")
        print(f"browser endpoint  ws://{args.host}:{svc.http_port}/ws")
        if args.static:
            print(f"console           http://{args.host}:{svc.http_port}/")
        print("press Ctrl-C to stop")
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        print("shutting down")
        return 0
    finally:
        svc.close()


# -------------------------------------------------------- train / quantise

def cmd_train(args) -> int:
    trace = load_replay(args.corpus)
    records = records_from_trace(trace, Timebase(args.bitrate))
    feats, labs = windows_from_records(records)
    if not (0.0 < args.holdout < 1.0):
        raise CanLabError(f"holdout must be in (0, 1), got {args.holdout}")

    rng = np.random.default_rng(args.seed)
    perm = rng.permutation(len(feats))
    cut = int(len(feats) * (1.0 - args.holdout))
    train_idx, held_idx = perm[:cut], perm[cut:]
    layers = train_reference(feats[train_idx], labs[train_idx],
                             epochs=args.epochs, seed=args.seed)

    hits = sum(int(np.argmax(float_infer(layers, f)) == t)
               for f, t in zip(feats[held_idx], labs[held_idx]))
    accuracy = hits / len(held_idx)
    meta = {"trained_on": str(args.corpus), "train_seed": args.seed,
            "epochs": args.epochs, "holdout": args.holdout,
            "windows": int(len(feats)),
            "held_out_accuracy": round(accuracy, 6)}
    save_float_model(layers, args.out, meta=meta)
    print(f"trained on {len(train_idx)} windows, "
          f"held-out accuracy {accuracy:.4%}")
    print(f"float model written to {args.out}")
    return 0


def cmd_quantise(args) -> int:
    layers, meta = load_float_model(args.model)
    model, report = quantise_model(layers)
    model.meta = dict(meta, quantised_from=str(args.model))
    save_model(model, args.out)
    for i, entry in enumerate(report):
        print(f"layer {i}: scale {entry['scale']:.6g}   "
              f"max weight error {entry['max_weight_error']:.6g}")
    print(f"quantised model written to {args.out}")
    return 0


# --------------------------------------------------------------------- eval

def cmd_eval(args) -> int:
    trace = load_replay(args.trace)
    tb = Timebase(args.bitrate)
    records = records_from_trace(trace, tb)

    if args.predictions:
        pairs = _read_predictions(args.predictions)
        truth = [records[i].label for i, _ in pairs]
        predicted = [p for _, p in pairs]
        metrics = compute_metrics(truth, predicted)
    else:
        model = load_model(args.model)
        profile = CALIBRATIONS["paper-artix7"]["ControllerCoupled"]
        verdicts = classify(model, records, profile, tb)
        offset = len(records) - len(verdicts)
        if args.write_predictions:
            with open(args.write_predictions, "w") as fh:
                for i, v in enumerate(verdicts):
                    fh.write(f"{i + offset},{v.label}\n")
        metrics = compute_metrics([v.truth for v in verdicts],
                                  [v.label for v in verdicts])

    if args.format == "records":
        _emit({"trace": args.trace, "metrics": metrics.to_dict()})
    else:
        print(_metrics_table(metrics))
    return 0


def _read_predictions(path) -> list[tuple[int, str]]:
    pairs = []
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                idx, label = line.split(",")
                pairs.append((int(idx), label.strip()))
            except ValueError:
                raise CanLabError(
                    f"{path}:{ln}: expected `index,label`, got {line!r}")
    if not pairs:
        raise CanLabError(f"{path}: no prediction rows")
    return pairs


# ------------------------------------------------------------------- report

def cmd_report(args) -> int:
    bundle = Path(args.bundle)
    report_path = bundle / "report.json"
    if not report_path.is_file():
        raise FileNotFoundError(f"{report_path} (not a report bundle)")
    report = json.loads(report_path.read_text())

    if args.format == "records":
        _emit(report)
        return 0

    print(f"scenario {report['name']}   seed {report['seed']}   "
          f"result {'PASS' if report['passed'] else 'FAIL'}")
    print(f"frames {report['frames']}   "
          + "   ".join(f"{k} {v}" for k, v in
                       sorted(report["frames_by_label"].items())))
    for a in report["anomalies"]:
        print(f"anomaly at {a['at_us']:.0f} us: {a['message']}")
    for c in report["checks"]:
        mark = "pass" if c["pass"] else "FAIL"
        print(f"[{mark}] {c['check']}: {c['detail']}")

    metrics_path = bundle / "metrics.json"
    if metrics_path.is_file():
        doc = json.loads(metrics_path.read_text())
        print(f"ids accuracy {doc['accuracy']:.4%}   "
              f"misclassified {doc['misclassified']}   "
              f"benign false positives {doc['false_positives']}")
    latency_path = bundle / "latency.json"
    if latency_path.is_file():
        doc = json.loads(latency_path.read_text())
        print(f"latency {doc['strategy']}: mean {doc['mean_us']:.1f} us   "
              f"max {doc['max_us']:.1f} us   budget {doc['budget_us']:.0f} us "
              f"({doc['within_budget']:.0%} within)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
