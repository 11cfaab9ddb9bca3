"""Command-line surface: classify, evaluate, bank, synth.

Exit codes are a contract: for ``classify``, 0 means the alarm was
judged false, 1 true, and anything above 1 is an error; ``bank``
reports too few clean beats as 3. Reports and verdicts print as JSON
so downstream tooling never parses prose.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

from .alarm_logic import DTW_METHODS, METHODS, TestConfig, classify_alarm, detect_annotations
from .beat_banks import BankSet, bank_novelty_stats, extract_self_bank, load_bank_dir, save_bank
from .beats import import_annotations
from .dtw import WarpParams, corpus_from_records, load_corpus_cache, save_corpus_cache
from .errors import AlarmSentinelError, InsufficientCleanBeats
from .evaluation import per_arrhythmia_report, train_test_split
from .record_io import Arrhythmia, ChannelKind, load_record, load_manifest
from .synthkit import generate_suite


def _fail(message: str, code: int = 2) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _config_from(args) -> TestConfig:
    if getattr(args, "config", None):
        return TestConfig.from_file(args.config)
    return TestConfig()


def _warp_from(args) -> WarpParams | None:
    radius = getattr(args, "radius", None)
    return WarpParams(radius) if radius is not None else None


def _annotations_for(record, directory: str | None):
    """Detector output, overridden per channel by files in a directory.

    Channel ``i`` of record ``name`` is read from ``<name>.ch<i>.txt``
    when that file exists.
    """
    annotations = detect_annotations(record)
    if directory:
        for i in range(record.n_channels):
            path = Path(directory) / f"{record.name}.ch{i}.txt"
            if path.exists():
                annotations[i] = import_annotations(path, record, channel=i)
    return annotations


def _resolve_workers(requested: int | None) -> int:
    workers = requested if requested else min(8, os.cpu_count() or 1)
    cap = os.environ.get("ALARM_SENTINEL_THREADS")
    if cap:
        workers = min(workers, max(1, int(cap)))
    return max(1, workers)


def cmd_classify(args) -> int:
    config = _config_from(args)
    banks = load_bank_dir(args.bank_dir) if args.bank_dir else None
    if args.method == "dtw-vbank" and banks is None:
        return _fail("--method dtw-vbank requires --bank-dir")
    corpus = None
    if args.method == "dtw-full":
        if args.corpus_cache:
            corpus = load_corpus_cache(args.corpus_cache, lead=args.lead)
        elif args.train_manifest:
            manifest = load_manifest(args.train_manifest)
            labelled = []
            # the corpus cache stores no class column, so keep the corpus
            # VT-only here just like evaluate does
            for entry in manifest:
                if entry.arrhythmia is not Arrhythmia.VTACH:
                    continue
                if entry.truth is None:
                    return _fail(f"training manifest row without a label: {entry.record}")
                labelled.append((load_record(entry.record), entry.truth))
            corpus = corpus_from_records(labelled, lead=args.lead, skip_errors=True)
            if args.save_corpus_cache:
                save_corpus_cache(corpus, args.save_corpus_cache)
        else:
            return _fail("--method dtw-full requires --corpus-cache or --train-manifest")

    record = load_record(args.record)
    annotations = _annotations_for(record, args.annotations)
    verdict = classify_alarm(
        record,
        method=args.method,
        config=config,
        banks=banks,
        corpus=corpus,
        annotations=annotations,
        warp=_warp_from(args),
        lead=args.lead,
    )
    print(json.dumps(verdict.to_dict(), indent=2))
    return 1 if verdict.is_true_alarm else 0


def _metric_cell(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.3f}"


def _print_summary(report, n_records: int, n_failed: int, method: str) -> None:
    print(f"method {method}: {n_records} records, {n_failed} failed")
    header = f"{'class':<26}{'tp':>4}{'tn':>4}{'fp':>4}{'fn':>4}   sens   spec    ppv    npv     f1  score"
    print(header)
    rows = list(report.per_arrhythmia.items()) + [(None, report.overall)]
    for arrhythmia, row in rows:
        name = arrhythmia.value if arrhythmia is not None else "overall"
        c = row.counts
        cells = [row.sensitivity, row.specificity, row.ppv, row.npv, row.f1, row.challenge_score]
        print(f"{name:<26}{c.tp:>4}{c.tn:>4}{c.fp:>4}{c.fn:>4} " + " ".join(f"{_metric_cell(v):>6}" for v in cells))


def _report_csv(report) -> str:
    lines = ["class,tp,tn,fp,fn,sensitivity,specificity,ppv,npv,f1,challenge_score"]
    rows = list(report.per_arrhythmia.items()) + [(None, report.overall)]
    for arrhythmia, row in rows:
        name = arrhythmia.value if arrhythmia is not None else "overall"
        c = row.counts
        cells = [row.sensitivity, row.specificity, row.ppv, row.npv, row.f1, row.challenge_score]
        text = ",".join("" if v is None else f"{v:.6f}" for v in cells)
        lines.append(f"{name},{c.tp},{c.tn},{c.fp},{c.fn},{text}")
    return "\n".join(lines) + "\n"


def cmd_evaluate(args) -> int:
    config = _config_from(args)
    manifest = load_manifest(args.manifest)
    unknown = [e.record for e in manifest if e.truth is None]
    if unknown:
        return _fail(f"{len(unknown)} manifest rows have unknown labels (first: {unknown[0]})")
    rows = list(manifest.entries)
    if not rows:
        return _fail("manifest is empty")

    banks = load_bank_dir(args.bank_dir) if args.bank_dir else None
    if args.method == "dtw-vbank" and banks is None:
        return _fail("--method dtw-vbank requires --bank-dir")

    corpus = None
    split_info = None
    if args.method in DTW_METHODS:
        rows = [e for e in rows if e.arrhythmia is Arrhythmia.VTACH]
        if not rows:
            return _fail("no ventricular tachycardia rows for a DTW method")
        if args.split:
            train_paths = {e.record for e in load_manifest(args.split)}
            train = [e for e in rows if e.record in train_paths]
            test = [e for e in rows if e.record not in train_paths]
        else:
            train, test = train_test_split(rows, seed=args.split_seed)
        if not test:
            return _fail("train/test split left no test records")
        if args.method == "dtw-full":
            if args.corpus_cache:
                corpus = load_corpus_cache(args.corpus_cache, lead=args.lead)
            else:
                labelled = [(load_record(e.record), e.truth) for e in train]
                corpus = corpus_from_records(labelled, lead=args.lead, skip_errors=True)
            if len(corpus) == 0:
                return _fail("training corpus is empty")
            if args.save_corpus_cache:
                save_corpus_cache(corpus, args.save_corpus_cache)
        split_info = {"seed": None if args.split else args.split_seed, "train": len(train), "test": len(test)}
        rows = test

    warp = _warp_from(args)

    def adjudicate(entry):
        started = time.perf_counter()
        try:
            record = load_record(entry.record)
            annotations = _annotations_for(record, args.annotations)
            verdict = classify_alarm(
                record, method=args.method, config=config, banks=banks,
                corpus=corpus, annotations=annotations, warp=warp, lead=args.lead,
            )
        except AlarmSentinelError as exc:
            return {"record": entry.record, "arrhythmia": entry.arrhythmia.value, "error": str(exc)}
        latency_ms = (time.perf_counter() - started) * 1000.0
        return {
            "record": entry.record,
            "arrhythmia": entry.arrhythmia.value,
            "truth": "true_alarm" if entry.truth else "false_alarm",
            "latency_ms": latency_ms,
            **verdict.to_dict(),
        }

    workers = _resolve_workers(args.workers)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(adjudicate, rows))
    else:
        results = [adjudicate(e) for e in rows]

    failed = [r for r in results if "error" in r]
    ok = [r for r in results if "error" not in r]
    for r in failed:
        print(f"warning: {r['record']}: {r['error']}", file=sys.stderr)
    if not ok:
        return _fail("every record failed to classify")

    triples = [
        (Arrhythmia(r["arrhythmia"]), r["decision"] == "true_alarm", r["truth"] == "true_alarm")
        for r in ok
    ]
    report = per_arrhythmia_report(triples)
    latencies = [r["latency_ms"] for r in ok]
    payload = {
        "method": args.method,
        "lead": args.lead,
        "config": asdict(config),
        "split": split_info,
        "records": results,
        "metrics": report.to_dict(),
        "timing": {"max_ms": max(latencies), "mean_ms": sum(latencies) / len(latencies)},
    }
    Path(args.out).write_text(json.dumps(payload, indent=2) + "\n")
    _print_summary(report, len(results), len(failed), args.method)
    print(f"report written to {args.out}")
    if args.csv:
        Path(args.csv).write_text(_report_csv(report))
    if args.assert_latency_ms is not None and max(latencies) > args.assert_latency_ms:
        return _fail(f"latency budget exceeded: {max(latencies):.1f} ms > {args.assert_latency_ms} ms")
    return 0


def cmd_bank(args) -> int:
    if args.bank_cmd == "build-self":
        record = load_record(args.record)
        annotations = _annotations_for(record, args.annotations)
        try:
            lead_idx = record.channel_index(args.lead)
        except AlarmSentinelError:
            ecg = record.channels_of_kind(ChannelKind.ECG)
            if not ecg:
                return _fail(f"record {record.name} has no ECG channel")
            lead_idx = ecg[0]
        annotation = annotations[lead_idx]
        if annotation is None:
            return _fail(f"no beats found on channel {args.lead}")
        try:
            bank = extract_self_bank(record, annotation)
        except InsufficientCleanBeats as exc:
            print(f"error: {exc} (found {exc.found})", file=sys.stderr)
            return 3
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        paths = save_bank(bank, out, prefix=record.name)
        print(f"wrote {len(paths)} beat files to {out}")
        return 0

    if args.bank_cmd == "inspect":
        bank_set = load_bank_dir(args.bank_dir)
        bank = bank_set.standard if len(bank_set.standard) else bank_set.ventricular
        stats = bank_novelty_stats(bank)
        print(f"beats: {len(bank)} ({bank.kind.value}), ventricular files: {len(bank_set.ventricular)}, "
              f"standard files: {len(bank_set.standard)}")
        print(f"mu_min={stats.mu_min:.6f} sigma_min={stats.sigma_min:.6f} "
              f"mu_kl={stats.mu_kl:.6f} sigma_kl={stats.sigma_kl:.6f}")
        return 0

    return _fail(f"unknown bank sub-command {args.bank_cmd!r}")


def cmd_synth(args) -> int:
    manifest_path = generate_suite(args.out, seed=args.seed, per_class=args.per_class)
    print(f"suite written, manifest at {manifest_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="alarmsentinel", description="False-arrhythmia-alarm adjudication")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--method", choices=METHODS, default="improved")
        p.add_argument("--config", help="key = value file overriding test thresholds")
        p.add_argument("--bank-dir", help="directory of beat files (V/N labels)")
        p.add_argument("--annotations", help="directory of <record>.ch<i>.txt annotation files")
        p.add_argument("--corpus-cache", help="binary corpus cache for dtw-full")
        p.add_argument("--save-corpus-cache", help="write the built corpus cache here")
        p.add_argument("--lead", default="II", help="lead for single-lead DTW methods")
        p.add_argument("--radius", type=int, help="warping band radius in samples")

    c = sub.add_parser("classify", help="adjudicate one record")
    c.add_argument("record", help="path to the record header")
    add_common(c)
    c.add_argument("--train-manifest", help="manifest to build a dtw-full corpus from")
    c.set_defaults(fn=cmd_classify)

    e = sub.add_parser("evaluate", help="run a manifest and report metrics")
    e.add_argument("--manifest", required=True)
    add_common(e)
    e.add_argument("--out", default="report.json", help="report JSON path")
    e.add_argument("--csv", help="also write a per-class metrics CSV")
    e.add_argument("--split", help="manifest listing the training records (DTW methods)")
    e.add_argument("--split-seed", type=int, default=2015, help="seed for the 2:1 train/test split")
    e.add_argument("--workers", type=int, help="worker threads (capped by ALARM_SENTINEL_THREADS)")
    e.add_argument("--assert-latency-ms", type=float, help="fail if any record takes longer")
    e.set_defaults(fn=cmd_evaluate)

    b = sub.add_parser("bank", help="build or inspect beat banks")
    bank_sub = b.add_subparsers(dest="bank_cmd", required=True)
    bs = bank_sub.add_parser("build-self", help="extract a patient's own beat bank")
    bs.add_argument("--record", required=True)
    bs.add_argument("--out", required=True)
    bs.add_argument("--lead", default="II")
    bs.add_argument("--annotations", help="directory of annotation files")
    bs.set_defaults(fn=cmd_bank)
    bi = bank_sub.add_parser("inspect", help="print novelty statistics of a bank directory")
    bi.add_argument("--bank-dir", required=True)
    bi.set_defaults(fn=cmd_bank)

    s = sub.add_parser("synth", help="generate the synthetic suite")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--per-class", type=int, default=10)
    s.set_defaults(fn=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except AlarmSentinelError as exc:
        return _fail(str(exc))
    except OSError as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
