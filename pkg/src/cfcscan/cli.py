"""Batch front end: scan executables, persist corpora, compare statistics,
train and run the classifier.

stdout carries data, stderr carries diagnostics.  In machine-readable
records mode every command is byte-deterministic for identical inputs and
flags: no timestamps, rows sorted by sample id.
"""

from __future__ import annotations

import argparse
import csv
import fnmatch
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .bayes import (
    DEFAULT_ALPHA,
    DEFAULT_MIN_FEATURES,
    TokenMode,
    classify,
    train,
    tokenize,
)
from .disasm import data_in_code_filter, decode_stream, is_rel8
from .entropy import (
    DEFAULT_AVG_THRESHOLD,
    DEFAULT_BLOCK_SIZE,
    DEFAULT_BLOCK_THRESHOLD,
    gate,
)
from .errors import (
    CfcError,
    EmptyCorpusError,
    EmptyImportError,
    DegenerateInputError,
    NoCfcFoundError,
    NotPeError,
    TruncatedError,
    UnsupportedMachineError,
)
from .features import (
    DEFAULT_BAND,
    SectionRecords,
    build_feature_set,
    displacement_sequence,
    exclusivity_report,
)
from .pe import executable_sections, parse_pe
from .stats import STAT_FIELDS, TABLE_ROWS, corpus_correlation, corpus_summary, sample_stats
from . import store

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NO_FEATURES = 2

DEFAULT_MAX_SIZE = 1 << 20  # scan ceiling; mirrors the sub-1MB corpus cut

CORPUS_ROOT_ENV = "CFCSCAN_CORPUS_ROOT"


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


@dataclass
class ScanRow:
    file: str
    status: str                      # "ok" or a skip reason
    sections: int = 0
    passed: int = 0
    cfc: int = 0
    resyncs: int = 0
    filtered: int = 0
    sample_id: str = ""
    feature_set: object = None
    entry_source: str = "native-scan"
    entropy_rows: list = field(default_factory=list)  # (section hex, avg, verdict)


def _corpus_root(manifest_path: Path) -> Path:
    env = os.environ.get(CORPUS_ROOT_ENV)
    return Path(env) if env else Path(manifest_path).parent


def scan_file(path: Path, args) -> ScanRow:
    name = path.name
    for pattern in args.exclude:
        if fnmatch.fnmatch(name, pattern):
            return ScanRow(file=name, status="name-excluded")
    try:
        raw = path.read_bytes()
    except OSError as exc:
        return ScanRow(file=name, status=f"read-error:{exc.__class__.__name__}")
    if len(raw) > args.max_size:
        return ScanRow(file=name, status="too-large")

    if args.input_format == "listing":
        try:
            imp = store.import_listing(raw.decode("utf-8", "replace"))
        except EmptyImportError:
            return ScanRow(file=name, status="empty-import")
        sections = store.listing_sections(imp, source=name, rebase=args.listing_base)
        source = "listing-import"
    else:
        try:
            pe = parse_pe(raw, source=name)
        except NotPeError:
            return ScanRow(file=name, status="not-pe")
        except TruncatedError:
            return ScanRow(file=name, status="truncated")
        except UnsupportedMachineError:
            return ScanRow(file=name, status="unsupported-machine")
        sections = executable_sections(pe)
        source = "native-scan"

    sections = [s for s in sections if s.data]
    if not sections:
        return ScanRow(file=name, status="no-exec-sections")

    row = ScanRow(
        file=name,
        status="ok",
        sections=len(sections),
        sample_id=store.make_sample_id(name, raw),
    )
    block_threshold = math.inf if args.entropy_gate == "avg" else args.entropy_block
    section_records = []
    for sec in sections:
        report = gate(sec, args.entropy_avg, block_threshold, args.entropy_block_size)
        row.entropy_rows.append((sec.name.hex(), report.average_entropy, report.verdict))
        if report.verdict == "packed":
            continue
        row.passed += 1
        decoded = decode_stream(sec)
        row.resyncs += len(decoded.resyncs)
        instructions = list(decoded.instructions)
        if args.utf16_filter != "off":
            instructions, filt = data_in_code_filter(
                instructions, sec.data, policy=args.utf16_filter, min_pairs=args.utf16_min_pairs,
            )
            row.filtered += len(filt.flagged)
        records = [i.cfc for i in instructions if i.cfc is not None]
        if args.cfc_set == "rel8":
            records = [r for r in records if is_rel8(r.opcode)]
        section_records.append(SectionRecords(
            name=sec.name,
            rva=sec.rva,
            entropy=report.average_entropy,
            line_count=len(instructions),
            records=tuple(records),
        ))

    if not section_records:
        row.status = "packed"
        return row
    try:
        fs = build_feature_set(row.sample_id, section_records)
    except NoCfcFoundError:
        row.status = "no-cfc"
        return row
    row.cfc = fs.event_count
    row.feature_set = fs
    row.entry_source = source
    return row


def _gather_files(paths: list[str]) -> list[Path]:
    out = []
    for p in paths:
        path = Path(p)
        if path.is_dir():
            out.extend(sorted(q for q in path.rglob("*") if q.is_file()))
        else:
            out.append(path)
    return sorted(set(out))


def _emit(rows: list[list[str]], header: list[str], fmt: str, footer: list[list[str]] = ()):
    if fmt == "csv":
        writer = csv.writer(sys.stdout)
        writer.writerow(header)
        writer.writerows(rows)
        return
    print("\t".join(header))
    for r in rows:
        print("\t".join(r))
    for f in footer:
        print("\t".join(["#", *f]))


def cmd_scan(args) -> int:
    files = _gather_files(args.paths)
    if not files:
        print("scan: no input files", file=sys.stderr)
        return EXIT_USAGE

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(lambda p: scan_file(p, args), files))
    else:
        results = [scan_file(p, args) for p in files]
    results.sort(key=lambda r: (r.file, r.sample_id))

    entries = []
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        for row in results:
            if row.feature_set is None:
                continue
            digest = row.sample_id.rsplit("@", 1)[-1]
            fname = f"{Path(row.file).stem}.{digest[:12]}.cfcf"
            entry = store.save_feature_set(
                row.feature_set, out_dir / fname,
                entropy_verdict="pass", source=row.entry_source,
            )
            entries.append(store.ManifestEntry(
                sample_id=entry.sample_id,
                file_hash=entry.file_hash,
                path=fname,
                entropy_verdict=entry.entropy_verdict,
                cfc_count=entry.cfc_count,
                source=entry.source,
            ))
        manifest = store.CorpusManifest(corpus_label=args.label, entries=tuple(sorted(
            entries, key=lambda e: e.sample_id)))
        store.save_manifest(manifest, out_dir / "manifest.cfcm")

    header = ["file", "status", "sections", "passed", "cfc", "resyncs", "filtered"]
    table = [
        [r.file, r.status, str(r.sections), str(r.passed), str(r.cfc),
         str(r.resyncs), str(r.filtered)]
        for r in results
    ]
    produced = sum(1 for r in results if r.feature_set is not None)
    skipped = len(results) - produced
    footer = [["files", str(len(results))], ["features", str(produced)], ["skipped", str(skipped)]]
    if args.format == "records":
        print(f"#cfcscan\tscan-report\t{store.FORMAT_VERSION}")
        for r in results:
            for sec_hex, avg, verdict in r.entropy_rows:
                print(f"S\t{r.file}\t{sec_hex}\t{avg!r}\t{verdict}")
        _emit(table, header, "table", footer)
    else:
        _emit(table, header, args.format, footer)
    return EXIT_OK if produced > 0 else EXIT_NO_FEATURES


def _load_corpus_stats(manifest_path: Path, selector: str, signed: bool):
    manifest = store.load_manifest(manifest_path)
    root = _corpus_root(manifest_path)
    samples = []
    for fs in store.manifest_feature_sets(manifest, root):
        seq = displacement_sequence(fs, selector)
        if seq:
            samples.append(sample_stats(seq, signed=signed))
    return manifest.corpus_label, samples


def _fmt_stat(value, fmt: str) -> str:
    if value is None:
        return "undefined"
    return repr(value) if fmt == "records" else f"{value:.2f}"


def cmd_stats(args) -> int:
    columns = []
    for manifest_path in args.manifests:
        label, samples = _load_corpus_stats(Path(manifest_path), args.selector, args.signed)
        if not samples:
            raise EmptyCorpusError(f"{manifest_path}: no samples with CFC events")
        columns.append((label, corpus_summary(samples, label)))

    field_by_row = {row: name for name, row in STAT_FIELDS}
    rows_wanted = [row for _, row in STAT_FIELDS] if args.format == "records" else list(TABLE_ROWS)
    header = ["statistic"] + [label for label, _ in columns]
    table = []
    for row_name in rows_wanted:
        fname = field_by_row[row_name]
        table.append([row_name] + [
            _fmt_stat(summary.averages[fname], args.format) for _, summary in columns
        ])
    footer = [["samples"] + [str(s.sample_count) for _, s in columns]]
    _emit(table, header, "csv" if args.format == "csv" else "table", footer)
    return EXIT_OK


def cmd_compare(args) -> int:
    _, samples_a = _load_corpus_stats(Path(args.corpus_a), args.selector, args.signed)
    _, samples_b = _load_corpus_stats(Path(args.corpus_b), args.selector, args.signed)
    if not samples_a or not samples_b:
        raise EmptyCorpusError("comparison needs samples with CFC events on both sides")

    table = []
    for fname, row_name in STAT_FIELDS:
        va = [getattr(s, fname) for s in samples_a if getattr(s, fname) is not None]
        vb = [getattr(s, fname) for s in samples_b if getattr(s, fname) is not None]
        if not va or not vb:
            table.append([row_name, "undefined", "0", "-"])
            continue
        try:
            res = corpus_correlation(va, vb)
        except DegenerateInputError:
            table.append([row_name, "undefined", str(min(len(va), len(vb))), "-"])
            continue
        p = "-" if res.p_value is None else f"{res.p_value:.6G}"
        table.append([row_name, f"{res.rho:.6f}", str(res.n_pairs), p])
    _emit(table, ["statistic", "rho", "n_pairs", "p_value"], args.format)
    return EXIT_OK


def cmd_ngrams(args) -> int:
    if args.exclusivity:
        a = store.load_histogram(Path(args.exclusivity[0]))
        b = store.load_histogram(Path(args.exclusivity[1]))
        only_a, only_b, shared = exclusivity_report(a.counts, b.counts)
        _emit(
            [[a.label, str(only_a)], [b.label, str(only_b)], ["shared", str(shared)]],
            ["corpus", "ngrams"], args.format,
        )
        return EXIT_OK
    if not args.manifest or not args.out:
        print("ngrams: need MANIFEST and --out (or --exclusivity A B)", file=sys.stderr)
        return EXIT_USAGE
    manifest_path = Path(args.manifest)
    manifest = store.load_manifest(manifest_path)
    counts = store.corpus_ngram_db(
        manifest, args.n, root=_corpus_root(manifest_path), selector=args.selector,
    )
    store.save_histogram(counts, args.n, manifest.corpus_label, Path(args.out),
                         binary=args.binary)
    print(
        f"{len(counts)} distinct {args.n}-grams from {len(manifest.entries)} samples"
        f" -> {args.out}",
        file=sys.stderr,
    )
    return EXIT_OK


def _mode_from_args(args) -> TokenMode:
    if args.mode == "raw":
        return TokenMode.raw()
    if args.mode == "ngram":
        return TokenMode.ngram(args.n)
    return TokenMode.frequency(args.n, args.band[0], args.band[1])


def _corpus_tokens(manifest_path: Path, mode: TokenMode, selector: str):
    manifest = store.load_manifest(manifest_path)
    root = _corpus_root(manifest_path)
    out = []
    for fs in store.manifest_feature_sets(manifest, root):
        out.append((fs.sample_id, tokenize(fs, mode, selector)))
    return manifest.corpus_label, out


def cmd_train(args) -> int:
    mode = _mode_from_args(args)
    _, good = _corpus_tokens(Path(args.good), mode, args.selector)
    _, bad = _corpus_tokens(Path(args.bad), mode, args.selector)
    model = train([t for _, t in good], [t for _, t in bad], alpha=args.alpha, mode=mode)
    store.save_model(model, Path(args.out))
    print(
        f"trained {mode.describe()}: vocab={model.vocab_size}"
        f" good={len(good)} bad={len(bad)} -> {args.out}",
        file=sys.stderr,
    )
    return EXIT_OK


def _classify_inputs(paths: list[str], mode: TokenMode, selector: str):
    """(sample_id, tokens, true label or None) per input feature file or
    manifest; manifest labels goodware/malware carry the truth."""
    label_map = {"goodware": "good", "malware": "bad"}
    out = []
    for p in paths:
        path = Path(p)
        try:
            manifest = store.load_manifest(path)
        except store.StoreError:
            fs = store.load_feature_set(path)
            out.append((fs.sample_id, tokenize(fs, mode, selector), None))
            continue
        truth = label_map.get(manifest.corpus_label)
        for fs in store.manifest_feature_sets(manifest, _corpus_root(path)):
            out.append((fs.sample_id, tokenize(fs, mode, selector), truth))
    return out


def _short_id(sample_id: str) -> str:
    if "@" in sample_id:
        name, digest = sample_id.rsplit("@", 1)
        return f"{name}@{digest[:12]}"
    return sample_id


def cmd_classify(args) -> int:
    model = store.load_model(Path(args.model))
    inputs = _classify_inputs(args.inputs, model.mode, args.selector)
    inputs.sort(key=lambda item: item[0])

    header = ["filename", "prob. good", "prob. bad", "length of data",
              "norm. good", "norm. bad", "label"]
    rows = []
    verdicts = []
    for sample_id, tokens, _ in inputs:
        v = classify(model, tokens, sample_id=sample_id, min_features=args.min_features)
        verdicts.append(v)
        shown = sample_id if args.format == "records" else _short_id(sample_id)
        rows.append([
            shown,
            f"{math.exp(v.log_likelihood_good):.10G}",
            f"{math.exp(v.log_likelihood_bad):.10G}",
            str(v.feature_count),
            f"{v.prob_good:.10f}",
            f"{v.prob_bad:.10f}",
            v.label,
        ])

    footer = []
    if args.evaluate:
        tp = fp = tn = fn = abstained = 0
        for (_, _, truth), v in zip(inputs, verdicts):
            if v.label == "abstain":
                abstained += 1
            elif truth is None:
                continue
            elif v.label == "bad":
                tp, fp = (tp + 1, fp) if truth == "bad" else (tp, fp + 1)
            else:
                tn, fn = (tn + 1, fn) if truth == "good" else (tn, fn + 1)
        footer = [["tp", str(tp)], ["fp", str(fp)], ["tn", str(tn)],
                  ["fn", str(fn)], ["abstained", str(abstained)]]
    _emit(rows, header, "csv" if args.format == "csv" else "table", footer)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cfcscan", description=__doc__)
    parser.add_argument("--version", action="version", version=f"cfcscan {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    scan = sub.add_parser("scan", help="extract CFC features from PE files or listings")
    scan.add_argument("paths", nargs="+", help="files or directories")
    scan.add_argument("--exclude", action="append", default=[], metavar="GLOB",
                      help="skip files whose name matches (repeatable), e.g. 'x86_microsoft*'")
    scan.add_argument("--max-size", type=int, default=DEFAULT_MAX_SIZE,
                      help="per-file byte ceiling (default 1 MiB)")
    scan.add_argument("--input-format", choices=("pe", "listing"), default="pe")
    scan.add_argument("--listing-base", type=lambda s: int(s, 0), default=0,
                      help="base address subtracted from listing addresses")
    scan.add_argument("--entropy-avg", type=float, default=DEFAULT_AVG_THRESHOLD)
    scan.add_argument("--entropy-block", type=float, default=DEFAULT_BLOCK_THRESHOLD)
    scan.add_argument("--entropy-block-size", type=int, default=DEFAULT_BLOCK_SIZE)
    scan.add_argument("--entropy-gate", choices=("both", "avg"), default="both",
                      help="'avg' ignores the highest-block test")
    scan.add_argument("--cfc-set", choices=("rel8", "all"), default="all")
    scan.add_argument("--utf16-filter", choices=("drop", "flag", "off"), default="drop")
    scan.add_argument("--utf16-min-pairs", type=int, default=4)
    scan.add_argument("--out", help="corpus directory for feature files + manifest")
    scan.add_argument("--label", choices=("goodware", "malware", "test"), default="test")
    scan.add_argument("--jobs", type=int, default=1)
    scan.add_argument("--format", choices=("table", "csv", "records"), default="table")
    scan.set_defaults(func=cmd_scan)

    stats_p = sub.add_parser("stats", help="corpus-average displacement statistics")
    stats_p.add_argument("manifests", nargs="+")
    stats_p.add_argument("--selector", default="jcc", choices=("jcc", "all", "rel8", "call"))
    stats_p.add_argument("--signed", action="store_true",
                         help="statistics over signed displacements instead of magnitudes")
    stats_p.add_argument("--format", choices=("table", "csv", "records"), default="table")
    stats_p.set_defaults(func=cmd_stats)

    compare = sub.add_parser("compare", help="rank correlation between two corpora")
    compare.add_argument("corpus_a")
    compare.add_argument("corpus_b")
    compare.add_argument("--selector", default="jcc", choices=("jcc", "all", "rel8", "call"))
    compare.add_argument("--signed", action="store_true")
    compare.add_argument("--format", choices=("table", "csv", "records"), default="table")
    compare.set_defaults(func=cmd_compare)

    ngrams_p = sub.add_parser("ngrams", help="build or compare corpus n-gram databases")
    ngrams_p.add_argument("manifest", nargs="?")
    ngrams_p.add_argument("--n", type=int, default=2)
    ngrams_p.add_argument("--selector", default="jcc", choices=("jcc", "all", "rel8", "call"))
    ngrams_p.add_argument("--out", metavar="HISTOGRAM")
    ngrams_p.add_argument("--binary", action="store_true",
                          help="write the length-prefixed binary layout")
    ngrams_p.add_argument("--exclusivity", nargs=2, metavar=("A", "B"),
                          help="count n-grams exclusive to each histogram and shared")
    ngrams_p.add_argument("--format", choices=("table", "csv", "records"), default="table")
    ngrams_p.set_defaults(func=cmd_ngrams)

    train_p = sub.add_parser("train", help="train the Naive Bayes model")
    train_p.add_argument("--good", required=True, metavar="MANIFEST")
    train_p.add_argument("--bad", required=True, metavar="MANIFEST")
    train_p.add_argument("--mode", choices=("raw", "ngram", "frequency"), default="raw")
    train_p.add_argument("--n", type=int, default=2)
    train_p.add_argument("--band", type=int, nargs=2, default=list(DEFAULT_BAND),
                         metavar=("LO", "HI"))
    train_p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    train_p.add_argument("--selector", default="jcc", choices=("jcc", "all", "rel8", "call"))
    train_p.add_argument("--out", required=True, metavar="MODEL")
    train_p.set_defaults(func=cmd_train)

    classify_p = sub.add_parser("classify", help="classify samples against a model")
    classify_p.add_argument("--model", required=True)
    classify_p.add_argument("inputs", nargs="*", help="feature files or manifests")
    classify_p.add_argument("--min-features", type=int, default=DEFAULT_MIN_FEATURES)
    classify_p.add_argument("--selector", default="jcc", choices=("jcc", "all", "rel8", "call"))
    classify_p.add_argument("--evaluate", action="store_true",
                            help="confusion counts from labeled manifests")
    classify_p.add_argument("--format", choices=("table", "csv", "records"), default="table")
    classify_p.set_defaults(func=cmd_classify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CfcError, OSError) as exc:
        print(f"cfcscan {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
