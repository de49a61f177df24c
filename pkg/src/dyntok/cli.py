"""Command-line surface for the tokenization engine.

Exit codes: 0 success, 1 usage error (bad flags, missing files), 2 data or
validation error (malformed/mismatched inputs).  Every failure prints one
`error: ...` line to stderr so scripts can grep it.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

from .codec import (
    CodecError,
    build_trie,
    decode,
    encode,
    encode_batched,
    load_stream,
    save_stream,
)
from .curriculum import (
    CurriculumConfig,
    CurriculumError,
    CurriculumHalt,
    compute_matched_baseline,
    config_from_dict,
    curriculum_step,
    init_run_dir,
    load_run_json,
    run_curriculum,
)
from .entropy import (
    EntropyError,
    entropy_trace,
    fit_ngram,
    load_entropy_dump,
    load_model,
    nll_trace,
    save_entropy_dump,
    save_model,
)
from .merge import MergeConfig, MergeError, find_candidates, save_candidates
from .metrics import (
    MetricsError,
    emit_plot_data,
    fit_slope,
    improvement_table,
    load_report,
)
from .vocab import VocabularyError, add, init_base, load as load_vocab, reduce, save as save_vocab

log = logging.getLogger("dyntok")

_DATA_ERRORS = (
    VocabularyError,
    CodecError,
    EntropyError,
    MergeError,
    MetricsError,
    CurriculumError,
    json.JSONDecodeError,
)


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on usage errors; this CLI reserves 2
    for data problems, so usage failures are remapped to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _read_text(path: str) -> str:
    with open(path, "r", encoding="utf-8") as f:
        return f.read()


def _cmd_init_vocab(args) -> int:
    corpus = _read_text(args.input)
    voc = init_base(corpus)
    save_vocab(voc, args.out)
    print(f"wrote {args.out}: {len(voc)} base tokens")
    return 0


def _cmd_encode(args) -> int:
    voc = load_vocab(args.vocab)
    text = _read_text(args.input)
    trie = build_trie(voc)
    if args.chunk:
        stream = encode_batched(text, trie, voc, args.chunk)
    else:
        stream = encode(text, trie, voc)
    save_stream(stream, args.out, voc, len(text))
    print(f"wrote {args.out}: {len(stream)} tokens over {len(text)} chars")
    return 0


def _cmd_decode(args) -> int:
    voc = load_vocab(args.vocab)
    stream, _ = load_stream(args.input, voc)
    text = decode(stream, voc)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(text)
    print(f"wrote {args.out}: {len(text)} chars")
    return 0


def _cmd_fit_ngram(args) -> int:
    voc = load_vocab(args.vocab)
    stream, _ = load_stream(args.stream, voc)
    model = fit_ngram(stream, vocab_size=len(voc), order=args.order, alpha=args.alpha)
    save_model(model, args.out)
    print(f"wrote {args.out}: order {model.order}, {len(model.counts)} contexts")
    return 0


def _cmd_entropy(args) -> int:
    voc = load_vocab(args.vocab)
    stream, _ = load_stream(args.stream, voc)
    model = load_model(args.model)
    vocab_hash = voc.content_hash()
    if args.kind == "entropy":
        trace = entropy_trace(model, stream, vocab_hash=vocab_hash)
    else:
        trace = nll_trace(model, stream, vocab_hash=vocab_hash)
    save_entropy_dump(trace, args.out, mode=args.mode)
    print(f"wrote {args.out}: {len(trace)} {args.kind} values")
    return 0


def _cmd_merge_step(args) -> int:
    voc = load_vocab(args.vocab)
    stream, _ = load_stream(args.stream, voc)
    trace = load_entropy_dump(args.entropy, stream, voc)
    cfg = MergeConfig(
        epsilon=args.epsilon,
        growth_cap=args.cap,
        max_span_tokens=args.max_span,
        min_frequency=args.min_frequency,
    )
    candidates = find_candidates(stream, trace, voc, cfg)[: args.cap]
    save_candidates(candidates, args.out)
    print(f"wrote {args.out}: {len(candidates)} candidates")
    if args.out_vocab:
        grown = add(voc, candidates, args.cap)
        save_vocab(grown, args.out_vocab)
        print(f"wrote {args.out_vocab}: {len(grown)} tokens")
    return 0


def _cmd_reduce(args) -> int:
    voc = load_vocab(args.vocab)
    shrunk = reduce(voc, args.target)
    save_vocab(shrunk, args.out)
    print(f"wrote {args.out}: {len(shrunk)} tokens")
    return 0


def _load_config(path: str) -> dict:
    if path.endswith(".json"):
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    with open(path, "rb") as f:
        return tomllib.load(f)


_OVERRIDE_FLAGS = (
    ("train", "train_path"),
    ("validation", "validation_path"),
    ("iterations", "iterations"),
    ("epsilon", "epsilon"),
    ("growth_cap", "growth_cap"),
    ("vocab_cap", "vocab_cap"),
    ("entropy_source", "entropy_source"),
    ("order", "order"),
    ("alpha", "alpha"),
    ("seed", "seed"),
)


def _config_from_args(args) -> CurriculumConfig:
    data = _load_config(args.config) if args.config else {}
    for flag, key in _OVERRIDE_FLAGS:
        value = getattr(args, flag, None)
        if value is not None:
            data[key] = value
    if getattr(args, "phases", None):
        data["phases"] = [p.strip() for p in args.phases.split(",") if p.strip()]
    return config_from_dict(data)


def _cmd_curriculum_run(args) -> int:
    cfg = _config_from_args(args)
    state = run_curriculum(cfg, out_dir=args.out)
    final = state.records[-1]
    print(
        f"run finished: {len(state.records)} stage records, "
        f"final vocab {len(state.vocabulary)}, val bpc {final.validation_bpc:.4f}"
    )
    return 0


def _cmd_curriculum_step(args) -> int:
    if args.config and not os.path.exists(os.path.join(args.state, "run.json")):
        init_run_dir(config_from_dict(_load_config(args.config)), args.state)
        print(f"initialized {args.state}: stage 0 inputs written")
        return 0
    status = curriculum_step(args.state)
    if status.finished:
        print(f"run finished: vocab {status.vocab_size}")
    else:
        print(f"stage {status.stage} complete: vocab {status.vocab_size}")
    return 0


def _cmd_curriculum_baseline(args) -> int:
    run = load_run_json(args.run)
    if not run["finished"]:
        raise CurriculumError("curriculum run is not finished; baseline needs its final vocabulary")
    cfg = config_from_dict(run["config"])
    records = run["records"]
    final_stage = run["next_stage"]
    final_vocab = load_vocab(os.path.join(args.run, f"stage_{final_stage}", "vocab.jsonl"))
    sizes = [r.vocab_size for r in records]
    baseline = compute_matched_baseline(cfg, final_vocab, sizes)
    out = args.out or os.path.join(args.run, "baseline.json")
    with open(out, "w", encoding="utf-8") as f:
        json.dump({"records": [vars(r) for r in baseline]}, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"wrote {out}: {len(baseline)} baseline records")
    return 0


def _cmd_curriculum(args) -> int:
    return args.curriculum_func(args)


def _cmd_report(args) -> int:
    run = load_run_json(args.run)
    records = run["records"]
    if not records:
        raise CurriculumError("run has no stage records yet")
    os.makedirs(args.out, exist_ok=True)

    series = {"curriculum": [(r.vocab_size, r.validation_bpc) for r in records]}
    baseline_path = os.path.join(args.run, "baseline.json")
    baseline_records = None
    if os.path.exists(baseline_path):
        with open(baseline_path, "r", encoding="utf-8") as f:
            baseline_records = json.load(f)["records"]
        series["baseline"] = [
            (r["vocab_size"], r["validation_bpc"]) for r in baseline_records
        ]

    stage_reports = []
    for rec in records:
        path = os.path.join(args.run, f"stage_{rec.stage}", "metrics.json")
        if os.path.exists(path):
            stage_reports.append((rec.stage, load_report(path)))
    length_report = stage_reports[-1][1] if stage_reports else None

    written = emit_plot_data(
        args.out,
        size_series=series,
        length_report=length_report,
        stage_reports=stage_reports,
    )

    summary: dict = {"records": [vars(r) for r in records]}
    distinct_sizes = {r.vocab_size for r in records}
    if len(distinct_sizes) >= 2:
        summary["curriculum_slope"] = vars(fit_slope(series["curriculum"]))
    if baseline_records is not None:
        if len({r["vocab_size"] for r in baseline_records}) >= 2:
            summary["baseline_slope"] = vars(fit_slope(series["baseline"]))
        if len(baseline_records) == len(records):
            summary["improvement_percent"] = improvement_table(
                [r.validation_bpc for r in records],
                [r["validation_bpc"] for r in baseline_records],
            )
    summary_path = os.path.join(args.out, "summary.json")
    with open(summary_path, "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    written.append(summary_path)
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="dyntok",
        description="Entropy-guided dynamic tokenization engine.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=os.cpu_count(),
        help="worker threads for parallelizable steps (this build runs them inline)",
    )
    parser.add_argument("--quiet", action="store_true", help="suppress per-stage log lines")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def _sp(name, help_text):
        p = sub.add_parser(
            name, help=help_text, formatter_class=argparse.ArgumentDefaultsHelpFormatter
        )
        return p

    p = _sp("init-vocab", "build the base character vocabulary from a corpus")
    p.add_argument("--input", required=True, help="corpus text file")
    p.add_argument("--out", required=True, help="vocabulary JSONL to write")
    p.set_defaults(func=_cmd_init_vocab)

    p = _sp("encode", "tokenize a text file into a stream dump")
    p.add_argument("--vocab", required=True, help="vocabulary JSONL")
    p.add_argument("--input", required=True, help="text file to encode")
    p.add_argument("--out", required=True, help="stream dump to write")
    p.add_argument("--chunk", type=int, default=0, help="chunk size in chars; 0 = unbatched")
    p.set_defaults(func=_cmd_encode)

    p = _sp("decode", "reconstruct text from a stream dump")
    p.add_argument("--vocab", required=True, help="vocabulary JSONL")
    p.add_argument("--input", required=True, help="stream dump")
    p.add_argument("--out", required=True, help="text file to write")
    p.set_defaults(func=_cmd_decode)

    p = _sp("fit-ngram", "fit the add-alpha n-gram source on a stream")
    p.add_argument("--vocab", required=True, help="vocabulary JSONL")
    p.add_argument("--stream", required=True, help="stream dump")
    p.add_argument("--order", type=int, default=4, help="n-gram order")
    p.add_argument("--alpha", type=float, default=0.01, help="additive smoothing constant")
    p.add_argument("--out", required=True, help="model file to write")
    p.set_defaults(func=_cmd_fit_ngram)

    p = _sp("entropy", "compute an entropy or surprisal trace for a stream")
    p.add_argument("--model", required=True, help="fitted n-gram model file")
    p.add_argument("--vocab", required=True, help="vocabulary JSONL")
    p.add_argument("--stream", required=True, help="stream dump")
    p.add_argument("--kind", choices=("entropy", "nll"), default="entropy", help="trace kind")
    p.add_argument("--mode", choices=("packed", "text"), default="packed", help="dump encoding")
    p.add_argument("--out", required=True, help="entropy dump to write")
    p.set_defaults(func=_cmd_entropy)

    p = _sp("merge-step", "scan a stream + entropy trace for merge candidates")
    p.add_argument("--vocab", required=True, help="vocabulary JSONL")
    p.add_argument("--stream", required=True, help="stream dump")
    p.add_argument("--entropy", required=True, help="entropy dump (kind entropy)")
    p.add_argument("--epsilon", type=float, default=0.3, help="entropy threshold in bits")
    p.add_argument("--cap", type=int, default=3000, help="max candidates kept")
    p.add_argument("--max-span", type=int, default=8, help="max span length in tokens")
    p.add_argument("--min-frequency", type=int, default=2, help="min span occurrence count")
    p.add_argument("--out", required=True, help="candidate JSONL to write")
    p.add_argument("--out-vocab", default=None, help="also write the expanded vocabulary here")
    p.set_defaults(func=_cmd_merge_step)

    p = _sp("reduce", "shrink a vocabulary to its first n tokens")
    p.add_argument("--vocab", required=True, help="vocabulary JSONL")
    p.add_argument("--target", type=int, required=True, help="target size")
    p.add_argument("--out", required=True, help="vocabulary JSONL to write")
    p.set_defaults(func=_cmd_reduce)

    p = _sp("curriculum", "run or advance a vocabulary curriculum")
    csub = p.add_subparsers(dest="curriculum_command", required=True, parser_class=_Parser)

    pr = csub.add_parser(
        "run",
        help="run all stages (built-in source runs to completion)",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    pr.add_argument("--config", required=True, help="TOML or JSON config file")
    pr.add_argument("--out", required=True, help="run directory for artifacts")
    pr.add_argument("--train", default=None, help="override train corpus path")
    pr.add_argument("--validation", default=None, help="override validation corpus path")
    pr.add_argument("--iterations", type=int, default=None, help="override iteration count")
    pr.add_argument("--epsilon", type=float, default=None, help="override entropy threshold")
    pr.add_argument("--growth-cap", dest="growth_cap", type=int, default=None,
                    help="override per-stage growth cap")
    pr.add_argument("--vocab-cap", dest="vocab_cap", type=int, default=None,
                    help="override total vocabulary cap")
    pr.add_argument("--entropy-source", dest="entropy_source", default=None,
                    choices=("builtin-ngram", "external-dump"), help="override entropy source")
    pr.add_argument("--order", type=int, default=None, help="override n-gram order")
    pr.add_argument("--alpha", type=float, default=None, help="override smoothing constant")
    pr.add_argument("--seed", type=int, default=None, help="override seed echoed in run.json")
    pr.add_argument("--phases", default=None,
                    help="override phase list, e.g. 'expand,expand:2000,reduce:92'")
    pr.set_defaults(curriculum_func=_cmd_curriculum_run, func=_cmd_curriculum)

    ps = csub.add_parser(
        "step",
        help="advance an on-disk run by one stage (external-source handshake)",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    ps.add_argument("--state", required=True, help="run directory")
    ps.add_argument("--config", default=None,
                    help="config file; initializes the run directory when given and absent")
    ps.set_defaults(curriculum_func=_cmd_curriculum_step, func=_cmd_curriculum)

    pb = csub.add_parser(
        "baseline",
        help="compute-matched baseline over a finished run's stage sizes",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    pb.add_argument("--run", required=True, help="finished run directory")
    pb.add_argument("--out", default=None, help="output JSON (default: <run>/baseline.json)")
    pb.set_defaults(curriculum_func=_cmd_curriculum_baseline, func=_cmd_curriculum)

    p = _sp("report", "emit plot-ready CSVs and a summary from a run directory")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--out", required=True, help="output directory for CSVs")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s")
    try:
        return args.func(args)
    except CurriculumHalt as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, IsADirectoryError, NotADirectoryError) as exc:
        name = getattr(exc, "filename", None) or exc
        print(f"error: cannot open {name}", file=sys.stderr)
        return 1
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
