"""Command line front end for the trainer harness.

Exit codes follow the engine's convention: 0 on success, 1 when an input
file cannot be opened or the invocation is malformed, 2 when inputs parse
but violate a contract (hash mismatches, malformed interchange files).
"""

from __future__ import annotations

import argparse
import logging
import sys

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .compare import run_comparison
from .expand import expand_checkpoint
from .export import export_dump
from .formats import FormatError, read_stream, read_vocab
from .model import HarnessError, ModelConfig, full_preset, reduced_preset
from .train import fresh_checkpoint, train


def _preset(name: str) -> ModelConfig:
    if name == "full":
        return full_preset()
    if name == "reduced":
        return reduced_preset()
    raise HarnessError(f"preset {name!r} not recognized")


def _cmd_train(args) -> int:
    vocab = read_vocab(args.vocab)
    stream = read_stream(args.stream, vocab)
    if args.init:
        ckpt = load_checkpoint(args.init)
    else:
        ckpt = fresh_checkpoint(_preset(args.preset), vocab, seed=args.seed, stage=args.stage)
    losses = train(
        ckpt, vocab, stream, args.steps,
        lr=args.lr, batch_size=args.batch_size, seed=args.seed, log_every=args.log_every,
    )
    save_checkpoint(ckpt, args.out)
    last = f", final loss {losses[-1]:.4f}" if losses else ""
    print(f"trained {args.steps} steps on {len(stream)} tokens{last}; wrote {args.out}.pt")
    return 0


def _cmd_expand(args) -> int:
    old_vocab = read_vocab(args.old_vocab)
    new_vocab = read_vocab(args.vocab)
    sample = read_stream(args.sample, old_vocab)
    ckpt = load_checkpoint(args.checkpoint)
    ckpt, report = expand_checkpoint(
        ckpt, old_vocab, new_vocab, sample, occurrences=args.occurrences
    )
    save_checkpoint(ckpt, args.out)
    print(
        f"expanded {len(old_vocab)} -> {len(new_vocab)} rows "
        f"({report.sampled} from context, {report.fallback} fallback); wrote {args.out}.pt"
    )
    return 0


def _cmd_export(args) -> int:
    vocab = read_vocab(args.vocab)
    stream = read_stream(args.stream, vocab)
    ckpt = load_checkpoint(args.checkpoint)
    values = export_dump(ckpt, vocab, stream, args.kind, args.out, mode=args.mode)
    print(f"wrote {args.out}: {len(values)} {args.kind} values")
    return 0


def _cmd_compare(args) -> int:
    result = run_comparison(
        _preset(args.preset),
        args.corpus,
        args.out,
        stages=args.stages,
        steps_per_stage=args.steps,
        growth_cap=args.growth_cap,
        min_frequency=args.min_frequency,
        epsilon=args.epsilon,
        validation_fraction=args.validation_fraction,
        seed=args.seed,
        lr=args.lr,
        batch_size=args.batch_size,
        dump_mode=args.dump_mode,
        baseline_scope=args.baseline,
        occurrences=args.occurrences,
    )
    for p in result.curriculum:
        print(f"curriculum stage {p.stage}: vocab {p.vocab_size}, val bpc {p.validation_bpc:.4f}")
    for p in result.baseline:
        print(f"baseline   size {p.vocab_size}: val bpc {p.validation_bpc:.4f}")
    print(f"plots in {result.plots_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dyntok-harness",
        description="transformer trainer harness for the dyntok engine",
    )
    parser.add_argument("--quiet", action="store_true", help="suppress progress log lines")
    sub = parser.add_subparsers(dest="command", required=True)

    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("train", help="train a model on an encoded stream", formatter_class=fmt)
    p.add_argument("--vocab", required=True, help="vocabulary JSONL")
    p.add_argument("--stream", required=True, help="stream dump encoded under --vocab")
    p.add_argument("--steps", type=int, required=True, help="optimizer steps")
    p.add_argument("--out", required=True, help="checkpoint stem to write")
    p.add_argument("--init", default=None, help="checkpoint stem to continue from")
    p.add_argument("--preset", default="reduced", choices=("reduced", "full"),
                   help="model preset when starting fresh")
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stage", type=int, default=0, help="stage recorded in the manifest")
    p.add_argument("--log-every", type=int, default=50)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("expand", help="grow a checkpoint to a larger vocabulary",
                       formatter_class=fmt)
    p.add_argument("--checkpoint", required=True, help="checkpoint stem to grow")
    p.add_argument("--old-vocab", required=True, help="vocabulary the checkpoint is bound to")
    p.add_argument("--vocab", required=True, help="extended vocabulary JSONL")
    p.add_argument("--sample", required=True, help="stream under the old vocab for span lookup")
    p.add_argument("--occurrences", type=int, default=1,
                   help="span occurrences averaged per new token")
    p.add_argument("--out", required=True, help="checkpoint stem to write")
    p.set_defaults(func=_cmd_expand)

    p = sub.add_parser("export", help="export an entropy or nll dump", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True, help="checkpoint stem")
    p.add_argument("--vocab", required=True, help="vocabulary JSONL")
    p.add_argument("--stream", required=True, help="stream dump to trace")
    p.add_argument("--kind", choices=("entropy", "nll"), default="entropy")
    p.add_argument("--mode", choices=("packed", "text"), default="packed")
    p.add_argument("--out", required=True, help="dump path to write")
    p.set_defaults(func=_cmd_export)

    p = sub.add_parser("compare", help="curriculum vs compute-matched baseline",
                       formatter_class=fmt)
    p.add_argument("--corpus", required=True, help="training corpus text file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--preset", default="reduced", choices=("reduced", "full"))
    p.add_argument("--stages", type=int, default=3, help="vocabulary growth stages")
    p.add_argument("--steps", type=int, default=400, help="optimizer steps per stage")
    p.add_argument("--growth-cap", type=int, default=50, help="max tokens added per stage")
    p.add_argument("--min-frequency", type=int, default=20)
    p.add_argument("--epsilon", type=float, default=0.3, help="entropy threshold in bits")
    p.add_argument("--validation-fraction", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=24)
    p.add_argument("--dump-mode", choices=("packed", "text"), default="packed")
    p.add_argument("--baseline", choices=("all", "final"), default="all",
                   help="baseline at every stage size or only the final one")
    p.add_argument("--occurrences", type=int, default=1)
    p.set_defaults(func=_cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s"
    )
    try:
        return args.func(args)
    except (FileNotFoundError, IsADirectoryError, NotADirectoryError) as exc:
        name = getattr(exc, "filename", None) or exc
        print(f"error: cannot open {name}", file=sys.stderr)
        return 1
    except (FormatError, HarnessError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
