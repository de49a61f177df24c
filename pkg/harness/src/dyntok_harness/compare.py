"""Curriculum-versus-baseline comparison driven through the engine CLI.

The engine owns the vocabulary loop; the harness owns the model. They meet
only on disk: the engine halts with exit code 2 and "awaiting external
entropy for stage k" on stderr, the harness trains on that stage's files
and writes the three dumps, and the engine's next step consumes them.

The baseline is compute-matched: for each curriculum stage size a fresh
model is trained from scratch on that stage's stream for the same total
number of optimizer steps the curriculum had consumed by then. The size-0
baseline therefore repeats the curriculum's first stage exactly and the
two series open from the same point.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import shutil
import subprocess
import time
from dataclasses import dataclass, field

from .checkpoint import Checkpoint, save_checkpoint
from .expand import expand_checkpoint
from .export import bits_per_char, stream_bits
from .formats import StreamFile, VocabFile, read_stream, read_vocab, write_dump
from .model import HarnessError, ModelConfig
from .train import fresh_checkpoint, train

log = logging.getLogger("dyntok_harness.compare")

HALT_MARK = "awaiting external entropy for stage"
FINISH_MARK = "run finished"


@dataclass
class StagePoint:
    stage: int
    vocab_size: int
    train_bpc: float
    validation_bpc: float
    wall_time_s: float = 0.0


@dataclass
class ComparisonResult:
    run_dir: str
    plots_dir: str
    curriculum: list[StagePoint] = field(default_factory=list)
    baseline: list[StagePoint] = field(default_factory=list)
    group_matrix: dict[tuple[int, int], float] = field(default_factory=dict)


def find_engine() -> str:
    """Absolute path of the engine CLI, or a hard error telling how to get it."""
    path = shutil.which("dyntok")
    if path is None:
        raise HarnessError(
            "engine CLI 'dyntok' not found on PATH; install the tokenization "
            "engine package (pip install <engine checkout>) and re-run"
        )
    return path


def _step(engine: str, run_dir: str, config: str | None = None):
    cmd = [engine, "--quiet", "curriculum", "step", "--state", run_dir]
    if config is not None:
        cmd += ["--config", config]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    return proc.returncode, proc.stdout, proc.stderr


def _stage_from_halt(stderr: str) -> int:
    try:
        return int(stderr.rsplit("stage", 1)[1].strip())
    except (IndexError, ValueError) as exc:
        raise HarnessError(f"unparseable halt message from engine: {stderr!r}") from exc


def run_comparison(
    cfg: ModelConfig,
    corpus_path,
    out_dir,
    *,
    stages: int = 3,
    steps_per_stage: int = 400,
    growth_cap: int = 50,
    min_frequency: int = 20,
    epsilon: float = 0.3,
    vocab_cap: int = 18000,
    max_span_tokens: int = 8,
    validation_fraction: float = 0.05,
    seed: int = 0,
    lr: float = 1e-3,
    batch_size: int = 24,
    dump_mode: str = "packed",
    baseline_scope: str = "all",
    occurrences: int = 1,
    eval_batch_windows: int = 32,
) -> ComparisonResult:
    """Run the full comparison; returns both series at harness precision.

    Artifacts land under ``out_dir``: the engine run directory (stage
    inputs, dumps, per-stage model checkpoints), a neural ``baseline.json``
    in the engine's schema, and plot-ready CSVs emitted by the engine's
    report command.
    """
    if baseline_scope not in ("all", "final"):
        raise HarnessError(f"baseline_scope {baseline_scope!r} not recognized")
    engine = find_engine()
    out_dir = str(out_dir)
    run_dir = os.path.join(out_dir, "run")
    plots_dir = os.path.join(out_dir, "plots")
    if os.path.exists(os.path.join(run_dir, "run.json")):
        raise HarnessError(f"{run_dir} already holds a curriculum run")
    os.makedirs(run_dir, exist_ok=True)

    engine_cfg = {
        "train_path": str(corpus_path),
        "entropy_source": "external-dump",
        "iterations": stages,
        "epsilon": epsilon,
        "growth_cap": growth_cap,
        "vocab_cap": vocab_cap,
        "max_span_tokens": max_span_tokens,
        "min_frequency": min_frequency,
        "validation_fraction": validation_fraction,
        "seed": seed,
    }
    cfg_path = os.path.join(out_dir, "engine_config.json")
    with open(cfg_path, "w", encoding="utf-8") as f:
        json.dump(engine_cfg, f, indent=2, sort_keys=True)
        f.write("\n")

    code, out, err = _step(engine, run_dir, cfg_path)
    if code != 0:
        raise HarnessError(f"engine init failed (exit {code}): {err.strip() or out.strip()}")

    result = ComparisonResult(run_dir=run_dir, plots_dir=plots_dir)
    ckpt: Checkpoint | None = None
    prev_vocab: VocabFile | None = None
    prev_stream: StreamFile | None = None

    while True:
        code, out, err = _step(engine, run_dir)
        if code == 0:
            if FINISH_MARK in out:
                break
            continue
        if code != 2 or HALT_MARK not in err:
            raise HarnessError(f"engine step failed (exit {code}): {err.strip()}")
        stage = _stage_from_halt(err)
        t0 = time.perf_counter()
        d = os.path.join(run_dir, f"stage_{stage}")
        vocab = read_vocab(os.path.join(d, "vocab.jsonl"))
        train_stream = read_stream(os.path.join(d, "stream.bin"), vocab)
        val_stream = read_stream(os.path.join(d, "val_stream.bin"), vocab)

        if stage == 0:
            ckpt = fresh_checkpoint(cfg, vocab, seed=seed)
        else:
            assert ckpt is not None and prev_vocab is not None and prev_stream is not None
            ckpt, rep = expand_checkpoint(
                ckpt, prev_vocab, vocab, prev_stream, occurrences=occurrences
            )
            log.info(
                "stage %d: grew %d -> %d rows (%d sampled, %d fallback)",
                stage, len(prev_vocab), len(vocab), rep.sampled, rep.fallback,
            )
        train(
            ckpt, vocab, train_stream, steps_per_stage,
            lr=lr, batch_size=batch_size, seed=seed + 1000 * stage,
        )
        train_nll, val_nll = _export_stage(
            ckpt, vocab, train_stream, val_stream, d, dump_mode, eval_batch_windows
        )
        save_checkpoint(ckpt, os.path.join(d, "model"))
        point = StagePoint(
            stage=stage,
            vocab_size=len(vocab),
            train_bpc=bits_per_char(train_nll, train_stream.text_length),
            validation_bpc=bits_per_char(val_nll, val_stream.text_length),
            wall_time_s=time.perf_counter() - t0,
        )
        result.curriculum.append(point)
        log.info(
            "stage %d: vocab %d, val bpc %.4f (%.1fs)",
            stage, point.vocab_size, point.validation_bpc, point.wall_time_s,
        )
        prev_vocab, prev_stream = vocab, train_stream

    picks = result.curriculum if baseline_scope == "all" else result.curriculum[-1:]
    for point in picks:
        result.baseline.append(
            _baseline_point(
                cfg, run_dir, point.stage, (point.stage + 1) * steps_per_stage,
                seed=seed, lr=lr, batch_size=batch_size,
                eval_batch_windows=eval_batch_windows,
            )
        )

    with open(os.path.join(run_dir, "baseline.json"), "w", encoding="utf-8") as f:
        records = [
            {
                "stage": p.stage,
                "vocab_size": p.vocab_size,
                "train_bpc": p.train_bpc,
                "validation_bpc": p.validation_bpc,
                "tokens_added": 0,
                "tokens_removed": 0,
                "wall_time_s": p.wall_time_s,
            }
            for p in result.baseline
        ]
        json.dump({"records": records}, f, indent=2, sort_keys=True)
        f.write("\n")

    proc = subprocess.run(
        [engine, "--quiet", "report", "--run", run_dir, "--out", plots_dir],
        capture_output=True, text=True,
    )
    if proc.returncode != 0:
        raise HarnessError(f"engine report failed: {proc.stderr.strip()}")
    result.group_matrix = _read_group_matrix(os.path.join(plots_dir, "bpc_by_group_stage.csv"))
    return result


def _export_stage(ckpt, vocab, train_stream, val_stream, stage_dir, mode, batch_windows):
    """Write the three dumps the engine expects; returns (train nll, val nll)."""
    ent, nll = stream_bits(ckpt.model, train_stream.ids, batch_windows=batch_windows)
    _, val_nll = stream_bits(ckpt.model, val_stream.ids, batch_windows=batch_windows)
    write_dump(os.path.join(stage_dir, "entropy.bin"), ent, "entropy", vocab.sha256, mode=mode)
    write_dump(os.path.join(stage_dir, "nll.bin"), nll, "nll", vocab.sha256, mode=mode)
    write_dump(os.path.join(stage_dir, "val_nll.bin"), val_nll, "nll", vocab.sha256, mode=mode)
    return nll, val_nll


def _baseline_point(
    cfg, run_dir, stage, total_steps, *, seed, lr, batch_size, eval_batch_windows
) -> StagePoint:
    t0 = time.perf_counter()
    d = os.path.join(run_dir, f"stage_{stage}")
    vocab = read_vocab(os.path.join(d, "vocab.jsonl"))
    train_stream = read_stream(os.path.join(d, "stream.bin"), vocab)
    val_stream = read_stream(os.path.join(d, "val_stream.bin"), vocab)
    ckpt = fresh_checkpoint(cfg, vocab, seed=seed)
    train(
        ckpt, vocab, train_stream, total_steps,
        lr=lr, batch_size=batch_size, seed=seed + 1000 * stage,
    )
    _, train_nll = stream_bits(ckpt.model, train_stream.ids, batch_windows=eval_batch_windows)
    _, val_nll = stream_bits(ckpt.model, val_stream.ids, batch_windows=eval_batch_windows)
    point = StagePoint(
        stage=stage,
        vocab_size=len(vocab),
        train_bpc=bits_per_char(train_nll, train_stream.text_length),
        validation_bpc=bits_per_char(val_nll, val_stream.text_length),
        wall_time_s=time.perf_counter() - t0,
    )
    log.info(
        "baseline size %d (%d steps): val bpc %.4f (%.1fs)",
        point.vocab_size, total_steps, point.validation_bpc, point.wall_time_s,
    )
    return point


def _read_group_matrix(path) -> dict[tuple[int, int], float]:
    """CSV rows (group, stage, bpc) -> {(group, stage): bpc}."""
    matrix: dict[tuple[int, int], float] = {}
    if not os.path.exists(path):
        return matrix
    with open(path, "r", encoding="utf-8", newline="") as f:
        for row in csv.DictReader(f):
            matrix[(int(row["group"]), int(row["stage"]))] = float(row["bpc"])
    return matrix
