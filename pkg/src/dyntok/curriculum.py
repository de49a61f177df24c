"""Stage orchestration: alternate entropy-source fitting with vocabulary updates.

Each stage evaluates the current vocabulary (encode, fit or ingest the
entropy source, report BPC) and then applies that stage's phase (expand or
reduce).  A final evaluation-only stage records the last vocabulary, except
when an expansion added nothing, in which case the stage that observed the
stall is already the final record.

Two entropy sources are supported: the built-in n-gram (self-contained, runs
to completion) and external dumps (the run halts at each stage until a
neural trainer drops entropy/nll files into the stage directory).
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field

from .codec import TokenStream, build_trie, encode, load_stream, save_stream
from .entropy import (
    EntropyTrace,
    entropy_trace,
    fit_ngram,
    load_entropy_dump,
    nll_trace,
    save_entropy_dump,
)
from .merge import MergeConfig, find_candidates
from .metrics import BpcReport, bpc_report, load_report, save_report
from .vocab import Vocabulary, add, init_base, load as load_vocab, reduce, save as save_vocab

log = logging.getLogger(__name__)

BUILTIN_SOURCE = "builtin-ngram"
EXTERNAL_SOURCE = "external-dump"


class CurriculumError(ValueError):
    pass


class CurriculumHalt(Exception):
    """External-dump mode: the current stage's entropy files are not there yet."""

    def __init__(self, stage: int):
        self.stage = stage
        super().__init__(f"awaiting external entropy for stage {stage}")


@dataclass(frozen=True)
class Phase:
    kind: str  # "expand" or "reduce"
    amount: int | None = None  # expand: token cap (None -> growth_cap); reduce: target size

    def __post_init__(self):
        if self.kind not in ("expand", "reduce"):
            raise CurriculumError(f"phase kind {self.kind!r} not recognized")
        if self.kind == "reduce" and self.amount is None:
            raise CurriculumError("reduce phase needs a target size")
        if self.amount is not None and self.amount < 1:
            raise CurriculumError("phase amount must be positive")


def parse_phase(text: str) -> Phase:
    kind, sep, amount = text.partition(":")
    return Phase(kind=kind.strip(), amount=int(amount) if sep else None)


def phase_to_str(phase: Phase) -> str:
    return phase.kind if phase.amount is None else f"{phase.kind}:{phase.amount}"


@dataclass(frozen=True)
class CurriculumConfig:
    train_path: str | None = None
    validation_path: str | None = None
    initial_vocab: str | None = None
    phases: tuple[Phase, ...] = ()  # empty -> `iterations` expand phases
    iterations: int = 5
    epsilon: float = 0.3
    growth_cap: int = 3000
    vocab_cap: int = 18000
    max_span_tokens: int = 8
    min_frequency: int = 2
    entropy_source: str = BUILTIN_SOURCE
    order: int = 4
    alpha: float = 0.01
    validation_fraction: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise CurriculumError("iterations must be >= 0")
        if self.entropy_source not in (BUILTIN_SOURCE, EXTERNAL_SOURCE):
            raise CurriculumError(
                f"entropy_source {self.entropy_source!r} not recognized"
            )
        if not 0 < self.validation_fraction < 1:
            raise CurriculumError("validation_fraction must be in (0, 1)")

    def effective_phases(self) -> tuple[Phase, ...]:
        if self.phases:
            return self.phases
        return tuple(Phase("expand") for _ in range(self.iterations))


_CONFIG_SCALARS = (
    "train_path",
    "validation_path",
    "initial_vocab",
    "iterations",
    "epsilon",
    "growth_cap",
    "vocab_cap",
    "max_span_tokens",
    "min_frequency",
    "entropy_source",
    "order",
    "alpha",
    "validation_fraction",
    "seed",
)


def config_to_dict(cfg: CurriculumConfig) -> dict:
    out = {k: getattr(cfg, k) for k in _CONFIG_SCALARS}
    out["phases"] = [phase_to_str(p) for p in cfg.phases]
    return out


def config_from_dict(data: dict) -> CurriculumConfig:
    kwargs = {}
    for key, value in data.items():
        if key == "phases":
            kwargs["phases"] = tuple(parse_phase(p) for p in value)
        elif key in _CONFIG_SCALARS:
            kwargs[key] = value
        else:
            raise CurriculumError(f"unknown config key {key!r}")
    return CurriculumConfig(**kwargs)


@dataclass
class StageRecord:
    stage: int
    vocab_size: int
    train_bpc: float
    validation_bpc: float
    tokens_added: int
    tokens_removed: int
    wall_time_s: float


@dataclass
class CurriculumState:
    stage: int
    vocabulary: Vocabulary
    records: list[StageRecord] = field(default_factory=list)
    val_reports: list[BpcReport] = field(default_factory=list)
    finished: bool = False


def split_validation(corpus: str, fraction: float) -> tuple[str, str]:
    """Final `fraction` of the corpus by character count becomes validation."""
    if len(corpus) < 2:
        raise CurriculumError("corpus too small to split")
    n_val = max(1, min(int(round(len(corpus) * fraction)), len(corpus) - 1))
    return corpus[:-n_val], corpus[-n_val:]


def _load_corpus(cfg: CurriculumConfig) -> tuple[str, str]:
    if cfg.train_path is None:
        raise CurriculumError("config has no train_path")
    with open(cfg.train_path, "r", encoding="utf-8") as f:
        train = f.read()
    if cfg.validation_path is not None:
        with open(cfg.validation_path, "r", encoding="utf-8") as f:
            val = f.read()
        return train, val
    return split_validation(train, cfg.validation_fraction)


def _initial_vocab(cfg: CurriculumConfig, train: str, val: str) -> Vocabulary:
    if cfg.initial_vocab is not None:
        return load_vocab(cfg.initial_vocab)
    # Base alphabet covers the whole corpus so validation encodes strictly.
    return init_base(train + val)


def _encode_pair(voc: Vocabulary, train: str, val: str) -> tuple[TokenStream, TokenStream]:
    trie = build_trie(voc)
    return encode(train, trie, voc), encode(val, trie, voc)


def _builtin_traces(
    voc: Vocabulary,
    train_stream: TokenStream,
    val_stream: TokenStream,
    cfg: CurriculumConfig,
) -> tuple[EntropyTrace, EntropyTrace, EntropyTrace]:
    model = fit_ngram(train_stream, vocab_size=len(voc), order=cfg.order, alpha=cfg.alpha)
    vocab_hash = voc.content_hash()
    return (
        entropy_trace(model, train_stream, vocab_hash=vocab_hash),
        nll_trace(model, train_stream, vocab_hash=vocab_hash),
        nll_trace(model, val_stream, vocab_hash=vocab_hash),
    )


def _apply_phase(
    voc: Vocabulary,
    phase: Phase,
    train_stream: TokenStream,
    ent: EntropyTrace,
    cfg: CurriculumConfig,
) -> tuple[Vocabulary, int, int]:
    """Returns (new vocabulary, tokens added, tokens removed)."""
    if phase.kind == "reduce":
        new_voc = reduce(voc, phase.amount)
        return new_voc, 0, len(voc) - len(new_voc)
    cap = phase.amount if phase.amount is not None else cfg.growth_cap
    room = cfg.vocab_cap - len(voc)
    if room <= 0:
        log.warning("vocab_cap %d reached; expansion skipped", cfg.vocab_cap)
        return add(voc, [], 1), 0, 0
    if cap > room:
        log.warning("vocab_cap %d reached; clamping expansion to %d tokens", cfg.vocab_cap, room)
        cap = room
    merge_cfg = MergeConfig(
        epsilon=cfg.epsilon,
        growth_cap=cap,
        max_span_tokens=cfg.max_span_tokens,
        min_frequency=cfg.min_frequency,
    )
    candidates = find_candidates(train_stream, ent, voc, merge_cfg)
    new_voc = add(voc, candidates, cap)
    return new_voc, len(new_voc) - len(voc), 0


def _stage_dir(run_dir: str, stage: int) -> str:
    return os.path.join(run_dir, f"stage_{stage}")


def _write_stage_inputs(
    run_dir: str,
    stage: int,
    voc: Vocabulary,
    train_stream: TokenStream,
    val_stream: TokenStream,
    train_len: int,
    val_len: int,
) -> None:
    d = _stage_dir(run_dir, stage)
    os.makedirs(d, exist_ok=True)
    save_vocab(voc, os.path.join(d, "vocab.jsonl"))
    save_stream(train_stream, os.path.join(d, "stream.bin"), voc, train_len)
    save_stream(val_stream, os.path.join(d, "val_stream.bin"), voc, val_len)


def _external_traces(
    run_dir: str,
    stage: int,
    voc: Vocabulary,
    train_stream: TokenStream,
    val_stream: TokenStream,
) -> tuple[EntropyTrace, EntropyTrace, EntropyTrace]:
    d = _stage_dir(run_dir, stage)
    paths = {
        "entropy": os.path.join(d, "entropy.bin"),
        "nll": os.path.join(d, "nll.bin"),
        "val_nll": os.path.join(d, "val_nll.bin"),
    }
    if not all(os.path.exists(p) for p in paths.values()):
        raise CurriculumHalt(stage)
    ent = load_entropy_dump(paths["entropy"], train_stream, voc)
    train_nll = load_entropy_dump(paths["nll"], train_stream, voc)
    val_nll = load_entropy_dump(paths["val_nll"], val_stream, voc)
    for name, trace, want in (
        ("entropy.bin", ent, "entropy"),
        ("nll.bin", train_nll, "nll"),
        ("val_nll.bin", val_nll, "nll"),
    ):
        if trace.kind != want:
            raise CurriculumError(f"{name} carries kind {trace.kind!r}, expected {want!r}")
    return ent, train_nll, val_nll


def run_curriculum(
    cfg: CurriculumConfig,
    train_text: str | None = None,
    val_text: str | None = None,
    out_dir: str | None = None,
) -> CurriculumState:
    """Run every stage with the built-in source; artifacts written when out_dir given.

    For the external source this delegates to the on-disk state machine and
    raises CurriculumHalt at the first stage whose dumps are missing.
    """
    if cfg.entropy_source == EXTERNAL_SOURCE:
        if out_dir is None:
            raise CurriculumError("external-dump source needs an output directory")
        init_run_dir(cfg, out_dir, train_text=train_text, val_text=val_text)
        status = None
        while status is None or not status.finished:
            status = curriculum_step(out_dir)
        return load_state(out_dir)

    if train_text is None or val_text is None:
        loaded_train, loaded_val = _load_corpus(cfg)
        train_text = loaded_train if train_text is None else train_text
        val_text = loaded_val if val_text is None else val_text

    voc = _initial_vocab(cfg, train_text, val_text)
    phases = cfg.effective_phases()
    state = CurriculumState(stage=0, vocabulary=voc)

    for stage in range(len(phases) + 1):
        t0 = time.perf_counter()
        train_stream, val_stream = _encode_pair(voc, train_text, val_text)
        ent, train_nll, val_nll = _builtin_traces(voc, train_stream, val_stream, cfg)
        train_report = bpc_report(train_stream, train_nll, voc)
        val_report = bpc_report(val_stream, val_nll, voc)

        added = removed = 0
        last = stage == len(phases)
        if not last:
            new_voc, added, removed = _apply_phase(voc, phases[stage], train_stream, ent, cfg)
        rec = StageRecord(
            stage=stage,
            vocab_size=len(voc),
            train_bpc=train_report.global_bpc,
            validation_bpc=val_report.global_bpc,
            tokens_added=added,
            tokens_removed=removed,
            wall_time_s=time.perf_counter() - t0,
        )
        state.records.append(rec)
        state.val_reports.append(val_report)
        log.info(
            "stage %d: vocab %d, train bpc %.4f, val bpc %.4f, +%d/-%d tokens",
            stage, rec.vocab_size, rec.train_bpc, rec.validation_bpc, added, removed,
        )

        if out_dir is not None:
            _write_stage_inputs(
                out_dir, stage, voc, train_stream, val_stream, len(train_text), len(val_text)
            )
            d = _stage_dir(out_dir, stage)
            save_entropy_dump(ent, os.path.join(d, "entropy.bin"))
            save_entropy_dump(train_nll, os.path.join(d, "nll.bin"))
            save_entropy_dump(val_nll, os.path.join(d, "val_nll.bin"))
            save_report(val_report, os.path.join(d, "metrics.json"))
            save_report(train_report, os.path.join(d, "metrics_train.json"))

        if last or (phases[stage].kind == "expand" and added == 0):
            break
        voc = new_voc
        state.stage = stage + 1

    state.vocabulary = voc
    state.finished = True
    if out_dir is not None:
        _save_run_json(out_dir, cfg, state.records, finished=True, next_stage=state.stage)
    return state


def compute_matched_baseline(
    cfg: CurriculumConfig,
    final_vocab: Vocabulary,
    sizes,
    train_text: str | None = None,
    val_text: str | None = None,
) -> list[StageRecord]:
    """From-scratch single-pass fits at each curriculum size, on prefix slices
    of the final vocabulary, so token identity is controlled across series."""
    if train_text is None or val_text is None:
        train_text, val_text = _load_corpus(cfg)
    records: list[StageRecord] = []
    for i, size in enumerate(sizes):
        t0 = time.perf_counter()
        voc = reduce(final_vocab, size) if size != len(final_vocab) else final_vocab
        train_stream, val_stream = _encode_pair(voc, train_text, val_text)
        _, train_nll, val_nll = _builtin_traces(voc, train_stream, val_stream, cfg)
        train_report = bpc_report(train_stream, train_nll, voc)
        val_report = bpc_report(val_stream, val_nll, voc)
        records.append(
            StageRecord(
                stage=i,
                vocab_size=len(voc),
                train_bpc=train_report.global_bpc,
                validation_bpc=val_report.global_bpc,
                tokens_added=0,
                tokens_removed=0,
                wall_time_s=time.perf_counter() - t0,
            )
        )
        log.info("baseline size %d: val bpc %.4f", len(voc), val_report.global_bpc)
    return records


def _save_run_json(
    run_dir: str,
    cfg: CurriculumConfig,
    records: list[StageRecord],
    finished: bool,
    next_stage: int,
) -> None:
    payload = {
        "config": config_to_dict(cfg),
        "records": [vars(r) for r in records],
        "finished": finished,
        "next_stage": next_stage,
    }
    with open(os.path.join(run_dir, "run.json"), "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def load_state(run_dir: str) -> CurriculumState:
    """Rehydrate a CurriculumState from a run directory's artifacts."""
    run = load_run_json(run_dir)
    records: list[StageRecord] = run["records"]
    stage = run["next_stage"]
    voc = load_vocab(os.path.join(_stage_dir(run_dir, stage), "vocab.jsonl"))
    val_reports = []
    for rec in records:
        path = os.path.join(_stage_dir(run_dir, rec.stage), "metrics.json")
        if os.path.exists(path):
            val_reports.append(load_report(path))
    return CurriculumState(
        stage=stage,
        vocabulary=voc,
        records=records,
        val_reports=val_reports,
        finished=run["finished"],
    )


def load_run_json(run_dir: str) -> dict:
    path = os.path.join(run_dir, "run.json")
    if not os.path.exists(path):
        raise CurriculumError(f"{run_dir} has no run.json")
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    data["records"] = [StageRecord(**r) for r in data.get("records", [])]
    return data


def init_run_dir(
    cfg: CurriculumConfig,
    run_dir: str,
    train_text: str | None = None,
    val_text: str | None = None,
) -> None:
    """Create run.json and stage_0 inputs; no-op when run.json already exists."""
    os.makedirs(run_dir, exist_ok=True)
    if os.path.exists(os.path.join(run_dir, "run.json")):
        return
    if train_text is None or val_text is None:
        train_text, val_text = _load_corpus(cfg)
    voc = _initial_vocab(cfg, train_text, val_text)
    train_stream, val_stream = _encode_pair(voc, train_text, val_text)
    _write_stage_inputs(run_dir, 0, voc, train_stream, val_stream, len(train_text), len(val_text))
    _save_run_json(run_dir, cfg, [], finished=False, next_stage=0)


@dataclass
class StepStatus:
    stage: int
    finished: bool
    vocab_size: int


def curriculum_step(run_dir: str) -> StepStatus:
    """Advance the on-disk state machine by one stage.

    Raises CurriculumHalt when the external source's dumps for the current
    stage are not present yet; this is the file handshake an external
    trainer drives.
    """
    run = load_run_json(run_dir)
    cfg = config_from_dict(run["config"])
    records: list[StageRecord] = run["records"]
    stage = run["next_stage"]
    d = _stage_dir(run_dir, stage)
    if run["finished"]:
        voc = load_vocab(os.path.join(d, "vocab.jsonl"))
        return StepStatus(stage=stage, finished=True, vocab_size=len(voc))

    t0 = time.perf_counter()
    voc = load_vocab(os.path.join(d, "vocab.jsonl"))
    train_stream, _ = load_stream(os.path.join(d, "stream.bin"), voc)
    val_stream, _ = load_stream(os.path.join(d, "val_stream.bin"), voc)

    if cfg.entropy_source == EXTERNAL_SOURCE:
        ent, train_nll, val_nll = _external_traces(run_dir, stage, voc, train_stream, val_stream)
    else:
        ent, train_nll, val_nll = _builtin_traces(voc, train_stream, val_stream, cfg)
        save_entropy_dump(ent, os.path.join(d, "entropy.bin"))
        save_entropy_dump(train_nll, os.path.join(d, "nll.bin"))
        save_entropy_dump(val_nll, os.path.join(d, "val_nll.bin"))

    train_report = bpc_report(train_stream, train_nll, voc)
    val_report = bpc_report(val_stream, val_nll, voc)
    save_report(val_report, os.path.join(d, "metrics.json"))
    save_report(train_report, os.path.join(d, "metrics_train.json"))

    phases = cfg.effective_phases()
    added = removed = 0
    last = stage == len(phases)
    if not last:
        new_voc, added, removed = _apply_phase(voc, phases[stage], train_stream, ent, cfg)
    records.append(
        StageRecord(
            stage=stage,
            vocab_size=len(voc),
            train_bpc=train_report.global_bpc,
            validation_bpc=val_report.global_bpc,
            tokens_added=added,
            tokens_removed=removed,
            wall_time_s=time.perf_counter() - t0,
        )
    )

    finished = last or (not last and phases[stage].kind == "expand" and added == 0)
    next_stage = stage if finished else stage + 1
    if not finished:
        train_text, val_text = _load_corpus(cfg)
        new_train, new_val = _encode_pair(new_voc, train_text, val_text)
        _write_stage_inputs(
            run_dir, next_stage, new_voc, new_train, new_val, len(train_text), len(val_text)
        )
    _save_run_json(run_dir, cfg, records, finished=finished, next_stage=next_stage)
    log.info(
        "stage %d: vocab %d, val bpc %.4f, +%d/-%d tokens%s",
        stage, len(voc), val_report.global_bpc, added, removed,
        " (finished)" if finished else "",
    )
    return StepStatus(stage=stage, finished=finished, vocab_size=len(voc))
