"""Mergeable-span detection over (stream, entropy trace) pairs.

A span qualifies when every position after its first is strictly below the
previous position's entropy and strictly below the threshold; the first
position carries no constraint.  Only maximal spans are emitted: each scan
window extends rightward until the predicate fails, then the next window
starts after the span, so one predictable region yields one candidate
instead of a pile of sub-spans.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

from .codec import TokenStream
from .entropy import EntropyTrace
from .vocab import Vocabulary


class MergeError(ValueError):
    pass


@dataclass(frozen=True)
class MergeConfig:
    epsilon: float = 0.3
    growth_cap: int = 3000
    max_span_tokens: int = 8
    min_frequency: int = 2

    def __post_init__(self):
        if self.epsilon <= 0:
            raise MergeError("epsilon must be positive")
        if self.growth_cap < 1:
            raise MergeError("growth_cap must be >= 1")
        if self.max_span_tokens < 2:
            raise MergeError("max_span_tokens must be >= 2")
        if self.min_frequency < 1:
            raise MergeError("min_frequency must be >= 1")


@dataclass(frozen=True)
class MergeCandidate:
    component_ids: tuple[int, ...]
    surface: str
    frequency: int


def is_mergeable(entropies: Sequence[float], epsilon: float) -> bool:
    """True iff entropies after the first are strictly decreasing and < epsilon."""
    if len(entropies) < 2:
        raise MergeError("span too short")
    prev = entropies[0]
    for h in entropies[1:]:
        if not (h < prev and h < epsilon):
            return False
        prev = h
    return True


def _check_alignment(stream: TokenStream, trace: EntropyTrace) -> None:
    if len(trace) != len(stream):
        raise MergeError(
            f"trace has {len(trace)} values but stream has {len(stream)} tokens"
        )


def scan_spans(
    stream: TokenStream, trace: EntropyTrace, cfg: MergeConfig
) -> dict[tuple[int, ...], int]:
    """Occurrence counts of maximal mergeable id-spans, by incremental extension."""
    _check_alignment(stream, trace)
    ids = stream.ids
    vals = trace.values.tolist()
    eps = cfg.epsilon
    max_span = cfg.max_span_tokens
    spans: dict[tuple[int, ...], int] = {}
    n = len(ids)
    i = 0
    while i < n - 1:
        j = i
        while (
            j + 1 < n
            and j + 1 - i < max_span
            and vals[j + 1] < vals[j]
            and vals[j + 1] < eps
        ):
            j += 1
        if j > i:
            span = ids[i : j + 1]
            spans[span] = spans.get(span, 0) + 1
            i = j + 1
        else:
            i += 1
    return spans


def _aggregate_by_surface(
    spans: dict[tuple[int, ...], int], vocab: Vocabulary
) -> dict[str, tuple[tuple[int, ...], int]]:
    """Surface-keyed map: total frequency plus the most frequent id variant."""
    out: dict[str, tuple[tuple[int, ...], int, int]] = {}
    for span, freq in spans.items():
        surface = "".join(vocab.tokens[t].surface for t in span)
        held = out.get(surface)
        if held is None:
            out[surface] = (span, freq, freq)
        else:
            best_span, best_freq, total = held
            if freq > best_freq or (freq == best_freq and span < best_span):
                best_span, best_freq = span, freq
            out[surface] = (best_span, best_freq, total + freq)
    return {s: (span, total) for s, (span, _, total) in out.items()}


def rank_candidates(candidates: list[MergeCandidate]) -> list[MergeCandidate]:
    """Frequency descending, then shorter surface, then lexicographic."""
    return sorted(candidates, key=lambda c: (-c.frequency, len(c.surface), c.surface))


def find_candidates(
    stream: TokenStream,
    trace: EntropyTrace,
    vocab: Vocabulary,
    cfg: MergeConfig,
) -> list[MergeCandidate]:
    """Ranked merge candidates from maximal spans in one scan of the stream."""
    spans = scan_spans(stream, trace, cfg)
    merged = _aggregate_by_surface(spans, vocab)
    candidates = [
        MergeCandidate(component_ids=span, surface=surface, frequency=total)
        for surface, (span, total) in merged.items()
        if total >= cfg.min_frequency and surface not in vocab.surfaces
    ]
    return rank_candidates(candidates)


def verify_candidates_bruteforce(
    stream: TokenStream,
    trace: EntropyTrace,
    cfg: MergeConfig,
    vocab: Vocabulary,
) -> list[MergeCandidate]:
    """Slow oracle: every window length tested through is_mergeable directly.

    Mirrors find_candidates' output as an unranked set; used by differential
    tests, kept free of the incremental-extension shortcut.
    """
    _check_alignment(stream, trace)
    ids = stream.ids
    vals = trace.values.tolist()
    n = len(ids)
    spans: dict[tuple[int, ...], int] = {}
    i = 0
    while i < n - 1:
        best = 0
        for length in range(2, cfg.max_span_tokens + 1):
            if i + length > n:
                break
            if is_mergeable(vals[i : i + length], cfg.epsilon):
                best = length
        if best:
            span = ids[i : i + best]
            spans[span] = spans.get(span, 0) + 1
            i += best
        else:
            i += 1

    by_surface: dict[str, tuple[tuple[int, ...], int, int]] = {}
    for span, freq in spans.items():
        surface = "".join(vocab.tokens[t].surface for t in span)
        held = by_surface.get(surface)
        if held is None:
            by_surface[surface] = (span, freq, freq)
        else:
            best_span, best_freq, total = held
            if freq > best_freq or (freq == best_freq and span < best_span):
                best_span, best_freq = span, freq
            by_surface[surface] = (best_span, best_freq, total + freq)
    return [
        MergeCandidate(component_ids=span, surface=surface, frequency=total)
        for surface, (span, _, total) in by_surface.items()
        if total >= cfg.min_frequency and surface not in vocab.surfaces
    ]


def save_candidates(candidates: list[MergeCandidate], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for c in candidates:
            f.write(
                json.dumps(
                    {
                        "surface": c.surface,
                        "components": list(c.component_ids),
                        "frequency": c.frequency,
                    },
                    ensure_ascii=False,
                )
            )
            f.write("\n")
