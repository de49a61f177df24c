"""Token table with merge-dependency ordering, iteration tags, and prefix-slicing updates.

A vocabulary starts as the character alphabet of a corpus and grows by
appending merged tokens whose components always have smaller ids.  Because
dependencies only point backwards, any prefix of the table is itself a valid
vocabulary, which is what makes reduction a simple slice.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass
from functools import cached_property
from typing import TYPE_CHECKING, Iterable, Sequence

if TYPE_CHECKING:
    from .merge import MergeCandidate


class VocabularyError(ValueError):
    """A token table violates its structural invariants."""


@dataclass(frozen=True)
class Token:
    id: int
    surface: str
    components: tuple[int, ...]
    iteration: int


@dataclass(frozen=True)
class Vocabulary:
    """Ordered token table; position equals id, immutable after construction."""

    tokens: tuple[Token, ...]
    base_size: int
    stage: int

    def __len__(self) -> int:
        return len(self.tokens)

    @cached_property
    def surfaces(self) -> frozenset[str]:
        return frozenset(t.surface for t in self.tokens)

    @cached_property
    def surface_lengths(self) -> tuple[int, ...]:
        return tuple(len(t.surface) for t in self.tokens)

    @cached_property
    def max_surface_len(self) -> int:
        return max(self.surface_lengths) if self.tokens else 0

    def surface(self, token_id: int) -> str:
        return self.tokens[token_id].surface

    def content_hash(self) -> str:
        """sha256 over the canonical serialization; stable identity for dumps."""
        return hashlib.sha256(to_jsonl(self).encode("utf-8")).hexdigest()

    def validate(self) -> None:
        """Full invariant scan; raises VocabularyError naming the offending id."""
        seen_surfaces: set[str] = set()
        prev_iteration = 0
        iteration_last_seen: dict[int, int] = {}
        for i, tok in enumerate(self.tokens):
            if tok.id != i:
                raise VocabularyError(f"token at position {i} has id {tok.id}")
            if not tok.components:
                if len(tok.surface) != 1:
                    raise VocabularyError(
                        f"id {i}: component-free token must be a single character, "
                        f"got {tok.surface!r}"
                    )
            else:
                if len(tok.components) < 2:
                    raise VocabularyError(f"id {i}: merged token needs >= 2 components")
                for c in tok.components:
                    if not 0 <= c < tok.id:
                        raise VocabularyError(
                            f"id {i}: component id {c} is not smaller than own id"
                        )
                joined = "".join(self.tokens[c].surface for c in tok.components)
                if joined != tok.surface:
                    raise VocabularyError(
                        f"id {i}: surface {tok.surface!r} != concatenated components {joined!r}"
                    )
            if tok.surface in seen_surfaces:
                raise VocabularyError(f"id {i}: duplicate surface {tok.surface!r}")
            seen_surfaces.add(tok.surface)
            if i < self.base_size and tok.components:
                raise VocabularyError(f"id {i}: base token must not have components")
            if i >= self.base_size and not tok.components:
                raise VocabularyError(f"id {i}: base character outside the base prefix")
            if tok.iteration < prev_iteration:
                raise VocabularyError(f"id {i}: iteration tag decreases")
            last = iteration_last_seen.get(tok.iteration)
            if last is not None and last != i - 1:
                raise VocabularyError(f"id {i}: iteration {tok.iteration} is not contiguous")
            iteration_last_seen[tok.iteration] = i
            prev_iteration = tok.iteration
        if self.base_size > len(self.tokens):
            raise VocabularyError("base_size exceeds table size")


def init_base(corpus: str) -> Vocabulary:
    """Character vocabulary: one token per distinct character, sorted by code point."""
    if not corpus:
        raise VocabularyError("empty corpus")
    chars = sorted(set(corpus))
    tokens = tuple(
        Token(id=i, surface=ch, components=(), iteration=0) for i, ch in enumerate(chars)
    )
    return Vocabulary(tokens=tokens, base_size=len(tokens), stage=0)


def add(
    vocab: Vocabulary, candidates: Sequence[MergeCandidate], cap: int
) -> Vocabulary:
    """Append up to `cap` merge candidates as new tokens tagged with the next stage.

    Selection order: corpus frequency descending, then shorter surface, then
    lexicographic surface.  Duplicate surfaces among the candidates keep the
    highest-frequency instance.
    """
    if cap < 1:
        raise VocabularyError("cap must be positive")
    best: dict[str, MergeCandidate] = {}
    for cand in candidates:
        for c in cand.component_ids:
            if not 0 <= c < len(vocab):
                raise VocabularyError(
                    f"candidate {cand.surface!r} references unknown id {c}"
                )
        joined = "".join(vocab.tokens[c].surface for c in cand.component_ids)
        if joined != cand.surface:
            raise VocabularyError(
                f"candidate surface {cand.surface!r} != component concatenation {joined!r}"
            )
        if cand.surface in vocab.surfaces:
            raise VocabularyError(f"candidate surface {cand.surface!r} already in vocabulary")
        held = best.get(cand.surface)
        if held is None or cand.frequency > held.frequency:
            best[cand.surface] = cand

    ranked = sorted(
        best.values(), key=lambda c: (-c.frequency, len(c.surface), c.surface)
    )
    new_iteration = vocab.stage + 1
    new_tokens = list(vocab.tokens)
    for cand in ranked[:cap]:
        new_tokens.append(
            Token(
                id=len(new_tokens),
                surface=cand.surface,
                components=tuple(cand.component_ids),
                iteration=new_iteration,
            )
        )
    return Vocabulary(tokens=tuple(new_tokens), base_size=vocab.base_size, stage=new_iteration)


def reduce(vocab: Vocabulary, n_target: int) -> Vocabulary:
    """Shrink to the first `n_target` tokens.

    Valid because component ids are always smaller than the ids that merge
    them, so every retained token's dependencies are retained too.
    """
    if n_target < vocab.base_size:
        raise VocabularyError("cannot remove base characters")
    if n_target > len(vocab):
        raise VocabularyError(
            f"target size {n_target} exceeds vocabulary size {len(vocab)}"
        )
    return Vocabulary(
        tokens=vocab.tokens[:n_target], base_size=vocab.base_size, stage=vocab.stage + 1
    )


def to_jsonl(vocab: Vocabulary) -> str:
    buf = io.StringIO()
    for tok in vocab.tokens:
        json.dump(
            {
                "id": tok.id,
                "surface": tok.surface,
                "components": list(tok.components),
                "iteration": tok.iteration,
            },
            buf,
            ensure_ascii=False,
        )
        buf.write("\n")
    return buf.getvalue()


def from_jsonl(text: str, stage: int | None = None) -> Vocabulary:
    """Parse the interchange format; validates every invariant on the way in."""
    tokens: list[Token] = []
    base_size = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise VocabularyError(f"line {lineno}: not valid JSON ({exc})") from exc
        try:
            tok = Token(
                id=int(rec["id"]),
                surface=str(rec["surface"]),
                components=tuple(int(c) for c in rec["components"]),
                iteration=int(rec["iteration"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise VocabularyError(f"line {lineno}: malformed token record ({exc})") from exc
        if tok.id != len(tokens):
            raise VocabularyError(
                f"line {lineno}: expected id {len(tokens)}, got {tok.id}"
            )
        tokens.append(tok)
    if not tokens:
        raise VocabularyError("empty vocabulary file")
    while base_size < len(tokens) and not tokens[base_size].components:
        base_size += 1
    if stage is None:
        stage = max(t.iteration for t in tokens)
    vocab = Vocabulary(tokens=tuple(tokens), base_size=base_size, stage=stage)
    vocab.validate()
    return vocab


def save(vocab: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(to_jsonl(vocab))


def load(path) -> Vocabulary:
    with open(path, "r", encoding="utf-8") as f:
        return from_jsonl(f.read())
