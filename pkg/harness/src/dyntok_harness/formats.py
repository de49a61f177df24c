"""Readers and writers for the engine's on-disk interchange formats.

The harness talks to the tokenization engine exclusively through files:
vocabulary JSONL, packed token streams, and per-position entropy dumps.
This module implements those three contracts from their documented byte
layouts so the harness carries no dependency on the engine package.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

LOG2E = 1.4426950408889634


class FormatError(ValueError):
    """Raised when an engine interchange file does not match its contract."""


@dataclass(frozen=True)
class VocabFile:
    """A vocabulary as read from disk, plus the hash of its exact bytes.

    Token ids are row indices. ``components`` is empty for base characters
    and lists strictly smaller ids for merged tokens.
    """

    path: str
    sha256: str
    surfaces: list[str]
    components: list[tuple[int, ...]]
    iterations: list[int]
    char_count: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.surfaces)


def read_vocab(path) -> VocabFile:
    with open(path, "rb") as f:
        raw = f.read()
    sha = hashlib.sha256(raw).hexdigest()
    surfaces: list[str] = []
    components: list[tuple[int, ...]] = []
    iterations: list[int] = []
    for lineno, line in enumerate(raw.decode("utf-8").splitlines()):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            rid = int(row["id"])
            surface = str(row["surface"])
            comps = tuple(int(c) for c in row["components"])
        except (ValueError, KeyError) as exc:
            raise FormatError(f"{path}: malformed vocab row {lineno} ({exc})") from exc
        if rid != len(surfaces):
            raise FormatError(f"{path}: row {lineno} has id {rid}, expected {len(surfaces)}")
        if any(c >= rid for c in comps):
            raise FormatError(f"{path}: token {rid} references component >= own id")
        surfaces.append(surface)
        components.append(comps)
        iterations.append(int(row.get("iteration", 0)))
    if not surfaces:
        raise FormatError(f"{path}: vocabulary is empty")
    char_count = np.array([len(s) for s in surfaces], dtype=np.int64)
    return VocabFile(
        path=str(path),
        sha256=sha,
        surfaces=surfaces,
        components=components,
        iterations=iterations,
        char_count=char_count,
    )


@dataclass(frozen=True)
class StreamFile:
    """Token ids of an encoded corpus plus the header it was saved with."""

    ids: np.ndarray
    offsets: np.ndarray
    vocab_hash: str
    text_length: int

    def __len__(self) -> int:
        return len(self.ids)


def read_stream(path, vocab: VocabFile | None = None) -> StreamFile:
    """Read a packed stream; when ``vocab`` is given the hashes must agree."""
    with open(path, "rb") as f:
        header_line = f.readline()
        body = f.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
        n = int(header["n_tokens"])
        text_length = int(header["text_length"])
        vocab_hash = str(header["vocab_hash"])
    except (ValueError, KeyError) as exc:
        raise FormatError(f"{path}: malformed stream header ({exc})") from exc
    if len(body) != 8 * n:
        raise FormatError(f"{path}: expected {8 * n} payload bytes, found {len(body)}")
    pairs = np.frombuffer(body, dtype="<u4").reshape(n, 2)
    if vocab is not None:
        if vocab_hash != vocab.sha256:
            raise FormatError(
                f"{path}: stream was encoded under vocab {vocab_hash[:12]}..., "
                f"given vocab hashes to {vocab.sha256[:12]}..."
            )
        if n and int(pairs[:, 0].max()) >= len(vocab):
            raise FormatError(f"{path}: token id out of range for vocab")
    return StreamFile(
        ids=pairs[:, 0].astype(np.int64),
        offsets=pairs[:, 1].astype(np.int64),
        vocab_hash=vocab_hash,
        text_length=text_length,
    )


def write_dump(path, values: np.ndarray, kind: str, vocab_hash: str, mode: str = "text") -> None:
    """Write a per-position dump in the engine's entropy/nll format.

    ``text`` mode round-trips float64 exactly; ``packed`` is the compact
    little-endian float32 encoding (rounds near 1e-8 in aggregate bits).
    """
    if kind not in ("entropy", "nll"):
        raise FormatError(f"dump kind {kind!r} not recognized")
    if mode not in ("text", "packed"):
        raise FormatError(f"dump mode {mode!r} not recognized")
    values = np.asarray(values, dtype=np.float64)
    header = {
        "vocab_hash": vocab_hash,
        "stream_length": int(len(values)),
        "unit": "bits",
        "kind": kind,
        "encoding": mode,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("utf-8"))
        f.write(b"\n")
        if mode == "packed":
            f.write(values.astype("<f4").tobytes())
        else:
            body = "\n".join(repr(float(v)) for v in values)
            f.write(body.encode("ascii"))
            if len(values):
                f.write(b"\n")


def read_dump(path) -> tuple[np.ndarray, dict]:
    """Read a dump back; returns (float64 values, header dict)."""
    with open(path, "rb") as f:
        header_line = f.readline()
        payload = f.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
        length = int(header["stream_length"])
        encoding = header.get("encoding")
    except (ValueError, KeyError) as exc:
        raise FormatError(f"{path}: malformed dump header ({exc})") from exc
    if encoding == "packed":
        values = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    elif encoding == "text":
        values = np.array(
            [float(tok) for tok in payload.decode("ascii").split()], dtype=np.float64
        )
    else:
        raise FormatError(f"{path}: dump encoding {encoding!r} not recognized")
    if len(values) != length:
        raise FormatError(f"{path}: header says {length} values, payload has {len(values)}")
    return values, header


def flatten_to_base_ids(vocab: VocabFile, token_id: int, floor: int) -> tuple[int, ...]:
    """Expand ``token_id`` into the sequence of ids all below ``floor``.

    Ids under the floor stand for themselves; anything at or above it is
    replaced by its components, recursively. Used to locate a freshly added
    token's span inside a stream that was encoded before the token existed.
    """
    if token_id < floor:
        return (token_id,)
    out: list[int] = []
    for c in vocab.components[token_id]:
        out.extend(flatten_to_base_ids(vocab, c, floor))
    return tuple(out)


def iter_spans(ids: np.ndarray, span: tuple[int, ...], max_hits: int | None = None):
    """Yield start indices of occurrences of ``span`` in ``ids``, left to right."""
    if not span or len(span) > len(ids):
        return
    starts = np.flatnonzero(ids[: len(ids) - len(span) + 1] == span[0])
    pattern = np.asarray(span, dtype=ids.dtype)
    hits = 0
    for s in starts:
        if np.array_equal(ids[s : s + len(span)], pattern):
            yield int(s)
            hits += 1
            if max_hits is not None and hits >= max_hits:
                return


def find_span(ids: np.ndarray, span: tuple[int, ...]) -> int:
    """Index of the first occurrence of ``span`` in ``ids``, or -1."""
    for s in iter_spans(ids, span, max_hits=1):
        return s
    return -1
