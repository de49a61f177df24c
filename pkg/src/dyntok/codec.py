"""Trie-backed greedy longest-match tokenization and its inverse.

Merging crosses spaces freely: a surface may span word boundaries, so the
trie is consulted at every character position with no pre-segmentation.
"""

from __future__ import annotations

import json
from bisect import bisect_left
from dataclasses import dataclass

import numpy as np

from .vocab import Vocabulary

_LEAF = ""  # terminal marker inside trie nodes; safe because edges are single chars


class CodecError(ValueError):
    pass


@dataclass(frozen=True)
class TokenStream:
    """Encoded text: parallel token ids and character start offsets."""

    ids: tuple[int, ...]
    offsets: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class PrefixTrie:
    root: dict
    max_depth: int


def build_trie(vocab: Vocabulary) -> PrefixTrie:
    root: dict = {}
    for tok in vocab.tokens:
        node = root
        for ch in tok.surface:
            node = node.setdefault(ch, {})
        node[_LEAF] = tok.id
    return PrefixTrie(root=root, max_depth=vocab.max_surface_len)


def _match_at(text: str, pos: int, root: dict) -> tuple[int, int]:
    """Longest surface matching text at pos; returns (token_id, char_length).

    (-1, 0) when not even a single character matches.
    """
    node = root
    best_id = -1
    best_len = 0
    i = pos
    n = len(text)
    while i < n:
        node = node.get(text[i])
        if node is None:
            break
        i += 1
        tid = node.get(_LEAF)
        if tid is not None:
            best_id = tid
            best_len = i - pos
    return best_id, best_len


def encode(
    text: str,
    trie: PrefixTrie,
    vocab: Vocabulary,
    *,
    unknown: str = "strict",
    replacement: str | None = None,
) -> TokenStream:
    """Greedy leftmost-longest segmentation of text.

    unknown="strict" raises on characters outside the base alphabet;
    unknown="replace" substitutes `replacement` (which must be a base
    character) and keeps going.  Replacement breaks the lossless round-trip
    for the affected positions, by construction.
    """
    if unknown not in ("strict", "replace"):
        raise CodecError(f"unknown-character policy {unknown!r} not recognized")
    repl_id = -1
    if unknown == "replace":
        if replacement is None or len(replacement) != 1:
            raise CodecError("replace policy needs a single-character replacement")
        repl_id, repl_len = _match_at(replacement, 0, trie.root)
        if repl_len != 1:
            raise CodecError(f"replacement {replacement!r} is not a base character")

    ids: list[int] = []
    offsets: list[int] = []
    root = trie.root
    pos = 0
    n = len(text)
    while pos < n:
        tid, length = _match_at(text, pos, root)
        if length == 0:
            if unknown == "strict":
                raise CodecError(
                    f"character {text[pos]!r} at position {pos} is not in the base alphabet"
                )
            tid, length = repl_id, 1
        ids.append(tid)
        offsets.append(pos)
        pos += length
    return TokenStream(ids=tuple(ids), offsets=tuple(offsets))


def encode_batched(
    text: str,
    trie: PrefixTrie,
    vocab: Vocabulary,
    chunk_chars: int,
    *,
    unknown: str = "strict",
    replacement: str | None = None,
) -> TokenStream:
    """Chunked encoding with boundary reconciliation; output equals encode().

    Chunks are tokenized independently, then stitched left to right.  A
    chunk-local token starting at position p is identical to the full-text
    greedy match whenever its whole lookahead window [p, p + max_depth) lies
    inside the chunk; outside that safe region (the last max_depth - 1
    characters of each chunk, twice that straddling the boundary) tokens are
    re-derived directly on the full text, which also re-synchronizes after
    any token that crossed the boundary.
    """
    max_len = max(trie.max_depth, 1)
    if chunk_chars < max_len:
        raise CodecError("chunk smaller than longest token")
    n = len(text)
    if n <= chunk_chars:
        return encode(text, trie, vocab, unknown=unknown, replacement=replacement)

    chunk_streams = []
    for start in range(0, n, chunk_chars):
        piece = text[start : start + chunk_chars]
        local = encode(piece, trie, vocab, unknown=unknown, replacement=replacement)
        chunk_streams.append(
            (list(local.ids), [o + start for o in local.offsets])
        )

    repl_id = -1
    if unknown == "replace":
        repl_id, _ = _match_at(replacement, 0, trie.root)

    ids: list[int] = []
    offsets: list[int] = []
    root = trie.root
    pos = 0
    while pos < n:
        k = pos // chunk_chars
        end = min((k + 1) * chunk_chars, n)
        safe = n if end == n else end - (max_len - 1)
        c_ids, c_offs = chunk_streams[k]
        copied = False
        if pos < safe:
            i = bisect_left(c_offs, pos)
            if i < len(c_offs) and c_offs[i] == pos:
                while i < len(c_offs) and c_offs[i] < safe:
                    ids.append(c_ids[i])
                    offsets.append(c_offs[i])
                    i += 1
                pos = c_offs[i] if i < len(c_offs) else end
                copied = True
        if not copied:
            tid, length = _match_at(text, pos, root)
            if length == 0:
                if unknown == "strict":
                    raise CodecError(
                        f"character {text[pos]!r} at position {pos} is not in the base alphabet"
                    )
                tid, length = repl_id, 1
            ids.append(tid)
            offsets.append(pos)
            pos += length
    return TokenStream(ids=tuple(ids), offsets=tuple(offsets))


def decode(stream: TokenStream, vocab: Vocabulary) -> str:
    surfaces = vocab.tokens
    size = len(surfaces)
    out: list[str] = []
    for tid in stream.ids:
        if not 0 <= tid < size:
            raise CodecError(f"token id {tid} out of range for vocabulary of size {size}")
        out.append(surfaces[tid].surface)
    return "".join(out)


def save_stream(stream: TokenStream, path, vocab: Vocabulary, text_length: int) -> None:
    """Stream dump: one JSON header line, then packed little-endian uint32 pairs."""
    header = {
        "vocab_hash": vocab.content_hash(),
        "text_length": text_length,
        "n_tokens": len(stream),
    }
    pairs = np.empty((len(stream), 2), dtype="<u4")
    pairs[:, 0] = stream.ids
    pairs[:, 1] = stream.offsets
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("utf-8"))
        f.write(b"\n")
        f.write(pairs.tobytes())


def load_stream(path, vocab: Vocabulary | None = None) -> tuple[TokenStream, dict]:
    """Read a stream dump; returns (stream, header).

    When vocab is given, its content hash must match the header.
    """
    with open(path, "rb") as f:
        header_line = f.readline()
        payload = f.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
        n_tokens = int(header["n_tokens"])
    except (ValueError, KeyError) as exc:
        raise CodecError(f"malformed stream header ({exc})") from exc
    if vocab is not None and header.get("vocab_hash") != vocab.content_hash():
        raise CodecError("stream dump was produced under a different vocabulary")
    if len(payload) != n_tokens * 8:
        raise CodecError(
            f"stream payload has {len(payload)} bytes, expected {n_tokens * 8}"
        )
    pairs = np.frombuffer(payload, dtype="<u4").reshape(n_tokens, 2)
    stream = TokenStream(
        ids=tuple(int(v) for v in pairs[:, 0]),
        offsets=tuple(int(v) for v in pairs[:, 1]),
    )
    return stream, header
