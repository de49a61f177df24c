"""Per-position conditional entropy and surprisal over token streams.

The built-in source is an add-alpha smoothed n-gram model storing the full
hierarchy of context lengths 0..order-1, so positions near the stream start
(and any evaluation stream) always find a count table for the longest
context they can muster.  Entropy here means the Shannon entropy of the
smoothed predictive distribution, in bits; the realized surprisal
-log2 p(next) is a separate trace used only for bits-per-character.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .codec import TokenStream
from .vocab import Vocabulary


class EntropyError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EntropyTrace:
    values: np.ndarray  # float64, bits, one per stream position
    kind: str  # "entropy" or "nll"
    vocab_hash: str | None = None

    def __post_init__(self):
        if self.kind not in ("entropy", "nll"):
            raise EntropyError(f"trace kind {self.kind!r} not recognized")
        object.__setattr__(
            self, "values", np.asarray(self.values, dtype=np.float64)
        )

    def __len__(self) -> int:
        return len(self.values)


class NgramModel:
    """Count hierarchy for all context lengths 0..order-1 with add-alpha smoothing."""

    def __init__(self, order: int, vocab_size: int, alpha: float):
        if order < 1:
            raise EntropyError("order must be >= 1")
        if vocab_size < 1:
            raise EntropyError("vocab_size must be >= 1")
        if alpha < 0:
            raise EntropyError("alpha must be non-negative")
        self.order = order
        self.vocab_size = vocab_size
        self.alpha = alpha
        self.counts: dict[tuple[int, ...], dict[int, int]] = {}
        self.totals: dict[tuple[int, ...], int] = {}
        self._entropy_cache: dict[tuple[int, ...], float] = {}

    def observe(self, ids) -> None:
        """Accumulate context->next counts for every position and context length."""
        counts = self.counts
        totals = self.totals
        max_ctx = self.order - 1
        ids = tuple(ids)
        for t, nxt in enumerate(ids):
            for k in range(min(t, max_ctx) + 1):
                ctx = ids[t - k : t]
                table = counts.get(ctx)
                if table is None:
                    counts[ctx] = {nxt: 1}
                    totals[ctx] = 1
                else:
                    table[nxt] = table.get(nxt, 0) + 1
                    totals[ctx] += 1
        self._entropy_cache.clear()

    def _distribution_entropy(self, ctx: tuple[int, ...]) -> float:
        cached = self._entropy_cache.get(ctx)
        if cached is not None:
            return cached
        table = self.counts.get(ctx)
        n_total = self.totals.get(ctx, 0)
        n_seen = len(table) if table else 0
        alpha = self.alpha
        v = self.vocab_size
        denom = n_total + alpha * v
        if denom == 0:
            raise EntropyError("context unseen and alpha=0: distribution undefined")
        h = 0.0
        if table:
            # sorted so the float sum is independent of count insertion order
            for c in sorted(table.values()):
                p = (c + alpha) / denom
                h -= p * math.log2(p)
        if alpha > 0 and v > n_seen:
            p0 = alpha / denom
            h -= (v - n_seen) * p0 * math.log2(p0)
        self._entropy_cache[ctx] = h
        return h

    def _next_probability(self, ctx: tuple[int, ...], nxt: int) -> float:
        table = self.counts.get(ctx)
        n_total = self.totals.get(ctx, 0)
        denom = n_total + self.alpha * self.vocab_size
        if denom == 0:
            raise EntropyError("context unseen and alpha=0: distribution undefined")
        c = table.get(nxt, 0) if table else 0
        return (c + self.alpha) / denom


def fit_ngram(
    stream: TokenStream, vocab_size: int, order: int = 4, alpha: float = 0.01
) -> NgramModel:
    if len(stream) == 0:
        raise EntropyError("empty stream")
    if alpha <= 0:
        raise EntropyError("alpha must be positive")
    model = NgramModel(order=order, vocab_size=vocab_size, alpha=alpha)
    model.observe(stream.ids)
    return model


def merge_models(a: NgramModel, b: NgramModel) -> NgramModel:
    """Combine shard counts; parameters must agree."""
    if (a.order, a.vocab_size, a.alpha) != (b.order, b.vocab_size, b.alpha):
        raise EntropyError("cannot merge models with different parameters")
    merged = NgramModel(order=a.order, vocab_size=a.vocab_size, alpha=a.alpha)
    for src in (a, b):
        for ctx, table in src.counts.items():
            dst = merged.counts.setdefault(ctx, {})
            for nxt, c in table.items():
                dst[nxt] = dst.get(nxt, 0) + c
            merged.totals[ctx] = merged.totals.get(ctx, 0) + src.totals[ctx]
    return merged


def _context_at(ids: tuple[int, ...], t: int, max_ctx: int) -> tuple[int, ...]:
    k = t if t < max_ctx else max_ctx
    return ids[t - k : t]


def entropy_trace(
    model: NgramModel, stream: TokenStream, vocab_hash: str | None = None
) -> EntropyTrace:
    """Predictive-distribution entropy at every stream position, in bits."""
    ids = stream.ids
    if ids and max(ids) >= model.vocab_size:
        raise EntropyError("stream contains ids outside the model's vocabulary")
    max_ctx = model.order - 1
    values = np.empty(len(ids), dtype=np.float64)
    ent = model._distribution_entropy
    for t in range(len(ids)):
        values[t] = ent(_context_at(ids, t, max_ctx))
    return EntropyTrace(values=values, kind="entropy", vocab_hash=vocab_hash)


def nll_trace(
    model: NgramModel, stream: TokenStream, vocab_hash: str | None = None
) -> EntropyTrace:
    """Realized surprisal -log2 p(s_t | context) at every position, in bits."""
    ids = stream.ids
    if ids and max(ids) >= model.vocab_size:
        raise EntropyError("stream contains ids outside the model's vocabulary")
    max_ctx = model.order - 1
    values = np.empty(len(ids), dtype=np.float64)
    prob = model._next_probability
    for t, nxt in enumerate(ids):
        p = prob(_context_at(ids, t, max_ctx), nxt)
        if p <= 0:
            raise EntropyError(f"zero probability at position {t} with alpha=0")
        values[t] = -math.log2(p)
    return EntropyTrace(values=values, kind="nll", vocab_hash=vocab_hash)


def save_model(model: NgramModel, path) -> None:
    """Model interchange: JSON header line, then one sorted count record per context."""
    with open(path, "w", encoding="utf-8") as f:
        header = {
            "format": "ngram-counts-v1",
            "order": model.order,
            "vocab_size": model.vocab_size,
            "alpha": model.alpha,
        }
        f.write(json.dumps(header, sort_keys=True))
        f.write("\n")
        for ctx in sorted(model.counts, key=lambda c: (len(c), c)):
            table = model.counts[ctx]
            rec = {
                "ctx": list(ctx),
                "next": {str(k): table[k] for k in sorted(table)},
            }
            f.write(json.dumps(rec, sort_keys=True))
            f.write("\n")


def load_model(path) -> NgramModel:
    with open(path, "r", encoding="utf-8") as f:
        header_line = f.readline()
        try:
            header = json.loads(header_line)
            if header.get("format") != "ngram-counts-v1":
                raise EntropyError(f"unsupported model format {header.get('format')!r}")
            model = NgramModel(
                order=int(header["order"]),
                vocab_size=int(header["vocab_size"]),
                alpha=float(header["alpha"]),
            )
        except (ValueError, KeyError) as exc:
            raise EntropyError(f"malformed model header ({exc})") from exc
        for lineno, line in enumerate(f, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                ctx = tuple(int(c) for c in rec["ctx"])
                table = {int(k): int(v) for k, v in rec["next"].items()}
            except (ValueError, KeyError, TypeError) as exc:
                raise EntropyError(f"line {lineno}: malformed count record ({exc})") from exc
            if len(ctx) > model.order - 1:
                raise EntropyError(f"line {lineno}: context longer than order allows")
            model.counts[ctx] = table
            model.totals[ctx] = sum(table.values())
    return model


def save_entropy_dump(trace: EntropyTrace, path, mode: str = "packed") -> None:
    """Dump format: JSON header line, then one float per position.

    packed: little-endian float32 payload (compact interchange default).
    text: repr'd float64 per line (exact round-trip).
    """
    if mode not in ("packed", "text"):
        raise EntropyError(f"dump mode {mode!r} not recognized")
    header = {
        "vocab_hash": trace.vocab_hash,
        "stream_length": len(trace),
        "unit": "bits",
        "kind": trace.kind,
        "encoding": mode,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("utf-8"))
        f.write(b"\n")
        if mode == "packed":
            f.write(trace.values.astype("<f4").tobytes())
        else:
            body = "\n".join(repr(float(v)) for v in trace.values)
            f.write(body.encode("ascii"))
            if len(trace):
                f.write(b"\n")


def load_entropy_dump(
    path, stream: TokenStream | None = None, vocab: Vocabulary | None = None
) -> EntropyTrace:
    """Read a dump, verifying length against the stream and hash against the vocab."""
    with open(path, "rb") as f:
        header_line = f.readline()
        payload = f.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
        length = int(header["stream_length"])
        kind = str(header["kind"])
        unit = str(header["unit"])
    except (ValueError, KeyError) as exc:
        raise EntropyError(f"malformed dump header ({exc})") from exc
    if unit != "bits":
        raise EntropyError(f"dump unit {unit!r} not supported, expected bits")
    if stream is not None and length != len(stream):
        raise EntropyError(
            f"length mismatch: dump has {length} values, stream has {len(stream)}"
        )
    if vocab is not None:
        got = header.get("vocab_hash")
        want = vocab.content_hash()
        if got != want:
            raise EntropyError(
                f"vocab hash mismatch: dump carries {got!r}, expected {want!r}"
            )
    values = _parse_payload(payload, length, header.get("encoding"))
    if len(values) != length:
        raise EntropyError(
            f"length mismatch: header says {length}, payload has {len(values)} values"
        )
    return EntropyTrace(values=values, kind=kind, vocab_hash=header.get("vocab_hash"))


def _parse_payload(payload: bytes, length: int, encoding: str | None) -> np.ndarray:
    if encoding == "packed":
        return np.frombuffer(payload, dtype="<f4").astype(np.float64)
    if encoding == "text":
        return _parse_text(payload)
    if encoding is not None:
        raise EntropyError(f"dump encoding {encoding!r} not recognized")
    # External writers may omit the encoding field; a textual payload parses
    # as floats, anything else of the right byte length is packed.
    try:
        values = _parse_text(payload)
        if len(values) == length:
            return values
    except (ValueError, UnicodeDecodeError):
        pass
    if len(payload) != 4 * length:
        raise EntropyError("payload is neither textual floats nor packed float32")
    return np.frombuffer(payload, dtype="<f4").astype(np.float64)


def _parse_text(payload: bytes) -> np.ndarray:
    return np.array(
        [float(tok) for tok in payload.decode("ascii").split()], dtype=np.float64
    )
