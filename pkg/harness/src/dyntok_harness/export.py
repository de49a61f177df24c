"""Per-position predictive traces of a model over an encoded stream.

For every stream position t the model assigns a distribution over the
next token from the window it sits in. Two traces are derived from it:

  entropy  H(p_t) of the predicted distribution, in bits
  nll      -log2 p_t(actual token), the realized surprisal, in bits

Windows are consecutive and non-overlapping, so each position past the
first is predicted exactly once; positions right after a window boundary
see a truncated context, the same concession a fixed-order model makes.
Position 0 has no context at all and is assigned log2(|V|), the uniform
prior over the vocabulary, for both traces.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch.nn import functional as F

from .checkpoint import Checkpoint
from .formats import StreamFile, VocabFile, write_dump
from .model import GPT, HarnessError

LN2 = math.log(2.0)


@torch.no_grad()
def stream_bits(model: GPT, ids: np.ndarray, batch_windows: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """Both traces in one pass; returns (entropy_bits, nll_bits), float64."""
    was_training = model.training
    model.eval()
    try:
        N = len(ids)
        V = model.vocab_size
        entropy = np.empty(N, dtype=np.float64)
        nll = np.empty(N, dtype=np.float64)
        if N == 0:
            return entropy, nll
        if ids.max(initial=0) >= V:
            raise HarnessError(f"stream contains id >= vocab size {V}")
        entropy[0] = nll[0] = math.log2(V)
        T = model.cfg.context
        starts = list(range(0, N - 1, T))
        full = [s for s in starts if s + T <= N - 1]
        for i in range(0, len(full), batch_windows):
            chunk = full[i : i + batch_windows]
            xb = torch.from_numpy(np.stack([ids[s : s + T] for s in chunk])).long()
            tb = torch.from_numpy(np.stack([ids[s + 1 : s + 1 + T] for s in chunk])).long()
            eb, nb = _window_bits(model, xb, tb)
            for row, s in enumerate(chunk):
                entropy[s + 1 : s + 1 + T] = eb[row]
                nll[s + 1 : s + 1 + T] = nb[row]
        tail = [s for s in starts if s not in set(full)]
        for s in tail:
            L = (N - 1) - s
            xb = torch.from_numpy(ids[s : s + L]).long().unsqueeze(0)
            tb = torch.from_numpy(ids[s + 1 : s + 1 + L]).long().unsqueeze(0)
            eb, nb = _window_bits(model, xb, tb)
            entropy[s + 1 : s + 1 + L] = eb[0]
            nll[s + 1 : s + 1 + L] = nb[0]
        return entropy, nll
    finally:
        model.train(was_training)


def _window_bits(model: GPT, xb: torch.Tensor, tb: torch.Tensor):
    logits, _ = model(xb)
    ls = F.log_softmax(logits.float(), dim=-1)
    ent = -(ls.exp() * ls).sum(-1) / LN2
    nl = -ls.gather(-1, tb.unsqueeze(-1)).squeeze(-1) / LN2
    return ent.double().numpy(), nl.double().numpy()


def bits_per_char(nll_bits: np.ndarray, text_length: int) -> float:
    if text_length <= 0:
        raise HarnessError("text_length must be positive")
    return float(nll_bits.sum() / text_length)


def export_dump(
    ckpt: Checkpoint,
    vocab: VocabFile,
    stream: StreamFile,
    kind: str,
    out_path,
    mode: str = "text",
    batch_windows: int = 32,
) -> np.ndarray:
    """Write one engine-format dump for ``stream``; returns the values written.

    The checkpoint, the vocabulary file, and the stream header must all
    agree on the vocabulary hash, and the model must have one embedding
    row per vocabulary entry.
    """
    if ckpt.vocab_hash != vocab.sha256:
        raise HarnessError(
            f"checkpoint was trained under vocab {ckpt.vocab_hash[:12]}..., "
            f"got vocab file hashing to {vocab.sha256[:12]}..."
        )
    if stream.vocab_hash != vocab.sha256:
        raise HarnessError("stream header hash does not match the vocabulary file")
    if ckpt.model.embedding_rows != len(vocab):
        raise HarnessError(
            f"model has {ckpt.model.embedding_rows} embedding rows, vocab has {len(vocab)}"
        )
    entropy, nll = stream_bits(ckpt.model, stream.ids, batch_windows=batch_windows)
    values = {"entropy": entropy, "nll": nll}[kind] if kind in ("entropy", "nll") else None
    if values is None:
        raise HarnessError(f"dump kind {kind!r} not recognized")
    write_dump(out_path, values, kind, vocab.sha256, mode=mode)
    return values
