"""Warm-start growth of the embedding matrices when the vocabulary gains tokens.

A new token names a span of existing tokens, so the model already has an
internal summary of it: the final hidden state at the span's last position.
That vector seeds the new input-embedding row. The new output row copies
the head row of the span's final component token, since right before the
merge that component is what the model would have produced at the span's
end. Old rows are never touched.

When a new token's span cannot be found in the corpus sample, its input
row falls back to the mean of its components' input rows (with a warning);
the output row rule needs no occurrence and applies unchanged.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .checkpoint import Checkpoint
from .formats import StreamFile, VocabFile, find_span, flatten_to_base_ids, iter_spans
from .model import HarnessError

log = logging.getLogger("dyntok_harness.expand")


@dataclass
class ExpansionReport:
    added: int = 0
    sampled: int = 0
    fallback: int = 0
    sources: dict[int, str] = field(default_factory=dict)


def _check_extends(old: VocabFile, new: VocabFile) -> None:
    if len(new) < len(old):
        raise HarnessError(
            f"new vocabulary ({len(new)} tokens) is smaller than the old ({len(old)})"
        )
    if new.surfaces[: len(old)] != old.surfaces or new.components[: len(old)] != old.components:
        raise HarnessError("new vocabulary does not extend the old one (shared prefix differs)")


@torch.no_grad()
def expand_checkpoint(
    ckpt: Checkpoint,
    old_vocab: VocabFile,
    new_vocab: VocabFile,
    sample: StreamFile,
    *,
    occurrences: int = 1,
) -> tuple[Checkpoint, ExpansionReport]:
    """Grow ``ckpt`` in place from ``old_vocab`` to ``new_vocab``.

    ``sample`` is a stream encoded under the old vocabulary in which new
    tokens' spans are looked up. ``occurrences`` > 1 averages the hidden
    state over that many span occurrences instead of taking the first.
    """
    if ckpt.vocab_hash != old_vocab.sha256:
        raise HarnessError("checkpoint is not bound to the given old vocabulary")
    if sample.vocab_hash != old_vocab.sha256:
        raise HarnessError("corpus sample must be encoded under the old vocabulary")
    if occurrences < 1:
        raise HarnessError("occurrences must be >= 1")
    _check_extends(old_vocab, new_vocab)
    model = ckpt.model
    old_n, new_n = len(old_vocab), len(new_vocab)
    if model.embedding_rows != old_n:
        raise HarnessError(
            f"model has {model.embedding_rows} embedding rows, old vocab has {old_n}"
        )
    report = ExpansionReport(added=new_n - old_n)
    if new_n == old_n:
        ckpt.vocab_hash = new_vocab.sha256
        return ckpt, report

    # hidden states are extracted with the old model before any surgery
    model.eval()
    seeds: dict[int, torch.Tensor] = {}
    for v in range(old_n, new_n):
        span = flatten_to_base_ids(new_vocab, v, floor=old_n)
        vecs = []
        for start in iter_spans(sample.ids, span, max_hits=occurrences):
            end = start + len(span)  # exclusive
            lo = max(0, end - model.cfg.context)
            x = torch.from_numpy(sample.ids[lo:end]).long().unsqueeze(0)
            _, h = model.hidden(x)
            vecs.append(h[0, -1])
        if vecs:
            seeds[v] = torch.stack(vecs).mean(dim=0)
            report.sampled += 1
            report.sources[v] = "sampled"
        else:
            report.fallback += 1
            report.sources[v] = "fallback"
            log.warning(
                "token %d (%r) never occurs in the corpus sample; "
                "seeding its input row from the component mean",
                v,
                new_vocab.surfaces[v],
            )

    dim = model.cfg.dim
    wte = nn.Embedding(new_n, dim)
    head = nn.Linear(dim, new_n, bias=False)
    wte.weight[:old_n] = model.wte.weight
    head.weight[:old_n] = model.lm_head.weight
    for v in range(old_n, new_n):
        comps = new_vocab.components[v]
        if v in seeds:
            wte.weight[v] = seeds[v]
        else:
            wte.weight[v] = wte.weight[list(comps)].mean(dim=0)
        # rows for components added earlier in this call are already filled
        head.weight[v] = head.weight[comps[-1]]
    model.wte = wte
    model.lm_head = head
    model.vocab_size = new_n
    ckpt.vocab_hash = new_vocab.sha256
    ckpt.stage += 1
    return ckpt, report


__all__ = ["ExpansionReport", "expand_checkpoint", "find_span"]
