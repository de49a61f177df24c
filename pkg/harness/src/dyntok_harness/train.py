"""Training loop: random-window next-token prediction over an encoded stream."""

from __future__ import annotations

import logging

import numpy as np
import torch

from .checkpoint import Checkpoint
from .formats import StreamFile, VocabFile
from .model import GPT, HarnessError, ModelConfig, build_model

log = logging.getLogger("dyntok_harness.train")


def make_batches(ids: np.ndarray, context: int, batch_size: int, steps: int, seed: int):
    """Yields (x, y) long tensors of shape (batch_size, window).

    Windows are sampled uniformly; when the stream is shorter than the
    model context the window shrinks to what the stream can provide.
    """
    n = len(ids)
    if n < 2:
        raise HarnessError("stream too short to train on (need at least 2 tokens)")
    window = min(context, n - 1)
    g = torch.Generator().manual_seed(seed)
    t = torch.from_numpy(np.ascontiguousarray(ids)).long()
    for _ in range(steps):
        ix = torch.randint(n - window, (batch_size,), generator=g)
        x = torch.stack([t[i : i + window] for i in ix])
        y = torch.stack([t[i + 1 : i + 1 + window] for i in ix])
        yield x, y


def train(
    ckpt: Checkpoint,
    vocab: VocabFile,
    stream: StreamFile,
    steps: int,
    *,
    lr: float = 3e-4,
    batch_size: int = 16,
    seed: int = 0,
    log_every: int = 0,
) -> list[float]:
    """Run ``steps`` optimizer steps in place; returns the per-step losses.

    Zero steps is a no-op by construction: the optimizer is never built,
    so the checkpoint weights stay bit-identical to their initial values.
    The stream must be encoded under exactly the checkpoint's vocabulary.
    """
    if steps < 0:
        raise HarnessError("steps must be >= 0")
    if ckpt.vocab_hash != vocab.sha256:
        raise HarnessError(
            f"checkpoint is bound to vocab {ckpt.vocab_hash[:12]}..., "
            f"refusing stream under {vocab.sha256[:12]}..."
        )
    if stream.vocab_hash != vocab.sha256:
        raise HarnessError("stream header hash does not match the vocabulary file")
    if len(stream.ids) and int(stream.ids.max()) >= ckpt.model.embedding_rows:
        raise HarnessError("stream contains token ids beyond the model's embedding rows")
    losses: list[float] = []
    if steps == 0:
        return losses
    model = ckpt.model
    model.train()
    opt = torch.optim.AdamW(model.parameters(), lr=lr, betas=(0.9, 0.95), weight_decay=0.1)
    for step, (x, y) in enumerate(
        make_batches(stream.ids, model.cfg.context, batch_size, steps, seed)
    ):
        _, loss = model(x, y)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        losses.append(loss.item())
        if log_every and (step + 1) % log_every == 0:
            log.info("step %d/%d loss %.4f", step + 1, steps, losses[-1])
    model.eval()
    ckpt.steps += steps
    return losses


def fresh_checkpoint(
    cfg: ModelConfig, vocab: VocabFile, *, seed: int = 0, stage: int = 0
) -> Checkpoint:
    model = build_model(cfg, len(vocab), seed=seed)
    model.eval()
    return Checkpoint(model=model, vocab_hash=vocab.sha256, stage=stage, steps=0)
