"""Checkpoints: model weights plus a manifest binding them to a vocabulary.

A checkpoint is two files written atomically (temp + rename so a crash
never leaves a half-written file behind):

  <stem>.pt            torch state dict and model config
  <stem>.manifest.json {"vocab_hash": ..., "stage": ..., "steps": ...}

The manifest's vocab_hash is the sha256 of the vocabulary file the model
was constructed against; training and export refuse inputs whose hash
does not match it.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass

import torch

from .model import GPT, HarnessError, ModelConfig


@dataclass
class Checkpoint:
    model: GPT
    vocab_hash: str
    stage: int
    steps: int

    @property
    def manifest(self) -> dict:
        return {"vocab_hash": self.vocab_hash, "stage": self.stage, "steps": self.steps}


def _atomic_write(path: str, data: bytes) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def save_checkpoint(ckpt: Checkpoint, stem) -> None:
    stem = str(stem)
    payload = {
        "config": dataclasses.asdict(ckpt.model.cfg),
        "vocab_size": ckpt.model.vocab_size,
        "state": ckpt.model.state_dict(),
    }
    tmp = f"{stem}.pt.tmp"
    torch.save(payload, tmp)
    os.replace(tmp, f"{stem}.pt")
    _atomic_write(
        f"{stem}.manifest.json",
        json.dumps(ckpt.manifest, sort_keys=True).encode("utf-8"),
    )


def load_checkpoint(stem) -> Checkpoint:
    stem = str(stem)
    try:
        with open(f"{stem}.manifest.json", "rb") as f:
            manifest = json.loads(f.read())
        payload = torch.load(f"{stem}.pt", map_location="cpu", weights_only=True)
    except FileNotFoundError as exc:
        raise HarnessError(f"checkpoint {stem!r} is missing {exc.filename}") from exc
    cfg = ModelConfig(**payload["config"])
    model = GPT(cfg, int(payload["vocab_size"]))
    model.load_state_dict(payload["state"])
    return Checkpoint(
        model=model,
        vocab_hash=str(manifest["vocab_hash"]),
        stage=int(manifest["stage"]),
        steps=int(manifest["steps"]),
    )
