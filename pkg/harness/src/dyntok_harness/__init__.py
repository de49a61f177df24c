"""Trainer harness for the dyntok engine.

Trains a small causal transformer on engine-encoded streams, grows its
embedding matrices in step with the engine's vocabulary curriculum, and
exports per-position entropy/nll dumps the engine consumes. All engine
interaction goes through files and the engine CLI; nothing here imports
the engine package.
"""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .compare import ComparisonResult, StagePoint, find_engine, run_comparison
from .expand import ExpansionReport, expand_checkpoint
from .export import bits_per_char, export_dump, stream_bits
from .formats import (
    FormatError,
    StreamFile,
    VocabFile,
    read_dump,
    read_stream,
    read_vocab,
    write_dump,
)
from .model import GPT, HarnessError, ModelConfig, build_model, full_preset, reduced_preset
from .train import fresh_checkpoint, make_batches, train

__all__ = [
    "Checkpoint",
    "ComparisonResult",
    "ExpansionReport",
    "FormatError",
    "GPT",
    "HarnessError",
    "ModelConfig",
    "StagePoint",
    "StreamFile",
    "VocabFile",
    "bits_per_char",
    "build_model",
    "expand_checkpoint",
    "export_dump",
    "find_engine",
    "fresh_checkpoint",
    "full_preset",
    "load_checkpoint",
    "make_batches",
    "read_dump",
    "read_stream",
    "read_vocab",
    "reduced_preset",
    "run_comparison",
    "save_checkpoint",
    "stream_bits",
    "train",
    "write_dump",
]

__version__ = "0.1.0"
