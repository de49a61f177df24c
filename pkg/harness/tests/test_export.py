import math

import numpy as np
import pytest
import torch

from dyntok_harness import (
    Checkpoint,
    HarnessError,
    ModelConfig,
    bits_per_char,
    build_model,
    export_dump,
    fresh_checkpoint,
    read_dump,
    read_stream,
    read_vocab,
    reduced_preset,
    stream_bits,
)

TINY = ModelConfig(context=48, layers=2, heads=2, dim=48, dropout=0.0)


class TestUntrainedModel:
    def test_entropies_near_uniform(self, base_files):
        """Standard init gives a near-uniform softmax: within 0.1 bits of log2 |V|."""
        vocab = read_vocab(base_files[0])
        stream = read_stream(base_files[1], vocab)
        ckpt = fresh_checkpoint(reduced_preset(), vocab, seed=0)
        ent, _ = stream_bits(ckpt.model, stream.ids[:3000])
        bound = math.log2(len(vocab))
        assert float(np.abs(ent - bound).max()) < 0.1

    def test_first_position_is_uniform_prior(self, base_files):
        vocab = read_vocab(base_files[0])
        stream = read_stream(base_files[1], vocab)
        ckpt = fresh_checkpoint(TINY, vocab, seed=1)
        ent, nll = stream_bits(ckpt.model, stream.ids[:200])
        assert ent[0] == nll[0] == math.log2(len(vocab))


class TestStreamBits:
    def test_bounds_and_finiteness(self, base_files):
        vocab = read_vocab(base_files[0])
        stream = read_stream(base_files[1], vocab)
        ckpt = fresh_checkpoint(TINY, vocab, seed=2)
        ent, nll = stream_bits(ckpt.model, stream.ids[:1500])
        assert np.isfinite(ent).all() and np.isfinite(nll).all()
        assert (ent >= 0).all()
        assert (ent <= math.log2(len(vocab)) + 1e-6).all()
        assert (nll > 0).all()

    def test_covers_ragged_tail(self, base_files):
        """Stream length not a multiple of the context still fills every slot."""
        vocab = read_vocab(base_files[0])
        stream = read_stream(base_files[1], vocab)
        n = TINY.context * 2 + 7
        ckpt = fresh_checkpoint(TINY, vocab, seed=3)
        ent, nll = stream_bits(ckpt.model, stream.ids[:n])
        assert len(ent) == len(nll) == n
        assert np.isfinite(ent).all() and np.isfinite(nll).all()

    def test_eval_mode_deterministic(self, base_files):
        vocab = read_vocab(base_files[0])
        stream = read_stream(base_files[1], vocab)
        ckpt = fresh_checkpoint(reduced_preset(), vocab, seed=4)  # dropout 0.2 preset
        a = stream_bits(ckpt.model, stream.ids[:600])
        b = stream_bits(ckpt.model, stream.ids[:600])
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_batching_invariant(self, base_files):
        vocab = read_vocab(base_files[0])
        stream = read_stream(base_files[1], vocab)
        ckpt = fresh_checkpoint(TINY, vocab, seed=5)
        a = stream_bits(ckpt.model, stream.ids[:1000], batch_windows=2)
        b = stream_bits(ckpt.model, stream.ids[:1000], batch_windows=64)
        assert np.allclose(a[0], b[0], atol=1e-5) and np.allclose(a[1], b[1], atol=1e-5)

    def test_rejects_ids_beyond_vocab(self, base_files):
        vocab = read_vocab(base_files[0])
        ckpt = fresh_checkpoint(TINY, vocab)
        with pytest.raises(HarnessError, match="vocab size"):
            stream_bits(ckpt.model, np.array([0, 1, len(vocab) + 5]))

    def test_bits_per_char(self):
        assert bits_per_char(np.array([2.0, 4.0, 6.0]), 6) == 2.0
        with pytest.raises(HarnessError, match="positive"):
            bits_per_char(np.array([1.0]), 0)


class TestExportDump:
    def test_roundtrip_through_dump_file(self, base_files, tmp_path):
        vocab = read_vocab(base_files[0])
        stream = read_stream(base_files[1], vocab)
        sliced = _slice_stream(stream, 800)
        ckpt = fresh_checkpoint(TINY, vocab, seed=6)
        out = tmp_path / "nll.bin"
        values = export_dump(ckpt, vocab, sliced, "nll", out, mode="text")
        back, header = read_dump(out)
        assert np.array_equal(back, values)
        assert header["kind"] == "nll"
        assert header["unit"] == "bits"
        assert header["vocab_hash"] == vocab.sha256
        assert header["stream_length"] == 800

    def test_rejects_checkpoint_bound_elsewhere(self, base_files, grown_chain, tmp_path):
        v1 = read_vocab(grown_chain[1][0])
        vocab = read_vocab(base_files[0])
        stream = read_stream(base_files[1], vocab)
        ckpt = fresh_checkpoint(TINY, v1)
        with pytest.raises(HarnessError, match="trained under vocab"):
            export_dump(ckpt, vocab, stream, "nll", tmp_path / "d.bin")

    def test_rejects_stream_under_other_vocab(self, base_files, grown_chain, tmp_path):
        vocab = read_vocab(base_files[0])
        other_stream = read_stream(grown_chain[1][1])
        ckpt = fresh_checkpoint(TINY, vocab)
        with pytest.raises(HarnessError, match="does not match"):
            export_dump(ckpt, vocab, other_stream, "nll", tmp_path / "d.bin")

    def test_rejects_row_count_mismatch(self, base_files, tmp_path):
        vocab = read_vocab(base_files[0])
        stream = read_stream(base_files[1], vocab)
        model = build_model(TINY, len(vocab) - 3)
        ckpt = Checkpoint(model=model, vocab_hash=vocab.sha256, stage=0, steps=0)
        with pytest.raises(HarnessError, match="embedding rows"):
            export_dump(ckpt, vocab, stream, "entropy", tmp_path / "d.bin")

    def test_rejects_unknown_kind(self, base_files, tmp_path):
        vocab = read_vocab(base_files[0])
        stream = read_stream(base_files[1], vocab)
        ckpt = fresh_checkpoint(TINY, vocab)
        with pytest.raises(HarnessError, match="kind"):
            export_dump(ckpt, vocab, stream, "surprise", tmp_path / "d.bin")


def _slice_stream(stream, n):
    from dyntok_harness import StreamFile

    ids = stream.ids[:n]
    offsets = stream.offsets[:n]
    return StreamFile(
        ids=ids, offsets=offsets, vocab_hash=stream.vocab_hash,
        text_length=int(n),  # base vocab: one char per token
    )
