"""Warm-start expansion contract, exercised with the reduced preset throughout."""

import json

import numpy as np
import pytest
import torch

from dyntok_harness import (
    HarnessError,
    expand_checkpoint,
    fresh_checkpoint,
    read_stream,
    read_vocab,
    reduced_preset,
)
from dyntok_harness.formats import flatten_to_base_ids, iter_spans


@pytest.fixture(scope="module")
def expanded(grown_chain):
    """One expansion v0 -> v1 plus everything needed to inspect it."""
    (v0_path, s0_path), (v1_path, _) = grown_chain[0], grown_chain[1]
    v0, v1 = read_vocab(v0_path), read_vocab(v1_path)
    sample = read_stream(s0_path, v0)
    ckpt = fresh_checkpoint(reduced_preset(), v0, seed=11)
    before_wte = ckpt.model.wte.weight.detach().clone()
    before_head = ckpt.model.lm_head.weight.detach().clone()
    old_model_logits = _logits_on_old_context(ckpt.model, len(v0))
    ckpt, report = expand_checkpoint(ckpt, v0, v1, sample)
    return dict(
        ckpt=ckpt, report=report, v0=v0, v1=v1, sample=sample,
        before_wte=before_wte, before_head=before_head,
        old_model_logits=old_model_logits,
    )


def _logits_on_old_context(model, old_n: int) -> torch.Tensor:
    model.eval()
    x = torch.randint(0, old_n, (3, 40), generator=torch.Generator().manual_seed(2))
    with torch.no_grad():
        logits, _ = model(x)
    return logits


class TestOldModelPreserved:
    def test_old_input_rows_bit_identical(self, expanded):
        n0 = len(expanded["v0"])
        assert torch.equal(expanded["ckpt"].model.wte.weight[:n0], expanded["before_wte"])

    def test_old_head_rows_bit_identical(self, expanded):
        n0 = len(expanded["v0"])
        assert torch.equal(expanded["ckpt"].model.lm_head.weight[:n0], expanded["before_head"])

    def test_old_token_logits_identical(self, expanded):
        """Same old-token context, before vs after expansion: old channels exact."""
        n0 = len(expanded["v0"])
        model = expanded["ckpt"].model
        model.eval()
        x = torch.randint(0, n0, (3, 40), generator=torch.Generator().manual_seed(2))
        with torch.no_grad():
            logits, _ = model(x)
        assert torch.equal(logits[:, :, :n0], expanded["old_model_logits"])

    def test_row_counts_track_vocab_across_three_stages(self, grown_chain):
        v0 = read_vocab(grown_chain[0][0])
        ckpt = fresh_checkpoint(reduced_preset(), v0, seed=0)
        prev_vocab = v0
        for k in range(1, 4):
            sample = read_stream(grown_chain[k - 1][1], prev_vocab)
            new_vocab = read_vocab(grown_chain[k][0])
            ckpt, _ = expand_checkpoint(ckpt, prev_vocab, new_vocab, sample)
            assert ckpt.model.embedding_rows == len(new_vocab)
            assert ckpt.model.wte.weight.shape[0] == len(new_vocab)
            assert ckpt.model.lm_head.weight.shape[0] == len(new_vocab)
            assert ckpt.stage == k
            prev_vocab = new_vocab

    def test_all_new_tokens_seeded_from_context(self, expanded):
        report = expanded["report"]
        assert report.added == len(expanded["v1"]) - len(expanded["v0"])
        assert report.added > 0
        assert report.fallback == 0  # growth came from real spans of this corpus
        assert report.sampled == report.added


class TestSeedingRules:
    def test_new_head_rows_copy_final_component(self, expanded):
        v1, ckpt = expanded["v1"], expanded["ckpt"]
        head = ckpt.model.lm_head.weight
        for v in range(len(expanded["v0"]), len(v1)):
            assert torch.equal(head[v], head[v1.components[v][-1]])

    def test_new_input_rows_match_span_hidden_state(self, expanded):
        """Recompute the hidden state at the first span occurrence independently."""
        v0, v1 = expanded["v0"], expanded["v1"]
        sample, model = expanded["sample"], expanded["ckpt"].model
        model.eval()
        checked = 0
        for v in range(len(v0), min(len(v0) + 4, len(v1))):
            span = flatten_to_base_ids(v1, v, floor=len(v0))
            start = next(iter_spans(sample.ids, span, max_hits=1))
            end = start + len(span)
            lo = max(0, end - model.cfg.context)
            x = torch.from_numpy(sample.ids[lo:end]).long().unsqueeze(0)
            with torch.no_grad():
                _, h = model.hidden(x)
            assert torch.equal(model.wte.weight[v], h[0, -1])
            checked += 1
        assert checked > 0

    def test_fallback_mean_with_warning(self, grown_chain, tmp_path, caplog):
        v0_path, s0_path = grown_chain[0]
        v0 = read_vocab(v0_path)
        sample = read_stream(s0_path, v0)
        space, dot = v0.surfaces.index(" "), v0.surfaces.index(".")
        # " ." never occurs: every period in the corpus follows a letter
        assert next(iter_spans(sample.ids, (space, dot), max_hits=1), None) is None
        ext = tmp_path / "ext.jsonl"
        row = {"id": len(v0), "surface": " .", "components": [space, dot],
               "iteration": 1, "frequency": 1}
        ext.write_bytes(v0_path.read_bytes() + (json.dumps(row) + "\n").encode())
        v1 = read_vocab(ext)
        ckpt = fresh_checkpoint(reduced_preset(), v0, seed=5)
        with caplog.at_level("WARNING", logger="dyntok_harness.expand"):
            ckpt, report = expand_checkpoint(ckpt, v0, v1, sample)
        assert report.fallback == 1 and report.sampled == 0
        assert any("never occurs" in r.message for r in caplog.records)
        wte = ckpt.model.wte.weight
        expected = wte[[space, dot]].mean(dim=0)
        assert torch.equal(wte[len(v0)], expected)
        assert torch.equal(ckpt.model.lm_head.weight[len(v0)], ckpt.model.lm_head.weight[dot])

    def test_occurrence_averaging_changes_seed(self, grown_chain):
        (v0_path, s0_path), (v1_path, _) = grown_chain[0], grown_chain[1]
        v0, v1 = read_vocab(v0_path), read_vocab(v1_path)
        sample = read_stream(s0_path, v0)
        one, _ = expand_checkpoint(
            fresh_checkpoint(reduced_preset(), v0, seed=7), v0, v1, sample, occurrences=1
        )
        avg, _ = expand_checkpoint(
            fresh_checkpoint(reduced_preset(), v0, seed=7), v0, v1, sample, occurrences=8
        )
        v = len(v0)
        assert one.model.wte.weight.shape == avg.model.wte.weight.shape
        assert not torch.equal(one.model.wte.weight[v], avg.model.wte.weight[v])


class TestGradientSanity:
    def test_new_rows_receive_gradient(self, grown_chain):
        (v0_path, _), (v1_path, s1_path) = grown_chain[0], grown_chain[1]
        v0, v1 = read_vocab(v0_path), read_vocab(v1_path)
        sample = read_stream(grown_chain[0][1], v0)
        new_stream = read_stream(s1_path, v1)
        ckpt, _ = expand_checkpoint(
            fresh_checkpoint(reduced_preset(), v0, seed=3), v0, v1, sample
        )
        model = ckpt.model
        v, occ = None, None
        for cand in range(len(v0), len(v1)):
            hits = np.flatnonzero(new_stream.ids == cand)
            if len(hits):
                v, occ = cand, int(hits[0])
                break
        assert v is not None, "no new token survives re-encoding"
        lo = max(0, occ - 1)
        window = new_stream.ids[lo : lo + model.cfg.context]
        x = torch.from_numpy(window[:-1]).long().unsqueeze(0)
        y = torch.from_numpy(window[1:]).long().unsqueeze(0)
        assert v in x and v in y  # the new token is both input and target here
        model.train()
        _, loss = model(x, y)
        loss.backward()
        assert float(model.wte.weight.grad[v].abs().sum()) > 0
        assert float(model.lm_head.weight.grad[v].abs().sum()) > 0


class TestErrors:
    def test_rejects_shrinking_vocab(self, grown_chain):
        v0 = read_vocab(grown_chain[0][0])
        v1 = read_vocab(grown_chain[1][0])
        sample = read_stream(grown_chain[1][1], v1)
        ckpt = fresh_checkpoint(reduced_preset(), v1)
        with pytest.raises(HarnessError, match="smaller"):
            expand_checkpoint(ckpt, v1, v0, sample)

    def test_rejects_diverged_prefix(self, grown_chain, tmp_path):
        v0_path, s0_path = grown_chain[0]
        v0 = read_vocab(v0_path)
        sample = read_stream(s0_path, v0)
        rows = [json.loads(line) for line in v0_path.read_text().splitlines()]
        rows[0]["surface"] = "@"
        bad = tmp_path / "bad.jsonl"
        bad.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        ckpt = fresh_checkpoint(reduced_preset(), v0)
        with pytest.raises(HarnessError, match="prefix differs"):
            expand_checkpoint(ckpt, v0, read_vocab(bad), sample)

    def test_rejects_sample_under_wrong_vocab(self, grown_chain):
        v0 = read_vocab(grown_chain[0][0])
        v1 = read_vocab(grown_chain[1][0])
        wrong_sample = read_stream(grown_chain[1][1])  # encoded under v1, not v0
        ckpt = fresh_checkpoint(reduced_preset(), v0)
        with pytest.raises(HarnessError, match="old vocabulary"):
            expand_checkpoint(ckpt, v0, v1, wrong_sample)

    def test_rejects_checkpoint_bound_elsewhere(self, grown_chain):
        v0 = read_vocab(grown_chain[0][0])
        v1 = read_vocab(grown_chain[1][0])
        sample = read_stream(grown_chain[0][1], v0)
        ckpt = fresh_checkpoint(reduced_preset(), v1)  # bound to v1 already
        with pytest.raises(HarnessError, match="not bound"):
            expand_checkpoint(ckpt, v0, v1, sample)

    def test_manifest_updated(self, expanded):
        ckpt = expanded["ckpt"]
        assert ckpt.vocab_hash == expanded["v1"].sha256
        assert ckpt.stage == 1
        assert ckpt.steps == 0
