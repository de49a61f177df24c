"""Greedy longest-match encoding, batch reconciliation, and stream dumps."""

from __future__ import annotations

import random

import pytest
from hypothesis import given, settings, strategies as st

from dyntok.codec import (
    CodecError,
    build_trie,
    decode,
    encode,
    encode_batched,
    load_stream,
    save_stream,
)
from dyntok.merge import MergeCandidate
from dyntok.vocab import add, init_base

from oracles import grow_random_vocab, random_text, reference_encode

MIXED_ALPHABET = "ab cdeéß日本"


def vocab_over(alphabet, merges=()):
    voc = init_base(alphabet)
    for surface, comps in merges:
        voc = add(
            voc,
            [MergeCandidate(component_ids=tuple(comps), surface=surface, frequency=1)],
            cap=1,
        )
    return voc


class TestTrie:
    def test_terminal_layout(self):
        voc = vocab_over("ab", [("ab", (0, 1))])
        trie = build_trie(voc)
        assert trie.max_depth == 2
        assert trie.root["a"][""] == 0
        assert trie.root["b"][""] == 1
        assert trie.root["a"]["b"][""] == 2

    def test_single_edge(self):
        trie = build_trie(init_base("a"))
        assert trie.max_depth == 1
        assert list(trie.root) == ["a"]


class TestEncode:
    def test_longest_match_wins(self):
        voc = vocab_over("abc", [("ab", (0, 1))])
        trie = build_trie(voc)
        stream = encode("abc", trie, voc)
        assert [voc.surface(i) for i in stream.ids] == ["ab", "c"]
        assert stream.offsets == (0, 2)

    def test_whole_text_single_token(self):
        voc = vocab_over("ab", [("ab", (0, 1)), ("abab", (2, 2))])
        trie = build_trie(voc)
        stream = encode("abab", trie, voc)
        assert [voc.surface(i) for i in stream.ids] == ["abab"]

    def test_empty_text(self):
        voc = init_base("ab")
        stream = encode("", build_trie(voc), voc)
        assert len(stream) == 0
        assert decode(stream, voc) == ""

    def test_merges_cross_spaces(self):
        # code-point order puts the space at id 0
        voc = vocab_over("ab ", [("a b", (1, 0, 2))])
        trie = build_trie(voc)
        stream = encode("a b", trie, voc)
        assert [voc.surface(i) for i in stream.ids] == ["a b"]

    def test_unknown_character_strict(self):
        voc = init_base("ab")
        with pytest.raises(CodecError, match="position 1"):
            encode("aXb", build_trie(voc), voc)

    def test_unknown_character_replace(self):
        voc = init_base("ab")
        trie = build_trie(voc)
        stream = encode("aXb", trie, voc, unknown="replace", replacement="a")
        assert decode(stream, voc) == "aab"

    def test_replace_needs_base_character(self):
        voc = init_base("ab")
        with pytest.raises(CodecError, match="not a base character"):
            encode("aXb", build_trie(voc), voc, unknown="replace", replacement="Z")

    def test_offsets_tile_the_text(self):
        rng = random.Random(11)
        voc = grow_random_vocab(rng, MIXED_ALPHABET, rounds=3, per_round=8)
        trie = build_trie(voc)
        text = random_text(rng, MIXED_ALPHABET, 400)
        stream = encode(text, trie, voc)
        pos = 0
        for tid, off in zip(stream.ids, stream.offsets):
            assert off == pos
            pos += len(voc.surface(tid))
        assert pos == len(text)


class TestAgainstReference:
    def test_matches_naive_scan(self):
        rng = random.Random(12)
        for _ in range(40):
            voc = grow_random_vocab(rng, "abcd", rounds=rng.randint(0, 3), per_round=6)
            trie = build_trie(voc)
            for _ in range(25):
                text = random_text(rng, "abcd", 64)
                stream = encode(text, trie, voc)
                ref_ids, ref_offsets = reference_encode(text, voc)
                assert list(stream.ids) == ref_ids
                assert list(stream.offsets) == ref_offsets


class TestBatched:
    def test_equivalent_on_random_inputs(self):
        rng = random.Random(13)
        for _ in range(60):
            voc = grow_random_vocab(rng, "ab c", rounds=rng.randint(0, 3), per_round=6)
            trie = build_trie(voc)
            text = random_text(rng, "ab c", 300)
            chunk = rng.randint(max(trie.max_depth, 1), 80)
            assert encode_batched(text, trie, voc, chunk) == encode(text, trie, voc)

    def test_token_straddling_every_boundary(self):
        voc = vocab_over("ab", [("ab", (0, 1))])
        trie = build_trie(voc)
        text = "ab" * 40
        for chunk in range(2, 12):
            stream = encode_batched(text, trie, voc, chunk)
            assert stream == encode(text, trie, voc)

    def test_alternation_desync_past_fixed_windows(self):
        # right-chunk tokenization desyncs from the full-text stream for the
        # whole remainder of the chunk; the stitch must still be exact
        voc = vocab_over("ab", [("ab", (0, 1)), ("ba", (1, 0))])
        trie = build_trie(voc)
        text = "a" + "ab" * 64 + "b"
        for chunk in range(2, 20):
            assert encode_batched(text, trie, voc, chunk) == encode(text, trie, voc)

    def test_short_text_trivially_equal(self):
        voc = init_base("ab")
        trie = build_trie(voc)
        assert encode_batched("ab", trie, voc, 100) == encode("ab", trie, voc)

    def test_chunk_below_longest_surface_rejected(self):
        voc = vocab_over("ab", [("ab", (0, 1)), ("abab", (2, 2))])
        with pytest.raises(CodecError, match="chunk smaller than longest token"):
            encode_batched("abab" * 3, build_trie(voc), voc, 3)


class TestDecode:
    def test_out_of_range_id(self):
        voc = init_base("ab")
        stream = encode("ab", build_trie(voc), voc)
        bad = type(stream)(ids=(0, 99), offsets=(0, 1))
        with pytest.raises(CodecError, match="out of range"):
            decode(bad, voc)


class TestStreamDump:
    def test_round_trip(self, tmp_path):
        rng = random.Random(14)
        voc = grow_random_vocab(rng, MIXED_ALPHABET, rounds=2, per_round=6)
        trie = build_trie(voc)
        text = random_text(rng, MIXED_ALPHABET, 500)
        stream = encode(text, trie, voc)
        path = tmp_path / "stream.bin"
        save_stream(stream, path, voc, len(text))
        loaded, header = load_stream(path, voc)
        assert loaded == stream
        assert header["text_length"] == len(text)

    def test_wrong_vocab_rejected(self, tmp_path):
        voc = init_base("ab")
        other = init_base("abc")
        stream = encode("ab", build_trie(voc), voc)
        path = tmp_path / "stream.bin"
        save_stream(stream, path, voc, 2)
        with pytest.raises(CodecError, match="different vocabulary"):
            load_stream(path, other)

    def test_truncated_payload_rejected(self, tmp_path):
        voc = init_base("ab")
        stream = encode("abab", build_trie(voc), voc)
        path = tmp_path / "stream.bin"
        save_stream(stream, path, voc, 4)
        data = path.read_bytes()
        path.write_bytes(data[:-4])
        with pytest.raises(CodecError, match="payload"):
            load_stream(path)


@settings(max_examples=200, deadline=None)
@given(
    st.text(alphabet=MIXED_ALPHABET, max_size=200),
    st.integers(min_value=0, max_value=2**32 - 1),
)
def test_round_trip_property(text, seed):
    rng = random.Random(seed)
    voc = grow_random_vocab(rng, MIXED_ALPHABET, rounds=rng.randint(0, 3), per_round=5)
    trie = build_trie(voc)
    stream = encode(text, trie, voc)
    assert decode(stream, voc) == text


@settings(max_examples=200, deadline=None)
@given(
    st.text(alphabet="ab c", max_size=150),
    st.integers(min_value=0, max_value=2**32 - 1),
    st.integers(min_value=0, max_value=60),
)
def test_batched_equivalence_property(text, seed, chunk_extra):
    rng = random.Random(seed)
    voc = grow_random_vocab(rng, "ab c", rounds=rng.randint(0, 3), per_round=5)
    trie = build_trie(voc)
    chunk = max(trie.max_depth, 1) + chunk_extra
    assert encode_batched(text, trie, voc, chunk) == encode(text, trie, voc)
