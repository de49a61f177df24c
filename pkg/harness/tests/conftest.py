"""Shared fixtures: engine-produced vocabularies, streams, and grown chains.

Everything the harness consumes here is produced by driving the engine CLI
as a subprocess, exactly as an external trainer would.
"""

import subprocess
import sys

import pytest

sys.path.insert(0, str(__import__("pathlib").Path(__file__).parent))
from corpusgen import make_corpus

from dyntok_harness import find_engine


def run_engine(*args) -> str:
    proc = subprocess.run(
        [find_engine(), "--quiet", *[str(a) for a in args]],
        capture_output=True,
        text=True,
    )
    if proc.returncode != 0:
        raise AssertionError(
            f"engine command {args[0]} failed (exit {proc.returncode}): {proc.stderr}"
        )
    return proc.stdout


@pytest.fixture(scope="session")
def engine() -> str:
    return find_engine()


@pytest.fixture(scope="session")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("engine_files")


@pytest.fixture(scope="session")
def corpus_path(workdir):
    path = workdir / "corpus.txt"
    path.write_text(make_corpus(120_000, seed=7), encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def base_files(engine, workdir, corpus_path):
    """stage-0 inputs: base vocabulary and the corpus encoded under it."""
    vocab = workdir / "v0.jsonl"
    stream = workdir / "s0.bin"
    run_engine("init-vocab", "--input", corpus_path, "--out", vocab)
    run_engine("encode", "--vocab", vocab, "--input", corpus_path, "--out", stream)
    return vocab, stream


@pytest.fixture(scope="session")
def grown_chain(engine, workdir, corpus_path, base_files):
    """Three successive engine growth steps: [(vocab_k, stream_k)] for k = 0..3.

    Growth is driven by the engine's own n-gram entropies; the harness only
    needs vocabularies that genuinely extend each other plus matching streams.
    """
    chain = [base_files]
    vocab, stream = base_files
    for k in range(1, 4):
        model = workdir / f"m{k}.ngram"
        ent = workdir / f"ent{k}.bin"
        nvocab = workdir / f"v{k}.jsonl"
        nstream = workdir / f"s{k}.bin"
        cands = workdir / f"cands{k}.jsonl"
        run_engine("fit-ngram", "--vocab", vocab, "--stream", stream, "--order", 3,
                   "--out", model)
        run_engine("entropy", "--model", model, "--vocab", vocab, "--stream", stream,
                   "--kind", "entropy", "--out", ent)
        run_engine("merge-step", "--vocab", vocab, "--stream", stream, "--entropy", ent,
                   "--epsilon", 1.0, "--cap", 12, "--min-frequency", 30,
                   "--out", cands, "--out-vocab", nvocab)
        run_engine("encode", "--vocab", nvocab, "--input", corpus_path, "--out", nstream)
        chain.append((nvocab, nstream))
        vocab, stream = nvocab, nstream
    return chain
