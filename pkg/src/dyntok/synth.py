"""Deterministic synthetic corpora: a repeated phrase bank with noise bursts.

The generator layers structure so successive expansion stages keep finding
work: characters compose into a fixed word list, words into a fixed phrase
bank, and phrases follow a skewed successor table, so predictable spans
exist at every granularity.  Noise bursts of uniform random characters keep
a population of genuinely unpredictable single-character tokens in every
split, which is what the per-length BPC contrast measures against.
"""

from __future__ import annotations

import random

ALPHABET = "abcdefghijklmnopqrstuvwxyz"


def phrase_bank_corpus(
    n_chars: int,
    seed: int = 0,
    *,
    n_words: int = 50,
    n_phrases: int = 80,
    word_len: tuple[int, int] = (4, 7),
    words_per_phrase: tuple[int, int] = (3, 6),
    noise_rate: float = 0.10,
    noise_len: tuple[int, int] = (20, 60),
    successor_bias: float = 0.85,
) -> str:
    if n_chars < 1:
        raise ValueError("n_chars must be positive")
    rng = random.Random(seed)

    words: list[str] = []
    seen = set()
    while len(words) < n_words:
        w = "".join(rng.choice(ALPHABET) for _ in range(rng.randint(*word_len)))
        if w not in seen:
            seen.add(w)
            words.append(w)

    phrases = [
        " ".join(rng.choice(words) for _ in range(rng.randint(*words_per_phrase)))
        for _ in range(n_phrases)
    ]
    # each phrase prefers a few successors, so phrase bigrams repeat too
    successors = [
        [rng.randrange(n_phrases) for _ in range(3)] for _ in range(n_phrases)
    ]

    parts: list[str] = []
    total = 0
    current = 0
    noise_pool = ALPHABET + " "
    while total < n_chars:
        if rng.random() < noise_rate:
            burst = "".join(
                rng.choice(noise_pool) for _ in range(rng.randint(*noise_len))
            )
            piece = burst + " "
        else:
            if rng.random() < successor_bias:
                current = rng.choice(successors[current])
            else:
                current = rng.randrange(n_phrases)
            piece = phrases[current] + ". "
        parts.append(piece)
        total += len(piece)
    return "".join(parts)[:n_chars]
