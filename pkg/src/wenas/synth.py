"""Synthetic corpora with controllable sequential structure.

An order-k Markov chain over a small alphabet gives a corpus whose
conditional entropy is far below its unigram entropy, so perplexity
cleanly separates models that learn the dynamics from ones that only
learn token frequencies.
"""

from pathlib import Path

import numpy as np

SYMBOLS = "abcdefghijklmnopqrstuvwxyz"


def markov_tables(n_symbols, order, rng, peak=0.6, second=0.3):
    """Per-context next-symbol distributions, concentrated on two symbols."""
    contexts = n_symbols**order
    probs = np.full((contexts, n_symbols), (1.0 - peak - second) / (n_symbols - 2))
    for ctx in range(contexts):
        a, b = rng.choice(n_symbols, size=2, replace=False)
        probs[ctx, a] = peak
        probs[ctx, b] = second
    return probs


def make_markov_tokens(n_tokens, n_symbols=16, order=3, seed=0):
    """Sample a token stream from a seeded random order-k chain."""
    rng = np.random.default_rng(seed)
    probs = markov_tables(n_symbols, order, rng)
    cumulative = probs.cumsum(axis=1)
    out = np.empty(n_tokens, dtype=np.int64)
    history = [int(rng.integers(0, n_symbols)) for _ in range(order)]
    out[:order] = history
    draws = rng.random(n_tokens)
    for t in range(order, n_tokens):
        ctx = 0
        for s in history:
            ctx = ctx * n_symbols + s
        out[t] = int(np.searchsorted(cumulative[ctx], draws[t], side="right"))
        history = history[1:] + [int(out[t])]
    return out


def tokens_to_text(tokens, line_len=500):
    letters = [SYMBOLS[t] for t in tokens]
    lines = [
        " ".join(letters[i : i + line_len]) for i in range(0, len(letters), line_len)
    ]
    return "\n".join(lines) + "\n"


def write_markov_corpus(
    dirpath, train_tokens=100_000, valid_tokens=10_000, test_tokens=10_000,
    n_symbols=16, order=3, seed=0, line_len=500,
):
    """Write train/valid/test splits of one long chain into a directory."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    total = train_tokens + valid_tokens + test_tokens
    stream = make_markov_tokens(total, n_symbols=n_symbols, order=order, seed=seed)
    splits = {
        "train": stream[:train_tokens],
        "valid": stream[train_tokens : train_tokens + valid_tokens],
        "test": stream[train_tokens + valid_tokens :],
    }
    for name, toks in splits.items():
        (dirpath / f"{name}.txt").write_text(tokens_to_text(toks, line_len), encoding="utf-8")
    return dirpath
