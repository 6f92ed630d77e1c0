"""Corpus ingestion, vocabulary, contiguous BPTT batching, and perplexity.

Corpora are plain UTF-8 text; a directory holds train.txt / valid.txt /
test.txt. Tokenization is whitespace words by default (one <eos> appended
per line) with a character mode for tiny corpora.
"""

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError

UNK = "<unk>"
EOS = "<eos>"


class Vocab:
    """Bijective token<->id maps; <unk> and <eos> are always ids 0 and 1."""

    def __init__(self):
        self._tokens = [UNK, EOS]
        self._ids = {UNK: 0, EOS: 1}

    def __len__(self):
        return len(self._tokens)

    def add(self, token):
        if token not in self._ids:
            self._ids[token] = len(self._tokens)
            self._tokens.append(token)
        return self._ids[token]

    def id_of(self, token):
        return self._ids.get(token, self._ids[UNK])

    def token_of(self, idx):
        return self._tokens[idx]

    @property
    def tokens(self):
        return tuple(self._tokens)


def _line_tokens(line, level):
    if level == "word":
        return line.split()
    if level == "char":
        return list(line.rstrip("\n"))
    raise ConfigError(f"tokenization level must be 'word' or 'char', got {level!r}")


def tokenize(text, vocab=None, level="word"):
    """Token-id stream from raw text; builds the vocab unless one is given."""
    grow = vocab is None
    if grow:
        vocab = Vocab()
    ids = []
    for line in text.splitlines():
        for tok in _line_tokens(line, level):
            ids.append(vocab.add(tok) if grow else vocab.id_of(tok))
        ids.append(vocab.id_of(EOS))
    if not ids:
        raise ConfigError("corpus is empty")
    return np.asarray(ids, dtype=np.int64), vocab


def load_corpus(path, vocab=None, level="word"):
    """Read one split. The train split defines the vocab; later splits map
    out-of-vocabulary tokens to <unk>."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"corpus file not found: {path}")
    return tokenize(path.read_text(encoding="utf-8"), vocab=vocab, level=level)


def load_corpus_dir(dirpath, level="word"):
    """Load train/valid/test splits; returns (streams dict, vocab)."""
    dirpath = Path(dirpath)
    train, vocab = load_corpus(dirpath / "train.txt", level=level)
    streams = {"train": train}
    for split in ("valid", "test"):
        p = dirpath / f"{split}.txt"
        if p.is_file():
            streams[split], _ = load_corpus(p, vocab=vocab, level=level)
    return streams, vocab


def detokenize(ids, vocab):
    """Rebuild the whitespace-normalized text, one line per <eos>."""
    lines = []
    current = []
    eos = vocab.id_of(EOS)
    for i in ids:
        if i == eos:
            lines.append(" ".join(current))
            current = []
        else:
            current.append(vocab.token_of(int(i)))
    if current:
        lines.append(" ".join(current))
    return "\n".join(lines)


@dataclass
class BatchedCorpus:
    """Token ids reshaped to [batch x steps]; trailing remainder dropped."""

    data: np.ndarray  # int64 [batch, steps]

    @property
    def batch(self):
        return self.data.shape[0]

    @property
    def steps(self):
        return self.data.shape[1]


@dataclass
class BPTTWindow:
    inputs: np.ndarray  # [batch, width]
    targets: np.ndarray  # [batch, width], inputs shifted by one

    @property
    def width(self):
        return self.inputs.shape[1]

    @property
    def token_count(self):
        return self.targets.size


def batchify(stream, batch):
    """Split the flat stream into `batch` contiguous segments."""
    stream = np.asarray(stream, dtype=np.int64)
    if batch < 1:
        raise ConfigError(f"batch must be >= 1, got {batch}")
    steps = len(stream) // batch
    if steps < 2:
        raise ConfigError(f"stream of {len(stream)} tokens is too short for batch {batch}")
    trimmed = stream[: steps * batch]
    return BatchedCorpus(trimmed.reshape(batch, steps))


def bptt_iter(bc, bptt):
    """Tile the batched corpus into windows of up to `bptt` steps.

    Every kept token appears exactly once as a target; a final short
    window is emitted when at least one step remains.
    """
    if bptt < 1:
        raise ConfigError(f"bptt must be >= 1, got {bptt}")
    total = bc.steps - 1  # last position has no target
    for start in range(0, total, bptt):
        width = min(bptt, total - start)
        yield BPTTWindow(
            inputs=np.ascontiguousarray(bc.data[:, start : start + width]),
            targets=np.ascontiguousarray(bc.data[:, start + 1 : start + width + 1]),
        )


def perplexity(total_nll_nats, token_count):
    """exp of the mean per-token negative log-likelihood."""
    if token_count <= 0:
        raise ConfigError("perplexity needs a positive token count")
    return math.exp(total_nll_nats / token_count)


def unigram_perplexity(train_stream, eval_stream, vocab_size):
    """Perplexity of the add-one-smoothed empirical unigram model.

    Serves as the baseline bound: any model that learns sequential
    structure should end up below this on held-out text.
    """
    counts = np.bincount(np.asarray(train_stream), minlength=vocab_size).astype(np.float64)
    probs = (counts + 1.0) / (counts.sum() + vocab_size)
    nll = -np.log(probs[np.asarray(eval_stream)]).sum()
    return perplexity(float(nll), len(eval_stream))
