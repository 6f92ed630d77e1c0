import numpy as np
import pytest

from wenas.data import (
    batchify,
    bptt_iter,
    detokenize,
    load_corpus,
    load_corpus_dir,
    perplexity,
    tokenize,
    unigram_perplexity,
)
from wenas.errors import ConfigError


def test_tokenize_small_example():
    stream, vocab = tokenize("a b a\n")
    assert len(vocab) == 4  # <unk>, <eos>, a, b
    a, b = vocab.id_of("a"), vocab.id_of("b")
    eos = vocab.id_of("<eos>")
    np.testing.assert_array_equal(stream, [a, b, a, eos])


def test_vocab_ordered_by_first_occurrence():
    _, vocab = tokenize("c a b\nb z\n")
    assert [vocab.token_of(i) for i in range(len(vocab))] == [
        "<unk>", "<eos>", "c", "a", "b", "z",
    ]


def test_oov_maps_to_unk():
    _, vocab = tokenize("a b\n")
    stream, _ = tokenize("a q b\n", vocab=vocab)
    assert stream[1] == vocab.id_of("<unk>") == 0


def test_tokenize_deterministic():
    text = "the quick fox\njumps over\n"
    s1, v1 = tokenize(text)
    s2, v2 = tokenize(text)
    assert np.array_equal(s1, s2)
    assert v1.tokens == v2.tokens


def test_char_level_mode():
    stream, vocab = tokenize("ab\n", level="char")
    assert [vocab.token_of(int(i)) for i in stream] == ["a", "b", "<eos>"]


def test_empty_corpus_rejected():
    with pytest.raises(ConfigError, match="empty"):
        tokenize("")


def test_load_corpus_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_corpus(tmp_path / "nope.txt")


def test_load_corpus_dir(tmp_path):
    (tmp_path / "train.txt").write_text("a b c\n")
    (tmp_path / "valid.txt").write_text("a c q\n")
    streams, vocab = load_corpus_dir(tmp_path)
    assert set(streams) == {"train", "valid"}
    assert streams["valid"][2] == vocab.id_of("<unk>")


def test_detokenize_round_trip():
    text = "a b a\nx y\n"
    stream, vocab = tokenize(text)
    assert detokenize(stream, vocab) == "a b a\nx y"


# ---- batching ----


def test_batchify_exact_split():
    bc = batchify(np.arange(10), 2)
    assert bc.data.shape == (2, 5)
    np.testing.assert_array_equal(bc.data[0], [0, 1, 2, 3, 4])
    np.testing.assert_array_equal(bc.data[1], [5, 6, 7, 8, 9])


def test_batchify_drops_remainder():
    bc = batchify(np.arange(11), 2)
    assert bc.data.shape == (2, 5)  # one token dropped
    assert 10 not in bc.data


def test_batchify_too_short():
    with pytest.raises(ConfigError, match="too short"):
        batchify(np.arange(3), 4)


def test_bptt_windows_hand_tiled():
    bc = batchify(np.arange(10), 2)  # segments of 5, 4 predictable steps
    windows = list(bptt_iter(bc, 2))
    assert len(windows) == 2
    np.testing.assert_array_equal(windows[0].inputs, [[0, 1], [5, 6]])
    np.testing.assert_array_equal(windows[0].targets, [[1, 2], [6, 7]])
    np.testing.assert_array_equal(windows[1].inputs, [[2, 3], [7, 8]])
    np.testing.assert_array_equal(windows[1].targets, [[3, 4], [8, 9]])


def test_bptt_emits_short_final_window():
    bc = batchify(np.arange(12), 2)  # 5 usable steps per segment
    widths = [w.width for w in bptt_iter(bc, 3)]
    assert widths == [3, 2]


def test_targets_are_inputs_shifted_by_one():
    bc = batchify(np.arange(40), 4)
    for w in bptt_iter(bc, 3):
        np.testing.assert_array_equal(w.targets[:, :-1], w.inputs[:, 1:])


def test_every_kept_token_is_a_target_once():
    stream = np.arange(57)
    bc = batchify(stream, 4)
    seen = []
    for w in bptt_iter(bc, 5):
        seen.extend(w.targets.reshape(-1).tolist())
    expected = []
    for row in bc.data:
        expected.extend(row[1:].tolist())
    assert sorted(seen) == sorted(expected)


# ---- metrics ----


def test_perplexity_uniform_and_perfect():
    import math

    assert perplexity(math.log(10.0) * 50, 50) == pytest.approx(10.0)
    assert perplexity(0.0, 7) == 1.0
    with pytest.raises(ConfigError):
        perplexity(1.0, 0)


def test_unigram_perplexity_bounded_by_vocab():
    rng = np.random.default_rng(0)
    train = rng.integers(0, 12, size=5000)
    ppl = unigram_perplexity(train, train, 12)
    assert ppl <= 12.0


def test_unigram_handles_unseen_eval_tokens():
    train = np.zeros(100, dtype=np.int64)
    eval_stream = np.array([0, 1, 1])
    ppl = unigram_perplexity(train, eval_stream, 2)
    assert np.isfinite(ppl) and ppl > 1.0
