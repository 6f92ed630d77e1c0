import json
import math

import numpy as np
import pytest

from wenas.data import batchify, tokenize
from wenas.errors import ConfigError
from wenas.genome import Genome, NodeGene, OpKind, random_genome, validate
from wenas.optim import OptimizerConfig
from wenas.search import (
    SearchConfig,
    plan_rounds,
    round_once,
    run_search,
    run_search_with_restarts,
    select_best,
)
from wenas.synth import make_markov_tokens, tokens_to_text


def tiny_cfg(**kw):
    base = dict(
        total_networks=8,
        net_batch=4,
        seed_size=2,
        levels=4,
        epochs_per_round=1,
        emb_dim=10,
        hidden_dim=10,
        data_batch=6,
        bptt=8,
        dropout_embed=0.0,
        dropout_input=0.0,
        dropout_hidden=0.0,
        dropout_output=0.0,
        optimizer=OptimizerConfig(kind="adam", learning_rate=2e-3),
        master_seed=5,
    )
    base.update(kw)
    return SearchConfig(**base).validate()


@pytest.fixture(scope="module")
def corpus():
    text = tokens_to_text(make_markov_tokens(2600, n_symbols=9, seed=31), line_len=80)
    stream, vocab = tokenize(text)
    return stream, vocab


def test_config_invariants():
    with pytest.raises(ConfigError):
        tiny_cfg(total_networks=0)
    with pytest.raises(ConfigError):
        tiny_cfg(net_batch=9)  # B > T
    with pytest.raises(ConfigError):
        tiny_cfg(seed_size=5)  # K > B
    with pytest.raises(ConfigError):
        tiny_cfg(seed_size=0)
    with pytest.raises(ConfigError):
        tiny_cfg(epochs_per_round=0)


def test_plan_rounds_arithmetic():
    assert plan_rounds(8, 4) == [4, 4]
    assert plan_rounds(10, 4) == [4, 4, 2]
    assert plan_rounds(4, 4) == [4]
    assert plan_rounds(10000, 100) == [100] * 100


def test_select_best_rules():
    g1 = Genome(2, (NodeGene(0, OpKind.TANH),))
    g2 = Genome(2, (NodeGene(0, OpKind.RELU),))
    assert select_best([(g1, 0.9)]) == g1
    assert select_best([(g1, 0.3), (g2, 0.3)]) == g1  # tie: lower index
    assert select_best([(g1, 0.2), (g2, 0.5)]) == g2
    with pytest.raises(ConfigError):
        select_best([])


def test_two_round_search_mechanics(corpus):
    stream, vocab = corpus
    cfg = tiny_cfg()
    report = run_search(cfg, stream, len(vocab))
    assert report.total_rounds == 2
    assert report.total_epochs == 2
    assert len(report.rounds) == 2
    assert len(report.rounds[0].candidates) == 4
    assert len(report.rounds[1].candidates) == 6  # 4 fresh + 2 seeds
    for r in report.rounds:
        weights = [w for _, _, _, w in r.table]
        assert abs(sum(weights) - 1.0) <= 1e-9
        assert weights == sorted(weights, reverse=True)
        # seeds are exactly the table's top K
        top = [g for _, _, g, _ in r.table[: len(r.seeds_out)]]
        assert [g for g, _ in r.seeds_out] == top
    assert validate(report.best) == []


def test_pool_partition_bookkeeping(corpus):
    stream, vocab = corpus
    cfg = tiny_cfg(total_networks=10, net_batch=4)  # final short round of 2
    report = run_search(cfg, stream, len(vocab))
    assert report.total_rounds == 3
    assert [len(r.batch) for r in report.rounds] == [4, 4, 2]
    seen = []
    for r in report.rounds:
        seen.extend(g.canonical_key() for g in r.batch)
    assert len(seen) == 10
    assert len(set(seen)) == 10  # every pool genome in exactly one round's batch


def test_seeds_carry_into_next_round(corpus):
    stream, vocab = corpus
    cfg = tiny_cfg()
    report = run_search(cfg, stream, len(vocab))
    out1 = [g for g, _ in report.rounds[0].seeds_out]
    assert report.rounds[1].seed_in == out1
    union = {g.canonical_key() for g in report.rounds[1].candidates}
    for g in out1:
        assert g.canonical_key() in union


def test_best_equals_argmax_of_final_seeds(corpus):
    stream, vocab = corpus
    cfg = tiny_cfg(master_seed=9)
    report = run_search(cfg, stream, len(vocab))
    final = report.rounds[-1].seeds_out
    assert report.best == select_best(final)
    best_weight = max(w for _, w in final)
    assert final[0][1] == best_weight


def test_full_run_determinism(corpus):
    stream, vocab = corpus
    a = run_search(tiny_cfg(master_seed=3), stream, len(vocab))
    b = run_search(tiny_cfg(master_seed=3), stream, len(vocab))
    ja = json.loads(a.to_json())
    jb = json.loads(b.to_json())
    ja.pop("wall_time_s")
    jb.pop("wall_time_s")
    assert ja == jb


def test_round_once_k_equals_union(corpus):
    stream, vocab = corpus
    cfg = tiny_cfg(seed_size=4, net_batch=4)
    rng = np.random.default_rng(0)
    batch = [random_genome(4, rng) for _ in range(3)]
    bc = batchify(stream, cfg.data_batch)
    candidates, table, seeds_out, _ = round_once(
        batch, [], cfg, bc, len(vocab), init_seed=1, dropout_seed=2
    )
    assert len(seeds_out) == 3  # K capped at union size
    assert {g.canonical_key() for g, _ in seeds_out} == {
        g.canonical_key() for g in candidates
    }


def test_round_once_deterministic(corpus):
    stream, vocab = corpus
    cfg = tiny_cfg()
    rng = np.random.default_rng(1)
    batch = [random_genome(4, rng) for _ in range(3)]
    bc = batchify(stream, cfg.data_batch)
    t1 = round_once(batch, [], cfg, bc, len(vocab), init_seed=3, dropout_seed=4)[1]
    t2 = round_once(batch, [], cfg, bc, len(vocab), init_seed=3, dropout_seed=4)[1]
    assert t1 == t2


def test_duplicate_candidates_collapse(corpus):
    stream, vocab = corpus
    cfg = tiny_cfg()
    g = random_genome(4, np.random.default_rng(2))
    bc = batchify(stream, cfg.data_batch)
    candidates, table, _, _ = round_once(
        [g, g], [g], cfg, bc, len(vocab), init_seed=5, dropout_seed=6
    )
    assert len(candidates) == 1
    assert len(table) == 1


def test_dry_run_paper_scale_accounting():
    cfg = SearchConfig(
        total_networks=10_000,
        net_batch=100,
        seed_size=20,
        levels=8,
        epochs_per_round=2,
        emb_dim=200,
        hidden_dim=200,
        optimizer=OptimizerConfig(kind="adam", learning_rate=1e-3),
        master_seed=0,
    )
    report = run_search(cfg, None, None, dry_run=True)
    assert report.dry_run
    assert report.total_rounds == math.ceil(10_000 / 100) == 100
    assert report.total_epochs == 200
    assert sum(len(r.batch) for r in report.rounds) == 10_000
    assert report.best is None


def test_restarts_pick_lowest_finetune_ppl(corpus):
    stream, vocab = corpus
    streams = {"train": stream, "valid": stream[:600]}
    cfg = tiny_cfg(total_networks=4, net_batch=4, seed_size=2)
    best, reports, best_r = run_search_with_restarts(
        cfg, streams, len(vocab), restarts=2, finetune_epochs=1
    )
    assert len(reports) == 2
    assert best == reports[best_r].best
    assert validate(best) == []


def test_restarts_require_valid_split(corpus):
    stream, vocab = corpus
    with pytest.raises(ConfigError, match="valid"):
        run_search_with_restarts(tiny_cfg(), {"train": stream}, len(vocab), restarts=2)
