"""Batched pool search over randomly generated cell genomes.

The pool of T genomes is consumed in chunks of B. Each round trains a
fresh weighted ensemble over (chunk + carried seed genomes) and keeps the
K heaviest genomes as the next round's seeds. Parameters and weight
logits are re-initialized every round: seeds compete on equal footing and
the learned weights stay interpretable as within-round importance.
"""

import json
import logging
import math
import time
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from .data import batchify
from .errors import ConfigError
from .genome import random_pool, serialize
from .mixture import build_mixture, mixture_weights, top_k, train_mixture
from .model import ModelConfig, init_params, train_language_model
from .optim import OptimizerConfig

log = logging.getLogger("wenas.search")


@dataclass
class SearchConfig:
    total_networks: int = 64  # T
    net_batch: int = 16  # B
    seed_size: int = 4  # K
    levels: int = 8
    epochs_per_round: int = 2
    emb_dim: int = 64
    hidden_dim: int = 64
    data_batch: int = 20
    bptt: int = 35
    dropout_embed: float = 0.2
    dropout_input: float = 0.75
    dropout_hidden: float = 0.25
    dropout_output: float = 0.75
    batch_norm: bool = True
    mixture: str = "logits"
    optimizer: OptimizerConfig = field(
        default_factory=lambda: OptimizerConfig(kind="adam", learning_rate=1e-3, weight_decay=5e-7)
    )
    master_seed: int = 0
    dedupe: bool = True
    threads: int = 1
    clip_norm: float = None  # batch norm already guards the search phase
    precision: str = "float64"

    def validate(self):
        if self.total_networks < 1:
            raise ConfigError(f"total_networks must be >= 1, got {self.total_networks}")
        if not self.total_networks >= self.net_batch >= 1:
            raise ConfigError(
                f"need total_networks >= net_batch >= 1, got {self.total_networks} and {self.net_batch}"
            )
        if not 1 <= self.seed_size <= self.net_batch:
            raise ConfigError(
                f"need 1 <= seed_size <= net_batch, got {self.seed_size} and {self.net_batch}"
            )
        if self.epochs_per_round < 1:
            raise ConfigError(f"epochs_per_round must be >= 1, got {self.epochs_per_round}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        self.optimizer.validate()
        return self

    def model_config(self, vocab_size):
        return ModelConfig(
            vocab_size=vocab_size,
            emb_dim=self.emb_dim,
            hidden_dim=self.hidden_dim,
            levels=self.levels,
            dropout_embed=self.dropout_embed,
            dropout_input=self.dropout_input,
            dropout_hidden=self.dropout_hidden,
            dropout_output=self.dropout_output,
            batch_norm=self.batch_norm,
            mode="search",
            precision=self.precision,
        ).validate()


@dataclass
class RoundRecord:
    index: int  # 1-based
    batch: list  # genomes drawn from the pool this round
    seed_in: list  # genomes carried in from the previous round
    candidates: list  # training order after duplicate collapse
    table: list  # (rank, net_index, genome, weight) sorted by weight desc
    seeds_out: list  # (genome, weight) pairs, the next round's seed_in
    weight_log: list  # per-epoch weight rows


@dataclass
class SearchReport:
    config: SearchConfig
    rounds: list
    best: object  # Genome, or None for dry runs
    total_rounds: int
    total_epochs: int
    wall_time_s: float
    dry_run: bool = False

    def to_json(self):
        def genome_obj(g):
            return json.loads(serialize(g))

        obj = {
            "config": _config_dict(self.config),
            "total_rounds": self.total_rounds,
            "total_epochs": self.total_epochs,
            "wall_time_s": self.wall_time_s,
            "dry_run": self.dry_run,
            "best": genome_obj(self.best) if self.best is not None else None,
            "rounds": [
                {
                    "index": r.index,
                    "batch": [genome_obj(g) for g in r.batch],
                    "seed_in": [genome_obj(g) for g in r.seed_in],
                    "candidates": [genome_obj(g) for g in r.candidates],
                    "table": [
                        {"rank": rank, "net_index": idx, "genome": genome_obj(g), "weight": w}
                        for rank, idx, g, w in r.table
                    ],
                    "seeds_out": [
                        {"genome": genome_obj(g), "weight": w} for g, w in r.seeds_out
                    ],
                    "weight_log": r.weight_log,
                }
                for r in self.rounds
            ],
        }
        return json.dumps(obj, indent=2, sort_keys=True)


def _config_dict(cfg):
    d = asdict(cfg)
    return d


def _merge_candidates(batch, seeds):
    """Training-order union; duplicate genomes collapse to one candidate."""
    merged = []
    seen = set()
    collapsed = 0
    for g in list(batch) + list(seeds):
        key = g.canonical_key()
        if key in seen:
            collapsed += 1
            continue
        seen.add(key)
        merged.append(g)
    if collapsed:
        log.info("collapsed %d duplicate candidate(s) in this round", collapsed)
    return merged


def select_best(seeds_with_weights):
    """Argmax-weight genome; ties go to the lower index."""
    if not seeds_with_weights:
        raise ConfigError("select_best needs a non-empty seed list")
    best_i = 0
    for i, (_, w) in enumerate(seeds_with_weights):
        if w > seeds_with_weights[best_i][1]:
            best_i = i
    return seeds_with_weights[best_i][0]


def round_once(batch, seeds, cfg, train_bc, vocab_size, init_seed, dropout_seed):
    """Train one round's ensemble from scratch; returns (seeds_out, record pieces).

    Seeds and batch members get fresh parameters and zero logits, then
    train jointly for epochs_per_round epochs.
    """
    candidates = _merge_candidates(batch, seeds)
    if not candidates:
        raise ConfigError("round has no candidates")
    mcfg = cfg.model_config(vocab_size)
    state = build_mixture(candidates, mcfg, np.random.default_rng(init_seed), mixture=cfg.mixture)
    weight_log = train_mixture(
        state,
        train_bc,
        cfg.bptt,
        cfg.epochs_per_round,
        mcfg,
        replace(cfg.optimizer),
        dropout_seed,
        clip_norm=cfg.clip_norm,
        threads=cfg.threads,
    )
    w = mixture_weights(state)
    order = sorted(range(len(candidates)), key=lambda i: (-w[i], i))
    table = [(rank + 1, i, candidates[i], float(w[i])) for rank, i in enumerate(order)]
    k = min(cfg.seed_size, len(candidates))
    seeds_out = top_k(state, k)
    return candidates, table, seeds_out, weight_log


def plan_rounds(total, batch):
    sizes = []
    remaining = total
    while remaining > 0:
        size = min(batch, remaining)
        sizes.append(size)
        remaining -= size
    return sizes


def run_search(cfg, train_stream, vocab_size, dry_run=False):
    """Full pool search; returns a SearchReport with per-round tables.

    dry_run skips all training and fills in the round/epoch accounting
    only (batch sizes, candidate counts, totals).
    """
    cfg.validate()
    t0 = time.monotonic()
    sizes = plan_rounds(cfg.total_networks, cfg.net_batch)
    total_rounds = len(sizes)
    assert total_rounds == math.ceil(cfg.total_networks / cfg.net_batch)

    root = np.random.SeedSequence(cfg.master_seed)
    pool_ss, *round_ss = root.spawn(1 + total_rounds)
    pool = random_pool(
        cfg.total_networks, cfg.levels, np.random.default_rng(pool_ss), dedupe=cfg.dedupe
    )

    if dry_run:
        rounds = []
        cursor = 0
        for i, size in enumerate(sizes, start=1):
            batch = pool[cursor : cursor + size]
            cursor += size
            rounds.append(
                RoundRecord(
                    index=i,
                    batch=batch,
                    seed_in=[],
                    candidates=batch,
                    table=[],
                    seeds_out=[],
                    weight_log=[],
                )
            )
        return SearchReport(
            config=cfg,
            rounds=rounds,
            best=None,
            total_rounds=total_rounds,
            total_epochs=total_rounds * cfg.epochs_per_round,
            wall_time_s=time.monotonic() - t0,
            dry_run=True,
        )

    train_bc = batchify(train_stream, cfg.data_batch)
    rounds = []
    seeds = []
    cursor = 0
    for i, size in enumerate(sizes, start=1):
        batch = pool[cursor : cursor + size]
        cursor += size
        init_seed, dropout_seed = round_ss[i - 1].spawn(2)
        seed_in = [g for g, _ in seeds]
        candidates, table, seeds_out, weight_log = round_once(
            batch, seed_in, cfg, train_bc, vocab_size, init_seed, dropout_seed
        )
        rounds.append(
            RoundRecord(
                index=i,
                batch=batch,
                seed_in=seed_in,
                candidates=candidates,
                table=table,
                seeds_out=seeds_out,
                weight_log=weight_log,
            )
        )
        seeds = seeds_out
        log.info(
            "round %d/%d: %d candidates, top weight %.4f",
            i,
            total_rounds,
            len(candidates),
            table[0][3],
        )

    best = select_best(seeds)
    return SearchReport(
        config=cfg,
        rounds=rounds,
        best=best,
        total_rounds=total_rounds,
        total_epochs=total_rounds * cfg.epochs_per_round,
        wall_time_s=time.monotonic() - t0,
        dry_run=False,
    )


def finetune_perplexity(g, streams, cfg, vocab_size, seed, epochs=3):
    """Short from-scratch training of one genome; validation perplexity.

    Used to adjudicate between restarts, whose learned weights are not
    comparable across independent runs.
    """
    mcfg = ModelConfig(
        vocab_size=vocab_size,
        emb_dim=cfg.emb_dim,
        hidden_dim=cfg.hidden_dim,
        levels=cfg.levels,
        batch_norm=False,
        mode="eval",
        precision=cfg.precision,
    ).validate()
    rng = np.random.default_rng(seed)
    lmp = init_params(g, mcfg, rng)
    opt_cfg = OptimizerConfig(kind="adam", learning_rate=1e-3)
    history, _ = train_language_model(
        g, lmp, streams, mcfg, opt_cfg, epochs, cfg.data_batch, cfg.bptt, rng
    )
    return history[-1].get("valid_ppl", history[-1]["train_ppl"])


def run_search_with_restarts(cfg, streams, vocab_size, restarts=1, finetune_epochs=3):
    """Repeat the search with distinct seeds; pick the restart whose best
    genome reaches the lowest validation perplexity after a short train.

    Returns (best genome, list of reports, winning restart index).
    """
    if restarts < 1:
        raise ConfigError(f"restarts must be >= 1, got {restarts}")
    if restarts == 1:
        report = run_search(cfg, streams["train"], vocab_size)
        return report.best, [report], 0
    if "valid" not in streams:
        raise ConfigError("restarts > 1 needs a valid split to adjudicate between runs")
    reports = []
    scored = []
    for r in range(restarts):
        sub = replace(cfg, master_seed=int(np.random.SeedSequence([cfg.master_seed, r]).generate_state(1)[0]))
        report = run_search(sub, streams["train"], vocab_size)
        ppl = finetune_perplexity(
            report.best, streams, cfg, vocab_size, seed=sub.master_seed + 1, epochs=finetune_epochs
        )
        log.info("restart %d: finetune valid ppl %.3f", r, ppl)
        reports.append(report)
        scored.append((ppl, r))
    _, best_r = min(scored)
    return reports[best_r].best, reports, best_r
