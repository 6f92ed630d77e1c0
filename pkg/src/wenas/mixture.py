"""Jointly trained weighted ensemble of candidate cells.

Every candidate keeps its own full parameter set (nothing is shared in
the default mode) and one learnable logit; softmax of the logits gives
the importance weights. One forward produces per-candidate decoder
logits, the mixture combines them per step, and a single backward updates
all candidate parameters and the weight logits simultaneously.

The default combination point is the decoder logits. mixture="hidden" is
the alternative: candidates share one embedding and decoder, their cell
outputs are mixed into a single carried state, and the shared decoder
reads the mixed state.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph, Tensor, zero_grads
from .data import bptt_iter
from .errors import ConfigError, TrainingDiverged
from .model import (
    candidate_logits,
    cell_step,
    init_params,
    make_masks,
    mean_window_loss,
    zero_state,
)
from .optim import build_optimizer, clip_global_norm

MIXTURE_MODES = ("logits", "hidden")


@dataclass
class MixtureState:
    candidates: list  # (Genome, LMParams) pairs, order fixed for the round
    logits: Tensor  # one learnable logit per candidate
    mixture: str = "logits"
    frozen: set = field(default_factory=set)  # candidate indices excluded from updates

    @property
    def n(self):
        return len(self.candidates)

    def trainable_params(self):
        """Unique parameter tensors of unfrozen candidates, then the logits."""
        params = []
        seen = set()
        for i, (_, lmp) in enumerate(self.candidates):
            if i in self.frozen:
                continue
            for t in lmp.tensors():
                if id(t) not in seen:
                    seen.add(id(t))
                    params.append(t)
        params.append(self.logits)
        return params

    def initial_states(self, batch, cfg):
        n = 1 if self.mixture == "hidden" else self.n
        return [zero_state(cfg, batch) for _ in range(n)]


def build_mixture(genomes, cfg, rng, mixture="logits", frozen=None):
    """Fresh candidate parameters and zero logits (uniform importance)."""
    if mixture not in MIXTURE_MODES:
        raise ConfigError(f"mixture must be one of {MIXTURE_MODES}, got {mixture!r}")
    if not genomes:
        raise ConfigError("cannot build a mixture with no candidates")
    candidates = []
    for g in genomes:
        candidates.append((g, init_params(g, cfg, rng)))
    if mixture == "hidden":
        # the alternative combination point shares one input/output head
        emb, dec_w, dec_b = (
            candidates[0][1].embedding,
            candidates[0][1].decoder_w,
            candidates[0][1].decoder_b,
        )
        for _, lmp in candidates[1:]:
            lmp.embedding, lmp.decoder_w, lmp.decoder_b = emb, dec_w, dec_b
    logits = Tensor(np.zeros(len(genomes), dtype=cfg.dtype), requires_grad=True)
    return MixtureState(candidates=candidates, logits=logits, mixture=mixture, frozen=set(frozen or ()))


def candidate_rngs(seed, n):
    """Per-candidate dropout streams, split deterministically from one seed.

    Isolation oracles reproduce the in-mixture behavior of candidate i by
    reusing stream i. `seed` may be an int or a SeedSequence.
    """
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return [np.random.default_rng(c) for c in seed.spawn(n)]


def mixture_weights(state):
    """Softmax of the logits; sums to one."""
    z = state.logits.data - state.logits.data.max()
    e = np.exp(z)
    return e / e.sum()


def top_k(state, k):
    """The k heaviest candidates as (genome, weight), ties to the lower index."""
    if not 1 <= k <= state.n:
        raise ConfigError(f"top_k needs 1 <= k <= {state.n}, got {k}")
    w = mixture_weights(state)
    order = sorted(range(state.n), key=lambda i: (-w[i], i))[:k]
    return [(state.candidates[i][0], float(w[i])) for i in order]


@dataclass
class _CandidatePass:
    graph: Graph
    logits: list
    h_final: Tensor


def _run_candidate(state, i, window, h_init, cfg, rng):
    graph = Graph()
    g, lmp = state.candidates[i]
    masks = make_masks(cfg, window.inputs.shape[0], rng)
    logits, h = candidate_logits(graph, g, lmp, window.inputs, h_init, cfg, masks)
    return _CandidatePass(graph, logits, h)


def _map(executor, fn, items):
    if executor is None:
        return [fn(*args) for args in items]
    return list(executor.map(lambda args: fn(*args), items))


def mixture_forward(state, window, h_inits, cfg, rngs, compute_grads=False, executor=None):
    """One window through the whole ensemble.

    Returns (loss value, per-candidate carry states, per-step mixture
    logit arrays). With compute_grads, gradients land on every unfrozen
    candidate's parameters and on the weight logits.
    """
    if state.mixture == "hidden":
        return _mixture_forward_hidden(state, window, h_inits, cfg, rngs, compute_grads)
    n = state.n
    if len(h_inits) != n or len(rngs) != n:
        raise ConfigError(f"need {n} initial states and rngs, got {len(h_inits)}/{len(rngs)}")
    passes = _map(
        executor,
        _run_candidate,
        [(state, i, window, h_inits[i], cfg, rngs[i]) for i in range(n)],
    )

    master = Graph()
    w = master.softmax(state.logits)
    steps = window.width
    leaves = [[Tensor(p.logits[t].data, requires_grad=True) for t in range(steps)] for p in passes]
    mixed = [master.mix(w, [leaves[i][t] for i in range(n)]) for t in range(steps)]
    loss = mean_window_loss(master, mixed, window.targets)

    if compute_grads:
        master.backward(loss, params=[state.logits])

        def backprop(i):
            if i in state.frozen:
                return
            seeds = [(passes[i].logits[t], leaves[i][t].grad) for t in range(steps)]
            passes[i].graph.backward_from(seeds)

        _map(executor, backprop, [(i,) for i in range(n)])

    h_finals = [p.h_final.detach() for p in passes]
    return float(loss.data), h_finals, [m.data for m in mixed]


def _mixture_forward_hidden(state, window, h_inits, cfg, rngs, compute_grads):
    """Shared-head variant: mix cell outputs into one carried state."""
    graph = Graph()
    w = graph.softmax(state.logits)
    emb_lmp = state.candidates[0][1]
    masks = make_masks(cfg, window.inputs.shape[0], rngs[0])
    h = Tensor(np.ascontiguousarray(h_inits[0], dtype=cfg.dtype))
    mixed_logits = []
    losses = []
    for t in range(window.width):
        x = graph.embed(emb_lmp.embedding, window.inputs[:, t])
        if masks.embed is not None:
            x = graph.mul(x, masks.embed)
        if masks.input is not None:
            x = graph.mul(x, masks.input)
        outs = [
            cell_step(graph, g, lmp.cell, x, h, cfg) for g, lmp in state.candidates
        ]
        h = graph.mix(w, outs)
        if masks.hidden is not None:
            h = graph.mul(h, masks.hidden)
        out = h
        if masks.output is not None:
            out = graph.mul(out, masks.output)
        step_logits = graph.add_bias(graph.matmul(out, emb_lmp.decoder_w), emb_lmp.decoder_b)
        mixed_logits.append(step_logits)
        losses.append(graph.cross_entropy(step_logits, window.targets[:, t]))
    total = losses[0]
    for piece in losses[1:]:
        total = graph.add(total, piece)
    loss = graph.scale(total, 1.0 / len(losses)) if len(losses) > 1 else total
    if compute_grads:
        graph.backward(loss, params=state.trainable_params())
    return float(loss.data), [h.detach()], [m.data for m in mixed_logits]


def train_mixture(
    state,
    train_bc,
    bptt,
    epochs,
    cfg,
    opt_cfg,
    dropout_seed,
    clip_norm=None,
    threads=1,
    log_fn=None,
):
    """Train candidates and weights jointly; returns the weight trajectory.

    One optimizer step per mini-batch covers every candidate parameter and
    the logits at once. The trajectory holds one row of weights per epoch.
    """
    if epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {epochs}")
    cfg.validate()
    opt = build_optimizer(opt_cfg)
    params = state.trainable_params()
    rngs = candidate_rngs(dropout_seed, state.n)
    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 and state.mixture == "logits" else None
    weight_log = []
    batch_index = 0
    try:
        for epoch in range(1, epochs + 1):
            h_states = state.initial_states(train_bc.batch, cfg)
            for window in bptt_iter(train_bc, bptt):
                zero_grads(params)
                loss, h_states, _ = mixture_forward(
                    state, window, h_states, cfg, rngs, compute_grads=True, executor=executor
                )
                if not np.isfinite(loss):
                    raise TrainingDiverged(f"non-finite mixture loss at batch {batch_index}")
                if clip_norm is not None:
                    clip_global_norm(params, clip_norm)
                opt.step(params)
                batch_index += 1
            row = mixture_weights(state)
            weight_log.append({"epoch": epoch, "weights": [float(x) for x in row]})
            if log_fn is not None:
                log_fn(weight_log[-1])
    finally:
        if executor is not None:
            executor.shutdown()
    return weight_log
