"""A single recurrent cell defined by a genome, wrapped into a word-level
language model and unrolled over BPTT windows.

The cell: node 0 blends the previous state toward a candidate state under
a sigmoid gate of the embedded input; every searched node applies its
activation to a learned linear map of its ancestor's state; the cell
output is the mean of the searched nodes (node 0 itself is excluded).
"""

import json
from contextlib import contextmanager
from dataclasses import dataclass, asdict

import numpy as np

from .autodiff import Graph, Tensor, variational_dropout_mask, zero_grads
from .data import batchify, bptt_iter, perplexity
from .errors import ConfigError, HiddenStateDiverged, TrainingDiverged
from .genome import parse, serialize, validate
from .optim import build_optimizer, clip_global_norm

INIT_RANGE = 0.1
HIDDEN_LIMIT = 1e8

MODES = ("search", "eval")


@dataclass
class ModelConfig:
    vocab_size: int
    emb_dim: int = 64
    hidden_dim: int = 64
    levels: int = 8
    dropout_embed: float = 0.0
    dropout_input: float = 0.0
    dropout_hidden: float = 0.0
    dropout_output: float = 0.0
    batch_norm: bool = True
    mode: str = "search"
    precision: str = "float64"

    def validate(self):
        for name in ("vocab_size", "emb_dim", "hidden_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.levels < 2:
            raise ConfigError(f"levels must be >= 2, got {self.levels}")
        for name in ("dropout_embed", "dropout_input", "dropout_hidden", "dropout_output"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {rate}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")
        return self

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64

    @property
    def bn_active(self):
        # batch normalization exists only while searching
        return self.batch_norm and self.mode == "search"


@dataclass
class CellParams:
    w_x: Tensor  # [emb_dim, hidden_dim]
    w_h: Tensor  # [hidden_dim, hidden_dim]
    edges: list  # one [hidden_dim, hidden_dim] Tensor per searched node

    def tensors(self):
        return [self.w_x, self.w_h, *self.edges]


@dataclass
class LMParams:
    embedding: Tensor  # [vocab, emb_dim]
    decoder_w: Tensor  # [hidden_dim, vocab]
    decoder_b: Tensor  # [vocab]
    cell: CellParams

    def tensors(self):
        return [self.embedding, *self.cell.tensors(), self.decoder_w, self.decoder_b]


def _uniform(rng, shape, dtype):
    return Tensor(
        rng.uniform(-INIT_RANGE, INIT_RANGE, size=shape).astype(dtype), requires_grad=True
    )


def init_cell_params(g, cfg, rng):
    edges = [
        _uniform(rng, (cfg.hidden_dim, cfg.hidden_dim), cfg.dtype) for _ in range(g.levels - 1)
    ]
    return CellParams(
        w_x=_uniform(rng, (cfg.emb_dim, cfg.hidden_dim), cfg.dtype),
        w_h=_uniform(rng, (cfg.hidden_dim, cfg.hidden_dim), cfg.dtype),
        edges=edges,
    )


def init_params(g, cfg, rng):
    """Fresh uniformly-initialized parameters for genome g.

    Draw order is fixed (embedding, w_x, w_h, edges, decoder) so a seeded
    rng reproduces parameters bit for bit.
    """
    bad = validate(g)
    if bad:
        raise ConfigError("invalid genome: " + "; ".join(bad))
    embedding = _uniform(rng, (cfg.vocab_size, cfg.emb_dim), cfg.dtype)
    cell = init_cell_params(g, cfg, rng)
    decoder_w = _uniform(rng, (cfg.hidden_dim, cfg.vocab_size), cfg.dtype)
    decoder_b = Tensor(np.zeros(cfg.vocab_size, dtype=cfg.dtype), requires_grad=True)
    return LMParams(embedding=embedding, decoder_w=decoder_w, decoder_b=decoder_b, cell=cell)


def param_count(lmp):
    return sum(t.data.size for t in lmp.tensors())


def node0(graph, x_t, h_prev, p):
    """Input-blending node: gate c = sigmoid(x W_x), candidate
    h = tanh(h_prev W_h), state s0 = h_prev + c*(h - h_prev)."""
    c = graph.activation("sigmoid", graph.matmul(x_t, p.w_x))
    h = graph.activation("tanh", graph.matmul(h_prev, p.w_h))
    return graph.blend(h_prev, c, h)


def cell_step(graph, g, p, x_t, h_prev, cfg):
    """One recurrent step; returns the mean of the searched node states."""
    if len(p.edges) != g.levels - 1:
        raise ConfigError(f"params carry {len(p.edges)} edges for {g.levels} levels")
    states = [node0(graph, x_t, h_prev, p)]
    for i, gene in enumerate(g.genes):
        z = graph.matmul(states[gene.ancestor], p.edges[i])
        if cfg.bn_active:
            z = graph.batch_norm(z)
        states.append(graph.activation(gene.op.value, z))
    total = states[1]
    for s in states[2:]:
        total = graph.add(total, s)
    return graph.scale(total, 1.0 / (g.levels - 1))


@dataclass
class Masks:
    embed: Tensor = None
    input: Tensor = None
    hidden: Tensor = None
    output: Tensor = None


def make_masks(cfg, batch, rng):
    """One variational mask per dropout site, reused across a window's steps."""
    if rng is None:
        return Masks()

    def mk(rate, dim):
        if rate == 0.0:
            return None
        return variational_dropout_mask((batch, dim), rate, rng, dtype=cfg.dtype)

    return Masks(
        embed=mk(cfg.dropout_embed, cfg.emb_dim),
        input=mk(cfg.dropout_input, cfg.emb_dim),
        hidden=mk(cfg.dropout_hidden, cfg.hidden_dim),
        output=mk(cfg.dropout_output, cfg.hidden_dim),
    )


def _check_hidden(h, step):
    m = float(np.abs(h).max()) if h.size else 0.0
    if not np.isfinite(m) or m > HIDDEN_LIMIT:
        raise HiddenStateDiverged(f"hidden state diverged at step {step} (max |h| = {m})")


def candidate_logits(graph, g, lmp, inputs, h_init, cfg, masks):
    """Unroll the cell over a window; per-step decoder logits.

    Returns (list of [batch x vocab] logit tensors, final hidden Tensor).
    The hidden-node mask is applied to the carried state, the output mask
    only on the path into the decoder.
    """
    h = Tensor(np.ascontiguousarray(h_init, dtype=cfg.dtype))
    steps = inputs.shape[1]
    logits = []
    for t in range(steps):
        x = graph.embed(lmp.embedding, inputs[:, t])
        if masks.embed is not None:
            x = graph.mul(x, masks.embed)
        if masks.input is not None:
            x = graph.mul(x, masks.input)
        h = cell_step(graph, g, lmp.cell, x, h, cfg)
        if masks.hidden is not None:
            h = graph.mul(h, masks.hidden)
        _check_hidden(h.data, t)
        out = h
        if masks.output is not None:
            out = graph.mul(out, masks.output)
        logits.append(graph.add_bias(graph.matmul(out, lmp.decoder_w), lmp.decoder_b))
    return logits, h


def mean_window_loss(graph, logits, targets):
    """Mean cross-entropy over every token of a window."""
    steps = len(logits)
    total = graph.cross_entropy(logits[0], targets[:, 0])
    for t in range(1, steps):
        total = graph.add(total, graph.cross_entropy(logits[t], targets[:, t]))
    return graph.scale(total, 1.0 / steps) if steps > 1 else total


def lm_forward(graph, g, lmp, window, h_init, cfg, rng=None):
    """Window loss plus the detached final state for carry-over."""
    if window.width < 1:
        raise ConfigError("empty BPTT window")
    masks = make_masks(cfg, window.inputs.shape[0], rng)
    logits, h = candidate_logits(graph, g, lmp, window.inputs, h_init, cfg, masks)
    loss = mean_window_loss(graph, logits, window.targets)
    return loss, h.detach()


def zero_state(cfg, batch):
    return np.zeros((batch, cfg.hidden_dim), dtype=cfg.dtype)


def evaluate_stream(g, lmp, stream, cfg, batch, bptt):
    """Perplexity of the model on a token stream (no dropout, no batch norm)."""
    eval_cfg = ModelConfig(**{**asdict(cfg), "mode": "eval"})
    bc = batchify(stream, batch)
    h = zero_state(eval_cfg, batch)
    total_nll = 0.0
    tokens = 0
    for window in bptt_iter(bc, bptt):
        graph = Graph(recording=False)
        loss, h = lm_forward(graph, g, lmp, window, h, eval_cfg, rng=None)
        total_nll += float(loss.data) * window.token_count
        tokens += window.token_count
    return perplexity(total_nll, tokens)


@contextmanager
def swapped_params(params, arrays):
    """Temporarily replace parameter values (used for ASGD evaluation)."""
    saved = [p.data for p in params]
    for p, a in zip(params, arrays):
        p.data = a
    try:
        yield
    finally:
        for p, s in zip(params, saved):
            p.data = s


def train_language_model(
    g,
    lmp,
    streams,
    cfg,
    opt_cfg,
    epochs,
    batch,
    bptt,
    rng,
    clip_norm=0.25,
    log_fn=None,
):
    """Train one cell from scratch; returns per-epoch perplexity records.

    Validation (and any final test scoring) uses the averaged iterates
    when the optimizer is ASGD.
    """
    cfg.validate()
    opt = build_optimizer(opt_cfg)
    params = lmp.tensors()
    train_bc = batchify(streams["train"], batch)
    history = []
    batch_index = 0
    for epoch in range(1, epochs + 1):
        h = zero_state(cfg, batch)
        nll = 0.0
        tokens = 0
        for window in bptt_iter(train_bc, bptt):
            graph = Graph()
            loss, h = lm_forward(graph, g, lmp, window, h, cfg, rng=rng)
            if not np.isfinite(loss.data):
                raise TrainingDiverged(f"non-finite loss at batch {batch_index}")
            zero_grads(params)
            graph.backward(loss, params=params)
            if clip_norm is not None:
                clip_global_norm(params, clip_norm)
            opt.step(params)
            nll += float(loss.data) * window.token_count
            tokens += window.token_count
            batch_index += 1
        record = {"epoch": epoch, "train_ppl": perplexity(nll, tokens)}
        for split in ("valid", "test"):
            if split in streams:
                record[f"{split}_ppl"] = validation_perplexity(
                    g, lmp, streams[split], cfg, batch, bptt, opt
                )
        history.append(record)
        if log_fn is not None:
            log_fn(record)
    return history, opt


def validation_perplexity(g, lmp, stream, cfg, batch, bptt, opt=None):
    params = lmp.tensors()
    if opt is not None and hasattr(opt, "averaged"):
        with swapped_params(params, opt.averaged(params)):
            return evaluate_stream(g, lmp, stream, cfg, batch, bptt)
    return evaluate_stream(g, lmp, stream, cfg, batch, bptt)


# ---- checkpoints ----

CHECKPOINT_KEYS = ("embedding", "w_x", "w_h", "decoder_w", "decoder_b")


def save_checkpoint(path, g, cfg, lmp, run_config=None):
    arrays = {
        "embedding": lmp.embedding.data,
        "w_x": lmp.cell.w_x.data,
        "w_h": lmp.cell.w_h.data,
        "decoder_w": lmp.decoder_w.data,
        "decoder_b": lmp.decoder_b.data,
    }
    for i, e in enumerate(lmp.cell.edges, start=1):
        arrays[f"edge_{i}"] = e.data
    arrays["config_json"] = np.array(json.dumps(asdict(cfg), sort_keys=True))
    arrays["genome_json"] = np.array(serialize(g))
    if run_config is not None:
        arrays["run_config_json"] = np.array(json.dumps(run_config, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as z:
        cfg = ModelConfig(**json.loads(str(z["config_json"])))
        g = parse(str(z["genome_json"]))
        edges = [
            Tensor(z[f"edge_{i}"], requires_grad=True) for i in range(1, g.levels)
        ]
        cell = CellParams(
            w_x=Tensor(z["w_x"], requires_grad=True),
            w_h=Tensor(z["w_h"], requires_grad=True),
            edges=edges,
        )
        lmp = LMParams(
            embedding=Tensor(z["embedding"], requires_grad=True),
            decoder_w=Tensor(z["decoder_w"], requires_grad=True),
            decoder_b=Tensor(z["decoder_b"], requires_grad=True),
            cell=cell,
        )
    return g, cfg, lmp
