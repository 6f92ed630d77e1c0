"""Dense-tensor reverse-mode autodiff on an explicit tape.

A Graph records every primitive application in execution order, which is
a valid topological order by construction. backward() walks the tape in
reverse with a fixed accumulation order, so gradients are bit-reproducible
for a fixed insertion order. Tensors are confined to one worker together
with their graph; leaves (parameters, constants) may be shared across
graphs sequentially.
"""

import numpy as np

from . import _kernels as K
from .errors import ConfigError, ShapeError

FLOAT_DTYPES = (np.float32, np.float64)

ACTIVATIONS = ("tanh", "relu", "sigmoid", "identity")


class Tensor:
    """A shaped block of real values, with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self):
        """Copy of the values, cut loose from any graph."""
        return self.data.copy()

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def _acc(t, g, own):
    # own=True means g is freshly allocated and may be adopted in place
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g if own else g.copy()
    else:
        t.grad += g


class Graph:
    """Append-only tape of primitive applications.

    Every op returns a new Tensor and, while recording, registers a
    backward closure. A graph is single-use: run the forward ops, call
    backward() (or backward_from()) once, then discard it.
    """

    def __init__(self, recording=True):
        self.recording = bool(recording)
        self.nodes = []

    def _track(self, out, bw):
        if self.recording and out.requires_grad:
            self.nodes.append((out, bw))

    # ---- primitives ----

    def matmul(self, a, b):
        """Row-convention product: [n×k] @ [k×m] (or 1-D operands)."""
        ad, bd = a.data, b.data
        if ad.shape[-1] != bd.shape[0]:
            raise ShapeError(f"matmul: inner dimensions disagree, {ad.shape} vs {bd.shape}")
        out = Tensor(ad @ bd, requires_grad=a.requires_grad or b.requires_grad)

        def bw(g):
            if ad.ndim == 1 and bd.ndim == 2:
                _acc(a, g @ bd.T, own=True)
                _acc(b, np.outer(ad, g), own=True)
            elif ad.ndim == 2 and bd.ndim == 1:
                _acc(a, np.outer(g, bd), own=True)
                _acc(b, ad.T @ g, own=True)
            else:
                _acc(a, g @ bd.T, own=True)
                _acc(b, ad.T @ g, own=True)

        self._track(out, bw)
        return out

    def affine(self, w, x):
        """Apply the linear map w[m×k] to x[k], or to each row of x[batch×k]."""
        wd, xd = w.data, x.data
        if wd.ndim != 2 or xd.shape[-1] != wd.shape[1]:
            raise ShapeError(f"affine: cannot apply {wd.shape} to {xd.shape}")
        y = wd @ xd if xd.ndim == 1 else xd @ wd.T
        out = Tensor(y, requires_grad=w.requires_grad or x.requires_grad)

        def bw(g):
            if xd.ndim == 1:
                _acc(w, np.outer(g, xd), own=True)
                _acc(x, wd.T @ g, own=True)
            else:
                _acc(w, g.T @ xd, own=True)
                _acc(x, g @ wd, own=True)

        self._track(out, bw)
        return out

    def add(self, a, b):
        if a.data.shape != b.data.shape:
            raise ShapeError(f"add: shapes differ, {a.data.shape} vs {b.data.shape}")
        out = Tensor(a.data + b.data, requires_grad=a.requires_grad or b.requires_grad)

        def bw(g):
            _acc(a, g, own=False)
            _acc(b, g, own=False)

        self._track(out, bw)
        return out

    def mul(self, a, b):
        """Elementwise product; either operand may be a 0-d scalar tensor."""
        ad, bd = a.data, b.data
        if ad.shape != bd.shape and ad.ndim != 0 and bd.ndim != 0:
            raise ShapeError(f"mul: shapes differ, {ad.shape} vs {bd.shape}")
        out = Tensor(ad * bd, requires_grad=a.requires_grad or b.requires_grad)

        def bw(g):
            ga = g * bd
            gb = g * ad
            if ad.ndim == 0 and ga.ndim != 0:
                ga = np.asarray(ga.sum())
            if bd.ndim == 0 and gb.ndim != 0:
                gb = np.asarray(gb.sum())
            _acc(a, ga, own=True)
            _acc(b, gb, own=True)

        self._track(out, bw)
        return out

    def scale(self, a, k):
        k = float(k)
        out = Tensor(a.data * k, requires_grad=a.requires_grad)

        def bw(g):
            _acc(a, g * k, own=True)

        self._track(out, bw)
        return out

    def add_bias(self, x, b):
        """Add a 1-D bias to every row of a 2-D tensor."""
        if x.data.ndim != 2 or x.data.shape[1] != b.data.shape[0]:
            raise ShapeError(f"add_bias: {x.data.shape} vs bias {b.data.shape}")
        out = Tensor(x.data + b.data, requires_grad=x.requires_grad or b.requires_grad)

        def bw(g):
            _acc(x, g, own=False)
            _acc(b, g.sum(axis=0), own=True)

        self._track(out, bw)
        return out

    def activation(self, kind, x):
        """tanh | relu | sigmoid | identity, elementwise.

        Unknown kinds are rejected at genome-validation time; reaching here
        with one is a programming error.
        """
        if kind == "identity":
            return x
        if kind == "tanh":
            y = np.tanh(x.data)
            bwk = K.tanh_bwd
        elif kind == "sigmoid":
            y = K.sigmoid_fwd(x.data)
            bwk = K.sigmoid_bwd
        elif kind == "relu":
            y = np.maximum(x.data, 0.0)
            bwk = lambda yd, g: g * (yd > 0.0)
        else:
            raise ValueError(f"unknown activation kind {kind!r}")
        out = Tensor(y, requires_grad=x.requires_grad)
        yd = out.data

        def bw(g):
            _acc(x, bwk(yd, g), own=True)

        self._track(out, bw)
        return out

    def blend(self, prev, c, h):
        """Gated interpolation prev + c*(h - prev); all same shape."""
        pd, cd, hd = prev.data, c.data, h.data
        if not (pd.shape == cd.shape == hd.shape):
            raise ShapeError(f"blend: shapes differ, {pd.shape}/{cd.shape}/{hd.shape}")
        rg = prev.requires_grad or c.requires_grad or h.requires_grad
        out = Tensor(K.blend_fwd(pd, cd, hd), requires_grad=rg)

        def bw(g):
            gp, gc, gh = K.blend_bwd(pd, cd, hd, g)
            _acc(prev, gp, own=True)
            _acc(c, gc, own=True)
            _acc(h, gh, own=True)

        self._track(out, bw)
        return out

    def batch_norm(self, x, eps=1e-5):
        """Standardize each column by batch statistics; no learned affine.

        Search-time only; the evaluation path never inserts this node.
        """
        if x.data.ndim != 2:
            raise ShapeError(f"batch_norm needs a 2-D input, got {x.data.shape}")
        if x.data.shape[0] < 2:
            raise ConfigError("batch_norm requires batch size >= 2")
        y, invstd = K.bn_fwd(x.data, eps)
        out = Tensor(y, requires_grad=x.requires_grad)
        yd = out.data

        def bw(g):
            _acc(x, K.bn_bwd(yd, invstd, g), own=True)

        self._track(out, bw)
        return out

    def softmax(self, v):
        """Max-stabilized softmax of a 1-D tensor."""
        if v.data.ndim != 1 or v.data.shape[0] == 0:
            raise ConfigError(f"softmax needs a non-empty 1-D input, got shape {v.data.shape}")
        p = K.softmax_vec_fwd(v.data)
        out = Tensor(p, requires_grad=v.requires_grad)
        pd = out.data

        def bw(g):
            _acc(v, K.softmax_vec_bwd(pd, g), own=True)

        self._track(out, bw)
        return out

    def embed(self, table, ids):
        """Gather rows of an embedding table by integer id."""
        ids = np.asarray(ids)
        if ids.size and int(ids.max()) >= table.data.shape[0]:
            raise IndexError(
                f"token id {int(ids.max())} out of vocabulary (size {table.data.shape[0]})"
            )
        out = Tensor(table.data[ids], requires_grad=table.requires_grad)

        def bw(g):
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids, g)
            _acc(table, gt, own=True)

        self._track(out, bw)
        return out

    def mix(self, w, parts):
        """Weighted sum of same-shaped tensors: out = sum_i w[i] * parts[i]."""
        n = len(parts)
        if w.data.shape != (n,):
            raise ShapeError(f"mix: weight shape {w.data.shape} vs {n} parts")
        shape = parts[0].data.shape
        for p in parts:
            if p.data.shape != shape:
                raise ShapeError(f"mix: part shapes differ, {shape} vs {p.data.shape}")
        wd = w.data
        acc = wd[0] * parts[0].data
        for i in range(1, n):
            acc += wd[i] * parts[i].data
        rg = w.requires_grad or any(p.requires_grad for p in parts)
        out = Tensor(acc, requires_grad=rg)

        def bw(g):
            if w.requires_grad:
                gw = np.empty_like(wd)
                for i in range(n):
                    gw[i] = float((g * parts[i].data).sum())
                _acc(w, gw, own=True)
            for i in range(n):
                _acc(parts[i], g * wd[i], own=True)

        self._track(out, bw)
        return out

    def cross_entropy(self, logits, targets):
        """Mean negative log-softmax probability of targets, in nats."""
        if logits.data.ndim != 2:
            raise ShapeError(f"cross_entropy needs [batch×vocab] logits, got {logits.data.shape}")
        targets = np.ascontiguousarray(targets, dtype=np.int64)
        vocab = logits.data.shape[1]
        if targets.size and int(targets.max()) >= vocab:
            raise IndexError(f"target {int(targets.max())} out of vocabulary (size {vocab})")
        nll, probs = K.softmax_xent_fwd(logits.data, targets)
        out = Tensor(np.asarray(nll, dtype=logits.data.dtype), requires_grad=logits.requires_grad)

        def bw(g):
            _acc(logits, K.softmax_xent_bwd(probs, targets, float(g)), own=True)

        self._track(out, bw)
        return out

    def weighted_sum(self, x, coeffs):
        """Scalar sum(x * coeffs) against a constant array; the scalarizer."""
        coeffs = np.asarray(coeffs, dtype=x.data.dtype)
        if coeffs.shape != x.data.shape:
            raise ShapeError(f"weighted_sum: {x.data.shape} vs coeffs {coeffs.shape}")
        out = Tensor(np.asarray((x.data * coeffs).sum()), requires_grad=x.requires_grad)

        def bw(g):
            _acc(x, g * coeffs, own=True)

        self._track(out, bw)
        return out

    # ---- reverse pass ----

    def _sweep(self):
        for out, bw in reversed(self.nodes):
            if out.grad is not None:
                bw(out.grad)

    def backward(self, loss, params=None):
        """Accumulate d(loss)/d(t) into t.grad for every tensor on the tape.

        loss must be scalar. Parameters listed in `params` that are not on
        any path to the loss end up with an explicit zero gradient.
        """
        if loss.data.ndim != 0:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        _acc(loss, np.asarray(1.0, dtype=loss.data.dtype), own=True)
        self._sweep()
        if params is not None:
            for p in params:
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)

    def backward_from(self, seeds, params=None):
        """Reverse pass seeded with (tensor, gradient) pairs.

        Used to chain a downstream graph's gradients into this one.
        """
        for t, g in seeds:
            if g.shape != t.data.shape:
                raise ShapeError(f"seed gradient {g.shape} vs tensor {t.data.shape}")
            _acc(t, np.asarray(g, dtype=t.data.dtype), own=False)
        self._sweep()
        if params is not None:
            for p in params:
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)


def zero_grads(params):
    for p in params:
        p.grad = None


def variational_dropout_mask(shape, rate, rng, dtype=np.float64):
    """Bernoulli keep-mask scaled by 1/(1-rate).

    The caller applies one mask object at every step of a BPTT window;
    evaluation mode skips masking entirely.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return Tensor(np.ones(shape, dtype=dtype))
    keep = (rng.random(shape) >= rate).astype(dtype)
    keep /= 1.0 - rate
    return Tensor(keep)
