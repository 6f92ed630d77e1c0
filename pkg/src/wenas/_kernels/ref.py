"""Pure-numpy kernels: the fallback backend.

Every function here has a compiled twin in fast.pyx with identical
signature and semantics; keep the two in sync. The set is limited to ops
that fuse several numpy passes (gated blend, batch norm, softmax rows,
sigmoid's sign-split): single-primitive ops like tanh, relu and matmul
stay on numpy/BLAS in the calling code because those are already optimal.
"""

import numpy as np

NAME = "ref"


def sigmoid_fwd(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_bwd(y, g):
    return g * y * (1.0 - y)


def tanh_bwd(y, g):
    return g * (1.0 - y * y)


def blend_fwd(prev, c, h):
    """Gated update s = prev + c*(h - prev)."""
    return prev + c * (h - prev)


def blend_bwd(prev, c, h, g):
    return g * (1.0 - c), g * (h - prev), g * c


def bn_fwd(x, eps):
    """Per-column standardization. Returns (y, invstd); y doubles as x-hat."""
    mean = x.mean(axis=0)
    var = x.var(axis=0)
    invstd = 1.0 / np.sqrt(var + eps)
    return (x - mean) * invstd, invstd


def bn_bwd(y, invstd, g):
    # d/dx of (x - mean)/std with batch statistics, no affine terms
    n = y.shape[0]
    gsum = g.sum(axis=0)
    dot = (g * y).sum(axis=0)
    return invstd * (g - gsum / n - y * (dot / n))


def softmax_xent_fwd(logits, targets):
    """Mean negative log-softmax of targets, plus cached probabilities."""
    m = logits.max(axis=1, keepdims=True)
    z = logits - m
    ez = np.exp(z)
    denom = ez.sum(axis=1, keepdims=True)
    probs = ez / denom
    rows = np.arange(logits.shape[0])
    logp = z[rows, targets] - np.log(denom[:, 0])
    return float(-logp.mean()), probs


def softmax_xent_bwd(probs, targets, g):
    out = probs * (g / probs.shape[0])
    rows = np.arange(probs.shape[0])
    out[rows, targets] -= g / probs.shape[0]
    return out


def softmax_vec_fwd(v):
    z = v - v.max()
    ez = np.exp(z)
    return ez / ez.sum()


def softmax_vec_bwd(p, g):
    return p * (g - float(np.dot(g, p)))
