# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: fused loops for the BPTT inner loop.

Mirror of ref.py; keep signatures and semantics identical. Only ops that
fuse several numpy passes live here; single-primitive ops (tanh, relu,
matmul) are left to numpy/BLAS in the calling code, which is faster.
"""

import numpy as np

from libc.math cimport exp as c_exp, log as c_log, sqrt as c_sqrt

NAME = "fast"

ctypedef fused real:
    float
    double


def _sigmoid_fwd(real[::1] x, real[::1] out):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double e
    with nogil:
        for i in range(n):
            if x[i] >= 0:
                out[i] = <real> (1.0 / (1.0 + c_exp(-x[i])))
            else:
                e = c_exp(x[i])
                out[i] = <real> (e / (1.0 + e))


def _sigmoid_bwd(real[::1] y, real[::1] g, real[::1] out):
    cdef Py_ssize_t i, n = y.shape[0]
    with nogil:
        for i in range(n):
            out[i] = g[i] * y[i] * (1.0 - y[i])


def _tanh_bwd(real[::1] y, real[::1] g, real[::1] out):
    cdef Py_ssize_t i, n = y.shape[0]
    with nogil:
        for i in range(n):
            out[i] = g[i] * (1.0 - y[i] * y[i])


def _blend_fwd(real[::1] prev, real[::1] c, real[::1] h, real[::1] out):
    cdef Py_ssize_t i, n = prev.shape[0]
    with nogil:
        for i in range(n):
            out[i] = prev[i] + c[i] * (h[i] - prev[i])


def _blend_bwd(real[::1] prev, real[::1] c, real[::1] h, real[::1] g,
               real[::1] gprev, real[::1] gc, real[::1] gh):
    cdef Py_ssize_t i, n = prev.shape[0]
    with nogil:
        for i in range(n):
            gprev[i] = g[i] * (1.0 - c[i])
            gc[i] = g[i] * (h[i] - prev[i])
            gh[i] = g[i] * c[i]


def _bn_fwd(real[:, ::1] x, double eps, real[:, ::1] y, real[::1] invstd):
    cdef Py_ssize_t i, j, n = x.shape[0], d = x.shape[1]
    cdef double s, sq, mean, var
    with nogil:
        for j in range(d):
            s = 0.0
            sq = 0.0
            for i in range(n):
                s += x[i, j]
            mean = s / n
            for i in range(n):
                sq += (x[i, j] - mean) * (x[i, j] - mean)
            var = sq / n
            invstd[j] = <real> (1.0 / c_sqrt(var + eps))
            for i in range(n):
                y[i, j] = <real> ((x[i, j] - mean) * invstd[j])


def _bn_bwd(real[:, ::1] y, real[::1] invstd, real[:, ::1] g, real[:, ::1] out):
    cdef Py_ssize_t i, j, n = y.shape[0], d = y.shape[1]
    cdef double gsum, dot
    with nogil:
        for j in range(d):
            gsum = 0.0
            dot = 0.0
            for i in range(n):
                gsum += g[i, j]
                dot += g[i, j] * y[i, j]
            gsum /= n
            dot /= n
            for i in range(n):
                out[i, j] = <real> (invstd[j] * (g[i, j] - gsum - y[i, j] * dot))


def _softmax_xent_fwd(real[:, ::1] logits, const long long[::1] targets,
                      real[:, ::1] probs):
    cdef Py_ssize_t i, j, n = logits.shape[0], v = logits.shape[1]
    cdef double m, denom, nll = 0.0
    with nogil:
        for i in range(n):
            m = logits[i, 0]
            for j in range(1, v):
                if logits[i, j] > m:
                    m = logits[i, j]
            denom = 0.0
            for j in range(v):
                probs[i, j] = <real> c_exp(logits[i, j] - m)
                denom += probs[i, j]
            for j in range(v):
                probs[i, j] = <real> (probs[i, j] / denom)
            nll -= (logits[i, targets[i]] - m) - c_log(denom)
    return nll / n


def _softmax_xent_bwd(real[:, ::1] probs, const long long[::1] targets,
                      double g, real[:, ::1] out):
    cdef Py_ssize_t i, j, n = probs.shape[0], v = probs.shape[1]
    cdef double scale = g / n
    with nogil:
        for i in range(n):
            for j in range(v):
                out[i, j] = <real> (probs[i, j] * scale)
            out[i, targets[i]] -= <real> scale


def _softmax_vec_fwd(real[::1] x, real[::1] out):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double m, denom = 0.0
    with nogil:
        m = x[0]
        for i in range(1, n):
            if x[i] > m:
                m = x[i]
        for i in range(n):
            out[i] = <real> c_exp(x[i] - m)
            denom += out[i]
        for i in range(n):
            out[i] = <real> (out[i] / denom)


def _softmax_vec_bwd(real[::1] p, real[::1] g, real[::1] out):
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double dot = 0.0
    with nogil:
        for i in range(n):
            dot += g[i] * p[i]
        for i in range(n):
            out[i] = <real> (p[i] * (g[i] - dot))


# numpy-level wrappers; the Tensor graph calls these


def sigmoid_fwd(x):
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    _sigmoid_fwd(x.reshape(-1), out.reshape(-1))
    return out


def sigmoid_bwd(y, g):
    out = np.empty_like(y)
    _sigmoid_bwd(y.reshape(-1), np.ascontiguousarray(g).reshape(-1), out.reshape(-1))
    return out


def tanh_bwd(y, g):
    out = np.empty_like(y)
    _tanh_bwd(y.reshape(-1), np.ascontiguousarray(g).reshape(-1), out.reshape(-1))
    return out


def blend_fwd(prev, c, h):
    out = np.empty_like(prev)
    _blend_fwd(prev.reshape(-1), c.reshape(-1), h.reshape(-1), out.reshape(-1))
    return out


def blend_bwd(prev, c, h, g):
    gprev = np.empty_like(prev)
    gc = np.empty_like(prev)
    gh = np.empty_like(prev)
    _blend_bwd(prev.reshape(-1), c.reshape(-1), h.reshape(-1),
               np.ascontiguousarray(g).reshape(-1),
               gprev.reshape(-1), gc.reshape(-1), gh.reshape(-1))
    return gprev, gc, gh


def bn_fwd(x, eps):
    x = np.ascontiguousarray(x)
    y = np.empty_like(x)
    invstd = np.empty(x.shape[1], dtype=x.dtype)
    _bn_fwd(x, float(eps), y, invstd)
    return y, invstd


def bn_bwd(y, invstd, g):
    out = np.empty_like(y)
    _bn_bwd(y, invstd, np.ascontiguousarray(g), out)
    return out


def softmax_xent_fwd(logits, targets):
    logits = np.ascontiguousarray(logits)
    targets = np.ascontiguousarray(targets, dtype=np.int64)
    probs = np.empty_like(logits)
    nll = _softmax_xent_fwd(logits, targets, probs)
    return float(nll), probs


def softmax_xent_bwd(probs, targets, g):
    targets = np.ascontiguousarray(targets, dtype=np.int64)
    out = np.empty_like(probs)
    _softmax_xent_bwd(probs, targets, float(g), out)
    return out


def softmax_vec_fwd(v):
    v = np.ascontiguousarray(v)
    out = np.empty_like(v)
    _softmax_vec_fwd(v, out)
    return out


def softmax_vec_bwd(p, g):
    out = np.empty_like(p)
    _softmax_vec_bwd(p, np.ascontiguousarray(g), out)
    return out
