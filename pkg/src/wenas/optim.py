"""Plain-array optimizers: SGD, Adam, and averaged SGD.

All of them read Tensor.grad (treating None as zero) and update
Tensor.data in place. Weight decay is a plain L2 term added to the
gradient, identical across the three kinds.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

OPTIMIZER_KINDS = ("sgd", "adam", "asgd")


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    asgd_start: int = 1  # 1-based step index at which averaging begins

    def validate(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ConfigError(f"optimizer kind must be one of {OPTIMIZER_KINDS}, got {self.kind!r}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be nonnegative, got {self.weight_decay}")
        for b in (self.beta1, self.beta2):
            if not 0.0 <= b < 1.0:
                raise ConfigError(f"adam betas must lie in [0, 1), got {b}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.asgd_start < 1:
            raise ConfigError(f"asgd_start must be >= 1, got {self.asgd_start}")
        return self


def _grad(p):
    return p.grad if p.grad is not None else np.zeros_like(p.data)


class SGD:
    def __init__(self, cfg):
        self.cfg = cfg

    def step(self, params):
        lr, wd = self.cfg.learning_rate, self.cfg.weight_decay
        for p in params:
            p.data -= lr * (_grad(p) + wd * p.data)


class Adam:
    """Bias-corrected first/second moment updates."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.t = 0
        self._m = None
        self._v = None

    def step(self, params):
        cfg = self.cfg
        if self._m is None:
            self._m = [np.zeros_like(p.data) for p in params]
            self._v = [np.zeros_like(p.data) for p in params]
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for i, p in enumerate(params):
            g = _grad(p) + cfg.weight_decay * p.data
            m, v = self._m[i], self._v[i]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            p.data -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.epsilon)


class ASGD:
    """SGD plus a running arithmetic mean of the iterates.

    Averaging covers the post-update parameters of steps asgd_start,
    asgd_start+1, ... (1-based). averaged() exposes the mean for
    evaluation; before the trigger it falls back to the live values.
    """

    def __init__(self, cfg):
        self.cfg = cfg
        self.t = 0
        self._count = 0
        self._avg = None

    def step(self, params):
        lr, wd = self.cfg.learning_rate, self.cfg.weight_decay
        for p in params:
            p.data -= lr * (_grad(p) + wd * p.data)
        self.t += 1
        if self.t >= self.cfg.asgd_start:
            if self._avg is None:
                self._avg = [p.data.copy() for p in params]
                self._count = 1
            else:
                self._count += 1
                for a, p in zip(self._avg, params):
                    a += (p.data - a) / self._count

    def averaged(self, params):
        if self._avg is None:
            return [p.data.copy() for p in params]
        return [a.copy() for a in self._avg]


def build_optimizer(cfg):
    cfg.validate()
    return {"sgd": SGD, "adam": Adam, "asgd": ASGD}[cfg.kind](cfg)


def clip_global_norm(params, max_norm):
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = total ** 0.5
    if max_norm is not None and norm > max_norm > 0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm
