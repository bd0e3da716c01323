"""Sign flips for binary weights, SGD for biases and scaling factors, and the
flip-rate telemetry."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InvalidParameterError

log = logging.getLogger(__name__)


def _per_layer(value, n, name):
    vals = list(value) if isinstance(value, (list, tuple)) else [value] * n
    if len(vals) != n:
        raise InvalidParameterError(f"{name}: expected a scalar or {n} values, got {len(vals)}")
    return [float(v) for v in vals]


@dataclass
class OptimConfig:
    gamma: list
    tau: list
    lr_bias: list
    lr_alpha: list

    def __post_init__(self):
        for name in ("gamma", "tau", "lr_bias", "lr_alpha"):
            v = getattr(self, name)
            if not isinstance(v, (list, tuple)):
                setattr(self, name, [float(v)])
        if any(not 0 < g <= 1 for g in self.gamma):
            raise InvalidParameterError(f"gamma must lie in (0, 1], got {self.gamma}")
        if any(t <= 0 for t in self.tau):
            raise InvalidParameterError(f"tau must be > 0, got {self.tau}")
        if any(lr < 0 for lr in self.lr_bias + self.lr_alpha):
            raise InvalidParameterError("learning rates must be >= 0")

    def for_layers(self, n):
        """Copy with every single-valued field repeated ``n`` times."""
        def fit(v, name):
            return _per_layer(v[0] if len(v) == 1 else v, n, name)

        return OptimConfig(
            fit(self.gamma, "gamma"), fit(self.tau, "tau"), fit(self.lr_bias, "lr_bias"), fit(self.lr_alpha, "lr_alpha")
        )

    @classmethod
    def broadcast(cls, n_layers, gamma, tau, lr_bias, lr_alpha=0.0):
        return cls(
            _per_layer(gamma, n_layers, "gamma"),
            _per_layer(tau, n_layers, "tau"),
            _per_layer(lr_bias, n_layers, "lr_bias"),
            _per_layer(lr_alpha, n_layers, "lr_alpha"),
        )


@dataclass
class FlipStats:
    flips: list
    totals: list

    @classmethod
    def empty(cls, totals):
        return cls([0] * len(totals), list(totals))

    def add(self, k, n):
        self.flips[k] += int(n)

    def reset(self):
        self.flips = [0] * len(self.totals)


def bop_step(g, m, sign, gamma, tau):
    """One flip-optimizer step. Returns ``(m_new, sign_new, n_flips)``.

    ``g`` is the loss gradient (a flip is proposed where the averaged
    gradient is large and agrees in sign with the weight).  Inputs are not
    modified; the momentum is not cleared after a flip.
    """
    g = np.asarray(g)
    m = np.asarray(m)
    sign = np.asarray(sign)
    if not (g.shape == m.shape == sign.shape):
        raise DimensionError(f"bop_step shape mismatch: g{g.shape} m{m.shape} sign{sign.shape}")
    m_new = gamma * g + (1.0 - gamma) * m
    flip = (np.abs(m_new) > tau) & (np.sign(m_new) == sign)
    sign_new = np.where(flip, -sign, sign).astype(sign.dtype)
    return m_new, sign_new, int(flip.sum())


def sgd_step(param, g, lr):
    param = np.asarray(param)
    g = np.asarray(g)
    if param.shape != g.shape:
        raise DimensionError(f"sgd_step shape mismatch {param.shape} vs {g.shape}")
    return param + lr * g


def flip_metric(stats):
    """``log(flips / total + e^-9)`` per layer.

    ``flips`` counts flip events, so a weight that flips twice in an epoch
    counts twice and the ratio may exceed 1.
    """
    out = []
    for f, n in zip(stats.flips, stats.totals):
        if n <= 0:
            raise InvalidParameterError("flip metric needs a positive weight count")
        if f < 0:
            raise InvalidParameterError(f"negative flip count {f}")
        out.append(math.log(f / n + math.exp(-9)))
    return out


def momentum_continuous(m0, g, gamma, horizon):
    """Exact solution of ``dm/dt = gamma (g - m)`` for piecewise-constant ``g``.

    ``g`` is a scalar (held over ``horizon``) or a sequence of values each held
    for one unit of time; returns ``m`` at the end.
    """
    if gamma <= 0:
        raise InvalidParameterError("gamma must be > 0")
    if np.ndim(g) == 0:
        return g + (m0 - g) * math.exp(-gamma * horizon)
    m = m0
    for gi in g:
        m = gi + (m - gi) * math.exp(-gamma)
    return m


@dataclass
class UpdateResult:
    flips: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


def apply_updates(net, grads, cfg, learn_alpha=False):
    """Flip signs, then step biases, then step scaling factors, in place on
    ``net.layers`` (each array is replaced, never mutated)."""
    cfg = cfg.for_layers(len(net.layers))
    res = UpdateResult()
    for k, (p, g) in enumerate(zip(net.layers, grads.layers)):
        # the estimate is a descent direction; the flip rule wants the gradient
        p.momentum, p.sign, nf = bop_step(-g.W, p.momentum, p.sign, cfg.gamma[k], cfg.tau[k])
        res.flips.append(nf)
    for k, (p, g) in enumerate(zip(net.layers, grads.layers)):
        p.bias = sgd_step(p.bias, g.b, cfg.lr_bias[k])
    if learn_alpha:
        for k, (p, g) in enumerate(zip(net.layers, grads.layers)):
            if g.alpha is None:
                continue
            p.alpha = sgd_step(p.alpha, g.alpha, cfg.lr_alpha[k])
            if np.any(p.alpha <= 0):
                msg = f"scaling factor of layer {k + 1} became non-positive (min {float(np.min(p.alpha)):.3g})"
                log.warning(msg)
                res.warnings.append(msg)
    return res
