"""Contrastive gradient estimates from a free and a nudged fixed point.

Every estimate is a descent direction for the output loss: as ``beta -> 0``
it tends to ``-dL*/dtheta``.  The estimate for synapse ``k`` only reads the
states on both sides of that synapse at the two fixed points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import activation_pair, prepare, synapse_forward
from .errors import DimensionError, InvalidParameterError
from .numerics import conv_weight_grad, flatten, unpool

ALPHA_RULES = ("exact", "half_scaled")


@dataclass
class LayerGrad:
    W: np.ndarray
    b: np.ndarray
    alpha: np.ndarray | None = None

    def scaled(self, c):
        return LayerGrad(self.W * c, self.b * c, None if self.alpha is None else self.alpha * c)

    def __add__(self, other):
        alpha = None if self.alpha is None else self.alpha + other.alpha
        return LayerGrad(self.W + other.W, self.b + other.b, alpha)


@dataclass
class GradientSet:
    layers: list
    beta: float
    ternary: bool = False
    batch: int = 1
    extra: dict = field(default_factory=dict)

    def scaled(self, c):
        return GradientSet([g.scaled(c) for g in self.layers], self.beta, self.ternary, self.batch)

    def __add__(self, other):
        if len(self.layers) != len(other.layers):
            raise DimensionError("gradient sets have different depths")
        return GradientSet(
            [a + b for a, b in zip(self.layers, other.layers)], self.beta, self.ternary, self.batch + other.batch
        )

    def groups(self):
        """Flat ``{name: array}`` view, e.g. ``W1, b1, alpha1`` for the first synapse."""
        out = {}
        for k, g in enumerate(self.layers, start=1):
            out[f"W{k}"] = g.W
            out[f"b{k}"] = g.b
            if g.alpha is not None:
                out[f"alpha{k}"] = np.atleast_1d(g.alpha)
        return out


def _activity(snap, state, sigma):
    if snap.arch.setting == "energy_based":
        rho, _ = activation_pair(snap.arch, sigma)
        return [rho(s) for s in state]
    return list(state)


def _correlations(snap, x, acts):
    """Batch-summed ``dPhi/dW`` and ``dPhi/db`` of every synapse at one state."""
    out = []
    for k, syn in enumerate(snap.arch.synapses):
        src = x if k == 0 else acts[k - 1]
        dst = acts[k]
        if syn.kind == "fc":
            src2 = flatten(src) if src.ndim > 2 else src
            cw = dst.T @ src2
            cb = dst.sum(axis=0)
        else:
            # pool indices of this very phase
            _, ind = synapse_forward(syn, snap.weights[k], src)
            cw = conv_weight_grad(unpool(dst, ind), src, syn.conv.kernel, syn.conv.padding)
            cb = dst.sum(axis=(0, 2, 3))
        out.append((cw, cb))
    return out


def _alpha_from_weight_grad(snap, k, gw):
    sign = snap.signs[k]
    if gw.ndim == 4:
        return (sign * gw).reshape(gw.shape[0], -1).sum(axis=1)
    return np.asarray((sign * gw).sum())


def ep_gradients(
    snap,
    x,
    free,
    nudged,
    beta,
    *,
    sigma=0.5,
    alpha_rule="exact",
    reduce="mean",
):
    """Gradient estimates for every synapse from the free and nudged states.

    Energy-based nets correlate ``rho(s)``, prototypical nets the raw states.
    With binary activations the weight estimate uses the ``2/beta`` scale so
    that it is ternary in ``{-2/beta, 0, 2/beta}``; bias estimates keep
    ``1/beta``.  Scaling-factor estimates are produced when the architecture
    learns them: ``exact`` gives ``sum(sign * dW)`` (the true limit),
    ``half_scaled`` gives ``alpha/2`` times that.
    """
    if beta == 0:
        raise InvalidParameterError("beta must be non-zero")
    if alpha_rule not in ALPHA_RULES:
        raise InvalidParameterError(f"alpha_rule must be one of {ALPHA_RULES}")
    if reduce not in ("mean", "sum"):
        raise InvalidParameterError("reduce must be 'mean' or 'sum'")
    prep = prepare(snap, x)
    xb = prep.x
    batch = xb.shape[0]
    if len(free) != len(nudged) or any(a.shape != b.shape for a, b in zip(free, nudged)):
        raise DimensionError("free and nudged states differ in shape")
    arch = snap.arch
    ternary = arch.activation == "heaviside"
    c0 = _correlations(snap, xb, _activity(snap, free, sigma))
    c1 = _correlations(snap, xb, _activity(snap, nudged, sigma))
    norm = 1.0 / batch if reduce == "mean" else 1.0
    layers = []
    for k, ((w0, b0), (w1, b1)) in enumerate(zip(c0, c1)):
        dw = (w1 - w0) * (norm / beta)
        db = (b1 - b0) * (norm / beta)
        alpha = None
        if arch.alpha_mode == "learned":
            alpha = _alpha_from_weight_grad(snap, k, dw)
            if alpha_rule == "half_scaled":
                alpha = 0.5 * snap.alphas[k] * alpha
        if ternary:
            dw = 2.0 * dw
        layers.append(LayerGrad(dw, db, alpha))
    return GradientSet(layers, float(beta), ternary, batch)


def randomized_sign_combine(g_plus=None, g_minus=None):
    """Pass through the estimate of the drawn sign; the signed beta is already
    folded into its ``1/beta`` factor."""
    if (g_plus is None) == (g_minus is None):
        raise InvalidParameterError("exactly one of the two signed estimates must be given")
    return g_plus if g_plus is not None else g_minus


def draw_beta(beta, mode, rng):
    """Signed beta for one batch: a single Rademacher draw when randomized."""
    if mode == "randomized":
        return float(abs(beta) * (1.0 if rng.random() < 0.5 else -1.0))
    return float(beta)
