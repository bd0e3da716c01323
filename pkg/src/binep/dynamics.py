"""Free and nudged relaxation of layered networks to their fixed points.

State layers are held as a list ``[s^1, ..., s^N]`` of batched arrays, the
output layer last.  Two settings are supported:

* energy-based: forward-Euler descent of the energy, followed by a projection
  of the state onto ``[0, 1]`` (configurable);
* prototypical: synchronous discrete-time updates ``s <- rho(dPhi/ds)``.

Both settings use the same "drive" (net input) of a layer: the bottom-up
contribution of the layer below, the top-down contribution of the layer above
through the transposed (adjoint) synapse, and the bias.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .errors import DivergenceError, InvalidParameterError
from .numerics import (
    flatten,
    hardsigmoid,
    hardsigmoid_deriv,
    heaviside_half,
    maxpool,
    conv2d,
    pseudo_derivative,
    transpose_conv2d,
    unpool,
)

BETA_SIGNS = ("positive", "randomized")
NUDGES = ("live", "constant")


@dataclass(frozen=True)
class RelaxationConfig:
    T: int = 50
    K: int = 10
    beta: float = 0.3
    dt: float = 0.5
    beta_sign: str = "positive"
    nudge: str = "live"
    sigma: float = 0.5
    clamp: bool = True
    state_init: float | None = None  # None -> 0 for hardsigmoid, 1 for heaviside

    def __post_init__(self):
        if self.T < 1 or self.K < 1:
            raise InvalidParameterError(f"T and K must be >= 1, got T={self.T}, K={self.K}")
        if not 0.0 < self.dt <= 1.0:
            raise InvalidParameterError(f"dt must lie in (0, 1], got {self.dt}")
        if self.beta == 0:
            raise InvalidParameterError("beta must be non-zero")
        if self.sigma <= 0:
            raise InvalidParameterError(f"sigma must be > 0, got {self.sigma}")
        if self.beta_sign not in BETA_SIGNS:
            raise InvalidParameterError(f"beta_sign must be one of {BETA_SIGNS}")
        if self.nudge not in NUDGES:
            raise InvalidParameterError(f"nudge must be one of {NUDGES}")

    def init_value(self, arch):
        if self.state_init is not None:
            return float(self.state_init)
        return 1.0 if arch.activation == "heaviside" else 0.0


def activation_pair(arch, sigma=0.5):
    """``(rho, rho')`` for the architecture's activation kind."""
    if arch.activation == "heaviside":
        return heaviside_half, partial(pseudo_derivative, sigma=sigma)
    return hardsigmoid, hardsigmoid_deriv


# ---------------------------------------------------------------------------
# synapse primitives
# ---------------------------------------------------------------------------


def synapse_forward(syn, w, src):
    """Bottom-up contribution of synapse ``syn`` and its pool indices (conv only)."""
    if syn.kind == "fc":
        if src.ndim > 2:
            src = flatten(src)
        return src @ w.T, None
    z = conv2d(w, src, padding=syn.conv.padding)
    return maxpool(z, syn.conv.pool)


def synapse_feedback(syn, w, dst, ind):
    """Top-down contribution of ``dst`` back through the adjoint of ``syn``."""
    if syn.kind == "fc":
        fb = dst @ w
        if len(syn.in_shape) > 1:
            fb = fb.reshape((dst.shape[0],) + syn.in_shape)
        return fb
    return transpose_conv2d(w, unpool(dst, ind), padding=syn.conv.padding)


def _bias(syn, b):
    return b.reshape(-1, 1, 1) if syn.kind == "conv" else b


@dataclass
class Prepared:
    """Input batch with its constant bottom-up drive into the first layer."""

    x: np.ndarray
    drive0: np.ndarray
    ind0: object


def prepare(snap, x):
    if isinstance(x, Prepared):
        return x
    arch = snap.arch
    x = np.asarray(x, dtype=snap.weights[0].dtype)
    if x.shape[1:] != arch.input_shape:
        if x.ndim == 2 and int(np.prod(arch.input_shape)) == x.shape[1] and len(arch.input_shape) == 3:
            x = x.reshape((x.shape[0],) + arch.input_shape)
        else:
            raise InvalidParameterError(f"input shape {x.shape[1:]} does not match architecture {arch.input_shape}")
    syn = arch.synapses[0]
    d0, ind0 = synapse_forward(syn, snap.weights[0], x)
    return Prepared(x, d0, ind0)


def drives(snap, acts, prep):
    """Net input of every state layer given the presynaptic activity ``acts``.

    Returns ``(drives, indices)`` where ``indices[k]`` are the pool indices of
    synapse ``k`` (None for fc synapses).
    """
    syns = snap.arch.synapses
    n = len(syns)
    fwd = [prep.drive0]
    inds = [prep.ind0]
    for k in range(1, n):
        f, ind = synapse_forward(syns[k], snap.weights[k], acts[k - 1])
        fwd.append(f)
        inds.append(ind)
    out = []
    for k in range(n):
        d = fwd[k] + _bias(syns[k], snap.biases[k])
        if k + 1 < n:
            d = d + synapse_feedback(syns[k + 1], snap.weights[k + 1], acts[k + 1], inds[k + 1])
        out.append(d)
    return out, inds


def forward_indices(snap, acts, prep):
    """Pool indices of every synapse for the given presynaptic activity."""
    syns = snap.arch.synapses
    inds = [prep.ind0]
    for k in range(1, len(syns)):
        inds.append(synapse_forward(syns[k], snap.weights[k], acts[k - 1])[1] if syns[k].kind == "conv" else None)
    return inds


# ---------------------------------------------------------------------------
# scalar functions
# ---------------------------------------------------------------------------


def _per_sample_dot(a, b):
    return np.einsum("bi,bi->b", a.reshape(a.shape[0], -1), b.reshape(b.shape[0], -1))


def _coupling(snap, acts, prep):
    """Per-sample ``sum_k a^k . (forward_k(a^{k-1}) + b_k)``."""
    syns = snap.arch.synapses
    total = np.zeros(prep.x.shape[0], dtype=prep.drive0.dtype)
    for k, syn in enumerate(syns):
        f = prep.drive0 if k == 0 else synapse_forward(syn, snap.weights[k], acts[k - 1])[0]
        total += _per_sample_dot(acts[k], f + _bias(syn, snap.biases[k]))
    return total


def energy(snap, state, x, sigma=0.5, per_sample=False):
    """``1/2 sum s^2 - sum_pairs rho(s_i) W_ij rho(s_j) - sum b rho(s)``.

    Each bidirectional synapse is counted once, which equals the half-sum over
    ordered pairs of a symmetric weight matrix.  Summed over the batch unless
    ``per_sample``.
    """
    prep = prepare(snap, x)
    rho, _ = activation_pair(snap.arch, sigma)
    acts = [rho(s) for s in state]
    sq = sum(0.5 * _per_sample_dot(s, s) for s in state)
    e = sq - _coupling(snap, acts, prep)
    return e if per_sample else float(e.sum())


def primitive(snap, state, x, per_sample=False):
    """Scalar whose state gradient is the prototypical pre-activation."""
    prep = prepare(snap, x)
    p = _coupling(snap, list(state), prep)
    return p if per_sample else float(p.sum())


def loss(state, target, per_sample=False):
    """Squared error ``1/2 ||y - y_hat||^2`` on the raw output state."""
    diff = target - state[-1]
    l = 0.5 * np.einsum("bi,bi->b", diff, diff)
    return l if per_sample else float(l.mean())


# ---------------------------------------------------------------------------
# steps
# ---------------------------------------------------------------------------


def _nudge(out, target, beta, y_star, cfg):
    ref = y_star if (cfg.nudge == "constant" and y_star is not None) else out
    return beta * (target - ref)


def step_energy_based(snap, state, x, cfg, target=None, beta=0.0, y_star=None):
    """One forward-Euler step ``s += dt (-s + rho'(s) drive(rho(s)))`` plus output nudge."""
    prep = prepare(snap, x)
    rho, drho = activation_pair(snap.arch, cfg.sigma)
    acts = [rho(s) for s in state]
    d, _ = drives(snap, acts, prep)
    new = []
    last = len(state) - 1
    for k, s in enumerate(state):
        ds = -s + drho(s) * d[k]
        if k == last and beta:
            ds = ds + _nudge(s, target, beta, y_star, cfg)
        s_new = s + cfg.dt * ds
        if cfg.clamp:
            s_new = np.clip(s_new, 0.0, 1.0)
        new.append(s_new)
    return new


def step_prototypical(snap, state, x, cfg, target=None, beta=0.0, y_star=None):
    """Synchronous update of every layer from the previous state."""
    if snap.arch.activation != "hardsigmoid":
        raise InvalidParameterError("the prototypical setting needs a continuous activation")
    prep = prepare(snap, x)
    d, _ = drives(snap, list(state), prep)
    new = [hardsigmoid(v) for v in d]
    if beta:
        new[-1] = new[-1] + _nudge(state[-1], target, beta, y_star, cfg)
    return new


def step(snap, state, x, cfg, target=None, beta=0.0, y_star=None):
    fn = step_energy_based if snap.arch.setting == "energy_based" else step_prototypical
    return fn(snap, state, x, cfg, target=target, beta=beta, y_star=y_star)


# ---------------------------------------------------------------------------
# relaxation
# ---------------------------------------------------------------------------


def init_state(arch, batch, value=0.0, dtype=np.float64):
    return [np.full((batch,) + shape, value, dtype=dtype) for shape in arch.state_shapes]


@dataclass
class RelaxResult:
    state: list
    diagnostic: float
    steps: int
    trace: list = field(default_factory=list)

    @property
    def output(self):
        return self.state[-1]


def scalar_value(snap, state, x, cfg):
    """Energy (energy-based) or primitive (prototypical) of a state."""
    if snap.arch.setting == "energy_based":
        return energy(snap, state, x, cfg.sigma)
    return primitive(snap, state, x)


def relax(
    snap, x, cfg, *, steps=None, state=None, target=None, beta=0.0, y_star=None, trace=None, phase="free", stop_below=None
):
    """Apply ``steps`` updates (default ``cfg.T``) and return the final state.

    ``target=None`` forces ``beta = 0``.  ``trace``, when given, is called as
    ``trace(phase, step, value, max_delta)`` after every step.  With
    ``stop_below`` the loop ends early once the max state change drops under it.
    """
    prep = prepare(snap, x)
    arch = snap.arch
    batch = prep.x.shape[0]
    if steps is None:
        steps = cfg.T
    if state is None:
        state = init_state(arch, batch, cfg.init_value(arch), prep.drive0.dtype)
    else:
        state = [np.array(s, dtype=prep.drive0.dtype, copy=True) for s in state]
    if target is None:
        beta = 0.0
    elif beta:
        target = np.asarray(target, dtype=prep.drive0.dtype)
        if target.shape != state[-1].shape:
            raise InvalidParameterError(f"target shape {target.shape} != output shape {state[-1].shape}")
    delta = 0.0
    for t in range(steps):
        new = step(snap, state, prep, cfg, target=target, beta=beta, y_star=y_star)
        delta = 0.0
        for s_old, s_new in zip(state, new):
            if not np.all(np.isfinite(s_new)):
                raise DivergenceError(f"non-finite state during {phase} phase at step {t + 1}", step=t + 1)
            delta = max(delta, float(np.max(np.abs(s_new - s_old))) if s_new.size else 0.0)
        state = new
        if trace is not None:
            trace(phase, t + 1, scalar_value(snap, state, prep, cfg), delta)
        if stop_below is not None and delta < stop_below:
            return RelaxResult(state, delta, t + 1)
    return RelaxResult(state, delta, steps)


class TraceWriter:
    """Tab-separated per-step trace: phase, step, energy or primitive, max state change."""

    header = "phase\tstep\tvalue\tmax_delta\n"

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w")
        self._fh.write(self.header)

    def __call__(self, phase, step, value, delta):
        self._fh.write(f"{phase}\t{step}\t{value:.17g}\t{delta:.17g}\n")

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
