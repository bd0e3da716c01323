"""Seeded small networks for checking gradient estimates against the oracle."""

from __future__ import annotations

import numpy as np

from .dynamics import RelaxationConfig
from .errors import ConvergenceError
from .network import ArchitectureSpec, ConvSpec, Network, encode_target, kaiming_uniform
from .oracle import active_set_changes, gdu_check, two_phases

CONV_NETS = (
    dict(input_shape=(1, 4, 4), conv=(ConvSpec(2, kernel=3, padding=1, pool=2),), n_classes=3),
    dict(input_shape=(2, 6, 6), conv=(ConvSpec(3, kernel=3, padding=1, pool=2),), hidden=(6,), n_classes=4),
)


def fc_arch(sizes, setting="energy_based", alpha_mode="fixed"):
    """``[n_in, h_1, ..., n_out]`` to an architecture."""
    return ArchitectureSpec((sizes[0],), tuple(sizes[1:-1]), n_classes=sizes[-1], setting=setting, alpha_mode=alpha_mode)


def random_problem(arch, seed, batch, full_precision=True):
    """Network snapshot plus an input batch and one-hot targets.

    Full-precision nets draw real weights; otherwise the binarized init with
    its scaling factors is kept.
    """
    rng = np.random.default_rng(seed)
    snap = Network.init(arch, rng).snapshot()
    if full_precision:
        for k, syn in enumerate(arch.synapses):
            snap = snap.with_weight(k, kaiming_uniform(syn.weight_shape, rng))
    x = rng.uniform(0.0, 1.0, size=(batch,) + arch.input_shape)
    y = encode_target(rng.integers(0, arch.n_classes, size=batch), arch.n_classes, arch.n_per_class)
    return snap, x, y


def stable_problem(arch, seed, batch, cfg, beta, full_precision=True, max_tries=20):
    """First seed from ``seed`` on whose nudge leaves the saturation pattern intact
    and where every layer has an unsaturated unit.

    The contrastive estimate is a derivative of the loss only while no unit
    crosses a kink of the activation between the two phases.  A fully
    saturated layer makes every gradient upstream of it vanish, which would
    turn the comparison into 0 == 0.
    Returns ``(snap, x, y, used_seed)``.
    """
    for t in range(max_tries):
        snap, x, y = random_problem(arch, seed + t, batch, full_precision)
        try:
            free, nudged = two_phases(snap, x, y, cfg, beta)
        except ConvergenceError:
            continue
        live = all(np.any((s > 0) & (s < 1)) for s in free)
        if live and active_set_changes(free, nudged) == 0:
            return snap, x, y, seed + t
    raise ConvergenceError(f"no stable problem among seeds {seed}..{seed + max_tries - 1}")


def _relaxation(gc):
    return RelaxationConfig(T=gc.T, K=gc.T, beta=gc.beta)


def gdu_nets(cfg, n_nets=None, alpha=False):
    """Problems for the weight/bias check (full precision) or the scaling-factor check."""
    gc = cfg.gradcheck
    setting = gc.setting
    beta = gc.alpha_beta if alpha else gc.beta
    rcfg = _relaxation(gc)
    mode = "learned" if alpha else "fixed"
    nets = []
    sizes = gc.sizes[:n_nets] if n_nets else gc.sizes
    for i, sz in enumerate(sizes):
        arch = fc_arch(sz, setting, mode)
        snap, x, y, used = stable_problem(arch, cfg.seed + 1000 * i, gc.batch, rcfg, beta, not alpha, gc.max_tries)
        nets.append(("fc-" + "-".join(map(str, sz)) + f"@{used}", snap, x, y))
    for i, kw in enumerate(CONV_NETS):
        arch = ArchitectureSpec(setting=setting, alpha_mode=mode, **kw)
        snap, x, y, used = stable_problem(
            arch, cfg.seed + 1000 * (len(sizes) + i), gc.batch, rcfg, beta, not alpha, gc.max_tries
        )
        nets.append((f"conv{i + 1}@{used}", snap, x, y))
    return nets, rcfg, beta


def run_gradcheck(cfg, n_nets=None, alpha=None):
    """Reports for every check net; ``alpha`` None runs both the weight/bias
    check and the scaling-factor check."""
    gc = cfg.gradcheck
    out = []
    for use_alpha in ([False, True] if alpha is None else [alpha]):
        nets, rcfg, beta = gdu_nets(cfg, n_nets, use_alpha)
        for label, snap, x, y in nets:
            groups = [f"alpha{k}" for k in range(1, snap.arch.n_layers + 1)] if use_alpha else [
                f"{p}{k}" for k in range(1, snap.arch.n_layers + 1) for p in ("W", "b")
            ]
            rep = gdu_check(snap, x, y, rcfg, beta=beta, eps=gc.eps, groups=groups)
            out.append((("alpha:" if use_alpha else "") + label, rep))
    return out
