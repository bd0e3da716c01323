"""Brute-force finite-difference gradients of the fixed-point loss.

This module shares the relaxation code with training but nothing of the
contrastive estimator, so agreement between the two is a real check.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import loss, relax
from .errors import ConvergenceError, InvalidParameterError
from .gradients import ep_gradients

CONVERGENCE_TOL = 1e-8
STEP_FACTOR = 4
# relaxations stop once the state moves less than this; far below what a
# central difference with eps ~ 1e-5 can resolve
SETTLED = 1e-13


def _steps(cfg, steps):
    return STEP_FACTOR * cfg.T if steps is None else steps


def fixed_point(snap, x, cfg, *, steps=None, tol=CONVERGENCE_TOL, target=None, beta=0.0, state=None):
    """Relax and insist on convergence (max last-step change below ``tol``)."""
    res = relax(
        snap, x, cfg, steps=_steps(cfg, steps), target=target, beta=beta, state=state, stop_below=min(tol, SETTLED)
    )
    if res.diagnostic >= tol:
        raise ConvergenceError(
            f"relaxation not converged after {res.steps} steps (last change {res.diagnostic:.3g} >= {tol:g})"
        )
    return res.state


def loss_at_fixed_point(snap, x, y, cfg, *, steps=None, tol=CONVERGENCE_TOL):
    """Batch-mean ``1/2 ||y - y_hat*||^2`` at the free fixed point."""
    state = fixed_point(snap, x, cfg, steps=steps, tol=tol)
    return loss(state, np.asarray(y, dtype=state[-1].dtype))


def parameter_groups(snap):
    """Names of every trainable group, in a fixed order."""
    names = []
    for k in range(1, snap.arch.n_layers + 1):
        names += [f"W{k}", f"b{k}"]
        if snap.arch.alpha_mode == "learned":
            names.append(f"alpha{k}")
    return names


def _split(name):
    for prefix in ("alpha", "W", "b"):
        if name.startswith(prefix) and name[len(prefix):].isdigit():
            return prefix, int(name[len(prefix):]) - 1
    raise InvalidParameterError(f"unknown parameter group {name!r}")


def _get(snap, name):
    kind, k = _split(name)
    if kind == "W":
        return snap.weights[k]
    if kind == "b":
        return snap.biases[k]
    return np.atleast_1d(snap.alphas[k]).astype(np.float64)


def _with(snap, name, value):
    kind, k = _split(name)
    if kind == "W":
        return snap.with_weight(k, value)
    if kind == "b":
        return snap.with_bias(k, value)
    return snap.with_alpha(k, value.reshape(np.shape(snap.alphas[k])))


def fd_gradient(snap, x, y, cfg, name, eps=1e-5, *, steps=None, tol=CONVERGENCE_TOL):
    """Central difference of the fixed-point loss for every entry of group ``name``.

    Weights are perturbed as real numbers (the sign structure is ignored).
    Every relaxation starts from the same initial state.
    """
    if eps <= 0:
        raise InvalidParameterError("eps must be > 0")
    base = _get(snap, name)
    grad = np.zeros(base.shape, dtype=np.float64)
    for idx in np.ndindex(base.shape):
        vals = []
        for d in (eps, -eps):
            p = base.copy()
            p[idx] += d
            vals.append(loss_at_fixed_point(_with(snap, name, p), x, y, cfg, steps=steps, tol=tol))
        grad[idx] = (vals[0] - vals[1]) / (2.0 * eps)
    return grad


@dataclass
class GroupCheck:
    name: str
    rel_l2: float
    max_abs: float
    norm_fd: float
    norm_ep: float


@dataclass
class GradCheckReport:
    beta: float
    eps: float
    groups: list = field(default_factory=list)
    # units whose saturation status differs between the two phases; the
    # contrastive estimate is only a derivative when this is zero
    active_set_changes: int = 0

    @property
    def worst(self):
        return max(g.rel_l2 for g in self.groups)

    def passed(self, tol=0.02):
        return all(g.rel_l2 < tol for g in self.groups)

    def rows(self):
        return [asdict(g) for g in self.groups]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["name", "rel_l2", "max_abs", "norm_fd", "norm_ep"])
            w.writeheader()
            w.writerows(self.rows())

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(
                {
                    "beta": self.beta,
                    "eps": self.eps,
                    "active_set_changes": self.active_set_changes,
                    "groups": self.rows(),
                },
                fh,
                indent=2,
            )


def relative_l2(est, ref):
    """``||est - ref|| / ||ref||``; falls back to the absolute norm when ``ref`` is zero."""
    diff = float(np.linalg.norm(np.ravel(est - ref)))
    norm = float(np.linalg.norm(np.ravel(ref)))
    return diff / norm if norm > 0 else diff


def two_phases(snap, x, y, cfg, beta, *, steps=None, tol=CONVERGENCE_TOL):
    """Converged free state and the nudged state reached from it."""
    y = np.asarray(y, dtype=np.float64)
    free = fixed_point(snap, x, cfg, steps=steps, tol=tol)
    nudged = fixed_point(snap, x, cfg, steps=steps, tol=tol, target=y, beta=beta, state=free)
    return free, nudged


def ep_estimate(snap, x, y, cfg, beta, *, steps=None, tol=CONVERGENCE_TOL, alpha_rule="exact"):
    """Contrastive estimate with both phases relaxed to convergence."""
    free, nudged = two_phases(snap, x, y, cfg, beta, steps=steps, tol=tol)
    return ep_gradients(snap, x, free, nudged, beta, sigma=cfg.sigma, alpha_rule=alpha_rule)


def active_set_changes(free, nudged):
    """Number of units that enter or leave a face of the unit box between phases."""
    n = 0
    for a, b in zip(free, nudged):
        n += int(np.sum((a <= 0) != (b <= 0)) + np.sum((a >= 1) != (b >= 1)))
    return n


def gdu_check(snap, x, y, cfg, beta=1e-2, eps=1e-5, *, steps=None, tol=CONVERGENCE_TOL, groups=None):
    """Compare the contrastive estimate with ``-dL*/dtheta`` for every group."""
    if snap.arch.activation != "hardsigmoid":
        raise InvalidParameterError("the gradient check needs continuous activations")
    free, nudged = two_phases(snap, x, y, cfg, beta, steps=steps, tol=tol)
    est = ep_gradients(snap, x, free, nudged, beta, sigma=cfg.sigma).groups()
    report = GradCheckReport(beta, eps, active_set_changes=active_set_changes(free, nudged))
    for name in groups or parameter_groups(snap):
        fd = -fd_gradient(snap, x, y, cfg, name, eps, steps=steps, tol=tol)
        ep = np.asarray(est[name]).reshape(fd.shape)
        report.groups.append(
            GroupCheck(
                name,
                relative_l2(ep, fd),
                float(np.max(np.abs(ep - fd))),
                float(np.linalg.norm(fd)),
                float(np.linalg.norm(ep)),
            )
        )
    return report
