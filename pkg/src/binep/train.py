"""Training loop: two-phase relaxation per batch, gradient estimates, flips
and SGD steps, per-epoch evaluation, metrics, manifest and checkpoints."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import platform
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import __version__, checkpoint
from .data import augment_batch, batches, load_cifar10_bin, load_mnist_dir, subset
from .dynamics import TraceWriter, relax
from .errors import CheckpointError, DivergenceError
from .gradients import draw_beta, ep_gradients
from .network import Network, encode_target, predict_average, predict_single
from .optim import FlipStats, apply_updates, flip_metric

log = logging.getLogger(__name__)

METRICS_VERSION = 1
MANIFEST_VERSION = 1


@dataclass
class EpochMetrics:
    epoch: int
    train_error: float
    test_error: float
    train_error_single: float
    test_error_single: float
    flip_metric: list
    mean_diagnostic: float
    alpha_min: float
    wall_time: float = 0.0

    def row(self):
        out = {
            "epoch": self.epoch,
            "train_error": repr(self.train_error),
            "test_error": repr(self.test_error),
            "train_error_single": repr(self.train_error_single),
            "test_error_single": repr(self.test_error_single),
        }
        for k, v in enumerate(self.flip_metric, start=1):
            out[f"flip_metric_{k}"] = repr(v)
        out["mean_diagnostic"] = repr(self.mean_diagnostic)
        out["alpha_min"] = repr(self.alpha_min)
        return out


@dataclass
class BatchResult:
    flips: list
    diagnostic: float
    loss: float
    beta: float
    warnings: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# per-batch work
# ---------------------------------------------------------------------------


def _chunks(n, size):
    return [(s, min(s + size, n)) for s in range(0, n, size)]


def _map(fn, items, pool):
    return list(pool.map(fn, items)) if pool is not None else [fn(i) for i in items]


def _two_phase(snap, rcfg, beta, alpha_rule, trace=None):
    def work(item):
        x, y, tr = item
        free = relax(snap, x, rcfg, trace=tr, phase="free")
        y_star = free.state[-1].copy()
        nudged = relax(
            snap, x, rcfg, steps=rcfg.K, state=free.state, target=y, beta=beta, y_star=y_star, trace=tr,
            phase="nudged",
        )
        g = ep_gradients(snap, x, free.state, nudged.state, beta, sigma=rcfg.sigma, alpha_rule=alpha_rule, reduce="sum")
        diff = y - free.state[-1]
        return g, free.diagnostic * len(x), 0.5 * float(np.sum(diff * diff))

    return work


def train_batch(net, x, labels, cfg, rng, pool=None, trace=None):
    """One step of the algorithm on a batch; mutates ``net`` through the optimizer only."""
    arch = net.arch
    rcfg = cfg.relaxation()
    snap = net.snapshot()  # frozen for every relaxation of this batch
    y = encode_target(labels, arch.n_classes, arch.n_per_class, dtype=net.dtype)
    x = np.asarray(x, dtype=net.dtype)
    beta = draw_beta(rcfg.beta, rcfg.beta_sign, rng)
    spans = _chunks(len(x), cfg.chunk)
    work = _two_phase(snap, rcfg, beta, cfg.optim.alpha_rule, trace)
    # only the first chunk is traced so the trace file has a single writer
    items = [(x[a:b], y[a:b], trace if i == 0 else None) for i, (a, b) in enumerate(spans)]
    results = _map(work, items, pool)
    # fixed summation order: identical for any worker count
    total = results[0][0]
    for g, _, _ in results[1:]:
        total = total + g
    grads = total.scaled(1.0 / len(x))
    diag = sum(r[1] for r in results) / len(x)
    loss = sum(r[2] for r in results) / len(x)
    upd = apply_updates(net, grads, cfg.optimizer(), learn_alpha=arch.alpha_mode == "learned")
    return BatchResult(upd.flips, diag, loss, beta, upd.warnings)


def predict(net, x, cfg, pool=None):
    """Free-phase output state for ``x``."""
    snap = net.snapshot()
    rcfg = cfg.relaxation()
    x = np.asarray(x, dtype=net.dtype)
    spans = _chunks(len(x), cfg.chunk)
    outs = _map(lambda ab: relax(snap, x[ab[0] : ab[1]], rcfg).output, spans, pool)
    return np.concatenate(outs) if outs else np.zeros((0, net.arch.output_size))


def evaluate(net, ds, cfg, pool=None, batch_size=None):
    """Error % under the averaged and the single-unit read-outs."""
    if len(ds) == 0:
        return 0.0, 0.0
    arch = net.arch
    bs = batch_size or max(cfg.data.batch_size, 256)
    wrong_avg = wrong_single = 0
    for xb, lb in batches(ds, bs):
        out = predict(net, xb, cfg, pool)
        wrong_avg += int(np.sum(predict_average(out, arch.n_classes, arch.n_per_class) != lb))
        wrong_single += int(np.sum(predict_single(out, arch.n_classes, arch.n_per_class) != lb))
    return 100.0 * wrong_avg / len(ds), 100.0 * wrong_single / len(ds)


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


def load_datasets(cfg):
    arch = cfg.architecture()
    d = cfg.data
    if d.dataset == "mnist":
        flat = len(arch.input_shape) == 1
        train = load_mnist_dir(d.path, "train", flatten=flat)
        test = load_mnist_dir(d.path, "test", flatten=flat)
    else:
        train = load_cifar10_bin([os.path.join(d.path, f"data_batch_{i}.bin") for i in range(1, 6)], "train")
        test = load_cifar10_bin(os.path.join(d.path, "test_batch.bin"), "test")
    if train.images.shape[1:] != arch.input_shape:
        train = train.reshaped(arch.input_shape)
        test = test.reshaped(arch.input_shape)
    train, train_idx = subset(train, d.train_subset, cfg.seed)
    test, test_idx = subset(test, d.test_subset, cfg.seed + 1)
    return train, test, train_idx, test_idx


def _digest_indices(idx):
    return hashlib.sha256(np.asarray(idx, dtype=np.int64).tobytes()).hexdigest()


# ---------------------------------------------------------------------------
# run directory
# ---------------------------------------------------------------------------


def _git_rev():
    try:
        here = os.path.dirname(os.path.abspath(__file__))
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"], cwd=here, capture_output=True, text=True, timeout=5, check=False
        )
        return out.stdout.strip() or None
    except (OSError, subprocess.SubprocessError):
        return None


def write_manifest(path, cfg, train, test, train_idx, test_idx):
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "config": cfg.model_dump(),
        "seed": cfg.seed,
        "datasets": {
            "train": {"digest": train.digest, "n": len(train), "indices_sha256": _digest_indices(train_idx)},
            "test": {"digest": test.digest, "n": len(test), "indices_sha256": _digest_indices(test_idx)},
        },
        "code_version": __version__,
        "git_rev": _git_rev(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "start_time": datetime.now(timezone.utc).isoformat(),
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)


class MetricsWriter:
    """CSV with a version comment line, a header, one row per epoch."""

    def __init__(self, path, n_layers, resume_epoch=None):
        self.path = path
        self.fields = (
            ["epoch", "train_error", "test_error", "train_error_single", "test_error_single"]
            + [f"flip_metric_{k}" for k in range(1, n_layers + 1)]
            + ["mean_diagnostic", "alpha_min"]
        )
        if resume_epoch is not None and os.path.exists(path):
            self._truncate(resume_epoch)
        else:
            with open(path, "w", newline="") as fh:
                fh.write(f"# binep metrics v{METRICS_VERSION}\n")
                csv.DictWriter(fh, fieldnames=self.fields).writeheader()

    def _truncate(self, epoch):
        with open(self.path) as fh:
            lines = fh.readlines()
        keep = lines[:2] + [ln for ln in lines[2:] if int(ln.split(",", 1)[0]) <= epoch]
        with open(self.path, "w") as fh:
            fh.writelines(keep)

    def append(self, m):
        with open(self.path, "a", newline="") as fh:
            csv.DictWriter(fh, fieldnames=self.fields).writerow(m.row())


def read_metrics(path):
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _timings_append(path, epoch, seconds):
    new = not os.path.exists(path)
    with open(path, "a") as fh:
        if new:
            fh.write("epoch,wall_seconds\n")
        fh.write(f"{epoch},{seconds:.3f}\n")


# ---------------------------------------------------------------------------
# experiment
# ---------------------------------------------------------------------------


def run_experiment(cfg, out=None, resume=False, datasets=None, progress=None):
    """Train for ``cfg.epochs`` epochs; returns the list of EpochMetrics.

    ``datasets`` may supply ``(train, test)`` directly (tests use this);
    otherwise they are loaded from ``cfg.data``.
    """
    out = out or cfg.out
    arch = cfg.architecture()
    dtype = np.float64 if cfg.dtype == "float64" else np.float32

    if datasets is None:
        train, test, train_idx, test_idx = load_datasets(cfg)
    else:
        train, test = datasets
        train_idx, test_idx = np.arange(len(train)), np.arange(len(test))
    # created only once the inputs are known to be usable
    ckdir = os.path.join(out, "checkpoints")
    os.makedirs(ckdir, exist_ok=True)

    latest = os.path.join(ckdir, "latest.ckpt")
    manifest_path = os.path.join(out, "manifest.json")
    if resume and os.path.exists(latest):
        net, start_epoch, rng_state, _ = checkpoint.load(latest)
        if net.arch != arch:
            raise CheckpointError("checkpoint architecture differs from the config")
        rng = np.random.default_rng()
        rng.bit_generator.state = rng_state
        log.info("resuming after epoch %d", start_epoch)
    else:
        rng = np.random.default_rng(cfg.seed)
        net = Network.init(arch, rng, bias_init=cfg.arch.bias_init, dtype=dtype)
        start_epoch = 0
    if not os.path.exists(manifest_path):
        write_manifest(manifest_path, cfg, train, test, train_idx, test_idx)
    metrics = MetricsWriter(os.path.join(out, "metrics.csv"), arch.n_layers, start_epoch if resume else None)
    timings = os.path.join(out, "timings.csv")

    stats = FlipStats.empty(net.n_weights)
    history = []
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for epoch in range(start_epoch + 1, cfg.epochs + 1):
            t0 = time.perf_counter()
            stats.reset()
            diags = []
            trace = None
            if cfg.trace:
                os.makedirs(os.path.join(out, "traces"), exist_ok=True)
                trace = TraceWriter(os.path.join(out, "traces", f"epoch_{epoch:04d}.tsv"))
            order = rng.permutation(len(train))
            for b, start in enumerate(range(0, len(train), cfg.data.batch_size)):
                idx = order[start : start + cfg.data.batch_size]
                x, labels = train.images[idx], train.labels[idx]
                if cfg.data.augment:
                    x = augment_batch(x, rng)
                try:
                    res = train_batch(net, x, labels, cfg, rng, pool, trace if b == 0 else None)
                except DivergenceError as exc:
                    raise DivergenceError(f"epoch {epoch}, batch {b}: {exc}", step=exc.step) from exc
                for k, n in enumerate(res.flips):
                    stats.add(k, n)
                diags.append(res.diagnostic)
            if trace is not None:
                trace.close()
            tr_avg, tr_single = evaluate(net, train, cfg, pool)
            te_avg, te_single = evaluate(net, test, cfg, pool)
            alpha_min = float(min(np.min(p.alpha) for p in net.layers))
            if alpha_min <= 0:
                log.warning("epoch %d: a scaling factor is non-positive (%.3g)", epoch, alpha_min)
            m = EpochMetrics(
                epoch, tr_avg, te_avg, tr_single, te_single, flip_metric(stats), float(np.mean(diags)), alpha_min
            )
            m.wall_time = time.perf_counter() - t0
            metrics.append(m)
            _timings_append(timings, epoch, m.wall_time)
            history.append(m)
            state = rng.bit_generator.state
            checkpoint.save(latest, net, epoch, state, {"config_source": cfg.source})
            if epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs:
                checkpoint.save(os.path.join(ckdir, f"epoch_{epoch:04d}.ckpt"), net, epoch, state)
            if progress is not None:
                progress(m)
    finally:
        if pool is not None:
            pool.shutdown()
    return history
