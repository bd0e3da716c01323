"""Command-line entry point: ``binep train | eval | gradcheck | inspect-data``.

Exit codes: 0 success, 1 invalid input or config, 2 runtime failure,
3 a tolerance check failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import checkpoint
from .errors import BinepError, CheckpointError, ConfigError, DataFormatError, InvalidParameterError

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_TOLERANCE = 0, 1, 2, 3

log = logging.getLogger("binep")


def _common(p):
    p.add_argument("--config", help="TOML file or bundled preset name")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry by dotted path (repeatable)")
    p.add_argument("--subset", type=int, help="train-split size (first N after a seeded shuffle)")
    p.add_argument("--workers", type=int, help="relaxation worker threads")
    p.add_argument("--out", help="output directory")


def build_parser():
    ap = argparse.ArgumentParser(prog="binep", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run an experiment")
    _common(p)
    p.add_argument("--resume", action="store_true", help="continue from <out>/checkpoints/latest.ckpt")

    p = sub.add_parser("eval", help="error of a checkpoint under both read-outs")
    _common(p)
    p.add_argument("checkpoint")
    p.add_argument("--split", choices=["train", "test"], default="test")

    p = sub.add_parser("gradcheck", help="compare gradient estimates with finite differences")
    _common(p)
    p.add_argument("--nets", type=int, default=None, help="number of fc nets (default: all configured sizes)")

    p = sub.add_parser("inspect-data", help="summarize the configured dataset")
    _common(p)

    sub.add_parser("presets", help="list bundled presets")
    return ap


def _config(args):
    from .config import load_config

    overrides = list(args.overrides)
    if args.subset is not None:
        overrides.append(f"data.train_subset={args.subset}")
    if args.workers is not None:
        overrides.append(f"workers={args.workers}")
    if args.out is not None:
        overrides.append(f"out={json.dumps(args.out)}")
    return load_config(args.config, overrides)


def cmd_train(args):
    from .train import run_experiment

    cfg = _config(args)

    def show(m):
        pis = " ".join(f"{v:.3f}" for v in m.flip_metric)
        print(f"epoch {m.epoch:3d}  train {m.train_error:6.2f}%  test {m.test_error:6.2f}%  "
              f"(single {m.test_error_single:6.2f}%)  flip {pis}  {m.wall_time:.1f}s", flush=True)

    run_experiment(cfg, resume=args.resume, progress=show)
    return EXIT_OK


def cmd_eval(args):
    from .data import load_mnist_dir, load_cifar10_bin, subset
    from .train import evaluate

    cfg = _config(args)
    net, epoch, _, _ = checkpoint.load(args.checkpoint)
    if cfg.architecture() != net.arch:
        # the checkpoint defines the model; keep dynamics and data from the config
        log.info("using the checkpoint architecture")
    d = cfg.data
    if d.dataset == "mnist":
        ds = load_mnist_dir(d.path, args.split, flatten=len(net.arch.input_shape) == 1)
    else:
        names = [f"data_batch_{i}.bin" for i in range(1, 6)] if args.split == "train" else ["test_batch.bin"]
        ds = load_cifar10_bin([os.path.join(d.path, n) for n in names], args.split)
    if ds.images.shape[1:] != net.arch.input_shape:
        if int(np.prod(ds.images.shape[1:])) != int(np.prod(net.arch.input_shape)):
            raise DataFormatError(f"data samples {ds.images.shape[1:]} do not fit the model input {net.arch.input_shape}")
        ds = ds.reshaped(net.arch.input_shape)
    n = d.train_subset if args.split == "train" else d.test_subset
    ds, _ = subset(ds, n, cfg.seed if args.split == "train" else cfg.seed + 1)
    err_avg, err_single = evaluate(net, ds, cfg)
    print(f"checkpoint epoch {epoch}, {args.split} split, {len(ds)} samples")
    print(f"error (average read-out) {err_avg:.2f}%")
    print(f"error (single read-out)  {err_single:.2f}%")
    print(f"difference               {abs(err_avg - err_single):.2f}%")
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradcheck import run_gradcheck

    cfg = _config(args)
    if cfg.arch.activation != "hardsigmoid":
        raise InvalidParameterError(
            "gradient checking needs continuous activations; the step activation has no derivative to compare with"
        )
    out = cfg.out
    os.makedirs(out, exist_ok=True)
    results = run_gradcheck(cfg, n_nets=args.nets)
    ok = True
    print("net\tgroup\trel_l2\tmax_abs\tpass")
    for label, rep in results:
        for g in rep.groups:
            passed = g.rel_l2 < cfg.gradcheck.tol
            ok &= passed
            print(f"{label}\t{g.name}\t{g.rel_l2:.5f}\t{g.max_abs:.3g}\t{'ok' if passed else 'FAIL'}")
    with open(os.path.join(out, "gradcheck.json"), "w") as fh:
        json.dump(
            {
                "tol": cfg.gradcheck.tol,
                "nets": [
                    {"net": label, "beta": rep.beta, "eps": rep.eps, "active_set_changes": rep.active_set_changes,
                     "groups": rep.rows()}
                    for label, rep in results
                ],
            },
            fh,
            indent=2,
        )
    return EXIT_OK if ok else EXIT_TOLERANCE


def cmd_inspect(args):
    from .train import load_datasets

    cfg = _config(args)
    train, test, _, _ = load_datasets(cfg)
    for ds in (train, test):
        counts = np.bincount(ds.labels, minlength=ds.n_classes)
        print(f"{ds.split}: {len(ds)} samples, shape {ds.images.shape[1:]}, "
              f"range [{ds.images.min():.3f}, {ds.images.max():.3f}], sha256 {ds.digest[:16]}")
        print("  per class: " + " ".join(str(c) for c in counts))
    return EXIT_OK


def cmd_presets(args):
    from .config import load_config, preset_names

    for name in preset_names():
        print(f"{name:32s} {load_config(name).source}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "inspect-data": cmd_inspect,
    "presets": cmd_presets,
}


def _origin(exc):
    """Name of the innermost package module the exception passed through."""
    if isinstance(exc.__cause__, BinepError):
        return _origin(exc.__cause__)
    name = "binep"
    tb = exc.__traceback__
    while tb is not None:
        mod = tb.tb_frame.f_globals.get("__name__", "")
        if mod.startswith("binep.") and mod != "binep.cli":
            name = mod.split(".", 1)[1]
        tb = tb.tb_next
    return name


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, InvalidParameterError, DataFormatError, CheckpointError) as exc:
        print(f"error [{_origin(exc)}]: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FileNotFoundError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except BinepError as exc:
        print(f"error [{_origin(exc)}]: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
