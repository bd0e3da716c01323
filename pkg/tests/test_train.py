import os

import numpy as np
import pytest

from binep import checkpoint
from binep.config import validate
from binep.train import read_metrics, run_experiment

from conftest import synthetic


def cfg_for(tmp_path, **over):
    d = dict(
        seed=3,
        epochs=3,
        chunk=8,
        out=str(tmp_path / "run"),
        checkpoint_every=2,
        arch=dict(input_shape=[16], hidden=[12], n_classes=4, alpha_mode="learned"),
        dynamics=dict(T=15, K=5, beta=0.3, beta_sign="randomized"),
        optim=dict(gamma=1e-2, tau=1e-4, lr_bias=0.05, lr_alpha=1e-4),
        data=dict(batch_size=16),
    )
    for k, v in over.items():
        d[k] = d[k] | v if isinstance(v, dict) else v
    return validate(d)


DATA = (synthetic(96), synthetic(40, seed=1, split="test"))


def final_net(out):
    return checkpoint.load(os.path.join(out, "checkpoints", "latest.ckpt"))[0]


def same_net(a, b):
    return all(
        getattr(p, f).tobytes() == getattr(q, f).tobytes()
        for p, q in zip(a.layers, b.layers)
        for f in ("sign", "alpha", "momentum", "bias")
    )


def test_run_directory_layout(tmp_path):
    cfg = cfg_for(tmp_path, trace=True)
    hist = run_experiment(cfg, datasets=DATA)
    out = cfg.out
    assert len(hist) == 3
    for name in ("manifest.json", "metrics.csv", "timings.csv", "checkpoints/latest.ckpt",
                 "checkpoints/epoch_0002.ckpt", "checkpoints/epoch_0003.ckpt", "traces/epoch_0001.tsv"):
        assert os.path.exists(os.path.join(out, name)), name
    rows = read_metrics(os.path.join(out, "metrics.csv"))
    assert [int(r["epoch"]) for r in rows] == [1, 2, 3]
    assert float(rows[-1]["test_error"]) == hist[-1].test_error
    assert "wall" not in ",".join(rows[0])
    assert open(os.path.join(out, "metrics.csv")).readline().startswith("# binep metrics v1")


def test_training_reduces_error(tmp_path):
    cfg = cfg_for(tmp_path, epochs=6, optim=dict(tau=1e-3))
    hist = run_experiment(cfg, datasets=DATA)
    assert hist[-1].train_error < hist[0].train_error or hist[-1].train_error == 0.0


def test_reruns_are_identical(tmp_path):
    a = run_experiment(cfg_for(tmp_path / "a"), datasets=DATA)
    b = run_experiment(cfg_for(tmp_path / "b"), datasets=DATA)
    assert [m.row() for m in a] == [m.row() for m in b]
    assert same_net(final_net(str(tmp_path / "a" / "run")), final_net(str(tmp_path / "b" / "run")))


def test_worker_count_does_not_change_results(tmp_path):
    one = run_experiment(cfg_for(tmp_path / "w1", workers=1), datasets=DATA)
    three = run_experiment(cfg_for(tmp_path / "w3", workers=3), datasets=DATA)
    assert [m.row() for m in one] == [m.row() for m in three]
    assert same_net(final_net(str(tmp_path / "w1" / "run")), final_net(str(tmp_path / "w3" / "run")))


@pytest.mark.parametrize("arch", [
    dict(input_shape=[16], hidden=[12], n_classes=4, alpha_mode="learned"),
    dict(input_shape=[1, 4, 4], conv=[dict(channels=2, kernel=3, padding=1, pool=2)], n_classes=4,
         setting="energy_based"),
])
def test_resume_is_bit_exact(tmp_path, arch):
    data = DATA if len(arch["input_shape"]) == 1 else tuple(d.reshaped((1, 4, 4)) for d in DATA)
    full = cfg_for(tmp_path / "full", arch=arch)
    run_experiment(full, datasets=data)
    part = cfg_for(tmp_path / "part", arch=arch, epochs=1)
    run_experiment(part, datasets=data)
    rest = cfg_for(tmp_path / "part", arch=arch)
    run_experiment(rest, resume=True, datasets=data)
    assert same_net(final_net(full.out), final_net(rest.out))
    assert read_metrics(os.path.join(full.out, "metrics.csv")) == read_metrics(os.path.join(rest.out, "metrics.csv"))


def test_binary_activation_run(tmp_path):
    cfg = cfg_for(
        tmp_path,
        arch=dict(alpha_mode="fixed", setting="energy_based", activation="heaviside", n_per_class=3, hidden=[20]),
        dynamics=dict(T=10, K=5, beta=2.0, beta_sign="positive"),
        optim=dict(gamma=1e-3, tau=[1e-4, 1e-4], lr_bias=1e-3, lr_alpha=0.0),
        epochs=2,
    )
    hist = run_experiment(cfg, datasets=DATA)
    for m in hist:
        assert 0 <= m.test_error_single <= 100
