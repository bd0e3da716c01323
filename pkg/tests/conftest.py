import os
import struct

import numpy as np
import pytest

from binep.dynamics import RelaxationConfig
from binep.network import ArchitectureSpec, ConvSpec, Network

MNIST_DIR = os.environ.get("BINEP_MNIST", "/root/data/mnist")


def have_mnist():
    return os.path.exists(os.path.join(MNIST_DIR, "train-images-idx3-ubyte"))


needs_mnist = pytest.mark.skipif(not have_mnist(), reason=f"MNIST not found in {MNIST_DIR}")


def small_fc(sizes=(6, 5, 3), setting="energy_based", activation="hardsigmoid", alpha_mode="fixed", n_per_class=1):
    return ArchitectureSpec(
        (sizes[0],),
        tuple(sizes[1:-1]),
        n_classes=sizes[-1],
        n_per_class=n_per_class,
        setting=setting,
        activation=activation,
        alpha_mode=alpha_mode,
    )


def small_conv(setting="energy_based", alpha_mode="fixed"):
    return ArchitectureSpec(
        (1, 6, 6), hidden=(5,), conv=(ConvSpec(2, kernel=3, padding=1, pool=2),), n_classes=3,
        setting=setting, alpha_mode=alpha_mode,
    )


def make_net(arch, seed=0):
    return Network.init(arch, np.random.default_rng(seed))


@pytest.fixture
def rcfg():
    return RelaxationConfig(T=60, K=20, beta=0.1)


def synthetic(n=96, dim=16, n_classes=4, seed=0, split="train"):
    """Noisy class prototypes; separable enough for a few epochs to help."""
    from binep.data import Dataset

    rng = np.random.default_rng(seed)
    protos = np.random.default_rng(123).uniform(0, 1, size=(n_classes, dim))
    labels = rng.integers(0, n_classes, size=n)
    x = np.clip(protos[labels] + rng.normal(0, 0.15, size=(n, dim)), 0, 1)
    return Dataset(x, labels.astype(np.int64), split, n_classes, "synthetic")


def write_fake_mnist(root, n=40, seed=0):
    rng = np.random.default_rng(seed)
    files = {
        "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    }
    for img, lab in files.values():
        labels = rng.integers(0, 10, size=n).astype(np.uint8)
        images = (rng.uniform(size=(n, 28, 28)) * 255).astype(np.uint8)
        with open(os.path.join(root, img), "wb") as fh:
            fh.write(struct.pack(">IIII", 0x803, n, 28, 28) + images.tobytes())
        with open(os.path.join(root, lab), "wb") as fh:
            fh.write(struct.pack(">II", 0x801, n) + labels.tobytes())
    return root


ACCEPTANCE = {}


def record(number, title, passed, detail=""):
    ACCEPTANCE[number] = (title, bool(passed), detail)
    print(f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n} [{'PASS' if ok else 'FAIL'}] {title}: {detail}")
