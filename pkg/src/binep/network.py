"""Architecture description, binary parameter storage and output-layer coding."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DimensionError, InvalidParameterError
from .numerics import conv_output_size

SETTINGS = ("energy_based", "prototypical")
ACTIVATIONS = ("hardsigmoid", "heaviside")
ALPHA_MODES = ("fixed", "learned")


@dataclass(frozen=True)
class ConvSpec:
    channels: int
    kernel: int = 5
    padding: int = 0
    pool: int = 2


@dataclass(frozen=True)
class Synapse:
    """Connection from state layer ``index`` (0 is the input) to ``index + 1``."""

    index: int
    kind: str  # "conv" or "fc"
    in_shape: tuple
    out_shape: tuple
    conv: ConvSpec | None = None

    @property
    def weight_shape(self):
        if self.kind == "conv":
            return (self.conv.channels, self.in_shape[0], self.conv.kernel, self.conv.kernel)
        return (self.out_shape[0], int(np.prod(self.in_shape)))

    @property
    def bias_shape(self):
        return (self.out_shape[0],)

    @property
    def alpha_shape(self):
        # one scaling factor per fc matrix, one per conv output channel
        return (self.conv.channels,) if self.kind == "conv" else ()


@dataclass(frozen=True)
class ArchitectureSpec:
    input_shape: tuple
    hidden: tuple = ()
    conv: tuple = ()
    n_classes: int = 10
    n_per_class: int = 1
    setting: str = "prototypical"
    activation: str = "hardsigmoid"
    alpha_mode: str = "fixed"

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "hidden", tuple(int(v) for v in self.hidden))
        object.__setattr__(
            self, "conv", tuple(c if isinstance(c, ConvSpec) else ConvSpec(**c) for c in self.conv)
        )
        if self.setting not in SETTINGS:
            raise InvalidParameterError(f"setting must be one of {SETTINGS}, got {self.setting!r}")
        if self.activation not in ACTIVATIONS:
            raise InvalidParameterError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.alpha_mode not in ALPHA_MODES:
            raise InvalidParameterError(f"alpha_mode must be one of {ALPHA_MODES}, got {self.alpha_mode!r}")
        if self.activation == "heaviside" and self.setting != "energy_based":
            raise InvalidParameterError(
                "binary activations need the energy-based setting; synchronous prototypical "
                "updates of step functions do not converge"
            )
        if self.n_classes < 1 or self.n_per_class < 1:
            raise InvalidParameterError("n_classes and n_per_class must be >= 1")
        if self.conv and len(self.input_shape) != 3:
            raise DimensionError(f"conv layers need a (C, H, W) input, got {self.input_shape}")
        if any(h < 1 for h in self.hidden):
            raise InvalidParameterError(f"hidden widths must be positive, got {self.hidden}")
        _ = self.synapses  # geometry errors surface at construction

    @property
    def output_size(self):
        return self.n_classes * self.n_per_class

    @cached_property
    def synapses(self):
        syns = []
        shape = self.input_shape
        for k, c in enumerate(self.conv):
            h = conv_output_size(shape[1], c.kernel, c.padding)
            w = conv_output_size(shape[2], c.kernel, c.padding)
            if h % c.pool or w % c.pool:
                raise DimensionError(
                    f"conv layer {k + 1}: pool {c.pool} does not divide conv output {(h, w)}; adjust padding"
                )
            out = (c.channels, h // c.pool, w // c.pool)
            syns.append(Synapse(k, "conv", shape, out, c))
            shape = out
        for width in self.hidden + (self.output_size,):
            syns.append(Synapse(len(syns), "fc", shape, (width,)))
            shape = (width,)
        return tuple(syns)

    @property
    def state_shapes(self):
        """Per-sample shapes of the state layers s^1 ... s^N (output last)."""
        return [s.out_shape for s in self.synapses]

    @property
    def n_layers(self):
        return len(self.synapses)

    def replace(self, **changes):
        kw = dict(
            input_shape=self.input_shape,
            hidden=self.hidden,
            conv=self.conv,
            n_classes=self.n_classes,
            n_per_class=self.n_per_class,
            setting=self.setting,
            activation=self.activation,
            alpha_mode=self.alpha_mode,
        )
        kw.update(changes)
        return ArchitectureSpec(**kw)

    def to_dict(self):
        return {
            "input_shape": list(self.input_shape),
            "hidden": list(self.hidden),
            "conv": [vars(c).copy() for c in self.conv],
            "n_classes": self.n_classes,
            "n_per_class": self.n_per_class,
            "setting": self.setting,
            "activation": self.activation,
            "alpha_mode": self.alpha_mode,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def choose_n_per_class(arch):
    """Default output replication so the output width roughly matches the
    fan-in the last layer receives from the penultimate one."""
    if arch.activation != "heaviside":
        raise InvalidParameterError("output augmentation applies to binary activations only")
    if arch.hidden:
        fan_in = arch.hidden[-1]
    elif arch.conv:
        last = arch.conv[-1]
        prev_channels = arch.conv[-2].channels if len(arch.conv) > 1 else arch.input_shape[0]
        fan_in = prev_channels * last.kernel**2 / last.pool**2
    else:
        fan_in = int(np.prod(arch.input_shape))
    return max(1, int(round(fan_in / arch.n_classes)))


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass
class LayerParams:
    sign: np.ndarray  # int8, entries in {-1, +1}
    alpha: np.ndarray  # () for fc, (c_out,) for conv
    momentum: np.ndarray
    bias: np.ndarray

    def weight(self, dtype=np.float64):
        a = self.alpha if self.alpha.ndim == 0 else self.alpha.reshape(-1, 1, 1, 1)
        return (a * self.sign).astype(dtype, copy=False)

    def copy(self):
        return LayerParams(self.sign.copy(), self.alpha.copy(), self.momentum.copy(), self.bias.copy())


def kaiming_uniform(shape, rng):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)): the framework-default layer init."""
    fan_in = int(np.prod(shape[1:]))
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_scaling_factors(init_weights):
    """Mean absolute value of the init: per matrix (2-d) or per output channel (4-d)."""
    w = np.asarray(init_weights, dtype=np.float64)
    if w.size == 0:
        raise InvalidParameterError("cannot derive a scaling factor from an empty weight tensor")
    if w.ndim == 4:
        return np.abs(w).reshape(w.shape[0], -1).mean(axis=1)
    return np.asarray(np.abs(w).mean())


def binarize_init(init_weights, alpha, bias):
    w = np.asarray(init_weights)
    sign = np.where(w >= 0, 1, -1).astype(np.int8)  # sign(0) := +1
    return LayerParams(
        sign=sign,
        alpha=np.array(alpha, dtype=np.float64),
        momentum=np.zeros(w.shape, dtype=np.float64),
        bias=np.asarray(bias, dtype=np.float64).copy(),
    )


@dataclass(frozen=True)
class Snapshot:
    """Frozen effective parameters seen by one batch of relaxations.

    The optimizer replaces parameter arrays instead of mutating them, so the
    sign tensors can be shared by reference.
    """

    arch: ArchitectureSpec
    weights: tuple
    biases: tuple
    signs: tuple = ()
    alphas: tuple = ()

    def with_weight(self, k, w):
        ws = list(self.weights)
        ws[k] = w
        return Snapshot(self.arch, tuple(ws), self.biases, self.signs, self.alphas)

    def with_bias(self, k, b):
        bs = list(self.biases)
        bs[k] = b
        return Snapshot(self.arch, self.weights, tuple(bs), self.signs, self.alphas)

    def with_alpha(self, k, alpha):
        alpha = np.asarray(alpha, dtype=np.float64)
        a = alpha if alpha.ndim == 0 else alpha.reshape(-1, 1, 1, 1)
        w = (a * self.signs[k]).astype(self.weights[k].dtype)
        als = list(self.alphas)
        als[k] = alpha
        snap = self.with_weight(k, w)
        return Snapshot(snap.arch, snap.weights, snap.biases, snap.signs, tuple(als))


@dataclass
class Network:
    arch: ArchitectureSpec
    layers: list = field(default_factory=list)
    dtype: type = np.float64

    @classmethod
    def init(cls, arch, rng, bias_init="uniform", dtype=np.float64):
        """Draw Kaiming-uniform weights, binarize them and set alpha to their mean |w|."""
        if bias_init not in ("uniform", "zero"):
            raise InvalidParameterError(f"bias_init must be 'uniform' or 'zero', got {bias_init!r}")
        layers = []
        for syn in arch.synapses:
            w0 = kaiming_uniform(syn.weight_shape, rng)
            if bias_init == "uniform":
                bound = 1.0 / math.sqrt(int(np.prod(syn.weight_shape[1:])))
                b = rng.uniform(-bound, bound, size=syn.bias_shape)
            else:
                b = np.zeros(syn.bias_shape)
            layers.append(binarize_init(w0, init_scaling_factors(w0), b))
        return cls(arch, layers, dtype)

    def snapshot(self):
        return Snapshot(
            self.arch,
            tuple(p.weight(self.dtype) for p in self.layers),
            tuple(p.bias.astype(self.dtype) for p in self.layers),
            tuple(p.sign for p in self.layers),
            tuple(p.alpha.copy() for p in self.layers),
        )

    def copy(self):
        return Network(self.arch, [p.copy() for p in self.layers], self.dtype)

    @property
    def n_weights(self):
        return [p.sign.size for p in self.layers]


# ---------------------------------------------------------------------------
# targets and read-out
# ---------------------------------------------------------------------------


def encode_target(labels, n_classes, n_per_class=1, dtype=np.float64):
    """One-hot over classes with each class bit repeated ``n_per_class`` times.

    Class ``c`` owns output units ``c * n_per_class ... (c + 1) * n_per_class - 1``.
    """
    scalar = np.ndim(labels) == 0
    labels = np.atleast_1d(np.asarray(labels))
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise InvalidParameterError(f"labels must lie in [0, {n_classes}), got range [{labels.min()}, {labels.max()}]")
    onehot = np.zeros((labels.size, n_classes), dtype=dtype)
    onehot[np.arange(labels.size), labels] = 1.0
    out = np.repeat(onehot, n_per_class, axis=1)
    return out[0] if scalar else out


def _grouped(output, n_classes, n_per_class):
    out = np.asarray(output)
    single = out.ndim == 1
    out = np.atleast_2d(out)
    if out.shape[1] != n_classes * n_per_class:
        raise DimensionError(f"output width {out.shape[1]} != {n_classes} x {n_per_class}")
    return out.reshape(out.shape[0], n_classes, n_per_class), single


def predict_average(output, n_classes, n_per_class=1):
    """Argmax of the per-class mean pre-activation; ties go to the lowest class."""
    g, single = _grouped(output, n_classes, n_per_class)
    pred = g.mean(axis=2).argmax(axis=1)
    return int(pred[0]) if single else pred


def predict_single(output, n_classes, n_per_class=1):
    """Argmax over the first unit of every class group."""
    g, single = _grouped(output, n_classes, n_per_class)
    pred = g[:, :, 0].argmax(axis=1)
    return int(pred[0]) if single else pred
