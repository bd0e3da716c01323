"""Run configuration: schema, TOML loading, presets and dotted overrides."""

from __future__ import annotations

import os
import sys
from importlib import resources
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dynamics import RelaxationConfig
from .errors import ConfigError
from .network import ArchitectureSpec, ConvSpec, choose_n_per_class
from .optim import OptimConfig

PerLayer = Union[float, list[float]]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ConvSection(_Strict):
    channels: int = Field(gt=0)
    kernel: int = Field(5, gt=0)
    padding: int = Field(0, ge=0)
    pool: int = Field(2, gt=0)


class ArchSection(_Strict):
    input_shape: list[int] = [784]
    hidden: list[int] = []
    conv: list[ConvSection] = []
    n_classes: int = Field(10, gt=0)
    n_per_class: Union[int, Literal["auto"]] = 1
    setting: Literal["energy_based", "prototypical"] = "prototypical"
    activation: Literal["hardsigmoid", "heaviside"] = "hardsigmoid"
    alpha_mode: Literal["fixed", "learned"] = "fixed"
    bias_init: Literal["uniform", "zero"] = "uniform"


class DynamicsSection(_Strict):
    T: int = Field(50, ge=1)
    K: int = Field(10, ge=1)
    beta: float = 0.3
    dt: float = Field(0.5, gt=0, le=1)
    beta_sign: Literal["positive", "randomized"] = "positive"
    nudge: Literal["live", "constant"] = "live"
    sigma: float = Field(0.5, gt=0)
    clamp: bool = True
    state_init: Optional[float] = None

    @field_validator("beta")
    @classmethod
    def _beta_nonzero(cls, v):
        if v == 0:
            raise ValueError("beta must be non-zero")
        return v


class OptimSection(_Strict):
    gamma: PerLayer = 1e-4
    tau: PerLayer = 5e-7
    lr_bias: PerLayer = 0.05
    lr_alpha: PerLayer = 0.0
    alpha_rule: Literal["exact", "half_scaled"] = "exact"


class DataSection(_Strict):
    dataset: Literal["mnist", "cifar10"] = "mnist"
    path: str = "data/mnist"
    train_subset: Optional[int] = Field(None, gt=0)
    test_subset: Optional[int] = Field(None, gt=0)
    batch_size: int = Field(64, gt=0)
    augment: bool = False


class GradcheckSection(_Strict):
    sizes: list[list[int]] = [[20, 15, 5], [16, 12, 4], [12, 10, 3], [20, 10, 8, 5], [10, 8, 4]]
    setting: Literal["energy_based", "prototypical"] = "energy_based"
    batch: int = Field(4, gt=0)
    beta: float = 1e-2
    alpha_beta: float = 1e-3
    eps: float = Field(1e-5, gt=0)
    tol: float = Field(0.02, gt=0)
    T: int = Field(50, ge=1)
    max_tries: int = Field(20, ge=1)

    @field_validator("beta", "alpha_beta")
    @classmethod
    def _beta_nonzero(cls, v):
        if v == 0:
            raise ValueError("beta must be non-zero")
        return v


class RunConfig(_Strict):
    source: str = ""
    seed: int = 0
    epochs: int = Field(1, ge=0)
    workers: int = Field(1, ge=1)
    chunk: int = Field(16, ge=1)
    dtype: Literal["float64", "float32"] = "float64"
    out: str = "runs/default"
    checkpoint_every: int = Field(5, ge=1)
    trace: bool = False
    arch: ArchSection = ArchSection()
    dynamics: DynamicsSection = DynamicsSection()
    optim: OptimSection = OptimSection()
    data: DataSection = DataSection()
    gradcheck: GradcheckSection = GradcheckSection()

    @model_validator(mode="after")
    def _consistent(self):
        self.architecture()  # raises on geometry or activation/setting conflicts
        n = len(self.arch.conv) + len(self.arch.hidden) + 1
        for name in ("gamma", "tau", "lr_bias", "lr_alpha"):
            v = getattr(self.optim, name)
            if isinstance(v, list) and len(v) not in (1, n):
                raise ValueError(f"optim.{name} has {len(v)} entries for {n} layers")
        return self

    def architecture(self):
        a = self.arch
        spec = ArchitectureSpec(
            input_shape=tuple(a.input_shape),
            hidden=tuple(a.hidden),
            conv=tuple(ConvSpec(**c.model_dump()) for c in a.conv),
            n_classes=a.n_classes,
            n_per_class=1 if a.n_per_class == "auto" else a.n_per_class,
            setting=a.setting,
            activation=a.activation,
            alpha_mode=a.alpha_mode,
        )
        if a.n_per_class == "auto":
            spec = spec.replace(n_per_class=choose_n_per_class(spec))
        return spec

    def relaxation(self):
        return RelaxationConfig(**self.dynamics.model_dump())

    def optimizer(self):
        n = len(self.arch.conv) + len(self.arch.hidden) + 1
        o = self.optim
        return OptimConfig.broadcast(n, o.gamma, o.tau, o.lr_bias, o.lr_alpha)


def _set_dotted(d, key, value):
    parts = key.split(".")
    cur = d
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
        if not isinstance(cur, dict):
            raise ConfigError(f"cannot set {key}: {p} is not a section")
    cur[parts[-1]] = value


def parse_value(text):
    """Interpret an override value with TOML syntax, falling back to a plain string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(d, overrides):
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, text = item.split("=", 1)
        _set_dotted(d, key.strip(), parse_value(text.strip()))
    return d


def preset_names():
    return sorted(p.name[:-5] for p in resources.files("binep.presets").iterdir() if p.name.endswith(".toml"))


def read_toml(path_or_preset):
    """Parse a TOML file, or a bundled preset when the argument names one."""
    if os.path.exists(path_or_preset):
        with open(path_or_preset, "rb") as fh:
            return tomllib.load(fh)
    name = path_or_preset[:-5] if path_or_preset.endswith(".toml") else path_or_preset
    if name in preset_names():
        with resources.files("binep.presets").joinpath(name + ".toml").open("rb") as fh:
            return tomllib.load(fh)
    raise ConfigError(f"no config file or preset named {path_or_preset!r}")


def load_config(path_or_preset=None, overrides=None):
    try:
        d = read_toml(path_or_preset) if path_or_preset else {}
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from None
    apply_overrides(d, overrides)
    return validate(d)


def validate(d):
    try:
        return RunConfig.model_validate(d)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
