"""Model zoo, initialization regimes, and width-scaled learning rates.

Two architectures: ``cnn3`` (three 3x3 conv layers, each followed by ReLU
and 2x2 max pooling, then a fully connected head) and ``mlp`` (one hidden
ReLU layer).  Width is the channel count for cnn3 and the hidden unit
count for mlp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .params import ParamVector

__all__ = [
    "ModelSpec",
    "LayerDef",
    "ParamRegime",
    "layer_plan",
    "param_count",
    "initialize",
    "effective_learning_rate",
    "layer_forward_scale",
]

MODEL_KINDS = ("cnn3", "mlp")
INIT_KINDS = ("kaiming_uniform", "kaiming_normal", "ntk_like")
LR_SCALINGS = ("none", "inverse_width")
CONV_KERNEL = 3
POOL = 2


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    width: int
    input_shape: tuple[int, ...]  # (C, H, W) for cnn3, (D,) for mlp
    num_classes: int

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.width < 1:
            raise ConfigError("width must be positive")
        if self.num_classes < 2:
            raise ConfigError("need at least 2 classes")
        if self.kind == "cnn3":
            if len(self.input_shape) != 3:
                raise ConfigError("cnn3 expects input_shape (C, H, W)")
            _, h, w = self.input_shape
            if h % 8 or w % 8:
                raise ConfigError(
                    "cnn3 pools 2x2 three times; spatial dims must be multiples of 8"
                )
        elif len(self.input_shape) != 1:
            raise ConfigError("mlp expects input_shape (D,)")


@dataclass(frozen=True)
class LayerDef:
    """Structural description of one layer in execution order."""

    name: str
    op: str  # "conv" | "dense" | "relu" | "pool" | "flatten"
    w_shape: tuple[int, ...] | None = None
    b_shape: tuple[int, ...] | None = None
    fan_in: int | None = None


@dataclass(frozen=True)
class ParamRegime:
    """Initialization law plus learning-rate scaling policy."""

    init: str = "kaiming_uniform"
    lr_base: float = 1e-3
    lr_scaling: str = "none"
    ref_width: int = 32

    def __post_init__(self):
        if self.init not in INIT_KINDS:
            raise ConfigError(f"unknown init {self.init!r}")
        if self.lr_scaling not in LR_SCALINGS:
            raise ConfigError(f"unknown lr scaling {self.lr_scaling!r}")
        if self.lr_base < 0:
            # zero is allowed: frozen-parameter runs are a diagnostic case
            raise ConfigError("lr_base must be nonnegative")
        if self.ref_width < 1:
            raise ConfigError("ref_width must be positive")


def layer_plan(spec: ModelSpec) -> tuple[LayerDef, ...]:
    n = spec.width
    if spec.kind == "cnn3":
        c, h, w = spec.input_shape
        plan = []
        in_ch = c
        for i in (1, 2, 3):
            plan.append(
                LayerDef(
                    name=f"conv{i}",
                    op="conv",
                    w_shape=(n, in_ch, CONV_KERNEL, CONV_KERNEL),
                    b_shape=(n,),
                    fan_in=in_ch * CONV_KERNEL * CONV_KERNEL,
                )
            )
            plan.append(LayerDef(name=f"relu{i}", op="relu"))
            plan.append(LayerDef(name=f"pool{i}", op="pool"))
            in_ch = n
            h //= POOL
            w //= POOL
        plan.append(LayerDef(name="flatten", op="flatten"))
        flat = n * h * w
        plan.append(
            LayerDef(
                name="fc",
                op="dense",
                w_shape=(spec.num_classes, flat),
                b_shape=(spec.num_classes,),
                fan_in=flat,
            )
        )
        return tuple(plan)
    d = spec.input_shape[0]
    return (
        LayerDef(name="fc1", op="dense", w_shape=(n, d), b_shape=(n,), fan_in=d),
        LayerDef(name="relu1", op="relu"),
        LayerDef(name="fc2", op="dense", w_shape=(spec.num_classes, n),
                 b_shape=(spec.num_classes,), fan_in=n),
    )


def param_count(spec: ModelSpec) -> int:
    total = 0
    for layer in layer_plan(spec):
        if layer.w_shape is not None:
            total += int(np.prod(layer.w_shape))
            total += int(np.prod(layer.b_shape))
    return total


def layer_forward_scale(layer: LayerDef, regime: ParamRegime) -> float:
    """Forward multiplier folded into a parametrized layer.

    Under ntk_like init the raw weights are unit normal and the layer
    output carries a 1/sqrt(fan_in) factor; the Kaiming regimes bake the
    scale into the weights instead.
    """
    if regime.init == "ntk_like" and layer.fan_in is not None:
        return 1.0 / float(np.sqrt(layer.fan_in))
    return 1.0


def initialize(spec: ModelSpec, regime: ParamRegime, seed: int) -> ParamVector:
    """Draw initial parameters; biases are zero under every regime."""
    if seed < 0:
        raise ConfigError("seed must be nonnegative")
    rng = np.random.default_rng(seed)
    named = []
    for layer in layer_plan(spec):
        if layer.w_shape is None:
            continue
        fan_in = layer.fan_in
        if regime.init == "kaiming_normal":
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=layer.w_shape)
        elif regime.init == "kaiming_uniform":
            bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=layer.w_shape)
        else:  # ntk_like
            w = rng.normal(0.0, 1.0, size=layer.w_shape)
        named.append((f"{layer.name}.w", w))
        named.append((f"{layer.name}.b", np.zeros(layer.b_shape)))
    return ParamVector.from_arrays(named)


def effective_learning_rate(regime: ParamRegime, width: int) -> float:
    if width < 1:
        raise ConfigError("width must be positive")
    if regime.lr_scaling == "inverse_width":
        return regime.lr_base * regime.ref_width / width
    return regime.lr_base
