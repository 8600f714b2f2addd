"""Executable networks: taped forward passes, gradients, and losses.

The squared loss follows the 0.5 * ||f - y||^2 per-sample convention so the
discrete residual recursion e_{t+1} = (I - eta K) e_t holds without a stray
factor of two.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import DataError, NumericalError, UsageError
from .models import LayerDef, ModelSpec, ParamRegime, layer_forward_scale, layer_plan
from .params import ParamVector

__all__ = ["Network", "grad_scalar", "grad_loss", "LOSS_KINDS"]

LOSS_KINDS = ("squared", "cross_entropy")


class Network:
    """A model spec bound to a parametrization (layer forward scales)."""

    def __init__(self, spec: ModelSpec, regime: ParamRegime):
        self.spec = spec
        self.regime = regime
        self.layers: tuple[LayerDef, ...] = layer_plan(spec)
        self.scales = {
            layer.name: layer_forward_scale(layer, regime) for layer in self.layers
        }

    def init_params(self, seed: int) -> ParamVector:
        from .models import initialize

        return initialize(self.spec, self.regime, seed)

    def forward(self, params: ParamVector, x: np.ndarray) -> tuple[Tensor, Tape]:
        """Run the network, recording a tape.

        Accepts a single sample (input_shape) or a batch (B, *input_shape);
        output is (num_classes,) or (B, num_classes) accordingly.
        """
        x = np.asarray(x, dtype=np.float64)
        single = x.shape == tuple(self.spec.input_shape)
        if single:
            x = x[None, ...]
        if x.shape[1:] != tuple(self.spec.input_shape):
            raise UsageError(
                f"input shape {x.shape[1:]} does not match model "
                f"input {self.spec.input_shape}"
            )
        if params.dim != _expected_dim(self.layers):
            raise UsageError(
                f"parameter vector has dim {params.dim}, model needs "
                f"{_expected_dim(self.layers)}"
            )

        views = params.views()
        leaves: list[Tensor] = []
        h = Tensor(x)
        for layer in self.layers:
            if layer.op == "conv":
                w = Tensor(views[f"{layer.name}.w"])
                b = Tensor(views[f"{layer.name}.b"])
                leaves.extend((w, b))
                h = ad.conv2d(h, w, self.scales[layer.name])
                h = ad.add(h, ad.reshape(b, (1, b.data.shape[0], 1, 1)))
            elif layer.op == "dense":
                if h.data.ndim != 2:
                    h = ad.reshape(h, (h.data.shape[0], -1))
                w = Tensor(views[f"{layer.name}.w"])
                b = Tensor(views[f"{layer.name}.b"])
                leaves.extend((w, b))
                h = ad.linear(h, w, self.scales[layer.name])
                h = ad.add(h, b)
            elif layer.op == "relu":
                h = ad.relu(h)
            elif layer.op == "pool":
                h = ad.maxpool2d(h)
            elif layer.op == "flatten":
                h = ad.reshape(h, (h.data.shape[0], -1))
            if not np.all(np.isfinite(h.data)):
                raise NumericalError(f"non-finite activation after layer {layer.name!r}")
        if single:
            h = ad.reshape(h, (self.spec.num_classes,))
        return h, Tape(h, leaves, params)

    def batch_loss(
        self,
        params: ParamVector,
        x: np.ndarray,
        targets: np.ndarray,
        loss_kind: str,
    ) -> tuple[float, Tensor, Tape]:
        """Mean per-sample loss over a batch; returns (value, loss node, tape)."""
        out, tape = self.forward(params, x)
        loss = _loss_node(out, loss_kind, targets, self.spec.num_classes)
        return float(loss.data), loss, tape


def _expected_dim(layers: tuple[LayerDef, ...]) -> int:
    total = 0
    for layer in layers:
        if layer.w_shape is not None:
            total += int(np.prod(layer.w_shape)) + int(np.prod(layer.b_shape))
    return total


def _loss_node(out: Tensor, loss_kind: str, targets, num_classes: int) -> Tensor:
    if loss_kind not in LOSS_KINDS:
        raise UsageError(f"unknown loss kind {loss_kind!r}")
    batched = out.data.ndim == 2
    n_samples = out.data.shape[0] if batched else 1
    if loss_kind == "cross_entropy":
        labels = np.asarray(targets)
        if labels.ndim == 0:
            labels = labels[None]
        if labels.shape != (n_samples,):
            raise DataError(f"expected {n_samples} class labels, got {labels.shape}")
        if labels.min() < 0 or labels.max() >= num_classes:
            raise DataError(
                f"class index out of range [0, {num_classes}): {labels.min()},"
                f" {labels.max()}"
            )
        logits = out if batched else ad.reshape(out, (1, num_classes))
        return ad.cross_entropy(logits, labels)
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != out.data.shape:
        raise DataError(f"target shape {y.shape} does not match output {out.data.shape}")
    diff = ad.sub(out, ad.tensor(y))
    return ad.scale(ad.sum_all(ad.mul(diff, diff)), 0.5 / n_samples)


def grad_scalar(tape: Tape, output_index: int) -> ParamVector:
    """Gradient of one output logit w.r.t. all parameters (single-sample tape)."""
    out = tape.output
    if out.data.ndim != 1:
        raise UsageError("grad_scalar needs a single-sample tape (1D output)")
    if not 0 <= output_index < out.data.shape[0]:
        raise UsageError(f"output index {output_index} out of range")
    seed = np.zeros_like(out.data)
    seed[output_index] = 1.0
    flat = tape.grad_flat(out, seed)
    return tape.params.with_data(flat)


def grad_loss(tape: Tape, loss_kind: str, target) -> tuple[float, ParamVector]:
    """Per-sample loss and its parameter gradient on an existing tape."""
    out = tape.output
    if out.data.ndim != 1:
        raise UsageError("grad_loss needs a single-sample tape (1D output)")
    loss = _loss_node(out, loss_kind, target, out.data.shape[0])
    flat = tape.grad_flat(loss, np.asarray(1.0))
    return float(loss.data), tape.params.with_data(flat)
