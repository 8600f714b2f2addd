"""Ground-truth reference paths for the kernel-regime claims.

Three independent pieces: the discrete residual recursion
e_{t+1} = (I - eta*K) e_t and its closed form per eigenmode; a brute-force
tangent-kernel builder whose gradients come from a hand-written per-layer
backward pass (no shared code with the taped autodiff engine); and a lazy
training check that runs real full-batch gradient descent next to the
frozen-kernel prediction and reports how far they drift apart.

The recursion drops the 1/n loss-averaging factor; callers fold it into
eta, since only the product eta*K is observable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericalError, UsageError
from .network import Network
from .params import ParamVector
from .probe import GramMatrix, ProbeSet, Spectrum, probe_jacobian

__all__ = [
    "ResidualState",
    "LazyTrainingReport",
    "evolve_residuals",
    "eigenmode_decay",
    "brute_force_ntk",
    "lazy_training_check",
    "BRUTE_FORCE_ENTRY_LIMIT",
]

# Refuse to materialize Jacobians with more than this many entries (n * P).
BRUTE_FORCE_ENTRY_LIMIT = 10**7


@dataclass(frozen=True)
class ResidualState:
    """Residual vector e = f(x) - y with its step counter."""

    e: np.ndarray
    t: int = 0

    def __post_init__(self):
        e = np.ascontiguousarray(self.e, dtype=np.float64)
        if e.ndim != 1:
            raise UsageError(f"residuals must be a vector, got shape {e.shape}")
        e.setflags(write=False)
        object.__setattr__(self, "e", e)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.e))


def _as_state(e0) -> ResidualState:
    if isinstance(e0, ResidualState):
        return e0
    return ResidualState(e=np.asarray(e0, dtype=np.float64))


def evolve_residuals(
    e0, kernel: GramMatrix, eta: float, steps: int
) -> list[ResidualState]:
    """Iterate e_{t+1} = (I - eta*K) e_t; returns [e_0, e_1, ..., e_steps].

    The kernel is held fixed (lazy-regime assumption).  Divergence for
    eta > 2/lambda_max is a legitimate outcome and is returned, not raised.
    """
    state = _as_state(e0)
    if eta <= 0.0:
        raise UsageError(f"step size must be positive, got {eta}")
    if steps < 0:
        raise UsageError("steps must be nonnegative")
    k = kernel.entries
    if state.e.shape != (k.shape[0],):
        raise UsageError(
            f"residual length {state.e.shape[0]} does not match "
            f"kernel dimension {k.shape[0]}"
        )
    trajectory = [state]
    e = state.e
    for _ in range(steps):
        e = e - eta * (k @ e)
        state = ResidualState(e=e, t=state.t + 1)
        trajectory.append(state)
    return trajectory


def eigenmode_decay(e0, spectrum: Spectrum, eta: float, t: int) -> np.ndarray:
    """Closed form per eigenmode: (1 - eta*lambda_i)^t * (Q^T e_0)_i.

    Returns the step-t residual expressed in the kernel eigenbasis; modes
    with lambda_i = 0 are untouched for all t.
    """
    state = _as_state(e0)
    if eta <= 0.0:
        raise UsageError(f"step size must be positive, got {eta}")
    if t < 0:
        raise UsageError("step count must be nonnegative")
    q, lam = spectrum.eigenvectors, spectrum.eigenvalues
    if state.e.shape != (q.shape[0],):
        raise UsageError(
            f"residual length {state.e.shape[0]} does not match "
            f"spectrum dimension {q.shape[0]}"
        )
    coords = q.T @ state.e
    return (1.0 - eta * lam) ** t * coords


# --- brute-force tangent kernel ----------------------------------------------
#
# The gradient arithmetic below intentionally re-derives every layer rule
# from scratch (windowed einsum convolutions, explicit max scatter) so that
# agreement with the taped engine is a genuine cross-check.


def _oracle_seed(probe: ProbeSet, i: int) -> np.ndarray:
    c = probe.num_classes
    if probe.scalarization == "true_class_logit":
        s = np.zeros(c)
        s[probe.labels[i]] = 1.0
        return s
    if probe.scalarization == "sum_logits":
        return np.ones(c)
    return np.full(c, 1.0 / c)


def _manual_scalar_grad(
    network: Network, params: ParamVector, x: np.ndarray, seed: np.ndarray
) -> tuple[np.ndarray, float]:
    """Hand-rolled backprop for seed . f(x) on one sample.

    Mirrors the forward conventions exactly: 'same' zero padding,
    cross-correlation, relu subgradient 0 at 0, max-pool ties resolved to
    the first window position in row-major order.
    """
    views = params.views()
    h = np.ascontiguousarray(x, dtype=np.float64)
    cache: list[tuple] = []
    for layer in network.layers:
        s = network.scales.get(layer.name, 1.0)
        if layer.op == "conv":
            w = views[f"{layer.name}.w"]
            b = views[f"{layer.name}.b"]
            xp = np.pad(h, ((0, 0), (1, 1), (1, 1)))
            win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # (C,H,W,3,3)
            out = s * np.einsum("ocij,chwij->ohw", w, win) + b[:, None, None]
            cache.append(("conv", layer.name, s, win, w))
            h = out
        elif layer.op == "dense":
            w = views[f"{layer.name}.w"]
            b = views[f"{layer.name}.b"]
            out = s * (w @ h) + b
            cache.append(("dense", layer.name, s, h, w))
            h = out
        elif layer.op == "relu":
            mask = h > 0.0
            cache.append(("relu", mask))
            h = h * mask
        elif layer.op == "pool":
            c_, hh, ww = h.shape
            blocks = (
                h.reshape(c_, hh // 2, 2, ww // 2, 2)
                .transpose(0, 1, 3, 2, 4)
                .reshape(c_, hh // 2, ww // 2, 4)
            )
            arg = blocks.argmax(axis=3)
            cache.append(("pool", arg, h.shape))
            h = np.take_along_axis(blocks, arg[..., None], axis=3)[..., 0]
        else:  # flatten
            cache.append(("flatten", h.shape))
            h = h.reshape(-1)

    value = float(np.dot(seed, h))
    grads: dict[str, np.ndarray] = {}
    g = np.asarray(seed, dtype=np.float64)
    for entry in reversed(cache):
        kind = entry[0]
        if kind == "dense":
            _, name, s, h_in, w = entry
            grads[f"{name}.w"] = s * np.outer(g, h_in)
            grads[f"{name}.b"] = g.copy()
            g = s * (w.T @ g)
        elif kind == "conv":
            _, name, s, win, w = entry
            grads[f"{name}.w"] = s * np.einsum("ohw,chwij->ocij", g, win)
            grads[f"{name}.b"] = g.sum(axis=(1, 2))
            gp = np.pad(g, ((0, 0), (1, 1), (1, 1)))
            gwin = sliding_window_view(gp, (3, 3), axis=(1, 2))
            g = s * np.einsum("ocij,ohwij->chw", w[:, :, ::-1, ::-1], gwin)
        elif kind == "relu":
            g = g * entry[1]
        elif kind == "pool":
            _, arg, shape = entry
            c_, hh, ww = shape
            z = np.zeros((c_, hh // 2, ww // 2, 4))
            np.put_along_axis(z, arg[..., None], g[..., None], axis=3)
            g = (
                z.reshape(c_, hh // 2, ww // 2, 2, 2)
                .transpose(0, 1, 3, 2, 4)
                .reshape(c_, hh, ww)
            )
        else:  # flatten
            g = g.reshape(entry[1])

    flat = np.empty(params.dim)
    for seg in params.segments:
        flat[seg.offset : seg.offset + seg.size] = grads[seg.name].ravel()
    return flat, value


def brute_force_ntk(
    network: Network, params: ParamVector, probe: ProbeSet
) -> GramMatrix:
    """Tangent kernel from explicitly materialized gradient rows.

    Every entry is an explicit pairwise dot product of full gradient
    vectors.  Refuses probes where the Jacobian would exceed
    BRUTE_FORCE_ENTRY_LIMIT entries.
    """
    n = probe.size
    if n * params.dim > BRUTE_FORCE_ENTRY_LIMIT:
        raise UsageError(
            f"brute-force Jacobian would hold {n * params.dim} entries "
            f"(limit {BRUTE_FORCE_ENTRY_LIMIT}); use a smaller probe or model"
        )
    rows = np.empty((n, params.dim))
    for i in range(n):
        rows[i], _ = _manual_scalar_grad(
            network, params, probe.inputs[i], _oracle_seed(probe, i)
        )
        if not np.all(np.isfinite(rows[i])):
            raise NumericalError(f"non-finite gradient for probe sample {i}")
    k = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            k[i, j] = k[j, i] = float(np.dot(rows[i], rows[j]))
    return GramMatrix(k)


# --- lazy training check -----------------------------------------------------


@dataclass(frozen=True)
class LazyTrainingReport:
    """Side-by-side history of real training vs the frozen-kernel prediction.

    deviations[t] = ||e_actual(t) - e_predicted(t)||_inf / ||e_0||_inf,
    with deviations[0] = 0 by construction.  completed_steps < steps means
    real training left float range and the trajectories were truncated.
    """

    eta: float
    steps: int
    completed_steps: int
    deviations: np.ndarray = field(repr=False)
    actual_residuals: np.ndarray = field(repr=False)  # (completed+1, n)
    predicted_residuals: np.ndarray = field(repr=False)

    @property
    def max_deviation(self) -> float:
        return float(self.deviations.max())

    @property
    def final_deviation(self) -> float:
        return float(self.deviations[-1])


def lazy_training_check(
    network: Network,
    params: ParamVector,
    probe: ProbeSet,
    eta: float,
    steps: int,
    targets: np.ndarray | None = None,
) -> LazyTrainingReport:
    """Full-batch GD on the probe set vs the frozen-kernel recursion.

    The loss is the summed squared residual L = 0.5 * sum_i e_i^2 over the
    scalarized outputs, so the parameter update is theta -= eta * J^T e and
    the matching residual prediction is e_{t+1} = (I - eta*K_0) e_t.
    Targets default to 1.0 per sample (push the scalarized logit to one).
    """
    if eta < 0.0:
        raise UsageError(f"step size must be nonnegative, got {eta}")
    if steps < 0:
        raise UsageError("steps must be nonnegative")
    n = probe.size
    y = np.ones(n) if targets is None else np.asarray(targets, dtype=np.float64)
    if y.shape != (n,):
        raise UsageError(f"targets must have shape ({n},), got {y.shape}")

    jac, outputs = probe_jacobian(network, params, probe)
    kernel0 = jac @ jac.T
    e_actual = outputs - y
    e_pred = e_actual.copy()
    scale = float(np.abs(e_actual).max())
    actual = [e_actual.copy()]
    predicted = [e_pred.copy()]
    deviations = [0.0]
    completed = 0
    theta = params
    for _ in range(steps):
        step_dir = jac.T @ e_actual
        new_data = theta.data - eta * step_dir
        if not np.all(np.isfinite(new_data)):
            break
        theta = theta.with_data(new_data)
        try:
            jac, outputs = probe_jacobian(network, theta, probe)
        except NumericalError:
            break
        e_actual = outputs - y
        e_pred = e_pred - eta * (kernel0 @ e_pred)
        completed += 1
        actual.append(e_actual.copy())
        predicted.append(e_pred.copy())
        gap = float(np.abs(e_actual - e_pred).max())
        deviations.append(gap / scale if scale > 0.0 else gap)
    return LazyTrainingReport(
        eta=eta,
        steps=steps,
        completed_steps=completed,
        deviations=np.array(deviations),
        actual_residuals=np.array(actual),
        predicted_residuals=np.array(predicted),
    )
