"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

The engine is deliberately small: a ``Tensor`` wraps an ndarray plus a
closure that propagates gradients to its parents, and a ``Tape`` is the
recorded graph hanging off one forward pass.  Everything is float64; ops
never check finiteness themselves (callers validate at layer boundaries,
where a failure can be attributed to a named layer).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericalError, UsageError

__all__ = [
    "Tensor",
    "Tape",
    "tensor",
    "add",
    "mul",
    "scale",
    "sub",
    "matmul",
    "linear",
    "relu",
    "conv2d",
    "maxpool2d",
    "reshape",
    "sum_all",
    "select",
    "cross_entropy",
]


class Tensor:
    """One node of the autodiff graph."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data: np.ndarray, parents: tuple = ()):
        self.data = data
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.data.shape})"


def tensor(data) -> Tensor:
    """Wrap array-like data as a leaf node, enforcing float64 and finiteness."""
    arr = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericalError("non-finite entries in tensor input")
    return Tensor(arr)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, (a, b))

    def backward():
        a.grad += _unbroadcast(out.grad, a.data.shape)
        b.grad += _unbroadcast(out.grad, b.data.shape)

    out._backward = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data, (a, b))

    def backward():
        a.grad += _unbroadcast(b.data * out.grad, a.data.shape)
        b.grad += _unbroadcast(a.data * out.grad, b.data.shape)

    out._backward = backward
    return out


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python constant (not tracked as a parent)."""
    out = Tensor(a.data * c, (a,))

    def backward():
        a.grad += c * out.grad

    out._backward = backward
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data, (a, b))

    def backward():
        a.grad += _unbroadcast(out.grad, a.data.shape)
        b.grad -= _unbroadcast(out.grad, b.data.shape)

    out._backward = backward
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise UsageError(f"matmul expects 2D operands, got {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, (a, b))

    def backward():
        a.grad += out.grad @ b.data.T
        b.grad += a.data.T @ out.grad

    out._backward = backward
    return out


def linear(x: Tensor, w: Tensor, s: float = 1.0) -> Tensor:
    """y = s * x @ w.T for x (B, in), w (out, in)."""
    out = Tensor((x.data @ w.data.T) * s, (x, w))

    def backward():
        x.grad += (out.grad @ w.data) * s
        w.grad += (out.grad.T @ x.data) * s

    out._backward = backward
    return out


def relu(a: Tensor) -> Tensor:
    # Subgradient at 0 is 0: the mask is strict.
    mask = a.data > 0.0
    out = Tensor(np.where(mask, a.data, 0.0), (a,))

    def backward():
        a.grad += mask * out.grad

    out._backward = backward
    return out


def conv2d(x: Tensor, w: Tensor, s: float = 1.0) -> Tensor:
    """Cross-correlation, stride 1, zero-padded to preserve spatial size.

    x: (B, C, H, W), w: (O, C, k, k) with odd k.  Computed via im2col and
    one matmul; the backward pass scatters with a k*k col2im loop.
    """
    B, C, H, W = x.data.shape
    O, C2, kh, kw = w.data.shape
    if C2 != C:
        raise UsageError(f"conv2d channel mismatch: input {C}, kernel {C2}")
    if kh % 2 != 1 or kw % 2 != 1:
        raise UsageError("conv2d requires odd kernel sizes for 'same' padding")
    ph, pw = kh // 2, kw // 2

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # (B,C,H,W,kh,kw)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        B, H * W, C * kh * kw
    )
    wmat = w.data.reshape(O, C * kh * kw)
    y = (cols @ wmat.T) * s  # (B, H*W, O)
    out = Tensor(np.ascontiguousarray(y.transpose(0, 2, 1)).reshape(B, O, H, W), (x, w))

    def backward():
        dy = out.grad.reshape(B, O, H * W).transpose(0, 2, 1)  # (B, H*W, O)
        w.grad += (
            np.einsum("bno,bnk->ok", dy, cols) * s
        ).reshape(O, C, kh, kw)
        dcols = (dy @ wmat) * s  # (B, H*W, C*kh*kw)
        dcols = dcols.reshape(B, H, W, C, kh, kw)
        dxp = np.zeros_like(xp)
        for u in range(kh):
            for v in range(kw):
                dxp[:, :, u : u + H, v : v + W] += dcols[:, :, :, :, u, v].transpose(
                    0, 3, 1, 2
                )
        x.grad += dxp[:, :, ph : ph + H, pw : pw + W]

    out._backward = backward
    return out


def maxpool2d(a: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties route to the first window
    position in row-major order."""
    B, C, H, W = a.data.shape
    if H % 2 or W % 2:
        raise UsageError(f"maxpool2d requires even spatial dims, got {H}x{W}")
    h, w = H // 2, W // 2
    win = a.data.reshape(B, C, h, 2, w, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
        B, C, h, w, 4
    )
    idx = win.argmax(axis=4)
    out = Tensor(np.take_along_axis(win, idx[..., None], axis=4)[..., 0], (a,))

    def backward():
        dwin = np.zeros((B, C, h, w, 4))
        np.put_along_axis(dwin, idx[..., None], out.grad[..., None], axis=4)
        a.grad += (
            dwin.reshape(B, C, h, w, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(B, C, H, W)
        )

    out._backward = backward
    return out


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(a.data.reshape(shape), (a,))

    def backward():
        a.grad += out.grad.reshape(a.data.shape)

    out._backward = backward
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(np.asarray(a.data.sum()), (a,))

    def backward():
        a.grad += out.grad  # broadcasts the scalar

    out._backward = backward
    return out


def select(a: Tensor, index: int) -> Tensor:
    """Pick one scalar entry of a 1D tensor."""
    if a.data.ndim != 1:
        raise UsageError("select expects a 1D tensor")
    out = Tensor(np.asarray(a.data[index]), (a,))

    def backward():
        a.grad[index] += out.grad

    out._backward = backward
    return out


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy of (B, C) logits against integer labels."""
    z = logits.data
    if z.ndim != 2:
        raise UsageError("cross_entropy expects (batch, classes) logits")
    B, C = z.shape
    labels = np.asarray(labels)
    m = z.max(axis=1, keepdims=True)
    ez = np.exp(z - m)
    sez = ez.sum(axis=1, keepdims=True)
    logp = (z - m) - np.log(sez)
    out = Tensor(np.asarray(-logp[np.arange(B), labels].mean()), (logits,))
    p = ez / sez

    def backward():
        dz = p.copy()
        dz[np.arange(B), labels] -= 1.0
        logits.grad += dz * (float(out.grad) / B)

    out._backward = backward
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(root: Tensor, seed: np.ndarray) -> None:
    """Accumulate gradients of `seed . root` into every node of the graph.

    Grads are reset first, so a graph can be differentiated repeatedly with
    different seeds (one backward visit per node per call).
    """
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != root.data.shape:
        raise UsageError(
            f"seed shape {seed.shape} does not match output shape {root.data.shape}"
        )
    order = _topo_order(root)
    for node in order:
        node.grad = np.zeros_like(node.data)
    root.grad = root.grad + seed
    for node in reversed(order):
        if node._backward is not None:
            node._backward()


class Tape:
    """Handle to one recorded forward pass.

    Holds the output node and the parameter leaves in flattening order, so
    gradients w.r.t. the full parameter vector can be extracted for any
    scalar hanging off the recorded graph.
    """

    def __init__(self, output: Tensor, param_leaves: list[Tensor], params):
        self.output = output
        self.param_leaves = param_leaves
        self.params = params
        self._param_data = params.data

    def _check_fresh(self) -> None:
        if self.params.data is not self._param_data or self.params.data.flags.writeable:
            raise UsageError("stale tape: parameters changed since the forward pass")

    def grad_flat(self, root: Tensor, seed) -> np.ndarray:
        """Gradient of `seed . root` w.r.t. the flat parameter vector."""
        self._check_fresh()
        backward(root, seed)
        return np.concatenate([leaf.grad.ravel() for leaf in self.param_leaves])
