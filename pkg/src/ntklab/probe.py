"""Empirical tangent-kernel measurement on a frozen probe set.

All four trajectory metrics live here: spectral norm (max eigenvalue),
kernel distance 1 - CKA, kernel velocity (distance per probe-step gap),
and alignment against the label kernel Y Y^T.  CKA defaults to the plain
normalized Frobenius inner product; double centering is opt-in.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, UndefinedSimilarityError, UsageError
from .network import Network
from .params import ParamVector

__all__ = [
    "GramMatrix",
    "Spectrum",
    "ProbeSet",
    "SCALARIZATIONS",
    "empirical_ntk",
    "probe_jacobian",
    "max_eigenvalue",
    "cka",
    "kernel_distance",
    "kernel_velocity",
    "kernel_alignment",
    "label_kernel",
]

SCALARIZATIONS = ("true_class_logit", "sum_logits", "mean_logits")

# Eigenvalues in (-PSD_TOL * lambda_max, 0) are clamped to zero; anything
# more negative indicates a gradient bug rather than roundoff.
PSD_TOL = 1e-8
SYM_TOL = 1e-10


class GramMatrix:
    """Symmetric n x n kernel matrix (empirical NTK or label kernel)."""

    __slots__ = ("entries", "n")

    def __init__(self, entries: np.ndarray):
        k = np.asarray(entries, dtype=np.float64)
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise UsageError(f"Gram matrix must be square, got {k.shape}")
        if not np.all(np.isfinite(k)):
            raise NumericalError("non-finite Gram matrix entries")
        asym = float(np.abs(k - k.T).max()) if k.size else 0.0
        scale = max(1.0, float(np.abs(k).max())) if k.size else 1.0
        if asym > SYM_TOL * scale:
            raise NumericalError(f"matrix is not symmetric (max deviation {asym:g})")
        k = 0.5 * (k + k.T)
        k.setflags(write=False)
        self.entries = k
        self.n = k.shape[0]

    def spectrum(self) -> "Spectrum":
        """Full symmetric eigendecomposition, eigenvalues descending.

        Negative eigenvalues inside the PSD tolerance band are clamped to
        zero; more negative ones raise.
        """
        vals, vecs = np.linalg.eigh(self.entries)
        vals = vals[::-1].copy()
        vecs = vecs[:, ::-1].copy()
        lam_max = max(float(vals[0]), 0.0)
        floor = -PSD_TOL * max(lam_max, 1e-300)
        if float(vals[-1]) < floor:
            raise NumericalError(
                f"Gram matrix is not PSD: min eigenvalue {vals[-1]:g} "
                f"below tolerance {floor:g}"
            )
        np.clip(vals, 0.0, None, out=vals)
        return Spectrum(eigenvalues=vals, eigenvectors=vecs)

    def max_eigenvalue(self) -> float:
        return float(self.spectrum().eigenvalues[0])


@dataclass(frozen=True)
class Spectrum:
    """Eigendecomposition K = Q diag(lambda) Q^T with descending lambda."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # orthonormal columns, aligned with eigenvalues


@dataclass(frozen=True)
class ProbeSet:
    """Fixed evaluation batch, frozen at the start of the first task."""

    inputs: np.ndarray  # (n, *input_shape)
    labels: np.ndarray  # (n,) integer class ids
    num_classes: int
    scalarization: str = "true_class_logit"
    signed_labels: bool = False  # binary tasks: use +/-1 label vector kernel

    def __post_init__(self):
        inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if inputs.shape[0] == 0:
            raise UsageError("probe set must be nonempty")
        if labels.shape != (inputs.shape[0],):
            raise UsageError("probe labels must be one per sample")
        if self.scalarization not in SCALARIZATIONS:
            raise UsageError(f"unknown scalarization {self.scalarization!r}")
        if self.signed_labels and len(np.unique(labels)) > 2:
            raise UsageError("signed labels require a binary probe set")
        inputs.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return int(self.inputs.shape[0])

    def sha256(self) -> str:
        h = hashlib.sha256()
        h.update(self.inputs.tobytes())
        h.update(self.labels.tobytes())
        h.update(self.scalarization.encode())
        return h.hexdigest()

    def subset(self, indices) -> "ProbeSet":
        idx = np.asarray(indices)
        return ProbeSet(
            inputs=self.inputs[idx],
            labels=self.labels[idx],
            num_classes=self.num_classes,
            scalarization=self.scalarization,
            signed_labels=self.signed_labels,
        )


def _seed_vector(probe: ProbeSet, i: int) -> np.ndarray:
    c = probe.num_classes
    if probe.scalarization == "true_class_logit":
        seed = np.zeros(c)
        seed[probe.labels[i]] = 1.0
    elif probe.scalarization == "sum_logits":
        seed = np.ones(c)
    else:
        seed = np.full(c, 1.0 / c)
    return seed


def probe_jacobian(
    network: Network, params: ParamVector, probe: ProbeSet
) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample gradient rows of the scalarized output.

    Returns (J, s): J[i] = grad of the scalarized logit of sample i, a
    (n, P) matrix, and s[i] the scalarized output value itself.
    """
    n = probe.size
    rows = np.empty((n, params.dim))
    outputs = np.empty(n)
    for i in range(n):
        out, tape = network.forward(params, probe.inputs[i])
        seed = _seed_vector(probe, i)
        rows[i] = tape.grad_flat(out, seed)
        outputs[i] = float(seed @ out.data)
        if not np.all(np.isfinite(rows[i])):
            raise NumericalError(f"non-finite gradient for probe sample {i}")
    return rows, outputs


def empirical_ntk(network: Network, params: ParamVector, probe: ProbeSet) -> GramMatrix:
    """Gram matrix of per-sample parameter gradients on the probe set."""
    jac, _ = probe_jacobian(network, params, probe)
    return GramMatrix(jac @ jac.T)


def max_eigenvalue(kernel: GramMatrix) -> float:
    return kernel.max_eigenvalue()


def _entries(k) -> np.ndarray:
    if isinstance(k, GramMatrix):
        return k.entries
    return np.asarray(k, dtype=np.float64)


def _center(k: np.ndarray) -> np.ndarray:
    n = k.shape[0]
    h = np.eye(n) - np.full((n, n), 1.0 / n)
    return h @ k @ h


def cka(a, b, centered: bool = False) -> float:
    """Normalized Frobenius inner product of two kernels.

    With ``centered`` both operands are double-centered first.  Result is
    clipped into [-1, 1] to absorb roundoff; a zero-norm operand (possibly
    zero only after centering) is an error, not silently 0.
    """
    ka, kb = _entries(a), _entries(b)
    if ka.shape != kb.shape:
        raise UsageError(f"kernel size mismatch: {ka.shape} vs {kb.shape}")
    if centered:
        ka, kb = _center(ka), _center(kb)
    na = float(np.linalg.norm(ka))
    nb = float(np.linalg.norm(kb))
    if na == 0.0 or nb == 0.0:
        raise UndefinedSimilarityError("CKA undefined for zero-norm kernel")
    if np.array_equal(ka, kb):
        return 1.0  # self-similarity is exactly 1, not 1 +/- one ulp
    value = float(np.tensordot(ka, kb) / (na * nb))
    return float(np.clip(value, -1.0, 1.0))


def kernel_distance(a, b, centered: bool = False) -> float:
    """1 - CKA, clamped into [0, 1].

    For PSD kernels Tr(A B) >= 0 (also after double centering, which
    preserves PSD), so the true distance lies in [0, 1]; the clamp only
    absorbs roundoff.
    """
    return min(max(1.0 - cka(a, b, centered=centered), 0.0), 1.0)


def kernel_velocity(a, b, dt: int, centered: bool = False) -> float:
    """Kernel distance per probe step between kernels dt probe steps apart."""
    if not isinstance(dt, (int, np.integer)) or dt < 1:
        raise UsageError("dt must be a positive integer number of probe steps")
    return kernel_distance(a, b, centered=centered) / dt


def label_kernel(
    labels: np.ndarray, num_classes: int, signed: bool = False
) -> GramMatrix:
    """Target kernel Y Y^T from one-hot rows, or y y^T from a +/-1 vector.

    The signed form maps the two classes present to -1 and +1 (ascending
    class id order) and is only defined for binary label sets.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        raise UsageError("empty label set")
    if signed:
        present = np.unique(labels)
        if len(present) > 2:
            raise UsageError("signed label kernel requires at most 2 classes")
        y = np.where(labels == present[-1], 1.0, -1.0)
        return GramMatrix(np.outer(y, y))
    if labels.min() < 0 or labels.max() >= num_classes:
        raise UsageError("label out of range for one-hot kernel")
    onehot = np.zeros((labels.size, num_classes))
    onehot[np.arange(labels.size), labels] = 1.0
    return GramMatrix(onehot @ onehot.T)


def kernel_alignment(
    kernel, labels: np.ndarray, num_classes: int,
    centered: bool = False, signed: bool = False,
) -> float:
    """CKA between a kernel and the label kernel of the same samples."""
    return cka(kernel, label_kernel(labels, num_classes, signed=signed),
               centered=centered)
