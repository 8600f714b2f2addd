import numpy as np
import pytest

from ntklab.models import ModelSpec, ParamRegime
from ntklab.network import Network


@pytest.fixture
def tiny_mlp():
    spec = ModelSpec(kind="mlp", width=6, input_shape=(4,), num_classes=3)
    return Network(spec, ParamRegime())


@pytest.fixture
def tiny_cnn():
    spec = ModelSpec(kind="cnn3", width=4, input_shape=(1, 8, 8), num_classes=3)
    return Network(spec, ParamRegime())


def finite_difference_grad(f, theta: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    grad = np.zeros_like(theta)
    for j in range(theta.size):
        up = theta.copy()
        dn = theta.copy()
        up[j] += h
        dn[j] -= h
        grad[j] = (f(up) - f(dn)) / (2.0 * h)
    return grad


class PurelyLinearModel:
    """f(x) = W x, taped; exactly linear in parameters, so the tangent
    kernel is constant and the frozen-kernel prediction must be exact."""

    def __init__(self, in_dim, out_dim):
        self.in_dim, self.out_dim = in_dim, out_dim

    def forward(self, params, x):
        from ntklab import autodiff as ad
        from ntklab.autodiff import Tape, Tensor

        w = Tensor(params.view("w"))
        h = ad.linear(Tensor(np.asarray(x, dtype=np.float64)[None, :]), w, 1.0)
        out = ad.reshape(h, (self.out_dim,))
        return out, Tape(out, [w], params)
