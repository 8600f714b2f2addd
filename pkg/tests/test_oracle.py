"""Reference-path checks: residual recursion, eigenmode form, brute-force
kernel agreement, and the lazy-training deviation report."""

import numpy as np
import pytest

from ntklab.errors import UsageError
from ntklab.models import ModelSpec, ParamRegime
from ntklab.network import Network
from ntklab.oracle import (
    BRUTE_FORCE_ENTRY_LIMIT,
    ResidualState,
    brute_force_ntk,
    eigenmode_decay,
    evolve_residuals,
    lazy_training_check,
)
from ntklab.params import ParamVector
from ntklab.probe import GramMatrix, ProbeSet, empirical_ntk

from conftest import PurelyLinearModel


def random_psd(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, n))
    return GramMatrix(a @ a.T)


# --- residual recursion ------------------------------------------------------


def test_identity_kernel_one_step_kill():
    e0 = np.array([3.0, -1.0, 0.5])
    traj = evolve_residuals(e0, GramMatrix(np.eye(3)), eta=1.0, steps=2)
    np.testing.assert_array_equal(traj[0].e, e0)
    np.testing.assert_array_equal(traj[1].e, np.zeros(3))
    np.testing.assert_array_equal(traj[2].e, np.zeros(3))
    assert [s.t for s in traj] == [0, 1, 2]


def test_scalar_geometric_decay():
    traj = evolve_residuals(
        np.array([1.0]), GramMatrix(np.array([[2.0]])), eta=0.1, steps=6
    )
    for t, state in enumerate(traj):
        assert state.e[0] == pytest.approx(0.8**t, rel=1e-14)


def test_unstable_step_size_grows_monotonically():
    k = random_psd(4, seed=0)
    spec = k.spectrum()
    lam_max = spec.eigenvalues[0]
    top = spec.eigenvectors[:, 0]
    traj = evolve_residuals(top, k, eta=2.5 / lam_max, steps=10)
    norms = [s.norm for s in traj]
    assert all(b > a for a, b in zip(norms, norms[1:]))


def test_stable_step_size_decays_per_mode():
    k = random_psd(5, seed=1)
    spec = k.spectrum()
    lam_max = spec.eigenvalues[0]
    eta = 1.0 / lam_max
    e0 = k.entries @ np.random.default_rng(2).normal(size=5)  # column space
    traj = evolve_residuals(e0, k, eta=eta, steps=200)
    coords = np.abs(spec.eigenvectors.T @ np.stack([s.e for s in traj]).T)
    # every nonzero mode shrinks monotonically at its own rate
    for i, lam in enumerate(spec.eigenvalues):
        if lam > 0:
            assert np.all(np.diff(coords[i]) <= 1e-12 * coords[i, 0])
    # modes with lambda >= lam_max / 10 are essentially gone after 200 steps
    fast = spec.eigenvalues >= 0.1 * lam_max
    assert np.all(coords[fast, -1] <= 1e-6 * np.abs(e0).max())


def test_evolve_validation():
    k = GramMatrix(np.eye(2))
    with pytest.raises(UsageError):
        evolve_residuals(np.ones(3), k, eta=0.1, steps=1)
    with pytest.raises(UsageError):
        evolve_residuals(np.ones(2), k, eta=0.0, steps=1)
    with pytest.raises(UsageError):
        evolve_residuals(np.ones(2), k, eta=0.1, steps=-1)
    with pytest.raises(UsageError):
        ResidualState(np.ones((2, 2)))


def test_residual_state_carries_counter():
    k = GramMatrix(np.eye(2))
    start = ResidualState(np.ones(2), t=7)
    traj = evolve_residuals(start, k, eta=0.5, steps=2)
    assert [s.t for s in traj] == [7, 8, 9]


# --- eigenmode closed form ---------------------------------------------------


def test_eigenmode_t0_is_projection():
    k = random_psd(4, seed=3)
    spec = k.spectrum()
    e0 = np.array([1.0, -2.0, 0.5, 3.0])
    np.testing.assert_allclose(
        eigenmode_decay(e0, spec, eta=0.05, t=0),
        spec.eigenvectors.T @ e0,
        rtol=1e-14,
    )


def test_eigenmode_matches_recursion_on_random_kernels():
    for seed in range(5):
        k = random_psd(6, seed=seed)
        spec = k.spectrum()
        eta = 0.5 / spec.eigenvalues[0]
        e0 = np.random.default_rng(100 + seed).normal(size=6)
        traj = evolve_residuals(e0, k, eta=eta, steps=50)
        for t in (0, 1, 7, 50):
            closed = eigenmode_decay(e0, spec, eta=eta, t=t)
            projected = spec.eigenvectors.T @ traj[t].e
            np.testing.assert_allclose(closed, projected, rtol=0, atol=1e-10)


def test_null_space_mode_is_constant():
    # rank-1 kernel: second eigenvalue 0, its mode must never move
    v = np.array([1.0, 1.0]) / np.sqrt(2)
    k = GramMatrix(np.outer(v, v))
    spec = k.spectrum()
    assert spec.eigenvalues[1] == 0.0
    e0 = np.array([2.0, -1.0])
    coords0 = spec.eigenvectors.T @ e0
    for t in (1, 10, 1000):
        coords = eigenmode_decay(e0, spec, eta=0.3, t=t)
        assert coords[1] == pytest.approx(coords0[1], rel=1e-14)


# --- brute-force kernel ------------------------------------------------------


def linear_probe_network():
    spec = ModelSpec(kind="mlp", width=1, input_shape=(1,), num_classes=2)
    net = Network(spec, ParamRegime())
    pv = ParamVector.from_arrays(
        [
            ("fc1.w", np.array([[1.0]])),
            ("fc1.b", np.zeros(1)),
            ("fc2.w", np.array([[2.0], [0.0]])),
            ("fc2.b", np.zeros(2)),
        ]
    )
    return net, pv


def test_brute_force_hand_computed_kernel():
    net, pv = linear_probe_network()
    probe = ProbeSet(
        inputs=np.array([[1.0], [2.0], [3.0]]),
        labels=np.zeros(3, dtype=int),
        num_classes=2,
    )
    k = brute_force_ntk(net, pv, probe)
    x = np.array([1.0, 2.0, 3.0])
    np.testing.assert_allclose(
        k.entries, 5.0 * (np.outer(x, x) + 1.0), rtol=1e-12, atol=0
    )


def test_brute_force_matches_taped_mlp(tiny_mlp):
    pv = tiny_mlp.init_params(0)
    rng = np.random.default_rng(0)
    probe = ProbeSet(
        inputs=rng.normal(size=(4, 4)),
        labels=rng.integers(0, 3, size=4),
        num_classes=3,
    )
    a = brute_force_ntk(tiny_mlp, pv, probe).entries
    b = empirical_ntk(tiny_mlp, pv, probe).entries
    denom = np.maximum(np.abs(b), 1e-30)
    assert np.max(np.abs(a - b) / denom) <= 1e-10


@pytest.mark.parametrize("scalarization", ["true_class_logit", "sum_logits", "mean_logits"])
def test_brute_force_matches_taped_cnn(tiny_cnn, scalarization):
    pv = tiny_cnn.init_params(1)
    rng = np.random.default_rng(2)
    probe = ProbeSet(
        inputs=rng.uniform(size=(5, 1, 8, 8)),
        labels=rng.integers(0, 3, size=5),
        num_classes=3,
        scalarization=scalarization,
    )
    a = brute_force_ntk(tiny_cnn, pv, probe).entries
    b = empirical_ntk(tiny_cnn, pv, probe).entries
    denom = np.maximum(np.abs(b), 1e-30)
    assert np.max(np.abs(a - b) / denom) <= 1e-10


def test_brute_force_matches_taped_wider_models():
    rng = np.random.default_rng(3)
    for kind, width, shape in (("mlp", 64, (10,)), ("cnn3", 8, (1, 8, 8))):
        spec = ModelSpec(kind=kind, width=width, input_shape=shape, num_classes=4)
        for init in ("kaiming_uniform", "kaiming_normal", "ntk_like"):
            net = Network(spec, ParamRegime(init=init))
            pv = net.init_params(17)
            probe = ProbeSet(
                inputs=rng.uniform(size=(3,) + shape),
                labels=rng.integers(0, 4, size=3),
                num_classes=4,
            )
            a = brute_force_ntk(net, pv, probe).entries
            b = empirical_ntk(net, pv, probe).entries
            denom = np.maximum(np.abs(b), 1e-30)
            assert np.max(np.abs(a - b) / denom) <= 1e-10, (kind, init)


def test_brute_force_duplicate_samples_duplicate_rows(tiny_mlp):
    pv = tiny_mlp.init_params(4)
    x = np.random.default_rng(5).normal(size=4)
    probe = ProbeSet(
        inputs=np.stack([x, x, 2 * x]),
        labels=np.array([1, 1, 1]),
        num_classes=3,
    )
    k = brute_force_ntk(tiny_mlp, pv, probe).entries
    np.testing.assert_array_equal(k[0], k[1])
    np.testing.assert_array_equal(k[:, 0], k[:, 1])


def test_brute_force_memory_guard(tiny_mlp):
    pv = tiny_mlp.init_params(6)
    n_limit = BRUTE_FORCE_ENTRY_LIMIT // pv.dim + 1
    probe = ProbeSet(
        inputs=np.zeros((n_limit, 4)),
        labels=np.zeros(n_limit, dtype=int),
        num_classes=3,
    )
    with pytest.raises(UsageError, match="limit"):
        brute_force_ntk(tiny_mlp, pv, probe)


# --- lazy training check -----------------------------------------------------


def test_lazy_check_exactly_linear_model():
    net = PurelyLinearModel(in_dim=3, out_dim=2)
    rng = np.random.default_rng(11)
    pv = ParamVector.from_arrays([("w", rng.normal(size=(2, 3)))])
    probe = ProbeSet(
        inputs=rng.normal(size=(4, 3)),
        labels=rng.integers(0, 2, size=4),
        num_classes=2,
    )
    report = lazy_training_check(net, pv, probe, eta=0.05, steps=40)
    assert report.completed_steps == 40
    assert report.max_deviation <= 1e-12
    # training must actually reduce the residuals
    assert np.abs(report.actual_residuals[-1]).max() < np.abs(
        report.actual_residuals[0]
    ).max()


def test_lazy_check_relu_net_small_steps_track_kernel(tiny_mlp):
    pv = tiny_mlp.init_params(12)
    rng = np.random.default_rng(13)
    probe = ProbeSet(
        inputs=rng.normal(size=(5, 4)),
        labels=rng.integers(0, 3, size=5),
        num_classes=3,
    )
    small = lazy_training_check(tiny_mlp, pv, probe, eta=1e-4, steps=20)
    large = lazy_training_check(tiny_mlp, pv, probe, eta=1e-2, steps=20)
    assert small.final_deviation < large.final_deviation
    assert small.max_deviation < 0.01


def test_lazy_check_eta_zero_never_moves(tiny_mlp):
    pv = tiny_mlp.init_params(7)
    rng = np.random.default_rng(8)
    probe = ProbeSet(
        inputs=rng.normal(size=(4, 4)),
        labels=rng.integers(0, 3, size=4),
        num_classes=3,
    )
    report = lazy_training_check(tiny_mlp, pv, probe, eta=0.0, steps=5)
    assert report.max_deviation == 0.0
    np.testing.assert_array_equal(
        report.actual_residuals[0], report.actual_residuals[-1]
    )


def test_lazy_check_wider_is_lazier():
    """Width 512 with inverse-width step size tracks the frozen kernel more
    closely than width 32 at the same effective training progress."""
    rng = np.random.default_rng(9)
    inputs = rng.normal(size=(8, 16))
    labels = rng.integers(0, 2, size=8)
    finals = {}
    for width in (32, 512):
        spec = ModelSpec(kind="mlp", width=width, input_shape=(16,), num_classes=2)
        net = Network(
            spec,
            ParamRegime(init="kaiming_normal", lr_base=2e-3,
                        lr_scaling="inverse_width", ref_width=32),
        )
        eta = net.regime.lr_base * 32 / width
        devs = []
        for seed in range(5):
            pv = net.init_params(seed)
            probe = ProbeSet(inputs=inputs, labels=labels, num_classes=2)
            report = lazy_training_check(net, pv, probe, eta=eta, steps=100)
            assert report.completed_steps == 100
            devs.append(report.final_deviation)
        finals[width] = float(np.median(devs))
    assert finals[512] < finals[32]


def test_lazy_check_validation(tiny_mlp):
    pv = tiny_mlp.init_params(10)
    probe = ProbeSet(
        inputs=np.zeros((2, 4)), labels=np.zeros(2, dtype=int), num_classes=3
    )
    with pytest.raises(UsageError):
        lazy_training_check(tiny_mlp, pv, probe, eta=-0.1, steps=1)
    with pytest.raises(UsageError):
        lazy_training_check(tiny_mlp, pv, probe, eta=0.1, steps=1,
                            targets=np.zeros(3))
