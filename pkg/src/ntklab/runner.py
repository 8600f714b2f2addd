"""Deterministic SGD training over a task schedule with kernel probing.

The loop trains with plain SGD (no momentum, no weight decay, constant
step size from effective_learning_rate) and pauses every ``probe_cadence``
iterations to measure the tangent kernel on a probe set frozen from the
first task's distribution before any training.  Task boundaries are
aligned to probe steps by rounding each task's iteration budget up to a
cadence multiple.

An epoch is ``ceil(task-1 support sample count / batch_size)`` iterations
for every task in the schedule, so sweeps over shift families consume
identical gradient-step budgets.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .data import Dataset, load_cifar_binary, synthetic_dataset
from .errors import ConfigError, NumericalError
from .metrics_io import (
    ARTIFACT_VERSION,
    MetricRecord,
    write_metrics_csv,
    write_run_meta,
)
from .models import (
    INIT_KINDS,
    LR_SCALINGS,
    MODEL_KINDS,
    ModelSpec,
    ParamRegime,
    effective_learning_rate,
)
from .network import LOSS_KINDS, Network
from .params import ParamVector
from .probe import (
    SCALARIZATIONS,
    GramMatrix,
    ProbeSet,
    empirical_ntk,
    kernel_alignment,
    kernel_distance,
    kernel_velocity,
)
from .tasks import TaskSampler, TaskSchedule, mixture_family, window_family

__all__ = [
    "ExperimentConfig",
    "RunResult",
    "parse_config_file",
    "parse_config_text",
    "config_from_mapping",
    "canonical_config_text",
    "parse_schedule",
    "sgd_step",
    "probe_setup",
    "run_experiment",
    "run_and_persist",
    "sweep_experiments",
    "sweep_dir_name",
]

SAMPLING_KINDS = ("without_replacement", "iid")
DATASET_KINDS = ("synthetic", "cifar")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines a run; equal configs give identical CSVs."""

    model: str = "cnn3"
    width: int = 32
    input_shape: tuple[int, ...] = (1, 8, 8)
    num_classes: int = 10
    init: str = "kaiming_uniform"
    lr: float = 1e-3
    lr_scaling: str = "none"
    ref_width: int = 32
    loss: str = "cross_entropy"
    batch_size: int = 32
    probe_size: int = 32
    scalarization: str = "true_class_logit"
    probe_cadence: int = 10
    velocity_dt: int = 1
    cka_centered: bool = False
    signed_label_kernel: bool = False
    sampling: str = "without_replacement"
    seed: int = 0
    data_seed: int = 0
    dataset: str = "synthetic"
    data_path: str = ""
    test_data_path: str = ""
    per_class: int = 64
    test_per_class: int = 32
    noise: float = 0.25
    amplitude: float = 0.25
    schedule: str = "window:0:5:10,window:5:5:10"
    max_iterations: int | None = None
    out: str = "runs/latest"

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"unknown model {self.model!r}")
        if self.init not in INIT_KINDS:
            raise ConfigError(f"unknown init {self.init!r}")
        if self.lr_scaling not in LR_SCALINGS:
            raise ConfigError(f"unknown lr_scaling {self.lr_scaling!r}")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.scalarization not in SCALARIZATIONS:
            raise ConfigError(f"unknown scalarization {self.scalarization!r}")
        if self.sampling not in SAMPLING_KINDS:
            raise ConfigError(f"unknown sampling {self.sampling!r}")
        if self.dataset not in DATASET_KINDS:
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        for name in ("width", "num_classes", "batch_size", "probe_size",
                     "probe_cadence", "velocity_dt", "ref_width",
                     "per_class", "test_per_class"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.lr < 0:
            raise ConfigError("lr must be nonnegative")
        if self.seed < 0 or self.data_seed < 0:
            raise ConfigError("seeds must be nonnegative")
        if self.max_iterations is not None and self.max_iterations < 0:
            raise ConfigError("max_iterations must be >= 0")
        if self.dataset == "cifar" and not self.data_path:
            raise ConfigError("cifar dataset needs data_path")
        # validate eagerly so bad configs fail before any training
        self.model_spec()
        self.regime()
        self.task_schedule()

    def model_spec(self) -> ModelSpec:
        return ModelSpec(
            kind=self.model,
            width=self.width,
            input_shape=tuple(self.input_shape),
            num_classes=self.num_classes,
        )

    def regime(self) -> ParamRegime:
        return ParamRegime(
            init=self.init,
            lr_base=self.lr,
            lr_scaling=self.lr_scaling,
            ref_width=self.ref_width,
        )

    def task_schedule(self) -> TaskSchedule:
        return parse_schedule(self.schedule, self.num_classes)


# --- config file format ------------------------------------------------------


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected true/false, got {text!r}")


def _parse_shape(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(p) for p in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"bad input_shape {text!r}; use D or CxHxW") from None
    if not dims or any(d < 1 for d in dims):
        raise ConfigError(f"bad input_shape {text!r}")
    return dims


def _parse_opt_int(text: str) -> int | None:
    text = text.strip()
    if text in ("", "none"):
        return None
    return int(text)


_PARSERS = {
    "model": str,
    "width": int,
    "input_shape": _parse_shape,
    "num_classes": int,
    "init": str,
    "lr": float,
    "lr_scaling": str,
    "ref_width": int,
    "loss": str,
    "batch_size": int,
    "probe_size": int,
    "scalarization": str,
    "probe_cadence": int,
    "velocity_dt": int,
    "cka_centered": _parse_bool,
    "signed_label_kernel": _parse_bool,
    "sampling": str,
    "seed": int,
    "data_seed": int,
    "dataset": str,
    "data_path": str,
    "test_data_path": str,
    "per_class": int,
    "test_per_class": int,
    "noise": float,
    "amplitude": float,
    "schedule": str,
    "max_iterations": _parse_opt_int,
    "out": str,
}

assert set(_PARSERS) == {f.name for f in fields(ExperimentConfig)}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Flat `key = value` lines with # comments; returns raw string values."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected `key = value`")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in _PARSERS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = value.strip()
    return raw


def config_from_mapping(raw: dict[str, str]) -> ExperimentConfig:
    values = {}
    for key, text in raw.items():
        if key not in _PARSERS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            values[key] = _PARSERS[key](text)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from None
    return ExperimentConfig(**values)


def parse_config_file(path: str | Path, overrides: dict[str, str] | None = None,
                      ) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    raw = parse_config_text(text, source=str(path))
    if overrides:
        raw.update({k: str(v) for k, v in overrides.items()})
    return config_from_mapping(raw)


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return "x".join(str(v) for v in value)
    return str(value)


def canonical_config_text(cfg: ExperimentConfig) -> str:
    """One line per field in declaration order; hashing this pins the run."""
    lines = [
        f"{f.name} = {_format_value(getattr(cfg, f.name))}"
        for f in fields(ExperimentConfig)
    ]
    return "\n".join(lines) + "\n"


def config_sha256(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_config_text(cfg).encode()).hexdigest()


def parse_schedule(text: str, num_classes: int) -> TaskSchedule:
    """Schedule grammar: comma-separated `window:START:WIDTH:EPOCHS` and
    `mixture:ALPHA:EPOCHS` items."""
    items = [part.strip() for part in text.split(",") if part.strip()]
    if not items:
        raise ConfigError("schedule must contain at least one task")
    tasks = []
    for item in items:
        parts = item.split(":")
        kind = parts[0]
        try:
            if kind == "window" and len(parts) == 4:
                dist = window_family(int(parts[1]), int(parts[2]), num_classes)
                epochs = int(parts[3])
            elif kind == "mixture" and len(parts) == 3:
                if num_classes < 10:
                    raise ConfigError(
                        "mixture tasks reweight the fixed class blocks "
                        "{0..4} and {5..9}; num_classes must be >= 10"
                    )
                dist = mixture_family(float(parts[1]))
                epochs = int(parts[2])
            else:
                raise ConfigError(
                    f"bad schedule item {item!r}; use window:START:WIDTH:EPOCHS "
                    f"or mixture:ALPHA:EPOCHS"
                )
        except ValueError:
            raise ConfigError(f"bad number in schedule item {item!r}") from None
        tasks.append((dist, epochs))
    return TaskSchedule(tasks=tuple(tasks))


# --- training ----------------------------------------------------------------


def _one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def sgd_step(
    network: Network,
    params: ParamVector,
    images: np.ndarray,
    labels: np.ndarray,
    eta: float,
    loss_kind: str,
) -> tuple[ParamVector, float]:
    """One plain SGD step on the mean batch loss; returns (params, loss)."""
    if loss_kind == "squared":
        targets = _one_hot(labels, network.spec.num_classes)
    else:
        targets = labels
    value, loss, tape = network.batch_loss(params, images, targets, loss_kind)
    grad = tape.grad_flat(loss, np.asarray(1.0))
    return params.with_data(params.data - eta * grad), value


def _load_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset | None]:
    if cfg.dataset == "synthetic":
        train = synthetic_dataset(
            classes=cfg.num_classes,
            per_class=cfg.per_class,
            image_shape=_as_image_shape(cfg),
            seed=cfg.data_seed,
            noise=cfg.noise,
            amplitude=cfg.amplitude,
            split="train",
        )
        test = synthetic_dataset(
            classes=cfg.num_classes,
            per_class=cfg.test_per_class,
            image_shape=_as_image_shape(cfg),
            seed=cfg.data_seed,
            noise=cfg.noise,
            amplitude=cfg.amplitude,
            split="test",
        )
        return train, test
    train = load_cifar_binary(cfg.data_path, num_classes=cfg.num_classes)
    test = (
        load_cifar_binary(cfg.test_data_path, num_classes=cfg.num_classes,
                          split="test")
        if cfg.test_data_path
        else None
    )
    return train, test


def _as_image_shape(cfg: ExperimentConfig) -> tuple[int, int, int]:
    if len(cfg.input_shape) == 3:
        return tuple(cfg.input_shape)
    # mlp on flat inputs: store as a single-row image for the generator
    return (1, 1, int(cfg.input_shape[0]))


def _flatten_for_model(images: np.ndarray, cfg: ExperimentConfig) -> np.ndarray:
    if cfg.model == "mlp":
        return images.reshape(images.shape[0], -1)
    return images


@dataclass
class RunResult:
    config: ExperimentConfig
    records: list[MetricRecord]
    status: str  # "ok" | "poisoned"
    poison_iteration: int | None
    probe_sha256: str
    config_sha256: str
    iterations_per_epoch: int
    total_iterations: int
    switch_steps: list[int]  # global_step of the last record of each finished task
    final_params: ParamVector | None

    @property
    def poisoned(self) -> bool:
        return self.status == "poisoned"


def _accuracy(network: Network, params: ParamVector, dataset: Dataset,
              cfg: ExperimentConfig, chunk: int = 256) -> float | None:
    if dataset is None or len(dataset) == 0:
        return None
    correct = 0
    images = dataset.images_nchw()
    for start in range(0, len(dataset), chunk):
        batch = _flatten_for_model(images[start : start + chunk], cfg)
        out, _ = network.forward(params, batch)
        correct += int(np.sum(out.data.argmax(axis=1)
                              == dataset.labels[start : start + chunk]))
    return correct / len(dataset)


def probe_setup(cfg: ExperimentConfig) -> tuple[Network, ParamVector, ProbeSet]:
    """Network, initial parameters, and frozen probe for this config.

    Reproduces exactly the state run_experiment starts from (same seed
    derivation), for standalone kernel inspection without training.
    """
    network = Network(cfg.model_spec(), cfg.regime())
    train_data, _ = _load_datasets(cfg)
    root = np.random.SeedSequence(cfg.seed)
    init_ss, probe_ss, _ = root.spawn(3)
    params = network.init_params(int(init_ss.generate_state(1)[0]))
    probe_rng = np.random.default_rng(probe_ss)
    task1_dist = cfg.task_schedule().tasks[0][0]
    probe_images, probe_labels = TaskSampler(
        task1_dist, train_data, probe_rng,
        cfg.sampling == "without_replacement",
    ).batch(cfg.probe_size)
    probe = ProbeSet(
        inputs=_flatten_for_model(probe_images, cfg),
        labels=probe_labels,
        num_classes=cfg.num_classes,
        scalarization=cfg.scalarization,
        signed_labels=cfg.signed_label_kernel,
    )
    return network, params, probe


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    """Train through the schedule, probing the kernel every cadence steps.

    Numerical divergence (non-finite loss or activations) does not raise:
    the run stops and the result carries status="poisoned" plus the
    iteration at which training went bad, with all records captured so far.
    """
    spec = cfg.model_spec()
    regime = cfg.regime()
    network = Network(spec, regime)
    schedule = cfg.task_schedule()
    train_data, test_data = _load_datasets(cfg)
    eta = effective_learning_rate(regime, cfg.width)
    without_replacement = cfg.sampling == "without_replacement"

    root = np.random.SeedSequence(cfg.seed)
    init_ss, probe_ss, sample_ss = root.spawn(3)
    params = network.init_params(int(init_ss.generate_state(1)[0]))
    probe_rng = np.random.default_rng(probe_ss)
    sample_rng = np.random.default_rng(sample_ss)

    task1_dist = schedule.tasks[0][0]
    probe_images, probe_labels = TaskSampler(
        task1_dist, train_data, probe_rng, without_replacement
    ).batch(cfg.probe_size)
    probe = ProbeSet(
        inputs=_flatten_for_model(probe_images, cfg),
        labels=probe_labels,
        num_classes=cfg.num_classes,
        scalarization=cfg.scalarization,
        signed_labels=cfg.signed_label_kernel,
    )
    task1_test = (
        test_data.restrict_to_classes(task1_dist.support) if test_data else None
    )

    task1_count = int(np.isin(train_data.labels, task1_dist.support).sum())
    iterations_per_epoch = max(1, math.ceil(task1_count / cfg.batch_size))
    cadence = cfg.probe_cadence

    # task boundaries land on probe steps: round budgets up to cadence multiples
    budgets = []
    for _, epochs in schedule.tasks:
        iters = epochs * iterations_per_epoch
        budgets.append(math.ceil(iters / cadence) * cadence)
    if cfg.max_iterations is not None:
        capped, remaining = [], cfg.max_iterations
        for b in budgets:
            take = min(b, remaining)
            capped.append(take)
            remaining -= take
        budgets = capped
    total_iterations = sum(budgets)

    records: list[MetricRecord] = []
    switch_steps: list[int] = []
    status, poison_iteration = "ok", None
    kernels: dict[int, GramMatrix] = {}
    kernel_init: GramMatrix | None = None
    centered = cfg.cka_centered
    losses_since_probe: list[float] = []

    def take_probe(step: int, task_index: int, iteration: int) -> bool:
        nonlocal kernel_init
        try:
            kernel = empirical_ntk(network, params, probe)
            lam = kernel.max_eigenvalue()
        except NumericalError:
            return False
        if kernel_init is None:
            kernel_init = kernel
        d_init = kernel_distance(kernel_init, kernel, centered=centered)
        prev = kernels.get(step - 1)
        d_prev = (
            kernel_distance(prev, kernel, centered=centered)
            if prev is not None
            else 0.0
        )
        back = kernels.get(step - cfg.velocity_dt)
        vel = (
            kernel_velocity(back, kernel, cfg.velocity_dt, centered=centered)
            if back is not None
            else None
        )
        align = kernel_alignment(
            kernel, probe.labels, cfg.num_classes,
            centered=centered, signed=cfg.signed_label_kernel,
        )
        loss_mean = (
            float(np.mean(losses_since_probe)) if losses_since_probe else None
        )
        records.append(
            MetricRecord(
                global_step=step,
                task_index=task_index,
                iteration=iteration,
                lambda_max=lam,
                kernel_distance_from_init=d_init,
                kernel_distance_from_prev=d_prev,
                velocity=vel,
                alignment=align,
                train_loss=loss_mean,
                task1_test_accuracy=_accuracy(network, params, task1_test, cfg),
            )
        )
        kernels[step] = kernel
        kernels.pop(step - cfg.velocity_dt - 1, None)
        losses_since_probe.clear()
        return True

    iteration = 0
    step = 0
    if not take_probe(step, task_index=0, iteration=0):
        status, poison_iteration = "poisoned", 0
    if status == "ok":
        done = False
        for task_index, ((dist, _), budget) in enumerate(
            zip(schedule.tasks, budgets)
        ):
            if done or budget == 0:
                break
            sampler = TaskSampler(dist, train_data, sample_rng,
                                  without_replacement)
            for _ in range(budget):
                images, labels = sampler.batch(cfg.batch_size)
                images = _flatten_for_model(images, cfg)
                try:
                    params, loss = sgd_step(
                        network, params, images, labels, eta, cfg.loss
                    )
                except NumericalError:
                    status, poison_iteration = "poisoned", iteration
                    done = True
                    break
                if not np.isfinite(loss):
                    status, poison_iteration = "poisoned", iteration
                    done = True
                    break
                losses_since_probe.append(loss)
                iteration += 1
                if iteration % cadence == 0:
                    step += 1
                    if not take_probe(step, task_index, iteration):
                        status, poison_iteration = "poisoned", iteration
                        done = True
                        break
            next_has_budget = (
                task_index + 1 < len(budgets) and budgets[task_index + 1] > 0
            )
            if not done and next_has_budget:
                switch_steps.append(step)

    return RunResult(
        config=cfg,
        records=records,
        status=status,
        poison_iteration=poison_iteration,
        probe_sha256=probe.sha256(),
        config_sha256=config_sha256(cfg),
        iterations_per_epoch=iterations_per_epoch,
        total_iterations=total_iterations,
        switch_steps=switch_steps,
        final_params=params,
    )


# --- persistence and sweeps --------------------------------------------------


def run_and_persist(cfg: ExperimentConfig, out: str | Path | None = None) -> RunResult:
    """Run and write metrics.csv, run.meta, and the effective config."""
    out_dir = Path(out) if out is not None else Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = run_experiment(cfg)
    write_metrics_csv(result.records, out_dir / "metrics.csv")
    (out_dir / "config.txt").write_text(canonical_config_text(cfg))
    write_run_meta(
        {
            "artifact_version": ARTIFACT_VERSION,
            "config_sha256": result.config_sha256,
            "probe_sha256": result.probe_sha256,
            "status": result.status,
            "poison_iteration": result.poison_iteration,
            "seed": cfg.seed,
            "iterations_per_epoch": result.iterations_per_epoch,
            "probe_steps_per_epoch": max(
                1, round(result.iterations_per_epoch / cfg.probe_cadence)
            ),
            "total_iterations": result.total_iterations,
            "switch_steps": ",".join(str(s) for s in result.switch_steps),
            "records": len(result.records),
        },
        out_dir / "run.meta",
    )
    return result


def sweep_dir_name(key: str, value: str) -> str:
    safe = "".join(
        ch if ch.isalnum() or ch in "._-=" else "-" for ch in f"{key}={value}"
    )
    return safe


def sweep_experiments(
    cfg: ExperimentConfig, key: str, values: list[str],
    base_out: str | Path | None = None,
) -> list[tuple[str, RunResult]]:
    """Run one experiment per value of `key`, each in its own directory."""
    if key not in _PARSERS:
        raise ConfigError(f"unknown config key {key!r}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    base = Path(base_out) if base_out is not None else Path(cfg.out)
    results = []
    for value in values:
        sub = base / sweep_dir_name(key, value)
        swept = config_from_mapping(
            {
                **{
                    f.name: _format_value(getattr(cfg, f.name))
                    for f in fields(ExperimentConfig)
                },
                key: value,
                "out": str(sub),
            }
        )
        results.append((value, run_and_persist(swept)))
    return results
