"""Task distributions, schedules, and similarity-controlled shift families.

Two families of two-task shifts: a class-window family (task k draws
uniformly from w consecutive classes starting at k, similarity = Jaccard
overlap of supports) and a frequency-mixture family (reweight two fixed
disjoint class blocks by alpha, similarity = 1 - |alpha - beta|).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .data import Dataset

__all__ = [
    "TaskDistribution",
    "TaskSchedule",
    "window_family",
    "mixture_family",
    "jaccard_similarity",
    "mixture_similarity",
    "TaskSampler",
    "sample_batch",
]

log = logging.getLogger(__name__)

MIXTURE_LOW = (0, 1, 2, 3, 4)
MIXTURE_HIGH = (5, 6, 7, 8, 9)


@dataclass(frozen=True)
class TaskDistribution:
    """Normalized weights over class ids; zero-weight classes are dropped."""

    class_weights: tuple[tuple[int, float], ...]

    @classmethod
    def from_weights(cls, weights: dict[int, float]) -> "TaskDistribution":
        items = [(int(c), float(w)) for c, w in sorted(weights.items()) if w > 0.0]
        if not items:
            raise ConfigError("task distribution needs nonempty support")
        if any(w < 0 for _, w in weights.items()):
            raise ConfigError("class weights must be nonnegative")
        total = sum(w for _, w in items)
        normalized = [(c, w / total) for c, w in items]
        # A subnormal weight can underflow to exactly 0.0 when divided by the
        # total; such a class is below any representable probability, so it is
        # dropped like an explicit zero and the rest renormalized.
        kept = [(c, w) for c, w in normalized if w > 0.0]
        if len(kept) != len(normalized):
            survivors = sum(w for _, w in kept)
            kept = [(c, w / survivors) for c, w in kept]
        return cls(tuple(kept))

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(c for c, _ in self.class_weights)

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.class_weights])

    def weight_of(self, cls_id: int) -> float:
        for c, w in self.class_weights:
            if c == cls_id:
                return w
        return 0.0


@dataclass(frozen=True)
class TaskSchedule:
    tasks: tuple[tuple[TaskDistribution, int], ...]  # (distribution, epochs)
    dataset_id: str = "synthetic"

    def __post_init__(self):
        if not self.tasks:
            raise ConfigError("schedule needs at least one task")
        for _, epochs in self.tasks:
            if epochs < 1:
                raise ConfigError("each task needs at least one epoch")


def window_family(i: int, width: int, num_classes: int) -> TaskDistribution:
    """Uniform mixture over `width` consecutive classes starting at `i`."""
    if i < 0 or width < 1:
        raise ConfigError("window start must be >= 0 and width >= 1")
    if i + width > num_classes:
        raise ConfigError(
            f"window [{i}, {i + width}) exceeds the {num_classes}-class dataset"
        )
    return TaskDistribution.from_weights({c: 1.0 / width for c in range(i, i + width)})


def mixture_family(
    alpha: float,
    low: tuple[int, ...] = MIXTURE_LOW,
    high: tuple[int, ...] = MIXTURE_HIGH,
) -> TaskDistribution:
    """(1 - alpha) uniform on the low block + alpha uniform on the high block."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"mixture alpha must lie in [0, 1], got {alpha}")
    weights = {c: (1.0 - alpha) / len(low) for c in low}
    weights.update({c: alpha / len(high) for c in high})
    return TaskDistribution.from_weights(weights)


def jaccard_similarity(a: TaskDistribution, b: TaskDistribution) -> float:
    """Support overlap |A and B| / |A or B|; compares supports as sets."""
    sa, sb = set(a.support), set(b.support)
    return len(sa & sb) / len(sa | sb)


def mixture_similarity(alpha: float, beta: float) -> float:
    """1 - |alpha - beta| for two mixture coefficients."""
    for v in (alpha, beta):
        if not 0.0 <= v <= 1.0:
            raise ConfigError(f"mixture coefficient must lie in [0, 1], got {v}")
    return 1.0 - abs(alpha - beta)


class TaskSampler:
    """Stream of batches from one task distribution.

    The class of each sample is drawn i.i.d. from the task weights; the
    image is drawn without replacement from a per-class shuffled pool
    (reshuffled with a log line when a pool runs dry mid-epoch).  Pure
    i.i.d. image draws are available via ``without_replacement=False``.
    """

    def __init__(
        self,
        dist: TaskDistribution,
        dataset: Dataset,
        rng: np.random.Generator,
        without_replacement: bool = True,
    ):
        self.dist = dist
        self.dataset = dataset
        self.rng = rng
        self.without_replacement = without_replacement
        self._class_indices: dict[int, np.ndarray] = {}
        self._pools: dict[int, list[int]] = {}
        for c in dist.support:
            idx = np.flatnonzero(dataset.labels == c)
            if idx.size == 0:
                raise ConfigError(f"dataset has no images for class {c}")
            self._class_indices[c] = idx
        self._support = np.array(dist.support)
        self._weights = dist.weights

    def _draw_index(self, c: int) -> int:
        if not self.without_replacement:
            pool = self._class_indices[c]
            return int(pool[self.rng.integers(pool.size)])
        queue = self._pools.get(c)
        if not queue:
            if c in self._pools:
                log.debug("class %d pool exhausted mid-epoch; reshuffling", c)
            order = self._class_indices[c].copy()
            self.rng.shuffle(order)
            queue = list(order[::-1])  # pop() consumes from the front
            self._pools[c] = queue
        return int(queue.pop())

    def batch(self, size: int) -> tuple[np.ndarray, np.ndarray]:
        """Sample `size` (image, label) pairs; images in model layout."""
        classes = self.rng.choice(self._support, size=size, p=self._weights)
        rows = np.fromiter(
            (self._draw_index(int(c)) for c in classes), dtype=np.int64, count=size
        )
        images = self.dataset.images[rows].reshape((size,) + self.dataset.image_shape)
        return images, self.dataset.labels[rows].astype(np.int64)


def sample_batch(
    dist: TaskDistribution,
    dataset: Dataset,
    batch: int,
    rng: np.random.Generator,
    without_replacement: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """One-shot batch draw (fresh per-class pools; see TaskSampler for streams)."""
    return TaskSampler(dist, dataset, rng, without_replacement).batch(batch)
