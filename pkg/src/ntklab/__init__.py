"""Desk-scale laboratory for empirical NTK dynamics under task shifts."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConfigError,
    DataError,
    DivergenceError,
    NtkLabError,
    NumericalError,
    UndefinedSimilarityError,
    UsageError,
    VersionError,
)
from .models import ModelSpec, ParamRegime, effective_learning_rate, initialize  # noqa: F401
from .network import Network, grad_loss, grad_scalar  # noqa: F401
from .params import ParamVector, Segment  # noqa: F401
from .probe import (  # noqa: F401
    GramMatrix,
    ProbeSet,
    Spectrum,
    cka,
    empirical_ntk,
    kernel_alignment,
    kernel_distance,
    kernel_velocity,
    label_kernel,
    max_eigenvalue,
)
from .tasks import (  # noqa: F401
    TaskDistribution,
    TaskSampler,
    TaskSchedule,
    jaccard_similarity,
    mixture_family,
    mixture_similarity,
    sample_batch,
    window_family,
)
from .data import Dataset, load_cifar_binary, synthetic_dataset, write_cifar_binary  # noqa: F401
from .oracle import (  # noqa: F401
    LazyTrainingReport,
    ResidualState,
    brute_force_ntk,
    eigenmode_decay,
    evolve_residuals,
    lazy_training_check,
)
from .metrics_io import (  # noqa: F401
    ARTIFACT_VERSION,
    MetricRecord,
    read_metrics_csv,
    read_run_meta,
    write_metrics_csv,
    write_run_meta,
)
from .runner import (  # noqa: F401
    ExperimentConfig,
    RunResult,
    parse_config_file,
    probe_setup,
    run_and_persist,
    run_experiment,
    sgd_step,
    sweep_experiments,
)
from .report import (  # noqa: F401
    ReactivationStats,
    TrendReport,
    plot_metrics,
    reactivation_stats,
    similarity_trend,
    spearman,
    stats_mapping,
)
