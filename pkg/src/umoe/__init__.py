"""Uncertainty-aware mixture-of-experts training for tabular data whose
attributes may be given as probability densities rather than scalars."""

from .data import (
    Dataset,
    MaskedDataset,
    Scaler,
    UncertainDataset,
    UncertainInstance,
    build_uncertain_dataset,
    dataset_from_arrays,
    impute_chained,
    inject_uncertainty,
    load_csv,
    prepare_uncertain_dataset,
    synthesize_dataset,
)
from .density import (
    DensityModel,
    FilteredSamples,
    ModePoint,
    ModeSearchConfig,
    SampleSet,
    density,
    filter_top_p,
    global_mode,
    local_mode,
    pdf_mean,
    sample,
)
from .errors import (
    ConfigError,
    DataError,
    FitError,
    InputError,
    SchemaError,
    TrainingError,
    UmoeError,
)
from .harness import (
    NCVConfig,
    NCVResult,
    PipelineSettings,
    SweepResult,
    ThresholdResult,
    evaluate,
    nested_cv,
    stratified_folds,
    subspace_sweep,
    threshold_sweep,
)
from .model import (
    BaselineMoE,
    BaselineNN,
    UMoE,
    decompose,
    load_model,
    save_model,
    train_experts,
    train_gate,
)
from .nn import Mlp, TrainConfig, forward, init_mlp, loss_value, train_weighted
from .partition import (
    ClusterModel,
    ClusterProbabilityVector,
    assign,
    assign_points,
    cluster_probabilities,
    complete_rows,
    dominant_cluster,
    fit_kmeans,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
