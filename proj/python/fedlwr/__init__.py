"""Layer-wise re-weighting federated learning simulator.

Thin bindings over the C++ engine. Arrays are float64 numpy arrays; batches
are shaped (b, 1, H, W) and feature matrices (n, d).
"""

from ._core import (
    ConfigError,
    DatasetBundle,
    DomainSpec,
    Error,
    ExperimentConfig,
    FormatError,
    InvalidArgument,
    ModelParams,
    NumericError,
    ShapeError,
    ShapeMismatchError,
    SimilarityScore,
    SummaryRow,
    TruncatedFileError,
    UnknownTopology,
    benchmark_domains,
    build_model,
    center_gram,
    cka,
    compare,
    convert_weights,
    cosine_mean,
    dice_coefficient,
    dice_loss,
    fairer_by_std,
    forward,
    generate_client_dataset,
    gradients,
    gram,
    hsic,
    load_config,
    load_dataset,
    parse_config,
    population_std,
    read_summary_csv,
    registered_topologies,
    render_config,
    run_experiment,
    save_dataset,
    validate_config,
)

__version__ = "0.1.0"
