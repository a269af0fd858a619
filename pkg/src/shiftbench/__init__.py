"""shiftbench: binary quantification methods and dataset-shift protocols."""

from .classifier import (
    ClassRates,
    DEFAULT_GRID,
    SoftClassifier,
    estimate_rates_kfold,
    grid_search,
    predict_hard,
    predict_proba,
    train,
)
from .core import (
    BinaryDatapoint,
    BinaryDataset,
    EmptyDatasetError,
    Pool,
    PoolExhaustionError,
    Sample,
    StarDatapoint,
    StarDataset,
    StratificationError,
    binarise_dataset,
    sample_at_prevalence,
    sample_uniform,
    split_stratified,
)
from .datagen import (
    ClusterSpec,
    RawReview,
    Vocabulary,
    filter_reviews,
    fit_vocabulary,
    generate_mixture,
    vectorise,
)
from .evaluation import (
    ExperimentRecord,
    SignificanceMark,
    absolute_error,
    mae_by_degree,
    mark_significance,
    read_records_csv,
    wilcoxon_signed_rank,
    write_records_csv,
)
from .protocols import (
    PROTOCOLS,
    ProtocolConfig,
    count_records,
    count_records_per_method,
    run_protocol,
)
from .quantifiers import (
    ACC,
    BENCHMARK_METHODS,
    CC,
    DyS,
    MLPE,
    METHOD_NAMES,
    PACC,
    PCC,
    PosteriorHistogram,
    SLD,
    SMM,
    expectation_maximisation_prevalence,
    hellinger_distance,
    mixture_fit_alpha,
    quantifier_factory,
    topsoe_distance,
)

__version__ = "0.1.0"
