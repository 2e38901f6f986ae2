"""Personalized instance-based engagement forecasting and intervention allocation."""

from .errors import (
    ConfigurationError,
    EmptyMemoryError,
    IblcastError,
    IngestionError,
    TemporalOrderError,
    TrainingDivergenceError,
    UsageError,
)
from .ibl import (
    Context,
    IblParams,
    Instance,
    MemoryStore,
    WeightProfile,
    activation,
    blended_value,
    record_instance,
    retrieval_probabilities,
    similarity,
)
from .personalize import (
    FitResult,
    Trajectory,
    fit_cohort,
    grid_search_weights,
    trace_trajectory,
    weighted_loss,
)
from .forecast import (
    Forecaster,
    ForecastQuery,
    IblForecaster,
    forecast_iterated,
    forecast_test_window,
)
from .lstm import (
    LstmConfig,
    LstmForecaster,
    LstmModel,
    Window,
    gradient_check,
    lstm_forward,
    lstm_train,
    make_windows,
)
from .tari import (
    PolicyKind,
    RoundRobinState,
    TariScore,
    baseline_select,
    score_beneficiary,
    select_top_k,
    tari_index,
    time_to_disengagement,
)
from .sim import (
    ArchetypeSpec,
    CohortSpec,
    SimRun,
    SyntheticCohort,
    counterfactual_next,
    engaged_fraction,
    generate_cohort,
    run_policy_simulation,
)
from .analyze import (
    Clustering,
    QualityScores,
    RegimenReport,
    cluster_quality,
    error_report,
    kmeans_cluster,
    regimen_experiment,
)
from .config import RunConfig

__version__ = "0.1.0"
