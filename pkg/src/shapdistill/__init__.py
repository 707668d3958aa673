"""Interpretable surrogate policies distilled from Shapley-vector boundary points."""

from .boundary import (
    BoundaryDataset,
    BoundaryPoint,
    KMeansSettings,
    LogisticParams,
    PipelineConfig,
    PipelineError,
    PipelineReport,
    ShapleySettings,
    TreeParams,
    boundary_points,
    inverse_map,
    rl_guided_label,
    run_pipeline,
    save_boundary,
)
from .clustering import ClusterModel, kmeans
from .envs import (
    EnvSpec,
    Episode,
    StateDataset,
    Transition,
    clip_reward,
    collect_dataset,
    load_dataset,
    make_env,
    rollout,
    save_dataset,
)
from .evaluation import (
    COMPARISON_SCHEMA,
    ComparisonReport,
    FidelityReport,
    ReturnSummary,
    compare,
    evaluate_returns,
    fidelity,
    validate_comparison,
)
from .policy import (
    LinearSoftmaxPolicy,
    PolicyServer,
    RemotePolicy,
    TabularPolicy,
    load_policy,
    oracle_table_policy,
    q_learn,
    remote_policy,
    save_policy,
)
from .shapley import (
    ConditionalConfig,
    ShapVector,
    attribute_dataset,
    char_value_det,
    char_value_stoch,
    conditional_weights,
    shapley_exact,
    shapley_sampled,
)
from .surrogate import (
    DecisionTree,
    LinearSurrogate,
    LogisticSurrogate,
    SurrogateBundle,
    SurrogatePolicy,
    export_coeffs_csv,
    export_tree_dot,
    fit_linear,
    fit_logistic,
    fit_tree,
    load_bundle,
    save_bundle,
)

__version__ = "0.1.0"
