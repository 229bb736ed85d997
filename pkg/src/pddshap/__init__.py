"""Fast Shapley value approximation through a partial dependence decomposition surrogate."""

__version__ = "0.1.0"

from .core import (
    Attribution,
    BlackBoxModel,
    CountingModel,
    FeatureSubset,
    FunctionModel,
    InputError,
    ModelError,
    PddShapError,
    SampleMatrix,
    compose,
    empirical_mean,
    enumerate_subsets,
)
from .pdd import (
    PDDSurrogate,
    SurrogateLoadError,
    VarianceReport,
    component_variances,
    load_surrogate,
    partial_dependence,
    save_surrogate,
    surrogate_predict,
    train_pdd,
)
from .protocol import SubprocessModel, subprocess_model
from .regressors import LookupRegressor, RegressionTree
from .shapley import (
    GameValues,
    SubsetFunctionals,
    antithetic_sampling_shapley,
    exact_shapley,
    pdd_shapley,
    pdd_shapley_matrix,
    shapley_from_decomposition,
    shapley_from_game,
    subset_sampling_shapley,
)
from .bench import load_csv, r2_score, run_benchmark, sample_background, spearman_rho
