"""Bipartite longitudinal influence network (BLIN) models for matrix and tensor time series."""

from .cli import IngestReport, LongRecord, export_long, ingest
from .core import (
    DESIGN_BUDGET,
    CompanionSystem,
    InfluencePair,
    LagSpec,
    TensorSeries,
    blin_mean,
    build_design,
    canonicalize,
    companion,
    is_stationary,
    lag_sum,
    lag_sums,
    pack_pair,
    unpack_pair,
    vec_slices,
)
from .estimators import (
    EstimatorConfig,
    InfluenceFit,
    RankReport,
    SparsePath,
    design_rank_check,
    default_lambda_grid,
    fit_bilinear,
    fit_blin_bcd,
    fit_blin_exact,
    fit_blin_reduced_rank,
    fit_blin_sparse,
    fitted_values,
    model_mean,
    predict_one_step,
    sparse_path_from_grams,
)
from .evaluate import (
    CvReport,
    LagCell,
    MethodCv,
    ScanPoint,
    StudyCell,
    StudyResult,
    StudySlope,
    aic_select,
    aic_value,
    convergence_study,
    cv_partition,
    kfold_cv,
    likelihood_line_scan,
    r_squared,
    regression_fit,
    study_pair,
)
from .models import BLINRegressor
from .multiway import (
    MultiFit,
    difference,
    fit_multiblin,
    fold,
    mode_lag_depths,
    mode_matricize,
    multiway_design,
    multiway_fitted_values,
    multiway_mean,
    multiway_sparse_path,
)
from .simulate import (
    GENERATORS,
    SimulationSpec,
    calibrate_snr,
    generate,
    generate_iid_regressor,
    large_sample_r2,
    make_influence_pair,
    pseudo_true_offdiag_constant,
    stationary_covariance,
    transition_matrix,
)

__all__ = [
    "BLINRegressor",
    "CompanionSystem",
    "CvReport",
    "DESIGN_BUDGET",
    "EstimatorConfig",
    "GENERATORS",
    "InfluenceFit",
    "InfluencePair",
    "IngestReport",
    "LagCell",
    "LagSpec",
    "LongRecord",
    "MethodCv",
    "MultiFit",
    "RankReport",
    "ScanPoint",
    "SimulationSpec",
    "SparsePath",
    "StudyCell",
    "StudyResult",
    "StudySlope",
    "TensorSeries",
    "aic_select",
    "aic_value",
    "blin_mean",
    "build_design",
    "calibrate_snr",
    "canonicalize",
    "companion",
    "convergence_study",
    "cv_partition",
    "default_lambda_grid",
    "design_rank_check",
    "difference",
    "export_long",
    "fit_bilinear",
    "fit_blin_bcd",
    "fit_blin_exact",
    "fit_blin_reduced_rank",
    "fit_blin_sparse",
    "fit_multiblin",
    "fitted_values",
    "fold",
    "generate",
    "generate_iid_regressor",
    "ingest",
    "is_stationary",
    "kfold_cv",
    "lag_sum",
    "lag_sums",
    "large_sample_r2",
    "likelihood_line_scan",
    "make_influence_pair",
    "mode_lag_depths",
    "mode_matricize",
    "model_mean",
    "multiway_design",
    "multiway_fitted_values",
    "multiway_mean",
    "multiway_sparse_path",
    "pack_pair",
    "predict_one_step",
    "pseudo_true_offdiag_constant",
    "r_squared",
    "regression_fit",
    "sparse_path_from_grams",
    "stationary_covariance",
    "study_pair",
    "transition_matrix",
    "unpack_pair",
    "vec_slices",
]

__version__ = "0.1.0"
