"""Instrument-validity testing and treatment-effect estimation for linear IV
models with high-dimensional covariates and/or instruments, robust to
heteroskedastic errors."""

__version__ = "0.1.0"

from .clime import PrecisionEstimate, clime, clime_column, default_mu
from .data import (
    ColumnSpec,
    Dataset,
    GramMatrix,
    WeightDiag,
    compute_weight_matrix,
    gram,
    load_dataset,
    standardize,
)
from .errors import (
    ConfigError,
    DegenerateDataError,
    HdivError,
    ParseError,
    SolverError,
    WeakInstrumentError,
)
from .estimator import (
    BetaEstimate,
    ProjectionDirections,
    ReducedFormFits,
    debiased_inner,
    debiased_quadratic,
    estimate_beta,
    fit_reduced_forms,
    projection_directions,
)
from .lasso import CvResult, LassoFit, LassoProblem, cv_select, lambda_path, solve_lasso
from .overid import (
    CovarianceVA,
    DebiasedPi,
    OveridConfig,
    PiFit,
    TestReport,
    covariance_va,
    critical_value,
    debias_pi,
    debiased_qa,
    fit_pi,
    m_statistic,
    pm_decision,
    prepare_pipeline,
    q_statistic,
    relatedness,
    run_overid_test,
)
from .simulation import (
    BetaTable,
    PowerCurve,
    SimConfig,
    SizeTable,
    generate_dgp,
    run_beta_table,
    run_power_curve,
    run_size_experiment,
)

__all__ = [name for name in dir() if not name.startswith("_")]
