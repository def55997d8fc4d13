"""Optimal testing-and-treatment regimes from discrete longitudinal data.

Structural nested mean models give the optimal regime and its value;
projecting estimating functions onto the functions that have mean zero
when testing has no direct effect on the outcome makes those estimates
more efficient.
"""

__version__ = "0.1.0"

from .basis import BasisSpec, build_basis_columns, fit_outcome_basis
from .errors import (
    DegenerateBasisError,
    EmptyStratumError,
    FoldTooSmallError,
    HistoryNotRecoverableError,
    InvalidDataError,
    OptRegimeError,
    SingularSystemError,
    UnknownStratumError,
    UnreachableStratumError,
    UnsupportedQueryError,
    ZeroWeightError,
)
from .ipw import ValueEstimate, estimate_value, ipw_crossfit, v_ipw, v_nde_ipw
from .nde_projection import (
    ProjectionFit,
    TbMatrix,
    adjust_estimating_function,
    adjusted_g_estimate,
    adjusted_voi,
    build_omega,
    construct_T,
    project,
)
from .nuisance import (
    EmpiricalNuisances,
    crossfit_estimate,
    fit_conditional,
    make_crossfit,
    predict,
    treatment_weight,
)
from .simulation import (
    DgpSpec,
    McReport,
    OracleNuisances,
    analytic_oracle,
    bootstrap_voi_test,
    dgp3_variance_ratio,
    generate,
    run_monte_carlo,
    sweep,
)
from .snmm import (
    PsiVector,
    StageBlip,
    compute_delta,
    eval_blip,
    g_estimate,
    optimal_action,
    optimal_regime,
    snmm_value,
    voi,
)
from .trajectory import (
    MISSING,
    CensorKind,
    CensorStatus,
    Dataset,
    Regime,
    Trajectory,
    Violation,
    apply_regime,
    cost_adjusted_utility,
)
