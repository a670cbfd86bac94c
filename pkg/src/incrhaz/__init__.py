"""Estimation of mean outcomes under multiplicative shifts to the hazard of
time-to-treatment initiation: weighting and augmented estimators,
cross-fitting, uniform confidence bands, and a simulation bench.
"""

from .core import (
    ConstantShift,
    CovariateBox,
    Dataset,
    FamilyShift,
    HazardShift,
    ObservedUnit,
    OutcomeModel,
    StepCumHazard,
    TabulatedShift,
    ThetaGrid,
    cum_hazard,
    evaluate_shift,
    load_shifts,
    parse_shift,
    predict_matrix,
    read_csv,
    write_csv,
)
from .eif import (
    eif_value,
    eif_value_constant,
    eif_values,
    inner_g,
    ipw_weight,
    ipw_weights,
    phi_matrix,
    survival_under_shift,
)
from .errors import (
    ConfigError,
    DomainError,
    FitError,
    IncrhazError,
    NumericError,
    SchemaError,
)
from .estimators import (
    EstimateResult,
    crossfit_nuisances,
    crossfit_phi,
    estimate_aipw,
    estimate_cf,
    estimate_ipw,
    normal_quantile,
    wald_ci,
)
from .inference import (
    BandResult,
    bayesian_bootstrap_se,
    global_null_pvalue,
    multiplier_critical_value,
    uniform_band,
)
from .nuisance import (
    CoxFit,
    FoldPlan,
    KernelOutcome,
    LearnerConfig,
    LinearOutcome,
    LogisticOutcome,
    fit_cox,
    fit_cox_flex,
    fit_hazard,
    fit_nelson_aalen,
    fit_outcome,
    make_folds,
)

__version__ = "0.1.0"
