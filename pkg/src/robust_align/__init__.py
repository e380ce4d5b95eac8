"""Oracle-robust online preference alignment on finite prompt/response spaces.

Exact evaluation of the alignment loss and robustness penalty, the projected
stochastic composite algorithm, Moreau-envelope stationarity certification,
and an executable battery of the package's theoretical guarantees.
"""

from .envelope import (
    CertificateReport,
    ProxResult,
    ball_subdiff_residual,
    envelope_grad_along_trace,
    envelope_value_grad,
    prox_point_generic,
    prox_solve,
    stationarity_certificate,
)
from .environment import (
    DEFAULT_ENUMERATION_CAP,
    ComparisonTriple,
    Environment,
    delta_psi,
    enumerate_triples,
    environment_from_json,
    random_environment,
)
from .errors import (
    ConfigInvalid,
    EnumerationCapExceeded,
    InadmissibleRadius,
    IntervalOutOfRange,
    InvalidEnvelopeParam,
    MaxInnerItersExceeded,
    NonFiniteIterate,
    RobustAlignError,
)
from .objective import (
    ConstantsBundle,
    ExactEvaluator,
    Hyperparams,
    constants_bundle,
    penalty_subgrad_exact,
    robust_objective_closed_form,
    robust_objective_worstcase,
    robust_penalty_exact,
    robust_penalty_smoothed,
    sail_grad_exact,
    sail_loss_exact,
)
from .optimizer import (
    MiniBatch,
    RunTrace,
    composite_direction,
    corollary_bound,
    corollary_stepsize,
    rate_bound,
    rscgd_run,
    sample_batch,
    stoch_grad_sail,
    stoch_subgrad_penalty,
)
from .oracle import (
    TrueOracle,
    UncertaintyConfig,
    compute_margin,
    oracle_from_json,
    pointwise_sup_value,
    random_oracle,
    sample_label,
    true_prob,
    worst_case_prob,
)
from .policy import (
    PolicyParams,
    pairwise_logit,
    params_from_json,
    policy_score,
    project_feasible,
    sample_triples,
    sampling_distribution,
    score_table,
    triple_score,
)
from .verification import CheckReport, run_battery

__version__ = "0.1.0"

__all__ = [
    "CertificateReport", "ProxResult", "ball_subdiff_residual",
    "envelope_grad_along_trace", "envelope_value_grad", "prox_point_generic",
    "prox_solve", "stationarity_certificate",
    "DEFAULT_ENUMERATION_CAP", "ComparisonTriple", "Environment", "delta_psi",
    "enumerate_triples", "environment_from_json", "random_environment",
    "ConfigInvalid", "EnumerationCapExceeded", "InadmissibleRadius",
    "IntervalOutOfRange", "InvalidEnvelopeParam", "MaxInnerItersExceeded",
    "NonFiniteIterate", "RobustAlignError",
    "ConstantsBundle", "ExactEvaluator", "Hyperparams", "constants_bundle",
    "penalty_subgrad_exact", "robust_objective_closed_form",
    "robust_objective_worstcase", "robust_penalty_exact",
    "robust_penalty_smoothed", "sail_grad_exact", "sail_loss_exact",
    "MiniBatch", "RunTrace", "composite_direction", "corollary_bound",
    "corollary_stepsize", "rate_bound", "rscgd_run", "sample_batch",
    "stoch_grad_sail", "stoch_subgrad_penalty",
    "TrueOracle", "UncertaintyConfig", "compute_margin", "oracle_from_json",
    "pointwise_sup_value", "random_oracle", "sample_label", "true_prob",
    "worst_case_prob",
    "PolicyParams", "pairwise_logit", "params_from_json", "policy_score",
    "project_feasible", "sample_triples", "sampling_distribution",
    "score_table", "triple_score",
    "CheckReport", "run_battery",
]
