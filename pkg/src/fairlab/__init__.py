"""Individually fair online classification with a simulated fairness auditor."""

from .auditor import Auditor, make_mahalanobis, make_random_nonmetric, similarity_from_table
from .benchmark import (
    HindsightSolution,
    RegretReport,
    best_fair_lagrangian_policy,
    best_fair_policy,
    best_lagrangian_policy,
    compute_R,
    verify_bounds,
)
from .core import (
    AuditOutcome,
    Batch,
    HypothesisClass,
    Policy,
    RoundRecord,
    RunConfig,
    Universe,
    batch_err,
    default_gamma,
    default_penalty,
    default_q,
    lagrangian,
    loss,
    predict,
    predict_all,
    unfair_loss,
    violation,
)
from .environments import (
    GeneralizationReport,
    ScriptedEnv,
    StochasticEnv,
    average_policy,
    covering_check,
    empirical_beta,
    generalization_report,
)
from .hypotheses import (
    SeparatorSet,
    find_separator,
    lift_separator,
    make_table_class,
    make_threshold_class,
    verify_separator,
)
from .learners import (
    ConstantZeroLearner,
    ExpWeightsLearner,
    FtplLearner,
    InflatedBatch,
    RunTrace,
    default_omega,
    reduction_inflate,
    run_fair_online,
)

__version__ = "0.1.0"
