"""Numerical checks of the regret analysis: distances, concentration,
information gain, grid-DP oracles and empirical Bayesian regret."""

from .concentration import CoverageResult, concentration_check
from .griddp import GridPolicy, GridSolution, GridSpec, evaluate_policy, grid_dp_oracle
from .information import VarianceSumResult, variance_sum_experiment
from .regret import LinearMdpPrior, RegretRecord, RegretTable, bayes_regret_experiment
from .tv import (
    SymmetricNoiseSpec,
    l1_gaussian_shared_cov,
    lemma1_bound_check,
    lemma1_suite,
    tv_agreement_suite,
    tv_gaussian_shared_cov,
)

__all__ = [
    "CoverageResult",
    "GridPolicy",
    "GridSolution",
    "GridSpec",
    "LinearMdpPrior",
    "RegretRecord",
    "RegretTable",
    "SymmetricNoiseSpec",
    "VarianceSumResult",
    "bayes_regret_experiment",
    "concentration_check",
    "evaluate_policy",
    "grid_dp_oracle",
    "l1_gaussian_shared_cov",
    "lemma1_bound_check",
    "lemma1_suite",
    "tv_agreement_suite",
    "tv_gaussian_shared_cov",
    "variance_sum_experiment",
]
