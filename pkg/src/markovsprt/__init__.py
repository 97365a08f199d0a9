"""Sequential one-sided hypothesis tests for finite-state Markov chains."""

from .chain import (
    Trajectory,
    chain_stream,
    derive_seed,
    is_ergodic,
    kl_divergence,
    markov_distance,
    max_likelihood_ratio,
    perturb_rows,
    random_chain,
    sample_trajectory,
    stationary_distribution,
    stationary_kl,
    toy_chains,
    validate,
)
from .estimators import (
    KT,
    AddGammaIid,
    AddGammaMarkov,
    JeffreysMixtureMarkov,
    MixtureMarkov,
    ModifiedJeffreysMixture,
    cumulative_regret,
    hindsight_best_loss,
    make_estimator,
    sample_jeffreys_prior,
)
from .sprt import (
    TestConfig,
    TestState,
    Verdict,
    composite_step,
    martingale_check,
    run_simple_sprt,
    run_to_decision,
    simple_sprt_step,
)
from .wald import solve_poisson, stationary_drift, theta_from_chains, verify_wald_identity

__version__ = "0.1.0"

__all__ = [
    "Trajectory",
    "chain_stream",
    "derive_seed",
    "is_ergodic",
    "kl_divergence",
    "markov_distance",
    "max_likelihood_ratio",
    "perturb_rows",
    "random_chain",
    "sample_trajectory",
    "stationary_distribution",
    "stationary_kl",
    "toy_chains",
    "validate",
    "KT",
    "AddGammaIid",
    "AddGammaMarkov",
    "JeffreysMixtureMarkov",
    "MixtureMarkov",
    "ModifiedJeffreysMixture",
    "cumulative_regret",
    "hindsight_best_loss",
    "make_estimator",
    "sample_jeffreys_prior",
    "TestConfig",
    "TestState",
    "Verdict",
    "composite_step",
    "martingale_check",
    "run_simple_sprt",
    "run_to_decision",
    "simple_sprt_step",
    "solve_poisson",
    "stationary_drift",
    "theta_from_chains",
    "verify_wald_identity",
]
