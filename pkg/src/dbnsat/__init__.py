"""Deep-belief-network training with a QUBO/weighted-MAX-SAT ground-state sampler.

The gradient of the RBM log-likelihood needs a model expectation that is
exponentially hard to compute.  This package approximates it three ways:
contrastive divergence (CD-k), exact enumeration (small nets only), and an
optimization route that casts the RBM energy as a QUBO, converts it to
weighted MAX-SAT, and minimizes it with a restart-based stochastic local
search.  On top sit greedy layer-wise DBN pretraining, a softmax
classification head trained by back-propagation with momentum, and a
batch-norm + ReLU no-pretraining baseline.
"""

from dbnsat.rbm import (
    RbmParams,
    ExpectationStats,
    ExactModelStats,
    MomentumState,
    sigmoid,
    energy,
    hidden_conditional,
    visible_conditional,
    sample_bernoulli,
    data_expectation,
    cd_estimate,
    exact_model_expectation,
    exact_log_likelihood,
    apply_update,
)
from dbnsat.qubo import QuboProblem, rbm_to_qubo, qubo_energy, split_assignment
from dbnsat.maxsat import (
    WeightedClause,
    WcnfFormula,
    SolverConfig,
    SolverTrace,
    SolveResult,
    qubo_to_wcnf,
    unsat_weight,
    solve_sls,
    solve_exact_bipartite,
    model_stats_from_solve,
)

__all__ = [
    "RbmParams",
    "ExpectationStats",
    "ExactModelStats",
    "MomentumState",
    "sigmoid",
    "energy",
    "hidden_conditional",
    "visible_conditional",
    "sample_bernoulli",
    "data_expectation",
    "cd_estimate",
    "exact_model_expectation",
    "exact_log_likelihood",
    "apply_update",
    "QuboProblem",
    "rbm_to_qubo",
    "qubo_energy",
    "split_assignment",
    "WeightedClause",
    "WcnfFormula",
    "SolverConfig",
    "SolverTrace",
    "SolveResult",
    "qubo_to_wcnf",
    "unsat_weight",
    "solve_sls",
    "solve_exact_bipartite",
    "model_stats_from_solve",
]
