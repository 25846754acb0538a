"""Representation search for policy decomposition.

Finds linear state and input maps under which decompositions of an optimal
control problem lose little optimality, evaluates decompositions through
their LQR value error, searches over them, and checks the outcome with
tabular policy iteration on small nonlinear benchmarks.
"""

from .care import PlantSpec, QuadraticValue, mean_value_gap, solve_care, solve_lyapunov, value_of_linear_policy
from .decomposition import (
    Decomposition,
    DecompositionEvaluation,
    InputGroup,
    best_decomposition_exhaustive,
    enumerate_decompositions,
    evaluate_lqr,
    policy_domain,
)
from .ga import GAConfig, Genome, ga_search
from .representation import RepresentationMap, balanced_map, sparse_svd_map, transform_plant
from .stiefel import StiefelL1Config, regularized_orthogonal_basis
from .tabular import (
    DPConfig,
    NonlinearSystem,
    TabularPolicy,
    compose_and_rollout,
    linearize,
    normalized_value_error,
    policy_iteration,
)
from .zoo import SampleConfig, benchmark_systems, sample_strategy_1, sample_strategy_2

__version__ = "0.1.0"
