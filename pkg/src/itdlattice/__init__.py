"""Scenario lattices for Markov systems built by minimizing the integrated
transportation distance between kernels, with backward risk evaluation."""

from .kernel_metric import (
    DiscreteKernel,
    compose_marginal,
    hierarchy_triple,
    itd,
    join_marginal,
    sup_distance,
)
from .lattice import (
    CandidateSet,
    Lattice,
    LatticeConfig,
    LatticeStage,
    ParticleCloud,
    SelectionProblem,
    SelectionResult,
    advance_stage,
    build_lattice,
    implied_kernel,
    nearest_assignment,
    sampling_error_report,
    select_exact_mip,
    select_greedy,
    select_lp_round,
    stage_delta,
)
from .markets import BasketPut, GbmModel, binomial_node_count, binomial_price_american
from .risk import (
    AVaR,
    CostSpec,
    Expectation,
    LipschitzLedger,
    MeanSemideviation,
    Spectral,
    Stopping,
    backward_evaluate,
    marginal_error_bound,
    value_error_bound,
)
from .transport import DiscreteMeasure, GroundCost, TransportPlan, wasserstein_exact, wasserstein_sinkhorn

__version__ = "0.1.0"

__all__ = [
    "AVaR",
    "BasketPut",
    "CandidateSet",
    "CostSpec",
    "DiscreteKernel",
    "DiscreteMeasure",
    "Expectation",
    "GbmModel",
    "GroundCost",
    "Lattice",
    "LatticeConfig",
    "LatticeStage",
    "LipschitzLedger",
    "MeanSemideviation",
    "ParticleCloud",
    "SelectionProblem",
    "SelectionResult",
    "Spectral",
    "Stopping",
    "TransportPlan",
    "advance_stage",
    "backward_evaluate",
    "binomial_node_count",
    "binomial_price_american",
    "build_lattice",
    "compose_marginal",
    "hierarchy_triple",
    "implied_kernel",
    "itd",
    "join_marginal",
    "marginal_error_bound",
    "nearest_assignment",
    "sampling_error_report",
    "select_exact_mip",
    "select_greedy",
    "select_lp_round",
    "stage_delta",
    "sup_distance",
    "value_error_bound",
    "wasserstein_exact",
    "wasserstein_sinkhorn",
]
