"""Harmonic measure and conductances on critical Galton-Watson trees.

Exact harmonic measures via electrical-network recursions on reduced trees,
size-biased spine constructions (Kesten and backward variants), continuum
reduced-tree conductances, and a population-dynamics solver for the
recursive distributional equations behind the universal exponent of the
harmonic mass at a typical boundary vertex.
"""

from .offspring import OffspringDistribution, SurvivalTable, make_distribution, survival_table
from .trees import (
    BudgetError,
    MSequence,
    PlaneTree,
    ReducedTree,
    SpinePrefix,
    extract_m_sequence,
    reduce_tree,
    sample_backward_prefix,
    sample_conditioned,
    sample_gw,
    sample_kesten_prefix,
    sample_reduced_conditioned,
    simulate_kn_fast,
)
from .electric import (
    ConductanceMap,
    HarmonicMeasure,
    SpineStatistics,
    backward_hit_prob,
    conductance_to_level,
    harmonic_measure,
    hitting_probabilities_linear_solve,
    sample_spine_statistics,
    spine_statistics,
    subtree_conductances,
)
from .continuum import (
    ContinuumSkeleton,
    SpineSkeleton,
    conductance_delta,
    conductance_delta_certified,
    conductance_delta_hat,
    conductance_delta_hat_certified,
    sample_delta,
    sample_delta_hat,
    sample_yule_count,
)
from .rde import (
    DensityFit,
    SamplePool,
    check_identity_g,
    estimate_lambda_log,
    estimate_lambda_moment,
    estimate_Q_infinity,
    fit_densities,
    init_pool,
    laplace_ode_check,
    sample_R,
    step_gamma,
    step_gamma_hat,
)
from .seeds import substream

__version__ = "0.1.0"
