"""Matching optimization toolkit: compatibility scoring, QUBO models, annealing, and exact oracles."""

from .instance import (
    CompatibilityMatrix,
    Matching,
    MatchingInstance,
    ParticipantProfile,
    QuestionnaireItem,
    QuestionnaireSchema,
    SolvabilityReport,
    balanced_capacities,
    check_solvability,
    compatibility_matrix,
    feasible_pairs,
    item_score,
    matching_score,
)
from .qubo import (
    CandidateTable,
    QuboModel,
    build_approx_qubo,
    build_naive_qubo,
    decode,
    energy,
    top2_candidates,
    tune_penalty,
)
from .solvers import (
    AnnealSchedule,
    SampleSet,
    brute_force,
    enumerate_optima,
    exact_assignment,
    sa_sample,
    steepest_descent,
)
from .analysis import (
    DiversityConfig,
    DiversityResult,
    QualityReport,
    diversity,
    energy_histogram,
    feasibility_audit,
    quality_report,
    relative_error,
)
from .bench import (
    ExperimentConfig,
    gen_random_instance,
    gen_field_replica,
    run_diversity_experiment,
    run_formulation_comparison,
    run_scaling_experiment,
    run_matching_workflow,
)

__all__ = [name for name in dir() if not name.startswith("_")]
