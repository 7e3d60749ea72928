"""Risk-sensitive inverse reinforcement learning with active disturbance
sampling: recover an expert's risk envelope from demonstrations, one
halfspace cut per observed decision, and steer the disturbances shown to
the expert toward the cuts that shrink the envelope fastest."""

__version__ = "0.1.0"

from .errors import (
    AllDegenerate,
    DegenerateDirection,
    DegenerateHull,
    EmptyEnvelope,
    GridTooLarge,
    IllConditioned,
    Infeasible,
    InfeasibleKkt,
    NotConverged,
    RsirlError,
    TooFewSequences,
    TooManyConstraints,
    Unbounded,
)
from .geometry import (
    Envelope,
    HalfSpace,
    RefinementDirection,
    clip_envelope,
    cosine_similarity,
    envelope_area,
    envelope_from_json,
    envelope_to_json,
    enumerate_vertices,
    project_to_simplex_tangent,
    tangent_basis,
)
from .solvers import (
    LinearProgram,
    LpSolution,
    MinimaxProblem,
    MinimaxSolution,
    SolverOptions,
    solve_lp,
    solve_minimax,
)
from .expert import (
    Demonstration,
    ExpertSpec,
    LinearQuadraticSystem,
    cost_quadratics,
    cost_vector,
    expert_act,
    generate_envelope,
    generate_system,
    minimax_problem,
    step_dynamics,
    system_from_json,
    system_to_json,
)
from .inference import (
    KktCertificate,
    KktHalfspace,
    LearnerState,
    StepRecord,
    kkt_halfspace,
    mean_squared_error,
    predict_action,
    process_demonstration,
    run_episode,
    run_passive,
    saturation_pattern,
)
from .active import (
    PreferenceVector,
    RefinementSample,
    SamplingPolicy,
    boltzmann_sample,
    disturbance_preferences,
    predict_refinement_directions,
    run_active,
)
from .multistep import (
    CarModel,
    FeatureWeights,
    ReactLibrary,
    StageConfig,
    StageDemonstration,
    StagePlan,
    StageRecord,
    car_features,
    car_step,
    cluster_react_sequences,
    draw_stage_start,
    infer_unrealized_reacts,
    multistep_preferences,
    plan_stage,
    recover_cost_weights,
    run_stages,
    stage_consistency_error,
    stage_kkt_halfspace,
    stage_tail_costs,
)
from .harness import (
    BenchmarkConfig,
    BenchmarkReport,
    ModeCurve,
    SetupStats,
    build_test_set,
    mse,
    run_benchmark,
)

__all__ = [
    "__version__",
    "RsirlError",
    "DegenerateDirection",
    "EmptyEnvelope",
    "TooManyConstraints",
    "DegenerateHull",
    "Infeasible",
    "Unbounded",
    "NotConverged",
    "InfeasibleKkt",
    "AllDegenerate",
    "GridTooLarge",
    "IllConditioned",
    "TooFewSequences",
    "Envelope",
    "HalfSpace",
    "RefinementDirection",
    "tangent_basis",
    "project_to_simplex_tangent",
    "cosine_similarity",
    "enumerate_vertices",
    "clip_envelope",
    "envelope_area",
    "envelope_to_json",
    "envelope_from_json",
    "LinearProgram",
    "LpSolution",
    "MinimaxProblem",
    "MinimaxSolution",
    "SolverOptions",
    "solve_lp",
    "solve_minimax",
    "LinearQuadraticSystem",
    "ExpertSpec",
    "Demonstration",
    "generate_system",
    "generate_envelope",
    "cost_quadratics",
    "cost_vector",
    "minimax_problem",
    "expert_act",
    "step_dynamics",
    "system_to_json",
    "system_from_json",
    "KktCertificate",
    "KktHalfspace",
    "LearnerState",
    "StepRecord",
    "saturation_pattern",
    "kkt_halfspace",
    "process_demonstration",
    "predict_action",
    "mean_squared_error",
    "run_episode",
    "run_passive",
    "SamplingPolicy",
    "RefinementSample",
    "PreferenceVector",
    "predict_refinement_directions",
    "disturbance_preferences",
    "boltzmann_sample",
    "run_active",
    "CarModel",
    "StageConfig",
    "FeatureWeights",
    "StageDemonstration",
    "StagePlan",
    "StageRecord",
    "ReactLibrary",
    "car_step",
    "car_features",
    "stage_consistency_error",
    "plan_stage",
    "stage_tail_costs",
    "recover_cost_weights",
    "infer_unrealized_reacts",
    "stage_kkt_halfspace",
    "cluster_react_sequences",
    "multistep_preferences",
    "draw_stage_start",
    "run_stages",
    "BenchmarkConfig",
    "BenchmarkReport",
    "ModeCurve",
    "SetupStats",
    "build_test_set",
    "mse",
    "run_benchmark",
]
