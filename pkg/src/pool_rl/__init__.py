"""Privacy-preserving offline RL for continuous MDPs with one-sided feedback."""

from .mdp import (
    Boundary,
    BoundarySide,
    CensoredValueError,
    Dataset,
    DimensionMismatchError,
    Environment,
    MonteCarloResult,
    Policy,
    TransitionRecord,
    compare_to_boundary,
    monte_carlo_value,
)
from .privacy import (
    PrivacyAccountant,
    PrivacyBudget,
    ProjectedCounts,
    compose_budgets,
    consistency_project,
    count_noise_scale,
    gaussian_perturb,
    uniform_noise_bound,
    zcdp_to_dp,
)
from .discretization import (
    AnchorScheme,
    EmptyZoneError,
    SamplingExhaustedError,
    ZoneBasis,
    ZoneScheme,
    build_basis,
    gram_schmidt,
    nearest_anchor,
    project_coefficients,
    zone_of,
)
from .pool import (
    AnchorValueTables,
    PessimismConfig,
    PoolPolicy,
    PrivateCountTables,
    PrivateKernel,
    TrainResult,
    backward_induction,
    evaluate_q,
    greedy_action,
    pessimism_penalty,
    private_kernel,
    tabulate_private_counts,
)
from .baselines import (
    input_perturbation_train,
    nonprivate_train,
    output_perturbation_train,
)
from .inventory import (
    BaseStockPolicy,
    DeterministicDemand,
    EmpiricalDemand,
    InventoryParams,
    LostSalesEnv,
    BacklogEnv,
    UniformDemand,
    UniformOrderUpTo,
    generate_dataset,
    load_demand_csv,
    policy_cost,
    saa_benchmark,
    step_backlog,
    step_lost_sales,
)
from .harness import (
    ExperimentConfig,
    ResultRow,
    load_config,
    relative_gap,
    run_experiment,
    summarize,
)

__version__ = "0.1.0"
