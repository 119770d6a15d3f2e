"""Martingale optimal transport with state-dependent trading frictions."""

from .errors import (
    ButterflyArbitrageError,
    ConvexOrderError,
    FricmotError,
    InfeasibleError,
    MarginalMismatchError,
    NonconvergenceError,
    StructureError,
    UnboundedError,
    ValidationError,
)
from .frictions import (
    Coefficient,
    FrictionSpec,
    argmax_displacement,
    conjugate,
    friction_cost,
    growth_check,
    in_band,
    subgradient,
)
from .lp_oracle import (
    BiatomicRow,
    CouplingMatrix,
    DualCertificate,
    extract_biatomic,
    left_monotone_check,
    solve_lp,
    solve_onestep_friction,
)
from .measures import (
    DiscreteMeasure,
    PotentialPair,
    build_potential_pair,
    call_potential,
    cdf,
    convex_order,
    convex_order_report,
    from_call_prices,
    quantile,
    quantile_discretize,
    read_measure_csv,
    wasserstein1,
)
from .onestep import (
    BiatomicKernel,
    GeoOptions,
    GridFunction,
    MsmReport,
    as_grid_function,
    equal_slope_residual,
    kernel_to_coupling,
    msm_check,
    pushforward_distance,
    solve_geometric,
)
from .multistep import (
    ContinuationGrid,
    DppOptions,
    DppResult,
    MultiCoupling,
    PayoffSpec,
    StepSolve,
    backward_induction,
    compose_forward,
    path_marginal,
    path_space_lp,
    payoff_on_path,
    primal_value,
    subhedge_value,
)
from .duality import (
    GlobalDual,
    StepLeg,
    assemble_global_dual,
    dual_shift,
    pathwise_functional,
    superhedge_audit,
    superhedging_price,
)
from .analytics import (
    StepStats,
    coupling_stats,
    default_schedule,
    marginal_stability,
    row_endpoints,
    rows_to_csv,
    step_stats,
    sweep,
    vanishing_friction,
)

__version__ = "0.1.0"
