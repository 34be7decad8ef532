"""Capacity region of a multi-antenna broadcast channel delivering data and power.

A transmitter with N antennas serves information-decoding receivers (rates
via dirty-paper coding) while guaranteeing minimum harvested power at
energy-harvesting receivers, all under one sum-power budget. The optimal
weighted sum rate is found by minimizing a dual upper bound with the
ellipsoid method, solving the inner problem through broadcast/multiple-
access duality, and restoring primal feasibility with a small semidefinite
program when needed. Two cheaper separate-design baselines are included.
"""

from .algorithms import (
    ALGORITHMS,
    OracleResult,
    RegionPoint,
    SolveReport,
    brute_force_oracle,
    capacity_region,
    classify_solution,
    solve_ehsied,
    solve_idsied,
    solve_optimal,
)
from .dualmac import (
    ReducedBcSolution,
    ReducedProblem,
    mac_to_bc,
    mmse_receivers,
    reduce_problem,
    solve_mac_wsr,
    solve_reduced_bc,
)
from .ellipsoid import (
    Cut,
    DualPoint,
    DualResult,
    EllipsoidState,
    ellipsoid_update,
    evaluate_dual,
    make_context,
    minimize_g,
    oracle_cut,
)
from .errors import (
    ConstructionError,
    ContractViolationError,
    InfeasibleError,
    InternalInconsistencyError,
    NotPsdError,
    RankToleranceError,
    SwiptError,
)
from .linalg import (
    RangeNullSplit,
    complex_to_real_embedding,
    hermitian_eig,
    is_psd,
    range_null_split,
)
from .model import (
    CovarianceSolution,
    GeneratorConfig,
    Scenario,
    VerificationReport,
    build_correlated_scenario,
    channel_correlation,
    correlation_matrix,
    dpc_rates,
    generate_channels,
    generate_scenario,
    harvested_powers,
    verify_solution,
)
from .sdp import (
    SdpConstraint,
    SdpProblem,
    SdpSolution,
    emax_problem,
    expansion_problem,
    feasibility_margin,
    feasibility_problem,
    min_power_energy_problem,
    separate_energy_problem,
    solve_emax,
    solve_expansion,
    solve_sdp,
)

__version__ = "0.1.0"
