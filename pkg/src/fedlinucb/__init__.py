"""Asynchronous federated linear UCB: simulation library and CLI."""

from .core import (
    DecisionSet,
    DimensionMismatchError,
    HyperParams,
    NumericalDomainError,
    ProblemInstance,
    SpdMatrix,
    compute_beta,
    inv_norm,
    solve_estimate,
    spd_det,
    theoretical_comm_bound,
    theoretical_regret_bound,
    ucb_select,
)
from .environment import (
    ArmSpec,
    Schedule,
    gen_instance,
    gen_schedule,
    load_arms_file,
    load_schedule_file,
    sample_decision_set,
    sample_reward,
)
from .protocol import (
    AgentState,
    CommEvent,
    RoundRecord,
    ServerState,
    init_agent,
    init_server,
    local_update,
    payload_checksum,
    should_sync,
    step_agent,
    sync,
)
from .simulator import (
    CommBoundError,
    SimulationTrace,
    epoch_boundaries,
    run_episodic,
    run_fedlinucb,
    run_independent_oful,
)
from .analysis import (
    BiasDemoReport,
    BoundReport,
    CoverageReport,
    NoiseLedger,
    bias_demo,
    build_noise_ledger,
    confidence_coverage,
    conservation_check,
    covariance_comparison_check,
    elliptical_potential_check,
    instantaneous_regret,
    noise_decomposition_check,
    run_invariant_suite,
)

__version__ = "0.1.0"
