"""Coalescing random walks on finite Markov chains, with exact oracles.

Layout:

- :mod:`coalwalk.chain` — rate generators, uniformization, mixing times.
- :mod:`coalwalk.graphs` — graph families and their walk generators.
- :mod:`coalwalk.hitting` — exact hitting/meeting-time oracles and envelopes.
- :mod:`coalwalk.coalescing` — event-driven simulation and the voter model.
- :mod:`coalwalk.meanfield` — the hypoexponential reference law.
- :mod:`coalwalk.wasserstein` — L1 distances between samples and references.
- :mod:`coalwalk.harness` — configuration-driven experiments (also the CLI).
"""

from .chain import (
    ChainDiagnostics,
    MixingProfile,
    RateGenerator,
    UniformizedKernel,
    chain_diagnostics,
    check_distribution,
    mixing_time,
    product_chain,
    stationary_distribution,
    total_variation,
    transition_distribution,
    tv_from_stationarity,
)
from .coalescing import (
    CoalescenceRecord,
    ReplicationResult,
    RunConfig,
    first_meeting,
    replica_rng,
    sample_full_coalescence,
    sample_voter,
    simulate_coalescing,
    simulate_voter_dual,
    simulate_voter_forward,
)
from .errors import BudgetExceededError, ConfigError, InvalidChainError, NumericalError
from .graphs import Graph, GraphSpec, build_graph, degree_ratio, walk_generator
from .hitting import (
    CorrelationReport,
    EnvelopeFitReport,
    ExponentialEnvelope,
    QuantileResult,
    SurvivalCurve,
    TargetSet,
    correlation_report_for_targets,
    correlation_xi,
    envelope_fit,
    envelope_w1_bound,
    expected_hitting_times,
    mean_hitting_time,
    meeting_diagonal,
    meeting_mean,
    pair_diagonal,
    pair_meeting_bound_check,
    quantile,
    survival,
)
from .meanfield import LeadingRunLaw, MeanFieldReference, voter_reference_sample
from .wasserstein import (
    EmpiricalSample,
    ExponentialRef,
    TabulatedRefLaw,
    mean_and_se,
    w1_permutation_test,
    w1_sample_vs_ref,
    w1_samples,
)

__version__ = "0.1.0"
