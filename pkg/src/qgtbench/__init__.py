"""Adaptive quantitative group testing workbench.

Recover a k-sparse binary vector over n items from pooled count queries:
a binary-splitting driver reduces the problem to small integer recoveries,
greedy experts (answer-variance and answer-entropy maximizers) solve them
near the information floor, and the surrounding tooling exports expert
trajectories, benches strategies against reference bounds, and bridges to
external agents over a line protocol.
"""

from .core import (
    AlreadyIdentifiedError,
    BoundsVector,
    BoxTooLargeError,
    CorruptedStateError,
    DimensionMismatchError,
    HiddenVector,
    IncidenceVector,
    InconsistentHistoryError,
    InfeasibleInstanceError,
    QgtError,
    QueryRecord,
    ReducedInstance,
    inner_answer,
    random_incidence,
    sample_hidden_split,
)
from .oracle import (
    DEFAULT_BOX_CAP,
    FeasibilityOracle,
    FeasibleSet,
    answer_histogram,
    centered_covariance,
    enumerate_feasible,
    full_box,
    gram_matrix,
    is_identified,
)
from .strategies import (
    CovarianceStrategy,
    EntropyStrategy,
    RandomStrategy,
    Strategy,
    Trajectory,
    TrajectoryStep,
    covariance_query,
    entropy_query,
    make_strategy,
    random_query,
    run_episode,
)
from .splitting import (
    Group,
    GroupState,
    QueryLog,
    SolveConfig,
    StageReport,
    initial_partition,
    measure_groups,
    run_stage,
    solve_qgt,
)
from .dataset import (
    DatasetFormatError,
    DatasetRecord,
    DatasetSummary,
    compute_rtg,
    generate_dataset,
    read_jsonl,
    replay_record,
    sample_standalone_bounds,
    write_jsonl,
)
from .bridge import AgentSession, ExternalStrategy, ProtocolError, decode_message, encode_message
from .bench import (
    BenchReport,
    baseline_per_stage,
    bench_end_to_end,
    bench_per_stage,
    bound_adaptive,
    bound_m0,
    per_stage_lower_bound,
)

__version__ = "0.1.0"
