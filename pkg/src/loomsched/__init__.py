"""Hierarchical dynamic loop self-scheduling: chunk rules, a two-level work
queue, a threaded backend and a deterministic simulator."""

from .chunking import (
    TECHNIQUE_NAMES,
    Chunk,
    Kind,
    LoopExhausted,
    LoopSpec,
    SchedulerState,
    Technique,
    chunk_sequence_oracle,
    compute_chunk_size,
)
from .runtime import ClusterConfig, Mode, calibrate_claim_costs, run, run_barrier_mode
from .simulator import OverheadModel, SimOutcome, simulate, sweep
from .trace import ExecutionTrace, Metrics, compute_metrics, export
from .workqueue import (
    ClaimResult,
    GlobalQueue,
    LocalQueue,
    LockModel,
    Outcome,
    claim_global,
    claim_sub,
    lock_model_claim,
)

__version__ = "0.1.0"
