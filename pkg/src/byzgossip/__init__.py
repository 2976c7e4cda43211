"""Simulation toolkit for Byzantine-robust decentralized averaging and optimization."""
from .aggregate import (
    AggregatorSpec,
    ClipRule,
    NeighborView,
    adaptive_tau,
    clip,
    clipped_gossip_step,
    coordinate_median,
    geometric_median,
    gossip_step,
    mozi_select,
    oracle_tau,
    trimmed_mean,
)
from .attack import AttackSpec, OmniscientState, alie_z, forge_messages
from .config import ExperimentConfig, load_config, preset_names, preset_path
from .engine import (
    MetricsRecord,
    Network,
    WorkerState,
    apply_bucketing,
    compute_metrics,
    consensus_round,
    records_to_csv,
    run,
    run_consensus,
    run_training,
)
from .errors import *  # noqa: F401,F403
from .graph import (
    EffectiveMixing,
    MixingMatrix,
    MixingSpec,
    Topology,
    TopologySpec,
    build_mixing,
    build_topology,
    check_assumptions,
    effective_mixing,
    spectral_gap,
)
from .messages import RoundMessages
from .objective import ObjectiveSpec, build_objectives
from .sweep import SweepSpec, run_sweep

__version__ = "0.1.0"
