"""Deterministic discrete-time simulator of an N-processor global-workspace
machine: a single-chunk short-term memory filled each tick by a probabilistic
up-tree tournament, broadcast to every processor, with sleeping-experts
weighting and link formation on top."""

from .competition import (
    MatchState,
    TournamentTrace,
    UpTree,
    broadcast,
    build,
    oracle_win_probabilities,
    play_match,
    run_tournament,
    tree_walk_win_probabilities,
)
from .core import (
    BroadcastRecord,
    Chunk,
    Gist,
    GistKind,
    ValidationError,
    new_chunk,
    null_chunk,
    validate_gist,
)
from .processors import (
    LinkTable,
    Processor,
    SleepingExpertsState,
    WorldModel,
    make_pool,
    motw_correct,
    motw_predict,
    record_usefulness,
    se_predict,
    se_update,
    send_direct,
    weight_for_chunk,
)
from .runtime import (
    Engine,
    EngineAbort,
    EngineConfig,
    RunSummary,
    TraceWriter,
    explain,
    load_trace,
    rng_stream,
    run_scenario,
    stats,
    verify_proportionality,
)
from .scenarios import (
    CheckResult,
    Derivation,
    Provenance,
    ScenarioConfig,
    SourceAssertion,
    Stance,
    Verdict,
    WorldState,
    aggregate_verdict,
    check_derivation,
    credibility_score,
    load_scenario,
    step_world,
)

__version__ = "0.1.0"
