"""Engine: central clock, per-tick phase ordering, keyed random streams,
JSONL trace emission, and the statistics / explanation queries over traces.

Every tick executes these phases in this exact order:

  1. deliver the previous tick's broadcast and direct sends
  2. step the world and deliver stimuli to matching input domains
  3. every processor proposes (silent processors submit null chunks)
  4. the up-tree tournament runs over all N chunks
  5. the broadcast record for the winner is logged (delivered next tick)
  6. direct sends and world actions are collected for the next tick

Trace events at the same tick are ordered by that phase order, then by
ascending node / address index.  The whole trace is a pure function of the
scenario bytes and the seed; the parallelism degree never changes it.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Optional, Sequence, TextIO

from .competition import (
    broadcast,
    build,
    oracle_win_probabilities,
    run_tournament,
)
from .core import (
    BroadcastRecord,
    ProcessorAddress,
    Tick,
    ValidationError,
    new_chunk,
    null_chunk,
    validate_gist,
)
from .processors import DirectSend, NoLinkError, Processor, WorldAction, send_direct
from .scenarios import ScenarioConfig, build_processors, make_world, step_world

MAX_PROCESSORS = 2 ** 17  # desk-scale cap

TRACE_VERSION = 1

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class RandomStream:
    """Counter-based uniform stream; a pure function of its key."""

    __slots__ = ("_counter",)

    def __init__(self, key: int):
        self._counter = key

    def uniform(self) -> float:
        """Next uniform draw in [0, 1), using the top 53 bits of the hash."""
        self._counter = (self._counter + _GOLDEN) & _MASK64
        return (_mix64(self._counter) >> 11) * 2.0 ** -53

    def uniforms(self, n: int) -> list[float]:
        return [self.uniform() for _ in range(n)]


def rng_stream(seed: int, tick: Tick, node_index: int) -> RandomStream:
    """Stream keyed by (seed, tick, node); distinct triples are independent.

    Hash-based construction, so draws depend on nothing but the triple and
    are reproducible at any execution order or parallelism degree.
    """
    key = _mix64(seed & _MASK64)
    key = _mix64(key ^ ((tick & _MASK64) * 0xBF58476D1CE4E5B9 & _MASK64))
    key = _mix64(key ^ ((node_index & _MASK64) * 0x94D049BB133111EB & _MASK64))
    return RandomStream(key)


# ---------------------------------------------------------------------------
# Trace
# ---------------------------------------------------------------------------

class TraceError(ValueError):
    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class TraceWriter:
    """Append-only JSONL sink; one object per line, header first."""

    def __init__(self, stream: TextIO):
        self.stream = stream

    def header(self, seed: int, n: int, scenario_hash: str) -> None:
        self._write({"version": TRACE_VERSION, "seed": seed, "n": n,
                     "scenario_hash": scenario_hash})

    def event(self, obj: dict[str, Any]) -> None:
        self._write(obj)

    def _write(self, obj: dict[str, Any]) -> None:
        self.stream.write(json.dumps(obj, separators=(",", ":")))
        self.stream.write("\n")


def parse_trace_lines(lines: Iterable[str]) -> tuple[Optional[dict], list[dict]]:
    """Split raw trace lines into (header, events).

    Raises TraceError with the offending 1-based line number on bad JSON.
    """
    header = None
    events = []
    for i, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceError(i, f"malformed trace line: {exc}") from exc
        if not isinstance(obj, dict):
            raise TraceError(i, "trace line is not an object")
        if i == 1 and "version" in obj and "event" not in obj:
            header = obj
        else:
            events.append(obj)
    return header, events


def load_trace(path: str | Path) -> tuple[Optional[dict], list[dict]]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_trace_lines(fh)


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------

class EngineAbort(RuntimeError):
    """A processor misbehaved; the run stops with the offender recorded."""

    def __init__(self, address: ProcessorAddress, tick: Tick, cause: str):
        super().__init__(f"processor {address} aborted the run at tick {tick}: {cause}")
        self.address = address
        self.tick = tick
        self.cause = cause


@dataclass(frozen=True)
class EngineConfig:
    seed: int
    n_processors: int
    ticks: int
    parallelism: int
    scenario: ScenarioConfig

    @classmethod
    def from_scenario(cls, scenario: ScenarioConfig, seed: Optional[int] = None,
                      ticks: Optional[int] = None, parallelism: int = 1) -> "EngineConfig":
        n = scenario.n_processors
        if n > MAX_PROCESSORS:
            raise ValidationError(f"N exceeds the {MAX_PROCESSORS} processor cap: {n}")
        return cls(
            seed=scenario.seed if seed is None else seed,
            n_processors=n,
            ticks=scenario.ticks if ticks is None else ticks,
            parallelism=max(1, parallelism),
            scenario=scenario,
        )


@dataclass
class RunSummary:
    ticks_run: int = 0
    broadcasts: int = 0
    directs: int = 0
    tasks_done: int = 0


@dataclass
class _PendingDirect:
    chunk: Any
    from_address: ProcessorAddress
    to_address: ProcessorAddress


class Engine:
    """Owns all state; external callers drive it single-threadedly."""

    def __init__(self, config: EngineConfig, writer: TraceWriter):
        self.config = config
        self.writer = writer
        self.seed = config.seed
        self.tree = build(config.n_processors)
        self.processors: list[Processor] = build_processors(config.scenario)
        self.world = make_world(config.scenario)
        self.tick: Tick = 0
        self.next_broadcast_id = 0
        self.history: dict[int, BroadcastRecord] = {}
        self.known_bids: set[int] = set()
        self.links: set[frozenset[ProcessorAddress]] = set()
        self.pending_broadcast: Optional[BroadcastRecord] = None
        self.pending_directs: list[_PendingDirect] = []
        self.pending_actions: list[WorldAction] = []
        self.summary = RunSummary()
        self._executor: Optional[ThreadPoolExecutor] = None
        if config.parallelism > 1:
            self._executor = ThreadPoolExecutor(max_workers=config.parallelism)

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    def _map(self, fn: Callable, items: Sequence) -> list:
        if self._executor is None:
            return [fn(x) for x in items]
        return list(self._executor.map(fn, items))

    # -- phases ----------------------------------------------------------

    def tick_cycle(self) -> None:
        t = self.tick
        self._deliver()
        self._world_phase(t)
        chunks = self._propose_phase(t)
        record = self._tournament_phase(t, chunks)
        self._collect_phase(t)
        self.pending_broadcast = record
        self.tick += 1
        self.summary.ticks_run += 1

    def _deliver(self) -> None:
        if self.pending_broadcast is not None:
            broadcast(self.pending_broadcast, self.processors)
            self.pending_broadcast = None
        for d in self.pending_directs:
            self.processors[d.to_address].receive_direct(d.chunk, d.from_address)
        self.pending_directs = []

    def _world_phase(self, t: Tick) -> None:
        actions, self.pending_actions = self.pending_actions, []
        self.world, stimuli = step_world(self.world, actions)
        for stim in stimuli:
            if stim.kind == "task_done":
                self.summary.tasks_done += 1
                self.writer.event({
                    "tick": t, "event": "task_done",
                    "task_id": stim.payload.get("task_id"),
                })
            for p in self.processors:
                if stim.kind in p.input_domains:
                    p.receive_input(stim)
                    self.writer.event({
                        "tick": t, "event": "input", "address": p.address,
                        "kind": stim.kind, "payload": dict(stim.payload),
                    })

    def _propose_phase(self, t: Tick) -> list:
        proposals = self._map(lambda p: p.propose(t), self.processors)
        chunks = []
        for address, proposal in enumerate(proposals):
            if proposal is None:
                chunks.append(null_chunk(address, t))
                continue
            gist, weight = proposal
            violations = validate_gist(gist, self.known_bids)
            if violations:
                raise EngineAbort(address, t, f"invalid gist: {violations}")
            try:
                chunk = new_chunk(address, t, gist, weight)
            except ValidationError as exc:
                raise EngineAbort(address, t, str(exc)) from exc
            chunks.append(chunk)
            self.writer.event({
                "tick": t, "event": "propose", "address": address,
                "weight": chunk.weight, "gist_kind": gist.kind.value,
            })
            for ref in dict.fromkeys(gist.refs):
                originator = self.history[ref].winner.address
                if originator == address:
                    continue
                link_event = self.processors[address].note_usefulness(originator)
                if link_event is not None:
                    self.links.add(frozenset((link_event.a, link_event.b)))
                    self.writer.event({
                        "tick": t, "event": "link_formed",
                        "a": link_event.a, "b": link_event.b,
                    })
        return chunks

    def _tournament_phase(self, t: Tick, chunks: list) -> BroadcastRecord:
        rng_for_node = lambda node: rng_stream(self.seed, t, node)
        match_map = self._executor.map if self._executor is not None else None
        record, trace = run_tournament(
            chunks, rng_for_node, broadcast_id=self.next_broadcast_id,
            tree=self.tree, match_map=match_map,
        )
        event = self.writer.event
        for round_outcomes in trace.rounds:
            for m in round_outcomes:
                event({
                    "tick": t, "event": "match", "round": m.round, "node": m.node,
                    "left_sum": m.left_sum, "right_sum": m.right_sum,
                    "coin": m.coin, "winner_side": m.winner_side,
                })
        event({
            "tick": t, "event": "broadcast",
            "broadcast_id": record.broadcast_id,
            "winner_address": record.winner.address,
            "root_intensity": record.root_intensity,
            "root_mood": record.root_mood,
            "winner": record.winner.to_json(),
        })
        self.history[record.broadcast_id] = record
        self.known_bids.add(record.broadcast_id)
        self.next_broadcast_id += 1
        self.summary.broadcasts += 1
        return record

    def _collect_phase(self, t: Tick) -> None:
        for p in self.processors:
            for action in p.emit_actions():
                if isinstance(action, DirectSend):
                    violations = validate_gist(action.gist, self.known_bids)
                    if violations:
                        raise EngineAbort(p.address, t, f"invalid direct gist: {violations}")
                    chunk = new_chunk(p.address, t, action.gist, action.weight)
                    try:
                        delivery = send_direct(chunk, p.address, action.to, self.links)
                    except NoLinkError as exc:
                        raise EngineAbort(p.address, t, str(exc)) from exc
                    self.pending_directs.append(_PendingDirect(
                        chunk=delivery.chunk,
                        from_address=delivery.from_address,
                        to_address=delivery.to_address,
                    ))
                    self.summary.directs += 1
                    self.writer.event({
                        "tick": t, "event": "direct",
                        "from": p.address, "to": action.to,
                        "gist_kind": action.gist.kind.value,
                    })
                elif isinstance(action, WorldAction):
                    self.pending_actions.append(action)
                    self.writer.event({
                        "tick": t, "event": "action", "address": p.address,
                        "kind": action.kind, "task_id": action.task_id,
                        "stage": action.stage,
                    })
                else:
                    raise EngineAbort(p.address, t, f"unknown action {action!r}")

    def run(self) -> RunSummary:
        """Execute ticks until the budget or until every task completes."""
        self.writer.header(self.seed, self.config.n_processors,
                           self.config.scenario.scenario_hash)
        try:
            for _ in range(self.config.ticks):
                self.tick_cycle()
                if self.world.all_tasks_done():
                    break
        finally:
            self.close()
        return self.summary


def run_scenario(
    scenario: ScenarioConfig,
    stream: TextIO,
    seed: Optional[int] = None,
    ticks: Optional[int] = None,
    parallelism: int = 1,
) -> RunSummary:
    """Run a scenario, streaming the trace to ``stream``."""
    config = EngineConfig.from_scenario(scenario, seed=seed, ticks=ticks,
                                        parallelism=parallelism)
    engine = Engine(config, TraceWriter(stream))
    return engine.run()


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

@dataclass
class StatsReport:
    empty: bool = True
    n: int = 0
    ticks: int = 0
    wins: list[int] = field(default_factory=list)
    empirical: list[float] = field(default_factory=list)
    theoretical: list[float] = field(default_factory=list)
    max_abs_deviation: float = 0.0
    chi_square: float = 0.0
    p_value: float = 1.0
    links: list[tuple[Tick, int, int]] = field(default_factory=list)
    tasks: list[tuple[Tick, str, str]] = field(default_factory=list)
    broadcasts: int = 0
    directs: int = 0

    def to_text(self) -> str:
        if self.empty:
            return "empty trace\n"
        lines = [
            f"ticks: {self.ticks}  broadcasts: {self.broadcasts}  directs: {self.directs}",
            "address  wins  empirical  theoretical  |delta|",
        ]
        for i in range(self.n):
            delta = abs(self.empirical[i] - self.theoretical[i])
            lines.append(
                f"{i:7d}  {self.wins[i]:4d}  {self.empirical[i]:9.6f}"
                f"  {self.theoretical[i]:11.6f}  {delta:7.6f}"
            )
        lines.append(f"max |empirical - theoretical|: {self.max_abs_deviation:.6f}")
        lines.append(f"chi-square: {self.chi_square:.4f}  p-value: {self.p_value:.6f}")
        if self.links:
            lines.append("links formed:")
            lines.extend(f"  tick {t}: {a} <-> {b}" for t, a, b in self.links)
        if self.tasks:
            lines.append("task timeline:")
            lines.extend(f"  tick {t}: {tid} {what}" for t, tid, what in self.tasks)
        return "\n".join(lines) + "\n"


def chi_square_p_value(statistic: float, dof: int) -> float:
    from scipy.stats import chi2

    return float(chi2.sf(statistic, dof))


def stats(events: Iterable[dict]) -> StatsReport:
    """Aggregate a trace into win counts, empirical vs theoretical win
    frequencies (from the recorded leaf intensities), and timelines."""
    report = StatsReport()
    wins: dict[int, int] = {}
    expected: dict[int, float] = {}
    current_leaves: dict[int, tuple[float, float]] = {}
    n = 0
    for e in events:
        kind = e.get("event")
        if kind == "match":
            if e.get("round") == 1:
                current_leaves[e["node"]] = (e["left_sum"], e["right_sum"])
        elif kind == "broadcast":
            report.broadcasts += 1
            leaves: list[float] = []
            for node in sorted(current_leaves):
                left, right = current_leaves[node]
                leaves.extend((left, right))
            current_leaves = {}
            if leaves:
                n = max(n, len(leaves))
                for i, p in enumerate(oracle_win_probabilities(leaves)):
                    expected[i] = expected.get(i, 0.0) + p
            winner = e["winner_address"]
            wins[winner] = wins.get(winner, 0) + 1
            report.ticks += 1
        elif kind == "link_formed":
            report.links.append((e["tick"], e["a"], e["b"]))
        elif kind == "direct":
            report.directs += 1
        elif kind == "task_done":
            report.tasks.append((e["tick"], e.get("task_id", ""), "done"))
        elif kind == "action":
            report.tasks.append(
                (e["tick"], e.get("task_id", ""), f"stage {e.get('stage')} completed")
            )
    if report.ticks == 0:
        return report
    report.empty = False
    report.n = n
    report.wins = [wins.get(i, 0) for i in range(n)]
    report.empirical = [w / report.ticks for w in report.wins]
    report.theoretical = [expected.get(i, 0.0) / report.ticks for i in range(n)]
    report.max_abs_deviation = max(
        (abs(a - b) for a, b in zip(report.empirical, report.theoretical)), default=0.0
    )
    live = [i for i in range(n) if expected.get(i, 0.0) > 0.0]
    if live:
        report.chi_square = sum(
            (report.wins[i] - expected[i]) ** 2 / expected[i] for i in live
        )
        dof = max(1, len(live) - 1)
        report.p_value = chi_square_p_value(report.chi_square, dof)
    return report


# ---------------------------------------------------------------------------
# Explanation queries
# ---------------------------------------------------------------------------

def explain(events: Sequence[dict], broadcast_id: int) -> list[dict]:
    """Causal chain of a broadcast: the transitive closure of its gist refs,
    oldest event first, rooted at the sensor inputs that fed it.

    The no-forward-reference invariant makes the chain acyclic.
    """
    broadcasts: dict[int, dict] = {}
    inputs_by_address: dict[int, list[dict]] = {}
    for e in events:
        if e.get("event") == "broadcast":
            broadcasts[e["broadcast_id"]] = e
        elif e.get("event") == "input":
            inputs_by_address.setdefault(e["address"], []).append(e)
    if broadcast_id not in broadcasts:
        raise KeyError(f"unknown broadcast id {broadcast_id}")

    chain_bids: set[int] = set()
    chain_inputs: list[dict] = []
    stack = [broadcast_id]
    while stack:
        bid = stack.pop()
        if bid in chain_bids:
            continue
        chain_bids.add(bid)
        e = broadcasts[bid]
        refs = e["winner"]["gist"]["refs"]
        if refs:
            stack.extend(refs)
        else:
            # Chain root: attach the stimulus that fed the originator, if any.
            address = e["winner"]["address"]
            born = e["winner"]["t"]
            feeding = [
                ie for ie in inputs_by_address.get(address, []) if ie["tick"] <= born
            ]
            if feeding:
                latest = feeding[-1]
                if latest not in chain_inputs:
                    chain_inputs.append(latest)

    ordered: list[dict] = []
    ordered.extend(sorted(chain_inputs, key=lambda e: (e["tick"], e["address"])))
    ordered.extend(broadcasts[b] for b in sorted(chain_bids))
    ordered.sort(key=lambda e: (e["tick"], 0 if e["event"] == "input" else 1))
    return ordered


# ---------------------------------------------------------------------------
# Proportionality verification harness
# ---------------------------------------------------------------------------

@dataclass
class ProportionalityResult:
    weights: list[float]
    trials: int
    tolerance: float
    wins: list[int]
    empirical: list[float]
    theoretical: list[float]
    max_abs_deviation: float
    passed: bool

    def to_text(self) -> str:
        lines = ["index  weight  empirical  theoretical  |delta|"]
        for i, w in enumerate(self.weights):
            delta = abs(self.empirical[i] - self.theoretical[i])
            lines.append(
                f"{i:5d}  {w:6.3f}  {self.empirical[i]:9.6f}"
                f"  {self.theoretical[i]:11.6f}  {delta:7.6f}"
            )
        verdict = "OK" if self.passed else "DEVIATION EXCEEDS TOLERANCE"
        lines.append(
            f"max deviation {self.max_abs_deviation:.6f} vs tolerance "
            f"{self.tolerance:.6f}: {verdict}"
        )
        return "\n".join(lines) + "\n"


def verify_proportionality(
    weights: Sequence[float],
    trials: int,
    seed: int,
    tolerance: float = 0.005,
) -> ProportionalityResult:
    """Run standalone tournaments over fixed weights and compare empirical
    win frequencies with the proportional targets."""
    for w in weights:
        if w < 0:
            raise ValidationError(f"weights must be non-negative, got {w}")
    n = len(weights)
    tree = build(n)
    from .core import NULL_GIST

    chunks = [new_chunk(i, 0, NULL_GIST, w) for i, w in enumerate(weights)]
    theoretical = oracle_win_probabilities([c.intensity for c in chunks])
    wins = [0] * n
    for trial in range(trials):
        record, _ = run_tournament(
            chunks,
            lambda node, _t=trial: rng_stream(seed, _t, node),
            broadcast_id=trial,
            tree=tree,
        )
        wins[record.winner.address] += 1
    empirical = [w / trials for w in wins]
    max_dev = max(abs(e - t) for e, t in zip(empirical, theoretical))
    return ProportionalityResult(
        weights=list(weights),
        trials=trials,
        tolerance=tolerance,
        wins=wins,
        empirical=empirical,
        theoretical=theoretical,
        max_abs_deviation=max_dev,
        passed=max_dev <= tolerance,
    )
