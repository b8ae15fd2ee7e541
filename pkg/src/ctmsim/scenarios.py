"""Simulated environment and the shipped scenario harnesses.

Holds the world the machine acts on (entities, staged tasks, a stimulus
schedule), the fact-check rubric and verdict aggregation, the arithmetic
derivation checker, the scenario file loader, and the concrete processor
kinds the scenario files wire together.

Tasks advance only through broadcasts and established links; the world never
tells a processor anything except through routed stimuli, and stimuli never
pass through the competition.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence, Union

from .core import Gist, GistKind, Tick, ValidationError, is_power_of_two
from .processors import (
    BroadcastRecord,
    DirectSend,
    ModelOfWorldProcessor,
    Processor,
    RunParams,
    WorldAction,
    make_pool,
    se_predict,
    se_update,
    weight_for_chunk,
)


class ConfigError(ValueError):
    """Scenario file failed validation."""


# ---------------------------------------------------------------------------
# World
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Stimulus:
    """Environmental input routed directly to matching processors."""

    kind: str
    payload: Mapping[str, Any]


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    pipeline: tuple[str, ...]
    payload: Mapping[str, Any] = field(default_factory=dict)
    announce_tick: Tick = 0


@dataclass
class TaskState:
    spec: TaskSpec
    current_stage: int = 0
    done: bool = False
    completed_tick: Optional[Tick] = None


@dataclass
class WorldState:
    """Environment state; mutated only by step_world."""

    entities: dict[str, Any] = field(default_factory=dict)
    tasks: dict[str, TaskState] = field(default_factory=dict)
    tick: Tick = 0
    schedule: dict[Tick, list[Stimulus]] = field(default_factory=dict)

    def all_tasks_done(self) -> bool:
        return bool(self.tasks) and all(t.done for t in self.tasks.values())


def step_world(world: WorldState, actions: Sequence[WorldAction]) -> tuple[WorldState, list[Stimulus]]:
    """Apply actuator actions, advance the world clock, emit due stimuli.

    A stage-completion action only advances its task when it names the
    task's current stage; completing the final stage emits a "task_done"
    stimulus.  Actions naming an unknown task are an error.
    """
    stimuli: list[Stimulus] = []
    for action in actions:
        if action.kind != "complete_stage":
            raise ValidationError(f"unknown world action kind {action.kind!r}")
        task = world.tasks.get(action.task_id)
        if task is None:
            raise ValidationError(f"action references unknown task {action.task_id!r}")
        if task.done or action.stage != task.current_stage:
            continue
        task.current_stage += 1
        if task.current_stage == len(task.spec.pipeline):
            task.done = True
            task.completed_tick = world.tick
            stimuli.append(Stimulus(kind="task_done", payload={"task_id": task.spec.task_id}))
    stimuli = world.schedule.pop(world.tick, []) + stimuli
    world.tick += 1
    return world, stimuli


# ---------------------------------------------------------------------------
# Fact checking
# ---------------------------------------------------------------------------

class Stance(str, Enum):
    YES = "YES"
    NO = "NO"


class Verdict(str, Enum):
    YES = "YES"
    NO = "NO"
    UNDECIDED = "UNDECIDED"


@dataclass(frozen=True)
class Provenance:
    peer_reviewed: bool = False
    conflict_of_interest: bool = False
    institution_reputed: bool = False


@dataclass(frozen=True)
class SourceAssertion:
    claim: str
    stance: Stance
    provenance: Provenance


@dataclass(frozen=True)
class CredibilityRubric:
    """Scores a source from its provenance flags; clamped to [lo, hi]."""

    base: float = 0.5
    peer_reviewed_bonus: float = 0.3
    reputed_bonus: float = 0.1
    conflict_penalty: float = 0.4
    lo: float = 0.05
    hi: float = 0.95


DEFAULT_RUBRIC = CredibilityRubric()

# Dead zone around zero inside which the aggregate stays UNDECIDED.
VERDICT_DEAD_ZONE = 0.1


def credibility_score(provenance: Provenance, rubric: CredibilityRubric = DEFAULT_RUBRIC) -> float:
    score = rubric.base
    if provenance.peer_reviewed:
        score += rubric.peer_reviewed_bonus
    if provenance.institution_reputed:
        score += rubric.reputed_bonus
    if provenance.conflict_of_interest:
        score -= rubric.conflict_penalty
    return min(rubric.hi, max(rubric.lo, score))


def verdict_score(assertions: Sequence[SourceAssertion],
                  rubric: CredibilityRubric = DEFAULT_RUBRIC) -> float:
    """Credibility-weighted stance balance in [-1, 1]."""
    if not assertions:
        raise ValidationError("cannot aggregate an empty assertion list")
    claims = {a.claim for a in assertions}
    if len(claims) != 1:
        raise ValidationError(f"assertions must share one claim, got {sorted(claims)}")
    yes = sum(credibility_score(a.provenance, rubric) for a in assertions if a.stance is Stance.YES)
    no = sum(credibility_score(a.provenance, rubric) for a in assertions if a.stance is Stance.NO)
    return (yes - no) / (yes + no)


def aggregate_verdict(assertions: Sequence[SourceAssertion],
                      rubric: CredibilityRubric = DEFAULT_RUBRIC) -> tuple[Verdict, float]:
    """Aggregate stances into (verdict, confidence); confidence = |score|.

    Extending the assertion list later may flip the verdict, which is the
    point: new evidence strengthens or weakens the assessment.
    """
    score = verdict_score(assertions, rubric)
    if score > VERDICT_DEAD_ZONE:
        verdict = Verdict.YES
    elif score < -VERDICT_DEAD_ZONE:
        verdict = Verdict.NO
    else:
        verdict = Verdict.UNDECIDED
    return verdict, abs(score)


# ---------------------------------------------------------------------------
# Arithmetic derivations
# ---------------------------------------------------------------------------

# Expressions are integers or [op, left, right] with op in {"+", "*"}.
Expr = Union[int, list]

DERIVATION_RULES = ("commute", "associate", "fold_constants")


class MalformedExpressionError(ValueError):
    """Expression is not a well-formed binary +/* tree over integers."""


@dataclass(frozen=True)
class Derivation:
    start: Expr
    steps: tuple[tuple[str, Expr], ...]

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "Derivation":
        return cls(start=obj["start"], steps=tuple((r, e) for r, e in obj["steps"]))


@dataclass(frozen=True)
class CheckResult:
    valid: bool
    first_invalid: Optional[int] = None


def check_expr(expr: Expr) -> None:
    """Raise MalformedExpressionError unless expr is well formed."""
    if isinstance(expr, bool):
        raise MalformedExpressionError(f"not an expression: {expr!r}")
    if isinstance(expr, int):
        return
    if isinstance(expr, list) and len(expr) == 3 and expr[0] in ("+", "*"):
        check_expr(expr[1])
        check_expr(expr[2])
        return
    raise MalformedExpressionError(f"not an expression: {expr!r}")


def _applies_at_root(rule: str, before: Expr, after: Expr) -> bool:
    if not isinstance(before, list):
        return False
    op, a, b = before
    if rule == "commute":
        return after == [op, b, a]
    if rule == "associate":
        if isinstance(a, list) and a[0] == op and after == [op, a[1], [op, a[2], b]]:
            return True
        if isinstance(b, list) and b[0] == op and after == [op, [op, a, b[1]], b[2]]:
            return True
        return False
    if rule == "fold_constants":
        if isinstance(a, int) and isinstance(b, int):
            value = a + b if op == "+" else a * b
            return after == value
        return False
    raise ValidationError(f"unknown rule {rule!r}")


def _single_application(rule: str, before: Expr, after: Expr) -> bool:
    # Either the rule fires at this node, or exactly one child is rewritten
    # while the other stays identical.
    if _applies_at_root(rule, before, after):
        return True
    if isinstance(before, list) and isinstance(after, list) and before[0] == after[0]:
        if before[2] == after[2] and _single_application(rule, before[1], after[1]):
            return True
        if before[1] == after[1] and _single_application(rule, before[2], after[2]):
            return True
    return False


def check_derivation(d: Derivation) -> CheckResult:
    """Validate that every step is one legal rule application.

    Returns the index of the first failing step otherwise.  Malformed
    expressions raise, which is a different outcome than invalid.
    """
    check_expr(d.start)
    for _, expr in d.steps:
        check_expr(expr)
    current = d.start
    for i, (rule, expr) in enumerate(d.steps):
        if rule not in DERIVATION_RULES:
            return CheckResult(valid=False, first_invalid=i)
        if not _single_application(rule, current, expr):
            return CheckResult(valid=False, first_invalid=i)
        current = expr
    return CheckResult(valid=True)


# ---------------------------------------------------------------------------
# Scenario configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProcessorSpec:
    kind: str
    capabilities: tuple[str, ...] = ()
    input_domains: tuple[str, ...] = ()
    params: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class AssertionSpec:
    assertion: SourceAssertion
    source: int  # index into the declared processor list
    announce_tick: Tick = 0


@dataclass(frozen=True)
class ScenarioConfig:
    n_processors: int
    seed: int = 0
    ticks: int = 100
    link_threshold: int = 3
    beta: float = 0.5
    weight_scale: float = 10.0
    processors: tuple[ProcessorSpec, ...] = ()
    tasks: tuple[TaskSpec, ...] = ()
    assertions: tuple[AssertionSpec, ...] = ()
    rubric: CredibilityRubric = DEFAULT_RUBRIC
    scenario_hash: str = ""

    def run_params(self) -> RunParams:
        return RunParams(
            link_threshold=self.link_threshold,
            beta=self.beta,
            weight_scale=self.weight_scale,
        )


def parse_scenario(obj: Mapping[str, Any], raw_bytes: bytes | None = None) -> ScenarioConfig:
    """Validate a parsed scenario document and fill defaults."""
    try:
        n = obj["n_processors"]
    except KeyError as exc:
        raise ConfigError("scenario missing n_processors") from exc
    if not isinstance(n, int) or not is_power_of_two(n) or n < 2:
        raise ConfigError(f"N must be 2^k for positive k, got {n}")

    specs = []
    for p in obj.get("processors", []):
        kind = p.get("kind", "null")
        if kind not in PROCESSOR_KINDS:
            raise ConfigError(f"unknown processor kind {kind!r}")
        specs.append(
            ProcessorSpec(
                kind=kind,
                capabilities=tuple(p.get("capabilities", [])),
                input_domains=tuple(p.get("input_domains", [])),
                params=dict(p.get("params", {})),
            )
        )
    if len(specs) > n:
        raise ConfigError(f"{len(specs)} processors declared but n_processors is {n}")

    world = obj.get("world", {})
    tasks = tuple(
        TaskSpec(
            task_id=t["task_id"],
            pipeline=tuple(t["pipeline"]),
            payload=dict(t.get("payload", {})),
            announce_tick=t.get("announce_tick", 0),
        )
        for t in world.get("tasks", [])
    )
    declared_caps = {c for s in specs for c in s.capabilities}
    for t in tasks:
        for cap in t.pipeline:
            if cap not in declared_caps:
                warnings.warn(
                    f"task {t.task_id!r} needs capability {cap!r} that no declared "
                    "processor provides",
                    stacklevel=2,
                )

    assertions = []
    for a in world.get("assertions", []):
        source = a.get("source", 0)
        if not 0 <= source < len(specs):
            raise ConfigError(f"assertion source index {source} out of range")
        assertions.append(
            AssertionSpec(
                assertion=SourceAssertion(
                    claim=a["claim"],
                    stance=Stance(a["stance"]),
                    provenance=Provenance(**a.get("provenance", {})),
                ),
                source=source,
                announce_tick=a.get("announce_tick", 0),
            )
        )

    rubric = DEFAULT_RUBRIC
    if "rubric" in obj:
        rubric = replace(DEFAULT_RUBRIC, **obj["rubric"])

    if raw_bytes is None:
        raw_bytes = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")

    return ScenarioConfig(
        n_processors=n,
        seed=obj.get("seed", 0),
        ticks=obj.get("ticks", 100),
        link_threshold=obj.get("link_threshold", 3),
        beta=obj.get("beta", 0.5),
        weight_scale=obj.get("weight_scale", 10.0),
        processors=tuple(specs),
        tasks=tasks,
        assertions=tuple(assertions),
        rubric=rubric,
        scenario_hash=hashlib.sha256(raw_bytes).hexdigest(),
    )


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Load and validate a scenario file."""
    raw = Path(path).read_bytes()
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed scenario JSON: {exc}") from exc
    return parse_scenario(obj, raw_bytes=raw)


def make_world(config: ScenarioConfig) -> WorldState:
    """World plus stimulus schedule implied by the scenario."""
    schedule: dict[Tick, list[Stimulus]] = {}
    for t in config.tasks:
        schedule.setdefault(t.announce_tick, []).append(
            Stimulus(
                kind="task",
                payload={"task_id": t.task_id, "pipeline": list(t.pipeline), **dict(t.payload)},
            )
        )
    announced: set[tuple[Tick, str]] = set()
    for a in config.assertions:
        key = (a.announce_tick, a.assertion.claim)
        if key in announced:
            continue
        announced.add(key)
        schedule.setdefault(a.announce_tick, []).append(
            Stimulus(kind="claim", payload={"claim": a.assertion.claim})
        )
    return WorldState(
        tasks={t.task_id: TaskState(spec=t) for t in config.tasks},
        schedule=schedule,
    )


# ---------------------------------------------------------------------------
# Processor kinds
# ---------------------------------------------------------------------------

class RequesterProcessor(Processor):
    """Owns a task it cannot do itself: broadcasts stage-by-stage help
    requests, credits whoever answers, and announces the completion."""

    kind = "requester"

    def __init__(self, address, params=None, run_params=None, **kwargs):
        super().__init__(address, params, run_params, **kwargs)
        self.pool = make_pool({"ask": "ask", "wait": "wait"}, beta=self.run_params.beta)
        self.task: Optional[Mapping[str, Any]] = None
        self.stage = 0
        self.answer_bids: list[int] = []
        self.need_request = False
        self.request_aired_tick: Optional[Tick] = None
        self.retry_ticks = self.params.get("retry_ticks", 8)
        self.task_done = False
        self.completion_aired = False
        self.thank_queue: list[tuple[int, int]] = []  # (peer address, answer bid)

    def _pipeline(self) -> list[str]:
        return list(self.task["pipeline"])

    def receive_input(self, stimulus) -> None:
        if stimulus.kind == "task" and self.task is None:
            self.task = dict(stimulus.payload)
            self.stage = 0
            self.need_request = True
        elif stimulus.kind == "task_done" and self.task is not None:
            if stimulus.payload.get("task_id") == self.task["task_id"]:
                self.task_done = True

    def receive_broadcast(self, record: BroadcastRecord) -> None:
        if self.task is None:
            return
        winner = record.winner
        gist = winner.gist
        payload = gist.payload
        if payload.get("task_id") != self.task["task_id"]:
            return
        if winner.address == self.address:
            if gist.kind is GistKind.REQUEST and payload.get("stage") == self.stage:
                self.request_aired_tick = record.tick_won
                self.need_request = False
            elif gist.kind is GistKind.COMMENT and payload.get("complete") == 1:
                self.completion_aired = True
        elif gist.kind is GistKind.ANSWER and payload.get("stage") == self.stage:
            self.answer_bids.append(record.broadcast_id)
            self.thank_queue.append((winner.address, record.broadcast_id))
            self.pool = se_update(self.pool, "request", {"ask": 0.0, "wait": 1.0})
            self.stage += 1
            self.need_request = self.stage < len(self._pipeline())
            self.request_aired_tick = None

    def propose(self, t: Tick) -> Optional[tuple[Gist, float]]:
        if self.task is None:
            return None
        _, confidence = se_predict(self.pool, "request")
        scale = self.run_params.weight_scale
        if self.task_done and not self.completion_aired:
            gist = Gist(
                kind=GistKind.COMMENT,
                text="task complete",
                refs=tuple(self.answer_bids),
                payload={"task_id": self.task["task_id"], "complete": 1},
            )
            return gist, weight_for_chunk(confidence, 1.0, 1, scale)
        if self.stage >= len(self._pipeline()):
            return None
        if not self.need_request:
            # Re-ask when an aired request has gone unanswered too long.
            if self.request_aired_tick is not None and t - self.request_aired_tick >= self.retry_ticks:
                self.need_request = True
            else:
                return None
        capability = self._pipeline()[self.stage]
        refs = (self.answer_bids[-1],) if self.answer_bids else ()
        gist = Gist(
            kind=GistKind.REQUEST,
            text=f"need {capability}",
            refs=refs,
            payload={"task_id": self.task["task_id"], "stage": self.stage, "capability": capability},
        )
        return gist, weight_for_chunk(confidence, 1.0, 1, scale)

    def emit_actions(self) -> list:
        out = []
        still_waiting = []
        for peer, bid in self.thank_queue:
            if self.has_link(peer):
                gist = Gist(
                    kind=GistKind.COMMENT,
                    text="ack",
                    refs=(bid,),
                    payload={"task_id": self.task["task_id"] if self.task else "", "answer": bid},
                )
                out.append(DirectSend(to=peer, gist=gist))
            else:
                still_waiting.append((peer, bid))
        self.thank_queue = still_waiting
        return out


class CapabilityExpert(Processor):
    """Answers broadcast requests that match one of its capabilities and
    completes the corresponding task stage once its answer airs."""

    kind = "expert"

    def __init__(self, address, params=None, run_params=None, **kwargs):
        super().__init__(address, params, run_params, **kwargs)
        self.pool = make_pool(
            {"respond": "respond", "hold_back": "hold"},
            beta=self.run_params.beta,
            awake=lambda rid, instance: instance.get("capability") in self.capabilities,
        )
        self.open_request: Optional[dict[str, Any]] = None
        self.handled: set[tuple[str, int]] = set()
        self.pending_actions: list[WorldAction] = []
        self.last_instance: Optional[Mapping[str, Any]] = None

    def receive_broadcast(self, record: BroadcastRecord) -> None:
        winner = record.winner
        gist = winner.gist
        payload = gist.payload
        key = (payload.get("task_id"), payload.get("stage"))
        if gist.kind is GistKind.REQUEST:
            if payload.get("capability") in self.capabilities and key not in self.handled:
                self.open_request = {"payload": dict(payload), "bid": record.broadcast_id}
        elif gist.kind is GistKind.ANSWER:
            if self.open_request is not None:
                open_payload = self.open_request["payload"]
                if key == (open_payload.get("task_id"), open_payload.get("stage")):
                    if winner.address == self.address:
                        self.pending_actions.append(
                            WorldAction(kind="complete_stage", task_id=key[0], stage=key[1])
                        )
                        self.last_instance = open_payload
                    self.handled.add(key)
                    self.open_request = None

    def receive_direct(self, chunk, from_address) -> None:
        if chunk.gist.text == "ack" and self.last_instance is not None:
            self.pool = se_update(
                self.pool, self.last_instance, {"respond": 0.0, "hold_back": 1.0}
            )
            self.last_instance = None

    def answer_fields(self, request_payload: Mapping[str, Any]) -> dict[str, Any]:
        return dict(self.params.get("answer", {}))

    def answer_sign(self, answer_payload: Mapping[str, Any]) -> int:
        return 1

    def answer_refs(self, request_payload: Mapping[str, Any], request_bid: int) -> tuple[int, ...]:
        return (request_bid,)

    def propose(self, t: Tick) -> Optional[tuple[Gist, float]]:
        if self.open_request is None:
            return None
        request = self.open_request["payload"]
        _, confidence = se_predict(self.pool, request)
        payload = {
            "task_id": request.get("task_id"),
            "stage": request.get("stage"),
            "capability": request.get("capability"),
            **self.answer_fields(request),
        }
        gist = Gist(
            kind=GistKind.ANSWER,
            text=self.params.get("text", ""),
            refs=self.answer_refs(request, self.open_request["bid"]),
            payload=payload,
        )
        sign = self.answer_sign(payload)
        return gist, weight_for_chunk(confidence, 1.0, sign, self.run_params.weight_scale)

    def emit_actions(self) -> list:
        out = list(self.pending_actions)
        self.pending_actions.clear()
        return out


class CheckerProcessor(CapabilityExpert):
    """Capability expert for "check" stages: validates the derivation carried
    by the pipeline's outline answer, step by step."""

    kind = "checker"

    def __init__(self, address, params=None, run_params=None, **kwargs):
        super().__init__(address, params, run_params, **kwargs)
        if not self.capabilities:
            self.capabilities = ("check",)
        self.derivations: dict[str, tuple[int, Mapping[str, Any]]] = {}

    def receive_broadcast(self, record: BroadcastRecord) -> None:
        payload = record.winner.gist.payload
        if record.winner.gist.kind is GistKind.ANSWER and "derivation" in payload:
            self.derivations[payload.get("task_id")] = (record.broadcast_id, payload["derivation"])
        super().receive_broadcast(record)

    def answer_fields(self, request_payload: Mapping[str, Any]) -> dict[str, Any]:
        stored = self.derivations.get(request_payload.get("task_id"))
        if stored is None:
            return {"valid": 0, "first_invalid": -1}
        _, derivation = stored
        result = check_derivation(Derivation.from_json(derivation))
        if result.valid:
            return {"valid": 1}
        return {"valid": 0, "first_invalid": result.first_invalid}

    def answer_sign(self, answer_payload: Mapping[str, Any]) -> int:
        return 1 if answer_payload.get("valid") == 1 else -1

    def answer_refs(self, request_payload: Mapping[str, Any], request_bid: int) -> tuple[int, ...]:
        stored = self.derivations.get(request_payload.get("task_id"))
        if stored is None:
            return (request_bid,)
        return (request_bid, stored[0])


class SourceProcessor(Processor):
    """Publishes its configured assertions about a claim when asked."""

    kind = "source"

    def __init__(self, address, params=None, run_params=None, **kwargs):
        super().__init__(address, params, run_params, **kwargs)
        self.pool = make_pool({"assert": "assert", "hold": "hold"}, beta=self.run_params.beta)
        self.assertions = list(self.params.get("assertions", []))
        self.queue: list[int] = []
        self.aired: set[int] = set()

    def receive_input(self, stimulus) -> None:
        if stimulus.kind != "claim":
            return
        claim = stimulus.payload.get("claim")
        for i, a in enumerate(self.assertions):
            if a["claim"] == claim and i not in self.aired and i not in self.queue:
                self.queue.append(i)

    def receive_broadcast(self, record: BroadcastRecord) -> None:
        if record.winner.address != self.address or not self.queue:
            return
        gist = record.winner.gist
        head = self.assertions[self.queue[0]]
        if (
            gist.kind is GistKind.OBSERVATION
            and gist.payload.get("claim") == head["claim"]
            and gist.payload.get("stance") == head["stance"]
        ):
            self.aired.add(self.queue.pop(0))

    def propose(self, t: Tick) -> Optional[tuple[Gist, float]]:
        if not self.queue:
            return None
        a = self.assertions[self.queue[0]]
        provenance = a.get("provenance", {})
        payload = {
            "claim": a["claim"],
            "stance": a["stance"],
            "peer_reviewed": bool(provenance.get("peer_reviewed", False)),
            "conflict_of_interest": bool(provenance.get("conflict_of_interest", False)),
            "institution_reputed": bool(provenance.get("institution_reputed", False)),
        }
        gist = Gist(kind=GistKind.OBSERVATION, text=a["claim"], refs=(), payload=payload)
        _, confidence = se_predict(self.pool, a["claim"])
        sign = 1 if a["stance"] == Stance.YES.value else -1
        return gist, weight_for_chunk(confidence, 1.0, sign, self.run_params.weight_scale)


class FactCheckAggregator(Processor):
    """Collects assertion broadcasts about a claim and, after a quiet window,
    proposes a credibility-weighted verdict referencing its evidence."""

    kind = "aggregator"

    def __init__(self, address, params=None, run_params=None, **kwargs):
        super().__init__(address, params, run_params, **kwargs)
        self.quiet_ticks = self.params.get("quiet_ticks", 4)
        self.rubric = replace(DEFAULT_RUBRIC, **self.params.get("rubric", {}))
        self.seen: list[tuple[int, SourceAssertion]] = []
        self.last_seen_tick: Optional[Tick] = None
        self.verdict_aired = False

    def receive_broadcast(self, record: BroadcastRecord) -> None:
        gist = record.winner.gist
        payload = gist.payload
        if record.winner.address == self.address and gist.kind is GistKind.VERDICT:
            self.verdict_aired = True
            return
        if gist.kind is GistKind.OBSERVATION and "claim" in payload and "stance" in payload:
            assertion = SourceAssertion(
                claim=payload["claim"],
                stance=Stance(payload["stance"]),
                provenance=Provenance(
                    peer_reviewed=bool(payload.get("peer_reviewed", False)),
                    conflict_of_interest=bool(payload.get("conflict_of_interest", False)),
                    institution_reputed=bool(payload.get("institution_reputed", False)),
                ),
            )
            self.seen.append((record.broadcast_id, assertion))
            self.last_seen_tick = record.tick_won

    def propose(self, t: Tick) -> Optional[tuple[Gist, float]]:
        if self.verdict_aired or not self.seen or self.last_seen_tick is None:
            return None
        if t - self.last_seen_tick < self.quiet_ticks:
            return None
        claim = self.seen[0][1].claim
        evidence = [(bid, a) for bid, a in self.seen if a.claim == claim]
        assertions = [a for _, a in evidence]
        verdict, confidence = aggregate_verdict(assertions, self.rubric)
        score = verdict_score(assertions, self.rubric)
        gist = Gist(
            kind=GistKind.VERDICT,
            text=claim,
            refs=tuple(bid for bid, _ in evidence),
            payload={
                "claim": claim,
                "verdict": verdict.value,
                "confidence": confidence,
                "score": score,
            },
        )
        sign = 1 if score >= 0 else -1
        return gist, weight_for_chunk(confidence, 1.0, sign, self.run_params.weight_scale)


class FixedWeightProcessor(Processor):
    """Proposes the same observation at the same weight every tick."""

    kind = "fixed_weight"

    def propose(self, t: Tick) -> Optional[tuple[Gist, float]]:
        gist = Gist(
            kind=GistKind.OBSERVATION,
            text=self.params.get("text", ""),
            refs=(),
            payload=dict(self.params.get("payload", {})),
        )
        return gist, float(self.params.get("weight", 1.0))


PROCESSOR_KINDS: dict[str, type[Processor]] = {
    "null": Processor,
    "requester": RequesterProcessor,
    "expert": CapabilityExpert,
    "checker": CheckerProcessor,
    "source": SourceProcessor,
    "aggregator": FactCheckAggregator,
    "motw": ModelOfWorldProcessor,
    "fixed_weight": FixedWeightProcessor,
}


def build_processors(config: ScenarioConfig) -> list[Processor]:
    """Instantiate the declared processors and pad with nulls to N."""
    run_params = config.run_params()
    processors: list[Processor] = []
    for address, spec in enumerate(config.processors):
        cls = PROCESSOR_KINDS[spec.kind]
        params = dict(spec.params)
        if spec.kind == "aggregator" and config.rubric != DEFAULT_RUBRIC:
            params.setdefault(
                "rubric",
                {
                    "base": config.rubric.base,
                    "peer_reviewed_bonus": config.rubric.peer_reviewed_bonus,
                    "reputed_bonus": config.rubric.reputed_bonus,
                    "conflict_penalty": config.rubric.conflict_penalty,
                    "lo": config.rubric.lo,
                    "hi": config.rubric.hi,
                },
            )
        if spec.kind == "source":
            configured = [
                {
                    "claim": a.assertion.claim,
                    "stance": a.assertion.stance.value,
                    "provenance": {
                        "peer_reviewed": a.assertion.provenance.peer_reviewed,
                        "conflict_of_interest": a.assertion.provenance.conflict_of_interest,
                        "institution_reputed": a.assertion.provenance.institution_reputed,
                    },
                }
                for a in config.assertions
                if a.source == address
            ]
            params.setdefault("assertions", configured)
        processors.append(
            cls(
                address,
                params=params,
                run_params=run_params,
                capabilities=spec.capabilities,
                input_domains=spec.input_domains,
            )
        )
    for address in range(len(config.processors), config.n_processors):
        processors.append(Processor(address, run_params=run_params))
    return processors
