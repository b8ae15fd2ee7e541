"""Processor-side machinery: the behavior contract every processor kind
implements, sleeping-experts weighting, link formation, direct sends, and the
built-in world-model processor.

A processor may read only its own state, its inbox (broadcasts, direct chunks,
stimuli), and its own link table.  There is no registry of other processors'
capabilities anywhere; everything a processor knows about its peers it learned
from broadcasts.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Callable, Hashable, Mapping, Optional

from .core import (
    BroadcastRecord,
    Chunk,
    Gist,
    ProcessorAddress,
    Tick,
    ValidationError,
)

DEFAULT_LINK_THRESHOLD = 3
DEFAULT_BETA = 0.5
DEFAULT_WEIGHT_SCALE = 10.0


# ---------------------------------------------------------------------------
# Sleeping experts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Expert:
    rule_id: str
    weight: float


@dataclass(frozen=True)
class SleepingExpertsState:
    """A pool of rules updated multiplicatively, where only the experts awake
    on an instance predict and are charged losses.

    ``awake(rule_id, instance)`` decides participation, ``predict(rule_id,
    instance)`` is the rule's vote.  Weights stay strictly positive; updates
    rescale the awake mass back to its pre-update total, so sleeping weights
    are untouched bit for bit and the awake total is conserved.
    """

    experts: tuple[Expert, ...]
    beta: float
    awake: Callable[[str, Any], bool]
    predict: Callable[[str, Any], Hashable]
    default_prediction: Hashable = None

    def weight_of(self, rule_id: str) -> float:
        for e in self.experts:
            if e.rule_id == rule_id:
                return e.weight
        raise KeyError(rule_id)


def make_pool(
    rules: Mapping[str, Hashable],
    beta: float = DEFAULT_BETA,
    awake: Callable[[str, Any], bool] | None = None,
    default_prediction: Hashable = None,
) -> SleepingExpertsState:
    """Pool over fixed-prediction rules, each starting at weight 1.

    ``rules`` maps rule id to the constant value that rule predicts; by
    default every rule is awake on every instance.
    """
    predictions = dict(rules)
    return SleepingExpertsState(
        experts=tuple(Expert(rid, 1.0) for rid in predictions),
        beta=beta,
        awake=awake if awake is not None else (lambda rid, inst: True),
        predict=lambda rid, inst: predictions[rid],
        default_prediction=default_prediction,
    )


def se_predict(state: SleepingExpertsState, instance: Any) -> tuple[Hashable, float]:
    """Weighted-majority prediction over the awake experts.

    Returns (prediction, confidence) with confidence = winning mass / awake
    mass.  Ties break to the lowest-indexed expert's prediction; with no
    expert awake the configured default is returned at confidence 0.
    """
    votes: dict[Hashable, float] = {}
    first_index: dict[Hashable, int] = {}
    total = 0.0
    for i, e in enumerate(state.experts):
        if not state.awake(e.rule_id, instance):
            continue
        value = state.predict(e.rule_id, instance)
        votes[value] = votes.get(value, 0.0) + e.weight
        first_index.setdefault(value, i)
        total += e.weight
    if not votes:
        return state.default_prediction, 0.0
    best = max(votes, key=lambda v: (votes[v], -first_index[v]))
    return best, votes[best] / total


def se_update(
    state: SleepingExpertsState,
    instance: Any,
    losses: Mapping[str, float],
) -> SleepingExpertsState:
    """Multiplicative update w <- w * beta^loss over the awake experts, then
    rescale the awake set so its total mass is unchanged.

    ``losses`` must give a loss in [0, 1] for every awake expert and nothing
    else; sleeping experts keep their exact weights.
    """
    awake_ids = [e.rule_id for e in state.experts if state.awake(e.rule_id, instance)]
    awake_set = set(awake_ids)
    for rid, loss in losses.items():
        if rid not in awake_set:
            raise ValidationError(f"loss supplied for sleeping expert {rid!r}")
        if not 0.0 <= loss <= 1.0:
            raise ValidationError(f"loss for {rid!r} outside [0, 1]: {loss}")
    missing = awake_set - set(losses)
    if missing:
        raise ValidationError(f"missing losses for awake experts: {sorted(missing)}")
    if not awake_ids:
        return state

    mass_before = sum(e.weight for e in state.experts if e.rule_id in awake_set)
    raw = {
        e.rule_id: e.weight * state.beta ** losses[e.rule_id]
        for e in state.experts
        if e.rule_id in awake_set
    }
    factor = mass_before / sum(raw.values())
    new_experts = tuple(
        replace(e, weight=raw[e.rule_id] * factor) if e.rule_id in awake_set else e
        for e in state.experts
    )
    return replace(state, experts=new_experts)


def weight_for_chunk(confidence: float, relevance: float, sign: int,
                     scale: float = DEFAULT_WEIGHT_SCALE) -> float:
    """Signed chunk weight from prediction confidence and relevance.

    Processors have the final word on the value of their own contribution;
    this is the default mapping they all use.
    """
    if not 0.0 <= confidence <= 1.0:
        raise ValidationError(f"confidence outside [0, 1]: {confidence}")
    if not 0.0 <= relevance <= 1.0:
        raise ValidationError(f"relevance outside [0, 1]: {relevance}")
    if sign not in (-1, 1):
        raise ValidationError(f"sign must be +1 or -1, got {sign}")
    return sign * confidence * relevance * scale


# ---------------------------------------------------------------------------
# Links
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinkFormed:
    a: ProcessorAddress
    b: ProcessorAddress


@dataclass(frozen=True)
class LinkTable:
    """Per-peer usefulness counts for one processor.

    A link to a peer is established once its count reaches the threshold and
    is never removed within a run.
    """

    owner: ProcessorAddress
    threshold: int = DEFAULT_LINK_THRESHOLD
    counts: Mapping[ProcessorAddress, int] = field(default_factory=dict)

    def established(self, peer: ProcessorAddress) -> bool:
        return self.counts.get(peer, 0) >= self.threshold

    def established_peers(self) -> set[ProcessorAddress]:
        return {p for p, c in self.counts.items() if c >= self.threshold}


def record_usefulness(
    table: LinkTable, peer: ProcessorAddress
) -> tuple[LinkTable, Optional[LinkFormed]]:
    """Count one useful exchange with ``peer``; emit LinkFormed exactly when
    the count first crosses the threshold."""
    if peer == table.owner:
        raise ValidationError("a processor cannot link to itself")
    counts = dict(table.counts)
    counts[peer] = counts.get(peer, 0) + 1
    updated = replace(table, counts=counts)
    crossed = counts[peer] == table.threshold
    event = LinkFormed(a=min(table.owner, peer), b=max(table.owner, peer)) if crossed else None
    return updated, event


class NoLinkError(ValidationError):
    pass


@dataclass(frozen=True)
class DirectDelivery:
    chunk: Chunk
    from_address: ProcessorAddress
    to_address: ProcessorAddress


def send_direct(
    chunk: Chunk,
    from_address: ProcessorAddress,
    to_address: ProcessorAddress,
    established_links: set[frozenset[ProcessorAddress]],
) -> DirectDelivery:
    """Carry a chunk over an established link, bypassing the competition.

    Raises NoLinkError when no link exists between the two endpoints.
    Delivery lands in the receiver's direct inbox at the next tick.
    """
    if frozenset((from_address, to_address)) not in established_links:
        raise NoLinkError(f"no link between {from_address} and {to_address}")
    return DirectDelivery(chunk=chunk, from_address=from_address, to_address=to_address)


# ---------------------------------------------------------------------------
# Actions a processor may emit at the end of a tick
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WorldAction:
    """Actuator output applied by the world at the start of the next tick."""

    kind: str
    task_id: str
    stage: int = 0


@dataclass(frozen=True)
class DirectSend:
    """Request to carry a gist to a linked peer (no competition, no STM)."""

    to: ProcessorAddress
    gist: Gist
    weight: float = 0.0


Action = WorldAction | DirectSend


# ---------------------------------------------------------------------------
# Behavior contract
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunParams:
    """Run-wide knobs shared by every processor."""

    link_threshold: int = DEFAULT_LINK_THRESHOLD
    beta: float = DEFAULT_BETA
    weight_scale: float = DEFAULT_WEIGHT_SCALE


class Processor:
    """Base behavior: receives everything, proposes nothing.

    Subclasses override the receive/propose/emit hooks.  The base class also
    serves as the null processor padding the tree out to a power of two.
    """

    kind = "null"

    def __init__(self, address: ProcessorAddress, params: Mapping[str, Any] | None = None,
                 run_params: RunParams | None = None,
                 capabilities: tuple[str, ...] = (),
                 input_domains: tuple[str, ...] = ()):
        self.address = address
        self.params = dict(params or {})
        self.run_params = run_params or RunParams()
        self.capabilities = tuple(capabilities)
        self.input_domains = tuple(input_domains)
        self.link_table = LinkTable(owner=address, threshold=self.run_params.link_threshold)

    # -- inbox ---------------------------------------------------------
    def receive_broadcast(self, record: BroadcastRecord) -> None:
        pass

    def receive_direct(self, chunk: Chunk, from_address: ProcessorAddress) -> None:
        pass

    def receive_input(self, stimulus) -> None:
        pass

    # -- output --------------------------------------------------------
    def propose(self, t: Tick) -> Optional[tuple[Gist, float]]:
        return None

    def emit_actions(self) -> list[Action]:
        return []

    # -- links (engine-driven) -----------------------------------------
    def note_usefulness(self, peer: ProcessorAddress) -> Optional[LinkFormed]:
        """Record that ``peer``'s broadcast fed this processor's output."""
        self.link_table, event = record_usefulness(self.link_table, peer)
        return event

    def has_link(self, peer: ProcessorAddress) -> bool:
        return self.link_table.established(peer)


NullProcessor = Processor


# ---------------------------------------------------------------------------
# Model-of-the-World
# ---------------------------------------------------------------------------

@dataclass
class WorldModel:
    """Key-value world model backed by a per-key observation log.

    Predicts the majority observation for a key; confidence is the majority
    fraction.  Keys under the reserved "self/" namespace track the owning
    processor's own doings.
    """

    observations: dict[str, list[Hashable]] = field(default_factory=dict)

    def predict(self, key: str) -> tuple[Optional[Hashable], float]:
        log = self.observations.get(key)
        if not log:
            return None, 0.0
        counts: dict[Hashable, int] = {}
        order: dict[Hashable, int] = {}
        for i, value in enumerate(log):
            counts[value] = counts.get(value, 0) + 1
            order.setdefault(value, i)
        best = max(counts, key=lambda v: (counts[v], -order[v]))
        return best, counts[best] / len(log)

    def observe(self, key: str, value: Hashable) -> None:
        self.observations.setdefault(key, []).append(value)

    def correct(self, key: str, observed: Hashable) -> float:
        """Score the current prediction against an observation, then record it.

        Returns the prediction error: 0 on a match, 1 on a mismatch or an
        unknown key.
        """
        predicted, _ = self.predict(key)
        error = 0.0 if predicted is not None and predicted == observed else 1.0
        self.observe(key, observed)
        return error


def motw_predict(model: WorldModel, key: str) -> tuple[Optional[Hashable], float]:
    return model.predict(key)


def motw_correct(model: WorldModel, key: str, observed: Hashable) -> float:
    return model.correct(key, observed)


class ModelOfWorldProcessor(Processor):
    """Keeps a world model updated from broadcast gists and scores its own
    calibration with a two-rule expert pool (trust the model / doubt it)."""

    kind = "motw"

    def __init__(self, address, params=None, run_params=None, **kwargs):
        super().__init__(address, params, run_params, **kwargs)
        self.model = WorldModel()
        self.pool = make_pool(
            {"trust_model": "trust", "doubt_model": "doubt"},
            beta=self.run_params.beta,
        )

    def receive_broadcast(self, record: BroadcastRecord) -> None:
        payload = record.winner.gist.payload
        key = payload.get("entity") or payload.get("claim")
        value = payload.get("value") if "value" in payload else payload.get("stance")
        if key is not None and value is not None:
            error = motw_correct(self.model, str(key), value)
            self.pool = se_update(
                self.pool, key, {"trust_model": error, "doubt_model": 1.0 - error}
            )
        if record.winner.address == self.address:
            self.model.observe("self/won_broadcast", record.broadcast_id)
