"""Up-tree competition: N chunks, log2(N) rounds of parallel pairwise matches.

Each match carries the intensity and mood sums of the subtree below it and
advances the left candidate with probability left_sum / (left_sum + right_sum).
Multiplying those odds down any root-to-leaf path telescopes, so chunk i wins
the whole tournament with probability intensity_i / total intensity, which is
exactly the proportionality guarantee this module exists to provide.

Nodes use the usual implicit heap layout: root at index 1, children of node i
at 2i and 2i+1, leaf j (processor address j) at index N + j.  Round 1 is the
level just above the leaves (N/2 matches), round k = log2(N) is the single
match at the root.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

from .core import BroadcastRecord, Chunk, ProcessorAddress, is_power_of_two


class InvariantError(RuntimeError):
    """An internal tournament invariant was violated."""


class CoinStream(Protocol):
    def uniform(self) -> float: ...


# Maps a match-node heap index to the random stream that decides that match.
RngForNode = Callable[[int], CoinStream]


@dataclass(frozen=True)
class UpTree:
    """Complete binary tournament tree over ``n_leaves`` = 2^k processors.

    Leaf i is permanently bound to processor address i; the binding never
    changes for the life of the engine.
    """

    n_leaves: int
    k: int

    @property
    def node_count(self) -> int:
        return 2 * self.n_leaves - 1


@dataclass(frozen=True)
class MatchState:
    """State advanced by one match: the surviving candidate plus the
    intensity and mood sums of every chunk in the subtree below."""

    candidate: Chunk
    intensity_sum: float
    mood_sum: float


@dataclass(frozen=True)
class MatchOutcome:
    round: int
    node: int
    left_sum: float
    right_sum: float
    coin: float
    winner_side: str  # "L" or "R"


@dataclass(frozen=True)
class TournamentTrace:
    """Match outcomes grouped by round; round r holds N/2^r entries."""

    rounds: tuple[tuple[MatchOutcome, ...], ...]

    @property
    def total_matches(self) -> int:
        return sum(len(r) for r in self.rounds)


@dataclass(frozen=True)
class DeliveryReceipt:
    broadcast_id: int
    delivered: int


def build(n_leaves: int) -> UpTree:
    """Build the tournament tree; ``n_leaves`` must be a power of two >= 2."""
    if n_leaves < 2 or not is_power_of_two(n_leaves):
        raise ValueError(f"N must be 2^k for positive k, got {n_leaves}")
    return UpTree(n_leaves=n_leaves, k=n_leaves.bit_length() - 1)


def play_match(left: MatchState, right: MatchState, coin: float) -> MatchState:
    """Resolve one match with a uniform [0,1) coin.

    The left candidate advances iff coin < left_sum / (left_sum + right_sum);
    when both sums are zero the match is a fair coin (left iff coin < 0.5).
    The winner carries the combined sums upward.
    """
    ls, rs = left.intensity_sum, right.intensity_sum
    if ls < 0 or rs < 0 or not (math.isfinite(ls) and math.isfinite(rs)):
        raise InvariantError(f"match sums must be finite and non-negative: {ls}, {rs}")
    total = ls + rs
    threshold = ls / total if total > 0 else 0.5
    winner = left if coin < threshold else right
    return MatchState(
        candidate=winner.candidate,
        intensity_sum=ls + rs,
        mood_sum=left.mood_sum + right.mood_sum,
    )


def run_tournament(
    chunks: Sequence[Chunk],
    rng_for_node: RngForNode,
    broadcast_id: int = 0,
    tree: UpTree | None = None,
    match_map: Callable | None = None,
) -> tuple[BroadcastRecord, TournamentTrace]:
    """Run one complete tournament over exactly N chunks (one per leaf).

    Returns the broadcast record for the winner together with the per-round
    match trace.  The record's root aggregates are the plain left-to-right
    sums over the submitted chunks, so conservation against the submitted
    weights is exact.

    Matches within a round are independent (each draws from its own node's
    stream) and may run under any order-preserving ``match_map``, e.g. an
    executor's map; rounds are a sequential barrier.
    """
    n = len(chunks)
    if tree is None:
        tree = build(n)
    if tree.n_leaves != n:
        raise ValueError(f"expected {tree.n_leaves} chunks, got {n}")

    def play(job: tuple[int, int, MatchState, MatchState]) -> tuple[MatchOutcome, MatchState]:
        round_no, node, left, right = job
        coin = rng_for_node(node).uniform()
        result = play_match(left, right, coin)
        side = "L" if result.candidate is left.candidate else "R"
        outcome = MatchOutcome(
            round=round_no,
            node=node,
            left_sum=left.intensity_sum,
            right_sum=right.intensity_sum,
            coin=coin,
            winner_side=side,
        )
        return outcome, result

    level = [MatchState(c, c.intensity, c.mood) for c in chunks]
    rounds = []
    round_no = 0
    while len(level) > 1:
        round_no += 1
        half = len(level) // 2
        jobs = [
            (round_no, half + j, level[2 * j], level[2 * j + 1]) for j in range(half)
        ]
        played = list(match_map(play, jobs)) if match_map is not None else [play(j) for j in jobs]
        rounds.append(tuple(outcome for outcome, _ in played))
        level = [result for _, result in played]

    record = BroadcastRecord(
        broadcast_id=broadcast_id,
        winner=level[0].candidate,
        root_intensity=sum(c.intensity for c in chunks),
        root_mood=sum(c.mood for c in chunks),
        tick_won=chunks[0].t,
    )
    return record, TournamentTrace(rounds=tuple(rounds))


class Receiver(Protocol):
    def receive_broadcast(self, record: BroadcastRecord) -> None: ...


def broadcast(record: BroadcastRecord, processors: Sequence[Receiver]) -> DeliveryReceipt:
    """Deliver the record to every processor, the winner's originator included."""
    for p in processors:
        p.receive_broadcast(record)
    return DeliveryReceipt(broadcast_id=record.broadcast_id, delivered=len(processors))


def oracle_win_probabilities(intensities: Sequence[float]) -> list[float]:
    """Closed-form win probabilities: intensity_i / total (uniform if total 0).

    For N <= 16 the result is cross-checked against an exhaustive tree walk
    of the match rule; disagreement beyond 1e-12 raises InvariantError.
    """
    n = len(intensities)
    if not is_power_of_two(n):
        raise ValueError(f"N must be 2^k, got {n}")
    for w in intensities:
        if w < 0 or not math.isfinite(w):
            raise ValueError(f"intensities must be finite and non-negative, got {w}")
    total = sum(intensities)
    if total > 0:
        probs = [w / total for w in intensities]
    else:
        probs = [1.0 / n] * n
    if n <= 16:
        walked = tree_walk_win_probabilities(intensities)
        for p, q in zip(probs, walked):
            if abs(p - q) > 1e-12:
                raise InvariantError(f"tree walk disagrees with closed form: {p} vs {q}")
    return probs


def tree_walk_win_probabilities(intensities: Sequence[float]) -> list[float]:
    """Exhaustive per-leaf win probabilities computed from the match rule alone.

    Walks the whole tree, weighting each leaf's subtree-win distribution by
    the probability its side survives each match.  Independent of
    run_tournament; used as the verification oracle for proportionality.
    """
    n = len(intensities)
    if not is_power_of_two(n):
        raise ValueError(f"N must be 2^k, got {n}")

    def walk(lo: int, hi: int) -> tuple[dict[int, float], float]:
        if hi - lo == 1:
            return {lo: 1.0}, float(intensities[lo])
        mid = (lo + hi) // 2
        left_dist, left_sum = walk(lo, mid)
        right_dist, right_sum = walk(mid, hi)
        total = left_sum + right_sum
        p_left = left_sum / total if total > 0 else 0.5
        dist = {leaf: p * p_left for leaf, p in left_dist.items()}
        dist.update({leaf: p * (1.0 - p_left) for leaf, p in right_dist.items()})
        return dist, total

    dist, _ = walk(0, n)
    return [dist[i] for i in range(n)]
