"""Server-side combination rules and per-step communication cost."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

from .prng import DirectionStream
from .zo import Projection


class AggregationError(ValueError):
    pass


class RuleKind(enum.Enum):
    FEDSGD = "fedsgd"
    ZO_FEDSGD = "zo_fedsgd"
    FEEDSIGN = "feedsign"
    DP_FEEDSIGN = "dp_feedsign"


@dataclass(frozen=True)
class AggregationRule:
    kind: RuleKind
    epsilon: float | None = None

    def __post_init__(self):
        if self.kind is RuleKind.DP_FEEDSIGN:
            if self.epsilon is None or not self.epsilon > 0:
                raise ValueError("dp_feedsign needs epsilon > 0")
        elif self.epsilon is not None:
            raise ValueError(f"epsilon only applies to dp_feedsign, not {self.kind.value}")

    @classmethod
    def parse(cls, name: str, epsilon: float | None = None) -> "AggregationRule":
        return cls(RuleKind(name), epsilon)

    @property
    def name(self) -> str:
        return self.kind.value

    @property
    def uses_signs(self) -> bool:
        return self.kind in (RuleKind.FEEDSIGN, RuleKind.DP_FEEDSIGN)


FEDSGD = AggregationRule(RuleKind.FEDSGD)
ZO_FEDSGD = AggregationRule(RuleKind.ZO_FEDSGD)
FEEDSIGN = AggregationRule(RuleKind.FEEDSIGN)


def dp_feedsign(epsilon: float) -> AggregationRule:
    return AggregationRule(RuleKind.DP_FEEDSIGN, epsilon)


@dataclass(frozen=True)
class VoteTally:
    plus: int
    minus: int

    @property
    def total(self) -> int:
        return self.plus + self.minus

    @classmethod
    def of(cls, signs: Sequence[int]) -> "VoteTally":
        plus = sum(1 for s in signs if s > 0)
        return cls(plus, len(signs) - plus)


def _check_votes(signs: Sequence[int]) -> None:
    if len(signs) == 0:
        raise AggregationError("no client votes to aggregate")
    for s in signs:
        if s not in (1, -1):
            raise AggregationError(f"votes must be +1 or -1, got {s!r}")


def aggregate_zo_fedsgd(projections: Sequence[Projection]) -> float:
    """Mean projection, summed in ascending client order."""
    if len(projections) == 0:
        raise AggregationError("no client projections to aggregate")
    total = 0.0
    for p in sorted(projections, key=lambda p: p.client):
        total += p.value
    return total / len(projections)


def aggregate_feedsign(signs: Sequence[int]) -> int:
    """Majority vote; a tie goes to +1."""
    _check_votes(signs)
    return 1 if sum(signs) >= 0 else -1


def dp_plus_probability(signs: Sequence[int], epsilon: float) -> float:
    """P(output = +1) of the private vote.

    q± = sum_k (1/2 ± s_k) and p± = exp(eps q± / 4).  Written with the larger
    exponent factored out, P(+1) = 1 / (1 + exp(eps (q- - q+) / 4)).
    """
    _check_votes(signs)
    if not epsilon > 0:
        raise AggregationError("epsilon must be positive")
    q_plus = sum(0.5 + s for s in signs)
    q_minus = sum(0.5 - s for s in signs)
    a, b = epsilon * q_plus / 4.0, epsilon * q_minus / 4.0
    top = max(a, b)
    p_plus, p_minus = math.exp(a - top), math.exp(b - top)
    return p_plus / (p_plus + p_minus)


def aggregate_dp_feedsign(signs: Sequence[int], epsilon: float, noise: DirectionStream) -> int:
    """Sample the private vote with one uniform draw from ``noise``."""
    prob = dp_plus_probability(signs, epsilon)
    return 1 if noise.uniform() <= prob else -1


def comm_cost(rule: AggregationRule, K: int, d: int) -> tuple[int, int]:
    """(uplink bits per client, downlink bits) for one step.

    FeedSign and its private variant move a single vote each way (the seed of
    step t is t itself).  ZO-FedSGD uploads a 32-bit projection and a 32-bit
    seed and the server rebroadcasts all K pairs.  FedSGD moves 32-bit
    gradients and models.
    """
    if rule.uses_signs:
        return 1, 1
    if rule.kind is RuleKind.ZO_FEDSGD:
        return 64, 64 * K
    return 32 * d, 32 * d
