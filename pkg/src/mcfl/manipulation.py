"""False-name splitting: split games, split gain and partition search.

An agent holding ``m_k`` samples may register several identities and spread
its samples over them. Because the multi-choice payoff of an identity does not
depend on its own capacity, a split is fully described by the list of parts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

from .errors import ValidationError
from .game_core import CharacteristicFunction, GameSpec, MaxDataVector, as_max_vector
from .shapley import mcfl_shapley_linear

TIE_RTOL = 1e-9


def integer_partitions(n: int, largest: int | None = None) -> Iterator[tuple[int, ...]]:
    """Partitions of ``n`` as non-increasing tuples, in reverse lexicographic order."""
    if n < 0:
        raise ValidationError("cannot partition a negative integer")
    if n == 0:
        yield ()
        return
    largest = n if largest is None else min(largest, n)
    for first in range(largest, 0, -1):
        for rest in integer_partitions(n - first, first):
            yield (first,) + rest


@dataclass(frozen=True)
class SplitSpec:
    k: int
    partition: tuple[int, ...]

    def __init__(self, k: int, partition: Sequence[int]):
        partition = tuple(int(p) for p in partition)
        if not partition:
            raise ValidationError("a split needs at least one part")
        if any(p < 1 for p in partition):
            raise ValidationError(f"every part must hold at least one sample, got {list(partition)}")
        object.__setattr__(self, "k", int(k))
        object.__setattr__(self, "partition", partition)

    @property
    def level(self) -> int:
        return sum(self.partition)


def split_game(m, spec: SplitSpec) -> MaxDataVector:
    """Replace identity ``spec.k`` by one identity per part, inserted in place."""
    m = as_max_vector(m)
    if not 0 <= spec.k < m.K:
        raise ValidationError(f"identity index {spec.k} out of range for K={m.K}")
    if spec.level > m[spec.k]:
        raise ValidationError(
            f"parts sum to {spec.level} but identity {spec.k} holds only {m[spec.k]} samples"
        )
    return MaxDataVector(m.m[: spec.k] + spec.partition + m.m[spec.k + 1 :])


def split_identity_payoffs(m, spec: SplitSpec, v: CharacteristicFunction) -> list[float]:
    """Payoff of each fake identity at full participation in the split game."""
    game = GameSpec(split_game(m, spec), v)
    return [mcfl_shapley_linear(game, spec.k + j, part) for j, part in enumerate(spec.partition)]


@dataclass
class SplitAnalysis:
    original: float
    split_payoffs: list[float]
    original_m: tuple[int, ...]
    split_m: tuple[int, ...]
    levels: tuple[int, ...] = field(default=())

    @property
    def split_total(self) -> float:
        return math.fsum(self.split_payoffs)

    @property
    def gain(self) -> float:
        return self.split_total - self.original


def split_gain(m, k: int, T: int, T_prime: int, v: CharacteristicFunction) -> SplitAnalysis:
    """Compare identity ``k`` contributing ``T + T'`` samples honestly against
    two identities contributing ``T`` and ``T'``."""
    m = as_max_vector(m)
    if T < 1 or T_prime < 1:
        raise ValidationError("both split parts must be >= 1")
    if not 0 <= k < m.K:
        raise ValidationError(f"identity index {k} out of range for K={m.K}")
    i = T + T_prime
    if i > m[k]:
        raise ValidationError(f"T + T' = {i} exceeds m_k = {m[k]}")
    spec = SplitSpec(k, (T, T_prime))
    original = mcfl_shapley_linear(GameSpec(m, v), k, i)
    payoffs = split_identity_payoffs(m, spec, v)
    return SplitAnalysis(
        original=original,
        split_payoffs=payoffs,
        original_m=m.m,
        split_m=split_game(m, spec).m,
        levels=(T, T_prime),
    )


def _better(a: float, b: float) -> bool:
    """``a`` beats ``b`` by more than the relative tie tolerance."""
    return a - b > TIE_RTOL * max(1.0, abs(a), abs(b))


def partition_payoffs(m, k: int, v: CharacteristicFunction, max_part_count: int = 8):
    """Total payoff of identity ``k``'s fake identities for every partition of
    ``m_k``, others held at their given capacities and full participation."""
    m = as_max_vector(m)
    if not 0 <= k < m.K:
        raise ValidationError(f"identity index {k} out of range for K={m.K}")
    if m[k] > max_part_count:
        raise ValidationError(f"partition search supports m_k <= {max_part_count}, got {m[k]}")
    out = []
    for part in integer_partitions(m[k]):
        payoffs = split_identity_payoffs(m, SplitSpec(k, part), v)
        out.append((part, math.fsum(payoffs)))
    return out


def best_partition(m, k: int, v: CharacteristicFunction) -> tuple[tuple[int, ...], float]:
    """Partition of ``m_k`` maximising the fake identities' total payoff.

    Near-ties (relative 1e-9) go to the partition with fewer parts, then to the
    lexicographically smallest one.
    """
    candidates = partition_payoffs(m, k, v)
    best_part, best_val = None, None
    for part, val in sorted(candidates, key=lambda pv: (len(pv[0]), pv[0])):
        if best_val is None or _better(val, best_val):
            best_part, best_val = part, val
    return best_part, best_val


@dataclass
class Deviation:
    agent: int
    partition: tuple[int, ...]
    payoff: float
    margin: float


@dataclass
class EquilibriumCertificate:
    profile: tuple[int, ...]
    split_m: tuple[int, ...]
    deviations: list[Deviation]
    scope: str = "partitions of m_k at full effort; other agents fully split"

    @property
    def passed(self) -> bool:
        return all(d.margin >= -TIE_RTOL * max(1.0, abs(d.payoff)) for d in self.deviations)

    @property
    def min_margin(self) -> float:
        return min((d.margin for d in self.deviations), default=0.0)


def equilibrium_profile(m, v: CharacteristicFunction, max_capacity: int = 5, max_agents: int = 3):
    """Fully split profile plus a unilateral-deviation certificate.

    For each original agent, every alternative partition of its samples is
    scored while all other agents stay split into singletons. The margin of a
    deviation is (singleton payoff) - (deviation payoff).
    """
    m = as_max_vector(m)
    if m.K > max_agents or max(m.m) > max_capacity:
        raise ValidationError(
            f"equilibrium check supports K <= {max_agents} and m_k <= {max_capacity}"
        )
    deviations = []
    for k in range(m.K):
        # everyone except k already split into singletons
        others_before = (1,) * sum(m.m[:k])
        others_after = (1,) * sum(m.m[k + 1 :])
        local_m = MaxDataVector(others_before + (m[k],) + others_after)
        local_k = len(others_before)
        scores = dict(partition_payoffs(local_m, local_k, v))
        honest = scores[(1,) * m[k]]
        for part, val in scores.items():
            if part == (1,) * m[k]:
                continue
            deviations.append(Deviation(k, part, val, honest - val))
    total = m.total
    return (1,) * total, EquilibriumCertificate((1,) * total, (1,) * total, deviations)
