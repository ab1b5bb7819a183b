"""Classic and multi-choice Shapley values.

The multi-choice value for identity ``k`` at level ``i`` is

    psi[i, k] = sum_{j=1..i} sum_{tau: tau_k = j} w_k(tau) * (v(tau) - v(tau - e_k))

where, for linear weights, ``w_k(tau) = j * c_j(s, |M_k(tau)|)``, ``s`` is the
total of the *other* identities and ``M_k(tau)`` the others below their
maximum. ``c_t`` is evaluated through its product closed form
``mcount! / prod_{l=0..mcount} (s + t + l)``; the alternating binomial sum it
replaces is kept only as :func:`coeff_c_alternating` for testing.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .errors import ValidationError
from .game_core import (
    CharacteristicFunction,
    GameSpec,
    Profile,
    as_max_vector,
    check_enumeration,
    iter_profiles,
)

EXACT_TOTAL_LIMIT = 10


# --------------------------------------------------------------------------
# classic (binary participation) Shapley value

class SubsetGame:
    """Binary-participation game stored as a table indexed by bitmask.

    Bit ``k`` of the mask marks identity ``k`` as present.
    """

    def __init__(self, K: int, values: Sequence[float]):
        if K < 1:
            raise ValidationError("K must be >= 1")
        values = np.asarray(values, dtype=float)
        if values.shape != (1 << K,):
            raise ValidationError(f"expected {1 << K} coalition values, got {values.shape}")
        if values[0] != 0:
            raise ValidationError("v(empty set) must be 0")
        self.K = K
        self.values = values

    @classmethod
    def from_function(cls, K: int, fn: Callable[[frozenset], float]) -> "SubsetGame":
        check_enumeration(1 << K)
        vals = [0.0] * (1 << K)
        for mask in range(1, 1 << K):
            vals[mask] = fn(frozenset(k for k in range(K) if mask >> k & 1))
        return cls(K, vals)

    def value(self, coalition) -> float:
        mask = 0
        for k in coalition:
            mask |= 1 << k
        return float(self.values[mask])

    @property
    def grand(self) -> float:
        return float(self.values[-1])


def classic_shapley(game: SubsetGame) -> np.ndarray:
    """Subset-sum form of the Shapley value (K <= 20)."""
    K = game.K
    if K > 20:
        raise ValidationError(f"classic_shapley supports K <= 20, got {K}")
    masks = np.arange(1 << K)
    sizes = np.array([bin(x).count("1") for x in range(1 << K)])
    weight = np.array(
        [math.factorial(s) * math.factorial(K - s - 1) / math.factorial(K) if s < K else 0.0
         for s in range(K + 1)]
    )
    out = np.empty(K)
    for k in range(K):
        bit = 1 << k
        without = masks[(masks & bit) == 0]
        marg = game.values[without | bit] - game.values[without]
        out[k] = math.fsum(weight[sizes[without]] * marg)
    return out


def classic_shapley_oracle(game: SubsetGame) -> np.ndarray:
    """Average marginal contribution over all K! arrival orders (K <= 8)."""
    K = game.K
    if K > 8:
        raise ValidationError(f"permutation oracle supports K <= 8, got {K}")
    totals = [[] for _ in range(K)]
    for order in itertools.permutations(range(K)):
        mask = 0
        for k in order:
            before = game.values[mask]
            mask |= 1 << k
            totals[k].append(game.values[mask] - before)
    n_perm = math.factorial(K)
    return np.array([math.fsum(t) / n_perm for t in totals])


# --------------------------------------------------------------------------
# coefficient algebra

def coeff_c(t: int, s: int, mcount: int, exact: bool = False):
    """``mcount! / prod_{j=0..mcount} (s + t + j)``.

    Equals ``sum_l C(mcount, l) (-1)^l / (s + l + t)`` without the
    cancellation. With ``exact=True`` returns a :class:`~fractions.Fraction`.
    """
    if t < 0 or s < 0 or mcount < 0 or s + t < 1:
        raise ValidationError(f"coeff_c needs s + t >= 1 and non-negative args, got {(t, s, mcount)}")
    base = s + t
    if exact:
        return Fraction(math.factorial(mcount), math.prod(base + j for j in range(mcount + 1)))
    r = 1.0 / base
    for j in range(1, mcount + 1):
        r *= j / (base + j)
    return r


def coeff_c_alternating(t: int, s: int, mcount: int, exact: bool = False):
    """Literal alternating binomial sum, kept as an oracle for :func:`coeff_c`.

    In floating point the terms cancel badly (relative error near 1e-3 already
    at ``s=20, t=10, mcount=12``); ``exact=True`` sums the same terms as
    fractions and is what identity checks should compare against.
    """
    if mcount > 40:
        raise ValidationError("alternating form is unreliable beyond mcount = 40")
    if s + t < 1:
        raise ValidationError("need s + t >= 1")
    if exact:
        return sum((Fraction(math.comb(mcount, l) * (-1) ** l, s + l + t)
                    for l in range(mcount + 1)), Fraction(0))
    return sum(math.comb(mcount, l) * (-1) ** l / (s + l + t) for l in range(mcount + 1))


def _profile_table(m_others: Sequence[int]) -> np.ndarray:
    """``table[s, mc]``: number of profiles of ``m_others`` with total ``s`` and
    ``mc`` identities below their max.

    Built one identity at a time instead of by listing profiles; the cap check
    still applies to the size of the profile set being summarised.
    """
    check_enumeration(math.prod(x + 1 for x in m_others))
    table = np.zeros((sum(m_others) + 1, len(m_others) + 1), dtype=np.int64)
    table[0, 0] = 1
    top = 0
    for cap in m_others:
        # levels 0..cap-1 add one below-max identity: a width-cap window sum
        csum = np.cumsum(table[: top + cap, :-1], axis=0)
        nxt = np.zeros_like(table)
        nxt[: top + cap, 1:] = csum
        nxt[cap : top + cap, 1:] -= csum[: top]
        nxt[cap : cap + top + 1, :] += table[: top + 1, :]
        table, top = nxt, top + cap
    return table


def _profile_stats(m_others: Sequence[int]) -> Counter:
    """Multiplicity of (total, number below max) over all profiles of ``m_others``."""
    table = _profile_table(m_others)
    return Counter({(int(s), int(mc)): int(table[s, mc]) for s, mc in zip(*np.nonzero(table))})


def _coeff_c_grid(t: int, s: np.ndarray, mc: np.ndarray) -> np.ndarray:
    """Vectorised :func:`coeff_c` (same product order, so identical floats)."""
    base = (s + t).astype(float)
    r = 1.0 / base
    for j in range(1, int(mc.max(initial=0)) + 1):
        r = np.where(j <= mc, r * (j / (base + j)), r)
    return r


def lemma_sum_c(m, t: int, exact: bool = False):
    """Sum of ``c_t`` over every profile of ``m`` (the distinguished identity
    is outside ``m``)."""
    m = as_max_vector(m)
    if t < 1:
        raise ValidationError("t must be >= 1")
    if exact:
        terms = [cnt * coeff_c(t, s, mc, True) for (s, mc), cnt in _profile_stats(m.m).items()]
        return sum(terms, Fraction(0))
    table = _profile_table(m.m)
    s, mc = np.nonzero(table)
    terms = table[s, mc] * _coeff_c_grid(t, s, mc)
    return math.fsum(terms.tolist())


# --------------------------------------------------------------------------
# multi-choice Shapley value

@dataclass(frozen=True)
class WeightFunction:
    """Prior weight per effort level; ``alpha[0] == 0``, non-decreasing."""

    alpha: tuple

    def __init__(self, alpha: Sequence[float]):
        alpha = tuple(alpha)
        if not alpha or alpha[0] != 0:
            raise ValidationError("weight function needs alpha(0) = 0")
        if any(b < a for a, b in zip(alpha, alpha[1:])):
            raise ValidationError("weight function must be non-decreasing")
        if any(a <= 0 for a in alpha[1:]):
            raise ValidationError("alpha(i) must be positive for i >= 1")
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def linear(cls, top: int, scale: float = 1.0) -> "WeightFunction":
        return cls([scale * i for i in range(top + 1)])

    def __call__(self, i: int):
        if i >= len(self.alpha):
            raise ValidationError(f"weight function undefined at level {i}")
        return self.alpha[i]

    def norm(self, tau: Sequence[int]):
        return sum(self(x) for x in tau)


@dataclass
class AllocationResult:
    """``payoffs[k][i]`` is the payoff of identity ``k`` at level ``i``."""

    payoffs: list
    game: GameSpec = field(repr=False)
    weights: WeightFunction | None = field(default=None, repr=False)

    def __getitem__(self, key):
        k, i = key
        return self.payoffs[k][i]

    def full_participation_total(self):
        vals = [row[-1] for row in self.payoffs]
        return sum(vals, Fraction(0)) if isinstance(vals[0], Fraction) else math.fsum(vals)

    def rows(self):
        for k, row in enumerate(self.payoffs):
            for i, val in enumerate(row):
                yield k, i, val


def _check_game(game: GameSpec, k: int, i: int | None = None):
    if not 0 <= k < game.K:
        raise ValidationError(f"identity index {k} out of range for K={game.K}")
    if i is not None and not 1 <= i <= game.m[k]:
        raise ValidationError(f"level {i} outside 1..{game.m[k]} for identity {k}")


def _exact_value(v: CharacteristicFunction, arg):
    val = v(arg)
    return val if isinstance(val, Fraction) else Fraction(val)


def _level_increments(game: GameSpec, k: int, top: int, exact: bool,
                      weights: WeightFunction | None) -> list:
    """Per-level contributions ``inc[j-1]`` so that psi[i, k] = sum(inc[:i])."""
    m = game.m.m
    others = m[:k] + m[k + 1 :]
    v = game.v
    val = (lambda a: _exact_value(v, a)) if exact else v
    terms = [[] for _ in range(top)]

    if weights is None and v.is_total_count:
        for (s, mc), cnt in _profile_stats(others).items():
            for j in range(1, top + 1):
                coef = j * coeff_c(j, s, mc, exact)
                terms[j - 1].append(cnt * coef * (val(s + j) - val(s + j - 1)))
    else:
        for rest in iter_profiles(others):
            s = sum(rest)
            unmet = [r for r, (a, b) in enumerate(zip(rest, others)) if a != b]
            for j in range(1, top + 1):
                tau = rest[:k] + (j,) + rest[k:]
                diff = val(tau) - val(tau[:k] + (j - 1,) + tau[k + 1 :])
                if weights is None:
                    coef = j * coeff_c(j, s, len(unmet), exact)
                else:
                    coef = _weighted_bracket(weights, j, rest, others, unmet, exact)
                terms[j - 1].append(coef * diff)

    if exact:
        return [sum(t, Fraction(0)) for t in terms]
    return [math.fsum(t) for t in terms]


def _weighted_bracket(weights: WeightFunction, j: int, rest: Profile, others, unmet, exact):
    """sum_{T subset of unmet} (-1)^|T| a(j) / (||tau||_a + sum_{r in T} [a(tau_r+1) - a(tau_r)])."""
    conv = Fraction if exact else float
    a_j = conv(weights(j))
    base = a_j + sum(conv(weights(x)) for x in rest)
    steps = [conv(weights(rest[r] + 1)) - conv(weights(rest[r])) for r in unmet]
    check_enumeration(1 << len(steps))
    out = []
    for size in range(len(steps) + 1):
        sign = -1 if size % 2 else 1
        for combo in itertools.combinations(steps, size):
            out.append(sign * a_j / (base + sum(combo)))
    return sum(out, Fraction(0)) if exact else math.fsum(out)


def _check_exact(game: GameSpec, exact: bool):
    if exact and game.m.total > EXACT_TOTAL_LIMIT:
        raise ValidationError(
            f"exact mode is limited to games with total samples <= {EXACT_TOTAL_LIMIT}"
        )


def mcfl_shapley_linear(game: GameSpec, k: int, i: int, exact: bool = False):
    """Payoff of identity ``k`` contributing ``i`` samples, linear weights."""
    _check_game(game, k, i)
    _check_exact(game, exact)
    inc = _level_increments(game, k, i, exact, None)
    return sum(inc, Fraction(0)) if exact else math.fsum(inc)


def mcfl_shapley_weighted(game: GameSpec, alpha: WeightFunction, k: int, i: int,
                          exact: bool = False):
    """Payoff under a general weight function (explicit subset sum)."""
    _check_game(game, k, i)
    _check_exact(game, exact)
    if len(alpha.alpha) <= max(game.m.m):
        raise ValidationError("weight function must cover every level up to max m_k")
    inc = _level_increments(game, k, i, exact, alpha)
    return sum(inc, Fraction(0)) if exact else math.fsum(inc)


def mcfl_allocation(game: GameSpec, alpha: WeightFunction | None = None,
                    exact: bool = False) -> AllocationResult:
    """Payoffs for every identity and every level ``0..m_k``."""
    _check_exact(game, exact)
    if alpha is not None and len(alpha.alpha) <= max(game.m.m):
        raise ValidationError("weight function must cover every level up to max m_k")
    zero = Fraction(0) if exact else 0.0
    rows = []
    for k in range(game.K):
        inc = _level_increments(game, k, game.m[k], exact, alpha)
        row = [zero]
        for x in inc:
            row.append(row[-1] + x)
        if not exact:
            # re-sum each prefix so every level is a correctly rounded fsum
            row = [0.0] + [math.fsum(inc[:i]) for i in range(1, len(inc) + 1)]
        rows.append(row)
    return AllocationResult(rows, game, alpha)


def induced_subset_game(game: GameSpec) -> SubsetGame:
    """Binary game of a multi-choice game whose capacities are all 1."""
    if any(x != 1 for x in game.m.m):
        raise ValidationError("induced subset game needs every m_k = 1")
    K = game.K
    return SubsetGame.from_function(
        K, lambda S: float(game.v.of_profile(tuple(1 if r in S else 0 for r in range(K))))
    )


def psi_split_reformulated(T: int, T_prime: int, m_others: Sequence[int],
                           v: CharacteristicFunction) -> float:
    """Payoff of the first of two split identities (capacities T and T'),
    written as sums over the profiles of the remaining identities only.
    """
    if T < 1 or T_prime < 1:
        raise ValidationError("split capacities must both be >= 1")
    if not v.is_total_count:
        raise ValidationError("reformulation needs a total-count characteristic function")
    m_others = tuple(int(x) for x in m_others)
    if v.n_max < sum(m_others) + T + T_prime:
        raise ValidationError("value table too short for the split game")

    def grad(s, t):
        return v.of_total(s + t) - v.of_total(s + t - 1)

    first, second = [], []
    for (s, mc), cnt in _profile_stats(m_others).items():
        for t in range(1, T + 1):
            first.append(cnt * t * coeff_c(t, s, mc) * grad(s, t))
            for t1 in range(1, T_prime + 1):
                second.append(
                    cnt * t * coeff_c(t + t1, s, mc) * (grad(s, t1 + t) - grad(s, t1 + t - 1))
                )
    return math.fsum(first) + math.fsum(second)
