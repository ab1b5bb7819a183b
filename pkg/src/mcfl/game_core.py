"""Participation profiles, profile enumeration and characteristic functions.

Identities are indexed from 0. A profile ``tau`` is a tuple of per-identity
sample counts with ``0 <= tau[k] <= m[k]``.
"""

from __future__ import annotations

import csv
import itertools
import math
import os
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import EnumerationTooLargeError, InvalidDecrementError, ValidationError

DEFAULT_ENUM_CAP = 10**7

Profile = tuple[int, ...]


def enum_cap() -> int:
    """Current enumeration cap, honouring the ``MCFL_ENUM_CAP`` override."""
    raw = os.environ.get("MCFL_ENUM_CAP")
    if raw is None or raw == "":
        return DEFAULT_ENUM_CAP
    try:
        cap = int(raw)
    except ValueError as exc:
        raise ValidationError(f"MCFL_ENUM_CAP must be an integer, got {raw!r}") from exc
    if cap < 1:
        raise ValidationError("MCFL_ENUM_CAP must be positive")
    return cap


def check_enumeration(size: int, cap: int | None = None) -> None:
    cap = enum_cap() if cap is None else cap
    if size > cap:
        raise EnumerationTooLargeError(size, cap)


@dataclass(frozen=True)
class MaxDataVector:
    """Per-identity maximum sample counts."""

    m: tuple[int, ...]

    def __init__(self, m: Sequence[int]):
        m = tuple(int(x) for x in m)
        if len(m) < 1:
            raise ValidationError("a game needs at least one identity")
        if any(x < 1 for x in m):
            raise ValidationError(f"every m_k must be >= 1, got {list(m)}")
        object.__setattr__(self, "m", m)

    @property
    def K(self) -> int:
        return len(self.m)

    @property
    def total(self) -> int:
        return sum(self.m)

    @property
    def n_profiles(self) -> int:
        return math.prod(x + 1 for x in self.m)

    def __iter__(self):
        return iter(self.m)

    def __len__(self):
        return len(self.m)

    def __getitem__(self, k):
        return self.m[k]


def as_max_vector(m) -> MaxDataVector:
    return m if isinstance(m, MaxDataVector) else MaxDataVector(m)


def check_profile(tau: Sequence[int], m) -> Profile:
    m = as_max_vector(m)
    tau = tuple(int(x) for x in tau)
    if len(tau) != m.K:
        raise ValidationError(f"profile length {len(tau)} does not match K={m.K}")
    for k, (t, mk) in enumerate(zip(tau, m.m)):
        if not 0 <= t <= mk:
            raise ValidationError(f"tau[{k}]={t} outside [0, {mk}]")
    return tau


def enumerate_profiles(m, cap: int | None = None) -> list[Profile]:
    """All profiles of ``m`` in lexicographic order (last index fastest)."""
    m = as_max_vector(m)
    check_enumeration(m.n_profiles, cap)
    return list(itertools.product(*(range(x + 1) for x in m.m)))


def iter_profiles(m_seq: Sequence[int], cap: int | None = None):
    """Like :func:`enumerate_profiles` but lazy, and accepts an empty vector.

    An empty vector yields the single empty profile; this is what the
    "all other identities" enumeration needs for a sole-agent game.
    """
    size = math.prod(x + 1 for x in m_seq)
    check_enumeration(size, cap)
    return itertools.product(*(range(x + 1) for x in m_seq))


def unmet_set(tau: Sequence[int], m, k: int) -> set[int]:
    """Identities other than ``k`` that have not reached their maximum."""
    m = as_max_vector(m)
    if not 0 <= k < m.K:
        raise ValidationError(f"identity index {k} out of range for K={m.K}")
    tau = check_profile(tau, m)
    return {r for r in range(m.K) if r != k and tau[r] != m.m[r]}


def decrement(tau: Sequence[int], k: int) -> Profile:
    tau = tuple(tau)
    if not 0 <= k < len(tau):
        raise ValidationError(f"identity index {k} out of range")
    if tau[k] < 1:
        raise InvalidDecrementError(f"cannot decrement tau[{k}]=0")
    return tau[:k] + (tau[k] - 1,) + tau[k + 1 :]


def pricing_value(n: int) -> float:
    """Expected realised revenue of the sample-mean pricing rule with n samples.

    ``(n / (n + 1)) ** (n + 1)``, evaluated through ``log1p`` so large n stays
    accurate.
    """
    if n < 0:
        raise ValidationError("sample count must be non-negative")
    if n == 0:
        return 0.0
    return math.exp((n + 1) * math.log1p(-1.0 / (n + 1)))


def erlang_samples(shape: int, rate: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """Erlang(shape, rate) draws as sums of ``shape`` unit exponentials."""
    return rng.standard_exponential((size, shape)).sum(axis=1) / rate


def pricing_value_mc(n: int, rate: float = 1.0, sample_count: int = 10**6, seed: int = 0):
    """Monte Carlo estimate of E[X exp(-rate X)] for X ~ Erlang(n, n * rate).

    Returns ``(mean, standard_error)``. At ``rate=1`` the target is
    :func:`pricing_value`; in general it is ``pricing_value(n) / rate``.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    if rate <= 0:
        raise ValidationError("rate must be positive")
    if sample_count < 1000:
        raise ValidationError("sample_count must be >= 1000")
    rng = np.random.default_rng(seed)
    x = erlang_samples(n, n * rate, sample_count, rng)
    y = x * np.exp(-rate * x)
    return float(y.mean()), float(y.std(ddof=1) / math.sqrt(sample_count))


class CharacteristicFunction:
    """Coalition surplus, either as a table over total sample counts or a
    callable over full profiles. ``v`` of the empty coalition is always 0.
    """

    def __init__(self, values=None, *, profile_fn: Callable[[Profile], float] | None = None,
                 n_max: int | None = None, label: str = "explicit", oracle_surplus=None):
        if (values is None) == (profile_fn is None):
            raise ValidationError("give exactly one of a value table or a profile function")
        self.label = label
        self.oracle_surplus = oracle_surplus
        if values is not None:
            values = tuple(values)
            if len(values) < 2:
                raise ValidationError("a value table must cover at least n = 0 and n = 1")
            if values[0] != 0:
                raise ValidationError(f"v(0) must be 0, got {values[0]}")
            if not all(math.isfinite(float(x)) for x in values):
                raise ValidationError("value table contains non-finite entries")
            self.kind = "total-count"
            self.values = values
            self.n_max = len(values) - 1
            self._profile_fn = None
        else:
            self.kind = "profile"
            self.values = None
            self.n_max = n_max
            self._profile_fn = profile_fn

    @property
    def is_total_count(self) -> bool:
        return self.kind == "total-count"

    def of_total(self, n: int):
        if not self.is_total_count:
            raise ValidationError("profile-form characteristic function has no total-count view")
        if not 0 <= n <= self.n_max:
            raise ValidationError(f"v({n}) requested outside table range 0..{self.n_max}")
        return self.values[n]

    def of_profile(self, tau: Sequence[int]):
        if self.is_total_count:
            return self.of_total(sum(tau))
        if not any(tau):
            return 0.0
        return self._profile_fn(tuple(tau))

    def __call__(self, arg):
        if isinstance(arg, (int, np.integer)):
            return self.of_total(int(arg))
        return self.of_profile(arg)

    def __add__(self, other: "CharacteristicFunction") -> "CharacteristicFunction":
        if self.is_total_count and other.is_total_count:
            n = min(self.n_max, other.n_max)
            return CharacteristicFunction(
                [a + b for a, b in zip(self.values[: n + 1], other.values[: n + 1])],
                label=f"{self.label}+{other.label}",
            )
        return CharacteristicFunction(
            profile_fn=lambda tau: self.of_profile(tau) + other.of_profile(tau),
            label=f"{self.label}+{other.label}",
        )

    def is_monotone(self) -> bool:
        if not self.is_total_count:
            raise ValidationError("monotonicity check needs a value table")
        return all(b >= a for a, b in zip(self.values, self.values[1:]))

    def __repr__(self):
        if self.is_total_count:
            return f"CharacteristicFunction({self.label}, n_max={self.n_max})"
        return f"CharacteristicFunction({self.label}, profile form)"


def make_value_table(kind: str, n_max: int, *, a: float = 1.0, gamma: float = 0.5,
                     values: Sequence[float] | None = None, monotone: bool = False
                     ) -> CharacteristicFunction:
    """Build a total-count characteristic function over ``0..n_max``.

    ``kind`` is one of ``linear`` (a*n), ``concave-power`` (n**gamma, 0<gamma<1),
    ``pricing`` or ``explicit`` (``values`` given, must start at 0).
    """
    if n_max < 1:
        raise ValidationError("n_max must be >= 1")
    if kind == "linear":
        table = [a * n for n in range(n_max + 1)]
    elif kind == "concave-power":
        if not 0 < gamma < 1:
            raise ValidationError("concave-power needs 0 < gamma < 1")
        table = [float(n) ** gamma for n in range(n_max + 1)]
    elif kind == "pricing":
        table = [pricing_value(n) for n in range(n_max + 1)]
    elif kind == "explicit":
        if values is None:
            raise ValidationError("explicit kind needs values")
        table = list(values)
        if len(table) < n_max + 1:
            raise ValidationError(f"explicit table covers 0..{len(table) - 1}, need 0..{n_max}")
        table = table[: n_max + 1]
        if table[0] != 0:
            raise ValidationError(f"explicit table must start with v(0)=0, got {table[0]}")
    else:
        raise ValidationError(f"unknown value-table kind {kind!r}")
    v = CharacteristicFunction(table, label=kind)
    if monotone and not v.is_monotone():
        raise ValidationError("value table flagged monotone is decreasing somewhere")
    return v


def random_value_table(n_max: int, rng: np.random.Generator, shape: str = "monotone"
                       ) -> CharacteristicFunction:
    """Seeded random table with v(0)=0.

    ``monotone``: non-decreasing with arbitrary increments in [0, 1).
    ``concave``: cumulative sums of strictly decreasing positive increments.
    ``linear``: constant positive increment.
    """
    if shape == "monotone":
        inc = rng.uniform(0.0, 1.0, size=n_max)
    elif shape == "concave":
        inc = np.sort(rng.uniform(0.05, 1.0, size=n_max))[::-1]
        # ties would make the table only weakly concave
        inc = inc + np.linspace(1e-3, 0.0, n_max)
    elif shape == "linear":
        inc = np.full(n_max, rng.uniform(0.1, 2.0))
    else:
        raise ValidationError(f"unknown random table shape {shape!r}")
    table = np.concatenate([[0.0], np.cumsum(inc)])
    return CharacteristicFunction(table.tolist(), label=f"random-{shape}")


def load_value_table_csv(path) -> CharacteristicFunction:
    """Read a ``n,v`` CSV whose rows cover ``0..n_max`` contiguously."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["n", "v"]:
            raise ValidationError(f"{path}: expected header 'n,v'")
        rows = [(int(r["n"]), float(r["v"])) for r in reader]
    rows.sort()
    if [n for n, _ in rows] != list(range(len(rows))):
        raise ValidationError(f"{path}: rows must cover n = 0..n_max contiguously")
    return make_value_table("explicit", len(rows) - 1, values=[v for _, v in rows])


def write_value_table_csv(v: CharacteristicFunction, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "v"])
        for n, val in enumerate(v.values):
            w.writerow([n, repr(float(val))])


@dataclass(frozen=True)
class GameSpec:
    m: MaxDataVector
    v: CharacteristicFunction

    def __init__(self, m, v: CharacteristicFunction):
        m = as_max_vector(m)
        if v.is_total_count and v.n_max < m.total:
            raise ValidationError(
                f"value table covers 0..{v.n_max} but the game needs 0..{m.total}"
            )
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "v", v)

    @property
    def K(self) -> int:
        return self.m.K
