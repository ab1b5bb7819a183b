"""Performance-guarantee bounds, surplus totals and system efficiency.

System efficiency is the surplus handed to participants minus the
communication bill ``c * N_sync``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .errors import ValidationError
from .fl_sim import SmoothnessConstants, inclusive_sync_count, theoretical_n_sync_bound
from .game_core import check_profile
from .shapley import AllocationResult


@dataclass(frozen=True)
class GuaranteeParams:
    """Constants of the high-probability error bound; ``delta0`` is the failure
    probability (the same quantity the platform announces as its probability bound)."""

    delta0: float
    beta1: float
    beta2: float
    alpha: float
    L_rw: float = 1.0

    def __post_init__(self):
        if not 0 < self.delta0 < 1:
            raise ValidationError(f"delta0 must lie in (0, 1), got {self.delta0}")
        if not (self.beta1 > 0 and self.beta2 > 0):
            raise ValidationError("beta1 and beta2 must be positive")
        if not self.alpha > 0:
            raise ValidationError("alpha must be positive")
        if self.L_rw < 0:
            raise ValidationError("L_rw must be non-negative")


def epsilon_bound(n: int, params: GuaranteeParams) -> float:
    """``beta1 * ln(beta2 / delta0) * n^(-alpha)``."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    return params.beta1 * math.log(params.beta2 / params.delta0) * n ** (-params.alpha)


def surplus_gap_bound(eps: float, L_rw: float) -> float:
    if eps < 0 or L_rw < 0:
        raise ValidationError("eps and L_rw must be non-negative")
    return L_rw * eps


def agent_surplus_total(alloc: AllocationResult, profile) -> float:
    """Sum of each identity's payoff at the level it actually contributes."""
    tau = check_profile(profile, alloc.game.m)
    vals = [alloc[k, t] for k, t in enumerate(tau) if t > 0]
    if not vals:
        return 0.0
    return math.fsum(float(v) for v in vals)


def system_efficiency(total_surplus: float, c: float, n_sync: int) -> float:
    if c < 0 or n_sync < 0:
        raise ValidationError("c and n_sync must be non-negative")
    return total_surplus - c * n_sync


def theorem2_bound(v_full: float, c: float, consts: SmoothnessConstants, theta0_dist: float,
                   eps: float) -> float:
    """Upper bound on efficiency: ``v_full - c * (required syncs)``."""
    if c < 0:
        raise ValidationError("c must be non-negative")
    return v_full - c * theoretical_n_sync_bound(consts, theta0_dist, eps)


def theorem2_scaling(v_full: float, c: float, lam: float, total_samples: int, alpha: float) -> float:
    """Asymptotic form ``v_full - c * lam * |m|^(3 alpha)``."""
    return v_full - c * lam * total_samples ** (3 * alpha)


def efficiency_curve(v, c: float, lam: float, alpha: float, n_max: int) -> list[tuple[int, float]]:
    """``(n, v(n) - c lam n^(3 alpha))`` for ``n = 1..n_max``; ``v`` maps n to surplus."""
    return [(n, theorem2_scaling(v(n), c, lam, n, alpha)) for n in range(1, n_max + 1)]


@dataclass
class EfficiencyReport:
    surplus: float
    c: float
    n_sync: int
    convention: str = "scheduled"
    bound: float | None = None
    bound_source: str | None = None

    @property
    def pi(self) -> float:
        return system_efficiency(self.surplus, self.c, self.n_sync)

    def to_dict(self) -> dict:
        out = {
            "surplus": self.surplus,
            "c": self.c,
            "n_sync": self.n_sync,
            "pi": self.pi,
            "bound": self.bound,
            "convention": self.convention,
        }
        if self.bound_source is not None:
            out["bound_source"] = self.bound_source
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def efficiency_reports(surplus: float, c: float, T: int, H: int, bound: float | None = None,
                       bound_source: str | None = None) -> dict[str, EfficiencyReport]:
    """Reports under both sync-counting conventions.

    ``scheduled`` counts the averaging epochs ``{H, 2H, ...} < T``;
    ``inclusive`` adds one for the final aggregation producing the output.
    """
    scheduled = (T - 1) // H
    return {
        "scheduled": EfficiencyReport(surplus, c, scheduled, "scheduled", bound, bound_source),
        "inclusive": EfficiencyReport(surplus, c, inclusive_sync_count(T, H), "inclusive",
                                      bound, bound_source),
    }
