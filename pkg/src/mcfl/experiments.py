"""Splitting-cost experiments and the pricing study.

A splitting experiment draws each honest agent's samples from its own seeded
stream, then runs the simulator twice on the same samples: once with one
identity per agent and once with every agent's samples cut into fake
identities. The unsplit run at the baseline interval fixes the reference
estimate; each configuration is then searched for the fewest syncs that land
within ``tol`` of it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import decisions as dec
from .errors import ValidationError
from .game_core import pricing_value, pricing_value_mc
from .fl_sim import FLConfig, FLResult, SyncSearchResult, local_gd_run, min_sync_search


@dataclass(frozen=True)
class SplitExperiment:
    problem: str  # "newsvendor" or "portfolio"
    model: dec.LinearDemandModel
    m: tuple[int, ...]
    parts: tuple[tuple[int, ...], ...]
    fl: FLConfig
    tol: float
    scaling: str = "global"
    nv: dec.NewsvendorParams | None = None
    alpha_risk: float = 0.5
    n_test_contexts: int = 2000

    def __post_init__(self):
        if len(self.parts) != len(self.m):
            raise ValidationError("need one partition per agent")
        for mk, part in zip(self.m, self.parts):
            if sum(part) != mk or any(p < 1 for p in part):
                raise ValidationError(f"partition {list(part)} does not split {mk} samples")
        if self.problem == "newsvendor" and self.nv is None:
            raise ValidationError("newsvendor experiment needs NewsvendorParams")
        if self.problem not in ("newsvendor", "portfolio"):
            raise ValidationError(f"unknown problem {self.problem!r}")
        if not self.tol > 0:
            raise ValidationError("tol must be positive")


def newsvendor_experiment(**overrides) -> SplitExperiment:
    """Two agents with two samples each, split into four singletons."""
    base = dict(
        problem="newsvendor",
        model=dec.LinearDemandModel((1.0,), sigma=1.5, sigma_x=2.0),
        m=(2, 2),
        parts=((1, 1), (1, 1)),
        fl=FLConfig(rho=0.1, theta0=2.0, T=55, H=10, output="running-average"),
        tol=0.1,
        nv=dec.NewsvendorParams(h=0.1, b=0.9, lam=1.0),
    )
    base.update(overrides)
    return SplitExperiment(**base)


def portfolio_experiment(**overrides) -> SplitExperiment:
    """Two agents with eight samples each, split into four identities of four."""
    base = dict(
        problem="portfolio",
        model=dec.LinearDemandModel((1.0,), sigma=0.01, sigma_x=1.0),
        m=(8, 8),
        parts=((4, 4), (4, 4)),
        fl=FLConfig(rho=0.1, theta0=2.0, T=55, H=10, output="running-average"),
        tol=1e-3,
        alpha_risk=0.5,
    )
    base.update(overrides)
    return SplitExperiment(**base)


def agent_datasets(exp: SplitExperiment, seed: int) -> list[dec.IdentityDataset]:
    return [
        dec.generate_dataset(exp.model, mk, dec.identity_seed(seed, k), identity=k)
        for k, mk in enumerate(exp.m)
    ]


def split_datasets(exp: SplitExperiment, agents: Sequence[dec.IdentityDataset]):
    out = []
    for ds, part in zip(agents, exp.parts):
        out.extend(dec.split_dataset(ds, part, first_identity=len(out)))
    return out


def _losses(exp: SplitExperiment, datasets):
    return dec.identity_losses(datasets, exp.problem, exp.scaling, exp.nv)


def _reward(exp: SplitExperiment, theta_hat, contexts) -> float:
    if exp.problem == "newsvendor":
        return dec.nv_contextual_reward(theta_hat, exp.model, exp.nv, contexts)
    return dec.portfolio_contextual_profit(theta_hat, exp.model, exp.alpha_risk, contexts)


@dataclass
class SplitOutcome:
    seed: int
    reference: np.ndarray
    baseline: FLResult
    split_fixed: FLResult
    nosplit_search: SyncSearchResult
    split_search: SyncSearchResult
    rewards: dict = field(default_factory=dict)

    @property
    def n_sync_pair(self) -> tuple[int | None, int | None]:
        return self.nosplit_search.n_sync, self.split_search.n_sync

    @property
    def split_needs_more(self) -> bool:
        a, b = self.n_sync_pair
        return a is not None and b is not None and b > a

    @property
    def sync_ratio(self) -> float | None:
        """Ratio of inclusive sync counts (split over unsplit)."""
        if not (self.nosplit_search.found and self.split_search.found):
            return None
        return self.split_search.n_sync_inclusive / self.nosplit_search.n_sync_inclusive


def run_split_experiment(exp: SplitExperiment, seed: int, with_rewards: bool = True) -> SplitOutcome:
    agents = agent_datasets(exp, seed)
    honest = _losses(exp, agents)
    fake = _losses(exp, split_datasets(exp, agents))

    baseline = local_gd_run(honest, exp.fl)
    ref = baseline.output
    baseline = local_gd_run(honest, exp.fl, reference=ref)
    split_fixed = local_gd_run(fake, exp.fl, reference=ref)
    ns = min_sync_search(honest, exp.fl, ref, exp.tol)
    sp = min_sync_search(fake, exp.fl, ref, exp.tol)

    rewards = {}
    if with_rewards:
        rng = np.random.default_rng(dec.identity_seed(seed, 10_000))
        contexts = rng.normal(0.0, exp.model.sigma_x, size=(exp.n_test_contexts, exp.model.p))
        rewards["oracle"] = _reward(exp, exp.model.theta, contexts)
        rewards["no_split"] = _reward(exp, baseline.output, contexts)
        rewards["split_fixed_sync"] = _reward(exp, split_fixed.output, contexts)
        if sp.found:
            rewards["split_min_sync"] = _reward(exp, sp.result.output, contexts)
    return SplitOutcome(seed, ref, baseline, split_fixed, ns, sp, rewards)


@dataclass
class SplitSummary:
    pairs: list[tuple[int | None, int | None]]
    ratios: list[float]

    @property
    def n(self) -> int:
        return len(self.pairs)

    @property
    def strictly_more(self) -> int:
        return sum(1 for a, b in self.pairs if a is not None and b is not None and b > a)

    @property
    def split_not_found(self) -> int:
        return sum(1 for _, b in self.pairs if b is None)

    @property
    def fraction_more(self) -> float:
        return self.strictly_more / self.n if self.n else 0.0

    @property
    def median_ratio(self) -> float | None:
        return float(np.median(self.ratios)) if self.ratios else None


def summarize_seeds(exp: SplitExperiment, seeds: Sequence[int]) -> SplitSummary:
    pairs, ratios = [], []
    for s in seeds:
        out = run_split_experiment(exp, s, with_rewards=False)
        pairs.append(out.n_sync_pair)
        if out.sync_ratio is not None:
            ratios.append(out.sync_ratio)
    return SplitSummary(pairs, ratios)


# ---------------------------------------------------------------------------
# pricing

@dataclass
class PricingRow:
    n: int
    closed_form: float
    erlang_mc: float
    erlang_se: float
    decision_mc: float
    decision_se: float


def pricing_study(ns: Sequence[int], lam: float = 1.0, draws: int = 10**6, reps: int = 10**5,
                  seed: int = 0) -> list[PricingRow]:
    """Closed-form pricing value next to two Monte Carlo estimates: the Erlang
    integral and the end-to-end 'price at the sample mean' simulation."""
    rows = []
    for n in ns:
        mc, se = pricing_value_mc(n, lam, draws, dec.identity_seed(seed, 2 * n))
        dmc, dse = dec.pricing_revenue_mc(n, lam, reps, dec.identity_seed(seed, 2 * n + 1))
        rows.append(PricingRow(n, pricing_value(n) / lam, mc, se, dmc, dse))
    return rows


def efficiency_argmax(curve: Sequence[tuple[int, float]]) -> tuple[int, float]:
    n, val = max(curve, key=lambda nv: nv[1])
    return n, val


def pricing_lipschitz(lam_true: float, theta_hats) -> float:
    """Fitted constant for |z* - realised revenue| <= L |theta_hat - theta*|."""
    theta_star = 1.0 / lam_true
    return dec.fit_lipschitz_constant(
        theta_hats, theta_star, lambda th: dec.pricing_expected_revenue(float(th), lam_true)
    )


def lipschitz_holds(lam_true: float, theta_hats, L: float) -> bool:
    z_star = dec.pricing_expected_revenue(1.0 / lam_true, lam_true)
    return all(
        abs(z_star - dec.pricing_expected_revenue(float(th), lam_true))
        <= L * abs(float(th) - 1.0 / lam_true) + 1e-15
        for th in np.atleast_1d(theta_hats)
    )


def finite_interior_argmax(curve) -> bool:
    n_best, _ = efficiency_argmax(curve)
    return curve[0][0] < n_best < curve[-1][0]
