"""Decision problems built on a linear data model: contextual newsvendor,
mean-variance portfolio and exponential-demand pricing.

Each problem supplies per-identity losses for the simulator, a plug-in
decision for an estimated parameter and an evaluation of that decision under
the true distribution. Newsvendor is natively a cost; reports use
reward = -cost so that surplus always means "more is better".
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .errors import ValidationError
from .fl_sim import LocalLoss


def identity_seed(master_seed: int, identity: int) -> np.random.SeedSequence:
    """Independent stream for one identity.

    Uses numpy's SeedSequence hashing of ``(master_seed, identity)``, so adding
    identities never changes the streams of existing ones.
    """
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(identity),))


# ---------------------------------------------------------------------------
# data

@dataclass(frozen=True)
class LinearDemandModel:
    """``response = x' theta_star + sigma * eps`` with ``x ~ N(0, sigma_x^2 I)``."""

    theta_star: tuple[float, ...]
    sigma: float
    sigma_x: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "theta_star", tuple(float(t) for t in np.atleast_1d(self.theta_star)))
        if self.sigma < 0:
            raise ValidationError("noise std must be non-negative")
        if not self.sigma_x > 0:
            raise ValidationError("feature std must be positive")

    @property
    def p(self) -> int:
        return len(self.theta_star)

    @property
    def theta(self) -> np.ndarray:
        return np.array(self.theta_star)


@dataclass(frozen=True)
class IdentityDataset:
    x: np.ndarray
    y: np.ndarray
    identity: int = 0

    def __post_init__(self):
        x = np.array(self.x, dtype=float, ndmin=2)
        y = np.array(self.y, dtype=float).reshape(-1)
        if x.shape[0] != y.shape[0]:
            raise ValidationError(f"{x.shape[0]} feature rows but {y.shape[0]} responses")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]


def generate_dataset(model: LinearDemandModel, n: int, seed, identity: int = 0) -> IdentityDataset:
    if n < 1:
        raise ValidationError("n must be >= 1")
    rng = np.random.default_rng(seed)
    x = rng.normal(0.0, model.sigma_x, size=(n, model.p))
    eps = rng.normal(0.0, 1.0, size=n)
    return IdentityDataset(x, x @ model.theta + model.sigma * eps, identity)


def split_dataset(ds: IdentityDataset, parts: Sequence[int], first_identity: int = 0
                  ) -> list[IdentityDataset]:
    """Cut consecutive row blocks of the given sizes into new identities."""
    if sum(parts) != ds.n or any(p < 1 for p in parts):
        raise ValidationError(f"parts {list(parts)} do not partition {ds.n} rows")
    out, start = [], 0
    for j, size in enumerate(parts):
        out.append(IdentityDataset(ds.x[start : start + size], ds.y[start : start + size],
                                   first_identity + j))
        start += size
    return out


def write_datasets_csv(datasets: Sequence[IdentityDataset], path) -> None:
    p = datasets[0].p
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["identity"] + [f"x_{j + 1}" for j in range(p)] + ["response"])
        for ds in datasets:
            for row, resp in zip(ds.x, ds.y):
                w.writerow([ds.identity] + [repr(float(v)) for v in row] + [repr(float(resp))])


def read_datasets_csv(path) -> list[IdentityDataset]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != "identity" or header[-1] != "response" or len(header) < 3:
            raise ValidationError(f"{path}: expected header identity,x_1..x_p,response")
        rows: dict[int, list] = {}
        for r in reader:
            rows.setdefault(int(r[0]), []).append([float(v) for v in r[1:]])
    out = []
    for ident in sorted(rows):
        arr = np.array(rows[ident])
        out.append(IdentityDataset(arr[:, :-1], arr[:, -1], ident))
    return out


# ---------------------------------------------------------------------------
# loss scaling

SCALINGS = ("global", "local", "sum")


def scaling_factors(datasets: Sequence[IdentityDataset], scaling: str):
    """Per-identity ``(divisor, regulariser share)``.

    ``global``: divide by the total sample count, regulariser split evenly, so
    the losses add up to (mean data loss + full regulariser).
    ``local``: divide by the identity's own count, full regulariser each; the
    sample-weighted average of these is the same global objective.
    ``sum``: raw sums, regulariser split evenly.
    """
    K = len(datasets)
    total = sum(d.n for d in datasets)
    if scaling == "global":
        return [(float(total), 1.0 / K) for _ in datasets]
    if scaling == "local":
        return [(float(d.n), 1.0) for d in datasets]
    if scaling == "sum":
        return [(1.0, 1.0 / K) for _ in datasets]
    raise ValidationError(f"unknown loss scaling {scaling!r}; choose from {SCALINGS}")


# ---------------------------------------------------------------------------
# newsvendor

@dataclass(frozen=True)
class NewsvendorParams:
    h: float
    b: float
    lam: float = 0.0

    def __post_init__(self):
        if not (self.h > 0 and self.b > 0):
            raise ValidationError("h and b must be positive")
        if self.lam < 0:
            raise ValidationError("regularisation weight must be non-negative")

    @property
    def critical_ratio(self) -> float:
        return self.b / (self.b + self.h)


def nv_loss(w, d, params: NewsvendorParams):
    w, d = np.asarray(w, dtype=float), np.asarray(d, dtype=float)
    return params.h * np.maximum(w - d, 0.0) + params.b * np.maximum(d - w, 0.0)


def nv_subgradient(w, d, params: NewsvendorParams):
    """h above demand, -b below it and 0 exactly at the kink."""
    w, d = np.asarray(w, dtype=float), np.asarray(d, dtype=float)
    return np.where(w > d, params.h, np.where(w < d, -params.b, 0.0))


def nv_local_loss(ds: IdentityDataset, params: NewsvendorParams, share: float = 1.0,
                  divisor: float = 1.0) -> LocalLoss:
    """``sum_j nv(x_j' theta, d_j) / divisor + share * lam * ||theta||^2``."""
    if not 0 < share <= 1:
        raise ValidationError("regulariser share must be in (0, 1]")
    x, d = ds.x, ds.y

    def fn(theta):
        w = x @ theta
        val = nv_loss(w, d, params).sum() / divisor + share * params.lam * theta @ theta
        grad = x.T @ nv_subgradient(w, d, params) / divisor + 2 * share * params.lam * theta
        return val, grad

    return LocalLoss(fn, ds.n, ds.p, f"nv[{ds.identity}]")


def nv_plugin_decision(mu, sigma: float, params: NewsvendorParams):
    """Critical-ratio quantile of N(mu, sigma^2); ``mu`` may be ``x' theta_hat``."""
    if sigma < 0:
        raise ValidationError("sigma must be non-negative")
    z = norm.ppf(params.critical_ratio)
    return np.asarray(mu, dtype=float) + sigma * z if np.ndim(mu) else float(mu) + sigma * z


def nv_empirical_decision(demand_samples, params: NewsvendorParams) -> float:
    """Critical-ratio quantile of an empirical demand distribution."""
    d = np.asarray(demand_samples, dtype=float)
    return float(np.quantile(d, params.critical_ratio, method="inverted_cdf"))


def nv_expected_cost(w, mu, sigma: float, params: NewsvendorParams):
    """Expected cost of ordering ``w`` against N(mu, sigma^2) demand."""
    w, mu = np.asarray(w, dtype=float), np.asarray(mu, dtype=float)
    if sigma == 0:
        return nv_loss(w, mu, params)
    z = (w - mu) / sigma
    over = sigma * (z * norm.cdf(z) + norm.pdf(z))
    under = sigma * (norm.pdf(z) - z * norm.sf(z))
    return params.h * over + params.b * under


def nv_expected_cost_mc(w: float, demand_samples, params: NewsvendorParams):
    c = nv_loss(w, np.asarray(demand_samples, dtype=float), params)
    return float(c.mean()), float(c.std(ddof=1) / math.sqrt(c.size))


def nv_contextual_reward(theta_hat, model: LinearDemandModel, params: NewsvendorParams,
                         contexts: np.ndarray, sigma_known: float | None = None) -> float:
    """Average reward (-expected cost) over the given contexts when the order
    quantity is the plug-in quantile under ``theta_hat``."""
    sigma_hat = model.sigma if sigma_known is None else sigma_known
    contexts = np.atleast_2d(contexts)
    w = nv_plugin_decision(contexts @ np.atleast_1d(theta_hat), sigma_hat, params)
    cost = nv_expected_cost(w, contexts @ model.theta, model.sigma, params)
    return -float(np.mean(cost))


# ---------------------------------------------------------------------------
# portfolio

@dataclass(frozen=True)
class PortfolioParams:
    alpha: float
    sigma: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValidationError("risk weight must be positive")
        if self.sigma < 0:
            raise ValidationError("sigma must be non-negative")


def portfolio_local_loss(ds: IdentityDataset, divisor: float = 1.0) -> LocalLoss:
    """``sum_j (x_j' theta - xi_j)^2 / divisor``."""
    x, xi = ds.x, ds.y

    def fn(theta):
        r = x @ theta - xi
        return r @ r / divisor, 2 * x.T @ r / divisor

    return LocalLoss(fn, ds.n, ds.p, f"pf[{ds.identity}]")


@dataclass(frozen=True)
class PortfolioDecision:
    w: float
    w0: float
    degenerate: bool = False


def portfolio_plugin_decision(mu_hat: float, sigma: float, alpha: float) -> PortfolioDecision:
    """Minimiser of ``alpha((w mu - w0)^2 + w^2 sigma^2) - w mu`` for a single asset.

    At sigma = 0 and mu != 0 the objective is unbounded below along
    ``w0 = w mu``; the unit vector of that ray is returned with the
    degenerate flag set.
    """
    if not alpha > 0:
        raise ValidationError("risk weight must be positive")
    if sigma < 0:
        raise ValidationError("sigma must be non-negative")
    if sigma == 0:
        if mu_hat == 0:
            return PortfolioDecision(0.0, 0.0)
        s = math.copysign(1.0, mu_hat)
        return PortfolioDecision(s, s * mu_hat, degenerate=True)
    w = mu_hat / (2 * alpha * sigma**2)
    return PortfolioDecision(w, w * mu_hat)


def portfolio_expected_cost(w: float, w0: float, mu: float, sigma: float, alpha: float) -> float:
    return alpha * ((w * mu - w0) ** 2 + w**2 * sigma**2) - w * mu


def portfolio_expected_profit(w: float, w0: float, mu: float, sigma: float, alpha: float) -> float:
    return -portfolio_expected_cost(w, w0, mu, sigma, alpha)


def portfolio_profit_mc(w: float, w0: float, xi_samples, alpha: float):
    xi = np.asarray(xi_samples, dtype=float)
    profit = -(alpha * (w * xi - w0) ** 2 - w * xi)
    return float(profit.mean()), float(profit.std(ddof=1) / math.sqrt(profit.size))


def portfolio_contextual_profit(theta_hat, model: LinearDemandModel, alpha: float,
                                contexts: np.ndarray) -> float:
    """Average expected profit over contexts; returns follow N(x' theta_star, sigma^2)."""
    contexts = np.atleast_2d(contexts)
    mu_hat = contexts @ np.atleast_1d(theta_hat)
    mu = contexts @ model.theta
    total = 0.0
    for mh, mt in zip(mu_hat, mu):
        dec = portfolio_plugin_decision(float(mh), model.sigma, alpha)
        total += portfolio_expected_profit(dec.w, dec.w0, float(mt), model.sigma, alpha)
    return total / len(mu)


# ---------------------------------------------------------------------------
# pricing with exponential valuations

def pricing_decision(theta_hat: float) -> float:
    """Revenue-maximising price ``theta_hat`` when valuations are Exp with mean ``theta_hat``."""
    if not theta_hat > 0:
        raise ValidationError("estimated mean valuation must be positive")
    return float(theta_hat)


def pricing_expected_revenue(p, lam_true: float):
    if not lam_true > 0:
        raise ValidationError("rate must be positive")
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0):
        raise ValidationError("price must be positive")
    out = p * np.exp(-lam_true * p)
    return float(out) if out.ndim == 0 else out


def pricing_revenue_mc(n: int, lam_true: float, reps: int, seed) -> tuple[float, float]:
    """Realised revenue of pricing at the sample mean of ``n`` Exp(lam) valuations."""
    rng = np.random.default_rng(seed)
    theta_hat = rng.exponential(1.0 / lam_true, size=(reps, n)).mean(axis=1)
    rev = pricing_expected_revenue(theta_hat, lam_true)
    return float(rev.mean()), float(rev.std(ddof=1) / math.sqrt(reps))


def fit_lipschitz_constant(theta_hats, theta_star, surplus, slack: float = 1.01) -> float:
    """Largest observed ``|surplus(theta*) - surplus(theta_hat)| / |theta_hat - theta*|``
    times ``slack``; points at ``theta*`` are skipped."""
    best = surplus(theta_star)
    ratios = []
    for th in np.atleast_1d(theta_hats):
        gap = abs(float(np.linalg.norm(np.atleast_1d(th) - np.atleast_1d(theta_star))))
        if gap > 0:
            ratios.append(abs(best - surplus(th)) / gap)
    if not ratios:
        raise ValidationError("need at least one estimate away from theta_star")
    return slack * max(ratios)


# ---------------------------------------------------------------------------
# losses for a set of identities

def identity_losses(datasets: Sequence[IdentityDataset], problem: str, scaling: str = "global",
                    nv: NewsvendorParams | None = None) -> list[LocalLoss]:
    """Per-identity losses for ``problem`` in ``{"newsvendor", "portfolio"}``."""
    factors = scaling_factors(datasets, scaling)
    if problem == "newsvendor":
        if nv is None:
            raise ValidationError("newsvendor losses need NewsvendorParams")
        return [nv_local_loss(ds, nv, share, div) for ds, (div, share) in zip(datasets, factors)]
    if problem == "portfolio":
        return [portfolio_local_loss(ds, div) for ds, (div, _) in zip(datasets, factors)]
    raise ValidationError(f"unknown problem {problem!r}")
