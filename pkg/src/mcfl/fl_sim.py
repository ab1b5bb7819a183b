"""Local gradient descent with periodic averaging (FedAvg without sampling).

Every identity starts from the broadcast ``theta0`` and takes full-gradient
steps on its own loss. At synchronisation epochs the platform averages the
freshly updated local iterates and re-broadcasts the average.

Synchronisation epochs are ``{H, 2H, ...}`` below ``T`` by default. Setting
``sync_at_start`` uses ``{0, H, 2H, ...}`` instead, i.e. every epoch with
``t % H == 0``; with ``H = 1`` that averages at every step and reproduces
centralised gradient descent on the averaged loss exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np

from .errors import DivergenceError, ValidationError

Averaging = Literal["uniform", "sample-weighted"]
OutputMode = Literal["sync-average", "running-average", "last-iterate"]


class LocalLoss:
    """Loss held by one identity.

    ``fn(theta)`` returns ``(value, gradient)``; ``n_samples`` is the number
    of observations behind it (used for sample-weighted averaging).
    """

    def __init__(self, fn: Callable[[np.ndarray], tuple[float, np.ndarray]], n_samples: int,
                 dim: int, name: str = ""):
        if n_samples < 1:
            raise ValidationError("a local loss needs at least one sample")
        if dim < 1:
            raise ValidationError("parameter dimension must be >= 1")
        self._fn = fn
        self.n_samples = int(n_samples)
        self.dim = int(dim)
        self.name = name

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValidationError(f"expected a parameter of shape ({self.dim},), got {theta.shape}")
        val, grad = self._fn(theta)
        return float(val), np.asarray(grad, dtype=float).reshape(self.dim)

    def value(self, theta) -> float:
        return self(theta)[0]

    def grad(self, theta) -> np.ndarray:
        return self(theta)[1]

    @classmethod
    def quadratic(cls, A, b=None, c: float = 0.0, n_samples: int = 1, name: str = "quadratic"):
        """``0.5 theta'A theta - b'theta + c``."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        p = A.shape[0]
        b = np.zeros(p) if b is None else np.asarray(b, dtype=float).reshape(p)

        def fn(theta):
            At = A @ theta
            return 0.5 * theta @ At - b @ theta + c, 0.5 * (At + A.T @ theta) - b

        return cls(fn, n_samples, p, name)


def combine_losses(losses: Sequence[LocalLoss], weights: Sequence[float] | None = None,
                   name: str = "combined") -> LocalLoss:
    """Weighted sum of losses (plain sum by default)."""
    if not losses:
        raise ValidationError("nothing to combine")
    dim = losses[0].dim
    if any(l.dim != dim for l in losses):
        raise ValidationError("losses disagree on parameter dimension")
    weights = [1.0] * len(losses) if weights is None else [float(w) for w in weights]

    def fn(theta):
        val, grad = 0.0, np.zeros(dim)
        for w, loss in zip(weights, losses):
            lv, lg = loss(theta)
            val += w * lv
            grad = grad + w * lg
        return val, grad

    return LocalLoss(fn, sum(l.n_samples for l in losses), dim, name)


def averaging_weights(losses: Sequence[LocalLoss], mode: str) -> np.ndarray:
    if mode == "uniform":
        return np.full(len(losses), 1.0 / len(losses))
    if mode == "sample-weighted":
        n = np.array([l.n_samples for l in losses], dtype=float)
        return n / n.sum()
    raise ValidationError(f"unknown averaging mode {mode!r}")


@dataclass(frozen=True)
class FLConfig:
    rho: float
    theta0: float
    T: int
    H: int
    averaging: Averaging = "uniform"
    output: OutputMode = "sync-average"
    sync_at_start: bool = False

    def __post_init__(self):
        if not (self.rho > 0 and math.isfinite(self.rho)):
            raise ValidationError(f"rho must be positive and finite, got {self.rho}")
        if not math.isfinite(self.theta0):
            raise ValidationError("theta0 must be finite")
        if self.T < 1:
            raise ValidationError(f"T must be >= 1, got {self.T}")
        if not 1 <= self.H <= self.T:
            raise ValidationError(f"H must satisfy 1 <= H <= T, got H={self.H}, T={self.T}")
        if self.averaging not in ("uniform", "sample-weighted"):
            raise ValidationError(f"unknown averaging mode {self.averaging!r}")
        if self.output not in ("sync-average", "running-average", "last-iterate"):
            raise ValidationError(f"unknown output mode {self.output!r}")

    def with_H(self, H: int) -> "FLConfig":
        return FLConfig(self.rho, self.theta0, self.T, H, self.averaging, self.output,
                        self.sync_at_start)


def sync_schedule(T: int, H: int, include_start: bool = False) -> tuple[tuple[int, ...], int]:
    """Synchronisation epochs and their count.

    Default: ``{H, 2H, ...}`` intersected with ``[1, T-1]``, so the count is
    ``(T - 1) // H``. With ``include_start`` epoch 0 is added.
    """
    if not 1 <= H <= T:
        raise ValidationError(f"need 1 <= H <= T, got H={H}, T={T}")
    start = 0 if include_start else H
    epochs = tuple(range(start, T, H))
    return epochs, len(epochs)


def inclusive_sync_count(T: int, H: int) -> int:
    """``(T - 1) // H + 1``: the scheduled syncs plus the final output aggregation."""
    return (T - 1) // H + 1


@dataclass
class FLResult:
    config: FLConfig
    output: np.ndarray
    iterates: np.ndarray  # shape (T + 1, K, p)
    sync_epochs: tuple[int, ...]
    sync_values: np.ndarray  # shape (n_sync, p), the averages broadcast at each sync
    held_global: np.ndarray  # shape (T + 1, p): the last broadcast value at each epoch
    weights: np.ndarray
    reference: np.ndarray | None = None
    distances: np.ndarray | None = field(default=None)

    @property
    def n_sync(self) -> int:
        return len(self.sync_epochs)

    @property
    def n_sync_inclusive(self) -> int:
        """Scheduled syncs plus one for the final aggregation that forms the output."""
        return inclusive_sync_count(self.config.T, self.config.H)

    @property
    def mean_iterates(self) -> np.ndarray:
        """Averaging-weighted mean of the local iterates at every epoch, shape (T + 1, p)."""
        return np.einsum("k,tkp->tp", self.weights, self.iterates)

    def distance_to(self, ref) -> float:
        return float(np.linalg.norm(self.output - np.asarray(ref, dtype=float)))

    def write_iterates_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "identity", "component", "value"])
            T1, K, p = self.iterates.shape
            for t in range(T1):
                for k in range(K):
                    for j in range(p):
                        w.writerow([t, k, j, repr(float(self.iterates[t, k, j]))])

    def write_distance_csv(self, path) -> None:
        if self.distances is None:
            raise ValidationError("run had no reference, so there is no distance trace")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "distance_to_ref"])
            for t, d in enumerate(self.distances):
                w.writerow([t, repr(float(d))])


def _check_losses(losses: Sequence[LocalLoss]) -> int:
    if len(losses) < 1:
        raise ValidationError("need at least one identity")
    p = losses[0].dim
    if any(l.dim != p for l in losses):
        raise ValidationError("identities disagree on parameter dimension")
    return p


def local_gd_run(losses: Sequence[LocalLoss], cfg: FLConfig, reference=None) -> FLResult:
    p = _check_losses(losses)
    K = len(losses)
    wts = averaging_weights(losses, cfg.averaging)
    epochs, _ = sync_schedule(cfg.T, cfg.H, cfg.sync_at_start)
    sync_set = set(epochs)

    theta = np.full((K, p), float(cfg.theta0))
    iterates = np.empty((cfg.T + 1, K, p))
    iterates[0] = theta
    held = np.empty((cfg.T + 1, p))
    held[0] = cfg.theta0
    glob = np.full(p, float(cfg.theta0))
    sync_values = []

    # overflow is reported as DivergenceError below, not as a numpy warning
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(cfg.T):
            step = np.empty_like(theta)
            for k, loss in enumerate(losses):
                _, g = loss(theta[k])
                if not np.all(np.isfinite(g)):
                    raise DivergenceError(t, f"non-finite gradient for identity {k}")
                step[k] = theta[k] - cfg.rho * g
            if not np.all(np.isfinite(step)):
                raise DivergenceError(t)
            if t in sync_set:
                glob = wts @ step
                step[:] = glob
                sync_values.append(glob.copy())
            theta = step
            iterates[t + 1] = theta
            held[t + 1] = glob

    last = wts @ theta
    if cfg.output == "last-iterate":
        out = last
    elif cfg.output == "sync-average":
        # with no sync at all there is nothing to average; fall back to the final aggregation
        out = np.mean(sync_values, axis=0) if sync_values else last
    else:
        out = held[: cfg.T].mean(axis=0)

    res = FLResult(
        config=cfg,
        output=out,
        iterates=iterates,
        sync_epochs=epochs,
        sync_values=np.array(sync_values).reshape(len(sync_values), p),
        held_global=held,
        weights=wts,
    )
    if reference is not None:
        ref = np.asarray(reference, dtype=float).reshape(p)
        res.reference = ref
        res.distances = np.linalg.norm(res.mean_iterates - ref, axis=1)
    return res


def centralized_gd(loss: LocalLoss, rho: float, T: int, theta0) -> np.ndarray:
    """Plain gradient descent; returns the trajectory, shape (T + 1, p)."""
    theta = np.broadcast_to(np.asarray(theta0, dtype=float), (loss.dim,)).copy()
    traj = np.empty((T + 1, loss.dim))
    traj[0] = theta
    for t in range(T):
        _, g = loss(theta)
        theta = theta - rho * g
        if not np.all(np.isfinite(theta)):
            raise DivergenceError(t)
        traj[t + 1] = theta
    return traj


@dataclass
class SyncSearchResult:
    found: bool
    H: int | None
    n_sync: int | None
    result: FLResult | None
    distances: dict = field(default_factory=dict)  # H -> achieved distance, in scan order

    @property
    def n_sync_inclusive(self) -> int | None:
        return None if self.result is None else self.result.n_sync_inclusive


def min_sync_search(losses: Sequence[LocalLoss], cfg: FLConfig, theta_ref, tol: float
                    ) -> SyncSearchResult:
    """Largest H (fewest syncs) whose output lands within ``tol`` of ``theta_ref``.

    H is scanned from T down to 1 with everything else held fixed.
    """
    if not tol > 0:
        raise ValidationError("tol must be positive")
    ref = np.asarray(theta_ref, dtype=float)
    if not np.all(np.isfinite(ref)):
        raise ValidationError("reference must be finite")
    seen = {}
    for H in range(cfg.T, 0, -1):
        res = local_gd_run(losses, cfg.with_H(H))
        d = res.distance_to(ref)
        seen[H] = d
        if d <= tol:
            return SyncSearchResult(True, H, res.n_sync, res, seen)
    return SyncSearchResult(False, None, None, None, seen)


# ---------------------------------------------------------------------------
# theory-side quantities

@dataclass(frozen=True)
class SmoothnessConstants:
    L: float
    mu: float
    xi: float
    sigma2: float
    min_eig: float | None = None
    source: str = "config"

    def __post_init__(self):
        if not self.L > 0 or not self.mu > 0:
            raise ValidationError("L and mu must be positive")
        if self.L < self.mu * (1 - 1e-9):
            raise ValidationError("need L >= mu")
        if self.xi < 0 or self.sigma2 < 0:
            raise ValidationError("xi and sigma2 must be non-negative")

    @property
    def nonconvex(self) -> bool:
        return self.min_eig is not None and self.min_eig < -1e-8


def theoretical_schedule(T: int, total_samples: int, L: float) -> tuple[int, float]:
    """``H = T^(1/4) |m|^(-3/4)`` rounded into ``[1, T]``; ``rho = sqrt|m| / (4 L sqrt T)``."""
    if T < 1 or total_samples < 1 or not L > 0:
        raise ValidationError("need T >= 1, total_samples >= 1, L > 0")
    raw = T**0.25 * total_samples**-0.75
    H = int(min(max(round(raw), 1), T))
    rho = math.sqrt(total_samples) / (4 * L * math.sqrt(T))
    return H, rho


def theoretical_n_sync_bound(consts: SmoothnessConstants, theta0_dist: float, eps: float) -> float:
    if not eps > 0:
        raise ValidationError("eps must be positive")
    L, mu = consts.L, consts.mu
    core = math.sqrt(64 * L * theta0_dist**2 / mu + 12 * consts.sigma2 / (L * mu))
    return (core + consts.xi / (4 * L)) ** 3 * eps**-3


def _fd_hessian(loss: LocalLoss, theta: np.ndarray, h: float) -> np.ndarray:
    p = theta.size
    H = np.empty((p, p))
    for i in range(p):
        e = np.zeros(p)
        e[i] = h
        H[:, i] = (loss.grad(theta + e) - loss.grad(theta - e)) / (2 * h)
    return 0.5 * (H + H.T)


def estimate_constants(losses: Sequence[LocalLoss], theta_star=None, probe_radius: float = 1.0,
                       n_probe: int = 200, seed: int = 0, h: float = 1e-5,
                       rho: float | None = None, max_iter: int = 100_000) -> SmoothnessConstants:
    """Numerical L, mu, xi and sigma^2 for the summed objective.

    L and mu are the extreme eigenvalues of a central-difference Hessian at the
    optimum. xi is the largest local gradient norm seen on random points in a
    box of half-width ``probe_radius`` around the optimum. sigma^2 is the mean
    over identities of the squared local gradient norm at the optimum. A
    negative eigenvalue is reported through ``nonconvex`` rather than raised.
    """
    p = _check_losses(losses)
    total = combine_losses(losses)
    if theta_star is None:
        H0 = _fd_hessian(total, np.zeros(p), h)
        step = rho if rho is not None else 1.0 / max(np.linalg.eigvalsh(H0).max(), 1e-12)
        theta = np.zeros(p)
        for _ in range(max_iter):
            g = total.grad(theta)
            if np.linalg.norm(g) <= 1e-10:
                break
            theta = theta - step * g
        theta_star = theta
    theta_star = np.asarray(theta_star, dtype=float).reshape(p)
    eig = np.linalg.eigvalsh(_fd_hessian(total, theta_star, h))
    rng = np.random.default_rng(seed)
    probes = theta_star + rng.uniform(-probe_radius, probe_radius, size=(n_probe, p))
    xi = max(float(np.linalg.norm(l.grad(x))) for x in probes for l in losses)
    sigma2 = float(np.mean([np.sum(l.grad(theta_star) ** 2) for l in losses]))
    min_eig = float(eig.min())
    mu = min_eig if min_eig > 0 else max(float(eig[eig > 0].min()) if np.any(eig > 0) else 1e-12, 1e-12)
    return SmoothnessConstants(
        L=float(eig.max()), mu=mu, xi=xi, sigma2=sigma2,
        min_eig=min_eig, source="estimated",
    )
