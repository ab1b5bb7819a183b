"""JSON scenario configuration (pydantic models, unknown keys rejected)."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticError, model_validator

from .errors import ValidationError

SCENARIOS = (
    "shapley",
    "split-scan",
    "equilibrium",
    "fl-run",
    "fl-sync-search",
    "efficiency",
    "reproduce-nv",
    "reproduce-portfolio",
    "reproduce-pricing",
)
Scenario = Literal[
    "shapley", "split-scan", "equilibrium", "fl-run", "fl-sync-search", "efficiency",
    "reproduce-nv", "reproduce-portfolio", "reproduce-pricing",
]


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ValueSpec(Strict):
    kind: Literal["linear", "concave-power", "pricing", "explicit", "csv"] = "pricing"
    a: float = 1.0
    gamma: float = Field(0.5, gt=0, lt=1)
    values: Optional[list[float]] = None
    path: Optional[str] = None

    @model_validator(mode="after")
    def _needs(self):
        if self.kind == "explicit" and not self.values:
            raise ValueError("kind 'explicit' needs 'values'")
        if self.kind == "csv" and not self.path:
            raise ValueError("kind 'csv' needs 'path'")
        return self


class GameSection(Strict):
    m: list[int] = Field(min_length=1)
    value: ValueSpec = ValueSpec()
    weights: Optional[list[float]] = None

    @model_validator(mode="after")
    def _positive(self):
        if any(x < 1 for x in self.m):
            raise ValueError("every m_k must be >= 1")
        return self


class SplitSection(Strict):
    agent: Optional[int] = None  # None scans every agent
    max_part: int = Field(8, ge=1, le=8)


class FLSection(Strict):
    rho: float = Field(0.1, gt=0)
    theta0: float = 2.0
    T: int = Field(55, ge=1)
    H: int = Field(10, ge=1)
    averaging: Literal["uniform", "sample-weighted"] = "uniform"
    output: Literal["sync-average", "running-average", "last-iterate"] = "sync-average"
    sync_at_start: bool = False

    @model_validator(mode="after")
    def _h_le_t(self):
        if self.H > self.T:
            raise ValueError(f"H={self.H} exceeds T={self.T}")
        return self


class DataSection(Strict):
    theta_star: list[float] = Field(default_factory=lambda: [1.0], min_length=1)
    sigma: float = Field(1.5, ge=0)
    sigma_x: float = Field(2.0, gt=0)


class NewsvendorSection(Strict):
    h: float = Field(0.1, gt=0)
    b: float = Field(0.9, gt=0)
    lam: float = Field(1.0, ge=0)


class ProblemSection(Strict):
    """Data-driven learning problem used by fl-run, fl-sync-search and the reproductions."""

    kind: Literal["newsvendor", "portfolio"] = "newsvendor"
    m: list[int] = Field(default_factory=lambda: [2, 2], min_length=1)
    parts: Optional[list[list[int]]] = None
    data: DataSection = DataSection()
    newsvendor: NewsvendorSection = NewsvendorSection()
    alpha_risk: float = Field(0.5, gt=0)
    scaling: Literal["global", "local", "sum"] = "global"
    tol: float = Field(0.1, gt=0)
    reference: Optional[list[float]] = None
    n_seeds: int = Field(1, ge=1, le=1000)

    @model_validator(mode="after")
    def _parts(self):
        if any(x < 1 for x in self.m):
            raise ValueError("every m_k must be >= 1")
        if self.parts is not None:
            if len(self.parts) != len(self.m):
                raise ValueError("parts needs one partition per agent")
            for mk, part in zip(self.m, self.parts):
                if sum(part) != mk or any(p < 1 for p in part):
                    raise ValueError(f"partition {part} does not split {mk} samples")
        return self


class GuaranteeSection(Strict):
    delta0: float = Field(0.05, gt=0, lt=1)
    beta1: float = Field(1.0, gt=0)
    beta2: float = Field(1.0, gt=0)
    alpha: float = Field(0.5, gt=0)
    L_rw: float = Field(1.0, ge=0)


class ConstantsSection(Strict):
    L: float = Field(gt=0)
    mu: float = Field(gt=0)
    xi: float = Field(0.0, ge=0)
    sigma2: float = Field(0.0, ge=0)


class EfficiencySection(Strict):
    c: float = Field(1e-3, ge=0)
    lam: float = Field(1e-3, gt=0)
    theta0_dist: Optional[float] = Field(None, ge=0)
    constants: Optional[ConstantsSection] = None
    eps: Optional[float] = Field(None, gt=0)


class PricingSection(Strict):
    ns: list[int] = Field(default_factory=lambda: [1, 2, 3, 5, 8], min_length=1)
    lam: float = Field(1.0, gt=0)
    draws: int = Field(10**6, ge=1000)
    reps: int = Field(10**5, ge=1000)
    n_max: int = Field(10**4, ge=2)
    lipschitz_samples: int = Field(2000, ge=10)

    @model_validator(mode="after")
    def _positive(self):
        if any(n < 1 for n in self.ns):
            raise ValueError("pricing sample sizes must be >= 1")
        return self


class ScenarioConfig(Strict):
    scenario: Scenario
    seed: int = Field(0, ge=0, lt=2**64)
    out: Optional[str] = None
    game: Optional[GameSection] = None
    split: SplitSection = SplitSection()
    fl: FLSection = FLSection()
    problem: ProblemSection = ProblemSection()
    guarantee: GuaranteeSection = GuaranteeSection()
    efficiency: EfficiencySection = EfficiencySection()
    pricing: PricingSection = PricingSection()

    @model_validator(mode="after")
    def _sections(self):
        if self.scenario in ("shapley", "split-scan", "equilibrium", "efficiency") and self.game is None:
            raise ValueError(f"scenario '{self.scenario}' needs a 'game' section")
        if self.game is not None and self.game.weights is not None:
            if len(self.game.weights) <= max(self.game.m):
                raise ValueError("game.weights must cover levels 0..max(m)")
        if self.scenario == "split-scan" and self.split.agent is not None and self.game is not None:
            if not 0 <= self.split.agent < len(self.game.m):
                raise ValueError(f"split.agent={self.split.agent} out of range")
        return self


def default_config(scenario: str) -> dict:
    """Baseline settings for the reproduction scenarios (used when no file is given)."""
    if scenario == "reproduce-nv":
        return {
            "scenario": scenario,
            "fl": {"rho": 0.1, "theta0": 2.0, "T": 55, "H": 10, "output": "running-average"},
            "problem": {"kind": "newsvendor", "m": [2, 2], "parts": [[1, 1], [1, 1]],
                        "data": {"theta_star": [1.0], "sigma": 1.5, "sigma_x": 2.0},
                        "newsvendor": {"h": 0.1, "b": 0.9, "lam": 1.0}, "tol": 0.1},
        }
    if scenario == "reproduce-portfolio":
        return {
            "scenario": scenario,
            "fl": {"rho": 0.1, "theta0": 2.0, "T": 55, "H": 10, "output": "running-average"},
            "problem": {"kind": "portfolio", "m": [8, 8], "parts": [[4, 4], [4, 4]],
                        "data": {"theta_star": [1.0], "sigma": 0.01, "sigma_x": 1.0},
                        "alpha_risk": 0.5, "tol": 1e-3},
        }
    if scenario == "reproduce-pricing":
        return {"scenario": scenario}
    raise ValidationError(f"scenario '{scenario}' has no default configuration; pass --config")


def _format_pydantic(err: PydanticError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


def parse_config(raw: dict) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(raw)
    except PydanticError as exc:
        raise ValidationError(_format_pydantic(exc)) from None


def load_config(path) -> tuple[ScenarioConfig, dict]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: top level must be a JSON object")
    return parse_config(raw), raw


def config_hash(cfg: ScenarioConfig) -> str:
    """SHA-256 of the canonical JSON form of the fully defaulted config.

    The output directory is left out so the same run written elsewhere hashes
    identically.
    """
    data = cfg.model_dump(mode="json", exclude={"out"})
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
