"""Command-line scenario runner.

    mcfl <scenario> [--config FILE] [--out DIR] [--seed N] [--validate-only]
    mcfl run --config FILE          # scenario taken from the file
    mcfl validate --config FILE
    mcfl schema

Exit codes: 0 success, 2 invalid input, 3 numerical divergence,
4 enumeration cap exceeded.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import decisions as dec
from . import experiments as ex
from .config import SCENARIOS, ScenarioConfig, config_hash, default_config, load_config, parse_config
from .efficiency import (
    GuaranteeParams,
    agent_surplus_total,
    efficiency_curve,
    efficiency_reports,
    epsilon_bound,
    theorem2_bound,
    theorem2_scaling,
)
from .errors import DivergenceError, EnumerationTooLargeError, MCFLError, ValidationError
from .fl_sim import (
    FLConfig,
    SmoothnessConstants,
    estimate_constants,
    local_gd_run,
    min_sync_search,
    sync_schedule,
)
from .game_core import GameSpec, load_value_table_csv, make_value_table, pricing_value
from .manipulation import equilibrium_profile, partition_payoffs, split_gain
from .shapley import WeightFunction, mcfl_allocation

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED, EXIT_CAP = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# output helpers

def _plain(obj):
    """numpy scalars/arrays to builtin types for JSON."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


class Outputs:
    def __init__(self, root: Path):
        self.root = root
        self.files: list[str] = []
        root.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.root / name

    def json(self, name: str, data) -> None:
        self.path(name).write_text(json.dumps(_plain(data), sort_keys=True, indent=2) + "\n")

    def csv(self, name: str, header, rows) -> None:
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Outputs, cfg: ScenarioConfig) -> None:
    import pydantic
    import scipy

    manifest = {
        "scenario": cfg.scenario,
        "config_sha256": config_hash(cfg),
        "seed": cfg.seed,
        "versions": {
            "mcfl": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pydantic": pydantic.VERSION,
        },
        "outputs": {name: _sha256(out.root / name) for name in sorted(out.files)},
    }
    (out.root / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


# ---------------------------------------------------------------------------
# builders

def _value_function(cfg: ScenarioConfig, n_max: int):
    spec = cfg.game.value
    if spec.kind == "csv":
        v = load_value_table_csv(spec.path)
        if v.n_max < n_max:
            raise ValidationError(f"game.value.path covers 0..{v.n_max}, need 0..{n_max}")
        return v
    return make_value_table(spec.kind, n_max, a=spec.a, gamma=spec.gamma, values=spec.values)


def _game(cfg: ScenarioConfig) -> GameSpec:
    total = sum(cfg.game.m)
    return GameSpec(cfg.game.m, _value_function(cfg, total))


def _fl_config(cfg: ScenarioConfig) -> FLConfig:
    f = cfg.fl
    return FLConfig(f.rho, f.theta0, f.T, f.H, f.averaging, f.output, f.sync_at_start)


def _experiment(cfg: ScenarioConfig) -> ex.SplitExperiment:
    p = cfg.problem
    parts = p.parts if p.parts is not None else [[1] * mk for mk in p.m]
    return ex.SplitExperiment(
        problem=p.kind,
        model=dec.LinearDemandModel(tuple(p.data.theta_star), p.data.sigma, p.data.sigma_x),
        m=tuple(p.m),
        parts=tuple(tuple(x) for x in parts),
        fl=_fl_config(cfg),
        tol=p.tol,
        scaling=p.scaling,
        nv=dec.NewsvendorParams(p.newsvendor.h, p.newsvendor.b, p.newsvendor.lam),
        alpha_risk=p.alpha_risk,
    )


def _identity_losses(cfg: ScenarioConfig, split: bool):
    exp = _experiment(cfg)
    agents = ex.agent_datasets(exp, cfg.seed)
    sets = ex.split_datasets(exp, agents) if split else agents
    return exp, sets, dec.identity_losses(sets, exp.problem, exp.scaling, exp.nv)


def _run_summary(res) -> dict:
    return {
        "output": res.output,
        "n_sync": res.n_sync,
        "n_sync_inclusive": res.n_sync_inclusive,
        "sync_epochs": list(res.sync_epochs),
        "final_mean_iterate": res.mean_iterates[-1],
    }


# ---------------------------------------------------------------------------
# scenarios

def run_shapley(cfg: ScenarioConfig, out: Outputs) -> None:
    game = _game(cfg)
    alpha = WeightFunction(cfg.game.weights) if cfg.game.weights else None
    alloc = mcfl_allocation(game, alpha)
    out.csv("allocations.csv", ["identity", "level", "payoff"], alloc.rows())
    total = alloc.full_participation_total()
    vm = game.v(game.m.total)
    out.json("summary.json", {
        "m": list(game.m.m),
        "v_full": vm,
        "full_participation_total": total,
        "budget_balance_error": abs(total - vm),
        "budget_balanced": abs(total - vm) <= 1e-9 * max(1.0, abs(vm)),
    })


def run_split_scan(cfg: ScenarioConfig, out: Outputs) -> None:
    game = _game(cfg)
    agents = range(game.K) if cfg.split.agent is None else [cfg.split.agent]
    two_way, parts = [], []
    for k in agents:
        for i in range(2, game.m[k] + 1):
            for T in range(1, i):
                a = split_gain(game.m, k, T, i - T, game.v)
                two_way.append([k, T, i - T, a.original, a.split_total, a.gain])
        if game.m[k] <= cfg.split.max_part:
            for part, val in partition_payoffs(game.m, k, game.v, cfg.split.max_part):
                parts.append([k, " ".join(map(str, part)), len(part), val])
    out.csv("split_gains.csv", ["agent", "T", "T_prime", "original", "split_total", "gain"], two_way)
    out.csv("partitions.csv", ["agent", "partition", "parts", "total_payoff"], parts)


def run_equilibrium(cfg: ScenarioConfig, out: Outputs) -> None:
    game = _game(cfg)
    profile, cert = equilibrium_profile(game.m, game.v)
    out.json("equilibrium.json", {
        "m": list(game.m.m),
        "profile": list(profile),
        "passed": cert.passed,
        "min_margin": cert.min_margin,
        "scope": cert.scope,
        "deviations": [
            {"agent": d.agent, "partition": list(d.partition), "payoff": d.payoff, "margin": d.margin}
            for d in cert.deviations
        ],
    })


def run_fl(cfg: ScenarioConfig, out: Outputs) -> None:
    exp, sets, losses = _identity_losses(cfg, split=cfg.problem.parts is not None)
    ref = cfg.problem.reference
    res = local_gd_run(losses, exp.fl, reference=ref)
    res.write_iterates_csv(out.path("iterates.csv"))
    if ref is not None:
        res.write_distance_csv(out.path("distance.csv"))
    dec.write_datasets_csv(sets, out.path("datasets.csv"))
    out.json("result.json", _run_summary(res))


def run_sync_search(cfg: ScenarioConfig, out: Outputs) -> None:
    exp, sets, losses = _identity_losses(cfg, split=cfg.problem.parts is not None)
    if cfg.problem.reference is not None:
        ref = np.array(cfg.problem.reference, dtype=float)
    else:
        # unsplit data at the configured interval defines the target
        _, _, honest = _identity_losses(cfg, split=False)
        ref = local_gd_run(honest, exp.fl).output
    found = min_sync_search(losses, exp.fl, ref, exp.tol)
    out.csv("search.csv", ["H", "n_sync", "distance"],
            [[H, sync_schedule(exp.fl.T, H, exp.fl.sync_at_start)[1], d]
             for H, d in found.distances.items()])
    out.json("result.json", {
        "reference": ref,
        "tol": exp.tol,
        "found": found.found,
        "H": found.H,
        "n_sync": found.n_sync,
        "n_sync_inclusive": found.n_sync_inclusive,
    })


def run_efficiency(cfg: ScenarioConfig, out: Outputs) -> None:
    game = _game(cfg)
    alloc = mcfl_allocation(game)
    surplus = agent_surplus_total(alloc, game.m.m)
    g = cfg.guarantee
    gp = GuaranteeParams(g.delta0, g.beta1, g.beta2, g.alpha, g.L_rw)
    e = cfg.efficiency
    eps = e.eps if e.eps is not None else epsilon_bound(game.m.total, gp)
    if e.constants is not None:
        c = e.constants
        consts = SmoothnessConstants(c.L, c.mu, c.xi, c.sigma2, source="config")
    else:
        _, _, losses = _identity_losses(cfg, split=cfg.problem.parts is not None)
        consts = estimate_constants(losses, seed=cfg.seed)
    theta0_dist = e.theta0_dist
    if theta0_dist is None:
        theta0_dist = float(np.linalg.norm(cfg.fl.theta0 - np.array(cfg.problem.data.theta_star)))
    bound = theorem2_bound(surplus, e.c, consts, theta0_dist, eps) if eps > 0 else None
    reports = efficiency_reports(surplus, e.c, cfg.fl.T, cfg.fl.H, bound, consts.source)
    out.json("efficiency.json", {
        name: r.to_dict() for name, r in reports.items()
    } | {
        "epsilon": eps,
        "constants": {"L": consts.L, "mu": consts.mu, "xi": consts.xi, "sigma2": consts.sigma2,
                      "source": consts.source},
        "scaling_form": theorem2_scaling(surplus, e.c, e.lam, game.m.total, g.alpha),
    })


def _write_trace(out: Outputs, prefix: str, res) -> None:
    res.write_iterates_csv(out.path(f"{prefix}_iterates.csv"))
    res.write_distance_csv(out.path(f"{prefix}_distance.csv"))


def run_reproduce_split(cfg: ScenarioConfig, out: Outputs) -> None:
    exp = _experiment(cfg)
    first = ex.run_split_experiment(exp, cfg.seed)
    _write_trace(out, "no_split", first.baseline)
    _write_trace(out, "split_fixed_sync", first.split_fixed)
    if first.split_search.found:
        # the search keeps the winning run; rerun it with the reference attached
        fake = dec.identity_losses(ex.split_datasets(exp, ex.agent_datasets(exp, cfg.seed)),
                                   exp.problem, exp.scaling, exp.nv)
        best = local_gd_run(fake, first.split_search.result.config, reference=first.reference)
        _write_trace(out, "split_min_sync", best)
    ns, spl = first.nosplit_search, first.split_search
    out.json("n_sync.json", {
        "seed": cfg.seed,
        "reference": first.reference,
        "tol": exp.tol,
        "no_split": {"H": ns.H, "n_sync": ns.n_sync, "n_sync_inclusive": ns.n_sync_inclusive},
        "split": {"H": spl.H, "n_sync": spl.n_sync, "n_sync_inclusive": spl.n_sync_inclusive,
                  "found": spl.found},
        "baseline_H": exp.fl.H,
        "rewards": first.rewards,
    })
    if cfg.problem.n_seeds > 1:
        seeds = [cfg.seed + j for j in range(cfg.problem.n_seeds)]
        summary = ex.summarize_seeds(exp, seeds)
        out.csv("seeds.csv", ["seed", "n_sync_no_split", "n_sync_split"],
                [[s, "" if a is None else a, "" if b is None else b]
                 for s, (a, b) in zip(seeds, summary.pairs)])
        out.json("seed_summary.json", {
            "n": summary.n,
            "split_strictly_more": summary.strictly_more,
            "fraction": summary.fraction_more,
            "split_not_found": summary.split_not_found,
            "median_inclusive_ratio": summary.median_ratio,
        })


def run_reproduce_pricing(cfg: ScenarioConfig, out: Outputs) -> None:
    p = cfg.pricing
    rows = ex.pricing_study(p.ns, p.lam, p.draws, p.reps, cfg.seed)
    out.csv("pricing.csv", ["n", "closed_form", "erlang_mc", "erlang_se", "decision_mc", "decision_se"],
            [[r.n, r.closed_form, r.erlang_mc, r.erlang_se, r.decision_mc, r.decision_se]
             for r in rows])
    e = cfg.efficiency
    curve = efficiency_curve(pricing_value, e.c, e.lam, cfg.guarantee.alpha, p.n_max)
    out.csv("efficiency_curve.csv", ["n", "value"], curve)
    n_best, best = ex.efficiency_argmax(curve)
    rng = np.random.default_rng(dec.identity_seed(cfg.seed, 1))
    n_fit = p.ns[0]
    theta_hats = rng.exponential(1.0 / p.lam, size=(p.lipschitz_samples, n_fit)).mean(axis=1)
    L = ex.pricing_lipschitz(p.lam, theta_hats)
    out.json("summary.json", {
        "within_3se": {str(r.n): {"erlang": abs(r.erlang_mc - r.closed_form) <= 3 * r.erlang_se,
                                  "decision": abs(r.decision_mc - r.closed_form) <= 3 * r.decision_se}
                       for r in rows},
        "efficiency_argmax_n": n_best,
        "efficiency_max": best,
        "interior_argmax": ex.finite_interior_argmax(curve),
        "lipschitz_fit": L,
        "lipschitz_fit_n": n_fit,
    })


RUNNERS = {
    "shapley": run_shapley,
    "split-scan": run_split_scan,
    "equilibrium": run_equilibrium,
    "fl-run": run_fl,
    "fl-sync-search": run_sync_search,
    "efficiency": run_efficiency,
    "reproduce-nv": run_reproduce_split,
    "reproduce-portfolio": run_reproduce_split,
    "reproduce-pricing": run_reproduce_pricing,
}


# ---------------------------------------------------------------------------
# entry point

def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mcfl", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"mcfl {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run", "validate") + SCENARIOS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, required=name in ("run", "validate"))
        sp.add_argument("--out", type=Path)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--validate-only", action="store_true")
    sub.add_parser("schema", help="print the JSON schema of scenario configs")
    return ap


def _resolve(args) -> ScenarioConfig:
    if args.config is not None:
        cfg, raw = load_config(args.config)
    else:
        raw = default_config(args.command)
        cfg = parse_config(raw)
    if args.command in SCENARIOS and cfg.scenario != args.command:
        raise ValidationError(
            f"scenario: config says '{cfg.scenario}' but the subcommand is '{args.command}'"
        )
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ValidationError("seed: must be an unsigned 64-bit integer")
        cfg = cfg.model_copy(update={"seed": args.seed})
    return cfg


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "schema":
        print(json.dumps(ScenarioConfig.model_json_schema(), sort_keys=True, indent=2))
        return EXIT_OK
    try:
        cfg = _resolve(args)
        # semantic checks that need the domain objects
        if cfg.game is not None:
            _game(cfg)
        _fl_config(cfg)
        if args.command == "validate" or args.validate_only:
            print(f"ok: {cfg.scenario} config is valid")
            return EXIT_OK
        out_dir = args.out or (Path(cfg.out) if cfg.out else Path("mcfl-out") / cfg.scenario)
        out = Outputs(out_dir)
        RUNNERS[cfg.scenario](cfg, out)
        _write_manifest(out, cfg)
        print(f"wrote {len(out.files)} files and manifest.json to {out_dir}")
        return EXIT_OK
    except EnumerationTooLargeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except DivergenceError as exc:
        print(f"error: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValidationError, MCFLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
