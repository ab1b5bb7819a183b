import numpy as np
import pytest

from mcfl import experiments as ex
from mcfl.cli import _experiment
from mcfl.config import default_config, parse_config
from mcfl.errors import ValidationError
from mcfl.fl_sim import FLConfig
from mcfl.game_core import pricing_value


def test_default_configs_match_experiment_presets():
    # the CLI defaults and the library presets must describe the same runs
    for name, preset in (("reproduce-nv", ex.newsvendor_experiment()),
                         ("reproduce-portfolio", ex.portfolio_experiment())):
        built = _experiment(parse_config(default_config(name)))
        for attr in ("problem", "model", "m", "parts", "fl", "tol", "scaling", "alpha_risk"):
            assert getattr(built, attr) == getattr(preset, attr), (name, attr)
    assert _experiment(parse_config(default_config("reproduce-nv"))).nv == ex.newsvendor_experiment().nv


def test_experiment_validation():
    with pytest.raises(ValidationError):
        ex.newsvendor_experiment(parts=((2,), (1,)))
    with pytest.raises(ValidationError):
        ex.newsvendor_experiment(nv=None)
    with pytest.raises(ValidationError):
        ex.newsvendor_experiment(tol=0.0)
    with pytest.raises(ValidationError):
        ex.portfolio_experiment(problem="pricing")


def test_split_datasets_keep_samples():
    exp = ex.portfolio_experiment()
    agents = ex.agent_datasets(exp, 3)
    fake = ex.split_datasets(exp, agents)
    assert [d.identity for d in fake] == [0, 1, 2, 3]
    assert np.array_equal(np.vstack([d.x for d in fake]), np.vstack([d.x for d in agents]))
    assert [len(d.y) for d in fake] == [4, 4, 4, 4]


def test_split_outcome_is_reproducible():
    exp = ex.newsvendor_experiment()
    a = ex.run_split_experiment(exp, 11)
    b = ex.run_split_experiment(exp, 11)
    assert a.n_sync_pair == b.n_sync_pair
    assert a.rewards == b.rewards
    assert np.array_equal(a.reference, b.reference)
    assert a.baseline.distances[-1] >= 0
    assert set(a.rewards) >= {"oracle", "no_split", "split_fixed_sync"}


def test_reference_is_reachable_by_unsplit_run():
    # the baseline interval itself reproduces the reference exactly
    out = ex.run_split_experiment(ex.newsvendor_experiment(), 0, with_rewards=False)
    assert out.nosplit_search.found
    assert out.nosplit_search.H >= 10


def test_summary_counts():
    s = ex.SplitSummary(pairs=[(1, 3), (2, 2), (2, None), (None, 4)], ratios=[2.0, 1.0])
    assert s.n == 4 and s.strictly_more == 1 and s.split_not_found == 1
    assert s.fraction_more == 0.25 and s.median_ratio == 1.5
    assert ex.SplitSummary([], []).median_ratio is None


def test_pricing_study_row():
    [row] = ex.pricing_study([2], lam=2.0, draws=20_000, reps=20_000, seed=1)
    assert row.closed_form == pricing_value(2) / 2.0
    assert abs(row.erlang_mc - row.closed_form) <= 4 * row.erlang_se
    assert abs(row.decision_mc - row.closed_form) <= 4 * row.decision_se


def test_efficiency_argmax_helpers():
    curve = [(1, 0.1), (2, 0.3), (3, 0.2)]
    assert ex.efficiency_argmax(curve) == (2, 0.3)
    assert ex.finite_interior_argmax(curve)
    assert not ex.finite_interior_argmax([(1, 0.5), (2, 0.3)])


def test_pricing_lipschitz_fit_bounds_every_sample():
    rng = np.random.default_rng(0)
    hats = rng.exponential(1.0, size=(500, 3)).mean(axis=1)
    L = ex.pricing_lipschitz(1.0, hats)
    assert ex.lipschitz_holds(1.0, hats, L)
    assert not ex.lipschitz_holds(1.0, hats, 0.5 * L)


def test_fixed_sync_interval_changes_split_trajectory():
    exp = ex.newsvendor_experiment(fl=FLConfig(0.1, 2.0, 55, 10, output="running-average"))
    out = ex.run_split_experiment(exp, 0, with_rewards=False)
    assert not np.allclose(out.baseline.output, out.split_fixed.output)
