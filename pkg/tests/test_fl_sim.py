import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcfl import decisions as dec
from mcfl.errors import DivergenceError, ValidationError
from mcfl.experiments import agent_datasets, newsvendor_experiment, split_datasets
from mcfl.fl_sim import (
    FLConfig,
    LocalLoss,
    SmoothnessConstants,
    centralized_gd,
    combine_losses,
    estimate_constants,
    local_gd_run,
    min_sync_search,
    sync_schedule,
    theoretical_n_sync_bound,
    theoretical_schedule,
)


def random_quadratics(rng, K, p):
    out = []
    for k in range(K):
        B = rng.normal(size=(p, p))
        A = B @ B.T / p + 0.5 * np.eye(p)
        out.append(LocalLoss.quadratic(A, rng.normal(size=p), n_samples=int(rng.integers(1, 5))))
    return out


def test_single_identity_one_step():
    loss = LocalLoss.quadratic([[1.0]], [1.0])
    res = local_gd_run([loss], FLConfig(rho=1.0, theta0=0.0, T=2, H=1, output="last-iterate"))
    assert res.output[0] == 1.0


def test_identical_losses_match_single_run():
    rng = np.random.default_rng(0)
    [q] = random_quadratics(rng, 1, 3)
    for H in (1, 4, 7):
        cfg = FLConfig(0.1, 2.0, 20, H, output="last-iterate")
        one = local_gd_run([q], cfg)
        two = local_gd_run([q, q], cfg)
        assert np.array_equal(one.iterates[:, 0], two.iterates[:, 1])
        assert np.array_equal(one.output, two.output)


@pytest.mark.parametrize("seed", range(5))
def test_h1_equals_centralized_gd(seed):
    rng = np.random.default_rng(seed)
    losses = random_quadratics(rng, 4, 3)
    cfg = FLConfig(0.05, 1.5, 40, 1, sync_at_start=True, output="last-iterate")
    res = local_gd_run(losses, cfg)
    mean_loss = combine_losses(losses, [0.25] * 4)
    ref = centralized_gd(mean_loss, 0.05, 40, 1.5)
    assert np.max(np.abs(res.held_global - ref)) <= 1e-12
    assert np.max(np.abs(res.mean_iterates - ref)) <= 1e-12


def test_literal_h1_differs_only_through_first_local_step():
    # with heterogeneous curvature the unsynchronised step at t = 0 leaves a trace
    rng = np.random.default_rng(1)
    losses = random_quadratics(rng, 3, 2)
    cfg = FLConfig(0.05, 1.5, 30, 1, output="last-iterate")
    res = local_gd_run(losses, cfg)
    ref = centralized_gd(combine_losses(losses, [1 / 3] * 3), 0.05, 30, 1.5)
    assert np.allclose(res.mean_iterates[1], ref[1], atol=1e-14)
    assert np.max(np.abs(res.mean_iterates - ref)) > 1e-8
    # shared curvature makes the two schedules agree exactly
    A = np.diag([1.0, 3.0])
    shared = [LocalLoss.quadratic(A, rng.normal(size=2)) for _ in range(3)]
    res = local_gd_run(shared, cfg)
    ref = centralized_gd(combine_losses(shared, [1 / 3] * 3), 0.05, 30, 1.5)
    assert np.max(np.abs(res.mean_iterates - ref)) <= 1e-12


def _nv_losses(seed, split):
    exp = newsvendor_experiment()
    agents = agent_datasets(exp, seed)
    sets = split_datasets(exp, agents) if split else agents
    return dec.identity_losses(sets, "newsvendor", "local", exp.nv)


def test_split_invariance_at_h1():
    cfg = FLConfig(0.1, 2.0, 55, 1, averaging="sample-weighted", output="last-iterate",
                   sync_at_start=True)
    for seed in range(5):
        a = local_gd_run(_nv_losses(seed, False), cfg)
        b = local_gd_run(_nv_losses(seed, True), cfg)
        assert np.max(np.abs(a.mean_iterates - b.mean_iterates)) <= 1e-10


def test_split_changes_trajectory_when_h_above_one():
    cfg = FLConfig(0.1, 2.0, 55, 10, averaging="sample-weighted", output="last-iterate")
    a = local_gd_run(_nv_losses(0, False), cfg)
    b = local_gd_run(_nv_losses(0, True), cfg)
    assert np.max(np.abs(a.mean_iterates - b.mean_iterates)) > 1e-6


def test_sync_schedule_examples():
    assert sync_schedule(55, 10) == ((10, 20, 30, 40, 50), 5)
    assert sync_schedule(5, 5) == ((), 0)
    assert sync_schedule(10, 1) == (tuple(range(1, 10)), 9)
    assert sync_schedule(55, 10, include_start=True)[1] == 6
    assert sync_schedule(55, 3, include_start=True)[1] == 19
    with pytest.raises(ValidationError):
        sync_schedule(3, 4)


def test_sync_count_formula_exhaustive():
    for T in range(1, 201):
        for H in range(1, T + 1):
            epochs, n = sync_schedule(T, H)
            assert n == len(epochs) == (T - 1) // H
            assert all(1 <= e <= T - 1 and e % H == 0 for e in epochs)


def test_run_records_sync_epochs_and_values():
    rng = np.random.default_rng(2)
    losses = random_quadratics(rng, 3, 2)
    res = local_gd_run(losses, FLConfig(0.1, 1.0, 23, 5))
    assert res.sync_epochs == (5, 10, 15, 20) and res.n_sync == 4
    assert res.n_sync_inclusive == 5
    for e, val in zip(res.sync_epochs, res.sync_values):
        assert np.allclose(res.iterates[e + 1], val)
    assert np.allclose(res.output, res.sync_values.mean(axis=0))


def test_output_modes():
    rng = np.random.default_rng(3)
    losses = random_quadratics(rng, 2, 1)
    base = dict(rho=0.1, theta0=2.0, T=12, H=4)
    last = local_gd_run(losses, FLConfig(**base, output="last-iterate"))
    run = local_gd_run(losses, FLConfig(**base, output="running-average"))
    held = np.concatenate([[2.0] * 5, [last.sync_values[0, 0]] * 4, [last.sync_values[1, 0]] * 3])
    assert run.output[0] == pytest.approx(held.mean(), abs=1e-15)
    assert np.allclose(last.output, last.mean_iterates[-1])
    # no sync at all: sync-average falls back to the final aggregate
    nosync = local_gd_run(losses, FLConfig(0.1, 2.0, 5, 5))
    assert np.allclose(nosync.output, nosync.mean_iterates[-1])


def test_divergence_reports_epoch():
    loss = LocalLoss.quadratic([[1.0]])
    with pytest.raises(DivergenceError) as exc:
        local_gd_run([loss], FLConfig(rho=1e200, theta0=1e200, T=10, H=1))
    assert exc.value.epoch == 0
    bad = LocalLoss(lambda th: (0.0, np.array([np.nan])), 1, 1)
    with pytest.raises(DivergenceError):
        local_gd_run([bad], FLConfig(0.1, 0.0, 3, 1))


def test_config_and_dimension_checks():
    with pytest.raises(ValidationError):
        FLConfig(0.1, 0.0, 5, 6)
    with pytest.raises(ValidationError):
        FLConfig(0.0, 0.0, 5, 1)
    with pytest.raises(ValidationError):
        FLConfig(0.1, 0.0, 5, 1, output="median")
    a = LocalLoss.quadratic(np.eye(2))
    b = LocalLoss.quadratic(np.eye(3))
    with pytest.raises(ValidationError):
        local_gd_run([a, b], FLConfig(0.1, 0.0, 5, 1))


def test_centralized_gd_examples():
    loss = LocalLoss.quadratic([[1.0]], [1.0])
    assert centralized_gd(loss, 1.0, 1, 0.0)[-1, 0] == 1.0
    assert np.all(centralized_gd(loss, 0.0, 3, 0.5) == 0.5)
    A = np.diag([1.0, 4.0])
    traj = centralized_gd(LocalLoss.quadratic(A, [1.0, 1.0]), 0.4, 30, 3.0)
    dist = np.linalg.norm(traj - np.linalg.solve(A, [1.0, 1.0]), axis=1)
    assert np.all(np.diff(dist) < 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 12), st.booleans())
def test_distance_at_syncs_non_increasing(seed, H, at_start):
    # one strongly convex curvature shared by every identity, different linear terms
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(2, 2))
    A = B @ B.T + 0.2 * np.eye(2)
    bs = rng.normal(size=(3, 2))
    losses = [LocalLoss.quadratic(A, b) for b in bs]
    L = np.linalg.eigvalsh(A).max()
    res = local_gd_run(losses, FLConfig(1.0 / L, 2.0, 40, H, sync_at_start=at_start))
    theta_star = np.linalg.solve(A, bs.mean(axis=0))
    d = np.linalg.norm(res.sync_values - theta_star, axis=1)
    assert np.all(np.diff(d) <= 1e-12)


def test_min_sync_search():
    rng = np.random.default_rng(4)
    losses = random_quadratics(rng, 3, 1)
    cfg = FLConfig(0.1, 2.0, 30, 10, output="last-iterate")
    ref = local_gd_run(losses, cfg.with_H(30)).output
    hit = min_sync_search(losses, cfg, ref, 1e-9)
    assert hit.found and hit.H == 30 and hit.n_sync == 0
    target = centralized_gd(combine_losses(losses, [1 / 3] * 3), 0.1, 30, 2.0)[-1]
    res = min_sync_search(losses, cfg, target, 1e-3)
    if res.found:
        assert res.distances[res.H] <= 1e-3
        if res.H < 30:
            assert res.distances[res.H + 1] > 1e-3
    miss = min_sync_search(losses, cfg, target + 10.0, 1e-6)
    assert not miss.found and miss.n_sync is None and len(miss.distances) == 30


def test_trace_csv(tmp_path):
    losses = random_quadratics(np.random.default_rng(5), 2, 2)
    res = local_gd_run(losses, FLConfig(0.1, 1.0, 4, 2), reference=[0.0, 0.0])
    res.write_iterates_csv(tmp_path / "it.csv")
    res.write_distance_csv(tmp_path / "d.csv")
    lines = (tmp_path / "it.csv").read_text().splitlines()
    assert lines[0] == "epoch,identity,component,value" and len(lines) == 1 + 5 * 2 * 2
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "epoch,distance_to_ref"


def test_theoretical_schedule():
    assert theoretical_schedule(16, 16, 1.0) == (1, 0.25)
    H, rho = theoretical_schedule(50, 50, 3.0)
    assert rho == pytest.approx(1 / 12)
    for T, n in [(1, 1), (10**6, 1), (5, 10**4)]:
        H, _ = theoretical_schedule(T, n, 1.0)
        assert 1 <= H <= T


def test_n_sync_bound():
    c = SmoothnessConstants(L=1.0, mu=1.0, xi=0.0, sigma2=0.0)
    assert theoretical_n_sync_bound(c, 1.0, 1.0) == pytest.approx(512.0, rel=1e-15)
    assert theoretical_n_sync_bound(c, 1.0, 2.0) == pytest.approx(512.0 / 8, rel=1e-15)
    c2 = SmoothnessConstants(L=2.0, mu=0.5, xi=0.3, sigma2=0.2)
    eps = np.linspace(0.1, 2.0, 20)
    vals = [theoretical_n_sync_bound(c2, 1.0, e) for e in eps]
    assert np.all(np.diff(vals) <= 0)
    dists = [theoretical_n_sync_bound(c2, d, 0.5) for d in np.linspace(0, 3, 20)]
    assert np.all(np.diff(dists) >= 0)


def test_estimate_constants():
    c = estimate_constants([LocalLoss.quadratic(np.eye(2))], theta_star=np.zeros(2))
    assert c.L == pytest.approx(1.0, abs=1e-6) and c.mu == pytest.approx(1.0, abs=1e-6)
    c = estimate_constants([LocalLoss.quadratic(np.diag([1.0, 4.0]))])
    assert c.L == pytest.approx(4.0, abs=1e-6) and c.mu == pytest.approx(1.0, abs=1e-6)
    assert not c.nonconvex
    # two mirrored identities: local gradients at the optimum are +-1
    a = LocalLoss.quadratic([[1.0]], [1.0])
    b = LocalLoss.quadratic([[1.0]], [-1.0])
    c = estimate_constants([a, b], probe_radius=0.5)
    assert c.sigma2 == pytest.approx(1.0, abs=1e-8)
    assert c.xi == pytest.approx(1.5, abs=0.05)
    saddle = LocalLoss.quadratic(np.diag([1.0, -0.5]))
    assert estimate_constants([saddle], theta_star=np.zeros(2)).nonconvex
