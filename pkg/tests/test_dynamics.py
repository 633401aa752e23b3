import math

import numpy as np
import pytest
from scipy import stats

from shycoupling.dynamics import (
    EPS_COUPLED,
    HORIZON,
    ParticleState,
    SimConfig,
    read_trajectory_csv,
    simulate_batch,
    simulate_ensemble,
    simulate_pair,
    step_reflected,
    write_trajectory_csv,
)
from shycoupling.errors import StrategyContractError
from shycoupling.geometry import Ball, Polygon
from shycoupling.strategies import FunctionStrategy, Independent, Perverse, Reflection, Synchronous

BIG = Ball((0.0, 0.0), 1000.0)


def test_step_examples(disc, unit_square):
    s = step_reflected(disc, ParticleState(np.array([0.2, 0.1])), [0.01, -0.02], 1e-4)
    assert np.allclose(s.position, [0.21, 0.08]) and s.local_time == 0 and s.time == 1e-4
    s = step_reflected(disc, ParticleState(np.array([0.99, 0.0])), [0.03, 0.0], 1e-4)
    assert np.allclose(s.position, [1.0, 0.0]) and math.isclose(s.local_time, 0.02)
    s = step_reflected(unit_square, ParticleState(np.array([0.99, 0.99])), [0.03, 0.03], 1e-4)
    assert np.allclose(s.position, [1.0, 1.0]) and math.isclose(s.local_time, 0.02 * math.sqrt(2))


def test_simconfig_validation():
    with pytest.raises(ValueError):
        SimConfig((0, 0), (1, 0), h=0.0, horizon=1.0, epsilon=0.1)
    with pytest.raises(ValueError):
        SimConfig((0, 0), (1, 0, 0), h=0.1, horizon=1.0, epsilon=0.1)
    cfg = SimConfig((0, 0), (1, 0), h=1e-4, horizon=1.0, epsilon=0.5)
    assert cfg.n_steps == 10_000 and math.isclose(cfg.eps_tol, 10 * 0.01 / 0.5)


def test_synchronous_from_equal_points(disc):
    tr = simulate_pair(disc, Synchronous(), SimConfig((0.1, 0.2), (0.1, 0.2), 1e-3, 1.0, 0.1))
    assert tr.stop_reason == EPS_COUPLED and tr.coupling_time == 0.0 and tr.dist[-1] == 0.0


def test_synchronous_keeps_identical_paths(square):
    # with J = I, K = 0 two copies started together see identical increments and projections
    s = Synchronous()
    X = np.array([[0.9, -0.8]])
    Y = X.copy()
    rng = np.random.default_rng(0)
    for _ in range(2000):
        dB = 0.03 * rng.standard_normal((1, 2))
        dY = s.increment(0.0, X, Y, dB, 0.03 * rng.standard_normal((1, 2)))
        X, Y = square.project(X + dB), square.project(Y + dY)
        assert np.array_equal(X, Y)


def test_perverse_disc_couples(disc):
    cfg = SimConfig((0.3, 0.0), (-0.3, 0.0), 1e-3, 60.0, 0.5, seed=5, record_stride=1000)
    trs = simulate_ensemble(disc, Perverse(), cfg, 5)
    assert all(tr.stop_reason == EPS_COUPLED for tr in trs)
    for tr in trs:
        assert tr.dist[-1] <= cfg.epsilon * (1 + cfg.eps_tol)
        assert math.isclose(tr.t[-1], tr.coupling_time)


def test_free_space_perverse_radial_law():
    d0 = 0.6
    cfg = SimConfig((d0 / 2, 0.0), (-d0 / 2, 0.0), 1e-5, 0.01, 0.1, seed=3)
    tr = simulate_pair(BIG, Perverse(), cfg)
    assert tr.LX[-1] == 0 and tr.LY[-1] == 0
    rel = np.abs(tr.dist - np.sqrt(d0**2 + 4 * tr.t)) / np.sqrt(d0**2 + 4 * tr.t)
    assert rel.max() < 0.01


@pytest.mark.parametrize("dom", [Ball((0.0, 0.0), 1.0), Polygon.square(2.0)], ids=["disc", "square"])
def test_confinement_and_local_time_support(dom):
    cfg = SimConfig((0.5, 0.2), (-0.4, -0.3), 1e-3, 3.0, 1e-3, seed=9)
    for tr in simulate_ensemble(dom, Reflection(), cfg, 4):
        for P, L in ((tr.X, tr.LX), (tr.Y, tr.LY)):
            assert np.all(dom.contains(P, tol=dom.boundary_tol))
            assert np.all(np.diff(L) >= 0)
            pushed = np.nonzero(np.diff(L) > 0)[0] + 1
            assert len(pushed) > 0
            assert np.all(dom.distance_to_boundary(P[pushed]) <= dom.boundary_tol)
            far = dom.distance_to_boundary(P[:-1]) > 2 * math.sqrt(cfg.h) * math.sqrt(2) + 0.2
            # steps starting far from the boundary cannot push
            assert np.all(np.diff(L)[far] == 0)


def test_single_step_second_moment(disc):
    h = 1e-4
    cfg = SimConfig((0.0, 0.0), (0.5, 0.0), h, h, 1e-9, seed=21)
    trs = simulate_ensemble(disc, Independent(), cfg, 10_000)
    r2 = np.array([np.sum(tr.X[-1] ** 2) for tr in trs])
    se = r2.std(ddof=1) / math.sqrt(len(r2))
    assert abs(r2.mean() - 2 * h) < 3 * se


def test_marginal_law_matches_synchronous(disc):
    cfg = SimConfig((0.3, 0.0), (-0.3, 0.0), 2e-3, 0.4, 1e-9, seed=31)
    base = simulate_ensemble(disc, Synchronous(), SimConfig((0.3, 0.0), (-0.3, 0.0), 2e-3, 0.4, 1e-9, seed=32), 10_000)
    for strat in (Perverse(), Reflection()):
        trs = simulate_ensemble(disc, strat, cfg, 10_000)
        a = [np.linalg.norm(tr.X[-1]) for tr in trs]
        b = [np.linalg.norm(tr.X[-1]) for tr in base]
        assert stats.ks_2samp(a, b).pvalue > 0.05


def test_independent_free_space_variance():
    cfg = SimConfig((0.5, 0.0), (-0.5, 0.0), 1e-3, 0.2, 1e-9, seed=4)
    trs = simulate_ensemble(BIG, Independent(), cfg, 4000)
    resid = np.array([tr.dist[-1] ** 2 - 1.0 - 4 * tr.t[-1] for tr in trs])
    assert abs(resid.mean()) < 3 * resid.std(ddof=1) / math.sqrt(len(resid))


def test_reproducible_and_batch_independent(square):
    cfg = SimConfig((0.5, 0.2), (-0.4, -0.3), 1e-3, 2.0, 0.3, seed=77, record_stride=7)
    a = simulate_ensemble(square, Perverse(), cfg, 6)
    b = simulate_ensemble(square, Perverse(), cfg, 6, batch_size=2)
    c = [simulate_pair(square, Perverse(), cfg, replica=k) for k in range(6)]
    d = simulate_ensemble(square, Perverse(), cfg, 6, batch_size=3, threads=2)
    for x, y, z, w in zip(a, b, c, d):
        for arr in ("t", "X", "Y", "LX", "LY", "dist"):
            assert np.array_equal(getattr(x, arr), getattr(y, arr))
            assert np.array_equal(getattr(x, arr), getattr(z, arr))
            assert np.array_equal(getattr(x, arr), getattr(w, arr))
    other = simulate_pair(square, Perverse(), SimConfig((0.5, 0.2), (-0.4, -0.3), 1e-3, 2.0, 0.3, seed=78), 0)
    assert not np.array_equal(other.X[:5], a[0].X[:5])


def test_record_stride_and_horizon(disc):
    cfg = SimConfig((0.3, 0.0), (-0.3, 0.0), 1e-3, 0.105, 1e-9, seed=1, record_stride=10)
    tr = simulate_pair(disc, Reflection(), cfg)
    assert tr.stop_reason == HORIZON and tr.coupling_time is None
    assert np.allclose(tr.t[:-1], np.arange(0, 0.101, 0.01))
    assert math.isclose(tr.t[-1], 0.105)
    assert np.allclose(tr.dist, np.linalg.norm(tr.X - tr.Y, axis=1))


def test_csv_round_trip(tmp_path, disc):
    cfg = SimConfig((0.3, 0.0), (-0.3, 0.0), 1e-3, 0.5, 0.2, seed=8, record_stride=5)
    tr = simulate_pair(disc, Reflection(), cfg, replica=3)
    path = tmp_path / "t.csv"
    write_trajectory_csv(tr, path)
    text = path.read_text()
    assert text.startswith("# seed=8\n") and "t,x1,x2,y1,y2,LX,LY,dist" in text
    back = read_trajectory_csv(path)
    assert back.replica == 3 and back.stop_reason == tr.stop_reason and back.coupling_time == tr.coupling_time
    for arr in ("t", "X", "Y", "LX", "LY", "dist"):
        assert np.array_equal(getattr(back, arr), getattr(tr, arr))


def test_contract_violation_is_raised(disc):
    bad = FunctionStrategy(lambda t, X, Y: np.broadcast_to(np.eye(2), (len(X), 2, 2)).copy(), name="bad")
    bad.drive = lambda t, X, Y: (bad.jmatrix(t, X, Y), np.broadcast_to(0.5 * np.eye(2), (len(X), 2, 2)).copy())
    with pytest.raises(StrategyContractError):
        simulate_batch(disc, bad, SimConfig((0.3, 0.0), (-0.3, 0.0), 1e-3, 0.01, 0.1), [0])
