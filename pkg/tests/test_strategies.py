import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ortho_group

from shycoupling.errors import ConfigError, NotAContractionError, StrategyContractError
from shycoupling.strategies import (
    FixedMatrix,
    FunctionStrategy,
    Independent,
    Perverse,
    Reflection,
    Rotation,
    Synchronous,
    independent_drive,
    perverse_drive,
    recover_driver,
    reflection_drive,
    spectral_complete,
    spectral_ladder,
    strategy_from_config,
    synchronous_drive,
)

angle = st.floats(0, 2 * math.pi, allow_nan=False)


def random_contraction(rng, n, gap=None):
    U = ortho_group.rvs(n, random_state=rng)
    V = ortho_group.rvs(n, random_state=rng)
    if gap is None:
        s = rng.uniform(0, 1, n)
    else:
        s = np.sqrt(np.linspace(0.05, 0.05 + gap * (n - 1), n)[::-1].clip(max=1.0))
    return U @ np.diag(s) @ V


def test_reflection_examples():
    d = reflection_drive([1.0, 0.0])
    assert np.allclose(d.J, np.diag([-1.0, 1.0])) and np.allclose(d.K, 0)
    e = np.array([1.0, 1.0]) / math.sqrt(2)
    assert np.allclose(reflection_drive(e).J, [[0.0, -1.0], [-1.0, 0.0]])
    with pytest.raises(ValueError):
        reflection_drive([0.0, 0.0])


@settings(max_examples=50)
@given(th=angle)
def test_reflection_involution_and_perverse_sign(th):
    e = np.array([math.cos(th), math.sin(th)])
    R, P = reflection_drive(e), perverse_drive(e)
    assert np.allclose(R.J @ R.J, np.eye(2), atol=1e-14)
    assert np.allclose(P.J, -R.J)
    assert np.allclose((np.eye(2) - P.J.T) @ e, 0, atol=1e-15)


def test_perverse_and_baselines():
    assert np.allclose(perverse_drive([1.0, 0.0]).J, np.diag([1.0, -1.0]))
    assert synchronous_drive(3).residual() == 0
    assert independent_drive(3).residual() == 0


def test_spectral_complete_examples():
    c = spectral_complete(np.eye(3))
    assert np.allclose(c.K, 0) and np.allclose(c.K_pinv, 0) and np.allclose(c.H1, np.eye(3))
    c = spectral_complete(np.zeros((2, 2)))
    assert np.allclose(c.K, np.eye(2)) and np.allclose(c.K_pinv, np.eye(2)) and np.allclose(c.H1, 0)
    c = spectral_complete(np.diag([0.6, 1.0]))
    assert np.allclose(c.H1, np.diag([0.0, 1.0]), atol=1e-14)
    assert np.allclose(c.K, np.diag([0.8, 0.0]), atol=1e-14)
    assert np.allclose(c.K_pinv, np.diag([1.25, 0.0]), atol=1e-14)
    with pytest.raises(NotAContractionError):
        spectral_complete(np.diag([1.1, 0.5]))


@pytest.mark.parametrize("n", [2, 3, 4, 6])
def test_spectral_complete_identities(n, rng):
    for _ in range(40):
        J = random_contraction(rng, n)
        if rng.random() < 0.3:  # force an eigenvalue-one direction
            U, s, Vt = np.linalg.svd(J)
            s[0] = 1.0
            J = U @ np.diag(s) @ Vt
        c = spectral_complete(J)
        JtJ = J.T @ J
        assert np.abs(c.K @ c.K - (np.eye(n) - JtJ)).max() < 1e-10
        assert np.abs(c.K.T @ c.K + JtJ - np.eye(n)).max() < 1e-10
        assert np.abs(c.K_pinv @ c.K - (np.eye(n) - c.H1)).max() < 1e-10
        assert np.abs(c.K @ c.K_pinv - (np.eye(n) - c.H1)).max() < 1e-10
        assert np.abs(c.H1 @ JtJ - c.H1).max() < 1e-10
        total = sum(c.projections)
        assert np.abs(total - np.eye(n)).max() < 1e-10


@pytest.mark.parametrize("n", [2, 3, 5])
def test_power_ladder_matches_eigendecomposition(n, rng):
    for _ in range(10):
        J = random_contraction(rng, n, gap=0.1)
        c = spectral_complete(J)
        H1, ladder, H0 = spectral_ladder(J)
        assert np.abs(H1 - c.H1).max() < 1e-8
        assert len(ladder) == len(c.ladder)
        for (mu, P), (mu2, P2) in zip(ladder, c.ladder):
            assert abs(mu - mu2) < 1e-8
            assert np.abs(P - P2).max() < 1e-8


def test_ladder_example():
    H1, ladder, H0 = spectral_ladder(np.diag([0.6, 1.0]))
    assert np.allclose(H1, np.diag([0.0, 1.0]))
    assert len(ladder) == 1 and math.isclose(ladder[0][0], 0.36)
    assert np.allclose(ladder[0][1], np.diag([1.0, 0.0]))


def test_recover_driver_limits(rng):
    dB, dD = rng.standard_normal((2, 50, 2))
    c = spectral_complete(np.eye(2))
    assert np.allclose(recover_driver(dB, dB, c, np.eye(2), dD), dD)
    dA = rng.standard_normal((50, 2))
    c = spectral_complete(np.zeros((2, 2)))
    assert np.allclose(recover_driver(dA, dB, c, np.zeros((2, 2)), dD), dA)
    with pytest.raises(ValueError):
        recover_driver(dA[:, :1], dB, c, np.zeros((2, 2)), dD)


def test_recover_driver_reconstructs_partner(rng):
    J = random_contraction(rng, 3)
    c = spectral_complete(J)
    dB, dC0, dD = rng.standard_normal((3, 200, 3))
    dA = dB @ J + dC0 @ c.K  # J^T dB + K^T dC in row form
    dC = recover_driver(dA, dB, c, J, dD)
    assert np.allclose(dC @ c.K, dA - dB @ J, atol=1e-10)


def test_recover_driver_random_J_independence(rng):
    n, m = 2, 100_000
    J = random_contraction(rng, n)
    c = spectral_complete(J)
    dB, dC0, dD = rng.standard_normal((3, m, n))
    dA = dB @ J + dC0 @ c.K
    dC = recover_driver(dA, dB, c, J, dD)
    cross = dC.T @ dB / m
    se = 1 / math.sqrt(m)
    assert np.abs(cross).max() < 3 * se


BUILTINS = [Reflection(), Perverse(), Synchronous(), Independent(), Rotation(0.7), FixedMatrix(np.diag([0.6, 1.0]))]


@pytest.mark.parametrize("strat", BUILTINS, ids=lambda s: s.name)
def test_builtin_contract(strat, rng):
    X = rng.uniform(-1, 1, (2000, 2))
    Y = rng.uniform(-1, 1, (2000, 2))
    J, K = strat.drive(0.0, X, Y)
    G = np.swapaxes(J, 1, 2) @ J + np.swapaxes(K, 1, 2) @ K
    assert np.abs(G - np.eye(2)).max() < 1e-12


def test_coincident_points_fall_back_to_synchronous():
    X = np.array([[0.1, 0.2]])
    J, K = Reflection().drive(0.0, X, X.copy())
    assert np.allclose(J[0], np.eye(2)) and np.allclose(K[0], 0)


def test_function_strategy_contract_violation():
    bad = FunctionStrategy(lambda t, X, Y: np.broadcast_to(np.diag([1.0, 1.0]), (len(X), 2, 2)).copy())
    bad.drive = lambda t, X, Y: (bad.jmatrix(t, X, Y), np.broadcast_to(np.eye(2), (len(X), 2, 2)).copy())
    X = np.zeros((1, 2))
    with pytest.raises(StrategyContractError):
        bad.increment(0.0, X, X + 1, np.zeros((1, 2)), np.zeros((1, 2)))


def test_strategy_from_config():
    assert isinstance(strategy_from_config("perverse"), Perverse)
    assert isinstance(strategy_from_config({"name": "custom", "rotation_angle": 0.3}), Rotation)
    assert isinstance(strategy_from_config({"name": "custom", "matrix": [[0.5, 0], [0, 0.5]]}), FixedMatrix)
    with pytest.raises(ConfigError) as err:
        strategy_from_config({"name": "nope"})
    assert err.value.key == "strategy.name"
    with pytest.raises(ConfigError) as err:
        strategy_from_config({"name": "custom", "matrix": [[2, 0], [0, 1]]})
    assert err.value.key == "strategy.matrix"
