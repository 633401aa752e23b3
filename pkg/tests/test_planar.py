import math
from dataclasses import replace

import numpy as np
import pytest

from shycoupling.certificates import (
    SimpleCertificate,
    build_planar_certificate,
    criterion_asymptote,
    criterion_ratio,
    damping_increasing_limit,
    eval_Phi,
    eval_Vtilde,
    localization_failures,
    near_segment_pairs,
    parallel_configurations,
    parallel_criterion_ratio,
    verify_boundary_drift,
)
from shycoupling.certificates.planar import (
    delta_bounds,
    interior_drift_sup,
    planar_volatility_floor,
    pole_side_violations,
)
from shycoupling.errors import CriterionRatioError, PreconditionError, RTooSmallError, SameSignError

# worst-case ratio - 1 for h = 2, sigma = 1.5 (40-digit evaluation, centre on the competing line)
RATIO_MINUS_ONE = {100: 6.6628880935427372e-5, 200: 1.6664305431316052e-5, 400: 4.1665190952811102e-6}


def test_square_certificate_structure(square, square_cert):
    c = square_cert
    assert len(c.poles) == 8
    assert c.S == 150.0 and c.sigma == 1.5
    assert c.S > max(square.sup_dist(p) for p in c.poles)
    assert math.sqrt(1 - c.eta**2 / c.epsilon**2) - c.eta / c.epsilon > 0
    assert c.xi > 0
    bounds = delta_bounds(square, c.epsilon, c.R, c.S, max(square.sup_dist(p) for p in c.poles), c.xi, c.eta)
    assert c.delta < min(bounds.values())
    assert c.lam > 2 * c.b / c.a
    assert c.b >= 4.0
    assert c.worst_margins["criterion_ratio_min"] > 1
    assert verify_boundary_drift(c).passed


def test_example_localization_configuration(square_cert):
    x, y = np.array([-0.9, 0.3]), np.array([-0.9, -0.4])
    terms = []
    for k, p in enumerate(square_cert.poles):
        terms.append((eval_Vtilde(p, square_cert.delta, square_cert.S, x, y), 2 * k))
        terms.append((eval_Vtilde(p, square_cert.delta, square_cert.S, y, x), 2 * k + 1))
    best = min(terms)
    val, idx = eval_Phi(square_cert, x, y)
    assert idx == best[1] and math.isclose(val, best[0])
    assert math.isclose(square_cert.poles[idx // 2][0], -1.0)


@pytest.mark.parametrize("R", [100, 200, 400])
def test_parallel_ratio_matches_oracle_and_asymptote(R):
    got = parallel_criterion_ratio(R, 1.5, 2.0) - 1
    assert math.isclose(got, RATIO_MINUS_ONE[R], rel_tol=1e-8)
    lead = criterion_asymptote(R, 1.5, 2.0) - 1
    assert 0.5 < got / lead < 2


def test_ratio_asymptotic_coefficient():
    # sigma = 2 kills the leading term; sigma = 1 gives coefficient 1/2
    assert abs(parallel_criterion_ratio(100, 2.0, 2.0) - 1) < 1e-3 * 4 / 100**2
    assert math.isclose(parallel_criterion_ratio(400, 1.0, 2.0) - 1, 0.5 * 4 / 400**2, rel_tol=0.01)


def test_criterion_ratio_on_square(square_cert):
    configs = parallel_configurations(square_cert)
    assert len(configs) > 100
    ratios = [criterion_ratio(square_cert, x, y, i, j) for x, y, i, j in configs]
    assert min(ratios) > 1
    x, y, i, _ = configs[0]
    assert criterion_ratio(square_cert, x, y, i, i) == 1.0


def test_criterion_ratio_same_sign_precondition(square_cert):
    x, y = np.array([-1.0, -0.5]), np.array([-1.0, 0.4])
    poles = square_cert.poles
    # poles on x = -1 sit at y = +-R, giving inner products of opposite signs
    on_line = [k for k, p in enumerate(poles) if math.isclose(p[0], -1.0)]
    with pytest.raises(SameSignError):
        criterion_ratio(square_cert, x, y, on_line[0], on_line[1])


def test_localization_random_pairs(square, square_cert):
    xs, ys, own = near_segment_pairs(square, 0.5, square_cert.eta, count=10_000, rng=np.random.default_rng(1))
    assert len(xs) >= 10_000
    assert np.all(np.linalg.norm(xs - ys, axis=1) >= 0.5 - 1e-12)
    assert localization_failures(square_cert, xs, ys, own) == 0


def test_localization_breaks_for_wide_tubes(square_cert, square):
    xs, ys, own = near_segment_pairs(square, 0.5, 0.125, count=2000, rng=np.random.default_rng(2))
    assert localization_failures(square_cert, xs, ys, own) > 0


def test_pole_side_condition(square_cert):
    assert pole_side_violations(square_cert) == []


def test_monotone_damping():
    S = 150.0
    for v in (0.0, 1.0, 10.0, 100.0):
        top = damping_increasing_limit(v, S)
        u = np.linspace(1e-3, top * (1 - 1e-6), 4000)
        f = u * np.exp(-np.sqrt(u * u + v * v) / S)
        assert np.all(np.diff(f) > 0)
        beyond = np.linspace(top * 1.001, top * 1.5, 200)
        g = beyond * np.exp(-np.sqrt(beyond**2 + v * v) / S)
        assert np.all(np.diff(g) < 0)


def test_planar_volatility_floor_positive(square, square_cert):
    sd = max(square.sup_dist(p) for p in square_cert.poles)
    a = planar_volatility_floor(square, 0.5, square_cert.delta, square_cert.S, sd)
    assert a == square_cert.a and a > 0
    assert planar_volatility_floor(square, 0.5, 2 * square_cert.delta, square_cert.S, sd) > a


def test_interior_drift_bound_undamped_is_2n(square):
    poles = np.array([[5.0, 0.0]])
    assert math.isclose(interior_drift_sup(poles, 0.05, math.inf, square, 0.5, samples=100), 4.0, rel_tol=1e-6)


def test_preconditions(square, disc):
    with pytest.raises(PreconditionError):
        build_planar_certificate(square, 0.5, 100.0, 2.5)
    with pytest.raises(RTooSmallError):
        build_planar_certificate(square, 0.5, 5.0, 1.5)
    fallback = build_planar_certificate(disc, 0.5, 2.0, 1.5)
    assert isinstance(fallback, SimpleCertificate)


def test_off_centre_circle_needs_larger_R(square):
    # centre near a corner with sigma close to 2: the ratio dips below 1 until R grows
    with pytest.raises(CriterionRatioError):
        build_planar_certificate(square, 0.5, 10.0, 1.99, center=(0.99, 0.99), eta=0.01)
    cert = build_planar_certificate(square, 0.5, 400.0, 1.99, center=(0.99, 0.99), eta=0.01)
    assert cert.worst_margins["criterion_ratio_min"] > 1


def test_inflated_delta_eventually_fails(square_cert):
    assert verify_boundary_drift(replace(square_cert, delta=10 * square_cert.delta)).passed
    report = verify_boundary_drift(replace(square_cert, delta=1e4 * square_cert.delta))
    assert not report.passed
    worst = max(report.checks, key=lambda ch: ch.worst_margin).arg_worst
    assert worst is not None
