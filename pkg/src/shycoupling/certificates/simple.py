from __future__ import annotations

import math

import numpy as np

from ..errors import DeltaTooLargeError, NoFeasibleDeltaError
from ..geometry import ConvexDomain
from .functions import _dot
from .types import SimpleCertificate, log_c_bound
from .verify import _pairs_for, partner_pool, sphere_directions, verify_boundary_drift

SAFETY = 0.9
DELTA_MIN = 1e-8


def delta_cap(domain: ConvexDomain, epsilon: float, p) -> float:
    """delta must stay below epsilon / (2 sup_dist(p, D))."""
    return epsilon / (2 * domain.sup_dist(p))


def volatility_floor(domain: ConvexDomain, epsilon: float, p, delta: float) -> float:
    """Lower bound a on (dPhi)^2/dt valid for every co-adapted coupling while |X-Y| > epsilon."""
    sd = domain.sup_dist(p)
    if not 0 < delta < epsilon / (2 * sd):
        raise DeltaTooLargeError(f"delta={delta:.6g} must lie in (0, {epsilon / (2 * sd):.6g})")
    return (delta * epsilon**2 / ((2 + delta) * domain.diameter + delta * sd)) ** 2


def max_phi_bound(domain: ConvexDomain, delta: float, sd: float) -> float:
    """Upper bound on V over the closure: 1/2 diam^2 + delta diam sup_dist."""
    return 0.5 * domain.diameter**2 + delta * domain.diameter * sd


def drift_constants(a: float, n: int, max_phi: float, b: float | None = None):
    """(b, lambda, log_c) with b = 2n, lambda = 2 (2b/a) and c twice its threshold."""
    b = 2.0 * n if b is None else b
    lam = 4.0 * b / a
    log_c = log_c_bound(lam, a, b, max_phi) + math.log(2.0)
    return b, lam, log_c


def _eq8_profile(domain, epsilon, p, resolution, interior_resolution=None):
    """Per boundary sample: worst <b - q, v> over partners q, and |<b - p, v>|.

    The boundary inequalities for delta read A(b, q) + delta C(b) <= 0 in
    either particle role, so the worst case over partners is the largest A
    at each boundary point; both expressions are linear in the partner, so
    boundary and epsilon-sphere partners already attain the extreme.
    """
    if interior_resolution is None:
        interior_resolution = max(resolution, 0.05 * domain.diameter)
    bpts, bnrm = domain.boundary_samples(resolution)
    pool = partner_pool(domain, resolution, interior_resolution)
    n_circle = max(int(math.ceil(2 * math.pi * epsilon / resolution)), 8)
    circle = epsilon * sphere_directions(domain.dim, n_circle)
    amax = np.full(len(bpts), -np.inf)
    step = max(1, 2_000_000 // (len(pool) + len(circle)))
    for s in range(0, len(bpts), step):
        cb, cn = bpts[s : s + step], bnrm[s : s + step]
        owner, q = _pairs_for(domain, cb, pool, circle, epsilon)
        vals = _dot(cb[owner] - q, cn[owner])
        np.maximum.at(amax, s + owner, vals)
    coef = np.abs(_dot(bpts - np.asarray(p, dtype=float), bnrm))
    return amax, coef


def select_simple_certificate(
    domain: ConvexDomain,
    epsilon: float,
    p,
    resolution: float | None = None,
    verify_resolution: float | None = None,
    delta_min: float = DELTA_MIN,
) -> SimpleCertificate:
    """Largest grid-feasible delta (with a 10% safety factor) and the constants built on it."""
    p = np.asarray(p, dtype=float)
    if domain.contains(p, tol=domain.boundary_tol):
        raise ValueError("pole must lie outside the closed domain")
    if resolution is None:
        resolution = 0.01 * domain.diameter
    if verify_resolution is None:
        verify_resolution = resolution
    cap = delta_cap(domain, epsilon, p)
    amax, coef = _eq8_profile(domain, epsilon, p, resolution)

    def margin(d):
        return float(np.max(amax + d * coef)) if len(amax) and np.isfinite(amax).any() else -math.inf

    if margin(cap) <= 0:
        first_fail = cap
    else:
        lo, hi = 0.0, cap
        if margin(delta_min) > 0:
            segs = domain.maximal_segments(0.0) if domain.dim == 2 else []
            detail = f"; boundary contains {len(segs)} line segments" if segs else ""
            raise NoFeasibleDeltaError(
                f"boundary drift inequalities fail on the grid for every delta down to {delta_min:g}{detail}"
            )
        lo = delta_min
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if margin(mid) <= 0:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-9 * hi:
                break
        first_fail = hi
    delta = SAFETY * first_fail

    for _ in range(40):
        cert = _assemble(domain, epsilon, p, delta, verify_resolution)
        report = verify_boundary_drift(cert, verify_resolution)
        if report.passed:
            margins = {c.name: c.worst_margin for c in report.checks}
            return _assemble(domain, epsilon, p, delta, verify_resolution, margins)
        delta *= 0.5
        if delta < delta_min:
            break
    raise NoFeasibleDeltaError("boundary drift verification failed at the requested resolution")


def _assemble(domain, epsilon, p, delta, resolution, margins=None):
    sd = domain.sup_dist(p)
    a = volatility_floor(domain, epsilon, p, delta)
    mphi = max_phi_bound(domain, delta, sd)
    b, lam, log_c = drift_constants(a, domain.dim, mphi)
    return SimpleCertificate(
        domain=domain,
        p=p,
        delta=float(delta),
        epsilon=float(epsilon),
        a=a,
        b=b,
        lam=lam,
        log_c=log_c,
        max_phi=mphi,
        grid_resolution=float(resolution),
        worst_margins=margins or {},
    )
