"""Multi-pole certificate for planar domains whose boundary has line segments."""
from __future__ import annotations

import math

import numpy as np

from ..errors import CriterionRatioError, NoFeasibleDeltaError, PreconditionError, SameSignError
from ..geometry import ConvexDomain, build_poles, line_angle_phi
from .functions import _dot, eval_Phi, term_gradients, term_identity
from .simple import SAFETY, drift_constants, select_simple_certificate
from .types import PlanarCertificate
from .verify import _pairs_for, boundary_drift_sweep, partner_pool, sphere_directions


# ------------------------------------------------------------ criterion ratio


def _damped_inner(x, y, p, S):
    w = np.asarray(x, float) - np.asarray(y, float)
    Z = 0.5 * (np.asarray(x, float) + np.asarray(y, float)) - np.asarray(p, float)
    return math.exp(-float(np.linalg.norm(Z)) / S) * float(w @ Z)


def criterion_ratio(cert: PlanarCertificate, x, y, i: int, j: int) -> float:
    """Ratio of exp(-|Z|/S) <x-y, Z> for pole i against pole j (pole indices)."""
    if i == j:
        return 1.0
    num = _damped_inner(x, y, cert.poles[i], cert.S)
    den = _damped_inner(x, y, cert.poles[j], cert.S)
    if num * den <= 0:
        raise SameSignError(f"inner products for poles {i} and {j} do not share a sign")
    return num / den


def parallel_criterion_ratio(R: float, sigma: float, h: float, u0: float = 0.0, v0: float | None = None) -> float:
    """Criterion ratio in canonical coordinates.

    Coordinates are centred at the midpoint of x, y, which lie on the u-axis
    (the line of the owning segment); the competing parallel line is v = h
    and the circle is centred at (u0, v0), 0 < v0 <= h. The default v0 = h
    is the extreme placement that bounds every other one from below.
    """
    if v0 is None:
        v0 = h
    S = sigma * R
    pi = np.array([u0 - math.sqrt(R * R - v0 * v0), 0.0])
    pj = np.array([u0 - math.sqrt(R * R - (h - v0) ** 2), h])
    # w points along +u, so <w, -p> has the sign of -p_u for both poles
    num = math.exp(-np.linalg.norm(pi) / S) * (-pi[0])
    den = math.exp(-np.linalg.norm(pj) / S) * (-pj[0])
    return num / den


def criterion_asymptote(R: float, sigma: float, h: float) -> float:
    """Leading-order value 1 + (1/sigma - 1/2) h^2 / R^2 of the worst-case ratio."""
    return 1.0 + (1.0 / sigma - 0.5) * h * h / (R * R)


def damping_increasing_limit(v: float, S: float) -> float:
    """u exp(-sqrt(u^2+v^2)/S) increases in u up to this value."""
    return S * math.sqrt((1 + math.sqrt(1 + 4 * v * v / (S * S))) / 2)


def _segments_by_index(domain, epsilon):
    return {s.index: s for s in domain.maximal_segments(epsilon)}


def parallel_configurations(cert: PlanarCertificate, per_segment: int = 25):
    """Sampled pairs on each segment that has a parallel partner.

    Yields (x, y, owning pole, competing pole) where both poles give
    inner products of the same sign.
    """
    segs = _segments_by_index(cert.domain, cert.epsilon)
    out = []
    for si, s in segs.items():
        d = s.direction
        parallel = [sj for sj, t in segs.items() if sj != si and abs(abs(d @ t.direction) - 1) < 1e-12]
        if not parallel or s.length < cert.epsilon:
            continue
        own = [k for k, seg in enumerate(cert.pole_segments) if seg == si]
        comp = [k for k, seg in enumerate(cert.pole_segments) if seg in parallel]
        span = s.length - cert.epsilon
        for a in np.linspace(0.0, span, per_segment):
            for length in np.linspace(cert.epsilon, s.length - a, 3):
                x = s.start + (a + length) * d
                y = s.start + a * d
                for xx, yy in ((x, y), (y, x)):
                    for k in own:
                        gk = _damped_inner(xx, yy, cert.poles[k], cert.S)
                        for m in comp:
                            if gk * _damped_inner(xx, yy, cert.poles[m], cert.S) > 0:
                                out.append((xx, yy, k, m))
    return out


def pole_side_violations(cert: PlanarCertificate, tol: float = 1e-12):
    """Pairs (i, j) where pole j lies strictly across the perpendicular to
    pole i's segment line at p_i, on the side away from the domain."""
    segs = _segments_by_index(cert.domain, 0.0)
    verts = cert.domain.boundary_samples(0.05 * cert.domain.diameter)[0]
    out = []
    scale = tol * max(cert.R, 1.0)
    for i, (p, si) in enumerate(zip(cert.poles, cert.pole_segments)):
        d = segs[si].direction
        side = np.sign(np.mean((verts - p) @ d))
        for j, q in enumerate(cert.poles):
            if j != i and side * ((q - p) @ d) < -scale:
                out.append((i, j))
    return out


# -------------------------------------------------------------- localization


def near_segment_pairs(domain, epsilon, eta, count=None, rng=None, per_segment=40):
    """Pairs within eta of a common segment, one of them on that segment.

    Returns (x, y, owning segment index). Systematic samples put the
    off-boundary point at full offset eta; random samples use offsets in
    [0, eta].
    """
    segs = list(domain.maximal_segments(epsilon))
    xs, ys, own = [], [], []

    def add(seg, t0, length, off, flip, swap):
        d = seg.direction
        nrm = np.array([-d[1], d[0]])
        a = seg.start + t0 * d
        b = seg.start + (t0 + length) * d if not flip else seg.start + (t0 - length) * d
        b = b + off * nrm
        if not domain.contains(b, tol=domain.boundary_tol):
            return
        x, y = (b, a) if swap else (a, b)
        xs.append(x)
        ys.append(y)
        own.append(seg.index)

    for seg in segs:
        L = seg.length
        if L < epsilon:
            continue
        for t0 in np.linspace(0.0, L - epsilon, per_segment):
            for length in (epsilon, 0.5 * (epsilon + L - t0), L - t0):
                for off in (eta, 0.5 * eta):
                    for swap in (False, True):
                        add(seg, t0, length, off, False, swap)
                        add(seg, L - t0, length, off, True, swap)
    if count:
        rng = np.random.default_rng(0) if rng is None else rng
        long_segs = [s for s in segs if s.length >= epsilon]
        for _ in range(count):
            seg = long_segs[rng.integers(len(long_segs))]
            L = seg.length
            length = rng.uniform(epsilon, L)
            t0 = rng.uniform(0.0, L - length)
            add(seg, t0, length, rng.uniform(0.0, eta), False, bool(rng.integers(2)))
    return np.array(xs), np.array(ys), np.array(own)


def localization_failures(cert, xs, ys, owners) -> int:
    if len(xs) == 0:
        return 0
    _, idx = eval_Phi(cert, xs, ys)
    pole = np.array([term_identity(int(k), cert.symmetric)[0] for k in idx])
    seg = np.array(cert.pole_segments)[pole]
    return int(np.sum(seg != owners))


# ------------------------------------------------------------------------ xi


def off_tube_xi(domain, epsilon, eta, resolution, interior_resolution=None):
    """Grid minimum of <x - y, v(y)>/|x - y| over boundary y and partners x
    at least epsilon away, excluding pairs that share an eta-tube of a segment."""
    if interior_resolution is None:
        interior_resolution = max(resolution, 0.05 * domain.diameter)
    segs = domain.maximal_segments(epsilon)
    bpts, bnrm = domain.boundary_samples(resolution)
    depths = sorted({1.01 * eta, 1.5 * eta, 2 * eta, 4 * eta} | {resolution * 2.0**k for k in range(0, 4)})
    pool = partner_pool(domain, resolution, interior_resolution, depths)
    n_circle = max(int(math.ceil(2 * math.pi * epsilon / resolution)), 8)
    circle = epsilon * sphere_directions(domain.dim, n_circle)
    in_tube_b = np.stack([s.distance(bpts) <= eta for s in segs], axis=1)
    best = math.inf
    step = max(1, 1_000_000 // (len(pool) + len(circle)))
    for s0 in range(0, len(bpts), step):
        cb, cn = bpts[s0 : s0 + step], bnrm[s0 : s0 + step]
        owner, q = _pairs_for(domain, cb, pool, circle, epsilon)
        if len(q) == 0:
            continue
        in_tube_q = np.stack([s.distance(q) <= eta for s in segs], axis=1)
        shared = np.any(in_tube_q & in_tube_b[s0 + owner], axis=1)
        keep = ~shared
        if not np.any(keep):
            continue
        diff = q[keep] - cb[owner[keep]]
        ratio = _dot(diff, cn[owner[keep]]) / np.sqrt(_dot(diff, diff))
        best = min(best, float(ratio.min()))
    return best


# ------------------------------------------------------------------ constants


def planar_volatility_floor(domain, epsilon, delta, S, sd):
    """Floor on (dPhi)^2/dt from the damped-perturbation norm difference.

    ||A||^2 - ||B||^2 >= 2 kappa eps^2 (1 - sd/S)(1 - delta sd/eps) with
    kappa >= delta exp(-sd/S), and ||A|| + ||B|| <= 2 diam + 2 delta sd (1 + diam/(2S)).
    """
    kmin = delta * math.exp(-sd / S)
    num = 2 * kmin * epsilon**2 * (1 - sd / S) * (1 - delta * sd / epsilon)
    den = 2 * domain.diameter + 2 * delta * sd * (1 + domain.diameter / (2 * S))
    return (num / den) ** 2


def interior_drift_sup(poles, delta, S, domain, epsilon, samples=400, step=1e-5, seed=0):
    """Sampled sup over F of 1/2 tr(Hxx + Hyy) + ||Hxy||_* for every term.

    This bounds the absolutely continuous drift of each term for any
    contraction J; it equals 2n for undamped perturbations.
    """
    rng = np.random.default_rng(seed)
    n = domain.dim
    grid = domain.interior_grid(domain.diameter / 30)
    bpts, _ = domain.boundary_samples(domain.diameter / 30)
    pts = np.concatenate([grid, bpts])
    i = rng.integers(len(pts), size=samples * 4)
    j = rng.integers(len(pts), size=samples * 4)
    far = np.linalg.norm(pts[i] - pts[j], axis=1) >= epsilon
    X, Y = pts[i[far]][:samples], pts[j[far]][:samples]
    best = 2.0 * n
    for p in poles:
        for swap in (False, True):
            Hxx = np.zeros((len(X), n, n))
            Hyy = np.zeros_like(Hxx)
            Hxy = np.zeros_like(Hxx)
            for k in range(n):
                e = np.zeros(n)
                e[k] = step
                gxp, gyp = term_gradients(p, delta, S, X + e, Y, swap)
                gxm, gym = term_gradients(p, delta, S, X - e, Y, swap)
                Hxx[:, :, k] = (gxp - gxm) / (2 * step)
                Hxy[:, :, k] = (gyp - gym) / (2 * step)  # d/dx_k of grad_y
                gxp, gyp = term_gradients(p, delta, S, X, Y + e, swap)
                gxm, gym = term_gradients(p, delta, S, X, Y - e, swap)
                Hyy[:, :, k] = (gyp - gym) / (2 * step)
            nuc = np.linalg.svd(Hxy, compute_uv=False).sum(axis=1)
            val = 0.5 * (np.trace(Hxx, axis1=1, axis2=2) + np.trace(Hyy, axis1=1, axis2=2)) + nuc
            best = max(best, float(val.max()))
    return best


def delta_bounds(domain, epsilon, R, S, sd, xi, eta):
    """Upper bounds on delta keyed by the condition they come from."""
    diam = domain.diameter
    spread = (diam + R) * (1 + diam / (2 * S))
    return {
        "volatility": epsilon / sd,
        "norm_lower_bound": epsilon / (sd + 0.5 * diam),
        "direct_drift": epsilon * xi / spread,
        "tube_drift": epsilon / spread * (math.sqrt(1 - eta**2 / epsilon**2) - eta / epsilon),
    }


# -------------------------------------------------------------------- builder


def build_planar_certificate(
    domain: ConvexDomain,
    epsilon: float,
    R: float,
    sigma: float,
    center=None,
    resolution: float | None = None,
    interior_resolution: float | None = None,
    eta: float | None = None,
    localization_samples: int = 2000,
):
    """Assemble poles, eta, xi, delta and the supermartingale constants.

    Falls back to the single-pole certificate when the boundary has no
    segments of length >= epsilon.
    """
    if not 1 < sigma < 2:
        raise PreconditionError(f"sigma={sigma} must lie strictly between 1 and 2")
    if domain.dim != 2:
        raise PreconditionError("planar certificates need a planar domain")
    if resolution is None:
        resolution = 0.01 * domain.diameter
    c = domain.center if center is None else np.asarray(center, dtype=float)
    pole_objs = build_poles(domain, epsilon, R, c)
    if not pole_objs:
        p = c + np.array([R, 0.0])
        return select_simple_certificate(domain, epsilon, p, resolution=resolution)

    poles = np.array([q.point for q in pole_objs])
    S = sigma * R
    sd = max(domain.sup_dist(q) for q in poles)
    if not S > sd:
        raise PreconditionError(f"S={S:.6g} must exceed the largest pole sup-distance {sd:.6g}")
    phi = line_angle_phi(domain.maximal_segments(epsilon))

    def make(delta, eta_, xi_, a=0.0, b=0.0, lam=0.0, log_c=0.0, mphi=0.0, margins=None):
        return PlanarCertificate(
            domain=domain, poles=poles, pole_segments=[q.segment for q in pole_objs],
            pole_signs=[q.sign for q in pole_objs], delta=float(delta), S=S, R=float(R),
            sigma=float(sigma), phi=phi, eta=float(eta_), xi=float(xi_), center=c,
            epsilon=float(epsilon), a=a, b=b, lam=lam, log_c=log_c, max_phi=mphi,
            grid_resolution=float(resolution), worst_margins=margins or {},
        )

    # criterion ratio on parallel faces; delta does not enter the ratio
    probe = make(1e-6, 0.0, 0.0)
    worst_ratio = math.inf
    for x, y, k, m in parallel_configurations(probe):
        worst_ratio = min(worst_ratio, criterion_ratio(probe, x, y, k, m))
    if not worst_ratio > 1:
        raise CriterionRatioError(f"criterion ratio {worst_ratio:.12g} <= 1; increase R")

    # eta: largest value in a halving ladder for which localization holds
    if eta is None:
        eta = epsilon / 4
        for _ in range(40):
            xs, ys, own = near_segment_pairs(domain, epsilon, eta, count=localization_samples)
            if localization_failures(probe, xs, ys, own) == 0:
                break
            eta *= 0.5
        else:
            raise NoFeasibleDeltaError("localization fails for every tube width tried")
    if not math.sqrt(1 - eta**2 / epsilon**2) - eta / epsilon > 0:
        raise PreconditionError("tube width too large relative to epsilon")

    xi = 0.5 * off_tube_xi(domain, epsilon, eta, resolution, interior_resolution)
    if not xi > 0:
        raise NoFeasibleDeltaError("off-tube normal component is not bounded away from zero on the grid")
    bounds = delta_bounds(domain, epsilon, R, S, sd, xi, eta)
    delta = SAFETY * min(bounds.values())

    for _ in range(20):
        a = planar_volatility_floor(domain, epsilon, delta, S, sd)
        bsup = interior_drift_sup(poles, delta, S, domain, epsilon)
        b = 2.0 * domain.dim + 2.0 * max(0.0, bsup - 2.0 * domain.dim)
        mphi = 0.5 * domain.diameter**2 + delta * domain.diameter * sd
        b, lam, log_c = drift_constants(a, domain.dim, mphi, b=b)
        cert = make(delta, eta, xi, a, b, lam, log_c, mphi)
        checks = boundary_drift_sweep(cert, resolution, interior_resolution)
        if all(ch.passed for ch in checks):
            margins = {ch.name: ch.worst_margin for ch in checks}
            margins["criterion_ratio_min"] = worst_ratio
            return make(delta, eta, xi, a, b, lam, log_c, mphi, margins)
        delta *= 0.5
    raise NoFeasibleDeltaError("singular drift verification fails on the grid")
