"""Grid verification of the boundary drift inequalities and path-level
drift/volatility estimates."""
from __future__ import annotations

import math

import numpy as np

from ..errors import WindowTooShortError
from ..geometry import ConvexDomain
from .functions import _dot, eval_Phi, phi_gradients
from .types import InequalityCheck, VerificationReport

CHUNK_PAIRS = 2_000_000


def sphere_directions(dim: int, count: int) -> np.ndarray:
    if dim == 2:
        th = 2 * math.pi * np.arange(count) / count
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    g = np.random.default_rng(12345).standard_normal((count, dim))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def partner_pool(domain: ConvexDomain, resolution: float, interior_resolution: float, depths=()):
    """Fixed partner points: boundary samples, an interior lattice and inward
    offset layers of a coarser boundary sample."""
    bpts, _ = domain.boundary_samples(resolution)
    parts = [bpts, domain.interior_grid(interior_resolution)]
    cpts, cnrm = domain.boundary_samples(interior_resolution)
    for d in depths:
        layer = cpts + d * cnrm
        parts.append(layer[domain.contains(layer)])
    pool = np.concatenate([p for p in parts if len(p)])
    return np.unique(np.round(pool, 15), axis=0)


def _pairs_for(domain, chunk_pts, pool, circle, epsilon):
    """Partner candidates for each boundary point of the chunk: the pool plus
    an epsilon-sphere around the point, restricted to the closure and to
    distance >= epsilon."""
    k = len(chunk_pts)
    ring = chunk_pts[:, None, :] + circle[None, :, :]
    cand = np.concatenate([np.broadcast_to(pool, (k,) + pool.shape), ring], axis=1)
    owner = np.repeat(np.arange(k), cand.shape[1])
    cand = cand.reshape(-1, chunk_pts.shape[1])
    diff = cand - chunk_pts[owner]
    ok = _dot(diff, diff) >= epsilon * epsilon * (1 - 1e-12)
    ok &= domain.contains(cand, tol=domain.boundary_tol)
    return owner[ok], cand[ok]


def boundary_drift_sweep(cert, resolution: float, interior_resolution: float | None = None, depths=None):
    """Worst singular-drift coefficients of the active term.

    For a boundary point b with inward normal v and partner q with
    |b - q| >= epsilon the two quantities checked are

        <grad_x Phi(b, q), v>   (first particle on the boundary)
        <grad_y Phi(q, b), v>   (second particle on the boundary)

    and both must be <= 0. Corners contribute one entry per normal-cone
    generator; linearity in v covers the rest of the cone.
    """
    domain = cert.domain
    eps = cert.epsilon
    if interior_resolution is None:
        interior_resolution = max(resolution, 0.05 * domain.diameter)
    if depths is None:
        base = [resolution * 2.0 ** k for k in range(-2, 4)]
        eta = getattr(cert, "eta", None)
        if eta:
            base += [0.5 * eta, eta, 1.01 * eta, 2 * eta]
        depths = sorted(set(base))
    bpts, bnrm = domain.boundary_samples(resolution)
    pool = partner_pool(domain, resolution, interior_resolution, depths)
    n_circle = max(int(math.ceil(2 * math.pi * eps / resolution)), 8)
    circle = eps * sphere_directions(domain.dim, n_circle)

    names = ("x_on_boundary", "y_on_boundary")
    worst = {nm: (-math.inf, None) for nm in names}
    count = 0
    per_point = len(pool) + len(circle)
    step = max(1, CHUNK_PAIRS // max(per_point, 1))
    for s in range(0, len(bpts), step):
        cb, cn = bpts[s : s + step], bnrm[s : s + step]
        owner, q = _pairs_for(domain, cb, pool, circle, eps)
        if len(q) == 0:
            continue
        b, v = cb[owner], cn[owner]
        count += len(q)
        gx, _ = phi_gradients(cert, b, q)
        m1 = _dot(gx, v)
        _, gy = phi_gradients(cert, q, b)
        m2 = _dot(gy, v)
        for nm, m, xs, ys in ((names[0], m1, b, q), (names[1], m2, q, b)):
            j = int(np.argmax(m))
            if m[j] > worst[nm][0]:
                worst[nm] = (float(m[j]), {"x": xs[j].tolist(), "y": ys[j].tolist(), "normal": v[j].tolist()})
    return [InequalityCheck(nm, resolution, worst[nm][0], worst[nm][1], count) for nm in names]


def verify_boundary_drift(cert, resolution: float | None = None, interior_resolution: float | None = None):
    """Sweep boundary points against partners at least epsilon away and
    report the worst singular-drift margin for each particle role."""
    if resolution is None:
        resolution = cert.grid_resolution
    return VerificationReport(boundary_drift_sweep(cert, resolution, interior_resolution))


# --------------------------------------------------------------------- paths


def attach_certificate(cert, traj):
    """Return the trajectory with Phi and Psi series filled in."""
    from dataclasses import replace

    from .functions import eval_Psi

    phi, _ = eval_Phi(cert, traj.X, traj.Y)
    psi, _ = eval_Psi(cert, phi)
    return replace(traj, phi=np.asarray(phi), psi=np.asarray(psi))


def path_drift_volatility(cert, traj, window: int = 100, z_tol: float = 3.0):
    """Windowed drift and realized volatility of Phi along a trajectory.

    Only the part before the coupling time is used. For each window of
    ``window`` consecutive increments it returns the realized quadratic
    variation per unit time of Phi, the mean drift of Phi per unit time and
    the mean drift per unit time of Z = Psi + t in the form
    d log(c - Psi): a window is flagged when its volatility falls below the
    floor ``a`` or when Phi's drift exceeds what the volatility allows
    (drift - lambda/2 vol > z_tol standard errors above zero).
    """
    if window < 2:
        raise WindowTooShortError("window must contain at least 2 increments")
    tr = traj.pre_stop()
    phi = tr.phi
    if phi is None:
        phi, _ = eval_Phi(cert, tr.X, tr.Y)
    phi = np.asarray(phi, dtype=float)
    steps = np.diff(tr.steps)
    if len(phi) < window + 1:
        raise WindowTooShortError(f"trajectory has {len(phi) - 1} increments, window needs {window}")
    if np.any(steps != steps[0]):
        raise ValueError("trajectory is not uniformly sampled")
    dt = tr.h * steps[0]
    inc = np.diff(phi)
    nw = len(inc) // window
    blocks = inc[: nw * window].reshape(nw, window)
    vol = np.sum(blocks**2, axis=1) / (window * dt)
    drift = np.sum(blocks, axis=1) / (window * dt)
    se = np.std(blocks, axis=1, ddof=1) / math.sqrt(window) / dt
    generator = drift - 0.5 * cert.lam * vol
    return {
        "t": tr.t[: nw * window : window],
        "volatility": vol,
        "drift": drift,
        "generator": generator,
        "low_volatility": vol < cert.a,
        "excess_drift": generator > z_tol * se,
        "floor": cert.a,
        "window": window,
        "dt": dt,
    }
