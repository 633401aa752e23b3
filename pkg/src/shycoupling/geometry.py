"""Bounded convex domains and the geometric primitives used by the
dynamics and the certificates: Euclidean projection, normal cones,
maximal boundary segments and pole construction.

All domains are immutable after construction. Point arguments may be a
single ``(n,)`` vector or a batch ``(m, n)``; results follow the input
shape.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import (
    DomainError,
    NotOnBoundaryError,
    RTooSmallError,
    UnsupportedDimensionError,
)

BOUNDARY_RTOL = 1e-9


def _batch(points, dim):
    arr = np.asarray(points, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[-1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {arr.shape}")
    return arr, single


def _unbatch(arr, single):
    return arr[0] if single else arr


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class NormalCone:
    """Inward normal cone at a boundary point.

    ``generators`` holds one unit vector at smooth points and two at polygon
    corners; the cone is their nonnegative hull.
    """

    point: np.ndarray
    generators: np.ndarray

    @property
    def is_corner(self) -> bool:
        return len(self.generators) > 1


@dataclass(frozen=True)
class BoundarySegment:
    start: np.ndarray
    end: np.ndarray
    index: int

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.end - self.start))

    @property
    def direction(self) -> np.ndarray:
        d = self.end - self.start
        return d / np.linalg.norm(d)

    @property
    def line(self):
        """(point, unit direction) of the supporting line."""
        return self.start, self.direction

    def distance(self, points) -> np.ndarray:
        """Euclidean distance from points to the closed segment."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        d = self.end - self.start
        t = np.clip((pts - self.start) @ d / (d @ d), 0.0, 1.0)
        out = np.linalg.norm(pts - (self.start + t[:, None] * d), axis=1)
        return out if np.ndim(points) > 1 else out[0]


@dataclass(frozen=True)
class Pole:
    point: np.ndarray
    segment: int
    sign: int  # +1: forward along the segment orientation, -1: backward


class ConvexDomain:
    """Closure of a bounded convex domain in R^n."""

    kind = "abstract"
    dim: int

    # --- interface implemented by subclasses -------------------------------
    def contains(self, points, tol: float = 0.0):
        raise NotImplementedError

    def project(self, points):
        raise NotImplementedError

    def distance_to_boundary(self, points):
        raise NotImplementedError

    def inward_normals(self, point) -> NormalCone:
        raise NotImplementedError

    def sup_dist(self, point) -> float:
        raise NotImplementedError

    def boundary_samples(self, spacing: float):
        """Boundary points and inward unit normals, roughly ``spacing`` apart.

        Corners appear once per normal-cone generator.
        """
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    @property
    def center(self) -> np.ndarray:
        raise NotImplementedError

    @cached_property
    def diameter(self) -> float:
        raise NotImplementedError

    # --- shared ------------------------------------------------------------
    @property
    def boundary_tol(self) -> float:
        return BOUNDARY_RTOL * self.diameter

    def on_boundary(self, points):
        return self.distance_to_boundary(points) <= self.boundary_tol

    def maximal_segments(self, min_length: float) -> list[BoundarySegment]:
        if self.dim != 2:
            raise UnsupportedDimensionError("maximal segments are only computed for planar domains")
        return []

    def interior_grid(self, spacing: float) -> np.ndarray:
        """Points of a square lattice with the given spacing lying in the closure."""
        pts = self.boundary_samples(spacing)[0]
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        axes = [np.arange(lo[i] + spacing / 2, hi[i], spacing) for i in range(self.dim)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
        if len(grid) == 0:
            return grid
        return grid[self.contains(grid)]

    def domain_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def __repr__(self):
        return f"{type(self).__name__}({self.to_dict()})"


class Polygon(ConvexDomain):
    """Convex polygon given by counterclockwise vertices in strictly convex position."""

    kind = "polygon"
    dim = 2

    def __init__(self, vertices):
        v = np.asarray(vertices, dtype=float)
        if v.ndim == 1:
            v = v.reshape(-1, 2)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise DomainError("polygon needs at least three 2-d vertices")
        edges = np.roll(v, -1, axis=0) - v
        lengths = np.linalg.norm(edges, axis=1)
        if np.any(lengths <= 0):
            raise DomainError("polygon has repeated vertices")
        scale = lengths.max()
        cross = edges[:, 0] * np.roll(edges, -1, axis=0)[:, 1] - edges[:, 1] * np.roll(edges, -1, axis=0)[:, 0]
        # collinear triples make the segment structure ambiguous
        if np.any(cross <= 1e-12 * scale * scale):
            raise DomainError("polygon vertices must be strictly convex and counterclockwise")
        # reject star polygons whose winding exceeds one turn
        turning = np.arctan2(cross, np.sum(edges * np.roll(edges, -1, axis=0), axis=1)).sum()
        if abs(turning - 2 * np.pi) > 1e-6:
            raise DomainError("polygon vertices must wind once counterclockwise")
        self.vertices = _frozen(v)
        self.edges = _frozen(edges)
        self.edge_lengths = _frozen(lengths)
        self.normals = _frozen(np.stack([-edges[:, 1], edges[:, 0]], axis=1) / lengths[:, None])

    @classmethod
    def square(cls, side=2.0, center=(0.0, 0.0)):
        c = np.asarray(center, dtype=float)
        h = side / 2
        return cls(c + np.array([[-h, -h], [h, -h], [h, h], [-h, h]]))

    @classmethod
    def regular(cls, m, side=1.0, center=(0.0, 0.0), rotation=0.0):
        r = side / (2 * math.sin(math.pi / m))
        ang = rotation + 2 * np.pi * np.arange(m) / m
        return cls(np.asarray(center) + r * np.stack([np.cos(ang), np.sin(ang)], axis=1))

    @property
    def center(self):
        return self.vertices.mean(axis=0)

    @cached_property
    def diameter(self):
        d = self.vertices[:, None, :] - self.vertices[None, :, :]
        return float(np.sqrt((d**2).sum(-1)).max())

    def _face_values(self, pts):
        # signed distance to each edge line, positive on the inner side
        return (
            (pts[:, None, 0] - self.vertices[None, :, 0]) * self.normals[None, :, 0]
            + (pts[:, None, 1] - self.vertices[None, :, 1]) * self.normals[None, :, 1]
        )

    def contains(self, points, tol=0.0):
        pts, single = _batch(points, 2)
        out = self._face_values(pts).min(axis=1) >= -tol
        return _unbatch(out, single)

    def _nearest_on_edges(self, pts):
        e = self.edges
        rel0 = pts[:, None, 0] - self.vertices[None, :, 0]
        rel1 = pts[:, None, 1] - self.vertices[None, :, 1]
        t = (rel0 * e[None, :, 0] + rel1 * e[None, :, 1]) / (self.edge_lengths**2)[None, :]
        t = np.clip(t, 0.0, 1.0)
        q0 = self.vertices[None, :, 0] + t * e[None, :, 0]
        q1 = self.vertices[None, :, 1] + t * e[None, :, 1]
        d2 = (pts[:, None, 0] - q0) ** 2 + (pts[:, None, 1] - q1) ** 2
        k = np.argmin(d2, axis=1)
        rows = np.arange(len(pts))
        return np.stack([q0[rows, k], q1[rows, k]], axis=1), np.sqrt(d2[rows, k])

    def project(self, points):
        pts, single = _batch(points, 2)
        out = pts.copy()
        outside = self._face_values(pts).min(axis=1) < 0
        if np.any(outside):
            out[outside] = self._nearest_on_edges(pts[outside])[0]
        return _unbatch(out, single)

    def distance_to_boundary(self, points):
        pts, single = _batch(points, 2)
        vals = self._face_values(pts)
        inside = vals.min(axis=1) >= 0
        out = np.empty(len(pts))
        out[inside] = vals[inside].min(axis=1)
        if np.any(~inside):
            out[~inside] = self._nearest_on_edges(pts[~inside])[1]
        return _unbatch(out, single)

    def inward_normals(self, point):
        p = np.asarray(point, dtype=float)
        tol = self.boundary_tol
        if self.distance_to_boundary(p) > tol:
            raise NotOnBoundaryError(f"{p} is not within {tol:.3g} of the boundary")
        active = [i for i, seg in enumerate(self.segments) if seg.distance(p) <= tol]
        return NormalCone(point=p, generators=self.normals[active].copy())

    def sup_dist(self, point):
        p = np.asarray(point, dtype=float)
        return float(np.linalg.norm(self.vertices - p, axis=1).max())

    @cached_property
    def segments(self) -> list[BoundarySegment]:
        m = len(self.vertices)
        return [BoundarySegment(self.vertices[i], self.vertices[(i + 1) % m], i) for i in range(m)]

    def maximal_segments(self, min_length):
        # strict convexity makes every edge maximal
        return [s for s in self.segments if s.length >= min_length]

    def boundary_samples(self, spacing):
        pts, nrm = [], []
        m = len(self.vertices)
        for i in range(m):
            k = max(int(math.ceil(self.edge_lengths[i] / spacing)), 1)
            t = np.arange(k + 1) / k
            p = self.vertices[i] + t[:, None] * self.edges[i]
            pts.append(p)
            nrm.append(np.repeat(self.normals[i][None], k + 1, axis=0))
        return np.concatenate(pts), np.concatenate(nrm)

    def to_dict(self):
        return {"kind": self.kind, "vertices": [float(c) for c in self.vertices.ravel()]}


class Ball(ConvexDomain):
    """Euclidean ball of any dimension ("disc" in the plane)."""

    kind = "disc"

    def __init__(self, center=(0.0, 0.0), radius=1.0):
        c = np.asarray(center, dtype=float).ravel()
        if len(c) < 2:
            raise DomainError("dimension must be at least 2")
        if not radius > 0:
            raise DomainError("radius must be positive")
        self._center = _frozen(c)
        self.radius = float(radius)
        self.dim = len(c)

    @property
    def center(self):
        return self._center

    @cached_property
    def diameter(self):
        return 2 * self.radius

    def contains(self, points, tol=0.0):
        pts, single = _batch(points, self.dim)
        return _unbatch(np.linalg.norm(pts - self._center, axis=1) <= self.radius + tol, single)

    def project(self, points):
        pts, single = _batch(points, self.dim)
        rel = pts - self._center
        r2 = np.zeros(len(pts))
        for j in range(self.dim):
            r2 = r2 + rel[:, j] * rel[:, j]
        r = np.sqrt(r2)
        outside = r > self.radius
        out = pts.copy()
        if np.any(outside):
            out[outside] = self._center + rel[outside] * (self.radius / r[outside])[:, None]
        return _unbatch(out, single)

    def distance_to_boundary(self, points):
        pts, single = _batch(points, self.dim)
        return _unbatch(np.abs(self.radius - np.linalg.norm(pts - self._center, axis=1)), single)

    def inward_normals(self, point):
        p = np.asarray(point, dtype=float)
        if self.distance_to_boundary(p) > self.boundary_tol:
            raise NotOnBoundaryError(f"{p} is not on the sphere of radius {self.radius}")
        rel = p - self._center
        return NormalCone(point=p, generators=(-rel / np.linalg.norm(rel))[None])

    def sup_dist(self, point):
        return float(np.linalg.norm(np.asarray(point, dtype=float) - self._center) + self.radius)

    def boundary_samples(self, spacing):
        if self.dim == 2:
            k = max(int(math.ceil(2 * np.pi * self.radius / spacing)), 8)
            th = 2 * np.pi * np.arange(k) / k
            u = np.stack([np.cos(th), np.sin(th)], axis=1)
        else:
            # fixed-seed quasi-uniform sample of the sphere
            area = 2 * np.pi ** (self.dim / 2) / math.gamma(self.dim / 2) * self.radius ** (self.dim - 1)
            k = max(int(math.ceil(area / spacing ** (self.dim - 1))), 16)
            rng = np.random.default_rng(0)
            u = rng.standard_normal((k, self.dim))
            u /= np.linalg.norm(u, axis=1, keepdims=True)
        return self._center + self.radius * u, -u

    def to_dict(self):
        return {"kind": self.kind, "center": [float(c) for c in self._center], "radius": self.radius}


class _ParametricCurve(ConvexDomain):
    """Planar domain with a smooth boundary parametrized by an angle."""

    dim = 2
    _dense = 2048

    def __init__(self, center, angle):
        self._center = _frozen(np.asarray(center, dtype=float).ravel())
        if self._center.shape != (2,):
            raise DomainError("center must be a 2-vector")
        self.angle = float(angle)
        c, s = math.cos(self.angle), math.sin(self.angle)
        self._rot = _frozen([[c, -s], [s, c]])

    # local frame helpers
    def _to_local(self, pts):
        rel = pts - self._center
        return np.stack(
            [rel[:, 0] * self._rot[0, 0] + rel[:, 1] * self._rot[1, 0], rel[:, 0] * self._rot[0, 1] + rel[:, 1] * self._rot[1, 1]],
            axis=1,
        )

    def _to_global(self, loc):
        return self._center + np.stack(
            [loc[:, 0] * self._rot[0, 0] + loc[:, 1] * self._rot[0, 1], loc[:, 0] * self._rot[1, 0] + loc[:, 1] * self._rot[1, 1]],
            axis=1,
        )

    def _curve(self, theta):
        raise NotImplementedError

    def _level(self, loc):
        raise NotImplementedError

    def _outward_gradient(self, loc):
        raise NotImplementedError

    @property
    def center(self):
        return self._center

    def contains(self, points, tol=0.0):
        pts, single = _batch(points, 2)
        inside = self._level(self._to_local(pts)) <= 1.0
        if tol > 0:
            inside |= self.distance_to_boundary(pts) <= tol
        return _unbatch(inside, single)

    def _nearest_local(self, loc):
        """Nearest boundary point in local coordinates (dense scan + golden refine)."""
        th = 2 * np.pi * np.arange(self._dense) / self._dense
        curve = self._curve(th)
        d2 = (loc[:, None, 0] - curve[None, :, 0]) ** 2 + (loc[:, None, 1] - curve[None, :, 1]) ** 2
        k = np.argmin(d2, axis=1)
        step = 2 * np.pi / self._dense
        lo, hi = th[k] - step, th[k] + step
        g = (math.sqrt(5) - 1) / 2

        def f(t):
            c = self._curve(t)
            return (c[:, 0] - loc[:, 0]) ** 2 + (c[:, 1] - loc[:, 1]) ** 2

        a = hi - g * (hi - lo)
        b = lo + g * (hi - lo)
        fa, fb = f(a), f(b)
        for _ in range(60):
            left = fa < fb
            hi = np.where(left, b, hi)
            lo = np.where(left, lo, a)
            a = hi - g * (hi - lo)
            b = lo + g * (hi - lo)
            fa, fb = f(a), f(b)
        return self._curve((lo + hi) / 2)

    def project(self, points):
        pts, single = _batch(points, 2)
        out = pts.copy()
        loc = self._to_local(pts)
        outside = self._level(loc) > 1.0
        if np.any(outside):
            out[outside] = self._to_global(self._nearest_local(loc[outside]))
        return _unbatch(out, single)

    def distance_to_boundary(self, points):
        pts, single = _batch(points, 2)
        loc = self._to_local(pts)
        return _unbatch(np.linalg.norm(self._nearest_local(loc) - loc, axis=1), single)

    def _inward_normal_local(self, loc):
        g = self._outward_gradient(loc)
        return -g / np.linalg.norm(g, axis=1, keepdims=True)

    def inward_normals(self, point):
        p = np.asarray(point, dtype=float)
        if self.distance_to_boundary(p) > self.boundary_tol:
            raise NotOnBoundaryError(f"{p} is not on the boundary")
        loc = self._to_local(p[None])
        n_loc = self._inward_normal_local(loc)
        return NormalCone(point=p, generators=(n_loc @ self._rot.T))

    def _dense_boundary(self, k=20000):
        th = 2 * np.pi * np.arange(k) / k
        return self._to_global(self._curve(th))

    @cached_property
    def diameter(self):
        # centrally symmetric: diameter is twice the largest radius
        return float(2 * np.linalg.norm(self._dense_boundary() - self._center, axis=1).max())

    def sup_dist(self, point):
        return float(np.linalg.norm(self._dense_boundary() - np.asarray(point, dtype=float), axis=1).max())

    def boundary_samples(self, spacing):
        k = 8192
        th = 2 * np.pi * np.arange(k + 1) / k
        c = self._curve(th)
        s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(c, axis=0), axis=1))])
        m = max(int(math.ceil(s[-1] / spacing)), 8)
        th_s = np.interp(np.arange(m) * s[-1] / m, s, th)
        loc = self._curve(th_s)
        return self._to_global(loc), self._inward_normal_local(loc) @ self._rot.T


class Ellipse(_ParametricCurve):
    kind = "ellipse"

    def __init__(self, center=(0.0, 0.0), semi_axes=(1.0, 1.0), angle=0.0):
        super().__init__(center, angle)
        a, b = (float(x) for x in semi_axes)
        if not (a > 0 and b > 0):
            raise DomainError("ellipse semi-axes must be positive")
        self.semi_axes = (a, b)

    def _curve(self, theta):
        a, b = self.semi_axes
        return np.stack([a * np.cos(theta), b * np.sin(theta)], axis=-1)

    def _level(self, loc):
        a, b = self.semi_axes
        return (loc[:, 0] / a) ** 2 + (loc[:, 1] / b) ** 2

    def _outward_gradient(self, loc):
        a, b = self.semi_axes
        return np.stack([loc[:, 0] / a**2, loc[:, 1] / b**2], axis=1)

    def project(self, points):
        pts, single = _batch(points, 2)
        out = pts.copy()
        loc = self._to_local(pts)
        outside = self._level(loc) > 1.0
        if np.any(outside):
            x = loc[outside]
            a2 = np.array([self.semi_axes[0] ** 2, self.semi_axes[1] ** 2])
            # Newton on the Lagrange multiplier; monotone from t=0 since f is convex decreasing
            t = np.zeros(len(x))
            for _ in range(100):
                den = a2[None, :] + t[:, None]
                f = ((np.sqrt(a2)[None, :] * x / den) ** 2).sum(1) - 1.0
                fp = -2.0 * (a2[None, :] * x**2 / den**3).sum(1)
                t = t - f / fp
            q = a2[None, :] * x / (a2[None, :] + t[:, None])
            out[outside] = self._to_global(q)
        return _unbatch(out, single)

    def to_dict(self):
        return {"kind": self.kind, "center": [float(c) for c in self._center], "semi_axes": list(self.semi_axes), "angle": self.angle}


class Superellipse(_ParametricCurve):
    """Lamé curve ``|u/a|^q + |v/b|^q <= 1`` with ``q >= 2`` (smooth, strictly convex)."""

    kind = "superellipse"

    def __init__(self, center=(0.0, 0.0), semi_axes=(1.0, 1.0), exponent=4.0, angle=0.0):
        super().__init__(center, angle)
        a, b = (float(x) for x in semi_axes)
        if not (a > 0 and b > 0):
            raise DomainError("semi-axes must be positive")
        if not exponent >= 2:
            raise DomainError("exponent must be >= 2 for a smooth boundary")
        self.semi_axes = (a, b)
        self.exponent = float(exponent)

    def _curve(self, theta):
        a, b = self.semi_axes
        e = 2.0 / self.exponent
        c, s = np.cos(theta), np.sin(theta)
        return np.stack([a * np.sign(c) * np.abs(c) ** e, b * np.sign(s) * np.abs(s) ** e], axis=-1)

    def _level(self, loc):
        a, b = self.semi_axes
        q = self.exponent
        return np.abs(loc[:, 0] / a) ** q + np.abs(loc[:, 1] / b) ** q

    def _outward_gradient(self, loc):
        a, b = self.semi_axes
        q = self.exponent
        gu = np.sign(loc[:, 0]) * np.abs(loc[:, 0] / a) ** (q - 1) / a
        gv = np.sign(loc[:, 1]) * np.abs(loc[:, 1] / b) ** (q - 1) / b
        return np.stack([gu, gv], axis=1)

    def to_dict(self):
        return {
            "kind": "smooth-parametric",
            "family": self.kind,
            "center": [float(c) for c in self._center],
            "semi_axes": list(self.semi_axes),
            "exponent": self.exponent,
            "angle": self.angle,
        }


def domain_from_dict(spec: dict) -> ConvexDomain:
    """Build a domain from its config/serialization block."""
    kind = spec.get("kind")
    if kind == "polygon":
        return Polygon(np.asarray(spec["vertices"], dtype=float).reshape(-1, 2))
    if kind in ("disc", "ball"):
        return Ball(spec.get("center", (0.0, 0.0)), spec.get("radius", 1.0))
    if kind == "square":
        return Polygon.square(spec.get("side", 2.0), spec.get("center", (0.0, 0.0)))
    if kind == "ellipse":
        return Ellipse(spec.get("center", (0.0, 0.0)), spec["semi_axes"], spec.get("angle", 0.0))
    if kind in ("smooth-parametric", "superellipse"):
        return Superellipse(
            spec.get("center", (0.0, 0.0)), spec.get("semi_axes", (1.0, 1.0)), spec.get("exponent", 4.0), spec.get("angle", 0.0)
        )
    raise DomainError(f"unknown domain kind {kind!r}")


def diameter(domain: ConvexDomain) -> float:
    return domain.diameter


def sup_dist(point, domain: ConvexDomain) -> float:
    return domain.sup_dist(point)


def project(domain: ConvexDomain, point):
    return domain.project(point)


def inward_normals(domain: ConvexDomain, boundary_point) -> NormalCone:
    return domain.inward_normals(boundary_point)


def maximal_segments(domain: ConvexDomain, min_length: float) -> list[BoundarySegment]:
    return domain.maximal_segments(min_length)


def line_angle_phi(segments) -> float:
    """phi such that 3*phi is the smallest nonzero angle (mod pi) between segment lines.

    Parallel pairs are excluded. With no non-parallel pair the constraint is
    vacuous and the largest possible value pi/6 is returned.
    """
    ang = [math.atan2(s.direction[1], s.direction[0]) % math.pi for s in segments]
    best = math.inf
    for i in range(len(ang)):
        for j in range(i + 1, len(ang)):
            d = abs(ang[i] - ang[j]) % math.pi
            d = min(d, math.pi - d)
            if d > 1e-12:
                best = min(best, d)
    if not math.isfinite(best):
        return math.pi / 6
    return best / 3


def min_pole_radius(domain: ConvexDomain, epsilon: float) -> float:
    """The bound diam(D) csc(phi) that the circle radius must exceed."""
    segs = domain.maximal_segments(epsilon)
    return domain.diameter / math.sin(line_angle_phi(segs))


def build_poles(domain: ConvexDomain, epsilon: float, R: float, center=None) -> list[Pole]:
    """Poles where the lines of maximal segments (length >= epsilon) meet the circle of radius R.

    For each segment the pole further along its orientation gets sign +1.
    """
    segs = domain.maximal_segments(epsilon)
    if not segs:
        return []
    c = domain.center if center is None else np.asarray(center, dtype=float)
    if not domain.contains(c) or domain.distance_to_boundary(c) <= domain.boundary_tol:
        raise ValueError("circle center must be interior to the domain")
    bound = domain.diameter / math.sin(line_angle_phi(segs))
    if not R > bound:
        raise RTooSmallError(f"R={R} must exceed diam(D) csc(phi) = {bound:.6g}")
    poles = []
    for seg in segs:
        l0, d = seg.line
        rel = l0 - c
        b = rel @ d
        disc = b * b - rel @ rel + R * R
        root = math.sqrt(disc)
        poles.append(Pole(point=l0 + (-b + root) * d, segment=seg.index, sign=+1))
        poles.append(Pole(point=l0 + (-b - root) * d, segment=seg.index, sign=-1))
    return poles
