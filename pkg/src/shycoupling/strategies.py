"""Co-adapted coupling strategies.

A strategy maps the current state ``(t, X, Y)`` to drive matrices ``(J, K)``
with ``J^T J + K^T K = I`` and the partner increment is
``dY = J^T dB + K^T dC`` for independent Gaussian increments ``dB, dC``.
Custom strategies only ever provide ``J``; ``K`` is completed spectrally.

Batched conventions: states are ``(m, n)`` arrays, drive matrices
``(m, n, n)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NotAContractionError, StrategyContractError

EIG_MERGE_TOL = 1e-9
EIG_ONE_TOL = 1e-9
KPLUS_CAP = 1e9
CONTRACT_TOL = 1e-8
COINCIDENT_DIST = 1e-14


@dataclass(frozen=True)
class DriveMatrices:
    J: np.ndarray
    K: np.ndarray

    def residual(self) -> float:
        """Max-entry norm of ``J^T J + K^T K - I`` (over the batch if batched)."""
        J, K = np.asarray(self.J), np.asarray(self.K)
        n = J.shape[-1]
        G = np.swapaxes(J, -1, -2) @ J + np.swapaxes(K, -1, -2) @ K
        return float(np.abs(G - np.eye(n)).max())


def _unit(e):
    e = np.asarray(e, dtype=float)
    nrm = np.linalg.norm(e)
    if nrm == 0:
        raise ValueError("direction vector must be nonzero")
    return e / nrm


def reflection_drive(e) -> DriveMatrices:
    """Mirror coupling: ``J = I - 2 e e^T``, ``K = 0``."""
    e = _unit(e)
    n = len(e)
    return DriveMatrices(np.eye(n) - 2 * np.outer(e, e), np.zeros((n, n)))


def perverse_drive(e) -> DriveMatrices:
    """``J = -I + 2 e e^T``, ``K = 0``: kills the martingale part of the distance."""
    e = _unit(e)
    n = len(e)
    return DriveMatrices(-np.eye(n) + 2 * np.outer(e, e), np.zeros((n, n)))


def synchronous_drive(n: int = 2) -> DriveMatrices:
    return DriveMatrices(np.eye(n), np.zeros((n, n)))


def independent_drive(n: int = 2) -> DriveMatrices:
    return DriveMatrices(np.zeros((n, n)), np.eye(n))


@dataclass(frozen=True)
class SpectralCompletion:
    """Spectral completion of a contraction ``J``.

    ``K`` is the PSD square root of ``I - J^T J`` and ``K_pinv`` its
    pseudo-inverse vanishing on the range of ``H1`` (the eigenvalue-one
    projection of ``J^T J``). ``ladder`` lists ``(lambda_i^2, H_i)`` for the
    eigenvalues strictly between 0 and 1, in decreasing order.
    """

    K: np.ndarray
    K_pinv: np.ndarray
    H1: np.ndarray
    H0: np.ndarray
    ladder: list = field(default_factory=list)
    flagged: bool = False

    @property
    def projections(self):
        return [self.H1] + [P for _, P in self.ladder] + [self.H0]


def _check_contraction(J, tol=1e-10):
    smax = np.linalg.norm(J, 2)
    if smax > 1 + tol:
        raise NotAContractionError(f"largest singular value {smax:.12g} exceeds 1")


def _cluster(w, merge_tol):
    """Group indices of ascending eigenvalues ``w`` whose neighbours lie within merge_tol."""
    groups = [[0]]
    for k in range(1, len(w)):
        if w[k] - w[groups[-1][-1]] <= merge_tol:
            groups[-1].append(k)
        else:
            groups.append([k])
    return groups


def spectral_complete(J, *, merge_tol=EIG_MERGE_TOL, one_tol=EIG_ONE_TOL, cap=KPLUS_CAP) -> SpectralCompletion:
    J = np.asarray(J, dtype=float)
    n = J.shape[0]
    _check_contraction(J)
    G = J.T @ J
    G = 0.5 * (G + G.T)
    w, U = np.linalg.eigh(G)
    w = np.clip(w, 0.0, 1.0)

    H1 = np.zeros((n, n))
    H0 = np.zeros((n, n))
    ladder = []
    for g in _cluster(w, merge_tol):
        P = U[:, g] @ U[:, g].T
        val = float(w[g].mean())
        if val >= 1 - one_tol:
            H1 += P
        elif val <= merge_tol:
            H0 += P
        else:
            ladder.append((val, P))
    ladder.sort(key=lambda item: -item[0])

    root = np.sqrt(1.0 - w)
    K = (U * root) @ U.T
    inv = np.where(w >= 1 - one_tol, 0.0, 1.0 / np.where(w >= 1 - one_tol, 1.0, root))
    K_pinv = (U * inv) @ U.T
    flagged = bool(np.abs(K_pinv).max() > cap)
    if flagged:
        K_pinv = np.clip(K_pinv, -cap, cap)
    return SpectralCompletion(
        K=0.5 * (K + K.T), K_pinv=0.5 * (K_pinv + K_pinv.T), H1=H1, H0=H0, ladder=ladder, flagged=flagged
    )


def _limit_projection(M, max_squarings=64):
    """Top eigenprojection of a PSD matrix by trace-normalized repeated squaring."""
    A = M / np.trace(M)
    for _ in range(max_squarings):
        A2 = A @ A
        A2 /= np.trace(A2)
        A2 = 0.5 * (A2 + A2.T)
        done = np.abs(A2 - A).max() < 1e-15
        A = A2
        if done:
            break
    # A -> P / rank(P)
    P = A * (np.trace(A) / np.trace(A @ A))
    return 0.5 * (P + P.T)


def spectral_ladder(J, *, one_tol=EIG_ONE_TOL, tiny=1e-12):
    """Iterative decomposition of ``J^T J`` by powers, without an eigensolver.

    Repeated squaring isolates the eigenprojection of the current largest
    eigenvalue, the eigenvalue is read off as a Rayleigh quotient and the
    component is removed before continuing. Returns ``(H1, [(lambda^2, H)], H0)``.
    Only reliable when distinct eigenvalues are well separated.
    """
    J = np.asarray(J, dtype=float)
    n = J.shape[0]
    _check_contraction(J)
    M = J.T @ J
    M = 0.5 * (M + M.T)
    H1 = np.zeros((n, n))
    ladder = []
    total = np.zeros((n, n))
    while np.trace(M) > tiny * n and np.trace(total) < n - 0.5:
        P = _limit_projection(M)
        mu = float(np.trace(M @ P) / np.trace(P))
        if mu <= tiny:
            break
        if mu >= 1 - one_tol and not ladder:
            H1 = H1 + P
        else:
            ladder.append((mu, P))
        total = total + P
        M = M - mu * P
        M = 0.5 * (M + M.T)
    return H1, ladder, np.eye(n) - total


def recover_driver(dA, dB, completion: SpectralCompletion, J, dD):
    """Rebuild the independent driver: ``dC = K^+ (dA - J^T dB) + H1 dD``.

    Accepts single increments ``(n,)`` or batches ``(m, n)`` (rows are samples).
    """
    dA, dB, dD = (np.asarray(a, dtype=float) for a in (dA, dB, dD))
    J = np.asarray(J, dtype=float)
    n = J.shape[0]
    if not (dA.shape == dB.shape == dD.shape and dA.shape[-1] == n and completion.K.shape == (n, n)):
        raise ValueError("dimension mismatch between increments and drive matrices")
    # row form of J^T v is v @ J
    resid = dA - dB @ J
    return resid @ completion.K_pinv.T + dD @ completion.H1.T


# --------------------------------------------------------------------------- strategies


def _rowdot(a, b):
    out = a[:, 0] * b[:, 0]
    for j in range(1, a.shape[1]):
        out = out + a[:, j] * b[:, j]
    return out


def _unit_rows(X, Y):
    diff = X - Y
    r = np.sqrt(_rowdot(diff, diff))
    degenerate = r < COINCIDENT_DIST
    e = diff / np.where(degenerate, 1.0, r)[:, None]
    return e, degenerate


class Strategy:
    """Base co-adapted coupling strategy.

    Subclasses implement :meth:`jmatrix` (batched J). ``K`` is obtained by
    spectral completion, so every strategy satisfies the coupling constraint.
    """

    name = "custom"
    check_contract = True

    def jmatrix(self, t, X, Y):
        raise NotImplementedError

    def drive(self, t, X, Y):
        """Batched ``(J, K)`` for states ``X, Y`` of shape ``(m, n)``."""
        J = self.jmatrix(t, X, Y)
        return J, complete_k_batch(J)

    def increment(self, t, X, Y, dB, dC):
        """Partner increment ``J^T dB + K^T dC`` for each row."""
        J, K = self.drive(t, X, Y)
        if self.check_contract:
            n = X.shape[1]
            G = np.swapaxes(J, 1, 2) @ J + np.swapaxes(K, 1, 2) @ K
            bad = np.abs(G - np.eye(n)).max()
            if bad > CONTRACT_TOL:
                raise StrategyContractError(f"{self.name}: |J^T J + K^T K - I| = {bad:.3g} at t={t}")
        n = X.shape[1]
        out = np.zeros_like(dB)
        for i in range(n):
            acc = J[:, 0, i] * dB[:, 0] + K[:, 0, i] * dC[:, 0]
            for j in range(1, n):
                acc = acc + J[:, j, i] * dB[:, j] + K[:, j, i] * dC[:, j]
            out[:, i] = acc
        return out

    def to_dict(self):
        return {"name": self.name}


def complete_k_batch(J):
    """PSD root of ``I - J^T J`` for a batch of contractions."""
    G = np.swapaxes(J, 1, 2) @ J
    G = 0.5 * (G + np.swapaxes(G, 1, 2))
    w, U = np.linalg.eigh(G)
    if np.any(w > 1 + 1e-9):
        raise NotAContractionError("strategy returned a non-contraction J")
    root = np.sqrt(np.clip(1.0 - w, 0.0, None))
    return (U * root[:, None, :]) @ np.swapaxes(U, 1, 2)


class Synchronous(Strategy):
    name = "synchronous"
    check_contract = False

    def jmatrix(self, t, X, Y):
        return np.broadcast_to(np.eye(X.shape[1]), (len(X), X.shape[1], X.shape[1])).copy()

    def drive(self, t, X, Y):
        J = self.jmatrix(t, X, Y)
        return J, np.zeros_like(J)

    def increment(self, t, X, Y, dB, dC):
        return dB.copy()


class Independent(Strategy):
    name = "independent"
    check_contract = False

    def jmatrix(self, t, X, Y):
        n = X.shape[1]
        return np.zeros((len(X), n, n))

    def drive(self, t, X, Y):
        J = self.jmatrix(t, X, Y)
        return J, np.broadcast_to(np.eye(X.shape[1]), J.shape).copy()

    def increment(self, t, X, Y, dB, dC):
        return dC.copy()


class _MirrorFamily(Strategy):
    """``J = s (I - 2 e e^T)`` with ``e = (X - Y)/|X - Y|``; s=+1 reflection, s=-1 perverse."""

    check_contract = False
    sign = 1.0

    def jmatrix(self, t, X, Y):
        e, degenerate = _unit_rows(X, Y)
        n = X.shape[1]
        J = self.sign * (np.eye(n)[None] - 2 * e[:, :, None] * e[:, None, :])
        J[degenerate] = np.eye(n)
        return J

    def drive(self, t, X, Y):
        J = self.jmatrix(t, X, Y)
        return J, np.zeros_like(J)

    def increment(self, t, X, Y, dB, dC):
        e, degenerate = _unit_rows(X, Y)
        proj = _rowdot(e, dB)
        out = self.sign * (dB - 2 * e * proj[:, None])
        out[degenerate] = dB[degenerate]
        return out


class Reflection(_MirrorFamily):
    name = "reflection"
    sign = 1.0


class Perverse(_MirrorFamily):
    name = "perverse"
    sign = -1.0


class Rotation(Strategy):
    """Planar rotation coupling ``J = R(angle)`` (orthogonal, so ``K = 0``)."""

    name = "rotation"

    def __init__(self, angle: float):
        self.angle = float(angle)
        c, s = math.cos(self.angle), math.sin(self.angle)
        self._J = np.array([[c, -s], [s, c]])

    def jmatrix(self, t, X, Y):
        if X.shape[1] != 2:
            raise ValueError("rotation strategy is planar")
        return np.broadcast_to(self._J, (len(X), 2, 2)).copy()

    def to_dict(self):
        return {"name": "custom", "rotation_angle": self.angle}


class FixedMatrix(Strategy):
    """Constant contraction ``J``; ``K`` from spectral completion."""

    name = "matrix"

    def __init__(self, J):
        self.J = np.asarray(J, dtype=float)
        self.completion = spectral_complete(self.J)

    def jmatrix(self, t, X, Y):
        return np.broadcast_to(self.J, (len(X),) + self.J.shape).copy()

    def drive(self, t, X, Y):
        J = self.jmatrix(t, X, Y)
        return J, np.broadcast_to(self.completion.K, J.shape).copy()

    def to_dict(self):
        return {"name": "custom", "matrix": self.J.tolist()}


class FunctionStrategy(Strategy):
    """Wrap a user callable ``fn(t, X, Y) -> J`` (batched)."""

    def __init__(self, fn, name="custom"):
        self.fn = fn
        self.name = name

    def jmatrix(self, t, X, Y):
        return np.asarray(self.fn(t, X, Y), dtype=float)


BUILTIN = {
    "reflection": Reflection,
    "perverse": Perverse,
    "synchronous": Synchronous,
    "independent": Independent,
}


def strategy_from_config(spec) -> Strategy:
    """Strategy from a name or a ``{"name": ..., ...}`` block."""
    if isinstance(spec, str):
        spec = {"name": spec}
    name = spec.get("name")
    if name in BUILTIN:
        return BUILTIN[name]()
    if name == "custom":
        if "rotation_angle" in spec:
            return Rotation(spec["rotation_angle"])
        if "matrix" in spec:
            try:
                return FixedMatrix(spec["matrix"])
            except NotAContractionError as exc:
                raise ConfigError(str(exc), key="strategy.matrix") from exc
        raise ConfigError("custom strategy needs 'rotation_angle' or 'matrix'", key="strategy")
    raise ConfigError(f"unknown strategy {name!r}", key="strategy.name")
