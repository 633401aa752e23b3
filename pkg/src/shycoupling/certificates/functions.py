"""Hyperbolic perturbations of half squared distance, their minima and the
exponential transform used in the supermartingale argument.

All evaluators accept a single pair of points or batches of shape (m, n).
"""
from __future__ import annotations

import math

import numpy as np

from ..geometry import _batch, _unbatch

LOG_FLOAT_MAX = math.log(np.finfo(float).max)


def _pairs(x, y):
    x = np.asarray(x, dtype=float)
    dim = x.shape[-1]
    X, single = _batch(x, dim)
    Y, _ = _batch(y, dim)
    X, Y = np.broadcast_arrays(X, Y)
    return X, Y, single


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def eval_V(p, delta, x, y):
    """1/2 |x-y|^2 + (delta/2)(|x-p|^2 - |y-p|^2)."""
    X, Y, single = _pairs(x, y)
    p = np.asarray(p, dtype=float)
    w = X - Y
    out = 0.5 * _dot(w, w) + 0.5 * delta * (_dot(X - p, X - p) - _dot(Y - p, Y - p))
    return _unbatch(out, single)


def eval_V_midpoint(p, delta, x, y):
    """Same function written as 1/2 |x-y|^2 + delta <x-y, (x+y)/2 - p>."""
    X, Y, single = _pairs(x, y)
    w = X - Y
    out = 0.5 * _dot(w, w) + delta * _dot(w, 0.5 * (X + Y) - np.asarray(p, dtype=float))
    return _unbatch(out, single)


def damping(delta, S, Z):
    """kappa = delta * exp(-|Z|/S); S = inf gives kappa = delta."""
    return delta * np.exp(-np.sqrt(_dot(Z, Z)) / S)


def eval_Vtilde(p, delta, S, x, y):
    """1/2 |x-y|^2 + kappa <x-y, (x+y)/2 - p> with midpoint-dependent kappa."""
    X, Y, single = _pairs(x, y)
    w = X - Y
    Z = 0.5 * (X + Y) - np.asarray(p, dtype=float)
    out = 0.5 * _dot(w, w) + damping(delta, S, Z) * _dot(w, Z)
    return _unbatch(out, single)


def eval_Vtilde_split(p, delta, S, x, y):
    """Ṽ written with the difference of squared pole distances."""
    X, Y, single = _pairs(x, y)
    p = np.asarray(p, dtype=float)
    w = X - Y
    kappa = damping(delta, S, 0.5 * (X + Y) - p)
    out = 0.5 * _dot(w, w) + 0.5 * kappa * (_dot(X - p, X - p) - _dot(Y - p, Y - p))
    return _unbatch(out, single)


def term_gradients(p, delta, S, x, y, swap=False):
    """Spatial gradients (d/dx, d/dy) of Ṽ_p(x, y), or of Ṽ_p(y, x) when swap.

    With w = x - y, Z = (x+y)/2 - p, e = Z/|Z| and s = -1 for the swapped
    order, the term is 1/2|w|^2 + s kappa <w, Z> and

        d/dx = w + s (kappa (x - p) - kappa/(2S) <w, Z> e)
        d/dy = -w - s (kappa (y - p) + kappa/(2S) <w, Z> e)
    """
    X, Y, single = _pairs(x, y)
    p = np.asarray(p, dtype=float)
    s = -1.0 if swap else 1.0
    w = X - Y
    Z = 0.5 * (X + Y) - p
    rz = np.sqrt(_dot(Z, Z))
    kappa = delta * np.exp(-rz / S)
    e = Z / np.where(rz > 0, rz, 1.0)[:, None]
    g = _dot(w, Z)
    tilt = (kappa * g / (2 * S))[:, None] * e
    gx = w + s * (kappa[:, None] * (X - p) - tilt)
    gy = -w - s * (kappa[:, None] * (Y - p) + tilt)
    return _unbatch(gx, single), _unbatch(gy, single)


def term_table(poles, delta, S, X, Y, symmetric):
    """Values of every term of the minimum, shape (m, n_terms).

    Term 2k is Ṽ_{p_k}(x, y) and term 2k+1 is Ṽ_{p_k}(y, x) when symmetric;
    otherwise term k is Ṽ_{p_k}(x, y).
    """
    w = X - Y
    half = 0.5 * _dot(w, w)
    mid = 0.5 * (X + Y)
    cols = []
    for p in np.atleast_2d(poles):
        Z = mid - p
        kg = damping(delta, S, Z) * _dot(w, Z)
        cols.append(half + kg)
        if symmetric:
            cols.append(half - kg)
    return np.stack(cols, axis=-1)


def term_identity(k, symmetric):
    """(pole index, swapped) for term k."""
    return (k // 2, bool(k % 2)) if symmetric else (k, False)


def eval_Phi(cert, x, y):
    """Minimum over the certificate's terms and the index attaining it.

    Ties go to the lowest term index.
    """
    X, Y, single = _pairs(x, y)
    table = term_table(cert.poles, cert.delta, cert.S, X, Y, cert.symmetric)
    idx = np.argmin(table, axis=1)
    val = table[np.arange(len(idx)), idx]
    if single:
        return float(val[0]), int(idx[0])
    return val, idx


def phi_gradients(cert, x, y, idx=None):
    """Gradients of the active term at each pair."""
    X, Y, single = _pairs(x, y)
    if idx is None:
        _, idx = eval_Phi(cert, X, Y)
    idx = np.broadcast_to(np.asarray(idx), (len(X),))
    gx = np.empty_like(X)
    gy = np.empty_like(Y)
    for k in np.unique(idx):
        sel = idx == k
        pole, swap = term_identity(int(k), cert.symmetric)
        gx[sel], gy[sel] = term_gradients(cert.poles[pole], cert.delta, cert.S, X[sel], Y[sel], swap)
    return _unbatch(gx, single), _unbatch(gy, single)


def eval_Psi(cert, phi):
    """c (1 - exp(-lambda Phi)) with c = exp(log_c), evaluated in log space.

    Returns (value, saturated). Magnitudes beyond the float range are
    clipped to the largest float and flagged as saturated.
    """
    phi = np.asarray(phi, dtype=float)
    # very negative Phi (pairs closer than epsilon) overflows to -inf and saturates below
    with np.errstate(over="ignore"):
        core = -np.expm1(-cert.lam * phi)
    with np.errstate(divide="ignore"):
        log_mag = cert.log_c + np.log(np.abs(core))
    saturated = log_mag > LOG_FLOAT_MAX
    mag = np.exp(np.minimum(log_mag, LOG_FLOAT_MAX))
    value = np.sign(core) * mag
    if value.ndim == 0:
        return float(value), bool(saturated)
    return value, saturated


def log_psi_gap(cert, phi):
    """log(c - Psi) = log_c - lambda Phi, exact where Psi itself saturates."""
    return cert.log_c - cert.lam * np.asarray(phi, dtype=float)
