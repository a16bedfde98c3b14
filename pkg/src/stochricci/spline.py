"""Periodic bicubic B-spline interpolation on a uniform n x n grid.

The spline interpolates the nodal samples exactly and is C^2, so its analytic
gradient is continuous.  Coefficients come from one FFT solve of the circulant
prefilter (1, 4, 1)/6 along each axis.  For fast repeated queries each grid
cell's bicubic patch is converted to power-basis form, a (n*n, 4, 4) table
``Q`` with value = sum_{a,b} Q[cell, a, b] f1^a f2^b in local coordinates.
"""
from __future__ import annotations

import numpy as np

# rows: powers of f, columns: B-spline weights for offsets -1, 0, 1, 2
_BASIS = np.array([
    [1.0, 4.0, 1.0, 0.0],
    [-3.0, 0.0, 3.0, 0.0],
    [3.0, -6.0, 3.0, 0.0],
    [-1.0, 3.0, -3.0, 1.0],
]) / 6.0


def spline_coefficients(values: np.ndarray) -> np.ndarray:
    n1, n2 = values.shape
    k1 = np.cos(2.0 * np.pi * np.arange(n1) / n1)
    k2 = np.cos(2.0 * np.pi * np.arange(n2) / n2)
    symbol = np.outer((4.0 + 2.0 * k1) / 6.0, (4.0 + 2.0 * k2) / 6.0)
    return np.real(np.fft.ifft2(np.fft.fft2(values) / symbol))


def cell_table(coeffs: np.ndarray) -> np.ndarray:
    """Power-basis coefficients of every cell, shape (n*n, 4, 4)."""
    n = coeffs.shape[0]
    patch = np.empty((4, 4, n, n))
    for a in range(4):
        for b in range(4):
            patch[a, b] = np.roll(coeffs, (1 - a, 1 - b), axis=(0, 1))
    q = np.einsum("pa,abij,qb->ijpq", _BASIS, patch, _BASIS)
    return np.ascontiguousarray(q.reshape(n * n, 4, 4))


def locate(pts: np.ndarray, n: int, L: float):
    """Cell index and local coordinates in [0, 1) of each point."""
    u = np.atleast_2d(np.asarray(pts, dtype=float)) * (n / L)
    base = np.floor(u)
    f = u - base
    base = base.astype(np.int64) % n
    return base[:, 0] * n + base[:, 1], f


def _powers(f: np.ndarray, order: int) -> np.ndarray:
    one, z = np.ones_like(f), np.zeros_like(f)
    if order == 0:
        cols = [one, f, f * f, f * f * f]
    elif order == 1:
        cols = [z, one, 2.0 * f, 3.0 * f * f]
    else:
        cols = [z, z, 2.0 * one, 6.0 * f]
    return np.stack(cols, axis=-1)


def evaluate_patches(Q: np.ndarray, f: np.ndarray, h: float, what: str = "p"):
    """Evaluate gathered patches Q (N, 4, 4) at local coordinates f (N, 2)."""
    f1, f2 = f[:, 0], f[:, 1]
    if what == "p":
        inner = np.einsum("nab,nb->na", Q, _powers(f2, 0))
        return np.einsum("na,na->n", inner, _powers(f1, 0))
    P1, D1 = _powers(f1, 0), _powers(f1, 1)
    in0 = np.einsum("nab,nb->na", Q, _powers(f2, 0))
    in1 = np.einsum("nab,nb->na", Q, _powers(f2, 1))
    if what == "grad":
        g1 = np.einsum("na,na->n", in0, D1)
        g2 = np.einsum("na,na->n", in1, P1)
        return np.stack([g1, g2], axis=-1) / h
    if what == "hess":
        in2 = np.einsum("nab,nb->na", Q, _powers(f2, 2))
        a = np.einsum("na,na->n", in0, _powers(f1, 2))
        b = np.einsum("na,na->n", in1, D1)
        c = np.einsum("na,na->n", in2, P1)
        return np.stack([np.stack([a, b], -1), np.stack([b, c], -1)], axis=-2) / (h * h)
    raise ValueError(f"unknown quantity {what!r}; expected p, grad or hess")


def evaluate(coeffs: np.ndarray, pts, L: float, what: str = "p", table=None):
    """Evaluate the spline (or its derivatives) at points of shape (N, 2).

    ``what`` is ``"p"`` (values, shape (N,)), ``"grad"`` (N, 2) or
    ``"hess"`` (N, 2, 2).  Pass a precomputed ``table`` to skip rebuilding it.
    """
    n = coeffs.shape[0]
    if table is None:
        table = cell_table(coeffs)
    cell, f = locate(pts, n, L)
    return evaluate_patches(table[cell], f, L / n, what)
