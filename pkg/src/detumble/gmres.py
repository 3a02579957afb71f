"""Unrestarted GMRES for small matrix-free systems."""

from __future__ import annotations

from typing import Callable

import numpy as np


def gmres(
    matvec: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    x0: np.ndarray | None = None,
    k_max: int | None = None,
    tol: float = 1e-8,
) -> tuple[np.ndarray, float, int]:
    """Solve ``A x = b`` given only ``matvec(v) = A v``.

    Returns ``(x, residual_norm, iterations)``. ``tol`` is absolute on the
    residual norm. Givens rotations keep the least-squares residual current
    so iteration stops as soon as ``tol`` is met.
    """
    n = b.shape[0]
    k_max = n if k_max is None else min(k_max, n)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - matvec(x) if x0 is not None else b.copy()
    beta = np.linalg.norm(r)
    if beta <= tol or k_max == 0:
        return x, beta, 0

    V = np.zeros((k_max + 1, n))
    H = np.zeros((k_max + 1, k_max))
    cs = np.zeros(k_max)
    sn = np.zeros(k_max)
    g = np.zeros(k_max + 1)
    g[0] = beta
    V[0] = r / beta
    k = 0
    for k in range(k_max):
        w = matvec(V[k])
        for i in range(k + 1):  # modified Gram-Schmidt
            H[i, k] = w @ V[i]
            w = w - H[i, k] * V[i]
        H[k + 1, k] = np.linalg.norm(w)
        if not np.isfinite(H[k + 1, k]):
            raise FloatingPointError("GMRES breakdown: non-finite Krylov vector")
        for i in range(k):
            tmp = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
            H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
            H[i, k] = tmp
        denom = np.hypot(H[k, k], H[k + 1, k])
        if denom == 0.0:
            k -= 1
            break
        cs[k], sn[k] = H[k, k] / denom, H[k + 1, k] / denom
        hk1 = H[k + 1, k]
        H[k, k] = denom
        H[k + 1, k] = 0.0
        g[k + 1] = -sn[k] * g[k]
        g[k] = cs[k] * g[k]
        if abs(g[k + 1]) <= tol or hk1 <= 1e-14 * denom:
            break
        V[k + 1] = w / hk1
    m = k + 1
    if m > 0:
        y = np.linalg.solve(np.triu(H[:m, :m]), g[:m])
        x = x + V[:m].T @ y
    return x, float(abs(g[m])), m
