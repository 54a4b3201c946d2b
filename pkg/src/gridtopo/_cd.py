"""Pure-Python coordinate descent for the penalized column subproblem.

Minimizes 0.5 * b' Q b - t' b + lam * ||b||_1 for a positive-definite
Gram matrix Q, updating coordinates in index order and maintaining the
running product Q @ b. The compiled twin in ``_cd_fast`` implements the
identical update order; results agree to rounding.
"""

from __future__ import annotations

import numpy as np

__all__ = ["lasso_gram_cd"]


def lasso_gram_cd(
    gram: np.ndarray,
    target: np.ndarray,
    beta: np.ndarray,
    lam: float,
    tol: float,
    max_sweeps: int,
) -> int:
    """Run coordinate-descent sweeps in place on ``beta``; returns sweeps used.

    Converged when the largest coordinate move in a sweep falls below
    ``tol`` times the largest coefficient magnitude.
    """
    m = beta.shape[0]
    c = gram @ beta
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        d_max = 0.0
        b_max = 0.0
        for k in range(m):
            qkk = gram[k, k]
            if qkk <= 0:
                raise ValueError("non-positive diagonal in gram matrix")
            r = target[k] - c[k] + qkk * beta[k]
            if r > lam:
                new = (r - lam) / qkk
            elif r < -lam:
                new = (r + lam) / qkk
            else:
                new = 0.0
            delta = new - beta[k]
            if delta != 0.0:
                c += delta * gram[k]
                beta[k] = new
            if abs(delta) > d_max:
                d_max = abs(delta)
            if abs(new) > b_max:
                b_max = abs(new)
        if d_max <= tol * max(b_max, 1e-12):
            break
    return sweeps
