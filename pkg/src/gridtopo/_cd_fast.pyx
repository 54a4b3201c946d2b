# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled coordinate descent for the penalized column subproblem.

Same update order and stopping rule as the pure-Python twin in ``_cd``;
see that module for the contract.
"""

import numpy as np

from libc.math cimport fabs

__all__ = ["lasso_gram_cd"]


def lasso_gram_cd(double[:, ::1] gram, double[::1] target, double[::1] beta,
                  double lam, double tol, int max_sweeps):
    cdef Py_ssize_t m = beta.shape[0]
    cdef Py_ssize_t k, i
    cdef int sweeps = 0
    cdef double qkk, r, new, delta, d_max, b_max, scale
    cdef double[::1] c = np.zeros(m)

    for k in range(m):
        if beta[k] != 0.0:
            for i in range(m):
                c[i] += beta[k] * gram[k, i]

    while sweeps < max_sweeps:
        sweeps += 1
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
                for i in range(m):
                    c[i] += delta * gram[k, i]
                beta[k] = new
            if fabs(delta) > d_max:
                d_max = fabs(delta)
            if fabs(new) > b_max:
                b_max = fabs(new)
        scale = b_max if b_max > 1e-12 else 1e-12
        if d_max <= tol * scale:
            break
    return sweeps
