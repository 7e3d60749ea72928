# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled projected subgradient kernel.

Minimizes the pointwise max of convex quadratics over a box; one restart per
row of u0s, alpha0 / sqrt(t) steps, best iterate kept.  Mirrors
_subgradient_py.subgradient.
"""

from libc.math cimport sqrt

import numpy as np


def subgradient(double[:, :, ::1] H, double[:, ::1] q, double[::1] c,
                double[::1] lo, double[::1] hi, double[:, ::1] u0s,
                int iters, double alpha0):
    cdef Py_ssize_t nv = H.shape[0]
    cdef Py_ssize_t m = H.shape[1]
    cdef Py_ssize_t nr = u0s.shape[0]
    cdef Py_ssize_t r, t, i, a, b, j

    best_us_arr = np.array(u0s, dtype=np.float64)
    best_vals_arr = np.full(nr, np.inf)
    u_arr = np.empty(m, dtype=np.float64)
    cdef double[:, ::1] best_us = best_us_arr
    cdef double[::1] best_vals = best_vals_arr
    cdef double[::1] u = u_arr
    cdef double val, acc, quad, fmax, step, g

    for r in range(nr):
        for a in range(m):
            u[a] = u0s[r, a]
        for t in range(1, iters + 2):
            # evaluate f(u) and the first maximizing piece
            fmax = 0.0
            j = 0
            for i in range(nv):
                acc = c[i]
                for a in range(m):
                    acc += q[i, a] * u[a]
                    quad = 0.0
                    for b in range(m):
                        quad += H[i, a, b] * u[b]
                    acc += 0.5 * u[a] * quad
                if i == 0 or acc > fmax:
                    fmax = acc
                    j = i
            if fmax < best_vals[r]:
                best_vals[r] = fmax
                for a in range(m):
                    best_us[r, a] = u[a]
            if t == iters + 1:
                break
            step = alpha0 / sqrt(<double> t)
            for a in range(m):
                g = q[j, a]
                for b in range(m):
                    g += H[j, a, b] * u[b]
                u[a] = u[a] - step * g
                if u[a] < lo[a]:
                    u[a] = lo[a]
                elif u[a] > hi[a]:
                    u[a] = hi[a]

    return best_us_arr, best_vals_arr
