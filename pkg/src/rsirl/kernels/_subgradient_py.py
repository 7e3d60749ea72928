"""Pure-python projected subgradient kernel (numpy, vectorized over restarts).

Same contract as the compiled kernel: minimize the pointwise max of convex
quadratics over a box, step size alpha0 / sqrt(t), returning the best iterate
per restart.  Values may differ from the compiled backend at the level of
floating-point summation order only.
"""

from __future__ import annotations

import numpy as np


def subgradient(H, q, c, lo, hi, u0s, iters, alpha0):
    """Run projected subgradient descent from each row of u0s.

    H: (nv, m, m) symmetric PSD blocks. q: (nv, m). c: (nv,).
    Objective f(u) = max_i 0.5 u'H_i u + q_i'u + c_i, minimized over
    lo <= u <= hi.  Returns (best_us (r, m), best_vals (r,)).
    """
    H = np.asarray(H, dtype=float)
    q = np.asarray(q, dtype=float)
    c = np.asarray(c, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    us = np.array(u0s, dtype=float)

    best_us = us.copy()
    best_vals = np.full(us.shape[0], np.inf)

    def track(us):
        vals = (
            0.5 * np.einsum("rm,imn,rn->ri", us, H, us)
            + us @ q.T
            + c[None, :]
        )
        active = np.argmax(vals, axis=1)
        f = vals[np.arange(us.shape[0]), active]
        better = f < best_vals
        best_vals[better] = f[better]
        best_us[better] = us[better]
        return active

    for t in range(1, iters + 1):
        active = track(us)
        grads = np.einsum("rmn,rn->rm", H[active], us) + q[active]
        us = np.clip(us - (alpha0 / np.sqrt(t)) * grads, lo, hi)
    track(us)
    return best_us, best_vals
