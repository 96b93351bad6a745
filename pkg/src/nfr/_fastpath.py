"""Fused numba kernel for the training hot loop.

One pass per weight matrix accumulates the power-family regularizer
gradient onto the loss gradient and applies the bias-corrected Adam
update. Results match the numpy reference path to rounding (same
formulas, single-pass evaluation order).
"""

import numba
import numpy as np


@numba.njit(cache=True, fastmath=False)
def adam_reg_update(p, g, m, v, coef, o1, b1, b2, c1, c2, lr, eps):
    """p, g, m, v: (rows, cols); coef: per-column reg multiplier
    (lam * o1 * o2 / (m_in * m_out) * inner^(o2-1)); o1 selects the
    |w|^(o1-1) sign(w) factor. coef may be all-zero to skip the reg part.
    """
    rows, cols = p.shape
    rc2 = np.sqrt(c2)
    for i in range(rows):
        for j in range(cols):
            w = p[i, j]
            gij = g[i, j]
            c = coef[j]
            if c != 0.0 and w != 0.0:
                if o1 == 1.0:
                    rg = c if w > 0.0 else -c
                elif o1 == 2.0:
                    rg = c * w
                else:
                    aw = abs(w)
                    rg = c * aw ** (o1 - 1.0) * (1.0 if w > 0.0 else -1.0)
                gij += rg
            mij = b1 * m[i, j] + (1.0 - b1) * gij
            vij = b2 * v[i, j] + (1.0 - b2) * gij * gij
            m[i, j] = mij
            v[i, j] = vij
            p[i, j] = w - lr * (mij / c1) / (np.sqrt(vij) / rc2 + eps)
