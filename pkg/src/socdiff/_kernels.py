"""Compiled inner loop for the box-overlap cost (numba)."""
import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _ramp(x, delta):
    if x <= -delta:
        return 0.0, 0.0
    if x >= delta:
        return x, 1.0
    s = 0.5 * (x + delta) / delta
    s2 = s * s
    return delta * s2 * s * (2.0 - s), s2 * (3.0 - 2.0 * s)


@njit(cache=True)
def accumulate(lo, hi, olo, ohi, margins, margin_w, delta, grad, per_sample, dlo, dhi):
    """Add smoothed overlap areas into ``per_sample[m, k, p]`` and their gradients into ``dlo``/``dhi``.

    lo, hi: (K, P, B, 2) body boxes.  margins ascending.  Loops run in fixed
    order so sums are reproducible.
    """
    n_k, n_p, n_b, _ = lo.shape
    n_o = olo.shape[0]
    n_m = margins.shape[0]
    pad = margins[n_m - 1] + delta
    for k in range(n_k):
        for p in range(n_p):
            for b in range(n_b):
                lx, ly = lo[k, p, b, 0], lo[k, p, b, 1]
                hx, hy = hi[k, p, b, 0], hi[k, p, b, 1]
                for o in range(n_o):
                    if hx <= olo[o, 0] - pad or lx >= ohi[o, 0] + pad:
                        continue
                    if hy <= olo[o, 1] - pad or ly >= ohi[o, 1] + pad:
                        continue
                    for mi in range(n_m):
                        w = margin_w[mi, p]
                        if w == 0.0:
                            continue
                        m = margins[mi]
                        rux, drux = _ramp(hx - (ohi[o, 0] + m), delta)
                        rvx, drvx = _ramp(lx - (olo[o, 0] - m), delta)
                        ax, dax = _ramp((hx - rux) - (olo[o, 0] - m + rvx), delta)
                        if ax == 0.0 and dax == 0.0:
                            continue
                        ruy, druy = _ramp(hy - (ohi[o, 1] + m), delta)
                        rvy, drvy = _ramp(ly - (olo[o, 1] - m), delta)
                        ay, day = _ramp((hy - ruy) - (olo[o, 1] - m + rvy), delta)
                        if ay == 0.0 and day == 0.0:
                            continue
                        per_sample[mi, k, p] += ax * ay
                        if grad:
                            gx = w * dax * ay
                            gy = w * day * ax
                            dhi[k, p, b, 0] += gx * (1.0 - drux)
                            dlo[k, p, b, 0] -= gx * drvx
                            dhi[k, p, b, 1] += gy * (1.0 - druy)
                            dlo[k, p, b, 1] -= gy * drvy
