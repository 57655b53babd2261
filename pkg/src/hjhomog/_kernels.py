"""Compiled min-plus kernels for one Lax-Oleinik time step.

Each kernel computes ``out[i] = min_k u[i - off_k] + cost[k, cell(i - off_k)]`` over a
box of target indices.  Offsets are expected in decreasing lexicographic order so that
scanning ``k`` upward visits sources ``y = i - off_k`` in increasing lexicographic
order; with a strict ``<`` the smallest source wins ties.

``period > 0`` means the cost table is indexed by ``(y + shift) mod period`` (a cell
table); ``period == 0`` means it covers the whole array.
"""

import numpy as np
from numba import njit

INF = np.inf


@njit(cache=True, nogil=True)
def step_1d(u, cost, period, shift, offs, lo, hi, out, arg):
    n = u.shape[0]
    K = offs.shape[0]
    for i in range(lo, hi):
        best = INF
        bk = -1
        for k in range(K):
            y = i - offs[k]
            if y < 0 or y >= n:
                continue
            v = u[y]
            if v == INF:
                continue
            if period > 0:
                v = v + cost[k, (y + shift) % period]
            else:
                v = v + cost[k, y]
            if v < best:
                best = v
                bk = k
        out[i] = best
        arg[i] = bk


@njit(cache=True, nogil=True)
def step_2d(u, cost, period, shift0, shift1, offs, lo0, hi0, lo1, hi1, out, arg):
    n0 = u.shape[0]
    n1 = u.shape[1]
    K = offs.shape[0]
    for a in range(lo0, hi0):
        for b in range(lo1, hi1):
            best = INF
            bk = -1
            for k in range(K):
                ya = a - offs[k, 0]
                yb = b - offs[k, 1]
                if ya < 0 or yb < 0 or ya >= n0 or yb >= n1:
                    continue
                v = u[ya, yb]
                if v == INF:
                    continue
                if period > 0:
                    v = v + cost[k, (ya + shift0) % period, (yb + shift1) % period]
                else:
                    v = v + cost[k, ya, yb]
                if v < best:
                    best = v
                    bk = k
            out[a, b] = best
            arg[a, b] = bk
