"""Compiled inner loops for the jump-chain sampler."""
import numpy as np
from numba import njit

DONE = 0
ABSORBED = 1
NEED_MORE = 2


@njit(cache=True)
def build_alias(P):
    """Vose alias tables for every row of a row-stochastic matrix."""
    n_rows, n = P.shape
    prob = np.empty((n_rows, n))
    alias = np.zeros((n_rows, n), dtype=np.int64)
    small = np.empty(n, dtype=np.int64)
    large = np.empty(n, dtype=np.int64)
    for x in range(n_rows):
        s = 0.0
        for k in range(n):
            s += P[x, k]
        scaled = np.empty(n)
        ns = 0
        nl = 0
        for k in range(n):
            scaled[k] = P[x, k] * n / s
            if scaled[k] < 1.0:
                small[ns] = k
                ns += 1
            else:
                large[nl] = k
                nl += 1
        while ns > 0 and nl > 0:
            ns -= 1
            lo = small[ns]
            nl -= 1
            hi = large[nl]
            prob[x, lo] = scaled[lo]
            alias[x, lo] = hi
            scaled[hi] = (scaled[hi] + scaled[lo]) - 1.0
            if scaled[hi] < 1.0:
                small[ns] = hi
                ns += 1
            else:
                large[nl] = hi
                nl += 1
        while nl > 0:
            nl -= 1
            prob[x, large[nl]] = 1.0
            alias[x, large[nl]] = large[nl]
        while ns > 0:
            ns -= 1
            prob[x, small[ns]] = 1.0
            alias[x, small[ns]] = small[ns]
    return prob, alias


@njit(cache=True)
def alias_draw(prob, alias, x, u):
    n = prob.shape[1]
    s = u * n
    k = int(s)
    if k >= n:
        k = n - 1
    if s - k < prob[x, k]:
        return k
    return alias[x, k]


@njit(cache=True, nogil=True)
def walk(x, t, t_end, r, absorbing, prob, alias, u_hold, u_skel, ih, isk,
         skel, holds, n_states):
    """Advance one path until the horizon, absorption, or uniform exhaustion.

    ``skel[:n_states]`` holds the states visited so far (the last one is the
    current state ``x`` entered at time ``t``); ``holds`` receives one
    holding time per completed sojourn.  Holding time ``i`` uses
    ``u_hold[i]``; the destination of jump ``i + 1`` uses ``u_skel[i]``.
    """
    while True:
        if absorbing[x]:
            return ABSORBED, x, t, ih, isk, n_states
        if ih >= u_hold.shape[0] or isk >= u_skel.shape[0]:
            return NEED_MORE, x, t, ih, isk, n_states
        tau = -np.log1p(-u_hold[ih]) / r[x]
        holds[ih] = tau
        ih += 1
        t = t + tau
        if t >= t_end:
            return DONE, x, t, ih, isk, n_states
        x = alias_draw(prob, alias, x, u_skel[isk])
        isk += 1
        skel[n_states] = x
        n_states += 1


@njit(cache=True, nogil=True)
def occupancy(skel, holds, n_states, t_end, n_cells, absorbed):
    """Time spent in each cell on [0, t_end]."""
    occ = np.zeros(n_cells)
    t = 0.0
    n_h = n_states if not absorbed else n_states - 1
    for i in range(n_h):
        dt = holds[i]
        if t + dt > t_end:
            dt = t_end - t
        occ[skel[i]] += dt
        t += holds[i]
    if absorbed:
        occ[skel[n_states - 1]] += t_end - t
    return occ


@njit(cache=True, nogil=True)
def jump_counts(skel, n_jumps, n_cells):
    counts = np.zeros((n_cells, n_cells))
    for i in range(n_jumps):
        counts[skel[i], skel[i + 1]] += 1.0
    return counts


@njit(cache=True, nogil=True)
def path_integrals(skel, holds, n_states, t_end, absorbed, G, g):
    """Sum of G over completed jumps and time integral of g on [0, t_end]."""
    n_jumps = n_states - 1
    s = 0.0
    for i in range(n_jumps):
        s += G[skel[i], skel[i + 1]]
    integral = 0.0
    t = 0.0
    n_h = n_states if not absorbed else n_states - 1
    for i in range(n_h):
        dt = holds[i]
        if t + dt > t_end:
            dt = t_end - t
        integral += dt * g[skel[i]]
        t += holds[i]
    if absorbed:
        integral += (t_end - t) * g[skel[n_states - 1]]
    return s, integral
