"""Brute-force minimization of I over one or both arguments on small grids.

These routines exist to cross-check the closed-form contractions and to pick
importance-sampling tilts.  They never call the dual formulas unless the
caller asks for the explicit candidate starts.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .measures import Flow, Measure, as_mass, as_weights
from .model import RateModel, invariant_measure, stationary_flow
from .ratefn import donsker_varadhan, flow_minimizer_measure, flow_rate, phi_fn

MAX_CELLS = 8


@dataclass
class Minimizer:
    value: float
    mu: np.ndarray
    q: np.ndarray
    converged: bool = True


def _balance_matrix(cells: np.ndarray, n_sub: int) -> np.ndarray:
    """Rows: out(z) - in(z) for z in cells, acting on vec(Q[cells x cells])."""
    k = cells.size
    A = np.zeros((k, k * k))
    for a in range(k):
        for b in range(k):
            col = a * k + b
            A[a, col] += 1.0
            A[b, col] -= 1.0
    return A


def _newton_eq(fun, x0, A, max_iter=500, tol=1e-22):
    """Damped Newton for a convex ``fun`` on ``{A x = A x0, x > 0}``."""
    x = np.array(x0, dtype=float)
    val, g, H = fun(x)
    m = A.shape[0]
    for _ in range(max_iter):
        K = np.block([[H, A.T], [A, np.zeros((m, m))]])
        rhs = np.concatenate([-g, np.zeros(m)])
        d = np.linalg.lstsq(K, rhs, rcond=None)[0][: x.size]
        dec = -float(np.dot(g, d))
        if not np.isfinite(dec) or dec < tol:
            return x, val, True
        t = 1.0
        neg = d < 0
        if np.any(neg):
            t = min(1.0, 0.99 * float(np.min(-x[neg] / d[neg])))
        while True:
            x_new = x + t * d
            new_val, g_new, H_new = fun(x_new)
            if np.isfinite(new_val) and new_val <= val - 1e-4 * t * dec:
                break
            t *= 0.5
            if t < 1e-18:
                return x, val, dec < 1e-12
        x, val, g, H = x_new, new_val, g_new, H_new
    return x, val, False


def _random_feasible(base, A, rng, scale=0.9):
    """Random point of {A x = A base, x > 0} near a strictly positive base."""
    xi = rng.standard_normal(base.size)
    xi -= A.T @ np.linalg.lstsq(A @ A.T, A @ xi, rcond=None)[0]
    neg = xi < 0
    if not np.any(neg):
        return base + xi
    s_max = float(np.min(-base[neg] / xi[neg]))
    return base + scale * rng.uniform(0.1, 1.0) * s_max * xi


def _check_size(model: RateModel):
    if model.n_cells > MAX_CELLS:
        raise ValueError(f"oracle is limited to {MAX_CELLS} cells, model has {model.n_cells}")


# ---------------------------------------------------------------------------
# fixed measure

def minimize_flow(mu, model: RateModel, restarts: int = 16, seed: int = 0,
                  candidates: bool = True) -> Minimizer:
    """inf over equal-marginal Q of I(mu, Q)."""
    _check_size(model)
    w = as_weights(mu)
    n = w.size
    base = w[:, None] * model.rate_matrix
    cells = np.flatnonzero(base.sum(axis=1) > 0)
    off = np.ones(n, dtype=bool)
    off[cells] = False
    # mass on cells that cannot jump pays nothing; others pay at least the
    # part of mu c leaving the live block
    fixed_cost = float(base[np.ix_(cells, np.flatnonzero(off))].sum()) if cells.size else 0.0
    Q_best = np.zeros((n, n))
    if cells.size == 0:
        return Minimizer(0.0, w.copy(), Q_best)
    B = base[np.ix_(cells, cells)].ravel()
    A = _balance_matrix(cells, n)

    def fun(x):
        if np.any(x <= 0):
            return np.inf, None, None
        lg = np.log(x / B)
        return float(np.sum(x * lg - x + B)), lg, np.diag(1.0 / x)

    rng = np.random.default_rng(seed)
    starts = []
    k = cells.size
    for _ in range(restarts):
        S = rng.exponential(size=(k, k))
        starts.append(((S + S.T) * rng.uniform(0.05, 5.0) * B.mean()).ravel())
    if candidates:
        rep = donsker_varadhan(w, model)
        phi = np.asarray(rep.optimizer.get("phi", np.zeros(n)))
        cand = (base * np.exp(phi[None, :] - phi[:, None]))[np.ix_(cells, cells)].ravel()
        corr = A.T @ np.linalg.lstsq(A @ np.diag(cand) @ A.T, A @ cand, rcond=None)[0]
        cand = cand - cand * corr
        if np.all(cand > 0):
            starts.append(cand)
    best = None
    for x0 in starts:
        x, val, conv = _newton_eq(fun, x0, A)
        if best is None or val < best[1]:
            best = (x, val, conv)
    Q_best[np.ix_(cells, cells)] = best[0].reshape(k, k)
    return Minimizer(best[1] + fixed_cost, w.copy(), Q_best, best[2])


# ---------------------------------------------------------------------------
# fixed flow

def _project_simplex(v: np.ndarray) -> np.ndarray:
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    k = idx[u - css / idx > 0][-1]
    return np.maximum(v - css[k - 1] / k, 0.0)


def _measure_objective(Q, model: RateModel):
    c = model.rate_matrix
    rows = Q.sum(axis=1)

    def fun(mu):
        base = mu[:, None] * c
        if np.any((Q > 0) & (base <= 0)):
            return np.inf, None
        val = float(np.sum(phi_fn(Q, base)))
        with np.errstate(divide="ignore", invalid="ignore"):
            grad = model.r - np.where(rows > 0, rows / mu, 0.0)
        return val, grad

    return fun


def _spg(fun, x0, max_iter=5000, tol=1e-13, patience=25):
    """Spectral projected gradient on the probability simplex."""
    x = _project_simplex(x0)
    val, g = fun(x)
    step = 1.0
    x_prev = g_prev = None
    converged = False
    stale = 0
    for _ in range(max_iter):
        if x_prev is not None:
            s, y = x - x_prev, g - g_prev
            sy = float(np.dot(s, y))
            step = float(np.dot(s, s)) / sy if sy > 1e-300 else 1e6
            step = min(max(step, 1e-12), 1e12)
        d = _project_simplex(x - step * g) - x
        if np.max(np.abs(d)) < tol:
            converged = True
            break
        gd = float(np.dot(g, d))
        t = 1.0
        while True:
            x_new = x + t * d
            new_val, g_new = fun(x_new)
            if np.isfinite(new_val) and new_val <= val + 1e-4 * t * gd:
                break
            t *= 0.5
            if t < 1e-20:
                return x, val, converged
        stale = stale + 1 if val - new_val <= 1e-15 * (1.0 + abs(val)) else 0
        x_prev, g_prev = x, g
        x, val, g = x_new, new_val, g_new
        if stale >= patience:
            break
    return x, val, converged


def minimize_measure(q, model: RateModel, restarts: int = 16, seed: int = 0,
                     candidates: bool = True) -> Minimizer:
    """inf over probability measures mu of I(mu, Q)."""
    _check_size(model)
    Q = as_mass(q)
    n = Q.shape[0]
    fun = _measure_objective(Q, model)
    rng = np.random.default_rng(seed)
    starts = [rng.dirichlet(np.ones(n)) for _ in range(restarts)]
    if candidates:
        rep = flow_rate(Q, model)
        if rep.finite:
            starts.append(flow_minimizer_measure(Q, model, rep).weights.copy())
    best = None
    for x0 in starts:
        x, val, conv = _spg(fun, x0)
        if best is None or val < best[1]:
            best = (x, val, conv)
    return Minimizer(best[1], best[0], Q.copy(), best[2])


def contraction_oracle(target: str, fixed, model: RateModel, restarts: int = 16,
                       seed: int = 0, candidates: bool = True) -> float:
    """Minimize I over the free argument: ``"measure"`` fixes mu, ``"flow"`` fixes Q."""
    if restarts < 16:
        raise ValueError("at least 16 restarts are required")
    if target == "measure":
        return minimize_flow(fixed, model, restarts, seed, candidates).value
    if target == "flow":
        Q = as_mass(fixed)
        if Flow(Q).marginal_gap() > 1e-9:
            return np.inf
        return minimize_measure(Q, model, restarts, seed, candidates).value
    raise ValueError(f"target must be 'measure' or 'flow', got {target!r}")


# ---------------------------------------------------------------------------
# joint minimization over an event boundary

def _joint_objective(model: RateModel):
    c = model.rate_matrix.ravel()
    n = model.n_cells

    def fun(x):
        mu, Q = x[:n], x[n:]
        if np.any(x <= 0):
            return np.inf, None, None
        base = np.repeat(mu, n) * c
        lg = np.log(Q / base)
        val = float(np.sum(Q * lg - Q + base))
        Qm = Q.reshape(n, n)
        g = np.concatenate([model.r - Qm.sum(axis=1) / mu, lg])
        H = np.zeros((x.size, x.size))
        H[np.arange(n), np.arange(n)] = Qm.sum(axis=1) / mu ** 2
        idx = n + np.arange(n * n)
        H[idx, idx] = 1.0 / Q
        rows = np.repeat(np.arange(n), n)
        H[rows, idx] = -1.0 / mu[rows]
        H[idx, rows] = -1.0 / mu[rows]
        return val, g, H

    return fun


def event_infimum(model: RateModel, level: float, f=None, flow_weight=None,
                  restarts: int = 16, seed: int = 0) -> Minimizer:
    """inf of I(mu, Q) over ``f.mu + <flow_weight, Q> = level`` with equal marginals.

    For an event ``{mu(f) >= level}`` (or ``{Q(G) >= level}``) that excludes
    the zero ``(pi, Q^pi)``, convexity puts the infimum on this boundary.
    Requires every cell to have positive rate.
    """
    _check_size(model)
    n = model.n_cells
    if np.any(model.r <= 0):
        raise ValueError("joint event minimization needs r > 0 on every cell")
    f = np.zeros(n) if f is None else np.asarray(f, dtype=float)
    G = np.zeros((n, n)) if flow_weight is None else np.asarray(flow_weight, dtype=float)
    A = np.zeros((n + 2, n + n * n))
    A[0, :n] = 1.0
    A[1, :n] = f
    A[1, n:] = G.ravel()
    A[2:, n:] = _balance_matrix(np.arange(n), n)
    # one balance row is redundant; drop it to keep A full rank
    A = A[:-1]
    b = np.zeros(A.shape[0])
    b[0], b[1] = 1.0, level

    pi = invariant_measure(model).weights
    Qpi = stationary_flow(model, pi).mass
    base = _interior_point(pi, Qpi, f, G, level)
    fun = _joint_objective(model)
    rng = np.random.default_rng(seed)
    starts = [base] + [_random_feasible(base, A, rng) for _ in range(restarts)]
    best = None
    for x0 in starts:
        x, val, conv = _newton_eq(fun, x0, A)
        if best is None or val < best[1]:
            best = (x, val, conv)
    x = best[0]
    return Minimizer(best[1], x[:n].copy(), x[n:].reshape(n, n).copy(), best[2])


def _interior_point(pi, Qpi, f, G, level):
    """Strictly positive (mu, Q) with balanced Q on the constraint boundary."""
    n = pi.size
    fq = float(pi @ f + np.sum(G * Qpi))
    if np.any(G):
        # scale the stationary flow; keep the measure
        gq = float(np.sum(G * Qpi))
        if gq <= 0 or level - float(pi @ f) <= 0:
            raise ValueError("flow level not reachable by scaling Q^pi")
        s = (level - float(pi @ f)) / gq
        return np.concatenate([pi, (s * Qpi).ravel()])
    k = int(np.argmax(f)) if level >= fq else int(np.argmin(f))
    denom = f[k] - fq
    t = (level - fq) / denom if denom != 0 else 0.0
    if not 0 <= t < 1:
        raise ValueError("measure level outside the range of f")
    mu = (1 - t) * pi
    mu[k] += t
    scale = float(np.sum(Qpi))
    Q = np.outer(mu, mu) * scale
    return np.concatenate([mu, Q.ravel()])
