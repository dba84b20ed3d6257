"""Rate functions for the empirical measure and flow.

All quantities work on cell masses: ``mu[x]`` is a probability vector and
``Q[x, y]`` a jump intensity.  With densities ``rho = mu / lam`` and
``q = Q / (lam x lam)`` the cell sum ``sum lam_x lam_y Phi(q, rho r p)`` equals
``sum Phi(Q, mu c)`` because ``Phi`` is positively 1-homogeneous, which is the
form evaluated here.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import rel_entr, xlogy

from .measures import Flow, Measure, as_mass, as_weights, tv_distance
from .model import RateModel

INF = math.inf


class IntegrabilityError(ArithmeticError):
    pass


@dataclass
class OptConfig:
    tol: float = 1e-9
    max_iter: int = 100_000
    clip: float = 40.0
    init: str = "analytic"  # or "zero"
    method: str = "newton"  # or "gradient"


@dataclass
class MeasureFlowPair:
    """A candidate ``(mu, Q)``.

    ``singular_cells`` marks cells whose mass stands in for a part of mu that
    is singular with respect to lam; it enters the rate as ``mu_s(r)``.
    """

    mu: Measure
    q: Flow
    marginal_tol: float = 1e-9
    singular_cells: tuple = ()

    def __post_init__(self):
        if not isinstance(self.mu, Measure):
            self.mu = Measure(self.mu)
        if not isinstance(self.q, Flow):
            self.q = Flow(self.q)
        if self.mu.n_cells != self.q.n_cells:
            raise ValueError("measure and flow live on different grids")

    def marginal_gap(self) -> float:
        return self.q.marginal_gap()

    def feasible(self) -> bool:
        return self.marginal_gap() <= self.marginal_tol


@dataclass
class RateReport:
    value: float
    feasible: bool = True
    ac_violation: bool = False
    optimizer: Optional[dict] = None

    def __post_init__(self):
        if not self.feasible or self.ac_violation:
            self.value = INF

    @property
    def finite(self) -> bool:
        return math.isfinite(self.value)

    def to_dict(self) -> dict:
        opt = None
        if self.optimizer is not None:
            opt = {k: (_enc(v) if isinstance(v, float) else v) for k, v in self.optimizer.items()}
        return {"schema_version": 1, "value": _enc(self.value), "feasible": self.feasible,
                "ac_violation": self.ac_violation, "optimizer": opt}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _enc(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return x


# ---------------------------------------------------------------------------
# scalar building blocks

def psi(a):
    """a log a - (a - 1), with psi(0) = 1."""
    a_arr = np.asarray(a, dtype=float)
    if np.any(a_arr < 0):
        raise ValueError("psi is defined on a >= 0")
    out = xlogy(a_arr, a_arr) - (a_arr - 1.0)
    return float(out) if out.ndim == 0 else out


def phi_fn(a, b):
    """a log(a/b) - a + b on the closed quadrant.

    Phi(0, b) = b, Phi(a, 0) = +inf for a > 0, Phi(0, 0) = 0.
    """
    a_arr = np.asarray(a, dtype=float)
    b_arr = np.asarray(b, dtype=float)
    if np.any(a_arr < 0) or np.any(b_arr < 0):
        raise ValueError("Phi is defined on a, b >= 0")
    out = rel_entr(a_arr, b_arr) - a_arr + b_arr
    out = np.where((a_arr > 0) & (b_arr == 0), INF, out)
    return float(out) if out.ndim == 0 else out


def r_F(model: RateModel, F) -> np.ndarray:
    """r^F(x) = sum_y c(x, y) exp(F(x, y))."""
    F = np.asarray(F, dtype=float)
    return np.sum(model.rate_matrix * np.exp(F), axis=1)


def r_F_excess(model: RateModel, F) -> np.ndarray:
    """r^F - r, computed with expm1 so that F = 0 gives exactly zero."""
    F = np.asarray(F, dtype=float)
    return np.sum(model.rate_matrix * np.expm1(F), axis=1)


def _check_dims(n: int, model: RateModel):
    if n != model.n_cells:
        raise ValueError(f"dimension mismatch: pair has {n} cells, model {model.n_cells}")


# ---------------------------------------------------------------------------
# joint rate function

def rate_I(pair: MeasureFlowPair, model: RateModel) -> RateReport:
    """Closed-form joint rate ``sum Phi(Q, mu_ac c) + mu_s(r)``.

    Infinite when the marginals of Q differ by more than the pair's
    tolerance, or when Q charges a pair (x, y) with ``mu_ac(x) c(x, y) = 0``.
    """
    mu = pair.mu.weights
    Q = pair.q.mass
    _check_dims(mu.size, model)
    if not pair.feasible():
        return RateReport(INF, feasible=False)
    sing = np.zeros(mu.size, dtype=bool)
    sing[list(pair.singular_cells)] = True
    mu_ac = np.where(sing, 0.0, mu)
    base = mu_ac[:, None] * model.rate_matrix
    if np.any((Q > 0) & (base <= 0)):
        return RateReport(INF, ac_violation=True)
    value = float(np.sum(phi_fn(Q, base))) + float(np.dot(mu[sing], model.r[sing]))
    return RateReport(max(value, 0.0))


def f_objective(F, pair: MeasureFlowPair, model: RateModel):
    """Q(F) - Q^mu(e^F - 1) and its gradient in F."""
    F = np.asarray(F, dtype=float)
    base = pair.mu.weights[:, None] * model.rate_matrix
    eF = np.exp(F)
    Q = pair.q.mass
    val = float(np.sum(Q * F) - np.sum(base * (eF - 1.0)))
    return val, Q - base * eF


def _accept(val, new_val, g, x, x_new, g_new, lo, hi) -> bool:
    """Armijo test, falling back to gradient decrease once values are flat to roundoff."""
    if not np.isfinite(new_val):
        return False
    if new_val >= val + 1e-4 * np.dot(g, x_new - x):
        return True
    flat = abs(new_val - val) <= 64 * np.finfo(float).eps * max(1.0, abs(val))
    if not flat:
        return False
    pg = np.linalg.norm(np.clip(x + g, lo, hi) - x)
    return bool(np.linalg.norm(np.clip(x_new + g_new, lo, hi) - x_new) < 0.5 * pg)


def _ascent(fun, x0, lo, hi, tol, max_iter):
    """Projected gradient ascent on a box with BB steps and Armijo backtracking.

    Returns ``(x, value, iterations, projected-gradient norm, converged)``.
    """
    x = np.clip(x0, lo, hi)
    val, g = fun(x)
    step = 1.0
    x_prev = g_prev = None
    for it in range(max_iter + 1):
        pg = np.clip(x + g, lo, hi) - x
        gnorm = float(np.linalg.norm(pg))
        if gnorm < tol:
            return x, val, it, gnorm, True
        if it == max_iter:
            break
        if x_prev is not None:
            s = x - x_prev
            y = g_prev - g
            sy = float(np.dot(s, y))
            step = float(np.dot(s, s)) / sy if sy > 1e-300 else step * 2.0
            step = min(max(step, 1e-12), 1e12)
        t = step
        while True:
            x_new = np.clip(x + t * g, lo, hi)
            new_val, g_new = fun(x_new)
            if _accept(val, new_val, g, x, x_new, g_new, lo, hi):
                break
            t *= 0.5
            if t < 1e-20:
                return x, val, it, gnorm, False
        x_prev, g_prev = x, g
        x, val, g = x_new, new_val, g_new
    return x, val, max_iter, gnorm, False


def _newton_ascent(fun, x0, lo, hi, tol, max_iter):
    """Damped Newton ascent for a concave objective on a box.

    ``fun`` returns ``(value, gradient, hessian)`` where the Hessian is either
    a vector (diagonal) or a matrix.  Same return tuple as :func:`_ascent`.
    """
    x = np.clip(x0, lo, hi)
    val, g, H = fun(x)
    for it in range(max_iter + 1):
        pg = np.clip(x + g, lo, hi) - x
        gnorm = float(np.linalg.norm(pg))
        if gnorm < tol:
            return x, val, it, gnorm, True
        if it == max_iter:
            break
        if H.ndim == 1:
            d = g / np.maximum(-H, 1e-300)
        else:
            d = np.linalg.lstsq(-H, g, rcond=None)[0]
        if not np.all(np.isfinite(d)) or np.dot(g, d) <= 0:
            d = g
        t = 1.0
        while True:
            x_new = np.clip(x + t * d, lo, hi)
            new_val, g_new, H_new = fun(x_new)
            if _accept(val, new_val, g, x, x_new, g_new, lo, hi):
                break
            t *= 0.5
            if t < 1e-20:
                return x, val, it, gnorm, False
        x, val, g, H = x_new, new_val, g_new, H_new
    return x, val, max_iter, gnorm, False


def _maximize(fun, x0, lo, hi, cfg: OptConfig):
    if cfg.method == "newton":
        return _newton_ascent(fun, x0, lo, hi, cfg.tol, cfg.max_iter)
    if cfg.method == "gradient":
        return _ascent(lambda x: fun(x)[:2], x0, lo, hi, cfg.tol, cfg.max_iter)
    raise ValueError(f"unknown optimizer method {cfg.method!r}")


def rate_I_variational(pair: MeasureFlowPair, model: RateModel,
                       opt_cfg: Optional[OptConfig] = None) -> RateReport:
    """Lower bound on I from ``sup_F Q(F) - Q^mu(e^F - 1)``.

    The test-function sup is only finite for equal marginals, so infeasible
    pairs return +inf without optimizing.  F is confined to
    ``[-clip, clip]``.
    """
    cfg = opt_cfg or OptConfig()
    _check_dims(pair.mu.n_cells, model)
    if not pair.feasible():
        return RateReport(INF, feasible=False, optimizer={"iterations": 0, "converged": False})
    Q = pair.q.mass
    base = pair.mu.weights[:, None] * model.rate_matrix
    if np.any((Q > 0) & (base <= 0)):
        return RateReport(INF, ac_violation=True,
                          optimizer={"iterations": 0, "converged": False})
    active = base > 0
    q_a, b_a = Q[active], base[active]

    def fun(f):
        bef = b_a * np.exp(f)
        return float(np.sum(q_a * f) - np.sum(bef - b_a)), q_a - bef, -bef

    if cfg.init == "analytic":
        with np.errstate(divide="ignore"):
            f0 = np.where(q_a > 0, np.log(q_a / b_a), -cfg.clip)
    else:
        f0 = np.zeros_like(q_a)
    f, val, it, gnorm, conv = _maximize(fun, f0, -cfg.clip, cfg.clip, cfg)
    return RateReport(max(val, 0.0), optimizer={
        "iterations": it, "grad_norm": gnorm, "converged": conv})


# ---------------------------------------------------------------------------
# contractions

def dv_objective(phi, mu, model: RateModel, hessian: bool = False):
    """-sum mu(x) c(x, y) (exp(phi(y) - phi(x)) - 1), its gradient and optionally Hessian."""
    phi = np.asarray(phi, dtype=float)
    w = as_weights(mu)
    base = w[:, None] * model.rate_matrix
    rows = np.flatnonzero(base.sum(axis=1) > 0)
    B = base[rows]
    E = np.exp(phi[None, :] - phi[rows, None])
    T = B * E
    val = -float(np.sum(T - B))
    grad = np.zeros_like(phi)
    grad -= T.sum(axis=0)
    grad[rows] += T.sum(axis=1)
    if not hessian:
        return val, grad
    W = np.zeros((phi.size, phi.size))
    W[rows] += T
    W = W + W.T
    np.fill_diagonal(W, 0.0)
    return val, grad, W - np.diag(W.sum(axis=1))


def donsker_varadhan(mu, model: RateModel, opt_cfg: Optional[OptConfig] = None) -> RateReport:
    """Donsker-Varadhan functional by gradient ascent over phi.

    The objective is invariant under constant shifts of phi; iterates start
    at phi = 0 and the gradient sums to zero, so phi keeps zero mean.
    """
    cfg = opt_cfg or OptConfig()
    w = as_weights(mu)
    _check_dims(w.size, model)
    if np.all(w[:, None] * model.rate_matrix == 0):
        return RateReport(0.0, optimizer={"iterations": 0, "grad_norm": 0.0,
                                          "converged": True})
    phi, val, it, gnorm, conv = _maximize(lambda x: dv_objective(x, w, model, True),
                                          np.zeros(w.size), -np.inf, np.inf, cfg)
    phi = phi - phi.mean()
    return RateReport(max(val, 0.0), optimizer={
        "iterations": it, "grad_norm": gnorm, "converged": conv, "phi": phi.tolist()})


def _flow_log_term(Q, model, rows_out, shift):
    """sum Q log[Q (r(x) + shift) / (Q(x, E) c(x, y))] over Q > 0."""
    c = model.rate_matrix
    pos = Q > 0
    ratio = np.ones_like(Q)
    ratio[pos] = Q[pos] * (model.r[:, None] + shift)[pos.nonzero()[0], 0] / (
        rows_out[pos.nonzero()[0]] * c[pos])
    return float(np.sum(Q[pos] * np.log(ratio[pos])))


def flow_rate(q, model: RateModel, opt_cfg: Optional[OptConfig] = None,
              marginal_tol: float = 1e-9) -> RateReport:
    """Rate function of the empirical flow via its one-dimensional dual.

    Maximizes ``h(a) = sum Q log[Q (r + a) / (Q(x, E) c)] - a`` over
    ``a > -min r`` by bisection on ``h'(a) = sum Q(x, E) / (r(x) + a) - 1``.
    When ``h'`` stays negative the supremum is the boundary limit
    ``a -> -min r``.
    """
    cfg = opt_cfg or OptConfig()
    Q = as_mass(q)
    _check_dims(Q.shape[0], model)
    if tv_distance(Q.sum(axis=1), Q.sum(axis=0)) > marginal_tol:
        return RateReport(INF, feasible=False)
    c = model.rate_matrix
    if np.any((Q > 0) & (c <= 0)):
        return RateReport(INF, ac_violation=True)
    if not np.any(Q > 0):
        return RateReport(0.0, optimizer={"alpha": 0.0, "boundary": False, "degenerate": True,
                                          "converged": True})
    rows = Q.sum(axis=1)
    r = model.r
    r_m = float(r.min())
    live = rows > 0

    def deriv(a):
        return float(np.sum(rows[live] / (r[live] + a))) - 1.0

    def h(a):
        return _flow_log_term(Q, model, rows, a) - a

    lim = INF if np.any(r[live] == r_m) else deriv(-r_m)
    if lim > 0:
        lo = -r_m
        hi = max(rows.sum() - r_m, 1.0)
        while deriv(hi) > 0:
            hi *= 2.0
        a_lo = lo
        if not np.isfinite(lim):
            eps = 1.0
            while deriv(lo + eps) <= 0:
                eps *= 0.5
            a_lo = lo + eps
        alpha = brentq(deriv, a_lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                       maxiter=500)
        return RateReport(max(h(alpha), 0.0), optimizer={
            "alpha": alpha, "boundary": False, "degenerate": False, "converged": True})
    value = _flow_log_term(Q, model, rows, -r_m) + r_m
    return RateReport(max(value, 0.0), optimizer={
        "alpha": -r_m, "boundary": True, "degenerate": False, "converged": True,
        "x0": int(np.argmin(r))})


def flow_minimizer_measure(q, model: RateModel, report: Optional[RateReport] = None) -> Measure:
    """The measure attaining inf_mu I(mu, Q), read off the dual solution."""
    Q = as_mass(q)
    rep = report or flow_rate(Q, model)
    if not rep.finite:
        raise ValueError("flow has infinite rate")
    opt = rep.optimizer
    rows = Q.sum(axis=1)
    n = Q.shape[0]
    if opt.get("degenerate"):
        return Measure.point_mass(n, int(np.argmin(model.r)))
    a = opt["alpha"]
    w = np.zeros(n)
    live = rows > 0
    w[live] = rows[live] / (model.r[live] + a)
    if opt["boundary"]:
        w[opt["x0"]] += 1.0 - w.sum()
    w = np.clip(w, 0.0, None)
    return Measure(w / w.sum(), tol=1e-9)


def integrability_check(pair: MeasureFlowPair, model: RateModel) -> float:
    """sum Q log(1 / (r p)), checked against the bound ``I + 1``."""
    rep = rate_I(pair, model)
    if not rep.finite:
        raise ValueError("integrability check needs a pair with finite rate")
    Q = pair.q.mass
    rp = model.r[:, None] * model.p_density
    pos = Q > 0
    value = float(np.sum(Q[pos] * -np.log(rp[pos])))
    if value > rep.value + 1.0 + 1e-9:
        raise IntegrabilityError(f"bound violated: {value} > I + 1 = {rep.value + 1}")
    return value
