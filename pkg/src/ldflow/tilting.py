"""Tilted chains, likelihood ratios and importance sampling."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .measures import Flow, Measure, as_mass, as_weights, tv_distance
from .model import DiscretizedSpace, RateModel, model_to_dict
from .ratefn import MeasureFlowPair, r_F_excess
from .simulator import (JumpSampler, Trajectory, batch_sample, empirical_flow,
                        empirical_measure)

ESS_WARN = 10.0


class TiltError(ValueError):
    pass


@dataclass(eq=False)
class TiltedModel:
    """Chain with cell rates ``Q(x, y) / mu(x)`` on the support of ``mu``.

    ``rates`` uses the same convention as :attr:`RateModel.rate_matrix`
    (jump intensity from x into cell y) and is zero off ``cells x cells``.
    ``model`` is the tilted chain as a stand-alone RateModel on the support,
    with lam renormalized; local index ``i`` is global cell ``cells[i]``.
    """

    base: RateModel
    target: MeasureFlowPair
    cells: np.ndarray
    rates: np.ndarray
    model: RateModel
    _sampler: Optional[JumpSampler] = field(default=None, repr=False)

    @property
    def r_tilde(self) -> np.ndarray:
        """Total tilted rate per global cell (zero off the support)."""
        return self.rates.sum(axis=1)

    @property
    def F_star(self) -> np.ndarray:
        """log(c_tilde / c) on the support block, -inf elsewhere."""
        out = np.full(self.rates.shape, -np.inf)
        blk = np.ix_(self.cells, self.cells)
        out[blk] = np.log(self.rates[blk] / self.base.rate_matrix[blk])
        return out

    @property
    def sampler(self) -> JumpSampler:
        if self._sampler is None:
            self._sampler = JumpSampler(self.model)
        return self._sampler

    def local(self, x: int) -> int:
        hit = np.flatnonzero(self.cells == x)
        if hit.size == 0:
            raise TiltError(f"cell {x} is outside the tilted support")
        return int(hit[0])

    def to_global(self, traj: Trajectory) -> Trajectory:
        return Trajectory(self.cells[traj.skeleton], traj.holding_times, traj.t_end,
                          traj.absorbed, traj.seed)

    def sample(self, x0: int, t_end: float, seed: int) -> Trajectory:
        """Path of the tilted chain, reported in global cell indices."""
        from .simulator import sample_trajectory
        return self.to_global(sample_trajectory(self.sampler, self.local(x0), t_end, seed))

    def log_rn_terms(self):
        """Local (G, g) so that a path sum of them gives log dP_tilde/dP."""
        blk = np.ix_(self.cells, self.cells)
        G = np.log(self.rates[blk] / self.base.rate_matrix[blk])
        g = -(self.r_tilde[self.cells] - self.base.r[self.cells])
        return G, g

    def to_dict(self) -> dict:
        d = model_to_dict(self.model)
        d["support"] = [int(c) for c in self.cells]
        d["base_n_cells"] = self.base.n_cells
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def build_tilted(target: MeasureFlowPair, model: RateModel) -> TiltedModel:
    """Tilted chain making ``target`` its typical behaviour.

    The target must have a support disjoint from the absorbing set, a flow
    strictly positive exactly on support x support, and equal marginals.
    """
    mu = target.mu.weights
    Q = target.q.mass
    if mu.size != model.n_cells:
        raise ValueError("target and model live on different grids")
    cells = np.flatnonzero(mu > 0)
    if np.any(model.absorbing_mask[cells]):
        raise TiltError("target not in M0: support meets the absorbing set")
    inside = np.zeros(Q.shape, dtype=bool)
    inside[np.ix_(cells, cells)] = True
    if np.any(Q[inside] <= 0) or np.any(Q[~inside] != 0):
        raise TiltError("target not in M0: flow must be positive exactly on the support block")
    if not target.feasible():
        raise TiltError("target marginals are unequal")
    rates = np.zeros_like(Q)
    rates[inside] = (Q / np.where(mu > 0, mu, 1.0)[:, None])[inside]
    blk = rates[np.ix_(cells, cells)]
    lam = model.lam[cells]
    lam = lam / lam.sum()
    r_t = blk.sum(axis=1)
    p_t = blk / (r_t[:, None] * lam[None, :])
    tag = "generic" if cells.size < model.n_cells else model.space.geometry_tag
    space = DiscretizedSpace(cells.size, model.space.centers[cells], lam, tag)
    sub = RateModel(space, r_t, p_t, model.absorbing_tol)
    return TiltedModel(model, target, cells, rates, sub)


# ---------------------------------------------------------------------------
# path weights

def _in_support(traj: Trajectory, tilted: TiltedModel):
    if not np.all(np.isin(traj.skeleton, tilted.cells)):
        raise TiltError("trajectory leaves the tilted support; density undefined")


def _sojourns(traj: Trajectory) -> np.ndarray:
    """Time spent in ``skeleton[i]`` before ``t_end`` (support paths are never absorbed)."""
    holds = np.asarray(traj.holding_times, dtype=float)
    start = np.concatenate([[0.0], np.cumsum(holds)[:-1]])
    return np.clip(np.minimum(holds, traj.t_end - start), 0.0, None)


def log_rn_derivative(traj: Trajectory, tilted: TiltedModel) -> float:
    """T [Q_T(F*) - mu_T(r^F* - r)] for a path in global cell indices."""
    _in_support(traj, tilted)
    skel = np.asarray(traj.skeleton)
    nj = traj.n_jumps
    pairs, counts = np.unique(np.stack([skel[:nj], skel[1:nj + 1]]), axis=1,
                              return_counts=True)
    terms = [c * tilted.F_star[x, y] for (x, y), c in zip(pairs.T, counts)]
    dts = _sojourns(traj)
    excess = tilted.r_tilde - tilted.base.r
    for x in np.unique(skel[:dts.size]):
        terms.append(-math.fsum(dts[skel[:dts.size] == x]) * excess[x])
    return math.fsum(terms)


def log_rn_per_event(traj: Trajectory, tilted: TiltedModel) -> float:
    """Same likelihood ratio accumulated jump by jump and sojourn by sojourn."""
    _in_support(traj, tilted)
    c, ct = tilted.base.rate_matrix, tilted.rates
    r, rt = tilted.base.r, tilted.r_tilde
    skel = traj.skeleton
    terms = [math.log(ct[skel[i], skel[i + 1]]) - math.log(c[skel[i], skel[i + 1]])
             for i in range(traj.n_jumps)]
    terms += [-dt * (rt[x] - r[x]) for x, dt in zip(skel, _sojourns(traj))]
    return math.fsum(terms)


def log_martingale(traj: Trajectory, F, model: RateModel) -> float:
    """log M^F_T = T [Q_T(F) - mu_T(r^F - r)]."""
    F = np.asarray(F, dtype=float)
    if not np.all(np.isfinite(F)):
        raise ValueError("F must be finite")
    n = model.n_cells
    T = traj.t_end
    counts = empirical_flow(traj, n).mass * T
    occ = empirical_measure(traj, n).weights * T
    return float(np.sum(counts * F) - np.dot(occ, r_F_excess(model, F)))


def martingale_weight(traj: Trajectory, F, model: RateModel, log: bool = False) -> float:
    lm = log_martingale(traj, F, model)
    return lm if log else math.exp(lm)


def batch_log_martingale(model: RateModel, F, x0, t_end: float, n_paths: int, seed: int,
                         threads: int = 1) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    g = -r_F_excess(model, F)
    res = batch_sample(model, [x0], t_end, n_paths, seed, keep_mu=False,
                       path_sums={"logM": (F, g)}, threads=threads)
    return res.path_sums["logM"]


# ---------------------------------------------------------------------------
# events and importance sampling

OBSERVABLES = ("all", "mu_dot", "mu_mass", "flow_total", "tv_to")


@dataclass
class Event:
    """``observable(mu_T, Q_T) <direction> threshold``.

    * ``mu_dot``: mu_T(f) with ``f`` given,
    * ``mu_mass``: mu_T(cells),
    * ``flow_total``: Q_T(1),
    * ``tv_to``: TV distance from mu_T to ``center``,
    * ``all``: the whole space.
    """

    observable: str = "all"
    threshold: float = 0.0
    direction: str = ">="
    f: Optional[list] = None
    cells: Optional[list] = None
    center: Optional[list] = None

    def __post_init__(self):
        if self.observable not in OBSERVABLES:
            raise ValueError(f"unknown observable {self.observable!r}")
        if self.direction not in (">=", "<=", ">", "<"):
            raise ValueError(f"unknown direction {self.direction!r}")
        need = {"mu_dot": "f", "mu_mass": "cells", "tv_to": "center"}.get(self.observable)
        if need and getattr(self, need) is None:
            raise ValueError(f"observable {self.observable} needs {need!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "Event":
        return cls(**{k: d[k] for k in ("observable", "threshold", "direction", "f", "cells",
                                        "center") if k in d})

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}

    def values(self, mu: Optional[np.ndarray], q_total: np.ndarray) -> np.ndarray:
        """Observable per path from ``mu`` (paths x cells) and ``q_total``."""
        if self.observable == "all":
            return np.zeros(q_total.size)
        if self.observable == "flow_total":
            return np.asarray(q_total, dtype=float)
        if self.observable == "mu_dot":
            return mu @ np.asarray(self.f, dtype=float)
        if self.observable == "mu_mass":
            return mu[:, list(self.cells)].sum(axis=1)
        center = np.asarray(self.center, dtype=float)
        return 0.5 * np.abs(mu - center[None, :]).sum(axis=1)

    def indicator(self, mu, q_total) -> np.ndarray:
        if self.observable == "all":
            return np.ones(q_total.size, dtype=bool)
        v = self.values(mu, q_total)
        return {">=": v >= self.threshold, "<=": v <= self.threshold,
                ">": v > self.threshold, "<": v < self.threshold}[self.direction]


@dataclass
class ISEstimate:
    probability: float
    log_estimate: float
    stderr: float
    n_paths: int
    effective_sample_size: float
    n_hits: int = 0
    warning: Optional[str] = None

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["schema_version"] = 1
        if math.isinf(d["log_estimate"]):
            d["log_estimate"] = "-inf"
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def decay_rate(self, t_end: float) -> float:
        return -self.log_estimate / t_end


def estimate_ld_probability(event: Event, tilted: TiltedModel, t_end: float, n_paths: int,
                            seed: int, x0: Optional[int] = None,
                            threads: int = 1) -> ISEstimate:
    """Importance-sampling estimate of ``P_x0(event)`` under the base chain.

    Paths are drawn from the tilted chain and weighted by
    ``exp(-log dP_tilde/dP)``.  ``x0`` defaults to the first support cell.
    """
    x0 = int(tilted.cells[0]) if x0 is None else int(x0)
    G, g = tilted.log_rn_terms()
    res = batch_sample(tilted.sampler, [tilted.local(x0)], t_end, n_paths, seed,
                       keep_mu=True, path_sums={"log_rn": (G, g)}, threads=threads)
    n = tilted.base.n_cells
    mu = np.zeros((n_paths, n))
    mu[:, tilted.cells] = res.mu
    hit = event.indicator(mu, res.flow_total)
    logw = np.where(hit, -res.path_sums["log_rn"], -np.inf)
    n_hits = int(hit.sum())
    if n_hits == 0:
        est = ISEstimate(0.0, -math.inf, 0.0, n_paths, 0.0, 0,
                         "no path hit the event")
        warnings.warn(est.warning, RuntimeWarning)
        return est
    log_sum = float(logsumexp(logw))
    log_p = log_sum - math.log(n_paths)
    w_rel = np.exp(logw - logw.max())
    ess = float(w_rel.sum() ** 2 / np.sum(w_rel ** 2))
    # stderr of the mean weight, scaled back from the stabilized weights
    scale = math.exp(float(logw.max()))
    mean_rel = w_rel.mean()
    sd_rel = float(np.sqrt(np.mean((w_rel - mean_rel) ** 2) * n_paths / max(n_paths - 1, 1)))
    stderr = sd_rel * scale / math.sqrt(n_paths)
    warn = None
    if ess < ESS_WARN:
        warn = f"effective sample size {ess:.2f} below {ESS_WARN:g}; estimate unreliable"
        warnings.warn(warn, RuntimeWarning)
    return ISEstimate(min(math.exp(log_p), 1.0), log_p, stderr, n_paths, ess, n_hits, warn)
