"""Bundled experiments producing CSV/JSON artifacts."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .measures import tv_distance
from .model import (PhononInstance, RateModel, invariant_measure, model_from_dict,
                    phonon_from_dict, stationary_flow)
from .oracle import event_infimum
from .ratefn import MeasureFlowPair, flow_rate
from .simulator import batch_sample
from .tilting import Event, build_tilted, estimate_ld_probability

SCHEMA_VERSION = 1
EXPERIMENTS = ("lln", "ld_measure", "ld_flow", "zero_level_set", "phonon_demo")


class SpecError(ValueError):
    pass


@dataclass
class ExperimentSpec:
    name: str
    model: Union[str, dict]
    horizons: list
    n_paths: Union[int, list]
    seed: int
    out_dir: str = "."
    threads: int = 1
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise SpecError(f"unknown experiment {self.name!r}; choose from {EXPERIMENTS}")
        self.horizons = [float(t) for t in self.horizons]
        if not self.horizons or any(t <= 0 for t in self.horizons):
            raise SpecError("horizons must be positive")
        if any(b <= a for a, b in zip(self.horizons, self.horizons[1:])):
            raise SpecError("horizons must be strictly increasing")
        if isinstance(self.n_paths, (list, tuple)):
            if len(self.n_paths) != len(self.horizons):
                raise SpecError("n_paths list must match the horizons")
            self.n_paths = [int(n) for n in self.n_paths]
        else:
            self.n_paths = int(self.n_paths)
        if min(self.paths_list()) < 1:
            raise SpecError("n_paths must be >= 1")

    def paths_list(self) -> list:
        if isinstance(self.n_paths, list):
            return list(self.n_paths)
        return [self.n_paths] * len(self.horizons)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        return cls(**d)


def load_instance(model) -> tuple[RateModel, Optional[PhononInstance]]:
    cfg = model
    if isinstance(model, (str, Path)):
        cfg = json.loads(Path(model).read_text())
    if cfg.get("kind") == "phonon":
        inst = phonon_from_dict(cfg)
        return inst.model, inst
    return model_from_dict(cfg), None


def _write_csv(path: Path, header: list, rows: list):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _finite(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


# ---------------------------------------------------------------------------

def _lln(spec, model, inst):
    eps = float(spec.params.get("eps", 0.05))
    pi = invariant_measure(model).weights
    if inst is not None and "starts" not in spec.params:
        starts = [inst.far_cell()]
    else:
        eligible = np.flatnonzero(model.r >= eps)
        starts = spec.params.get("starts", eligible.tolist())
        max_starts = int(spec.params.get("max_starts", 8))
        if len(starts) > max_starts:
            starts = [starts[i] for i in np.linspace(0, len(starts) - 1, max_starts).astype(int)]
    rows = []
    for h, (T, n_paths) in enumerate(zip(spec.horizons, spec.paths_list())):
        for x0 in starts:
            res = batch_sample(model, [int(x0)], T, n_paths, spec.seed + 7919 * h + int(x0),
                               threads=spec.threads)
            mu = res.mu
            tv_mean = tv_distance(mu.mean(axis=0), pi)
            tv_path = float(np.mean([tv_distance(m, pi) for m in mu]))
            rows.append([T, int(x0), n_paths, tv_mean, tv_path,
                         float(res.absorbed.mean())])
    by_T = {T: max(r[3] for r in rows if r[0] == T) for T in spec.horizons}
    seq = [by_T[T] for T in spec.horizons]
    summary = {"worst_tv_of_mean": {repr(k): v for k, v in by_T.items()},
               "decreasing": all(b < a for a, b in zip(seq, seq[1:])),
               "final_tv": seq[-1], "eps": eps, "starts": [int(s) for s in starts]}
    header = ["t_end", "x0", "n_paths", "tv_of_mean", "tv_mean_path", "absorbed_frac"]
    return header, rows, summary


def _ld(spec, model, event: Event, minimizer):
    pair = MeasureFlowPair(minimizer.mu, minimizer.q, marginal_tol=1e-8)
    tilted = build_tilted(pair, model)
    x0 = int(spec.params.get("x0", 0))
    rows = []
    for h, (T, n_paths) in enumerate(zip(spec.horizons, spec.paths_list())):
        est = estimate_ld_probability(event, tilted, T, n_paths, spec.seed + 7919 * h,
                                      x0=x0, threads=spec.threads)
        rate = est.decay_rate(T)
        rows.append([T, n_paths, est.log_estimate, rate, minimizer.value,
                     minimizer.value / rate if rate > 0 else float("inf"),
                     est.effective_sample_size, est.stderr, est.n_hits])
    header = ["t_end", "n_paths", "log_p", "decay_rate", "prediction", "prediction_over_rate",
              "ess", "stderr", "n_hits"]
    summary = {"prediction": minimizer.value, "event": event.to_dict(),
               "ratios": [r[5] for r in rows],
               "tilt_mu": minimizer.mu.tolist(), "tilt_q": minimizer.q.tolist()}
    return header, rows, summary


def _ld_measure(spec, model, inst):
    pi = invariant_measure(model).weights
    f = np.asarray(spec.params.get("f", np.eye(model.n_cells)[-1]), dtype=float)
    level = float(pi @ f) + float(spec.params.get("shift", 0.2))
    mn = event_infimum(model, level, f=f)
    ev = Event("mu_dot", level, ">=", f=f.tolist())
    return _ld(spec, model, ev, mn)


def _ld_flow(spec, model, inst):
    pi = invariant_measure(model)
    level = float(spec.params.get("factor", 2.0)) * pi(model.r)
    mn = event_infimum(model, level, flow_weight=np.ones((model.n_cells, model.n_cells)))
    ev = Event("flow_total", level, ">=")
    header, rows, summary = _ld(spec, model, ev, mn)
    summary["flow_rate_at_minimizer"] = flow_rate(mn.q, model, marginal_tol=1e-8).value
    return header, rows, summary


def _zero_level_set(spec, model, inst):
    if not np.any(model.absorbing_mask):
        raise SpecError("zero_level_set needs a model with absorbing cells")
    delta = float(spec.params.get("delta", 0.1))
    mass = float(spec.params.get("mass", 0.9))
    near = np.flatnonzero(model.r < delta)
    starts_pool = near[~model.absorbing_mask[near]]
    if starts_pool.size == 0:
        raise SpecError("no non-absorbing cell inside A_delta")
    w = model.lam[starts_pool] / model.lam[starts_pool].sum()
    indicator = np.zeros(model.n_cells)
    indicator[near] = 1.0
    rows = []
    for h, (T, n_paths) in enumerate(zip(spec.horizons, spec.paths_list())):
        draw = np.random.default_rng([spec.seed, h])
        x0s = draw.choice(starts_pool, size=n_paths, p=w)
        res = batch_sample(model, x0s, T, n_paths, spec.seed + 7919 * h, keep_mu=False,
                           functionals={"A": indicator}, threads=spec.threads)
        hit = res.functionals["A"] >= mass
        p = float(hit.mean())
        se = math.sqrt(p * (1 - p) / n_paths)
        slope = -math.log(p) / T if p > 0 else float("inf")
        rows.append([T, n_paths, int(hit.sum()), p, se, slope,
                     float(res.absorbed.mean())])
    slopes = [r[5] for r in rows]
    summary = {"delta": delta, "mass": mass, "slopes": [_finite(s) for s in slopes],
               "slope_ratio_first_last": _finite(slopes[0] / slopes[-1]) if slopes[-1] > 0
               else None}
    header = ["t_end", "n_paths", "hits", "p_hat", "stderr", "slope", "absorbed_frac"]
    return header, rows, summary


def _phonon_demo(spec, model, inst):
    if inst is None:
        raise SpecError("phonon_demo needs a phonon model config")
    v = inst.velocity
    x0 = int(spec.params.get("x0", inst.far_cell()))
    qs = [0.05, 0.25, 0.5, 0.75, 0.95]
    rows = []
    for h, (T, n_paths) in enumerate(zip(spec.horizons, spec.paths_list())):
        res = batch_sample(model, [x0], T, n_paths, spec.seed + 7919 * h, keep_mu=False,
                           functionals={"v": v}, threads=spec.threads)
        Y = res.functionals["v"] * T
        rows.append([T, n_paths, float(Y.mean()), float(Y.std(ddof=1) / math.sqrt(Y.size))
                     if Y.size > 1 else 0.0] + [float(q) for q in np.quantile(Y, qs)])
    pi = invariant_measure(model)
    summary = {"pi_v": pi(v), "x0": x0}
    header = ["t_end", "n_paths", "mean_Y", "stderr_Y"] + [f"q{int(q * 100):02d}" for q in qs]
    return header, rows, summary


RUNNERS = {"lln": _lln, "ld_measure": _ld_measure, "ld_flow": _ld_flow,
           "zero_level_set": _zero_level_set, "phonon_demo": _phonon_demo}


def run_experiment(spec: ExperimentSpec) -> tuple[int, dict]:
    """Run one bundled experiment and write ``<name>.csv`` and ``<name>.json``."""
    model, inst = load_instance(spec.model)
    header, rows, summary = RUNNERS[spec.name](spec, model, inst)
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / f"{spec.name}.csv", header, rows)
    spec_d = asdict(spec)
    spec_d.pop("out_dir")
    spec_d.pop("threads")
    doc = {"schema_version": SCHEMA_VERSION, "experiment": spec.name, "spec": spec_d,
           "summary": summary}
    (out / f"{spec.name}.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    return 0, doc
