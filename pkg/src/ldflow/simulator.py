"""Trajectory sampling, empirical measures/flows and batch summaries."""
from __future__ import annotations

import csv
import io
import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from . import _kernels as K
from . import rng
from .measures import Flow, Measure
from .model import RateModel

MAX_BLOCK = 1 << 20


class SimulationError(ValueError):
    pass


@dataclass(eq=False)
class Trajectory:
    """Skeleton states, holding times and horizon of one sampled path.

    ``holding_times[i]`` is the sojourn in ``skeleton[i]``.  Unless the path
    was absorbed the last holding time is complete, so the stored jump times
    satisfy ``T_{n-1} < t_end <= T_n``; an absorbed path ends in its absorbing
    state with no stored (infinite) holding time.
    """

    skeleton: np.ndarray
    holding_times: np.ndarray
    t_end: float
    absorbed: bool
    seed: Optional[int] = None

    @property
    def jump_times(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.holding_times)])

    @property
    def n_jumps(self) -> int:
        """Jumps completed strictly before ``t_end``."""
        times = self.jump_times[1:len(self.skeleton)]
        return int(np.count_nonzero(times < self.t_end))

    def __eq__(self, other):
        return (isinstance(other, Trajectory)
                and self.t_end == other.t_end and self.absorbed == other.absorbed
                and np.array_equal(self.skeleton, other.skeleton)
                and np.array_equal(self.holding_times, other.holding_times))


class JumpSampler:
    """Alias tables and rate arrays for repeated sampling from one model."""

    def __init__(self, model: RateModel):
        self.model = model
        self.n_cells = model.n_cells
        self.r = np.ascontiguousarray(model.r)
        self.absorbing = np.ascontiguousarray(model.absorbing_mask)
        self.prob, self.alias = K.build_alias(np.ascontiguousarray(model.transition_matrix))
        rmax = float(self.r.max()) if self.r.size else 0.0
        self._rate_hint = max(rmax, 1e-12)

    def block_size(self, t_end: float) -> int:
        return int(min(MAX_BLOCK, max(64, 1.1 * t_end * self._rate_hint + 32)))

    def raw_path(self, x0: int, t_end: float, seed: int):
        """Sample one path; returns ``(skeleton, holds, n_states, absorbed)`` buffers."""
        if not (0 <= x0 < self.n_cells):
            raise SimulationError(f"invalid start cell {x0}")
        if self.absorbing[x0]:
            raise SimulationError("started at absorbing state")
        if not t_end > 0:
            raise SimulationError("t_end must be positive")
        g_hold = rng.stream(seed, rng.HOLD)
        g_skel = rng.stream(seed, rng.SKELETON)
        block = self.block_size(t_end)
        u_hold = g_hold.random(block)
        u_skel = g_skel.random(block)
        skel = np.empty(block + 1, dtype=np.int64)
        holds = np.empty(block)
        skel[0] = x0
        x, t, ih, isk, n_states = x0, 0.0, 0, 0, 1
        while True:
            status, x, t, ih, isk, n_states = K.walk(
                x, t, t_end, self.r, self.absorbing, self.prob, self.alias,
                u_hold, u_skel, ih, isk, skel, holds, n_states)
            if status != K.NEED_MORE:
                break
            u_hold = np.concatenate([u_hold, g_hold.random(block)])
            u_skel = np.concatenate([u_skel, g_skel.random(block)])
            skel = np.concatenate([skel, np.empty(block, dtype=np.int64)])
            holds = np.concatenate([holds, np.empty(block)])
        return skel, holds, n_states, status == K.ABSORBED


def _sampler(model) -> JumpSampler:
    return model if isinstance(model, JumpSampler) else JumpSampler(model)


def sample_trajectory(model: Union[RateModel, JumpSampler], x0: int, t_end: float,
                      seed: int) -> Trajectory:
    """Sample the jump chain from ``x0`` on ``[0, t_end]``.

    Holding times are exponential with rate ``r(Z_i)``; the next state is
    drawn from ``p(Z_i, .) lam(.)``.  Sampling stops at the first jump time
    ``>= t_end`` or on entering an absorbing cell.  The same arguments always
    give the same trajectory.
    """
    s = _sampler(model)
    skel, holds, n_states, absorbed = s.raw_path(int(x0), float(t_end), seed)
    n_h = n_states - 1 if absorbed else n_states
    return Trajectory(skel[:n_states].copy(), holds[:n_h].copy(), float(t_end),
                      bool(absorbed), seed)


def _occupancy(traj: Trajectory, n_cells: int) -> np.ndarray:
    n = len(traj.skeleton)
    buf = np.zeros(max(n, 1))
    buf[:len(traj.holding_times)] = traj.holding_times
    return K.occupancy(np.asarray(traj.skeleton, dtype=np.int64), buf, n, traj.t_end,
                       n_cells, traj.absorbed)


def _n_cells(traj: Trajectory, n_cells: Optional[int]) -> int:
    return int(n_cells) if n_cells is not None else int(traj.skeleton.max()) + 1


def empirical_measure(traj: Trajectory, n_cells: Optional[int] = None) -> Measure:
    """Fraction of ``[0, t_end]`` spent in each cell."""
    occ = _occupancy(traj, _n_cells(traj, n_cells))
    return Measure(occ / traj.t_end)


def empirical_flow(traj: Trajectory, n_cells: Optional[int] = None) -> Flow:
    """Jumps ``x -> y`` completed strictly before ``t_end``, per unit time."""
    n = _n_cells(traj, n_cells)
    counts = K.jump_counts(np.asarray(traj.skeleton, dtype=np.int64), traj.n_jumps, n)
    return Flow(counts / traj.t_end)


def additive_functional(traj: Trajectory, v) -> float:
    """Y(t_end) = integral of v(X_s) over ``[0, t_end]``."""
    v = np.asarray(v, dtype=float)
    return float(np.dot(_occupancy(traj, v.size), v))


def path_functional(traj: Trajectory, G, g) -> tuple[float, float]:
    """(sum of G over completed jumps, time integral of g) along ``traj``."""
    G = np.ascontiguousarray(G, dtype=float)
    g = np.ascontiguousarray(g, dtype=float)
    n = traj.n_jumps + 1
    buf = np.zeros(len(traj.skeleton))
    buf[:len(traj.holding_times)] = traj.holding_times
    return K.path_integrals(np.asarray(traj.skeleton, dtype=np.int64), buf, n, traj.t_end,
                            traj.absorbed, G, g)


# ---------------------------------------------------------------------------
# batches

@dataclass(eq=False)
class BatchResult:
    """Per-path summaries of a batch, in path order."""

    t_end: float
    seeds: np.ndarray
    x0: np.ndarray
    absorbed: np.ndarray
    n_jumps: np.ndarray
    mu: Optional[np.ndarray]
    flow: Optional[np.ndarray] = None
    functionals: dict = field(default_factory=dict)
    path_sums: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)
    trajectories: Optional[list] = None

    @property
    def n_paths(self) -> int:
        return len(self.seeds)

    @property
    def flow_total(self) -> np.ndarray:
        return self.n_jumps / self.t_end

    @property
    def ok(self) -> np.ndarray:
        bad = np.zeros(self.n_paths, dtype=bool)
        for i, _ in self.errors:
            bad[i] = True
        return ~bad

    def summary(self, i: int) -> dict:
        out = {"seed": int(self.seeds[i]), "absorbed": bool(self.absorbed[i]),
               "t_end": self.t_end, "n_jumps": int(self.n_jumps[i]),
               "q_total": float(self.flow_total[i])}
        if self.mu is not None:
            out["mu"] = self.mu[i]
        if self.flow is not None:
            out["flow"] = self.flow[i]
        return out

    def __eq__(self, other):
        if not isinstance(other, BatchResult):
            return NotImplemented
        same = (self.t_end == other.t_end and self.errors == other.errors)
        for name in ("seeds", "x0", "absorbed", "n_jumps"):
            same = same and np.array_equal(getattr(self, name), getattr(other, name))
        for name in ("mu", "flow"):
            a, b = getattr(self, name), getattr(other, name)
            same = same and ((a is None and b is None) or
                             (a is not None and b is not None and np.array_equal(a, b)))
        return same

    # CSV columns: seed, absorbed, t_end, n_jumps, mu, q_total
    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["seed", "absorbed", "t_end", "n_jumps", "mu", "q_total"])
        for i in range(self.n_paths):
            mu = {}
            if self.mu is not None:
                nz = np.flatnonzero(self.mu[i])
                mu = {str(int(k)): float(self.mu[i, k]) for k in nz}
            w.writerow([int(self.seeds[i]), int(bool(self.absorbed[i])), repr(float(self.t_end)),
                        int(self.n_jumps[i]), json.dumps(mu, separators=(",", ":")),
                        repr(float(self.flow_total[i]))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_binary(self, path) -> None:
        """Little-endian cache; see :data:`BINARY_HEADER` for the layout."""
        n_cells = 0 if self.mu is None else self.mu.shape[1]
        with open(path, "wb") as fh:
            fh.write(struct.pack(BINARY_HEADER, BINARY_MAGIC, BINARY_VERSION, n_cells,
                                 self.n_paths, float(self.t_end)))
            fh.write(np.asarray(self.seeds, dtype="<u8").tobytes())
            for arr in (self.absorbed, self.n_jumps, self.flow_total):
                fh.write(np.asarray(arr, dtype="<f8").tobytes())
            if self.mu is not None:
                fh.write(np.asarray(self.mu, dtype="<f8").tobytes())

    @classmethod
    def from_binary(cls, path) -> "BatchResult":
        raw = Path(path).read_bytes()
        hsize = struct.calcsize(BINARY_HEADER)
        magic, version, n_cells, n_paths, t_end = struct.unpack(BINARY_HEADER, raw[:hsize])
        if magic != BINARY_MAGIC or version != BINARY_VERSION:
            raise ValueError("not a batch cache file")
        off = hsize
        seeds = np.frombuffer(raw, "<u8", n_paths, off).astype(np.uint64)
        off += 8 * n_paths
        cols = []
        for _ in range(3):
            cols.append(np.frombuffer(raw, "<f8", n_paths, off).copy())
            off += 8 * n_paths
        mu = None
        if n_cells:
            mu = np.frombuffer(raw, "<f8", n_paths * n_cells, off).reshape(n_paths, n_cells).copy()
        return cls(t_end=t_end, seeds=seeds, x0=np.full(n_paths, -1),
                   absorbed=cols[0].astype(bool), n_jumps=cols[1].astype(np.int64), mu=mu)


# magic, version, n_cells, n_paths, t_end; then u64 seeds[n_paths],
# f64 absorbed[n_paths], f64 n_jumps[n_paths], f64 q_total[n_paths],
# f64 mu[n_paths * n_cells] (row-major, omitted when n_cells == 0)
BINARY_HEADER = "<4sIIQd"
BINARY_MAGIC = b"LDFB"
BINARY_VERSION = 1


def _run_paths(sampler: JumpSampler, idx, starts, t_end, seeds, out, keep_mu, keep_flow,
               funcs, keep_traj, sums):
    n = sampler.n_cells
    for i in idx:
        try:
            skel, holds, n_states, absorbed = sampler.raw_path(int(starts[i]), t_end, int(seeds[i]))
        except SimulationError as exc:
            out["errors"].append((int(i), str(exc)))
            continue
        out["absorbed"][i] = absorbed
        out["n_jumps"][i] = n_states - 1
        occ = K.occupancy(skel, holds, n_states, t_end, n, absorbed) / t_end
        if keep_mu:
            out["mu"][i] = occ
        for name, f in funcs.items():
            out["functionals"][name][i] = occ @ f
        for name, (G, g) in sums.items():
            jump_part, time_part = K.path_integrals(skel, holds, n_states, t_end, absorbed, G, g)
            out["path_sums"][name][i] = jump_part + time_part
        if keep_flow:
            out["flow"][i] = K.jump_counts(skel, n_states - 1, n) / t_end
        if keep_traj:
            n_h = n_states - 1 if absorbed else n_states
            out["trajectories"][i] = Trajectory(skel[:n_states].copy(), holds[:n_h].copy(),
                                                t_end, bool(absorbed), int(seeds[i]))


def batch_sample(model: Union[RateModel, JumpSampler], x0_set, t_end: float, n_paths: int,
                 base_seed: int, *, keep_mu: bool = True, keep_flow: bool = False,
                 functionals: Optional[Mapping[str, Sequence[float]]] = None,
                 keep_trajectories: bool = False, path_sums=None,
                 threads: int = 1) -> BatchResult:
    """Sample ``n_paths`` independent paths and keep their summaries.

    Path ``i`` starts at ``x0_set[i % len(x0_set)]`` and uses seed
    ``base_seed XOR i``.  ``functionals`` maps names to cell functions whose
    empirical averages are stored per path.  Failed paths (e.g. absorbing
    starts) are listed in ``errors`` rather than raised.  Output does not
    depend on ``threads``.

    ``path_sums`` maps names to pairs ``(G, g)``; each path stores
    ``sum_jumps G(Z_i, Z_{i+1}) + int_0^T g(X_t) dt``.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    sampler = _sampler(model)
    n = sampler.n_cells
    starts_in = np.atleast_1d(np.asarray(x0_set, dtype=np.int64))
    starts = starts_in[np.arange(n_paths) % starts_in.size]
    seeds = np.array([rng.path_seed(base_seed, i) for i in range(n_paths)], dtype=np.uint64)
    funcs = {k: np.asarray(v, dtype=float) for k, v in (functionals or {}).items()}
    sums = {k: (np.ascontiguousarray(G, dtype=float), np.ascontiguousarray(g, dtype=float))
            for k, (G, g) in (path_sums or {}).items()}
    out = {
        "absorbed": np.zeros(n_paths, dtype=bool),
        "n_jumps": np.zeros(n_paths, dtype=np.int64),
        "mu": np.zeros((n_paths, n)) if keep_mu else None,
        "flow": np.zeros((n_paths, n, n)) if keep_flow else None,
        "functionals": {k: np.zeros(n_paths) for k in funcs},
        "path_sums": {k: np.zeros(n_paths) for k in sums},
        "errors": [],
        "trajectories": [None] * n_paths if keep_trajectories else None,
    }
    t_end = float(t_end)
    if threads <= 1:
        _run_paths(sampler, range(n_paths), starts, t_end, seeds, out, keep_mu, keep_flow,
                   funcs, keep_trajectories, sums)
    else:
        chunks = np.array_split(np.arange(n_paths), threads * 4)
        partial = [dict(out, errors=[]) for _ in chunks]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futs = [pool.submit(_run_paths, sampler, c, starts, t_end, seeds, part, keep_mu,
                                keep_flow, funcs, keep_trajectories, sums)
                    for c, part in zip(chunks, partial)]
            for f in futs:
                f.result()
        out["errors"] = sorted(e for part in partial for e in part["errors"])
    return BatchResult(t_end=t_end, seeds=seeds, x0=starts, absorbed=out["absorbed"],
                       n_jumps=out["n_jumps"], mu=out["mu"], flow=out["flow"],
                       functionals=out["functionals"], path_sums=out["path_sums"],
                       errors=out["errors"],
                       trajectories=out["trajectories"])
