"""State-space discretizations, jump-rate models and their stationary objects.

The chain jumps from cell ``x`` to cell ``y`` at rate
``c[x, y] = r[x] * p[x, y] * lam[y]`` where ``p`` is a density against the
reference weights ``lam``.  Cells with ``r < absorbing_tol`` form the
absorbing set E0.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .measures import Flow, Measure, as_weights, tv_distance

GEOMETRIES = ("interval", "torus1d", "generic")
SCHEMA_VERSION = 1


class ModelError(ValueError):
    """Raised when a model violates its structural invariants."""


class StationaryError(RuntimeError):
    def __init__(self, msg: str, residual: float):
        super().__init__(f"{msg} (residual={residual:.3e})")
        self.residual = residual


@dataclass(frozen=True, eq=False)
class DiscretizedSpace:
    """Finite cell decomposition of a compact space with reference weights."""

    n_cells: int
    centers: np.ndarray
    lambda_weights: np.ndarray
    geometry_tag: str = "generic"

    def __post_init__(self):
        c = np.array(self.centers, dtype=float)
        lam = np.array(self.lambda_weights, dtype=float).ravel()
        if self.n_cells < 1:
            raise ModelError("n_cells must be positive")
        if c.shape[0] != self.n_cells or lam.shape[0] != self.n_cells:
            raise ModelError("centers / lambda_weights length must equal n_cells")
        if self.geometry_tag not in GEOMETRIES:
            raise ModelError(f"unknown geometry {self.geometry_tag!r}")
        if not np.all(lam > 0):
            raise ModelError("reference weights must be strictly positive")
        if abs(lam.sum() - 1.0) > 1e-12:
            raise ModelError(f"reference weights sum to {lam.sum()!r}")
        c.setflags(write=False)
        lam.setflags(write=False)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "lambda_weights", lam)

    @classmethod
    def uniform(cls, n_cells: int, geometry: str = "interval", lo: float = -0.5,
                hi: float = 0.5) -> "DiscretizedSpace":
        """Equal cells on ``[lo, hi)``.

        Interval cells are centred at midpoints; torus cells start at ``lo`` so
        that for an even count the point ``(lo + hi) / 2`` is a cell center.
        """
        h = (hi - lo) / n_cells
        j = np.arange(n_cells)
        if geometry == "torus1d":
            centers = lo + j * h
        else:
            centers = lo + (j + 0.5) * h
        return cls(n_cells, centers, np.full(n_cells, 1.0 / n_cells), geometry)

    def __eq__(self, other):
        return (isinstance(other, DiscretizedSpace)
                and self.n_cells == other.n_cells
                and self.geometry_tag == other.geometry_tag
                and np.array_equal(self.centers, other.centers)
                and np.array_equal(self.lambda_weights, other.lambda_weights))

    def __hash__(self):
        return hash((self.n_cells, self.geometry_tag, self.lambda_weights.tobytes()))


@dataclass(frozen=True, eq=False)
class RateModel:
    """Jump rates ``r`` and transition density ``p`` on a discretized space."""

    space: DiscretizedSpace
    r: np.ndarray
    p_density: np.ndarray
    absorbing_tol: float = 1e-12

    def __post_init__(self):
        n = self.space.n_cells
        r = np.array(self.r, dtype=float).ravel()
        p = np.array(self.p_density, dtype=float)
        if r.shape != (n,) or p.shape != (n, n):
            raise ModelError(f"shape mismatch: r {r.shape}, p {p.shape}, n_cells {n}")
        if not np.all(np.isfinite(r)) or np.any(r < 0):
            raise ModelError("jump rates must be finite and nonnegative")
        if not np.all(np.isfinite(p)) or np.any(p <= 0):
            raise ModelError("transition density must be strictly positive")
        rows = p @ self.space.lambda_weights
        if np.max(np.abs(rows - 1.0)) > 1e-10:
            raise ModelError("transition density rows must integrate to 1 against lambda")
        if self.absorbing_tol < 0:
            raise ModelError("absorbing_tol must be nonnegative")
        r.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "p_density", p)

    @property
    def n_cells(self) -> int:
        return self.space.n_cells

    @property
    def lam(self) -> np.ndarray:
        return self.space.lambda_weights

    @property
    def transition_matrix(self) -> np.ndarray:
        """Skeleton kernel P[x, y] = p(x, y) lam(y)."""
        return self.p_density * self.lam[None, :]

    @property
    def rate_matrix(self) -> np.ndarray:
        """c[x, y] = r(x) p(x, y) lam(y), including the diagonal."""
        return self.r[:, None] * self.transition_matrix

    @property
    def absorbing_mask(self) -> np.ndarray:
        return self.r < self.absorbing_tol

    @property
    def absorbing_cells(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.absorbing_mask)]

    def replace(self, **kw) -> "RateModel":
        d = dict(space=self.space, r=self.r, p_density=self.p_density,
                 absorbing_tol=self.absorbing_tol)
        d.update(kw)
        return RateModel(**d)

    def __eq__(self, other):
        return (isinstance(other, RateModel)
                and self.space == other.space
                and self.absorbing_tol == other.absorbing_tol
                and np.array_equal(self.r, other.r)
                and np.array_equal(self.p_density, other.p_density))

    __hash__ = None


@dataclass
class AssumptionReport:
    lambda_inv_r: float
    level_set_ratios: list
    min_p: float
    absorbing_cells: list
    passed: dict
    inner_shell_fraction: float = 0.0
    max_adjacent_jump: float = 0.0
    ratio_cap: float = 100.0

    @property
    def all_passed(self) -> bool:
        return all(self.passed.values())

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "lambda_inv_r": _json_float(self.lambda_inv_r),
            "level_set_ratios": [
                {"delta": d, "ratio": ("undefined" if q is None else q)}
                for d, q in self.level_set_ratios
            ],
            "min_p": self.min_p,
            "absorbing_cells": list(self.absorbing_cells),
            "passed": dict(self.passed),
            "all_passed": self.all_passed,
            "inner_shell_fraction": self.inner_shell_fraction,
            "max_adjacent_jump": self.max_adjacent_jump,
            "ratio_cap": self.ratio_cap,
        }


def _json_float(x: float):
    return "inf" if math.isinf(x) else x


def validate_assumptions(model: RateModel, n_deltas: int = 8, ratio_cap: float = 100.0,
                         shell_fraction_cap: float = 0.25) -> AssumptionReport:
    """Check the standing conditions (i)-(iv) on the grid.

    Nothing is raised; each condition gets a pass flag.  Condition (iii) is
    judged on the cell sum of ``lam / r`` over non-absorbing cells together
    with a refinement-sensitivity check: when the shell of the smallest
    positive rates (``r < 2 min r``) carries more than ``shell_fraction_cap``
    of the sum, the sum is controlled by the grid spacing rather than by the
    integrand and the condition is flagged as failed.  Rates within a factor
    10 of each other skip the shell check.
    """
    r, lam = model.r, model.lam
    absorbing = model.absorbing_mask
    live = ~absorbing

    # (i) only finiteness is checkable; the largest neighbour jump is a diagnostic
    order = np.argsort(model.space.centers) if model.space.centers.ndim == 1 else np.arange(r.size)
    rs = r[order]
    jumps = np.abs(np.diff(rs)) if rs.size > 1 else np.zeros(1)
    if model.space.geometry_tag == "torus1d" and rs.size > 1:
        jumps = np.append(jumps, abs(rs[-1] - rs[0]))
    max_jump = float(jumps.max()) if jumps.size else 0.0
    ok_i = bool(np.all(np.isfinite(r)) and np.all(r >= 0))

    # (ii)
    min_p = float(model.p_density.min())
    rows = model.p_density @ lam
    ok_ii = bool(min_p > 0 and np.all(lam > 0) and np.max(np.abs(rows - 1)) <= 1e-10)

    # (iii)
    if not live.any():
        lam_inv_r, inner_frac, ok_iii = math.inf, 1.0, False
    else:
        contrib = lam[live] / r[live]
        lam_inv_r = float(contrib.sum())
        rmin = r[live].min()
        inner = r[live] < 2.0 * rmin
        # a constant rate has no small-rate shell to speak of
        inner_frac = 0.0 if np.all(r[live] == rmin) else float(contrib[inner].sum() / lam_inv_r)
        # rates bounded away from zero keep lam(1/r) <= 10 / max r under any refinement
        bounded = rmin >= 0.1 * r[live].max()
        ok_iii = bool(np.isfinite(lam_inv_r) and (bounded or inner_frac <= shell_fraction_cap))

    # (iv)
    ratios = []
    rmax = float(r.max()) if r.size else 0.0
    for n in range(1, n_deltas + 1):
        delta = rmax / 2.0 * 2.0 ** (-n)
        big = float(lam[live & (r < 2 * delta)].sum())
        shell = float(lam[live & (r < 2 * delta) & (r >= delta)].sum())
        ratios.append((delta, big / shell if shell > 0 else None))
    defined = [q for _, q in ratios if q is not None]
    ok_iv = bool(all(q <= ratio_cap for q in defined))

    return AssumptionReport(
        lambda_inv_r=lam_inv_r,
        level_set_ratios=ratios,
        min_p=min_p,
        absorbing_cells=model.absorbing_cells,
        passed={"i": ok_i, "ii": ok_ii, "iii": ok_iii, "iv": ok_iv},
        inner_shell_fraction=inner_frac,
        max_adjacent_jump=max_jump,
        ratio_cap=ratio_cap,
    )


def skeleton_stationary(model: RateModel, tol: float = 1e-12, method: str = "auto",
                        max_iter: int = 1_000_000) -> Measure:
    """Invariant law pi0 of the skeleton kernel ``P = p * lam``.

    ``method`` is ``"direct"`` (linear solve, at most 2048 cells),
    ``"power"`` or ``"auto"``.  Either way the result is accepted only once
    ``||pi0 P - pi0||_TV < tol``; a direct solution that misses the
    tolerance is polished by power iteration.
    """
    P = model.transition_matrix
    n = model.n_cells
    if method not in ("auto", "direct", "power"):
        raise ValueError(f"unknown method {method!r}")
    if method == "direct" and n > 2048:
        raise ValueError("direct solve limited to 2048 cells")

    pi = None
    if method in ("auto", "direct") and n <= 2048:
        A = P.T - np.eye(n)
        A[-1, :] = 1.0
        b = np.zeros(n)
        b[-1] = 1.0
        try:
            pi = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            pi = None
        if pi is not None:
            pi = np.clip(pi, 0.0, None)
            pi /= pi.sum()
    if pi is None:
        pi = model.lam.copy()

    for _ in range(max_iter):
        nxt = pi @ P
        nxt /= nxt.sum()
        res = tv_distance(nxt, pi)
        if res < tol:
            return Measure(nxt)
        pi = nxt
    raise StationaryError("skeleton power iteration did not converge", res)


def invariant_measure(model: RateModel, pi0: Optional[Measure] = None, *,
                      restrict: bool = True) -> Measure:
    """pi(x) proportional to pi0(x) / r(x).

    With ``restrict=True`` the absorbing cells are treated as carrying no
    reference mass, as in the continuum where E0 is lambda-null, and pi is
    zero there.  With ``restrict=False`` any absorbing cell charged by pi0 is
    an error.
    """
    if pi0 is None:
        pi0 = skeleton_stationary(model)
    w0 = as_weights(pi0)
    live = ~model.absorbing_mask
    if not live.any():
        raise ModelError("pi undefined: every cell is absorbing")
    if not restrict and np.any(w0[~live] > 0):
        raise ModelError("pi undefined on absorbing cell")
    w = np.zeros(model.n_cells)
    w[live] = w0[live] / model.r[live]
    return Measure(w / w.sum())


def stationary_flow(model: RateModel, pi) -> Flow:
    """Q^pi[x, y] = pi(x) c(x, y)."""
    w = as_weights(pi)
    return Flow(w[:, None] * model.rate_matrix)


# ---------------------------------------------------------------------------
# bundled instances

def two_cell_model() -> RateModel:
    """lam = (1/2, 1/2), P = [[.5, .5], [.25, .75]], r = (1, 2)."""
    space = DiscretizedSpace(2, np.array([0.0, 1.0]), np.array([0.5, 0.5]), "generic")
    P = np.array([[0.5, 0.5], [0.25, 0.75]])
    return RateModel(space, np.array([1.0, 2.0]), P / 0.5)


THREE_CELL_P = np.array([
    [0.2, 0.5, 0.3],
    [0.3, 0.2, 0.5],
    [0.5, 0.3, 0.2],
])
THREE_CELL_R = np.array([0.5, 1.0, 1.5])


def three_cell_model() -> RateModel:
    """Non-reversible three-cell chain with uniform reference weights."""
    space = DiscretizedSpace(3, np.array([0.0, 1.0, 2.0]), np.full(3, 1 / 3), "generic")
    return RateModel(space, THREE_CELL_R.copy(), THREE_CELL_P * 3.0)


@dataclass(frozen=True, eq=False)
class PhononInstance:
    """Wave-number jump chain on the 1d torus with rate ``|k|**gamma``."""

    gamma: float
    velocity: np.ndarray
    model: RateModel
    eps: float = 0.05
    zero_cell: int = 0

    @property
    def space(self) -> DiscretizedSpace:
        return self.model.space

    def far_cell(self) -> int:
        """Cell farthest from k = 0 (first by index on ties)."""
        d = np.abs(self.space.centers)
        return int(np.argmax(d))

    def cell_near(self, k: float) -> int:
        return int(np.argmin(np.abs(self.space.centers - k)))


def phonon_edges(n_cells: int, zero_width: float, min_width: float, growth: float):
    """Cell widths on the positive half-torus for the phonon grid.

    Returns ``(side_widths, boundary_width)``.  The grid is a zero cell of
    width ``zero_width`` centred at 0, ``(n_cells - 2) / 2`` cells on each
    side, and one cell straddling k = +-1/2.  Side cells grow geometrically
    from ``min_width`` until they reach the uniform spacing used for the rest.
    """
    K = (n_cells - 2) // 2
    half = 0.5 - zero_width / 2.0
    for m in range(K + 1):
        geo = min_width * growth ** np.arange(m)
        u = (half - geo.sum()) / (K - m + 0.5)
        if u <= 0:
            raise ModelError("phonon grid: geometric refinement overflows the torus")
        if m == K or min_width * growth ** m >= u:
            return np.concatenate([geo, np.full(K - m, u)]), u
    raise AssertionError("unreachable")  # pragma: no cover


def make_phonon_instance(n_cells: int = 512, gamma: float = 0.5, velocity_spec="default", *,
                         eps: float = 0.05, zero_width: float = 1e-12,
                         min_width: Optional[float] = 1e-10, growth: float = 1.2,
                         p_spec: Union[str, Callable] = "default",
                         absorbing_tol: float = 1e-12) -> PhononInstance:
    """Discretized phonon wave-number chain.

    The torus ``[-1/2, 1/2)`` is cut into a tiny zero cell (the absorbing
    state), ``n_cells - 2`` side cells refined geometrically towards k = 0,
    and a boundary cell centred at k = -1/2.  Reference weights are the cell
    widths.  ``min_width=None`` gives uniform side cells.

    Rates are ``|k|**gamma`` at cell centers.  The default transition density
    is proportional to ``eps + |k'|**gamma`` (independent of the departure
    cell); ``p_spec`` may instead be a callable ``(centers) -> matrix``.
    The default velocity is ``sign(k) (1 - |2k|)``; ``velocity_spec`` may be an
    array or a callable of the centers.
    """
    if not (0.0 < gamma < 1.0):
        raise ModelError(f"gamma must lie in (0, 1), got {gamma}")
    if n_cells < 4 or n_cells % 2:
        raise ModelError("phonon grid needs an even n_cells >= 4")
    if min_width is None:
        K = (n_cells - 2) // 2
        u = (0.5 - zero_width / 2.0) / (K + 0.5)
        side, bw = np.full(K, u), u
    else:
        side, bw = phonon_edges(n_cells, zero_width, min_width, growth)
    edges_pos = zero_width / 2.0 + np.concatenate([[0.0], np.cumsum(side)])
    mids_pos = 0.5 * (edges_pos[:-1] + edges_pos[1:])
    centers = np.concatenate([[-0.5], -mids_pos[::-1], [0.0], mids_pos])
    widths = np.concatenate([[bw], side[::-1], [zero_width], side])
    widths = widths / widths.sum()
    space = DiscretizedSpace(n_cells, centers, widths, "torus1d")

    absk = np.abs(centers)
    r = absk ** gamma
    zero = int(np.flatnonzero(centers == 0.0)[0])
    r[zero] = 0.0
    if p_spec == "default":
        row = eps + absk ** gamma
        row = row / np.dot(row, widths)
        p = np.tile(row, (n_cells, 1))
    elif callable(p_spec):
        p = np.asarray(p_spec(centers), dtype=float)
        p = p / (p @ widths)[:, None]
    else:
        raise ModelError(f"unknown p_spec {p_spec!r}")

    if isinstance(velocity_spec, str):
        if velocity_spec != "default":
            raise ModelError(f"unknown velocity_spec {velocity_spec!r}")
        v = np.sign(centers) * (1.0 - np.abs(2.0 * centers))
    elif callable(velocity_spec):
        v = np.asarray(velocity_spec(centers), dtype=float)
    else:
        v = np.asarray(velocity_spec, dtype=float)
    if v.shape != (n_cells,) or not np.all(np.isfinite(v)):
        raise ModelError("velocity must be a finite vector per cell")
    v.setflags(write=False)
    model = RateModel(space, r, p, absorbing_tol)
    return PhononInstance(gamma=gamma, velocity=v, model=model, eps=eps, zero_cell=zero)


# ---------------------------------------------------------------------------
# configuration files

def _builtin_r(spec: dict, centers: np.ndarray) -> np.ndarray:
    kind = spec.get("builtin")
    if kind == "constant":
        return np.full(centers.shape[0], float(spec.get("value", 1.0)))
    if kind == "power":
        return float(spec.get("scale", 1.0)) * np.abs(centers) ** float(spec["gamma"])
    raise ModelError(f"unknown rate builtin {kind!r}")


def _builtin_p(spec: dict, centers: np.ndarray, lam: np.ndarray) -> np.ndarray:
    kind = spec.get("builtin")
    n = centers.shape[0]
    if kind == "uniform":
        return np.ones((n, n))
    if kind == "power_target":
        row = float(spec.get("eps", 0.05)) + np.abs(centers) ** float(spec["gamma"])
        return np.tile(row / np.dot(row, lam), (n, 1))
    raise ModelError(f"unknown density builtin {kind!r}")


def model_from_dict(cfg: dict) -> RateModel:
    kind = cfg.get("kind")
    if kind == "two_cell":
        return two_cell_model()
    if kind == "three_cell":
        return three_cell_model()
    if kind == "phonon":
        return phonon_from_dict(cfg).model
    if kind is not None:
        raise ModelError(f"unknown model kind {kind!r}")

    n = int(cfg["n_cells"])
    geometry = cfg.get("geometry", "generic")
    lam_spec = cfg.get("lambda", "uniform")
    if "centers" in cfg:
        centers = np.asarray(cfg["centers"], dtype=float)
        lam = np.full(n, 1.0 / n) if lam_spec == "uniform" else np.asarray(lam_spec, dtype=float)
        space = DiscretizedSpace(n, centers, lam, geometry)
    else:
        space = DiscretizedSpace.uniform(n, geometry if geometry != "generic" else "interval")
        if geometry == "generic":
            space = DiscretizedSpace(n, space.centers, space.lambda_weights, "generic")
        if lam_spec != "uniform":
            space = DiscretizedSpace(n, space.centers, np.asarray(lam_spec, dtype=float), geometry)
    r_spec = cfg["r"]
    r = _builtin_r(r_spec, space.centers) if isinstance(r_spec, dict) else np.asarray(r_spec, float)
    p_spec = cfg["p"]
    if isinstance(p_spec, dict):
        p = _builtin_p(p_spec, space.centers, space.lambda_weights)
    else:
        p = np.asarray(p_spec, dtype=float)
    return RateModel(space, r, p, float(cfg.get("absorbing_tol", 1e-12)))


def phonon_from_dict(cfg: dict) -> PhononInstance:
    kw = {k: cfg[k] for k in ("eps", "zero_width", "min_width", "growth", "absorbing_tol")
          if k in cfg}
    return make_phonon_instance(int(cfg.get("n_cells", 512)), float(cfg.get("gamma", 0.5)), **kw)


def model_to_dict(model: RateModel) -> dict:
    """Explicit-array config; floats survive a JSON round trip bit for bit."""
    return {
        "schema_version": SCHEMA_VERSION,
        "n_cells": model.n_cells,
        "geometry": model.space.geometry_tag,
        "centers": model.space.centers.tolist(),
        "lambda": model.lam.tolist(),
        "r": model.r.tolist(),
        "p": model.p_density.tolist(),
        "absorbing_tol": model.absorbing_tol,
    }


def save_model(model: RateModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(source) -> RateModel:
    if isinstance(source, dict):
        return model_from_dict(source)
    return model_from_dict(json.loads(Path(source).read_text()))
