"""Cell-level probability measures and flows.

A :class:`Measure` is a probability vector over the cells of a
:class:`~ldflow.model.DiscretizedSpace`; a :class:`Flow` is a nonnegative
matrix of jump intensities (mass per unit time) over ordered cell pairs.
Both store *masses*, not densities against the reference measure.
"""
from __future__ import annotations

import numpy as np

MEASURE_TOL = 1e-12


class Measure:
    """Nonnegative cell weights summing to one."""

    __slots__ = ("weights",)

    def __init__(self, weights, *, tol: float = MEASURE_TOL, check: bool = True):
        w = np.array(weights, dtype=float).ravel()
        if check:
            if w.size == 0:
                raise ValueError("empty measure")
            if not np.all(np.isfinite(w)) or np.any(w < 0):
                raise ValueError("measure weights must be finite and nonnegative")
            if abs(w.sum() - 1.0) > tol:
                raise ValueError(f"measure weights sum to {w.sum()!r}, expected 1")
        w.setflags(write=False)
        self.weights = w

    @property
    def n_cells(self) -> int:
        return self.weights.size

    def __call__(self, f) -> float:
        """Integrate a cell function."""
        return float(np.dot(self.weights, np.asarray(f, dtype=float)))

    def __len__(self):
        return self.weights.size

    def __eq__(self, other):
        return isinstance(other, Measure) and np.array_equal(self.weights, other.weights)

    def __repr__(self):
        return f"Measure(n_cells={self.n_cells})"

    @classmethod
    def point_mass(cls, n_cells: int, cell: int) -> "Measure":
        w = np.zeros(n_cells)
        w[cell] = 1.0
        return cls(w)


class Flow:
    """Nonnegative jump-intensity matrix over cell pairs."""

    __slots__ = ("mass",)

    def __init__(self, mass, *, check: bool = True):
        m = np.array(mass, dtype=float)
        if check:
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError(f"flow must be a square matrix, got shape {m.shape}")
            if not np.all(np.isfinite(m)) or np.any(m < 0):
                raise ValueError("flow entries must be finite and nonnegative")
        m.setflags(write=False)
        self.mass = m

    @property
    def n_cells(self) -> int:
        return self.mass.shape[0]

    @property
    def out_marginal(self) -> np.ndarray:
        """Q(x, E): total intensity leaving each cell."""
        return self.mass.sum(axis=1)

    @property
    def in_marginal(self) -> np.ndarray:
        """Q(E, y): total intensity entering each cell."""
        return self.mass.sum(axis=0)

    @property
    def total(self) -> float:
        return float(self.mass.sum())

    def __call__(self, F) -> float:
        return float(np.sum(self.mass * np.asarray(F, dtype=float)))

    def marginal_gap(self) -> float:
        """Total-variation distance between the two marginals."""
        return tv_distance(self.out_marginal, self.in_marginal)

    def __eq__(self, other):
        return isinstance(other, Flow) and np.array_equal(self.mass, other.mass)

    def __repr__(self):
        return f"Flow(n_cells={self.n_cells}, total={self.total:.6g})"

    @classmethod
    def zeros(cls, n_cells: int) -> "Flow":
        return cls(np.zeros((n_cells, n_cells)))


def as_weights(mu) -> np.ndarray:
    return mu.weights if isinstance(mu, Measure) else np.asarray(mu, dtype=float)


def as_mass(q) -> np.ndarray:
    return q.mass if isinstance(q, Flow) else np.asarray(q, dtype=float)


def tv_distance(a, b) -> float:
    """sup_A |a(A) - b(A)| for two measures of equal total mass.

    Computed as half the l1 distance, which is the supremum over sets when
    the masses agree; for unequal masses it is still a norm on the difference.
    """
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return 0.5 * float(np.abs(d).sum())
