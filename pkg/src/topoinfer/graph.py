"""Weighted directed graphs, interaction matrices and their spectra."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.sparse.csgraph import connected_components

from .errors import DefectiveMatrix

ROW_SUM_TOL = 1e-12


def is_strongly_connected(adjacency) -> bool:
    a = np.asarray(adjacency)
    n_comp, _ = connected_components(a != 0, directed=True, connection="strong")
    return n_comp == 1


@dataclass(frozen=True)
class WeightedDigraph:
    """Adjacency ``A`` with ``a_ij != 0`` meaning agent i listens to agent j."""

    adjacency: np.ndarray
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        a = np.array(self.adjacency, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {a.shape}")
        if np.any(np.diag(a) != 0):
            raise ValueError("adjacency must have a zero diagonal")
        if np.any(a < 0):
            raise ValueError("adjacency entries must be nonnegative")
        if self.validate and a.shape[0] > 1 and not is_strongly_connected(a):
            raise ValueError("digraph is not strongly connected")
        a.setflags(write=False)
        object.__setattr__(self, "adjacency", a)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def degree(self) -> np.ndarray:
        return np.diag(self.adjacency.sum(axis=1))

    @property
    def laplacian(self) -> np.ndarray:
        return self.degree - self.adjacency

    @property
    def d_max(self) -> float:
        return float(self.adjacency.sum(axis=1).max())

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i])

    def to_json(self) -> dict:
        return {"n": self.n, "adjacency": self.adjacency.ravel().tolist()}

    @classmethod
    def from_json(cls, data: dict, validate: bool = True) -> "WeightedDigraph":
        n = int(data["n"])
        a = np.asarray(data["adjacency"], dtype=float)
        if a.size != n * n:
            raise ValueError(f"expected {n * n} adjacency entries, got {a.size}")
        return cls(a.reshape(n, n), validate=validate)

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load_json(cls, path, validate: bool = True) -> "WeightedDigraph":
        return cls.from_json(json.loads(Path(path).read_text()), validate=validate)

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(self.adjacency.tolist())


def random_connected_digraph(n: int, density: float = 0.3,
                             weight_range=(0.5, 1.5), seed=None) -> WeightedDigraph:
    """Random strongly connected weighted digraph.

    A random Hamiltonian cycle guarantees strong connectivity; every other
    ordered pair becomes an edge with probability ``density``.
    """
    if n < 2:
        raise ValueError(f"need n >= 2 agents, got {n}")
    if not 0 < density <= 1:
        raise ValueError(f"density must lie in (0, 1], got {density}")
    lo, hi = weight_range
    if not 0 < lo <= hi:
        raise ValueError(f"weight range must satisfy 0 < lo <= hi, got {weight_range}")
    rng = np.random.default_rng(seed)
    mask = rng.random((n, n)) < density
    order = rng.permutation(n)
    mask[order, np.roll(order, -1)] = True
    np.fill_diagonal(mask, False)
    weights = rng.uniform(lo, hi, size=(n, n))
    return WeightedDigraph(np.where(mask, weights, 0.0))


def complete_digraph(n: int, weight: float = 1.0) -> WeightedDigraph:
    a = np.full((n, n), float(weight))
    np.fill_diagonal(a, 0.0)
    return WeightedDigraph(a)


@dataclass(frozen=True)
class InteractionMatrix:
    p: np.ndarray
    epsilon: float

    @property
    def n(self) -> int:
        return self.p.shape[0]


def interaction_matrix(g: WeightedDigraph, epsilon: float) -> InteractionMatrix:
    """``P = I - epsilon * L``; requires ``0 < epsilon < 1/d_max``."""
    d_max = g.d_max
    if epsilon <= 0 or (d_max > 0 and epsilon >= 1.0 / d_max):
        raise ValueError(f"epsilon={epsilon} outside (0, 1/d_max) with d_max={d_max}")
    p = np.eye(g.n) - epsilon * g.laplacian
    p.setflags(write=False)
    return InteractionMatrix(p, float(epsilon))


def default_epsilon(g: WeightedDigraph) -> float:
    return 0.5 / g.d_max


@dataclass(frozen=True)
class SpectralData:
    """Diagonalization ``L = V diag(lambda) W^T`` with ``W^T V = I``.

    Columns of ``right`` are the v_i, columns of ``left`` the w_i. Eigenvalues
    are sorted by modulus so index 0 is the zero eigenvalue with v_1 = 1.
    """

    eigenvalues: np.ndarray
    right: np.ndarray
    left: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.right * self.eigenvalues) @ self.left.T

    def projector(self, i: int) -> np.ndarray:
        return np.outer(self.right[:, i], self.left[:, i])


def spectral_decompose(laplacian, tol: float = 1e-8) -> SpectralData:
    lap = np.asarray(laplacian, dtype=float)
    n = lap.shape[0]
    vals, vecs = linalg.eig(lap)
    order = np.lexsort((vals.imag, vals.real, np.round(np.abs(vals), 12)))
    vals, vecs = vals[order], vecs[:, order]

    scale = max(1.0, np.abs(vals).max())
    gaps = np.abs(vals[:, None] - vals[None, :])
    np.fill_diagonal(gaps, np.inf)
    if gaps.min() < tol * scale or np.linalg.cond(vecs) > 1e12:
        raise DefectiveMatrix("eigenvalues coincide; eigenvector basis is not usable")
    if np.sum(np.abs(vals) < tol * scale) != 1:
        raise ValueError("Laplacian must have exactly one zero eigenvalue")

    # v_1 is the all-ones direction; rescale it exactly to 1
    v1 = vecs[:, 0]
    vecs[:, 0] = v1 / v1[np.argmax(np.abs(v1))]
    vals[0] = 0.0
    left = np.linalg.inv(vecs).T
    return SpectralData(vals, vecs, left)
