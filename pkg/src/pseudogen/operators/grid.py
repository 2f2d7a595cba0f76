"""Ulam cell partition of a box domain with Boltzmann cell weights."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ..potentials import PotentialModel, cell_log_masses


@dataclass(frozen=True, eq=False)
class UlamGrid:
    """Tensor-product cell grid. Cells are numbered in C order.

    ``log_weights[i] = log ∫_{A_i} f_Q`` so that ``weights`` sums to one.
    """

    edges: tuple[np.ndarray, ...]
    periodic: tuple[bool, ...]
    beta: float
    log_weights: np.ndarray
    model_name: str = ""

    @classmethod
    def build(cls, model: PotentialModel, n_cells, beta: float, order: int = 8) -> "UlamGrid":
        d = model.dimension
        if d > 2:
            raise ValueError("Ulam grids are supported for d <= 2")
        n_cells = (int(n_cells),) * d if np.ndim(n_cells) == 0 else tuple(int(n) for n in n_cells)
        if len(n_cells) != d or min(n_cells) < 2:
            raise ValueError(f"need {d} cell counts >= 2, got {n_cells}")
        dom = model.domain
        edges = tuple(np.linspace(lo, hi, n + 1) for lo, hi, n in zip(dom.lower, dom.upper, n_cells))
        lm = cell_log_masses(model, beta, list(edges), order).ravel()
        lw = lm - logsumexp(lm)
        lw.setflags(write=False)
        for e in edges:
            e.setflags(write=False)
        return cls(edges, tuple(dom.periodic), float(beta), lw, model.name)

    @property
    def dimension(self) -> int:
        return len(self.edges)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(e) - 1 for e in self.edges)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def widths(self) -> np.ndarray:
        return np.array([e[1] - e[0] for e in self.edges])

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def axis_centers(self) -> tuple[np.ndarray, ...]:
        return tuple(0.5 * (e[1:] + e[:-1]) for e in self.edges)

    @property
    def centers(self) -> np.ndarray:
        """Cell centers, shape (N, d)."""
        mesh = np.meshgrid(*self.axis_centers, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def cell_bounds(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        idx = np.unravel_index(int(i), self.shape)
        lo = np.array([self.edges[a][k] for a, k in enumerate(idx)])
        hi = np.array([self.edges[a][k + 1] for a, k in enumerate(idx)])
        return lo, hi

    def locate(self, q: np.ndarray) -> np.ndarray:
        """Flat cell index of each point; points are assumed inside the box."""
        q = np.asarray(q, float)
        idx = []
        for a, e in enumerate(self.edges):
            n = len(e) - 1
            k = np.floor((q[..., a] - e[0]) / (e[-1] - e[0]) * n).astype(np.int64)
            idx.append(np.clip(k, 0, n - 1))
        return np.ravel_multi_index(tuple(idx), self.shape)

    def neighbours(self):
        """Yield ``(axis, i, j)`` for every nearest-neighbour pair i→j."""
        shape = self.shape
        idx = np.arange(self.n_cells).reshape(shape)
        for a in range(self.dimension):
            for shift in (1, -1):
                j = np.roll(idx, -shift, axis=a)
                i = idx
                if not self.periodic[a]:
                    sl = [slice(None)] * self.dimension
                    sl[a] = slice(0, shape[a] - 1) if shift == 1 else slice(1, shape[a])
                    i, j = i[tuple(sl)], j[tuple(sl)]
                yield a, i.ravel(), j.ravel()

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        """⟨u, v⟩_w = Σ_i w_i u_i v_i."""
        return float(np.sum(self.weights * np.conj(u) * v).real)

    def norm(self, u: np.ndarray) -> float:
        return float(np.sqrt(np.sum(self.weights * np.abs(u) ** 2)))
