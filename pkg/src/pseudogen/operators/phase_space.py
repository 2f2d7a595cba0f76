"""Deterministic spatial transfer operator for 1-D periodic potentials.

The backward Kolmogorov generator of Langevin dynamics is discretized with
Fourier collocation in q (odd number of points, so no Nyquist mode) and a
Hermite function basis in p scaled to f_P. Writing a function of (q, p) as
Σ_n c_n(q) He_n(p/s)/√n!, s = √(m/β), the generator maps

    c ↦ (s/m) (J ⊗ D) c − (1/s) (K ⊗ diag V′) c − (γ/m) (diag n ⊗ I) c

with J the symmetric Hermite position matrix and K the p-derivative.
S^t u is the n = 0 block of exp(tL) applied to u in the n = 0 block,
because the spatial operator averages the initial momentum over f_P.

Used as a noise-free S^t where Monte Carlo error would hide the
quantities of interest.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import expm

from ..potentials import PotentialModel
from ..sde import SimConfig


def fourier_differentiation_matrix(n: int, period: float = 1.0) -> np.ndarray:
    """Periodic spectral differentiation on x_j = j·period/n, n odd."""
    if n % 2 == 0:
        raise ValueError("use an odd number of collocation points")
    k = np.arange(n)
    diff = k[:, None] - k[None, :]
    with np.errstate(divide="ignore"):
        D = 0.5 * (-1.0) ** diff / np.sin(np.pi * diff / n)
    D[k, k] = 0.0
    return D * (2.0 * np.pi / period)


def trig_interpolate(values: np.ndarray, offset: float, x: np.ndarray, period: float = 1.0) -> np.ndarray:
    """Trigonometric interpolant of samples at (j + offset)·period/N, evaluated at x.

    Even N splits the Nyquist coefficient symmetrically so the interpolant
    of real data is real.
    """
    values = np.asarray(values, float)
    N = len(values)
    c = np.fft.fft(values) / N
    k = np.fft.fftfreq(N, 1.0 / N)
    if N % 2 == 0:
        c[N // 2] *= 0.5
        c = np.append(c, c[N // 2])
        k = np.append(k, N // 2)
        k[N // 2] = -N // 2
    phase = np.exp(2j * np.pi * np.outer(np.asarray(x, float) / period - offset / N, k))
    return np.real(phase @ c)


def trig_interpolation_matrix(n_src: int, offset: float, x: np.ndarray, period: float = 1.0) -> np.ndarray:
    """Matrix I with I @ values == trig_interpolate(values, offset, x)."""
    return np.column_stack([trig_interpolate(e, offset, x, period) for e in np.eye(n_src)])


class PhaseSpacePropagator:
    """Spectral S^t for a 1-D periodic potential with scalar γ and m."""

    def __init__(self, model: PotentialModel, cfg: SimConfig, n_q: int = 33, n_hermite: int = 32):
        if model.dimension != 1 or not model.domain.periodic[0]:
            raise ValueError("phase-space propagator needs a 1-D periodic potential")
        if not cfg.scalar:
            raise ValueError("phase-space propagator needs scalar gamma and mass")
        self.model, self.cfg = model, cfg
        self.period = model.domain.lengths[0]
        self.lower = model.domain.lower[0]
        self.n_q, self.n_hermite = n_q, n_hermite
        self.nodes = self.lower + np.arange(n_q) * self.period / n_q
        m, g = float(cfg.mass), float(cfg.gamma)
        s = np.sqrt(m / cfg.beta)
        n = np.arange(n_hermite)
        J = np.diag(np.sqrt(n[1:]), -1) + np.diag(np.sqrt(n[1:]), 1)
        K = np.diag(np.sqrt(n[1:]), 1)
        D = fourier_differentiation_matrix(n_q, self.period)
        dV = model.gradient(self.nodes[:, None])[:, 0]
        self.generator = (s / m) * np.kron(J, D) - (1.0 / s) * np.kron(K, np.diag(dV)) \
            - (g / m) * np.kron(np.diag(n), np.eye(n_q))
        self._cache: dict[float, np.ndarray] = {}
        self._maps: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}

    def collocation_operator(self, t: float) -> np.ndarray:
        """n_q × n_q matrix of S^t on the collocation nodes."""
        t = float(t)
        if t not in self._cache:
            if t == 0.0:
                self._cache[t] = np.eye(self.n_q)
            else:
                self._cache[t] = expm(t * self.generator)[: self.n_q, : self.n_q]
        return self._cache[t]

    def collocation_sequence(self, dt: float, n: int) -> list[np.ndarray]:
        """Collocation operators at lags dt, 2dt, ..., n·dt from powers of exp(dt·L)."""
        step = expm(float(dt) * self.generator)
        out, cur = [], np.eye(len(step))
        for _ in range(n):
            cur = cur @ step
            out.append(cur[: self.n_q, : self.n_q].copy())
        return out

    def grid_matrix_from(self, block: np.ndarray, centers: np.ndarray) -> np.ndarray:
        """N × N cell-center matrix of a given collocation block."""
        x = np.asarray(centers, float).ravel()
        key = (len(x), float(x[0]), float(x[-1]))
        if key not in self._maps:
            offset = (x[0] - self.lower) / (self.period / len(x))
            self._maps[key] = (trig_interpolation_matrix(self.n_q, 0.0, x - self.lower, self.period),
                               trig_interpolation_matrix(len(x), offset, self.nodes - self.lower, self.period))
        to_cells, to_nodes = self._maps[key]
        return to_cells @ block @ to_nodes

    def apply(self, u_centers: np.ndarray, t: float, centers: np.ndarray) -> np.ndarray:
        """S^t u for u sampled on a uniform cell-centered grid, returned on that grid."""
        N = len(u_centers)
        x = np.asarray(centers, float).ravel()
        offset = (x[0] - self.lower) / (self.period / N)
        u_nodes = trig_interpolate(u_centers, offset, self.nodes - self.lower, self.period)
        v_nodes = self.collocation_operator(t) @ u_nodes
        return trig_interpolate(v_nodes, 0.0, x - self.lower, self.period)

    def grid_matrix(self, t: float, centers: np.ndarray) -> np.ndarray:
        """N × N matrix of u ↦ S^t u on cell centers (rank at most n_q)."""
        return self.grid_matrix_from(self.collocation_operator(t), centers)
