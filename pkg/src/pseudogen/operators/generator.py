"""Finite-volume Smoluchowski generator G₂ and the reconstructions R^t, E^t."""
from __future__ import annotations

import numpy as np
from scipy.linalg import expm

from ..potentials import PotentialModel
from ..sde import SimConfig
from .grid import UlamGrid
from .matrix import OperatorMatrix

NEGATIVE_CLIP = 1e-12


def build_g2_matrix(grid: UlamGrid, cfg: SimConfig, model: PotentialModel | None = None) -> OperatorMatrix:
    """Square-root-approximation finite volumes for G₂ = β⁻¹M⁻¹:∇² − M⁻¹∇V·∇.

    Off-diagonal G_ij = √(w_j/w_i) / (β m_a h_a²) for nearest neighbours
    along axis a; the diagonal makes rows sum to zero. diag(w)·G is
    symmetric by construction, so the spectrum is real and ≤ 0. The
    potential enters only through the cell weights of ``grid``; ``model``
    is accepted for signature symmetry and checked for consistency.
    """
    if grid.dimension > 2:
        raise ValueError("G2 assembly supports 1-D and 2-D grids")
    if model is not None and model.dimension != grid.dimension:
        raise ValueError("model and grid dimensions differ")
    mass = np.asarray(cfg.mass, float)
    if mass.ndim == 0:
        m = np.full(grid.dimension, float(mass))
    elif np.count_nonzero(mass - np.diag(np.diag(mass))) == 0:
        m = np.diag(mass).copy()
    else:
        raise ValueError("finite-volume G2 needs a diagonal mass matrix")
    if not np.isclose(grid.beta, cfg.beta, rtol=1e-14):
        raise ValueError(f"grid weights were built for beta={grid.beta}, config has beta={cfg.beta}")
    N = grid.n_cells
    G = np.zeros((N, N))
    lw = grid.log_weights
    h = grid.widths
    for a, i, j in grid.neighbours():
        np.add.at(G, (i, j), np.exp(0.5 * (lw[j] - lw[i])) / (cfg.beta * m[a] * h[a] ** 2))
    G[np.diag_indices(N)] = 0.0
    G[np.diag_indices(N)] = -G.sum(axis=1)
    return OperatorMatrix(G, 0.0, "generator_g2", grid.weights, None, {"beta": cfg.beta, "mass": m.tolist()})


def _check_generator(g2: OperatorMatrix):
    if g2.kind not in ("generator_g2", "generator_g2_ess"):
        raise ValueError(f"expected a G2 generator, got kind {g2.kind!r}")


def taylor_operator(g2: OperatorMatrix, t: float) -> OperatorMatrix:
    """R^t = id + (t²/2) G₂."""
    _check_generator(g2)
    R = np.eye(g2.size) + 0.5 * t * t * g2.matrix
    return OperatorMatrix(R, float(t), "taylor", g2.weights, None, {"source": g2.kind})


def _expm_stochastic(A: np.ndarray) -> np.ndarray:
    P = expm(A)
    worst = P.min()
    if worst < -NEGATIVE_CLIP:
        raise ArithmeticError(f"matrix exponential has entry {worst:.3e} below -{NEGATIVE_CLIP}")
    P = np.maximum(P, 0.0)
    return P / P.sum(axis=1, keepdims=True)


def exponential_operator(g2: OperatorMatrix, t: float) -> OperatorMatrix:
    """E^t = exp((t²/2) G₂), by scaling and squaring."""
    _check_generator(g2)
    E = _expm_stochastic(0.5 * t * t * g2.matrix)
    return OperatorMatrix(E, float(t), "exponential", g2.weights, None, {"source": g2.kind})


def smoluchowski_propagator(g2: OperatorMatrix, s: float) -> OperatorMatrix:
    """exp(s G₂): the Smoluchowski propagator at lag s from the generator."""
    _check_generator(g2)
    if s < 0:
        raise ValueError("lag must be nonnegative")
    P = _expm_stochastic(s * g2.matrix)
    return OperatorMatrix(P, float(s), "smoluchowski_propagator", g2.weights, None, {"source": g2.kind})


def _mask(cells, n: int) -> np.ndarray:
    cells = np.asarray(cells)
    if cells.dtype == bool:
        if cells.shape != (n,):
            raise ValueError("boolean cell mask has wrong length")
        return cells
    m = np.zeros(n, dtype=bool)
    m[cells.astype(np.int64)] = True
    return m


def transition_probability(P: OperatorMatrix, grid: UlamGrid | None, A, B) -> float:
    """Probability to be in B after one lag when started from f_Q restricted to A.

    Computed as ⟨χ_A, P χ_B⟩_w / ⟨χ_A, χ_A⟩_w; for reversible P this equals
    ⟨P χ_A, χ_B⟩_w / ⟨χ_A, χ_A⟩_w.
    """
    w = P.weights if grid is None else grid.weights
    a, b = _mask(A, P.size), _mask(B, P.size)
    wa = w[a].sum()
    if wa <= 0:
        raise ValueError("set A has zero weight")
    return float(w[a] @ P.matrix[np.ix_(a, b)].sum(axis=1) / wa)
