"""Finite-difference estimates of the pseudo-generators G₁ and G₂.

Indicator (Ulam) bases are unusable here: for lags shorter than the cell
crossing time a fraction O(t/h) of each cell leaks ballistically, so
(S^t − id)/t and 2(S^t − id)/t² blow up as t → 0. The estimator therefore
works in a basis of smooth functions φ_1..φ_K and measures the Galerkin
matrix

    D_ab(t) = ⟨φ_a, (S^t − id) φ_b⟩_{f_Q}

by stratified Monte Carlo over the Ulam cells. Each initial point is
integrated twice, with (p, ξ) and (−p, −ξ); the pair average cancels the
O(t) ballistic term exactly in expectation and removes most of its
variance. Reversibility of S^t is used to symmetrize the estimator.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from ..potentials import PotentialModel
from ..rng import BlockNoise, stream
from ..sde import LangevinIntegrator, SimConfig, sample_momenta
from .grid import UlamGrid
from .matrix import OperatorMatrix
from .ulam import BLOCK_CELLS, EMPTY_WEIGHT, cell_energy_floor, resolve_seed, sample_in_cell


class NoiseDominatedWarning(UserWarning):
    """Monte Carlo standard error exceeds the estimated signal."""


@dataclass(frozen=True, eq=False)
class Basis:
    """Smooth real test functions; ``fn(q)`` maps (n, d) points to (n, K)."""

    name: str
    fn: object
    size: int

    def __call__(self, q: np.ndarray) -> np.ndarray:
        return self.fn(np.asarray(q, float))


def eigen_basis(grid: UlamGrid, g2: OperatorMatrix, n_modes: int = 4) -> Basis:
    """Leading nonconstant eigenvectors of a G₂ matrix, cubic-spline interpolated (1-D)."""
    from ..spectral import compute_spectrum

    if grid.dimension != 1:
        raise ValueError("eigen basis is implemented for 1-D grids; use fourier_basis")
    spec = compute_spectrum(g2, n_modes + 1)
    V = spec.eigenvectors[:, 1:].real
    x = grid.axis_centers[0]
    lo, hi = grid.edges[0][0], grid.edges[0][-1]
    if grid.periodic[0]:
        L = hi - lo
        xs = np.concatenate([x, [x[0] + L]])
        spline = CubicSpline(xs, np.vstack([V, V[:1]]), bc_type="periodic", axis=0)

        def fn(q):
            return spline(lo + np.mod(q[..., 0] - lo, L))
    else:
        spline = CubicSpline(x, V, bc_type="clamped", axis=0)

        def fn(q):
            return spline(np.clip(q[..., 0], lo, hi))
    return Basis(f"eigen{n_modes}", fn, n_modes)


def fourier_basis(grid: UlamGrid, n_modes: int = 4) -> Basis:
    """Lowest-frequency nonconstant Fourier modes (cosines on reflecting axes)."""
    d = grid.dimension
    lo = np.array([e[0] for e in grid.edges])
    L = np.array([e[-1] - e[0] for e in grid.edges])
    per_axis = []
    for a in range(d):
        fs = [(0, "c")]
        for k in range(1, n_modes + 1):
            fs += [(k, "c"), (k, "s")] if grid.periodic[a] else [(k, "c")]
        per_axis.append(fs)
    combos = [()]
    for fs in per_axis:
        combos = [c + (f,) for c in combos for f in fs]
    combos = [c for c in combos if any(k for k, _ in c)]
    combos.sort(key=lambda c: (sum(k for k, _ in c), c))
    combos = combos[:n_modes]

    def one(x, a, k, kind):
        if k == 0:
            return np.ones_like(x)
        if grid.periodic[a]:
            arg = 2 * np.pi * k * (x - lo[a]) / L[a]
            return np.sqrt(2) * (np.cos(arg) if kind == "c" else np.sin(arg))
        return np.sqrt(2) * np.cos(np.pi * k * (x - lo[a]) / L[a])

    def fn(q):
        cols = []
        for c in combos:
            v = np.ones(q.shape[:-1])
            for a, (k, kind) in enumerate(c):
                v = v * one(q[..., a], a, k, kind)
            cols.append(v)
        return np.stack(cols, axis=-1)

    return Basis(f"fourier{n_modes}", fn, len(combos))


def basis_gram(grid: UlamGrid, model: PotentialModel, basis: Basis, order: int = 8) -> np.ndarray:
    """⟨φ_a, φ_b⟩_{f_Q} by per-cell Gauss–Legendre quadrature."""
    x, wt = np.polynomial.legendre.leggauss(order)
    axes_nodes, axes_w = [], []
    for e in grid.edges:
        half = 0.5 * np.diff(e)
        mid = 0.5 * (e[1:] + e[:-1])
        axes_nodes.append((mid[:, None] + half[:, None] * x).ravel())
        axes_w.append((half[:, None] * wt).ravel())
    mesh = np.meshgrid(*axes_nodes, indexing="ij")
    q = np.stack([m.ravel() for m in mesh], axis=-1)
    wq = np.ones(len(q))
    for a, wa in enumerate(np.meshgrid(*axes_w, indexing="ij")):
        wq = wq * wa.ravel()
    logf = -grid.beta * model.energy(q)
    f = np.exp(logf - logf.max()) * wq
    f /= f.sum()
    B = basis(q)
    return (B * f[:, None]).T @ B


def galerkin_projection(A: np.ndarray, grid: UlamGrid, basis: Basis) -> np.ndarray:
    """K × K matrix Gram⁻¹ Bᵀ W A B of an N × N cell operator in the basis."""
    B = basis(grid.centers)
    W = grid.weights[:, None]
    gram = B.T @ (W * B)
    return np.linalg.solve(gram, B.T @ (W * (A @ B)))


class _Antithetic:
    def __init__(self, noise: BlockNoise):
        self.noise = noise

    def normal(self):
        xi = self.noise.normal()
        return np.concatenate([xi, -xi])


def galerkin_increment(grid: UlamGrid, model: PotentialModel, cfg: SimConfig, basis: Basis, t: float,
                       n_per_cell: int, seed: int, substeps: int = 10, threads: int = 1, key: str = ""):
    """Stratified antithetic estimate of D(t) = ⟨φ_a, (S^t − id)φ_b⟩ and its standard error."""
    K, d = basis.size, grid.dimension
    n_pairs = max(1, n_per_cell // 2)
    dt = t / substeps
    step_cfg = cfg.with_(dt=dt)
    integ = LangevinIntegrator(step_cfg, model)
    floors = cell_energy_floor(grid, model)
    active = np.flatnonzero(grid.weights >= EMPTY_WEIGHT)
    blocks = [active[s:s + BLOCK_CELLS] for s in range(0, len(active), BLOCK_CELLS)]
    means = np.zeros((grid.n_cells, K, K))
    variances = np.zeros((grid.n_cells, K, K))
    purpose = f"pseudo:{key}:{np.asarray(cfg.gamma).tolist()!r}:{float(t)!r}"

    def run_block(cells):
        qs, ps = [], []
        for c in cells:
            g = stream(seed, purpose + ":init", int(c))
            qs.append(sample_in_cell(grid, model, int(c), n_pairs, g, floors[c]))
            ps.append(sample_momenta(n_pairs, cfg, d, g))
        q0, p0 = np.concatenate(qs), np.concatenate(ps)
        noise = _Antithetic(BlockNoise.for_cells(seed, purpose + ":noise", cells, [n_pairs] * len(cells), d))
        q, p = np.concatenate([q0, q0]), np.concatenate([p0, -p0])
        for _ in range(substeps):
            q, p = integ.step(q, p, noise)
        m = len(q0)
        phi0 = basis(q0)
        psi = 0.5 * (basis(q[:m]) + basis(q[m:]))
        Y = 0.5 * (psi[:, :, None] * phi0[:, None, :] + phi0[:, :, None] * psi[:, None, :]) \
            - phi0[:, :, None] * phi0[:, None, :]
        Y = Y.reshape(len(cells), n_pairs, K, K)
        means[cells] = Y.mean(axis=1)
        variances[cells] = Y.var(axis=1, ddof=1) if n_pairs > 1 else 0.0

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_block, blocks))
    else:
        for b in blocks:
            run_block(b)
    w = grid.weights
    D = np.tensordot(w, means, axes=1)
    se = np.sqrt(np.tensordot(w * w, variances, axes=1) / n_pairs)
    return D, se


def extrapolation_weights(t_values) -> np.ndarray:
    """Weights λ_i with Σ λ_i f(t_i) = p(0) for the interpolating polynomial p."""
    t = np.asarray(t_values, float)
    lam = np.ones(len(t))
    for i in range(len(t)):
        for j in range(len(t)):
            if i != j:
                lam[i] *= t[j] / (t[j] - t[i])
    return lam


def pseudo_generator_fd(n: int, grid: UlamGrid, cfg: SimConfig, model: PotentialModel, t_values,
                        rng=None, *, basis: Basis | None = None, n_per_cell: int = 2000,
                        substeps: int = 10, threads: int = 1) -> OperatorMatrix:
    """Finite-difference estimate of the n-th pseudo-generator in a smooth basis.

    n = 1 uses (S^t − id)/t, n = 2 uses 2(S^t − id)/t² (valid since G₁ = 0).
    With several ``t_values`` the estimates are extrapolated to t = 0 by
    the interpolating polynomial in t (Richardson); standard errors are
    propagated through the linear weights. The result is a K × K matrix
    (K = basis size) with ``meta['stderr']`` and the per-lag estimates.
    """
    if n not in (1, 2):
        raise ValueError("only the first two pseudo-generators are supported")
    t_values = [float(t) for t in t_values]
    if not t_values or min(t_values) <= 0:
        raise ValueError("t_values must be positive")
    if len(set(t_values)) != len(t_values):
        raise ValueError("t_values must be distinct")
    if basis is None:
        from .generator import build_g2_matrix
        basis = eigen_basis(grid, build_g2_matrix(grid, cfg, model)) if grid.dimension == 1 else fourier_basis(grid)
    seed = resolve_seed(cfg, rng)
    gram = basis_gram(grid, model, basis)
    gi = np.linalg.inv(gram)
    ests, ses = [], []
    for t in t_values:
        D, se = galerkin_increment(grid, model, cfg, basis, t, n_per_cell, seed, substeps, threads)
        scale = 1.0 / t if n == 1 else 2.0 / t**2
        ests.append(scale * gi @ D)
        ses.append(scale * np.sqrt((gi**2) @ se**2))
    lam = extrapolation_weights(t_values) if len(t_values) > 1 else np.ones(1)
    G = sum(l * e for l, e in zip(lam, ests))
    SE = np.sqrt(sum(l**2 * s**2 for l, s in zip(lam, ses)))
    noisy = bool(np.linalg.norm(SE) > np.linalg.norm(G))
    if noisy:
        warnings.warn(f"G{n} estimate is noise dominated: |SE|_F={np.linalg.norm(SE):.3g} "
                      f"> |G|_F={np.linalg.norm(G):.3g}", NoiseDominatedWarning, stacklevel=2)
    meta = {"order": n, "basis": basis.name, "t_values": t_values, "weights": lam.tolist(),
            "stderr": SE, "per_lag": ests, "per_lag_stderr": ses, "gram": gram,
            "noise_dominated": noisy, "gamma": cfg.gamma, "substeps": substeps, "seed": seed}
    return OperatorMatrix(G, 0.0, "pseudo_generator", np.ones(basis.size), n_per_cell, meta)
