"""Projection of the Smoluchowski dynamics onto a scalar reaction coordinate ξ.

Coefficients of the projected generator β⁻¹a(z)∂²_z + b(z)∂_z are
conditional averages over level sets of ξ under f_Q:

    a(z) = E[|∇ξ|² | ξ = z],    b(z) = E[β⁻¹Δξ − ∇ξ·∇V | ξ = z].

They are estimated by binning equilibrium samples by ξ(q), which realizes
the conditional measure in the small-bin limit. Standard errors treat each
Metropolis chain as one cluster, so within-chain autocorrelation is
accounted for.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .operators.matrix import OperatorMatrix
from .potentials import PotentialModel
from .sde import SimConfig, metropolis

MIN_GRAD = 1e-8
MIN_SIGMA = 1e-8
LOW_COUNT = 20
MEDIAN_TARGET = 200
N_CHAINS = 1000


class SparseBinWarning(UserWarning):
    """Bins hold too few samples for a reliable conditional average."""


@dataclass(frozen=True, eq=False)
class ReactionCoordinate:
    """Scalar ξ on configuration space with range [z_min, z_max]."""

    name: str
    xi: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    z_min: float
    z_max: float
    n_bins: int = 64
    periodic: bool = False
    laplacian_fn: Callable[[np.ndarray], np.ndarray] | None = None

    def laplacian(self, q: np.ndarray) -> np.ndarray:
        if self.laplacian_fn is not None:
            return self.laplacian_fn(q)
        h = 1e-4
        out = np.zeros(q.shape[:-1])
        for k in range(q.shape[-1]):
            e = np.zeros(q.shape[-1])
            e[k] = h
            out += (self.xi(q + e) - 2 * self.xi(q) + self.xi(q - e)) / (h * h)
        return out


def axis_coordinate(axis: int = 0, scale: float = 1.0, lower: float = 0.0, upper: float = 1.0,
                    periodic: bool = True, n_bins: int = 64) -> ReactionCoordinate:
    """ξ(q) = scale·q_axis over the image of [lower, upper]."""
    s = float(scale)

    def grad(q):
        g = np.zeros_like(q, dtype=float)
        g[..., axis] = s
        return g

    return ReactionCoordinate(
        f"axis{axis}", lambda q: s * q[..., axis], grad, s * lower, s * upper, n_bins, periodic,
        lambda q: np.zeros(q.shape[:-1]),
    )


@dataclass(frozen=True, eq=False)
class ProjectedCoefficients:
    """Binned coefficients on z-bin centers; F is mean-centered over active bins."""

    edges: np.ndarray
    a: np.ndarray
    b: np.ndarray
    F: np.ndarray
    counts: np.ndarray
    stderr_a: np.ndarray
    stderr_b: np.ndarray
    stderr_F: np.ndarray
    beta: float
    periodic: bool
    min_grad_norm: float = np.nan
    meta: dict = field(default_factory=dict)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def active(self) -> np.ndarray:
        return self.counts > 0

    @property
    def empty_bins(self) -> np.ndarray:
        return np.flatnonzero(self.counts == 0)

    @property
    def masses(self) -> np.ndarray:
        """ν per bin, ∝ e^{−βF}·width, normalized over active bins."""
        nu = np.where(self.active, np.exp(-self.beta * (self.F - np.nanmin(self.F))) * self.widths, 0.0)
        return nu / nu.sum()


def _cluster_mean(values: np.ndarray, bins: np.ndarray, clusters: np.ndarray, n_bins: int, n_clusters: int):
    """Per-bin ratio mean and cluster-robust standard error."""
    S = np.zeros((n_clusters, n_bins))
    C = np.zeros((n_clusters, n_bins))
    np.add.at(S, (clusters, bins), values)
    np.add.at(C, (clusters, bins), 1.0)
    tot_n = C.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = S.sum(axis=0) / tot_n
        resid = S - mean * C
        used = (C > 0).sum(axis=0)
        corr = used / np.maximum(used - 1, 1)
        se = np.sqrt(corr * np.sum(resid * resid, axis=0)) / tot_n
    se = np.where(used > 1, se, np.nan)
    return mean, se, tot_n


def coefficients_from_samples(q: np.ndarray, clusters: np.ndarray, xi: ReactionCoordinate,
                              model: PotentialModel, beta: float, n_bins: int | None = None) -> ProjectedCoefficients:
    """Bin samples q ~ f_Q by ξ(q) and average a, b per bin."""
    q = np.asarray(q, float)
    clusters = np.asarray(clusters, np.int64)
    z = xi.xi(q)
    g = xi.grad(q)
    gn2 = np.sum(g * g, axis=-1)
    min_grad = float(np.sqrt(gn2.min()))
    if min_grad < MIN_GRAD:
        raise ValueError(f"|grad xi| = {min_grad:.3g} < {MIN_GRAD} on a sample: coordinate is degenerate")
    bval = xi.laplacian(q) / beta - np.sum(g * model.gradient(q), axis=-1)
    nb = xi.n_bins if n_bins is None else int(n_bins)
    L = xi.z_max - xi.z_min
    if xi.periodic:
        z = xi.z_min + np.mod(z - xi.z_min, L)
    inside = (z >= xi.z_min) & (z <= xi.z_max)
    z, gn2, bval, cl = z[inside], gn2[inside], bval[inside], clusters[inside]
    n_clusters = int(cl.max()) + 1 if len(cl) else 1
    while True:
        edges = np.linspace(xi.z_min, xi.z_max, nb + 1)
        bins = np.clip(((z - xi.z_min) / L * nb).astype(np.int64), 0, nb - 1)
        counts = np.bincount(bins, minlength=nb)
        if np.median(counts) >= MEDIAN_TARGET or nb <= 8 or n_bins is not None:
            break
        nb //= 2
    a, se_a, _ = _cluster_mean(gn2, bins, cl, nb, n_clusters)
    b, se_b, _ = _cluster_mean(bval, bins, cl, nb, n_clusters)
    active = counts > 0
    if not active.all():
        warnings.warn(f"{int((~active).sum())} empty z-bins flagged (no coefficients)", SparseBinWarning, stacklevel=3)
    low = active & (counts < LOW_COUNT)
    if low.any():
        warnings.warn(f"{int(low.sum())} z-bins hold fewer than {LOW_COUNT} samples; widen the bins",
                      SparseBinWarning, stacklevel=3)
    total = counts.sum()
    width = np.diff(edges)
    with np.errstate(divide="ignore", invalid="ignore"):
        F = np.where(active, -np.log(counts / (total * width)) / beta, np.nan)
        se_F = np.where(active, 1.0 / (beta * np.sqrt(counts)), np.nan)
    F = F - np.nanmean(F)
    return ProjectedCoefficients(edges, a, b, F, counts, se_a, se_b, se_F, float(beta), xi.periodic, min_grad,
                                 {"coordinate": xi.name, "n_samples": int(total), "n_clusters": n_clusters})


def estimate_coefficients(xi: ReactionCoordinate, cfg: SimConfig, model: PotentialModel, n_samples: int,
                          rng=None, n_bins: int | None = None) -> ProjectedCoefficients:
    """Metropolis samples from f_Q binned by ξ; see :func:`coefficients_from_samples`.

    ``n_bins=None`` starts at ``xi.n_bins`` and halves until the median bin
    holds at least 200 samples.
    """
    if n_samples < 10_000:
        raise ValueError("need at least 10^4 samples")
    seed = cfg.master_seed if rng is None else int(rng.integers(2**63))
    q, acc, _ = metropolis(n_samples, model, cfg.beta, seed, n_chains=N_CHAINS)
    n_chains = max(1, min(N_CHAINS, n_samples))
    per_chain = -(-n_samples // n_chains)
    chain = np.arange(len(q)) // per_chain
    out = coefficients_from_samples(q, chain, xi, model, cfg.beta, n_bins)
    out.meta.update({"acceptance_rate": acc, "seed": seed})
    return out


def build_g2ess_matrix(coeffs: ProjectedCoefficients, beta: float | None = None) -> OperatorMatrix:
    """Finite volumes for β⁻¹a∂²_z + b∂_z, self-adjoint in the ν-weighted product.

    Between adjacent active bins G_ij = ā/(β h_i h̄) √(ν_j h_i / (ν_i h_j)),
    with ā and h̄ the interface averages of a and the width, so that
    ν_i G_ij = ν_j G_ji. The drift enters through ν, consistent with
    b = −aF′ + β⁻¹a′. Empty bins are dropped (reflecting there). The
    matrix acts on active bins only; ``meta['bins']`` maps rows back to
    bin indices.
    """
    beta = coeffs.beta if beta is None else float(beta)
    act = np.flatnonzero(coeffs.active)
    a = coeffs.a[act]
    if np.any(~(a > 0)):
        raise ValueError(f"nonpositive a(z) in active bins {act[~(a > 0)].tolist()}")
    nu = coeffs.masses[act]
    h = coeffs.widths[act]
    n = len(act)
    nb = len(coeffs.counts)
    G = np.zeros((n, n))
    pairs = [(k, k + 1) for k in range(n - 1) if act[k + 1] == act[k] + 1]
    if coeffs.periodic and n > 2 and act[0] == 0 and act[-1] == nb - 1:
        pairs.append((n - 1, 0))
    for i, j in pairs:
        hh = 0.5 * (h[i] + h[j])
        abar = 0.5 * (a[i] + a[j])
        G[i, j] = abar / (beta * h[i] * hh) * np.sqrt(nu[j] / nu[i] * h[i] / h[j])
        G[j, i] = abar / (beta * h[j] * hh) * np.sqrt(nu[i] / nu[j] * h[j] / h[i])
    G[np.diag_indices(n)] = -G.sum(axis=1)
    return OperatorMatrix(G, 0.0, "generator_g2_ess", nu, None, {"bins": act.tolist(), "beta": beta})


@dataclass(frozen=True, eq=False)
class VolatilityTransform:
    """y = φ(z) = ∫₀^z σ⁻¹, σ = √a, tabulated on bin centers."""

    z: np.ndarray
    phi: np.ndarray
    sigma: np.ndarray
    drift_y: np.ndarray
    diffusion_y: np.ndarray
    drift_identity: np.ndarray
    identity_residual: np.ndarray
    identity_stderr: np.ndarray

    def __iter__(self):
        return iter((self.phi, self.drift_y))

    @property
    def unit_diffusion_defect(self) -> float:
        return float(np.nanmax(np.abs(self.diffusion_y - 1.0)))


def _central(f: np.ndarray, h: float, periodic: bool) -> np.ndarray:
    if periodic:
        return (np.roll(f, -1) - np.roll(f, 1)) / (2 * h)
    out = np.full_like(f, np.nan)
    out[1:-1] = (f[2:] - f[:-2]) / (2 * h)
    return out


def _central_se(se: np.ndarray, h: float, periodic: bool) -> np.ndarray:
    if periodic:
        return np.sqrt(np.roll(se, -1) ** 2 + np.roll(se, 1) ** 2) / (2 * h)
    out = np.full_like(se, np.nan)
    out[1:-1] = np.sqrt(se[2:] ** 2 + se[:-2] ** 2) / (2 * h)
    return out


def volatility_transform(coeffs: ProjectedCoefficients) -> VolatilityTransform:
    """Map to the coordinate with unit diffusion, plus the drift identity check.

    Returns φ on the bin centers, the y-drift b/σ − β⁻¹σ′, the y-diffusion
    a·φ′² (≈ 1), and the residual of b = −aF′ + β⁻¹a′ on interior bins with
    its standard error from the per-bin errors of b, F and a. Requires all
    bins active and uniform widths.
    """
    if not coeffs.active.all():
        raise ValueError("volatility transform needs every bin populated")
    h = coeffs.widths
    if np.ptp(h) > 1e-12 * h.max():
        raise ValueError("volatility transform needs uniform bins")
    h = float(h[0])
    a, beta, per = coeffs.a, coeffs.beta, coeffs.periodic
    if np.any(~(a >= 0)):
        raise ValueError("negative a(z)")
    sigma = np.sqrt(a)
    if sigma.min() < MIN_SIGMA:
        raise ValueError(f"sigma = {sigma.min():.3g} below {MIN_SIGMA}")
    z = coeffs.centers
    inv = 1.0 / sigma
    phi = np.concatenate([[0.0], np.cumsum(0.5 * (inv[1:] + inv[:-1]) * np.diff(z))])
    # anchor φ(0) = 0 with linear continuation outside the tabulated range
    if z[0] <= 0.0 <= z[-1]:
        phi0 = np.interp(0.0, z, phi)
    elif 0.0 < z[0]:
        phi0 = phi[0] - z[0] * inv[0]
    else:
        phi0 = phi[-1] + (0.0 - z[-1]) * inv[-1]
    phi = phi - phi0
    dphi = np.gradient(phi, h)
    dsigma = _central(sigma, h, per)
    drift_y = coeffs.b * inv - dsigma / beta
    diffusion_y = a * dphi * dphi
    dF = _central(coeffs.F, h, per)
    da = _central(a, h, per)
    rhs = -a * dF + da / beta
    se_dF = _central_se(coeffs.stderr_F, h, per)
    se_da = _central_se(coeffs.stderr_a, h, per)
    se = np.sqrt(coeffs.stderr_b ** 2 + (a * se_dF) ** 2 + (dF * coeffs.stderr_a) ** 2 + (se_da / beta) ** 2)
    return VolatilityTransform(z, phi, sigma, drift_y, diffusion_y, rhs, coeffs.b - rhs, se)


def write_coefficients_csv(path, coeffs: ProjectedCoefficients) -> None:
    with open(path, "w") as fh:
        fh.write("z,a,b,F,stderr_a,stderr_b,count\n")
        for row in zip(coeffs.centers, coeffs.a, coeffs.b, coeffs.F, coeffs.stderr_a, coeffs.stderr_b, coeffs.counts):
            fh.write(",".join(repr(float(x)) for x in row[:-1]) + f",{int(row[-1])}\n")
