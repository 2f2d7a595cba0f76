"""Generalized coordinates q = Φ(u): coefficient transforms, the geometric
Itô drift, the transformed Smoluchowski generator, and its invariant
density.

Batched conventions: points ``u`` have shape (n, d); Jacobians (n, d, d)
with J[..., i, j] = ∂Φ_i/∂u_j; derivative tensors (n, d, d, d) with the
differentiation index first, D[..., k, i, j] = ∂/∂u_k of entry (i, j).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp
from scipy.stats import qmc

from .potentials import PotentialModel

FD_STEP = 1e-5
MIN_NODES = 16


def _batch(u) -> tuple[np.ndarray, bool]:
    u = np.asarray(u, float)
    if u.ndim == 1:
        return u[None, :], True
    return u, False


def fd_derivative(fn: Callable[[np.ndarray], np.ndarray], u: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central differences of a matrix field; returns (n, d, ...) with the derivative index second."""
    u = np.asarray(u, float)
    d = u.shape[-1]
    parts = []
    for k in range(d):
        e = np.zeros(d)
        e[k] = step
        parts.append((fn(u + e) - fn(u - e)) / (2 * step))
    return np.stack(parts, axis=1)


@dataclass(frozen=True, eq=False)
class CoordinateTransform:
    """Diffeomorphism Φ from a u-box (validity box) onto configuration space."""

    name: str
    forward: Callable[[np.ndarray], np.ndarray]
    inverse: Callable[[np.ndarray], np.ndarray]
    jacobian_fn: Callable[[np.ndarray], np.ndarray]
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    periodic: tuple[bool, ...]
    jacobian_derivative_fn: Callable[[np.ndarray], np.ndarray] | None = None
    params: tuple = ()

    @property
    def dimension(self) -> int:
        return len(self.lower)

    def jacobian(self, u) -> np.ndarray:
        U, single = _batch(u)
        J = self.jacobian_fn(U)
        return J[0] if single else J

    def jacobian_derivative(self, u) -> np.ndarray:
        U, single = _batch(u)
        D = self.jacobian_derivative_fn(U) if self.jacobian_derivative_fn else fd_derivative(self.jacobian_fn, U)
        return D[0] if single else D

    def metric(self, u) -> np.ndarray:
        """h = ∇Φᵀ∇Φ."""
        J = self.jacobian(u)
        return np.swapaxes(J, -1, -2) @ J

    def apply_boundary(self, u: np.ndarray) -> np.ndarray:
        u = np.array(u, dtype=float, copy=True)
        for a in range(self.dimension):
            lo, L = self.lower[a], self.upper[a] - self.lower[a]
            x = u[..., a] - lo
            if self.periodic[a]:
                x = np.mod(x, L)
                x[x >= L] = 0.0
            else:
                k = np.floor(x / L)
                y = x - k * L
                x = np.where(np.mod(k, 2.0) == 1.0, L - y, y)
            u[..., a] = lo + x
        return u

    def validate(self, n: int = 1024, seed: int = 0) -> None:
        """Sampled check that det ∇Φ > 0 and Φ⁻¹∘Φ = id (1e-10) on the validity box."""
        pts = qmc.Sobol(self.dimension, scramble=True, seed=seed).random(n)
        u = np.asarray(self.lower) + pts * (np.asarray(self.upper) - np.asarray(self.lower))
        det = np.linalg.det(self.jacobian(u))
        if np.any(det <= 0):
            bad = u[det <= 0][0]
            raise ValueError(f"{self.name}: det Jacobian {det.min():.3g} <= 0 at u = {bad}")
        back = self.inverse(self.forward(u))
        err = np.abs(back - u)
        for a in range(self.dimension):
            if self.periodic[a]:
                L = self.upper[a] - self.lower[a]
                err[:, a] = np.minimum(err[:, a], L - err[:, a])
        if err.max() > 1e-10:
            raise ValueError(f"{self.name}: inverse round trip error {err.max():.3g}")


def identity_transform(lower, upper, periodic) -> CoordinateTransform:
    d = len(lower)
    return CoordinateTransform(
        "identity", lambda u: np.array(u, float), lambda q: np.array(q, float),
        lambda u: np.broadcast_to(np.eye(d), u.shape[:-1] + (d, d)).copy(),
        tuple(lower), tuple(upper), tuple(periodic),
        lambda u: np.zeros(u.shape[:-1] + (d, d, d)),
    )


def periodic_sine_transform(amplitude: float = 0.1) -> CoordinateTransform:
    """Φ(u) = u + a sin(2πu) on the periodic unit interval; needs |a| < 1/(2π)."""
    a = float(amplitude)
    if not abs(a) < 1.0 / (2 * np.pi):
        raise ValueError(f"amplitude {a} gives Φ' <= 0 somewhere; need |a| < 1/(2π) = {1 / (2 * np.pi):.4f}")
    tp = 2 * np.pi

    def forward(u):
        return u + a * np.sin(tp * u)

    def inverse(q):
        q = np.asarray(q, float)
        base = np.floor(q)
        x = q - base
        u = x.copy()
        for _ in range(60):
            f = u + a * np.sin(tp * u) - x
            u = u - f / (1 + a * tp * np.cos(tp * u))
            if np.max(np.abs(f)) < 1e-15:
                break
        return u + base

    return CoordinateTransform(
        "periodic_sine", forward, inverse,
        lambda u: (1 + a * tp * np.cos(tp * u))[..., None],
        (0.0,), (1.0,), (True,),
        lambda u: (-a * tp * tp * np.sin(tp * u))[..., None, None],
        (("amplitude", a),),
    )


def affine_transform(scale: float, lower: float = 0.0, upper: float = 1.0) -> CoordinateTransform:
    """Φ(u) = scale·u in 1-D (reflecting validity interval)."""
    s = float(scale)
    if s <= 0:
        raise ValueError("scale must be positive")
    return CoordinateTransform(
        "affine", lambda u: s * u, lambda q: q / s,
        lambda u: np.full(u.shape[:-1] + (1, 1), s),
        (lower,), (upper,), (False,),
        lambda u: np.zeros(u.shape[:-1] + (1, 1, 1)),
        (("scale", s),),
    )


def linear_transform(matrix, lower=None, upper=None) -> CoordinateTransform:
    """Φ(u) = A u with constant invertible A (reflecting validity box, default unit cube)."""
    A = np.atleast_2d(np.asarray(matrix, float))
    d = A.shape[0]
    if A.shape != (d, d) or np.linalg.det(A) <= 0:
        raise ValueError("need a square matrix with positive determinant")
    Ai = np.linalg.inv(A)
    lower = (0.0,) * d if lower is None else tuple(lower)
    upper = (1.0,) * d if upper is None else tuple(upper)
    return CoordinateTransform(
        "linear", lambda u: u @ A.T, lambda q: q @ Ai.T,
        lambda u: np.broadcast_to(A, u.shape[:-1] + (d, d)).copy(),
        lower, upper, (False,) * d,
        lambda u: np.zeros(u.shape[:-1] + (d, d, d)),
        (("matrix", A.tolist()),),
    )


def polar_annulus_transform(r_min: float = 1.0, r_max: float = 2.0) -> CoordinateTransform:
    """u = (r, θ) ↦ q = (r cos θ, r sin θ) on r ∈ [r_min, r_max], θ periodic in [0, 2π)."""
    if not 0 < r_min < r_max:
        raise ValueError("need 0 < r_min < r_max")

    def forward(u):
        r, th = u[..., 0], u[..., 1]
        return np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)

    def inverse(q):
        r = np.hypot(q[..., 0], q[..., 1])
        th = np.mod(np.arctan2(q[..., 1], q[..., 0]), 2 * np.pi)
        return np.stack([r, th], axis=-1)

    def jac(u):
        r, th = u[..., 0], u[..., 1]
        c, s = np.cos(th), np.sin(th)
        return np.stack([np.stack([c, -r * s], -1), np.stack([s, r * c], -1)], -2)

    def djac(u):
        r, th = u[..., 0], u[..., 1]
        c, s = np.cos(th), np.sin(th)
        z = np.zeros_like(r)
        d_r = np.stack([np.stack([z, -s], -1), np.stack([z, c], -1)], -2)
        d_th = np.stack([np.stack([-s, -r * c], -1), np.stack([c, -r * s], -1)], -2)
        return np.stack([d_r, d_th], axis=-3)

    return CoordinateTransform(
        "polar_annulus", forward, inverse, jac,
        (float(r_min), 0.0), (float(r_max), 2 * np.pi), (False, True), djac,
        (("r_min", float(r_min)), ("r_max", float(r_max))),
    )


TRANSFORMS = {
    "identity_1d": lambda: identity_transform((0.0,), (1.0,), (True,)),
    "periodic_sine": periodic_sine_transform,
    "polar_annulus": polar_annulus_transform,
    "affine": affine_transform,
    "linear": linear_transform,
}


def transform_from_key(key: str, **params) -> CoordinateTransform:
    try:
        factory = TRANSFORMS[key]
    except KeyError:
        raise ValueError(f"unknown transform {key!r}; choose from {sorted(TRANSFORMS)}") from None
    return factory(**params)


@dataclass(frozen=True, eq=False)
class FrictionField:
    """Symmetric positive-definite γ(u) with optional analytic derivative."""

    matrix_fn: Callable[[np.ndarray], np.ndarray]
    dimension: int
    derivative_fn: Callable[[np.ndarray], np.ndarray] | None = None

    @classmethod
    def constant(cls, gamma, d: int) -> "FrictionField":
        G = float(gamma) * np.eye(d) if np.ndim(gamma) == 0 else np.asarray(gamma, float)
        return cls(lambda u: np.broadcast_to(G, u.shape[:-1] + (d, d)).copy(), d,
                   lambda u: np.zeros(u.shape[:-1] + (d, d, d)))

    @classmethod
    def from_transform(cls, transform: CoordinateTransform, gamma0=1.0) -> "FrictionField":
        """γ(u) = ∇Φᵀ γ₀ ∇Φ for constant Cartesian friction γ₀."""
        d = transform.dimension
        G0 = float(gamma0) * np.eye(d) if np.ndim(gamma0) == 0 else np.asarray(gamma0, float)

        def matrix(u):
            J = transform.jacobian_fn(u)
            return np.swapaxes(J, -1, -2) @ G0 @ J

        def derivative(u):
            J = transform.jacobian_fn(u)
            dJ = transform.jacobian_derivative(u)
            A = np.swapaxes(dJ, -1, -2) @ G0 @ J[..., None, :, :]
            return A + np.swapaxes(A, -1, -2)

        return cls(matrix, d, derivative)

    def matrix(self, u) -> np.ndarray:
        U, single = _batch(u)
        G = self.matrix_fn(U)
        return G[0] if single else G

    def derivative(self, u) -> np.ndarray:
        U, single = _batch(u)
        D = self.derivative_fn(U) if self.derivative_fn else fd_derivative(self.matrix_fn, U)
        return D[0] if single else D

    def check(self, u) -> None:
        G = self.matrix(np.atleast_2d(u))
        asym = np.abs(G - np.swapaxes(G, -1, -2)).max()
        if asym > 1e-12 * max(1.0, np.abs(G).max()):
            raise ValueError(f"friction not symmetric (defect {asym:.3g})")
        if np.any(np.linalg.eigvalsh(G) <= 0):
            raise ValueError("friction not positive definite on sampled points")


def transform_coefficients(gamma, sigma, transform: CoordinateTransform, u, beta: float | None = None):
    """γ̃ = ∇Φᵀγ∇Φ and σ̃ = ∇Φᵀσ at u.

    If ``beta`` is given and 2γ = βσσᵀ holds to 1e-12, the same relation is
    checked for the transformed pair.
    """
    J = transform.jacobian(u)
    det = np.linalg.det(J)
    if np.any(np.abs(det) < 1e-14 * max(1.0, np.abs(J).max()) ** J.shape[-1]):
        raise ValueError("singular Jacobian")
    gamma = np.asarray(gamma, float)
    sigma = np.asarray(sigma, float)
    Jt = np.swapaxes(J, -1, -2)
    g_u = Jt @ gamma @ J
    s_u = Jt @ sigma
    if beta is not None:
        scale = max(1.0, np.abs(2 * gamma).max())
        if np.abs(2 * gamma - beta * sigma @ sigma.T).max() <= 1e-12 * scale:
            lhs, rhs = 2 * g_u, beta * s_u @ np.swapaxes(s_u, -1, -2)
            defect = np.abs(lhs - rhs).max() / max(1.0, np.abs(lhs).max())
            if defect > 1e-12:
                raise ArithmeticError(f"fluctuation-dissipation lost under transform (defect {defect:.3g})")
    return g_u, s_u


def geometric_drift(friction: FrictionField, beta: float, u) -> np.ndarray:
    """g_i = β⁻¹ Σ_{j,k} γ_ij (det γ)^{-1/2} ∂_k((det γ)^{1/2} γ^{kj})."""
    U, single = _batch(u)
    G = friction.matrix(U)
    det = np.linalg.det(G)
    if np.any(det <= 0):
        raise ValueError(f"det gamma <= 0 at u = {U[det <= 0][0]}")
    Gi = np.linalg.inv(G)
    dG = friction.derivative(U)                      # (n, k, i, j)
    dGi = -Gi[:, None] @ dG @ Gi[:, None]            # ∂_k γ⁻¹
    half_dlogdet = 0.5 * np.einsum("nij,nkji->nk", Gi, dG)
    v = np.einsum("nk,nkj->nj", half_dlogdet, Gi) + np.einsum("nkkj->nj", dGi)
    g = np.einsum("nij,nj->ni", G, v) / beta
    return g[0] if single else g


@dataclass(frozen=True, eq=False)
class TransformedPotential:
    """Ṽ(u) = V(Φ(u)) with ∇Ṽ = ∇Φᵀ ∇V(Φ(u))."""

    model: PotentialModel
    transform: CoordinateTransform

    @property
    def dimension(self) -> int:
        return self.transform.dimension

    def energy(self, u) -> np.ndarray:
        return self.model.energy(self.transform.forward(np.asarray(u, float)))

    def gradient(self, u) -> np.ndarray:
        u = np.asarray(u, float)
        J = self.transform.jacobian(u)
        gq = self.model.gradient(self.transform.forward(u))
        return np.einsum("...ji,...j->...i", J, gq)


@dataclass(frozen=True, eq=False)
class NodeGrid:
    """Uniform tensor grid of nodes in u; periodic axes omit the right endpoint."""

    axes: tuple[np.ndarray, ...]
    periodic: tuple[bool, ...]

    @classmethod
    def on_box(cls, lower, upper, periodic, n) -> "NodeGrid":
        n = (int(n),) * len(lower) if np.ndim(n) == 0 else tuple(n)
        axes = []
        for lo, hi, per, m in zip(lower, upper, periodic, n):
            axes.append(np.linspace(lo, hi, m, endpoint=not per) if per else np.linspace(lo, hi, m))
        return cls(tuple(axes), tuple(periodic))

    @classmethod
    def for_transform(cls, transform: CoordinateTransform, n) -> "NodeGrid":
        return cls.on_box(transform.lower, transform.upper, transform.periodic, n)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    @property
    def spacing(self) -> np.ndarray:
        return np.array([a[1] - a[0] for a in self.axes])

    @property
    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def quadrature_weights(self) -> np.ndarray:
        """Trapezoid weights (spectrally accurate on periodic axes)."""
        w = np.ones(self.shape)
        for a, (x, per) in enumerate(zip(self.axes, self.periodic)):
            wa = np.full(len(x), x[1] - x[0])
            if not per:
                wa[0] *= 0.5
                wa[-1] *= 0.5
            shape = [1] * len(self.axes)
            shape[a] = len(x)
            w = w * wa.reshape(shape)
        return w

    def diff(self, f: np.ndarray, axis: int) -> np.ndarray:
        """Second-order central difference along an axis."""
        h = self.spacing[axis]
        if self.periodic[axis]:
            return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2 * h)
        return np.gradient(f, h, axis=axis, edge_order=2)


def _check_grid(grid: NodeGrid):
    if min(grid.shape) < MIN_NODES:
        raise ValueError(f"grid too coarse: need at least {MIN_NODES} nodes per axis, got {grid.shape}")


def generalized_generator_apply(psi: np.ndarray, friction: FrictionField, potential_u, beta: float,
                                grid: NodeGrid) -> np.ndarray:
    """Āψ = β⁻¹ (det γ)^{-1/2} ∇·((det γ)^{1/2} γ⁻¹∇ψ) − ∇Ṽ·γ⁻¹∇ψ by central differences."""
    _check_grid(grid)
    psi = np.asarray(psi, float)
    if psi.shape != grid.shape:
        raise ValueError(f"psi has shape {psi.shape}, grid has {grid.shape}")
    d = len(grid.shape)
    pts = grid.points.reshape(-1, d)
    G = friction.matrix(pts)
    Gi = np.linalg.inv(G).reshape(grid.shape + (d, d))
    sq = np.sqrt(np.linalg.det(G)).reshape(grid.shape)
    dV = potential_u.gradient(pts).reshape(grid.shape + (d,))
    dpsi = np.stack([grid.diff(psi, a) for a in range(d)], axis=-1)
    flux = np.einsum("...ij,...j->...i", Gi, dpsi)
    div = sum(grid.diff(sq * flux[..., i], i) for i in range(d))
    return div / (beta * sq) - np.einsum("...i,...i->...", dV, flux)


def generalized_generator_apply_mass_form(psi: np.ndarray, transform: CoordinateTransform, mass, gamma0,
                                          potential_u, beta: float, grid: NodeGrid) -> np.ndarray:
    """Āψ in the mass-metric form

        Σ_ij γ^{ij}(−∂_jṼ + (2β)⁻¹ tr(G⁻¹∂_jG)) ∂_iψ + β⁻¹(∂_jγ^{ij} ∂_iψ + γ^{ij} ∂_ijψ),

    with G = ∇ΦᵀM∇Φ and γ = ∇Φᵀγ₀∇Φ. Analytically independent of the
    constant mass matrix M.
    """
    _check_grid(grid)
    d = len(grid.shape)
    pts = grid.points.reshape(-1, d)
    M = float(mass) * np.eye(d) if np.ndim(mass) == 0 else np.asarray(mass, float)
    fr = FrictionField.from_transform(transform, gamma0)
    J = transform.jacobian(pts)
    dJ = transform.jacobian_derivative(pts)
    Gm = np.swapaxes(J, -1, -2) @ M @ J
    A = np.swapaxes(dJ, -1, -2) @ M @ J[:, None]
    dGm = A + np.swapaxes(A, -1, -2)
    tr = np.einsum("nij,nkji->nk", np.linalg.inv(Gm), dGm)
    gam = fr.matrix(pts)
    Gi = np.linalg.inv(gam)
    dGi = -Gi[:, None] @ fr.derivative(pts) @ Gi[:, None]     # (n, j, i, l): ∂_j γ⁻¹
    div_gi = np.einsum("njij->ni", dGi)                          # Σ_j ∂_j γ^{ij}
    dV = potential_u.gradient(pts)
    shape = grid.shape
    dpsi = np.stack([grid.diff(psi, a) for a in range(d)], axis=-1).reshape(-1, d)
    hess = np.stack([np.stack([grid.diff(dpsi.reshape(shape + (d,))[..., i], j) for j in range(d)], -1)
                     for i in range(d)], -2).reshape(-1, d, d)
    hess = 0.5 * (hess + np.swapaxes(hess, -1, -2))
    drift = np.einsum("nij,nj->ni", Gi, -dV + tr / (2 * beta))
    out = np.einsum("ni,ni->n", drift, dpsi) + (np.einsum("ni,ni->n", div_gi, dpsi)
                                                 + np.einsum("nij,nij->n", Gi, hess)) / beta
    return out.reshape(shape)


def invariant_measure_density(transform: CoordinateTransform, model: PotentialModel, beta: float, u,
                              n_quad: int = 256) -> np.ndarray:
    """(f_Q∘Φ)(u) √det h(u), normalized to unit mass over the validity box.

    The normalization uses composite Gauss–Legendre quadrature in u with
    ``n_quad`` panels per axis (d ≤ 2).
    """
    d = transform.dimension
    if d > 2:
        raise ValueError("normalization by quadrature supports d <= 2")

    def log_unnorm(x):
        J = transform.jacobian(x)
        return -beta * model.energy(transform.forward(x)) + np.log(np.abs(np.linalg.det(J)))

    x, wt = np.polynomial.legendre.leggauss(6)
    nodes, weights = [], []
    for lo, hi in zip(transform.lower, transform.upper):
        e = np.linspace(lo, hi, n_quad + 1)
        half = 0.5 * np.diff(e)
        nodes.append(((0.5 * (e[1:] + e[:-1]))[:, None] + half[:, None] * x).ravel())
        weights.append((half[:, None] * wt).ravel())
    mesh = np.stack(np.meshgrid(*nodes, indexing="ij"), axis=-1).reshape(-1, d)
    lw = np.log(np.prod(np.stack(np.meshgrid(*weights, indexing="ij"), -1).reshape(-1, d), axis=-1))
    logZ = logsumexp(log_unnorm(mesh) + lw)
    U, single = _batch(u)
    out = np.exp(log_unnorm(U) - logZ)
    return out[0] if single else out


class GeneralizedSmoluchowski:
    """Coefficients of γ(u) du = (−∇Ṽ + g) dt + σ(u) dw for the integrator."""

    def __init__(self, transform: CoordinateTransform, model: PotentialModel, beta: float,
                 gamma0=1.0, friction: FrictionField | None = None):
        self.transform = transform
        self.potential = TransformedPotential(model, transform)
        self.friction_field = friction or FrictionField.from_transform(transform, gamma0)
        self.beta = float(beta)

    def friction(self, u: np.ndarray) -> np.ndarray:
        return self.friction_field.matrix_fn(u)

    def potential_gradient(self, u: np.ndarray) -> np.ndarray:
        return self.potential.gradient(u)

    def drift_correction(self, u: np.ndarray) -> np.ndarray:
        return geometric_drift(self.friction_field, self.beta, u)

    def apply_boundary(self, u: np.ndarray) -> np.ndarray:
        return self.transform.apply_boundary(u)


def write_density_csv(path, u: np.ndarray, density: np.ndarray) -> None:
    u = np.asarray(u, float).reshape(len(density), -1)
    with open(path, "w") as fh:
        fh.write(",".join([f"u{a + 1}" for a in range(u.shape[1])] + ["density"]) + "\n")
        for row, rho in zip(u, density):
            fh.write(",".join(repr(float(x)) for x in (*row, rho)) + "\n")
