"""Potential-energy models, domains and Boltzmann weights.

All evaluators take positions with a trailing axis of length ``d`` and
broadcast over any leading axes, so ``q`` of shape ``(n, d)`` returns
energies of shape ``(n,)`` and gradients of shape ``(n, d)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.special import logsumexp

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box; each axis is periodic or reflecting."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    periodic: tuple[bool, ...]

    def __post_init__(self):
        if not (len(self.lower) == len(self.upper) == len(self.periodic)):
            raise ValueError("lower, upper and periodic must have equal length")
        for lo, hi in zip(self.lower, self.upper):
            if not hi > lo:
                raise ValueError(f"empty axis [{lo}, {hi}]")

    @property
    def dimension(self) -> int:
        return len(self.lower)

    @property
    def lengths(self) -> np.ndarray:
        return np.asarray(self.upper, float) - np.asarray(self.lower, float)

    def apply_boundary(self, q: np.ndarray, p: np.ndarray | None = None):
        """Fold periodic axes and mirror reflecting axes back into the box.

        Momenta on mirrored axes change sign. Returns ``(q, p)``; inputs are
        not modified.
        """
        q = np.array(q, dtype=float, copy=True)
        if p is not None:
            p = np.array(p, dtype=float, copy=True)
        for a in range(self.dimension):
            lo, length = self.lower[a], self.upper[a] - self.lower[a]
            x = q[..., a] - lo
            if self.periodic[a]:
                x = np.mod(x, length)
                # mod can return exactly `length` for tiny negative inputs
                x = np.where(x >= length, 0.0, x)
                q[..., a] = lo + x
            else:
                if np.all((x >= 0.0) & (x <= length)):
                    continue
                k = np.floor(x / length)
                y = x - k * length
                odd = np.mod(k, 2.0) == 1.0
                y = np.where(odd, length - y, y)
                q[..., a] = lo + y
                if p is not None:
                    p[..., a] = np.where(odd, -p[..., a], p[..., a])
        return q, p

    def contains(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, float)
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        return np.all((q >= lo) & (q <= hi), axis=-1)


@dataclass(frozen=True)
class PotentialModel:
    """Potential energy ``V`` with analytic gradient on a box domain.

    Instances are immutable and safe to share between worker threads.
    """

    name: str
    domain: Domain
    energy_fn: Callable[[np.ndarray], np.ndarray]
    gradient_fn: Callable[[np.ndarray], np.ndarray]
    laplacian_fn: Callable[[np.ndarray], np.ndarray] | None = None
    params: Mapping[str, object] = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return self.domain.dimension

    def _check(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.shape[-1:] != (self.dimension,):
            raise ValueError(
                f"{self.name}: expected trailing axis of length {self.dimension}, "
                f"got shape {q.shape}"
            )
        return q

    def energy(self, q) -> np.ndarray:
        return self.energy_fn(self._check(q))

    def gradient(self, q) -> np.ndarray:
        return self.gradient_fn(self._check(q))

    def laplacian(self, q) -> np.ndarray:
        """Laplacian of V; central differences (step 1e-4) without a hook."""
        q = self._check(q)
        if self.laplacian_fn is not None:
            return self.laplacian_fn(q)
        h = 1e-4
        out = np.zeros(q.shape[:-1])
        for a in range(self.dimension):
            e = np.zeros(self.dimension)
            e[a] = h
            out += (self.gradient_fn(q + e)[..., a] - self.gradient_fn(q - e)[..., a]) / (2 * h)
        return out


# ----------------------------------------------------------------------------
# builtin models


def _dw_energy(x):
    c = np.cos(TWO_PI * x)
    return 1.0 + 3.0 * c + 3.0 * c**2 - c**3


def _dw_derivative(x):
    s, c = np.sin(TWO_PI * x), np.cos(TWO_PI * x)
    return -TWO_PI * s * (3.0 + 6.0 * c - 3.0 * c**2)


def _dw_second_derivative(x):
    s, c = np.sin(TWO_PI * x), np.cos(TWO_PI * x)
    # d/dx of -2pi s (3 + 6c - 3c^2)
    return -(TWO_PI**2) * (c * (3.0 + 6.0 * c - 3.0 * c**2) + s * s * (-6.0 + 6.0 * c))


def builtin_periodic_double_well() -> PotentialModel:
    """V(q) = 1 + 3cos(2πq) + 3cos²(2πq) − cos³(2πq) on the periodic unit interval.

    Maxima at q = 0 (V = 6) and q = 0.5 (V = 2); two symmetric wells near
    q = 0.318 and q = 0.682.
    """
    return PotentialModel(
        name="double_well_1d",
        domain=Domain((0.0,), (1.0,), (True,)),
        energy_fn=lambda q: _dw_energy(q[..., 0]),
        gradient_fn=lambda q: _dw_derivative(q[..., 0])[..., None],
        laplacian_fn=lambda q: _dw_second_derivative(q[..., 0]),
    )


def separable_double_well_2d(omega: float = 4.0, half_width: float = 1.5) -> PotentialModel:
    """V(q1, q2) = V_dw(q1) + ω²q2²/2; q1 periodic on [0,1), q2 reflecting on ±half_width."""
    w2 = float(omega) ** 2

    def energy(q):
        return _dw_energy(q[..., 0]) + 0.5 * w2 * q[..., 1] ** 2

    def gradient(q):
        return np.stack([_dw_derivative(q[..., 0]), w2 * q[..., 1]], axis=-1)

    def laplacian(q):
        return _dw_second_derivative(q[..., 0]) + w2

    return PotentialModel(
        name="separable_double_well_2d",
        domain=Domain((0.0, -half_width), (1.0, half_width), (True, False)),
        energy_fn=energy,
        gradient_fn=gradient,
        laplacian_fn=laplacian,
        params={"omega": float(omega), "half_width": float(half_width)},
    )


def harmonic(stiffness: float = 1.0, half_width: float = 8.0, dimension: int = 1) -> PotentialModel:
    """V(q) = k|q|²/2 on the reflecting box [−half_width, half_width]^d."""
    k = float(stiffness)
    return PotentialModel(
        name="harmonic",
        domain=Domain((-half_width,) * dimension, (half_width,) * dimension, (False,) * dimension),
        energy_fn=lambda q: 0.5 * k * np.sum(q**2, axis=-1),
        gradient_fn=lambda q: k * q,
        laplacian_fn=lambda q: np.full(q.shape[:-1], k * dimension),
        params={"stiffness": k, "half_width": float(half_width)},
    )


def flat(dimension: int = 1, periodic: bool = True) -> PotentialModel:
    """V ≡ 0 on the unit box."""
    return PotentialModel(
        name="flat",
        domain=Domain((0.0,) * dimension, (1.0,) * dimension, (periodic,) * dimension),
        energy_fn=lambda q: np.zeros(q.shape[:-1]),
        gradient_fn=lambda q: np.zeros_like(q),
        laplacian_fn=lambda q: np.zeros(q.shape[:-1]),
    )


def trigonometric(cos_coeffs, sin_coeffs=(), constant: float = 0.0) -> PotentialModel:
    """Periodic 1-D potential c + Σ_k a_k cos(2πkq) + b_k sin(2πkq), k = 1, 2, ..."""
    a = np.asarray(cos_coeffs, float)
    b = np.asarray(sin_coeffs, float)
    n = max(len(a), len(b))
    a = np.pad(a, (0, n - len(a)))
    b = np.pad(b, (0, n - len(b)))
    k = TWO_PI * np.arange(1, n + 1)

    def energy(q):
        x = q[..., 0, None] * k
        return constant + np.cos(x) @ a + np.sin(x) @ b

    def gradient(q):
        x = q[..., 0, None] * k
        return ((-np.sin(x) * k) @ a + (np.cos(x) * k) @ b)[..., None]

    def laplacian(q):
        x = q[..., 0, None] * k
        return (-np.cos(x) * k**2) @ a + (-np.sin(x) * k**2) @ b

    return PotentialModel(
        name="trigonometric",
        domain=Domain((0.0,), (1.0,), (True,)),
        energy_fn=energy,
        gradient_fn=gradient,
        laplacian_fn=laplacian,
        params={"cos": tuple(a), "sin": tuple(b), "constant": float(constant)},
    )


def polynomial(coeffs, lower: float, upper: float) -> PotentialModel:
    """1-D potential Σ_k c_k q^k (c_0 first) on the reflecting interval [lower, upper]."""
    c = np.polynomial.Polynomial(np.asarray(coeffs, float))
    dc, ddc = c.deriv(), c.deriv(2)
    return PotentialModel(
        name="polynomial",
        domain=Domain((float(lower),), (float(upper),), (False,)),
        energy_fn=lambda q: c(q[..., 0]),
        gradient_fn=lambda q: dc(q[..., 0])[..., None],
        laplacian_fn=lambda q: ddc(q[..., 0]),
        params={"coeffs": tuple(c.coef)},
    )


BUILTINS: dict[str, Callable[..., PotentialModel]] = {
    "double_well_1d": builtin_periodic_double_well,
    "separable_double_well_2d": separable_double_well_2d,
    "harmonic": harmonic,
    "flat": flat,
    "trigonometric": trigonometric,
    "polynomial": polynomial,
}


def model_from_key(key: str, **params) -> PotentialModel:
    try:
        factory = BUILTINS[key]
    except KeyError:
        raise ValueError(f"unknown potential {key!r}; choose from {sorted(BUILTINS)}") from None
    return factory(**params)


# ----------------------------------------------------------------------------
# quadrature and Boltzmann weights


def _panel_rule(lo: float, hi: float, panels: int, order: int):
    """Composite Gauss–Legendre nodes/weights shaped (panels, order)."""
    x, wt = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    return mid[:, None] + half[:, None] * x, half[:, None] * wt


def _check_quadrature(model: PotentialModel, beta: float):
    if model.dimension > 2:
        raise ValueError(
            f"quadrature unsupported for d = {model.dimension} > 2; use the sampling path"
        )
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")


def cell_log_masses(model: PotentialModel, beta: float, edges: list[np.ndarray], order: int = 8) -> np.ndarray:
    """log ∫_cell exp(−βV) for the tensor grid given by per-axis ``edges``.

    Gauss–Legendre of the given order inside every cell. Returns an array of
    shape (N_1, ..., N_d).
    """
    _check_quadrature(model, beta)
    x, wt = np.polynomial.legendre.leggauss(order)
    nodes, logw = [], []
    for e in edges:
        e = np.asarray(e, float)
        half = 0.5 * np.diff(e)
        mid = 0.5 * (e[1:] + e[:-1])
        nodes.append(mid[:, None] + half[:, None] * x)
        logw.append(np.log(half[:, None] * wt))
    if model.dimension == 1:
        logf = -beta * model.energy(nodes[0][..., None])
        return logsumexp(logf + logw[0], axis=-1)
    n1, n2 = nodes
    q = np.stack(np.broadcast_arrays(n1[:, None, :, None], n2[None, :, None, :]), axis=-1)
    logf = -beta * model.energy(q)
    lw = logw[0][:, None, :, None] + logw[1][None, :, None, :]
    return logsumexp(logf + lw, axis=(-2, -1))


def normalization_constant(model: PotentialModel, beta: float, panels: int | None = None, order: int = 8) -> float:
    """Z_Q = ∫ exp(−βV(q)) dq by composite Gauss–Legendre quadrature (d ≤ 2)."""
    _check_quadrature(model, beta)
    if panels is None:
        panels = 512 if model.dimension == 1 else 128
    edges = [np.linspace(lo, hi, panels + 1) for lo, hi in zip(model.domain.lower, model.domain.upper)]
    return float(np.exp(logsumexp(cell_log_masses(model, beta, edges, order))))


@dataclass(frozen=True)
class BoltzmannDensity:
    """f_Q(q) = exp(−βV(q)) / Z_Q."""

    model: PotentialModel
    beta: float
    normalization: float

    @classmethod
    def build(cls, model: PotentialModel, beta: float) -> "BoltzmannDensity":
        return cls(model, float(beta), normalization_constant(model, beta))

    def log_density(self, q) -> np.ndarray:
        return -self.beta * self.model.energy(q) - np.log(self.normalization)

    def __call__(self, q) -> np.ndarray:
        return np.exp(self.log_density(q))
