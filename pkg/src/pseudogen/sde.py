"""Time integration of Langevin and Smoluchowski dynamics, equilibrium
sampling, and the Ornstein–Uhlenbeck momentum kernel.

Conventions
-----------
Positions and momenta carry a trailing axis of length ``d``; integrators
act on whole ensembles of shape ``(n, d)`` at once. All SDEs are Itô.
The noise amplitude is never an input: it is always the Cholesky factor
of ``2γ/β``.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm, solve

from .potentials import PotentialModel
from .rng import stream


class SamplingWarning(UserWarning):
    """Equilibrium sampler ran outside its tuned regime."""


def _as_matrix(x, d: int, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        return float(a) * np.eye(d)
    if a.shape != (d, d):
        raise ValueError(f"{name} must be scalar or {d}x{d}, got shape {a.shape}")
    return a


def _check_spd(a: np.ndarray, name: str) -> np.ndarray:
    if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise ValueError(f"{name} is not symmetric")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} is not positive definite") from None


@dataclass(frozen=True)
class SimConfig:
    """Physical and numerical parameters shared by all integrators.

    ``gamma`` and ``mass`` may be scalars (times identity) or symmetric
    positive-definite matrices. ``gamma = 0`` is accepted for Langevin and
    gives the Hamiltonian limit.
    """

    beta: float = 1.0
    gamma: float | np.ndarray = 1.0
    mass: float | np.ndarray = 1.0
    dt: float = 1e-3
    n_steps: int = 1
    master_seed: int = 0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if int(self.n_steps) < 0:
            raise ValueError("n_steps must be nonnegative")
        for name in ("gamma", "mass"):
            a = np.asarray(getattr(self, name), float)
            if a.ndim == 0:
                if name == "mass" and not a > 0:
                    raise ValueError("mass must be positive")
                if name == "gamma" and not a >= 0:
                    raise ValueError("gamma must be nonnegative")
            else:
                _check_spd(a, name)

    @property
    def scalar(self) -> bool:
        return np.ndim(self.gamma) == 0 and np.ndim(self.mass) == 0

    def gamma_matrix(self, d: int) -> np.ndarray:
        return _as_matrix(self.gamma, d, "gamma")

    def mass_matrix(self, d: int) -> np.ndarray:
        return _as_matrix(self.mass, d, "mass")

    def sigma(self, d: int) -> np.ndarray:
        """Noise matrix σ with σσᵀ = 2γ/β (lower Cholesky factor)."""
        g = self.gamma_matrix(d)
        if not np.any(g):
            return np.zeros((d, d))
        return _check_spd(2.0 * g / self.beta, "2*gamma/beta")

    def with_(self, **kw) -> "SimConfig":
        return replace(self, **kw)


@dataclass
class SimState:
    """Phase point(s). ``q`` and ``p`` are ``(d,)`` or batched ``(n, d)``."""

    q: np.ndarray
    p: np.ndarray
    t: float = 0.0
    info: dict = field(default_factory=dict)


def _normals(rng, shape) -> np.ndarray:
    if isinstance(rng, np.random.Generator):
        return rng.standard_normal(shape)
    xi = rng.normal()
    if xi.shape != tuple(shape):
        raise ValueError(f"noise source returned shape {xi.shape}, expected {tuple(shape)}")
    return xi


def _force_check(grad: np.ndarray, q: np.ndarray) -> None:
    if not np.all(np.isfinite(grad)):
        bad = ~np.all(np.isfinite(grad), axis=-1)
        where = np.asarray(q)[bad] if np.ndim(q) > 1 else q
        raise FloatingPointError(f"non-finite force at q = {np.asarray(where)[:5]!r}")


class LangevinIntegrator:
    """BAOAB splitting for dq = M⁻¹p dt, dp = −∇V dt − γM⁻¹p dt + σ dw.

    The O-step is the exact OU update p ← E p + L ξ with E = exp(−γM⁻¹dt)
    and LLᵀ = (M − E M Eᵀ)/β. For γ = 0 the scheme is velocity Verlet.
    """

    def __init__(self, cfg: SimConfig, model: PotentialModel):
        self.cfg, self.model = cfg, model
        d = model.dimension
        self.h = cfg.dt
        if cfg.scalar:
            g, m = float(cfg.gamma), float(cfg.mass)
            c1 = np.exp(-g * cfg.dt / m)
            self.minv = 1.0 / m
            self.c1 = c1
            self.c2 = np.sqrt(max(m * (1.0 - c1 * c1), 0.0) / cfg.beta)
            self.E = self.L = self.Minv = None
        else:
            M = cfg.mass_matrix(d)
            G = cfg.gamma_matrix(d)
            Minv = np.linalg.inv(M)
            E = expm(-G @ Minv * cfg.dt)
            C = (M - E @ M @ E.T) / cfg.beta
            C = 0.5 * (C + C.T)
            self.Minv, self.E = Minv, E
            self.L = np.linalg.cholesky(C) if np.any(G) else np.zeros((d, d))

    def step(self, q: np.ndarray, p: np.ndarray, rng) -> tuple[np.ndarray, np.ndarray]:
        half = 0.5 * self.h
        grad = self.model.gradient(q)
        _force_check(grad, q)
        p = p - half * grad
        if self.E is None:
            q = q + half * self.minv * p
            xi = _normals(rng, p.shape)
            p = self.c1 * p + self.c2 * xi
            q = q + half * self.minv * p
        else:
            q = q + half * p @ self.Minv.T
            xi = _normals(rng, p.shape)
            p = p @ self.E.T + xi @ self.L.T
            q = q + half * p @ self.Minv.T
        grad = self.model.gradient(q)
        _force_check(grad, q)
        p = p - half * grad
        return self.model.domain.apply_boundary(q, p)

    def run(self, q, p, rng, n_steps: int):
        for _ in range(n_steps):
            q, p = self.step(q, p, rng)
        return q, p


class SmoluchowskiIntegrator:
    """Euler–Maruyama for γ dq = −∇V dt + σ dw, σσᵀ = 2γ/β.

    The step is written as dq = γ⁻¹(−∇V) dt + γ⁻¹σ √dt ξ so that the
    generalized-coordinate integrator with identity transform reproduces
    it bit for bit.
    """

    def __init__(self, cfg: SimConfig, model: PotentialModel):
        self.cfg, self.model = cfg, model
        d = model.dimension
        if np.ndim(cfg.gamma) == 0:
            g = float(cfg.gamma)
            if not g > 0:
                raise ValueError("Smoluchowski dynamics needs gamma > 0")
            self.g = g
            self.s = np.sqrt(2.0 * g / cfg.beta)
            self.G = None
        else:
            self.G = cfg.gamma_matrix(d)
            self.S = cfg.sigma(d)
        self.sqdt = np.sqrt(cfg.dt)

    def step(self, q: np.ndarray, rng) -> np.ndarray:
        grad = self.model.gradient(q)
        _force_check(grad, q)
        xi = _normals(rng, q.shape)
        dt = self.cfg.dt
        if self.G is None:
            q = q + (-grad) / self.g * dt + (self.s * xi) / self.g * self.sqdt
        else:
            rhs = np.concatenate([-grad.reshape(-1, q.shape[-1]), (xi @ self.S.T).reshape(-1, q.shape[-1])], axis=0)
            sol = solve(self.G, rhs.T, assume_a="pos").T
            n = sol.shape[0] // 2
            q = q + (sol[:n] * dt + sol[n:] * self.sqdt).reshape(q.shape)
        return self.model.domain.apply_boundary(q)[0]

    def run(self, q, rng, n_steps: int):
        for _ in range(n_steps):
            q = self.step(q, rng)
        return q


def step_langevin(state: SimState, cfg: SimConfig, model: PotentialModel, rng) -> SimState:
    """One BAOAB step of Langevin dynamics."""
    q, p = LangevinIntegrator(cfg, model).step(np.asarray(state.q, float), np.asarray(state.p, float), rng)
    return SimState(q, p, state.t + cfg.dt)


def step_smoluchowski(state: SimState, cfg: SimConfig, model: PotentialModel, rng) -> SimState:
    """One Euler–Maruyama step of Smoluchowski dynamics; momenta are carried unchanged."""
    q = SmoluchowskiIntegrator(cfg, model).step(np.asarray(state.q, float), rng)
    return SimState(q, state.p, state.t + cfg.dt)


def step_generalized_smoluchowski(state: SimState, cfg_u: SimConfig, transform_ctx, rng) -> SimState:
    """One Euler–Maruyama step of γ(u) du = (−∇V(u) + g(u)) dt + σ(u) dw.

    ``transform_ctx`` provides ``friction(u)`` (batched SPD matrices),
    ``potential_gradient(u)``, ``drift_correction(u)`` (the geometric drift
    g) and ``apply_boundary(u)``; see :class:`pseudogen.geometry.GeneralizedSmoluchowski`.
    """
    u = np.asarray(state.q, float)
    single = u.ndim == 1
    U = u[None, :] if single else u
    n, d = U.shape
    gam = transform_ctx.friction(U)
    grad = transform_ctx.potential_gradient(U)
    _force_check(grad, U)
    g = transform_ctx.drift_correction(U)
    xi = _normals(rng, U.shape)
    dt, sqdt = cfg_u.dt, np.sqrt(cfg_u.dt)
    if d == 1:
        gs = gam[:, 0, 0]
        if np.any(~(gs > 0)):
            raise ValueError(f"friction not positive definite at u = {U[~(gs > 0)][:5]!r}")
        s = np.sqrt(2.0 * gs / cfg_u.beta)
        # same operation order as SmoluchowskiIntegrator.step
        new = U + ((-grad + g)[:, 0] / gs * dt)[:, None] + ((s * xi[:, 0]) / gs * sqdt)[:, None]
    else:
        try:
            L = np.linalg.cholesky(2.0 * gam / cfg_u.beta)
        except np.linalg.LinAlgError:
            raise ValueError("friction not positive definite at the current point") from None
        noise = np.einsum("nij,nj->ni", L, xi)
        rhs = np.stack([-grad + g, noise], axis=-1)
        sol = np.linalg.solve(gam, rhs)
        new = U + sol[..., 0] * dt + sol[..., 1] * sqdt
    new = transform_ctx.apply_boundary(new)
    return SimState(new[0] if single else new, state.p, state.t + cfg_u.dt)


# ----------------------------------------------------------------------------
# equilibrium sampling


def sample_momenta(n: int, cfg: SimConfig, d: int, rng: np.random.Generator) -> np.ndarray:
    """Exact draws from f_P = N(0, M/β)."""
    L = np.linalg.cholesky(cfg.mass_matrix(d) / cfg.beta)
    return rng.standard_normal((n, d)) @ L.T


def metropolis(
    n: int,
    model: PotentialModel,
    beta: float,
    master_seed: int,
    *,
    n_chains: int = 1000,
    chains_per_stream: int = 100,
    burn_in: int = 1000,
    thin: int = 10,
    target_acceptance: float = 0.4,
):
    """Random-walk Metropolis draws from f_Q with independent chain blocks.

    The proposal width adapts during burn-in towards ``target_acceptance``
    and is frozen afterwards. Returns ``(q, acceptance_rate, step)``;
    ``q`` has shape ``(n, d)`` ordered chain-block-major.
    """
    d = model.dimension
    n_chains = max(1, min(n_chains, n))
    per_chain = -(-n // n_chains)
    blocks = [(s, min(s + chains_per_stream, n_chains)) for s in range(0, n_chains, chains_per_stream)]
    gens = [stream(master_seed, "metropolis", b) for b in range(len(blocks))]
    lengths = model.domain.lengths

    def draw(kind):
        parts = []
        for g, (a, b) in zip(gens, blocks):
            parts.append(g.standard_normal((b - a, d)) if kind == "n" else g.random(b - a))
        return np.concatenate(parts, axis=0)

    lo = np.asarray(model.domain.lower)
    q = lo + np.concatenate([g.random((b - a, d)) for g, (a, b) in zip(gens, blocks)], axis=0) * lengths
    E = model.energy(q)
    log_step = np.log(0.1 * lengths.min())
    scale = lengths / lengths.min()
    out = np.empty((n_chains, per_chain, d))
    acc_count, tried = 0, 0
    window_acc = 0.0
    total = burn_in + per_chain * thin
    for it in range(total):
        prop = q + np.exp(log_step) * scale * draw("n")
        prop = model.domain.apply_boundary(prop)[0]
        Ep = model.energy(prop)
        accept = np.log(draw("u")) < -beta * (Ep - E)
        q = np.where(accept[:, None], prop, q)
        E = np.where(accept, Ep, E)
        rate = accept.mean()
        if it < burn_in:
            window_acc += rate
            if (it + 1) % 20 == 0:
                log_step += 1.5 * (window_acc / 20 - target_acceptance)
                window_acc = 0.0
        else:
            acc_count += accept.sum()
            tried += accept.size
            k = it - burn_in
            if (k + 1) % thin == 0:
                out[:, k // thin] = q
    acc = acc_count / max(tried, 1)
    return out.reshape(-1, d)[:n], float(acc), float(np.exp(log_step))


def sample_canonical(n: int, cfg: SimConfig, model: PotentialModel, rng=None, **kw) -> SimState:
    """Batched canonical sample: q from f_Q by Metropolis, p exactly from f_P.

    With ``rng=None`` all streams derive from ``cfg.master_seed``. A
    :class:`SamplingWarning` is issued if the acceptance rate leaves
    [0.1, 0.9]; the rate is stored in ``info``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    seed = cfg.master_seed if rng is None else int(rng.integers(2**63))
    q, acc, step = metropolis(n, model, cfg.beta, seed, **kw)
    if not 0.1 <= acc <= 0.9:
        warnings.warn(f"Metropolis acceptance rate {acc:.3f} outside [0.1, 0.9]", SamplingWarning, stacklevel=2)
    p = sample_momenta(n, cfg, model.dimension, stream(seed, "momenta"))
    return SimState(q, p, 0.0, {"acceptance_rate": acc, "proposal_width": step})


# ----------------------------------------------------------------------------
# Ornstein–Uhlenbeck momentum kernel


def ou_covariance(t: float, cfg: SimConfig, d: int = 1) -> np.ndarray:
    """C(t) = M − E M Eᵀ with E = exp(−γM⁻¹t); equals M(id − exp(−2M⁻¹γt))."""
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    M, G = cfg.mass_matrix(d), cfg.gamma_matrix(d)
    E = expm(-G @ np.linalg.inv(M) * t)
    C = M - E @ M @ E.T
    return 0.5 * (C + C.T)


def ou_kernel(t: float, p, r, cfg: SimConfig) -> float | np.ndarray:
    """Transition density K(t, p, r) of dp = −γM⁻¹p dt + σ dw from r to p.

    Gaussian with mean exp(−γM⁻¹t) r and covariance C(t)/β; tends to
    f_P(p) as t → ∞.
    """
    p = np.atleast_1d(np.asarray(p, float))
    r = np.atleast_1d(np.asarray(r, float))
    d = p.shape[-1]
    M, G = cfg.mass_matrix(d), cfg.gamma_matrix(d)
    E = expm(-G @ np.linalg.inv(M) * t)
    C = ou_covariance(t, cfg, d) / cfg.beta
    L = np.linalg.cholesky(C)
    z = np.linalg.solve(L, (p - r @ E.T).T if p.ndim > 1 else p - E @ r)
    quad = np.sum(z * z, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return np.exp(-0.5 * quad - 0.5 * logdet - 0.5 * d * np.log(2 * np.pi))


def momentum_density(p, cfg: SimConfig) -> float | np.ndarray:
    """f_P(p) = N(p; 0, M/β)."""
    p = np.atleast_1d(np.asarray(p, float))
    d = p.shape[-1]
    C = cfg.mass_matrix(d) / cfg.beta
    L = np.linalg.cholesky(C)
    z = np.linalg.solve(L, p.T)
    quad = np.sum(z * z, axis=0)
    return np.exp(-0.5 * quad - np.sum(np.log(np.diag(L))) - 0.5 * d * np.log(2 * np.pi))


# ----------------------------------------------------------------------------
# trajectories


def simulate_trajectory(state: SimState, cfg: SimConfig, model: PotentialModel, rng,
                        dynamics: str = "langevin", stride: int = 1):
    """Integrate ``cfg.n_steps`` steps, storing every ``stride``-th state.

    Returns ``(t, q, p)`` arrays; the initial state is row 0.
    """
    if dynamics not in ("langevin", "smoluchowski"):
        raise ValueError(f"unknown dynamics {dynamics!r}")
    q, p = np.asarray(state.q, float), np.asarray(state.p, float)
    integ = LangevinIntegrator(cfg, model) if dynamics == "langevin" else SmoluchowskiIntegrator(cfg, model)
    ts, qs, ps = [state.t], [q], [p]
    for k in range(1, cfg.n_steps + 1):
        if dynamics == "langevin":
            q, p = integ.step(q, p, rng)
        else:
            q = integ.step(q, rng)
        if k % stride == 0:
            ts.append(state.t + k * cfg.dt)
            qs.append(q)
            ps.append(p)
    return np.asarray(ts), np.asarray(qs), np.asarray(ps)


def write_trajectory_csv(path, t, q, p) -> None:
    """CSV with header ``t,q1..qd,p1..pd``."""
    q = np.asarray(q).reshape(len(t), -1)
    p = np.asarray(p).reshape(len(t), -1)
    d = q.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"q{i + 1}" for i in range(d)] + [f"p{i + 1}" for i in range(d)])
        for row in zip(t, q, p):
            w.writerow([repr(float(row[0]))] + [repr(float(x)) for x in row[1]] + [repr(float(x)) for x in row[2]])
