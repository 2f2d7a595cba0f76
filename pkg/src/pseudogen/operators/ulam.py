"""Monte Carlo Ulam discretization of the spatial Langevin transfer operator
and of the Smoluchowski propagator.

Initial points of cell i are drawn from f_Q restricted to the cell, momenta
from f_P, and every cell owns independent counter-based streams, so the
assembled counts are identical for any thread count. One simulation can
record bin counts at many lags at once.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..potentials import PotentialModel
from ..rng import BlockNoise, stream
from ..sde import LangevinIntegrator, SimConfig, SmoluchowskiIntegrator, sample_momenta
from .grid import UlamGrid
from .matrix import OperatorMatrix, normalize_rows

BLOCK_CELLS = 16
EMPTY_WEIGHT = 1e-14


def resolve_seed(cfg: SimConfig, rng) -> int:
    """Master seed for counter-based streams; a Generator is reduced to one draw."""
    if rng is None:
        return int(cfg.master_seed)
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    return int(rng.integers(2**63))


def lag_steps(t: float, dt: float) -> tuple[int, float]:
    """Number of steps for lag t and the step size that hits t exactly."""
    if not t > 0:
        raise ValueError(f"lag must be positive, got {t}")
    n = max(1, int(round(t / dt)))
    return n, t / n


def cell_energy_floor(grid: UlamGrid, model: PotentialModel, sub: int = 9) -> np.ndarray:
    """Lower bound of V on each cell from a sub-grid minimum and a Lipschitz margin."""
    d = grid.dimension
    s = np.linspace(0.0, 1.0, sub)
    floors = np.empty(grid.n_cells)
    mesh = np.stack(np.meshgrid(*([s] * d), indexing="ij"), axis=-1).reshape(-1, d)
    widths = grid.widths
    lo_all = np.stack(np.meshgrid(*[e[:-1] for e in grid.edges], indexing="ij"), axis=-1).reshape(-1, d)
    pts = lo_all[:, None, :] + mesh[None, :, :] * widths
    V = model.energy(pts)
    G = np.linalg.norm(model.gradient(pts), axis=-1)
    spacing = np.linalg.norm(widths) / (sub - 1)
    floors[:] = V.min(axis=1) - 1.5 * G.max(axis=1) * spacing
    return floors


def sample_in_cell(grid: UlamGrid, model: PotentialModel, cell: int, n: int, rng: np.random.Generator,
                   floor: float | None = None) -> np.ndarray:
    """n draws from f_Q restricted to the cell, by rejection against the cell maximum of f_Q."""
    lo, hi = grid.cell_bounds(cell)
    if floor is None:
        floor = cell_energy_floor(grid, model)[cell]
    beta = grid.beta
    out = np.empty((0, grid.dimension))
    while len(out) < n:
        m = max(2 * (n - len(out)), 64)
        x = lo + rng.random((m, grid.dimension)) * (hi - lo)
        acc = rng.random(m) < np.exp(-beta * (model.energy(x) - floor))
        out = np.concatenate([out, x[acc]])
    return out[:n]


def simulate_counts(grid: UlamGrid, model: PotentialModel, cfg: SimConfig, n_per_cell: int,
                    record_steps, dynamics: str = "langevin", seed: int | None = None,
                    threads: int = 1, purpose: str | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bin counts C[k, i, j] = #{trajectories from cell i in cell j after record_steps[k] steps}.

    Returns ``(steps, counts, flagged_cells)``. Counts are uint16 when
    ``n_per_cell`` fits, int32 otherwise.
    """
    if dynamics not in ("langevin", "smoluchowski"):
        raise ValueError(f"unknown dynamics {dynamics!r}")
    if n_per_cell < 1:
        raise ValueError("n_per_cell must be positive")
    steps = np.unique(np.asarray(record_steps, dtype=np.int64))
    if steps[0] < 0:
        raise ValueError("record steps must be nonnegative")
    seed = int(cfg.master_seed if seed is None else seed)
    purpose = purpose or dynamics
    N, d = grid.n_cells, grid.dimension
    dtype = np.uint16 if n_per_cell < 2**16 else np.int32
    counts = np.zeros((len(steps), N, N), dtype=dtype)
    floors = cell_energy_floor(grid, model)
    flagged = np.flatnonzero(grid.weights < EMPTY_WEIGHT)
    active = np.setdiff1d(np.arange(N), flagged)
    blocks = [active[s:s + BLOCK_CELLS] for s in range(0, len(active), BLOCK_CELLS)]
    integ = LangevinIntegrator(cfg, model) if dynamics == "langevin" else SmoluchowskiIntegrator(cfg, model)

    def run_block(cells):
        qs, ps = [], []
        for c in cells:
            g = stream(seed, purpose + ":init", int(c))
            qs.append(sample_in_cell(grid, model, int(c), n_per_cell, g, floors[c]))
            ps.append(sample_momenta(n_per_cell, cfg, d, g))
        q, p = np.concatenate(qs), np.concatenate(ps)
        noise = BlockNoise.for_cells(seed, purpose + ":noise", cells, [n_per_cell] * len(cells), d)
        local = np.repeat(np.arange(len(cells)), n_per_cell) * N
        k = 0
        for step in range(steps[-1] + 1):
            if step > 0:
                if dynamics == "langevin":
                    q, p = integ.step(q, p, noise)
                else:
                    q = integ.step(q, noise)
            if step == steps[k]:
                binned = np.bincount(local + grid.locate(q), minlength=len(cells) * N)
                counts[k, cells] = binned.reshape(len(cells), N)
                k += 1

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_block, blocks))
    else:
        for b in blocks:
            run_block(b)
    for i in flagged:
        counts[:, i, i] = n_per_cell
    return steps, counts, flagged


def transfer_from_counts(counts: np.ndarray, grid: UlamGrid, lag: float, kind: str, n_per_cell: int,
                         meta: dict | None = None) -> OperatorMatrix:
    P, flagged = normalize_rows(counts, grid.weights, EMPTY_WEIGHT)
    m = dict(meta or {})
    m["flagged_cells"] = [int(i) for i in flagged]
    return OperatorMatrix(P, float(lag), kind, grid.weights, int(n_per_cell), m)


def build_transfer_sequence(grid: UlamGrid, lags, cfg: SimConfig, model: PotentialModel, n_per_cell: int,
                            dynamics: str = "langevin", rng=None, threads: int = 1) -> list[OperatorMatrix]:
    """Ulam matrices at several lags from one ensemble simulation.

    All lags must be multiples of ``cfg.dt`` (to 1e-9 relative).
    """
    seed = resolve_seed(cfg, rng)
    lags = [float(t) for t in lags]
    steps = []
    for t in lags:
        n = int(round(t / cfg.dt))
        if n < 1 or abs(n * cfg.dt - t) > 1e-9 * t:
            raise ValueError(f"lag {t} is not a positive multiple of dt = {cfg.dt}")
        steps.append(n)
    uniq, counts, _ = simulate_counts(grid, model, cfg, n_per_cell, steps, dynamics, seed, threads)
    kind = "spatial_transfer" if dynamics == "langevin" else "smoluchowski_transfer"
    out = []
    for t, n in zip(lags, steps):
        k = int(np.searchsorted(uniq, n))
        meta = {"dt": cfg.dt, "steps": n, "gamma": cfg.gamma, "seed": seed}
        out.append(transfer_from_counts(counts[k], grid, t, kind, n_per_cell, meta))
    return out


def _build_single(grid, t, cfg, model, n_per_cell, rng, threads, dynamics):
    if n_per_cell < 100:
        raise ValueError("n_per_cell must be at least 100")
    n, dt = lag_steps(t, cfg.dt)
    return build_transfer_sequence(grid, [n * dt], cfg.with_(dt=dt), model, n_per_cell, dynamics, rng, threads)[0]


def build_spatial_transfer(grid: UlamGrid, t: float, cfg: SimConfig, model: PotentialModel,
                           n_per_cell: int = 2000, rng=None, threads: int = 1) -> OperatorMatrix:
    """Ulam matrix of the spatial transfer operator S^t (Langevin, momenta from f_P)."""
    return _build_single(grid, t, cfg, model, n_per_cell, rng, threads, "langevin")


def build_smoluchowski_transfer(grid: UlamGrid, t: float, cfg: SimConfig, model: PotentialModel,
                                n_per_cell: int = 2000, rng=None, threads: int = 1) -> OperatorMatrix:
    """Ulam matrix of the Smoluchowski propagator P^t_Smol."""
    return _build_single(grid, t, cfg, model, n_per_cell, rng, threads, "smoluchowski")
