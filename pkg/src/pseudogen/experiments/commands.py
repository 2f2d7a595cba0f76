"""Experiment commands. Each writes CSV files into ``out`` and returns their names.

Monte Carlo operators come from Ulam simulations; ``propagator = spectral``
selects the deterministic phase-space propagator (1-D periodic potentials)
where sampling noise would mask the quantity being measured.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..operators import (
    OperatorMatrix,
    PhaseSpacePropagator,
    UlamGrid,
    build_g2_matrix,
    build_smoluchowski_transfer,
    build_spatial_transfer,
    build_transfer_sequence,
    exponential_operator,
    smoluchowski_propagator,
    taylor_operator,
)
from ..spectral import compare_eigenfunctions, compute_spectrum, write_eigenfunctions_csv, write_spectrum_csv
from .config import RunConfig


class ScanWarning(UserWarning):
    """A distance or defect curve crossed its threshold more than once."""


@dataclass
class CommandResult:
    files: list[str]
    summary: dict = field(default_factory=dict)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return repr(float(x))


def write_csv(path, header, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def _setup(config: RunConfig, seed):
    model = config.model()
    cfg = config.sim_config(seed)
    n_cells = config.get_int("grid", "n_cells", 256, minimum=4)
    grid = UlamGrid.build(model, n_cells if model.dimension == 1 else (n_cells,) * model.dimension, cfg.beta)
    return model, cfg, grid


def _propagator(config: RunConfig, model, cfg) -> PhaseSpacePropagator:
    return PhaseSpacePropagator(model, cfg, config.get_int("grid", "n_q", 33, minimum=3),
                                config.get_int("grid", "n_hermite", 32, minimum=2))


def _spectral_op(prop: PhaseSpacePropagator, block: np.ndarray, grid: UlamGrid, t: float) -> OperatorMatrix:
    return OperatorMatrix(prop.grid_matrix_from(block, grid.centers), float(t), "phase_space_spectral",
                          grid.weights, None, {"n_q": prop.n_q, "n_hermite": prop.n_hermite})


def eigenvalue_stderr(P: OperatorMatrix, u: np.ndarray) -> float:
    """Delta-method standard error of an Ulam eigenvalue with right eigenvector u.

    Rows are multinomial with ``P.samples_per_cell`` draws; the left
    eigenvector is approximated by w·u (reversible dynamics).
    """
    n = P.samples_per_cell
    if not n:
        return 0.0
    u = np.real(u)
    A = P.matrix
    var_rows = (A @ (u * u) - (A @ u) ** 2) / n
    wu = P.weights * u
    return float(np.sqrt(np.sum(wu * wu * np.maximum(var_rows, 0.0))) / abs(np.sum(wu * u)))


def _sign_changes(v: np.ndarray, periodic: bool) -> list[int]:
    """Indices i where sign(v_i) != sign(v_{i+1}) (wrapping when periodic)."""
    s = np.sign(v)
    nxt = np.roll(s, -1)
    idx = np.flatnonzero(s != nxt)
    if not periodic:
        idx = idx[idx < len(v) - 1]
    return idx.tolist()


# ----------------------------------------------------------------------------
# eigenfunctions


def cmd_eigenfunctions(config: RunConfig, out, seed=None, threads: int = 1) -> CommandResult:
    """Dominant eigenpairs of S^t, P^t_Smol and E^t on the cell grid."""
    out = Path(out)
    model, cfg, grid = _setup(config, seed)
    t = config.get_float("experiment", "lag", 0.2, positive=True)
    n_per_cell = config.get_int("experiment", "n_per_cell", 2000, minimum=100)
    k = config.get_int("experiment", "n_modes", 2, minimum=2)
    ops = {
        "spatial": build_spatial_transfer(grid, t, cfg, model, n_per_cell, threads=threads),
        "smoluchowski": build_smoluchowski_transfer(grid, t, cfg, model, n_per_cell, threads=threads),
        "exponential": exponential_operator(build_g2_matrix(grid, cfg, model), t),
    }
    files = ["potential.csv"]
    centers = grid.centers
    V = model.energy(centers)
    cols = ["cell_center"] if grid.dimension == 1 else [f"cell_center{a + 1}" for a in range(grid.dimension)]
    write_csv(out / "potential.csv", cols + ["V"], [(*c, v) for c, v in zip(centers, V)])
    specs = {}
    summary_rows, crossing_rows = [], []
    for name, op in ops.items():
        spec = compute_spectrum(op, k)
        specs[name] = spec
        write_spectrum_csv(out / f"spectrum_{name}.csv", spec)
        write_eigenfunctions_csv(out / f"eigenfunctions_{name}.csv", centers, spec)
        files += [f"spectrum_{name}.csv", f"eigenfunctions_{name}.csv"]
    periodic = bool(grid.periodic[0]) if grid.dimension == 1 else False
    for name, spec in specs.items():
        u0 = spec.eigenvectors[:, 0].real
        var0 = float(np.ptp(u0) / np.max(np.abs(u0)))
        u1 = spec.eigenvectors[:, 1].real
        se = eigenvalue_stderr(ops[name], u1)
        dist = compare_eigenfunctions(u1, specs["spatial"].eigenvectors[:, 1], grid.weights)
        changes = _sign_changes(u1, periodic) if grid.dimension == 1 else []
        for i in changes:
            j = (i + 1) % grid.n_cells
            L = grid.edges[0][-1] - grid.edges[0][0]
            x = 0.5 * (centers[i, 0] + centers[j, 0] + (L if j < i else 0.0))
            crossing_rows.append((name, i, grid.edges[0][0] + (x - grid.edges[0][0]) % L))
        summary_rows.append((name, spec.eigenvalues[1].real, se, len(changes), dist, var0))
    write_csv(out / "eigen_summary.csv",
              ["operator", "lambda1", "stderr_lambda1", "sign_changes", "distance_to_spatial", "u0_variation"],
              summary_rows)
    write_csv(out / "sign_crossings.csv", ["operator", "cell", "q"], crossing_rows)
    files += ["eigen_summary.csv", "sign_crossings.csv"]
    return CommandResult(files, {"specs": specs, "summary": summary_rows, "crossings": crossing_rows})


# ----------------------------------------------------------------------------
# lag scan


def _subdominant_vector(op: OperatorMatrix) -> np.ndarray:
    return compute_spectrum(op, 2).eigenvectors[:, 1].real


def lag_threshold(distance, t_grid, d_grid, nu: float, tol: float):
    """sup{t : d(t) ≤ ν} on the scan, refined by bisection to ``tol``.

    Returns ``(t_nu, capped, n_crossings)``. ``capped`` is set when the
    last scanned point is still below ν.
    """
    below = np.asarray(d_grid) <= nu
    ups = [i for i in range(len(below) - 1) if below[i] and not below[i + 1]]
    n_cross = int(np.sum(below[:-1] != below[1:]))
    if below[-1]:
        return float(t_grid[-1]), True, n_cross
    if not ups:
        return float(t_grid[0]), False, n_cross
    if len(ups) > 1:
        warnings.warn(f"distance curve crosses nu={nu} {n_cross} times; using the widest bracket",
                      ScanWarning, stacklevel=2)
    i = ups[-1]
    lo, hi = float(t_grid[i]), float(t_grid[i + 1])
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if distance(mid) <= nu:
            lo = mid
        else:
            hi = mid
    return lo, False, n_cross


def fit_lag_law(eps, t_nu):
    """Least squares t = c₁ log(ε) ε⁻² + c₂; returns (c₁, c₂, R²)."""
    eps = np.asarray(eps, float)
    y = np.asarray(t_nu, float)
    X = np.column_stack([np.log(eps) / eps**2, np.ones_like(eps)])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else float("nan")
    return float(coef[0]), float(coef[1]), float(r2)


def cmd_lagscan(config: RunConfig, out, seed=None, threads: int = 1) -> CommandResult:
    """t_ν(ε): largest lag with subdominant eigenfunctions of S^t and P^t_Smol within ν."""
    out = Path(out)
    model, cfg, grid = _setup(config, seed)
    config.get_choice("experiment", "propagator", {"spectral"}, "spectral")
    eps_list = config.get_floats("experiment", "epsilons", np.geomspace(0.05, 0.5, 8), positive=True)
    nu = config.get_float("experiment", "nu", 0.05, positive=True)
    t_step = config.get_float("experiment", "t_step", 0.02, positive=True)
    t_max = config.get_float("experiment", "t_max", 1.5, positive=True)
    tol = config.get_float("experiment", "tolerance", 1e-3, positive=True)
    n_scan = max(1, int(round(t_max / t_step)))
    # P^t_Smol is a semigroup in t: its eigenvectors are those of G₂ for every lag
    ref = _subdominant_vector(build_g2_matrix(grid, cfg, model))
    w = grid.weights

    def scan(eps):
        prop = _propagator(config, model, cfg.with_(gamma=1.0 / eps))
        ts = t_step * np.arange(1, n_scan + 1)
        ds = [compare_eigenfunctions(_subdominant_vector(_spectral_op(prop, b, grid, t)), ref, w)
              for t, b in zip(ts, prop.collocation_sequence(t_step, n_scan))]

        def dist(t):
            return compare_eigenfunctions(
                _subdominant_vector(_spectral_op(prop, prop.collocation_operator(t), grid, t)), ref, w)

        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ScanWarning)
            t_nu, capped, n_cross = lag_threshold(dist, ts, ds, nu, tol)
        return eps, ts, ds, t_nu, capped, n_cross, [str(c.message) for c in caught]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(scan, eps_list))
    else:
        results = [scan(e) for e in eps_list]
    rows, curve_rows = [], []
    for eps, ts, ds, t_nu, capped, n_cross, msgs in results:
        for m in msgs:
            warnings.warn(f"eps={eps!r}: {m}", ScanWarning, stacklevel=2)
        rows.append((eps, 1.0 / eps, t_nu, capped, n_cross))
        curve_rows += [(eps, t, d) for t, d in zip(ts, ds)]
    fit_rows = [r for r in rows if not r[3]]
    if len(fit_rows) >= 2:
        c1, c2, r2 = fit_lag_law([r[0] for r in fit_rows], [r[2] for r in fit_rows])
    else:
        c1 = c2 = r2 = float("nan")
    write_csv(out / "lagscan.csv", ["epsilon", "gamma", "t_nu", "capped", "crossings"], rows)
    write_csv(out / "lagscan_curves.csv", ["epsilon", "t", "distance"], curve_rows)
    write_csv(out / "lagscan_fit.csv", ["key", "value"],
              [("c1", c1), ("c2", c2), ("r2", r2), ("n_fit", len(fit_rows)), ("nu", nu),
               ("tolerance", tol), ("t_max", t_step * n_scan)])
    return CommandResult(["lagscan.csv", "lagscan_curves.csv", "lagscan_fit.csv"],
                         {"rows": rows, "c1": c1, "c2": c2, "r2": r2})


# ----------------------------------------------------------------------------
# extrapolation


def cmd_extrapolate(config: RunConfig, out, seed=None, threads: int = 1) -> CommandResult:
    """λ¹(S^{nτ}) against λ¹(S^τ)ⁿ, λ¹(R^τ)ⁿ and λ¹(E^τ)ⁿ for n = 1..n_max."""
    out = Path(out)
    model, cfg, grid = _setup(config, seed)
    tau = config.get_float("experiment", "lag", 0.2, positive=True)
    n_max = config.get_int("experiment", "n_max", 10, minimum=1)
    kind = config.get_choice("experiment", "propagator", {"ulam", "spectral"}, "ulam")
    if kind == "ulam":
        n_per_cell = config.get_int("experiment", "n_per_cell", 2000, minimum=100)
        steps = int(round(tau / cfg.dt))
        if steps < 1 or abs(steps * cfg.dt - tau) > 1e-9 * tau:
            raise config.error("experiment", "lag", f"lag {tau} is not a multiple of dt = {cfg.dt}")
        ops = build_transfer_sequence(grid, [k * steps * cfg.dt for k in range(1, n_max + 1)], cfg, model,
                                      n_per_cell, "langevin", threads=threads)
    else:
        prop = _propagator(config, model, cfg)
        ops = [_spectral_op(prop, b, grid, (k + 1) * tau) for k, b in enumerate(prop.collocation_sequence(tau, n_max))]
    lam_S, se_S = [], []
    for op in ops:
        spec = compute_spectrum(op, 2)
        lam_S.append(float(spec.eigenvalues[1].real))
        se_S.append(eigenvalue_stderr(op, spec.eigenvectors[:, 1]))
    g2 = build_g2_matrix(grid, cfg, model)
    lam_R = float(compute_spectrum(taylor_operator(g2, tau), 2).eigenvalues[1].real)
    lam_E = float(compute_spectrum(exponential_operator(g2, tau), 2).eigenvalues[1].real)
    rows = []
    for n in range(1, n_max + 1):
        rows.append((n, lam_S[n - 1], se_S[n - 1], lam_S[0] ** n, n * abs(lam_S[0]) ** (n - 1) * se_S[0],
                     lam_R**n, lam_E**n))
    write_csv(out / "extrapolate.csv",
              ["n", "lambda_S_ntau", "stderr_S_ntau", "lambda_S_tau_pow", "stderr_S_tau_pow", "lambda_R_pow",
               "lambda_E_pow"], rows)
    gaps = [("tau", tau), ("gamma", cfg.gamma), ("lambda_S", lam_S[0]), ("stderr_S", se_S[0]),
            ("lambda_R", lam_R), ("lambda_E", lam_E), ("gap_R", abs(lam_S[0] - lam_R)),
            ("gap_E", abs(lam_S[0] - lam_E))]
    write_csv(out / "extrapolate_anchors.csv", ["key", "value"], gaps)
    return CommandResult(["extrapolate.csv", "extrapolate_anchors.csv"], {"rows": rows, **dict(gaps)})


# ----------------------------------------------------------------------------
# semigroup defect


def dominant_basis(g2: OperatorMatrix, k: int) -> np.ndarray:
    """w-orthonormal basis of the top-k eigenvectors of G₂."""
    V = compute_spectrum(g2, k).eigenvectors.real
    s = np.sqrt(g2.weights)
    Q, _ = np.linalg.qr(s[:, None] * V)
    return Q / s[:, None]


def restricted_norm(D: np.ndarray, V: np.ndarray, w: np.ndarray) -> float:
    """‖Π D Π‖ in the w-weighted operator norm, Π the projection onto span V."""
    return float(np.linalg.norm(V.T @ (w[:, None] * (D @ V)), 2))


def cmd_semigroup_defect(config: RunConfig, out, seed=None, threads: int = 1) -> CommandResult:
    """d(t) = ‖S^{2t} − (S^t)²‖ on the dominant subspace, and the lag where it decays."""
    out = Path(out)
    model, cfg, grid = _setup(config, seed)
    t_values = config.get_floats("experiment", "t_values", (0.05, 0.1, 0.2, 0.3, 0.5, 0.8, 1.2, 2.0), positive=True)
    k = config.get_int("experiment", "subspace", 5, minimum=1)
    thr = config.get_float("experiment", "threshold", 0.05, positive=True)
    tol = config.get_float("experiment", "tolerance", 1e-3, positive=True)
    gammas = config.get_floats("experiment", "gammas", [cfg.gamma], positive=True)
    kind = config.get_choice("experiment", "propagator", {"ulam", "spectral"}, "spectral")
    t_values = sorted(t_values)
    g2 = build_g2_matrix(grid, cfg, model)
    V = dominant_basis(g2, k)
    w = grid.weights
    rows, decay_rows = [], []
    for gam in gammas:
        c = cfg.with_(gamma=gam)
        if kind == "spectral":
            prop = _propagator(config, model, c)

            def S(t, prop=prop):
                return prop.grid_matrix_from(prop.collocation_operator(t), grid.centers)
        else:
            n_per_cell = config.get_int("experiment", "n_per_cell", 2000, minimum=100)
            lags = sorted({*t_values, *(2 * t for t in t_values)})
            seq = build_transfer_sequence(grid, lags, c, model, n_per_cell, "langevin", threads=threads)
            table = {round(t, 12): op.matrix for t, op in zip(lags, seq)}

            def S(t, table=table):
                return table[round(t, 12)]

        def defect(t, S=S):
            St = S(t)
            return restricted_norm(S(2 * t) - St @ St, V, w)

        ds = [defect(t) for t in t_values]
        for t, d in zip(t_values, ds):
            P1 = smoluchowski_propagator(g2, t / gam).matrix
            P2 = smoluchowski_propagator(g2, 2 * t / gam).matrix
            rows.append((gam, t, d, restricted_norm(P2 - P1 @ P1, V, w)))
        # decay lag: start of the final run of scan points below the threshold
        above = [i for i, d in enumerate(ds) if d >= thr]
        if not above:
            lag = t_values[0]
        elif above[-1] == len(ds) - 1:
            lag = float("nan")
        else:
            lo, hi = t_values[above[-1]], t_values[above[-1] + 1]
            if kind == "spectral":
                while hi - lo > tol:
                    mid = 0.5 * (lo + hi)
                    lo, hi = (mid, hi) if defect(mid) >= thr else (lo, mid)
            lag = hi
        decay_rows.append((gam, thr, lag))
    write_csv(out / "semigroup_defect.csv", ["gamma", "t", "defect", "defect_smoluchowski"], rows)
    write_csv(out / "semigroup_decay.csv", ["gamma", "threshold", "decay_lag"], decay_rows)
    return CommandResult(["semigroup_defect.csv", "semigroup_decay.csv"], {"rows": rows, "decay": decay_rows})


# ----------------------------------------------------------------------------
# overdamped limit


def cmd_overdamped_limit(config: RunConfig, out, seed=None, threads: int = 1) -> CommandResult:
    """Spatial propagator with γ = 1/ε at lag t/ε against exp(tG₂), for decreasing ε."""
    out = Path(out)
    model, cfg, grid = _setup(config, seed)
    eps_list = config.get_floats("experiment", "epsilons", (0.2, 0.1, 0.05), positive=True)
    t = config.get_float("experiment", "smoluchowski_lag", 0.05)
    if t < 0:
        raise config.error("experiment", "smoluchowski_lag", "must be nonnegative")
    k = config.get_int("experiment", "subspace", 5, minimum=2)
    g2 = build_g2_matrix(grid, cfg, model)
    V = dominant_basis(g2, k)
    w = grid.weights
    rows = []
    if t == 0.0:
        ref = np.eye(grid.n_cells)
    else:
        P_ref = smoluchowski_propagator(g2, t)
        ref = P_ref.matrix
        ref_spec = compute_spectrum(P_ref, 2)
    for eps in eps_list:
        lag = t / eps
        if t == 0.0:
            S = np.eye(grid.n_cells)
            rows.append((eps, lag, 0.0, 0.0, restricted_norm(S - ref, V, w), 1.0, 1.0))
            continue
        prop = _propagator(config, model, cfg.with_(gamma=1.0 / eps))
        op = _spectral_op(prop, prop.collocation_operator(lag), grid, lag)
        spec = compute_spectrum(op, 2)
        lam, lam_ref = float(spec.eigenvalues[1].real), float(ref_spec.eigenvalues[1].real)
        dist = compare_eigenfunctions(spec.eigenvectors[:, 1], ref_spec.eigenvectors[:, 1], w)
        rows.append((eps, lag, dist, abs(lam - lam_ref), restricted_norm(op.matrix - ref, V, w), lam, lam_ref))
    write_csv(out / "overdamped_limit.csv",
              ["epsilon", "lag_langevin", "eigenfunction_distance", "eigenvalue_gap", "operator_distance",
               "lambda_langevin", "lambda_smoluchowski"], rows)
    return CommandResult(["overdamped_limit.csv"], {"rows": rows})


COMMANDS = {
    "eigenfunctions": cmd_eigenfunctions,
    "lagscan": cmd_lagscan,
    "extrapolate": cmd_extrapolate,
    "semigroup_defect": cmd_semigroup_defect,
    "overdamped_limit": cmd_overdamped_limit,
}
