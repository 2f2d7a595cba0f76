"""Eigen-analysis in the f_Q-weighted inner product, metastable partitions,
and the two-sided bound on the sum of metastable self-transition
probabilities.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.linalg import eig, eigh, eigvals

from .operators.generator import transition_probability
from .operators.grid import UlamGrid
from .operators.matrix import OperatorMatrix

COMPLEX_TOL = 1e-3


class MetastabilityWarning(UserWarning):
    """A requested partition is not supported by a spectral gap."""


class SpectralError(RuntimeError):
    """Eigensolver failure, annotated with the operator it was applied to."""


@dataclass(frozen=True, eq=False)
class SpectrumResult:
    """Top eigenpairs sorted by descending real part (ties: ascending imaginary part).

    Eigenvectors are columns with ‖v‖_w = 1 and their largest-magnitude
    entry real and positive. ``residuals[i] = ‖A v_i − λ_i v_i‖_w``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray
    weights: np.ndarray
    kind: str
    lag: float
    min_real: float

    @property
    def max_imag(self) -> float:
        return float(np.max(np.abs(self.eigenvalues.imag))) if len(self.eigenvalues) else 0.0

    @property
    def real_modes(self) -> np.ndarray:
        """Indices of modes with |Im λ| ≤ 1e-3."""
        return np.flatnonzero(np.abs(self.eigenvalues.imag) <= COMPLEX_TOL)


def _wnorm(v: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(w[:, None] * np.abs(v) ** 2, axis=0))


def _normalize(V: np.ndarray, w: np.ndarray) -> np.ndarray:
    V = V / _wnorm(V, w)
    idx = np.argmax(np.abs(V), axis=0)
    lead = V[idx, np.arange(V.shape[1])]
    return V * (np.abs(lead) / lead)


def compute_spectrum(matrix: OperatorMatrix, k: int) -> SpectrumResult:
    """Top-k eigenpairs of an operator matrix.

    Operators certified self-adjoint in ⟨·,·⟩_w are symmetrized with
    diag(√w) and solved with a symmetric eigensolver, so their spectra are
    exactly real.
    """
    A = matrix.matrix
    N = A.shape[0]
    if not 1 <= k <= N:
        raise ValueError(f"k must be in [1, {N}], got {k}")
    w = matrix.weights
    try:
        if matrix.self_adjoint:
            s = np.sqrt(w)
            S = s[:, None] * A / s[None, :]
            lam, Y = eigh(0.5 * (S + S.T))
            V = Y / s[:, None]
            lam = lam.astype(complex)
            V = V.astype(complex)
        else:
            lam, V = eig(A)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SpectralError(f"eigensolver failed on {matrix.kind} (lag {matrix.lag}, N {N}): {exc}") from exc
    order = np.lexsort((lam.imag, -lam.real))
    min_real = float(lam.real.min())
    lam, V = lam[order[:k]], V[:, order[:k]]
    V = _normalize(V, w)
    if matrix.self_adjoint:
        lam, V = lam.real.astype(complex), V.real.astype(complex)
    R = A @ V - V * lam
    res = _wnorm(R, w)
    return SpectrumResult(lam, V, res, w, matrix.kind, matrix.lag, min_real)


def compare_eigenfunctions(u: np.ndarray, v: np.ndarray, w: np.ndarray) -> float:
    """min over s = ±1 of ‖û − s v̂‖_w for w-normalized real parts û, v̂."""
    u = np.real(np.asarray(u))
    v = np.real(np.asarray(v))
    w = np.asarray(w, float)
    nu, nv = np.sqrt(np.sum(w * u * u)), np.sqrt(np.sum(w * v * v))
    if nu == 0 or nv == 0:
        raise ValueError("cannot compare a zero vector")
    u, v = u / nu, v / nv
    return float(min(np.sqrt(np.sum(w * (u - v) ** 2)), np.sqrt(np.sum(w * (u + v) ** 2))))


def _has_gap(lam: np.ndarray, n: int) -> bool:
    """True if the first n eigenvalues are separated from the rest."""
    if len(lam) <= n:
        return True
    r = lam.real
    return (r[n - 1] - r[n]) > (r[0] - r[n - 1])


def metastable_partition(spec: SpectrumResult, n: int, grid: UlamGrid | None = None) -> list[np.ndarray]:
    """Cell sets A_1..A_n from the dominant eigenvectors.

    n = 2 splits by the sign of the first nonconstant eigenvector; larger
    n clusters the rows of the dominant-eigenvector embedding with k-means
    (fixed seed). Sets are returned sorted by their smallest cell index.
    """
    if n < 2:
        raise ValueError("need at least two sets")
    if n > len(spec.eigenvalues):
        raise ValueError(f"n = {n} exceeds the {len(spec.eigenvalues)} computed modes")
    if not _has_gap(spec.eigenvalues, n):
        warnings.warn(f"no spectral gap after {n} eigenvalues: partition is not metastable",
                      MetastabilityWarning, stacklevel=2)
    if n == 2:
        v = spec.eigenvectors[:, 1].real
        pos = v >= 0
        if pos.all() or (~pos).all():
            warnings.warn("subdominant eigenvector has no sign change; returning a single set",
                          MetastabilityWarning, stacklevel=2)
            return [np.arange(len(v))]
        sets = [np.flatnonzero(pos), np.flatnonzero(~pos)]
    else:
        X = spec.eigenvectors[:, 1:n].real
        _, labels = kmeans2(X, n, minit="++", seed=np.random.default_rng(0))
        sets = [np.flatnonzero(labels == c) for c in range(n)]
        sets = [s for s in sets if len(s)]
        if len(sets) < n:
            warnings.warn(f"k-means produced {len(sets)} nonempty sets instead of {n}",
                          MetastabilityWarning, stacklevel=2)
    return sorted(sets, key=lambda s: int(s[0]))


@dataclass(frozen=True)
class MetastabilityBounds:
    """Bracket lower ≤ Σ_i p(t, A_i, A_i) ≤ upper; unpacks to (lower, upper, diagonal_sum).

    ``a`` is the smallest real eigenvalue of the finite matrix, a
    surrogate for the lower end of the continuous spectrum.
    """

    lower: float
    upper: float
    diagonal_sum: float
    rho: tuple[float, ...]
    eigenvalues: tuple[float, ...]
    a: float
    c: float
    slack: float
    excluded_modes: tuple[int, ...] = ()

    def __iter__(self):
        return iter((self.lower, self.upper, self.diagonal_sum))

    @property
    def holds(self) -> bool:
        return self.lower <= self.diagonal_sum <= self.upper + self.slack


class BoundViolation(AssertionError):
    """The computed diagonal sum lies outside the bracket."""


def metastability_bounds(P: OperatorMatrix, spec: SpectrumResult, partition, grid: UlamGrid | None = None,
                         slack: float = 0.02, strict: bool = True) -> MetastabilityBounds:
    """Bounds on the summed self-transition probabilities of a partition.

    With ρ_j = ‖Π v_j‖²_w (Π the w-orthogonal projection onto the span of
    the indicators) and a the smallest real eigenvalue,

        lower = 1 + Σ_{j≥2} ρ_j λ_j + a Σ_{j≥2} (1 − ρ_j),
        upper = 1 + Σ_{j≥2} λ_j.

    The diagonal sum is tr(ΠPΠ) = Σ_j λ_j ‖Π v_j‖²_w over all modes, and
    Σ_j ‖Π v_j‖²_w = n; hence the squared norm. Modes with |Im λ| > 1e-3
    are skipped with a warning.
    """
    n = len(partition)
    w = P.weights if grid is None else grid.weights
    keep = spec.real_modes
    if len(keep) < n:
        raise ValueError(f"only {len(keep)} real modes available for {n} sets")
    idx = keep[:n]
    excluded = tuple(int(i) for i in range(idx[-1]) if i not in set(idx))
    if excluded:
        warnings.warn(f"complex modes {excluded} excluded from the bounds", MetastabilityWarning, stacklevel=2)
    lam = spec.eigenvalues[idx].real
    V = spec.eigenvectors[:, idx].real
    V = V / np.sqrt(np.sum(w[:, None] * V * V, axis=0))
    masks = []
    for A in partition:
        m = np.zeros(P.size, dtype=bool)
        m[np.asarray(A, dtype=np.int64)] = True
        masks.append(m)
    rho = []
    for j in range(n):
        v = V[:, j]
        proj = np.zeros_like(v)
        for m in masks:
            proj[m] = np.sum(w[m] * v[m]) / np.sum(w[m])
        rho.append(float(np.sum(w * proj * proj)))
    a = float(np.min(eigvals(P.matrix).real))
    c = a * sum(1.0 - r for r in rho[1:])
    lower = 1.0 + float(np.dot(rho[1:], lam[1:])) + c
    upper = 1.0 + float(np.sum(lam[1:]))
    diag = float(sum(transition_probability(P, None, m, m) for m in masks))
    out = MetastabilityBounds(lower, upper, diag, tuple(rho), tuple(float(x) for x in lam), a, c, slack, excluded)
    if strict and not out.holds:
        raise BoundViolation(f"bracket violated: {lower:.6f} <= {diag:.6f} <= {upper:.6f} + {slack}")
    return out


def write_spectrum_csv(path, spec: SpectrumResult) -> None:
    with open(path, "w") as fh:
        fh.write("rank,re_lambda,im_lambda,residual\n")
        for r, (lam, res) in enumerate(zip(spec.eigenvalues, spec.residuals)):
            fh.write(f"{r},{float(lam.real)!r},{float(lam.imag)!r},{float(res)!r}\n")


def write_eigenfunctions_csv(path, centers: np.ndarray, spec: SpectrumResult, n: int | None = None) -> None:
    n = spec.eigenvectors.shape[1] if n is None else n
    centers = np.asarray(centers).reshape(spec.eigenvectors.shape[0], -1)
    with open(path, "w") as fh:
        cols = ["cell_center"] if centers.shape[1] == 1 else [f"cell_center{a + 1}" for a in range(centers.shape[1])]
        fh.write(",".join(cols + [f"u{i + 1}" for i in range(n)]) + "\n")
        for c, row in zip(centers, spec.eigenvectors[:, :n].real):
            fh.write(",".join(repr(float(x)) for x in (*c, *row)) + "\n")
