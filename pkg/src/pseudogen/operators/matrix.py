"""Assembled operator matrices and their plain-text serialization."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

TRANSFER_KINDS = frozenset({"spatial_transfer", "smoluchowski_transfer", "taylor", "exponential", "smoluchowski_propagator"})
GENERATOR_KINDS = frozenset({"generator_g2", "generator_g2_ess"})
# reversible by construction: exact symmetry of diag(w) A
SELF_ADJOINT_KINDS = frozenset({"generator_g2", "generator_g2_ess", "taylor", "exponential", "smoluchowski_propagator"})
KINDS = TRANSFER_KINDS | GENERATOR_KINDS | {"pseudo_generator", "phase_space_spectral"}


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Dense matrix of a transfer operator or generator.

    Acts on coefficient vectors of functions (densities with respect to
    f_Q); row i holds the transition data of cell i. ``weights`` is the
    inner-product weight vector, ``lag`` is 0 for generators.
    """

    matrix: np.ndarray
    lag: float
    kind: str
    weights: np.ndarray
    samples_per_cell: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"operator matrix must be square, got {m.shape}")
        if len(self.weights) != m.shape[0]:
            raise ValueError("weights length does not match matrix size")
        m = np.array(m, copy=True)
        m.setflags(write=False)
        w = np.array(self.weights, dtype=float, copy=True)
        w.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def self_adjoint(self) -> bool:
        return self.kind in SELF_ADJOINT_KINDS

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.matrix @ u

    def row_sum_defect(self) -> float:
        target = 0.0 if self.kind in GENERATOR_KINDS else 1.0
        return float(np.max(np.abs(self.matrix.sum(axis=1) - target)))

    def self_adjointness_defect(self) -> float:
        """‖D_w A − Aᵀ D_w‖_F / ‖D_w A‖_F."""
        DA = self.weights[:, None] * self.matrix
        return float(np.linalg.norm(DA - DA.T) / np.linalg.norm(DA))


def normalize_rows(counts: np.ndarray, weights: np.ndarray, empty_tol: float = 1e-14):
    """Row-normalize a count matrix; cells with weight below ``empty_tol`` or
    without counts become identity rows. Returns ``(matrix, flagged)``."""
    counts = np.asarray(counts, dtype=float)
    totals = counts.sum(axis=1)
    flagged = np.flatnonzero((weights < empty_tol) | (totals == 0))
    P = np.divide(counts, totals[:, None], out=np.zeros_like(counts), where=totals[:, None] > 0)
    for i in flagged:
        P[i] = 0.0
        P[i, i] = 1.0
    return P, flagged


def write_triplets(path, op: OperatorMatrix, tol: float = 0.0) -> None:
    """Plain-text ``i j value`` lines after a ``# kind t N`` header.

    Entries with absolute value ≤ ``tol`` are omitted.
    """
    A = op.matrix
    with open(path, "w") as fh:
        fh.write(f"# {op.kind} {float(op.lag)!r} {op.size}\n")
        rows, cols = np.nonzero(np.abs(A) > tol)
        for i, j in zip(rows, cols):
            fh.write(f"{i} {j} {float(A[i, j])!r}\n")


def read_triplets(path, weights: np.ndarray | None = None) -> OperatorMatrix:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "#":
            raise ValueError(f"{path}: malformed header {' '.join(header)!r}")
        kind, lag, n = header[1], float(header[2]), int(header[3])
        A = np.zeros((n, n))
        for lineno, line in enumerate(fh, start=2):
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 'i j value'")
            A[int(parts[0]), int(parts[1])] = float(parts[2])
    return OperatorMatrix(A, lag, kind, np.full(n, 1.0 / n) if weights is None else weights)


def write_weights(path, centers: np.ndarray, weights: np.ndarray) -> None:
    centers = np.asarray(centers).reshape(len(weights), -1)
    d = centers.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell"] + [f"center{a + 1}" for a in range(d)] + ["weight"])
        for i, (c, x) in enumerate(zip(centers, weights)):
            w.writerow([i] + [repr(float(v)) for v in c] + [repr(float(x))])
