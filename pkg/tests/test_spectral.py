import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pseudogen.operators import OperatorMatrix, UlamGrid, build_g2_matrix, exponential_operator
from pseudogen.potentials import flat, trigonometric
from pseudogen.sde import SimConfig
from pseudogen.spectral import (
    BoundViolation,
    MetastabilityWarning,
    compare_eigenfunctions,
    compute_spectrum,
    metastability_bounds,
    metastable_partition,
    write_eigenfunctions_csv,
    write_spectrum_csv,
)


def test_complex_pairs_sorted_by_real_then_imaginary_part():
    A = np.zeros((4, 4))
    A[:2, :2] = [[0.5, -0.3], [0.3, 0.5]]
    A[2, 2], A[3, 3] = 0.9, 0.1
    spec = compute_spectrum(OperatorMatrix(A, 0.1, "pseudo_generator", np.full(4, 0.25)), 4)
    np.testing.assert_allclose(spec.eigenvalues, [0.9, 0.5 - 0.3j, 0.5 + 0.3j, 0.1], atol=1e-12)
    assert spec.max_imag == pytest.approx(0.3)
    np.testing.assert_array_equal(spec.real_modes, [0, 3])


def test_self_adjoint_spectrum_is_real_normalized_and_accurate(g2_256):
    spec = compute_spectrum(g2_256, 5)
    assert np.all(spec.eigenvalues.imag == 0)
    assert np.all(np.diff(spec.eigenvalues.real) <= 0)
    w = g2_256.weights
    norms = np.sqrt(np.sum(w[:, None] * np.abs(spec.eigenvectors) ** 2, axis=0))
    np.testing.assert_allclose(norms, 1, atol=1e-12)
    lead = spec.eigenvectors[np.argmax(np.abs(spec.eigenvectors), axis=0), np.arange(5)]
    assert np.all(lead.real > 0)
    assert spec.residuals.max() < 1e-9 * abs(spec.min_real)
    np.testing.assert_allclose(spec.eigenvectors[:, 0].real, 1, atol=1e-9)


def test_spectrum_rejects_bad_k(g2_256):
    with pytest.raises(ValueError):
        compute_spectrum(g2_256, 0)
    with pytest.raises(ValueError):
        compute_spectrum(g2_256, 257)


vec = arrays(np.float64, 12, elements=st.floats(-5, 5, allow_nan=False))


@settings(max_examples=100, deadline=None)
@given(u=vec, v=vec, s=st.floats(0.1, 10), w=arrays(np.float64, 12, elements=st.floats(0.01, 1)))
def test_eigenfunction_distance_ignores_sign_and_scale(u, v, s, w):
    if np.sum(w * u * u) < 1e-6 or np.sum(w * v * v) < 1e-6:
        return
    d = compare_eigenfunctions(u, v, w)
    assert d == pytest.approx(compare_eigenfunctions(u, -s * v, w), abs=1e-9)
    assert d == pytest.approx(compare_eigenfunctions(v, u, w), abs=1e-9)
    assert 0 <= d <= np.sqrt(2) + 1e-12
    assert compare_eigenfunctions(u, -s * u, w) < 1e-7


def test_eigenfunction_distance_rejects_zero_vector():
    with pytest.raises(ValueError):
        compare_eigenfunctions(np.zeros(3), np.ones(3), np.ones(3))


def test_two_set_partition_splits_at_the_barriers(g2_256):
    spec = compute_spectrum(g2_256, 4)
    sets = metastable_partition(spec, 2)
    assert len(sets) == 2
    assert sum(len(s) for s in sets) == 256
    inner = sets[0] if 64 in sets[0] else sets[1]
    # barrier tops at q = 0 (cell 0) and q = 0.5 (cell 128)
    assert min(abs(inner.min() - 0), abs(inner.min() - 128)) <= 2
    assert min(abs(inner.max() - 127), abs(inner.max() - 255)) <= 2
    assert np.all(np.diff(inner) == 1)


def test_flat_potential_has_no_metastable_partition():
    grid = UlamGrid.build(flat(1), 64, 1.0)
    spec = compute_spectrum(build_g2_matrix(grid, SimConfig()), 4)
    with pytest.warns(MetastabilityWarning):
        metastable_partition(spec, 2)


def test_three_wells_give_three_sets_by_kmeans():
    model = trigonometric([0.0, 0.0, 3.0])
    grid = UlamGrid.build(model, 120, 1.0)
    spec = compute_spectrum(build_g2_matrix(grid, SimConfig()), 5)
    sets = metastable_partition(spec, 3)
    assert len(sets) == 3
    wells = grid.locate(np.array([[1 / 6], [1 / 2], [5 / 6]]))
    for c in wells:
        assert sum(c in s for s in sets) == 1
    assert len({next(i for i, s in enumerate(sets) if c in s) for c in wells}) == 3


def test_bounds_hold_for_exponential_reconstruction(g2_256):
    E = exponential_operator(g2_256, 0.3)
    spec = compute_spectrum(E, 3)
    sets = metastable_partition(spec, 2)
    b = metastability_bounds(E, spec, sets)
    lower, upper, diag = b
    assert lower <= diag <= upper
    assert b.holds and 0 < b.rho[1] <= 1
    assert b.rho[0] == pytest.approx(1, abs=1e-12)


def test_bound_violation_is_raised_or_reported(g2_256):
    E = exponential_operator(g2_256, 0.3)
    spec = compute_spectrum(E, 3)
    sets = metastable_partition(spec, 2)
    # diag sum sits strictly inside the bracket; a negative slack pushes the upper end below it
    gap = metastability_bounds(E, spec, sets).upper - metastability_bounds(E, spec, sets).diagonal_sum
    with pytest.raises(BoundViolation):
        metastability_bounds(E, spec, sets, slack=-gap - 1e-3)
    assert not metastability_bounds(E, spec, sets, slack=-gap - 1e-3, strict=False).holds


def test_bounds_need_enough_real_modes():
    A = np.eye(3)
    A[:2, :2] = [[0.5, -0.3], [0.3, 0.5]]
    op = OperatorMatrix(A, 0.1, "pseudo_generator", np.full(3, 1 / 3))
    spec = compute_spectrum(op, 3)
    with pytest.raises(ValueError):
        metastability_bounds(op, spec, [np.array([0]), np.array([1]), np.array([2])])


def test_csv_writers(tmp_path, grid256, g2_256):
    spec = compute_spectrum(g2_256, 3)
    write_spectrum_csv(tmp_path / "s.csv", spec)
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["rank", "re_lambda", "im_lambda", "residual"]
    assert float(rows[2][1]) == spec.eigenvalues[1].real
    write_eigenfunctions_csv(tmp_path / "e.csv", grid256.centers, spec, 2)
    rows = list(csv.reader(open(tmp_path / "e.csv")))
    assert rows[0] == ["cell_center", "u1", "u2"]
    assert len(rows) == 257
    assert float(rows[1][2]) == spec.eigenvectors[0, 1].real


def test_misaligned_partition_degrades_only_the_lower_bound(g2_256):
    E = exponential_operator(g2_256, 0.3)
    spec = compute_spectrum(E, 3)
    good = metastability_bounds(E, spec, metastable_partition(spec, 2))
    # sets shifted by a quarter period straddle both wells
    bad = metastability_bounds(E, spec, [np.arange(64, 192), np.r_[0:64, 192:256]])
    assert bad.rho[1] < good.rho[1]
    assert bad.lower < good.lower
    assert bad.upper == good.upper
    assert bad.lower <= bad.diagonal_sum <= bad.upper
