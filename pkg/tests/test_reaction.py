import csv

import numpy as np
import pytest
from scipy.stats import chi2

from pseudogen.operators import UlamGrid, build_g2_matrix
from pseudogen.potentials import builtin_periodic_double_well
from pseudogen.reaction import (
    ProjectedCoefficients,
    ReactionCoordinate,
    SparseBinWarning,
    axis_coordinate,
    build_g2ess_matrix,
    coefficients_from_samples,
    estimate_coefficients,
    volatility_transform,
    write_coefficients_csv,
)
from pseudogen.sde import SimConfig, metropolis
from pseudogen.spectral import compute_spectrum


def exact_coefficients(marginal_oracle, n_bins, a_value=1.0, scale=1.0):
    """Noise-free coefficients for ξ = scale·q₁ on the separable model."""
    q_edges = np.linspace(0, 1, n_bins + 1)
    mass, drift = marginal_oracle(q_edges)
    edges = scale * q_edges
    width = np.diff(edges)
    F = -np.log(mass / width)
    F -= F.mean()
    z = np.zeros(n_bins)
    return ProjectedCoefficients(edges, np.full(n_bins, a_value), scale * drift, F, np.full(n_bins, 10**6),
                                 z, z, z, 1.0, True)


def chi2_ok(resid, se, alpha=1e-3):
    """Joint test of per-bin z-scores against χ² with one degree of freedom per bin."""
    zz = (resid / se) ** 2
    return np.sum(zz) < chi2.ppf(1 - alpha, len(zz))


@pytest.fixture(scope="module")
def doubled_coordinate_coeffs(separable):
    xi = axis_coordinate(0, scale=2.0)
    return estimate_coefficients(xi, SimConfig(beta=1.0, master_seed=31), separable, 1_000_000, n_bins=64)


def test_doubled_coordinate_has_constant_a_of_four(doubled_coordinate_coeffs):
    c = doubled_coordinate_coeffs
    assert c.edges[0] == 0 and c.edges[-1] == 2
    np.testing.assert_allclose(c.a, 4.0, rtol=1e-12)


def test_doubled_coordinate_drift_matches_marginal_oracle(doubled_coordinate_coeffs, marginal_oracle):
    c = doubled_coordinate_coeffs
    _, drift = marginal_oracle(np.linspace(0, 1, 65))
    assert chi2_ok(c.b - 2 * drift, c.stderr_b)


def test_unit_coordinate_drift_matches_marginal_oracle(separable_coeffs, marginal_oracle):
    c = separable_coeffs
    _, drift = marginal_oracle(c.edges)
    assert chi2_ok(c.b - drift, c.stderr_b)


def test_free_energy_matches_marginal_oracle(separable_coeffs, marginal_oracle):
    c = separable_coeffs
    mass, _ = marginal_oracle(c.edges)
    F = -np.log(mass / c.widths)
    F -= F.mean()
    assert np.abs(c.F - F).max() < 0.05


def test_exact_coefficients_reproduce_cell_g2(dw, marginal_oracle):
    coeffs = exact_coefficients(marginal_oracle, 64)
    G = build_g2ess_matrix(coeffs)
    ref = build_g2_matrix(UlamGrid.build(dw, 64, 1.0), SimConfig())
    np.testing.assert_allclose(G.matrix, ref.matrix, rtol=1e-9, atol=1e-9 * np.abs(ref.matrix).max())


def test_g2ess_is_reversible_generator(separable_coeffs):
    G = build_g2ess_matrix(separable_coeffs)
    assert G.kind == "generator_g2_ess"
    assert G.row_sum_defect() < 1e-9
    assert G.self_adjointness_defect() < 1e-13
    assert G.meta["bins"] == list(range(64))


def test_g2ess_dominant_eigenvalue_close_to_full_model(separable_coeffs, separable):
    lam_ess = compute_spectrum(build_g2ess_matrix(separable_coeffs), 2).eigenvalues[1].real
    grid = UlamGrid.build(separable, (64, 32), 1.0)
    lam_full = compute_spectrum(build_g2_matrix(grid, SimConfig()), 2).eigenvalues[1].real
    assert abs(lam_ess - lam_full) < 0.05 * abs(lam_full)


def test_g2ess_drops_empty_bins_and_rejects_nonpositive_a(marginal_oracle):
    c = exact_coefficients(marginal_oracle, 16)
    counts = c.counts.copy()
    counts[5] = 0
    holed = ProjectedCoefficients(c.edges, c.a, c.b, np.where(counts > 0, c.F, np.nan), counts, c.stderr_a,
                                  c.stderr_b, c.stderr_F, 1.0, True)
    G = build_g2ess_matrix(holed)
    assert G.size == 15 and 5 not in G.meta["bins"]
    # no coupling across the empty bin
    i4, i6 = G.meta["bins"].index(4), G.meta["bins"].index(6)
    assert G.matrix[i4, i6] == 0
    bad = ProjectedCoefficients(c.edges, np.where(np.arange(16) == 3, 0.0, 1.0), c.b, c.F, c.counts,
                                c.stderr_a, c.stderr_b, c.stderr_F, 1.0, True)
    with pytest.raises(ValueError, match="nonpositive"):
        build_g2ess_matrix(bad)


@pytest.mark.parametrize("a_value", [1.0, 4.0])
def test_volatility_transform_for_constant_sigma(marginal_oracle, a_value):
    c = exact_coefficients(marginal_oracle, 32, a_value=a_value)
    vt = volatility_transform(c)
    sigma = np.sqrt(a_value)
    np.testing.assert_allclose(vt.phi, c.centers / sigma, atol=1e-12)
    assert vt.unit_diffusion_defect < 1e-12
    np.testing.assert_allclose(vt.drift_y, c.b / sigma, atol=1e-12)
    phi, drift = vt
    assert phi is vt.phi and drift is vt.drift_y


def test_volatility_anchor_with_positive_range(marginal_oracle):
    c = exact_coefficients(marginal_oracle, 16)
    shifted = ProjectedCoefficients(c.edges + 1.0, c.a, c.b, c.F, c.counts, c.stderr_a, c.stderr_b,
                                    c.stderr_F, 1.0, True)
    vt = volatility_transform(shifted)
    np.testing.assert_allclose(vt.phi, shifted.centers, atol=1e-12)


def test_consistency_identity_on_exact_coefficients(marginal_oracle):
    # with exact a ≡ 1 and F the only error is the O(h²) central difference of F
    c = exact_coefficients(marginal_oracle, 256)
    vt = volatility_transform(c)
    drift_scale = np.abs(c.b).max()
    assert np.abs(vt.identity_residual).max() < 2e-3 * drift_scale


def test_volatility_transform_preconditions(marginal_oracle):
    c = exact_coefficients(marginal_oracle, 8)
    counts = c.counts.copy()
    counts[2] = 0
    with pytest.raises(ValueError, match="populated"):
        volatility_transform(ProjectedCoefficients(c.edges, c.a, c.b, c.F, counts, c.stderr_a, c.stderr_b,
                                                   c.stderr_F, 1.0, True))
    edges = c.edges.copy()
    edges[3] += 0.01
    with pytest.raises(ValueError, match="uniform"):
        volatility_transform(ProjectedCoefficients(edges, c.a, c.b, c.F, c.counts, c.stderr_a, c.stderr_b,
                                                   c.stderr_F, 1.0, True))


def test_degenerate_coordinate_is_rejected(separable):
    flat_xi = ReactionCoordinate("const", lambda q: np.zeros(q.shape[:-1]), np.zeros_like, 0.0, 1.0)
    q = np.random.default_rng(0).random((100, 2))
    with pytest.raises(ValueError, match="degenerate"):
        coefficients_from_samples(q, np.zeros(100, int), flat_xi, separable, 1.0)


def test_too_few_samples_rejected(separable):
    with pytest.raises(ValueError, match="10"):
        estimate_coefficients(axis_coordinate(0), SimConfig(), separable, 9_999)


def test_bins_halve_until_median_target(separable):
    c = estimate_coefficients(axis_coordinate(0), SimConfig(master_seed=5), separable, 10_000)
    assert len(c.counts) < 64
    assert np.median(c.counts) >= 200 or len(c.counts) <= 8


def test_sparse_bins_warn():
    dw = builtin_periodic_double_well()
    with pytest.warns(SparseBinWarning):
        estimate_coefficients(axis_coordinate(0), SimConfig(master_seed=2), dw, 10_000, n_bins=64)


def test_fallback_laplacian_of_coordinate():
    xi = ReactionCoordinate("sq", lambda q: q[..., 0] ** 2 + 3 * q[..., 1] ** 2,
                            lambda q: np.stack([2 * q[..., 0], 6 * q[..., 1]], -1), 0.0, 4.0)
    np.testing.assert_allclose(xi.laplacian(np.array([[0.3, 0.2], [1.0, -1.0]])), 8.0, rtol=1e-6)


def test_estimates_do_not_depend_on_sample_order(separable):
    q, _, _ = metropolis(20_000, separable, 1.0, 3, n_chains=100)
    clusters = np.arange(20_000) // 200
    xi = axis_coordinate(0)
    a = coefficients_from_samples(q, clusters, xi, separable, 1.0, n_bins=16)
    perm = np.random.default_rng(1).permutation(20_000)
    b = coefficients_from_samples(q[perm], clusters[perm], xi, separable, 1.0, n_bins=16)
    assert np.array_equal(a.counts, b.counts)
    for field in ("a", "b", "F", "stderr_b"):
        np.testing.assert_allclose(getattr(a, field), getattr(b, field), rtol=1e-10)


def test_coefficients_csv(tmp_path, marginal_oracle):
    c = exact_coefficients(marginal_oracle, 8)
    write_coefficients_csv(tmp_path / "c.csv", c)
    rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert rows[0] == ["z", "a", "b", "F", "stderr_a", "stderr_b", "count"]
    assert len(rows) == 9 and rows[1][-1] == "1000000"
    assert float(rows[3][2]) == c.b[2]
