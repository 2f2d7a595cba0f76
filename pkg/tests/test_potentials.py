import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import dblquad, quad

from pseudogen.potentials import (
    BoltzmannDensity,
    Domain,
    builtin_periodic_double_well,
    cell_log_masses,
    flat,
    harmonic,
    model_from_key,
    normalization_constant,
    polynomial,
    separable_double_well_2d,
    trigonometric,
)

finite = st.floats(-3.0, 3.0, allow_nan=False)


def test_double_well_barrier_values(dw):
    # c = cos 2πq: V = 1 + 3c + 3c² − c³ gives 6 at c = 1 and 2 at c = −1
    V = dw.energy(np.array([[0.0], [0.5], [1.0]]))
    np.testing.assert_allclose(V, [6.0, 2.0, 6.0], atol=1e-14)


def test_double_well_minima_location(dw):
    # dV/dc = 3 + 6c − 3c² vanishes at c = 1 − √2
    q_min = np.arccos(1 - np.sqrt(2)) / (2 * np.pi)
    g = dw.gradient(np.array([[q_min], [1 - q_min]]))
    np.testing.assert_allclose(g, 0.0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(q=finite)
def test_double_well_gradient_matches_finite_differences(q):
    dw = builtin_periodic_double_well()
    h = 1e-6
    fd = (dw.energy(np.array([[q + h]])) - dw.energy(np.array([[q - h]]))) / (2 * h)
    assert abs(dw.gradient(np.array([[q]]))[0, 0] - fd[0]) < 1e-6


@settings(max_examples=60, deadline=None)
@given(q=finite)
def test_double_well_laplacian_matches_finite_differences(q):
    dw = builtin_periodic_double_well()
    h = 1e-5
    fd = (dw.gradient(np.array([[q + h]])) - dw.gradient(np.array([[q - h]])))[0, 0] / (2 * h)
    assert abs(dw.laplacian(np.array([[q]]))[0] - fd) < 1e-4


@settings(max_examples=40, deadline=None)
@given(q1=finite, q2=st.floats(-1.5, 1.5))
def test_separable_gradient_and_fallback_laplacian(q1, q2):
    m = separable_double_well_2d()
    q = np.array([[q1, q2]])
    h = 1e-6
    for a in range(2):
        e = np.zeros(2)
        e[a] = h
        fd = (m.energy(q + e) - m.energy(q - e))[0] / (2 * h)
        assert abs(m.gradient(q)[0, a] - fd) < 1e-5
    no_hook = type(m)(m.name, m.domain, m.energy_fn, m.gradient_fn)
    # fallback uses central differences of the gradient; its truncation error is
    # h²/6·max|V''''| ≈ 1.2e-3 for the double-well factor at h = 1e-4
    assert abs(no_hook.laplacian(q)[0] - m.laplacian(q)[0]) < 2e-3


def test_trailing_axis_checked(dw):
    with pytest.raises(ValueError, match="trailing axis"):
        dw.energy(np.zeros((3, 2)))


def test_normalization_matches_adaptive_quadrature(dw):
    ref = quad(lambda x: np.exp(-dw.energy(np.array([[x]]))[0]), 0, 1, epsabs=0, epsrel=1e-13, limit=200)[0]
    assert abs(normalization_constant(dw, 1.0) - ref) < 1e-12 * ref
    ref2 = quad(lambda x: np.exp(-2.0 * dw.energy(np.array([[x]]))[0]), 0, 1, epsabs=0, epsrel=1e-13, limit=200)[0]
    assert abs(normalization_constant(dw, 2.0) - ref2) < 1e-11 * ref2


def test_separable_normalization_factorizes(separable):
    z1 = normalization_constant(builtin_periodic_double_well(), 1.0)
    z2 = quad(lambda y: np.exp(-8.0 * y * y), -1.5, 1.5, epsabs=0, epsrel=1e-13)[0]
    assert abs(normalization_constant(separable, 1.0) - z1 * z2) < 1e-9 * z1 * z2


def test_2d_normalization_against_dblquad():
    m = harmonic(2.0, 1.0, dimension=2)
    ref = dblquad(lambda y, x: np.exp(-(x * x + y * y)), -1, 1, -1, 1, epsabs=0, epsrel=1e-12)[0]
    assert abs(normalization_constant(m, 1.0) - ref) < 1e-10 * ref


def test_cell_masses_match_per_cell_quadrature(dw):
    edges = np.linspace(0, 1, 17)
    lm = cell_log_masses(dw, 1.0, [edges])
    for i in (0, 5, 8, 15):
        ref = quad(lambda x: np.exp(-dw.energy(np.array([[x]]))[0]), edges[i], edges[i + 1], epsrel=1e-13)[0]
        assert abs(np.exp(lm[i]) - ref) < 1e-12 * ref


def test_boltzmann_density_integrates_to_one(dw):
    f = BoltzmannDensity.build(dw, 1.0)
    x = (np.arange(20000) + 0.5) / 20000
    assert abs(f(x[:, None]).mean() - 1.0) < 1e-10


def test_quadrature_rejects_more_than_two_dimensions():
    with pytest.raises(ValueError):
        normalization_constant(flat(3), 1.0)


@settings(max_examples=100, deadline=None)
@given(x=st.floats(-50, 50, allow_nan=False))
def test_periodic_fold_lands_in_box_and_shifts_by_periods(x):
    dom = Domain((0.0,), (1.0,), (True,))
    q, _ = dom.apply_boundary(np.array([[x]]))
    assert 0.0 <= q[0, 0] < 1.0
    assert abs((x - q[0, 0]) - round(x - q[0, 0])) < 1e-9


@settings(max_examples=100, deadline=None)
@given(x=st.floats(-20, 20, allow_nan=False), p=st.floats(-5, 5, allow_nan=False))
def test_reflection_lands_in_box_and_flips_momentum_parity(x, p):
    dom = Domain((-1.0,), (1.0,), (False,))
    q, pn = dom.apply_boundary(np.array([[x]]), np.array([[p]]))
    assert -1.0 <= q[0, 0] <= 1.0
    assert abs(abs(pn[0, 0]) - abs(p)) == 0.0
    # the mirror image of the unfolded point has the same distance to a wall modulo 2L
    y = (x + 1.0) % 4.0
    expect = y if y <= 2.0 else 4.0 - y
    assert abs(q[0, 0] + 1.0 - expect) < 1e-9


def test_reflection_inside_box_is_identity():
    dom = Domain((-1.0,), (1.0,), (False,))
    q = np.array([[0.3], [-0.99]])
    p = np.array([[1.0], [-2.0]])
    q2, p2 = dom.apply_boundary(q, p)
    np.testing.assert_array_equal(q2, q)
    np.testing.assert_array_equal(p2, p)


def test_trigonometric_and_polynomial_builtins():
    t = trigonometric([1.0, 0.5], [0.25])
    q = np.array([[0.1]])
    x = 2 * np.pi * 0.1
    ref = np.cos(x) + 0.5 * np.cos(2 * x) + 0.25 * np.sin(x)
    assert abs(t.energy(q)[0] - ref) < 1e-14
    p = polynomial([0.0, 0.0, -1.0, 0.0, 0.25], -2.0, 2.0)
    assert abs(p.gradient(np.array([[np.sqrt(2.0)]]))[0, 0]) < 1e-14
    assert p.laplacian(np.array([[0.0]]))[0] == -2.0


def test_model_from_key_and_unknown_key():
    assert model_from_key("harmonic", stiffness=3.0).params["stiffness"] == 3.0
    with pytest.raises(ValueError, match="unknown potential"):
        model_from_key("nope")
