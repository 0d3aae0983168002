import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pecsolve.basis import (
    DGField,
    eval_field,
    gauss_rule,
    legendre_values,
    project_between_grids,
    project_to_dg,
    prolong_to_fine,
    quadrature_points,
)
from pecsolve.mesh import IntervalGrid, build_interval_mesh


def test_gauss_midpoint_and_two_point():
    x, w = gauss_rule(1)
    assert np.allclose(x, [0.0]) and np.allclose(w, [2.0])
    x, w = gauss_rule(2)
    assert np.allclose(np.sort(x), [-1 / np.sqrt(3), 1 / np.sqrt(3)])
    assert np.allclose(w, [1.0, 1.0])


def test_gauss_quartic_exact():
    x, w = gauss_rule(3)
    assert np.isclose(np.sum(w * x**4), 2.0 / 5.0, rtol=0, atol=1e-15)


@pytest.mark.parametrize("n", [1, 2, 5, 20])
def test_gauss_polynomial_exactness(n):
    x, w = gauss_rule(n)
    for p in range(2 * n):
        exact = 2.0 / (p + 1) if p % 2 == 0 else 0.0
        assert np.isclose(np.sum(w * x**p), exact, atol=1e-13)


def test_gauss_range_validated():
    with pytest.raises(ValueError):
        gauss_rule(0)
    with pytest.raises(ValueError):
        gauss_rule(21)


@pytest.mark.parametrize("k", [1, 2])
def test_orthonormality(k):
    xi, w = quadrature_points(k)
    vals = legendre_values(k, xi)
    gram = np.einsum("iq,jq,q->ij", vals, vals, w)
    assert np.max(np.abs(gram - np.eye(k + 1))) < 1e-13


def _grid(n=7, a=-1.0, b=0.0):
    return IntervalGrid(np.linspace(a, b, n + 1))


def test_projection_reproduces_constants():
    g = _grid()
    f = project_to_dg(lambda x: np.full_like(x, 3.25), g, 1)
    means = f.coeffs[:, 0] * np.sqrt(2.0 / g.h) / np.sqrt(2.0 / g.h)
    xs = np.linspace(-0.99, -0.01, 17)
    assert np.allclose(f.eval(xs), 3.25, atol=1e-13)


def test_projection_reproduces_linears_pointwise():
    g = _grid(5)
    f = project_to_dg(lambda x: x, g, 1)
    xs = np.linspace(-1.0, 0.0, 33)
    assert np.allclose(f.eval(xs), xs, atol=1e-13)
    assert np.isclose(f.eval(-0.25), -0.25)


def test_projection_rate_for_cosine():
    errs = []
    for n in (8, 16):
        g = _grid(n)
        f = project_to_dg(lambda x: np.cos(2 * np.pi * x), g, 1)
        xi, w = quadrature_points(3)  # finer rule for the error integral
        vals = legendre_values(1, xi)
        edges = g.edges
        err2 = 0.0
        for e in range(g.n_elements):
            h = edges[e + 1] - edges[e]
            xq = 0.5 * (edges[e] + edges[e + 1]) + 0.5 * h * xi
            approx = np.sqrt(2.0 / h) * (f.coeffs[e] @ vals)
            err2 += 0.5 * h * np.sum(w * (approx - np.cos(2 * np.pi * xq)) ** 2)
        errs.append(np.sqrt(err2))
    rate = np.log2(errs[0] / errs[1])
    assert 1.8 < rate < 2.2


def test_l2_norm_matches_quadrature():
    g = _grid(9)
    f = project_to_dg(lambda x: np.sin(3 * x) + 0.5, g, 2)
    xi, w = quadrature_points(2)
    vals = legendre_values(2, xi)
    total = 0.0
    for e in range(g.n_elements):
        h = g.h[e]
        fe = np.sqrt(2.0 / h) * (f.coeffs[e] @ vals)
        total += 0.5 * h * np.sum(w * fe**2)
    assert np.isclose(np.sqrt(total), f.l2_norm(), rtol=1e-12)


def test_eval_outside_domain_raises():
    g = _grid()
    f = project_to_dg(lambda x: x, g, 1)
    with pytest.raises(Exception):
        f.eval(5.0)


def test_one_sided_traces_and_jump():
    # discontinuous field: -1 on the left element, +2 on the right
    g = IntervalGrid(np.array([0.0, 0.5, 1.0]))
    f = DGField.zeros(g, 1)
    # constant basis mode has value sqrt(1/h) on its element
    f.coeffs[0, 0] = -1.0 * np.sqrt(0.5)
    f.coeffs[1, 0] = 2.0 * np.sqrt(0.5)
    left = f.eval(0.5, side="left")
    right = f.eval(0.5, side="right")
    assert np.isclose(left, -1.0) and np.isclose(right, 2.0)
    # average and jump of the two one-sided values
    assert np.isclose(0.5 * (left + right), 0.5)
    # jump convention [f] = f^+ n^+ + f^- n^-, n^- = +1 on the left element
    assert np.isclose(left * 1.0 + right * (-1.0), -3.0)
    assert np.isclose(eval_field(f, 0.5, side="left"), -1.0)


def test_continuous_field_has_zero_jump():
    g = _grid(4)
    f = project_to_dg(lambda x: 2.0 * x + 1.0, g, 1)
    x_face = g.edges[2]
    assert np.isclose(
        f.eval(x_face, side="left") - f.eval(x_face, side="right"), 0.0, atol=1e-13
    )


@settings(max_examples=25, deadline=None)
@given(st.floats(min_value=-0.999, max_value=-0.001))
def test_prolongation_is_exact(x):
    coarse_grid = _grid(4)
    fine_grid = _grid(16)
    f = project_to_dg(lambda t: 1.5 * t - 0.25, coarse_grid, 1)
    fine = prolong_to_fine(f, fine_grid)
    assert np.isclose(fine.eval(x), f.eval(x), atol=1e-12)


def test_projection_between_grids_roundtrip():
    coarse_grid = _grid(4)
    fine_grid = _grid(12)
    f = project_to_dg(lambda t: np.cos(t), coarse_grid, 2)
    fine = prolong_to_fine(f, fine_grid)
    back = project_between_grids(fine, coarse_grid)
    assert np.allclose(back.coeffs, f.coeffs, atol=1e-12)
