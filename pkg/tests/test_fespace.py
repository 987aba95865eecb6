import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compatfe.fespace import (Family, Field, evaluate, gauss_rule, interpolate, make_complex,
                              make_space, q1_values, rt0_ref_values)
from compatfe.mesh import build


@pytest.mark.parametrize("n, family, dim", [(3, "V1", 18), (4, "V0", 16), (4, "V2", 16)])
def test_dof_counts(n, family, dim):
    assert make_space(build(n, n, 1, 1), family).dim == dim


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_q1_partition_of_unity(xi, eta):
    assert q1_values(np.array([xi, eta])).sum() == pytest.approx(1.0, abs=1e-15)


def test_rt0_unit_edge_fluxes():
    # integrate the normal component over each reference edge with a 1D Gauss rule
    q = gauss_rule(4)
    t = q.points_1d
    edges = {
        0: (np.stack([0 * t, t], 1), 0),  # left, normal +x
        1: (np.stack([0 * t + 1, t], 1), 0),  # right
        2: (np.stack([t, 0 * t], 1), 1),  # bottom, normal +y
        3: (np.stack([t, 0 * t + 1], 1), 1),  # top
    }
    flux = np.zeros((4, 4))
    for e, (pts, comp) in edges.items():
        vals = rt0_ref_values(pts)[..., comp]  # (n1d, 4 basis)
        flux[e] = q.weights_1d @ vals
    assert np.allclose(flux, np.eye(4), atol=1e-15)


def test_interpolate_constants():
    V = make_complex(build(4, 3, 2, 1))
    one = interpolate(V.V0, lambda x, y: 1.0)
    assert np.all(one.coeffs == 1.0)
    ex = interpolate(V.V1, lambda x, y: (1.0, 0.0))
    n = V.mesh.n_cells
    # total flux through an x-edge equals its length
    assert np.allclose(ex.coeffs[:n], V.mesh.dy) and np.all(ex.coeffs[n:] == 0)


def test_interpolate_v2_cell_means():
    V2 = make_space(build(4, 4, 1, 1), Family.V2)
    s = interpolate(V2, lambda x, y: np.sin(2 * np.pi * x))
    # exact cell averages of sin(2 pi x) over [i/4, (i+1)/4]
    i = np.arange(16) % 4
    exact = (np.cos(2 * np.pi * i / 4) - np.cos(2 * np.pi * (i + 1) / 4)) / (2 * np.pi) * 4
    # 3-point Gauss is not exact for sin, so compare at quadrature accuracy
    assert np.allclose(s.coeffs, exact, atol=1e-5)
    hi = interpolate(make_space(V2.mesh, Family.V2, gauss_rule(8)), lambda x, y: np.sin(2 * np.pi * x))
    assert np.allclose(hi.coeffs, exact, atol=1e-14)


def test_evaluate_v2_and_v0():
    m = build(4, 4, 1, 1)
    V0, V2 = make_space(m, "V0"), make_space(m, "V2")
    D = Field(V2, np.zeros(16))
    c, _ = m.locate((0.6, 0.3))
    D.coeffs[c] = 3.0
    assert evaluate(D, (0.6, 0.3)) == 3.0
    x = interpolate(V0, lambda x, y: x)
    assert evaluate(x, (0.5, 0.75)) == pytest.approx(0.5)
    assert evaluate(x, (1.25, 0.0)) == pytest.approx(0.25)


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-5, 5), st.floats(-5, 5))
def test_rt0_reproduces_constant_vectors(a, b, px, py):
    V1 = make_space(build(5, 3, 2, 1.5), "V1")
    u = interpolate(V1, lambda x, y: (a, b))
    assert np.allclose(evaluate(u, (px, py)), [a, b], atol=1e-12)


def test_v1_normal_continuity():
    # the normal component is single valued across an x-edge
    m = build(4, 4, 1, 1)
    V1 = make_space(m, "V1")
    u = Field(V1, np.random.default_rng(1).standard_normal(V1.dim))
    x0, y = 0.5, 0.37
    left = evaluate(u, (x0 - 1e-12, y))[0]
    right = evaluate(u, (x0, y))[0]
    assert left == pytest.approx(right, abs=1e-9)


def test_field_arithmetic():
    V2 = make_space(build(3, 3, 1, 1), "V2")
    a = Field(V2, np.arange(9.0))
    b = (a + a) * 0.5 - a
    assert np.all(b.coeffs == 0)
    with pytest.raises((ValueError, TypeError)):
        a + Field(make_space(build(3, 3, 1, 1), "V0"), np.zeros(9))
