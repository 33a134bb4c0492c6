import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geomflow.elements import lagrange_element


@pytest.mark.parametrize("d", [1, 2])
@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_nodal_property(d, k):
    el = lagrange_element(d, k)
    vals = el.tabulate(el.nodes)
    assert np.allclose(vals, np.eye(el.nnodes), atol=1e-11)


@pytest.mark.parametrize("d", [1, 2])
@pytest.mark.parametrize("k", [1, 2, 3])
def test_partition_of_unity(d, k, rng):
    el = lagrange_element(d, k)
    pts = rng.random((40, d))
    if d == 2:
        pts[:, 1] *= 1.0 - pts[:, 0]
    assert np.allclose(el.tabulate(pts).sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose(el.tabulate_grad(pts).sum(axis=1), 0.0, atol=1e-11)


@pytest.mark.parametrize("d", [1, 2])
@pytest.mark.parametrize("k", [1, 2, 3])
def test_gradient_by_finite_difference(d, k, rng):
    el = lagrange_element(d, k)
    pts = 0.1 + 0.3 * rng.random((5, d))
    g = el.tabulate_grad(pts)
    h = 1e-6
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        fd = (el.tabulate(pts + e) - el.tabulate(pts - e)) / (2 * h)
        assert np.allclose(g[..., j], fd, atol=1e-7)


def test_node_counts():
    assert lagrange_element(1, 3).nnodes == 4
    assert lagrange_element(2, 1).nnodes == 3
    assert lagrange_element(2, 2).nnodes == 6
    assert lagrange_element(2, 3).nnodes == 10


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.floats(0, 1))
def test_interval_reproduces_polynomials(k, x):
    # interpolating t^k at the nodes must reproduce t^k exactly
    el = lagrange_element(1, k)
    coeffs = el.nodes[:, 0] ** k
    val = (el.tabulate(np.array([[x]])) @ coeffs).item()
    assert abs(val - x**k) < 1e-10
