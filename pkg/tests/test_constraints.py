import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adtopo import adgraph as ad
from adtopo.constraints import (LengthScaleParams, global_volume_constraint,
                                max_length_scale_constraint)
from adtopo.mesh import build_grid
from conftest import fd_grad, rel_linf


def test_volume_values_and_gradient():
    assert global_volume_constraint(np.full(8, 0.4), 0.4) == pytest.approx(0.0, abs=1e-15)
    assert global_volume_constraint(np.ones(8), 0.5) == pytest.approx(1.0)
    _, g = ad.value_and_grad(lambda r: global_volume_constraint(r, 0.5), np.full(8, 0.3))
    np.testing.assert_allclose(g, 1 / (8 * 0.5))


def test_volume_is_linear(rng):
    x, v = rng.uniform(size=10), rng.normal(size=10)

    def grad(y):
        return ad.value_and_grad(lambda r: global_volume_constraint(r, 0.3), y)[1]
    hv = (grad(x + 1e-4 * v) - grad(x - 1e-4 * v)) / 2e-4
    assert np.max(np.abs(hv)) < 1e-8


@pytest.mark.parametrize("vf", [0.0, 1.5])
def test_volume_fraction_checked(vf):
    with pytest.raises(ValueError):
        global_volume_constraint(np.ones(2), vf)


def test_uniform_void_closed_form():
    mesh = build_grid(6, 5)
    p = LengthScaleParams.build(mesh, radius=2.5, void_fraction=0.75, p_agg=16)
    N = mesh.n_elem
    expected = 1 - 1.01 * N ** (1 / 16) / p.vstar
    assert max_length_scale_constraint(np.zeros(N), p) == pytest.approx(expected, rel=1e-12)
    np.testing.assert_allclose(np.asarray(p.L.sum(axis=1)).ravel(), 1.0)


def test_2x2_hand_evaluation():
    mesh = build_grid(2, 2)
    p = LengthScaleParams.build(mesh, radius=10.0, void_fraction=0.5, n=1, p_agg=4)
    rho = np.array([1.0, 1.0, 1.0, 0.0])
    v = np.full(4, (3 * 0.01 + 1.01) / 4)   # flat average over the whole cell
    expected = 1 - np.sum(v ** 4) ** 0.25 / p.vstar
    assert max_length_scale_constraint(rho, p) == pytest.approx(expected, rel=1e-14)


@settings(max_examples=25, deadline=None)
@given(arrays(float, 12, elements=st.floats(0, 1)), st.integers(0, 11), st.floats(0, 1))
def test_length_scale_monotone(rho, i, bump):
    p = LengthScaleParams.build(build_grid(4, 3), radius=1.8, n=2.0, p_agg=8)
    up = rho.copy()
    up[i] = min(1.0, up[i] + bump)
    assert max_length_scale_constraint(up, p) >= max_length_scale_constraint(rho, p) - 1e-15


def test_params_invalid():
    L = LengthScaleParams.build(build_grid(2, 2), 1.5).L
    with pytest.raises(ValueError):
        LengthScaleParams(L, p_agg=0.5)
    with pytest.raises(ValueError):
        LengthScaleParams(L, vstar=0.0)


def test_constraint_gradients_vs_fd(rng):
    mesh = build_grid(8, 8)
    p = LengthScaleParams.build(mesh, radius=3.0, n=2.0)
    x = rng.uniform(0.1, 1, 64)
    for f in (lambda r: max_length_scale_constraint(r, p),
              lambda r: global_volume_constraint(r, 0.4)):
        _, g = ad.value_and_grad(f, x)
        assert rel_linf(g, fd_grad(f, x)) < 1e-5
