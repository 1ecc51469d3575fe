import numpy as np
import pytest

from adtopo.mesh import BoundaryConditions, build_grid, preset_problem


def test_thermal_1x1():
    m = build_grid(1, 1, "thermal")
    assert m.n_nodes == 4 and m.ndof == 4
    assert sorted(m.edof[0]) == [0, 1, 2, 3]
    np.testing.assert_array_equal(m.edof[0], m.elem_nodes[0])


def test_60x30_grid_dofs():
    assert build_grid(60, 30, "elastic").ndof == 2 * 61 * 31 == 3782


def test_adjacent_elements_share_one_edge():
    m = build_grid(2, 1)
    assert len(set(m.elem_nodes[0]) & set(m.elem_nodes[1])) == 2
    assert len(set(m.edof[0]) & set(m.edof[1])) == 4


def test_column_major_numbering():
    m = build_grid(3, 2)
    assert m.node(0, 0) == 0 and m.node(0, 2) == 2 and m.node(1, 0) == 3
    # element 1 is the second element down the first column
    np.testing.assert_allclose(m.centroids[1], [0.5, 1.5])


@pytest.mark.parametrize("nelx,nely", [(0, 3), (2, -1)])
def test_bad_dimensions(nelx, nely):
    with pytest.raises(ValueError):
        build_grid(nelx, nely)


def test_scatter_index_bijection():
    m = build_grid(3, 2)
    rows, cols = m.scatter_index
    k = m.edof.shape[1]
    pairs = {(e, i, j): (rows[e, i * k + j], cols[e, i * k + j])
             for e in range(m.n_elem) for i in range(k) for j in range(k)}
    for (e, i, j), (r, c) in pairs.items():
        assert r == m.edof[e, i] and c == m.edof[e, j]
    assert rows.size == m.n_elem * k * k


def test_cantilever_preset():
    m = build_grid(60, 30)
    bc = preset_problem("cantilever", m)
    assert bc.fixed_dofs.size == 62
    nz = np.flatnonzero(bc.force)
    assert nz.size == 1 and bc.force[nz[0]] == -1.0
    assert nz[0] == 2 * m.node(60, 15) + 1


def test_inverter_preset():
    m = build_grid(8, 4)
    bc = preset_problem("inverter", m)
    assert len(bc.springs) == 2
    assert np.flatnonzero(bc.force).tolist() == [bc.input_dof]
    assert {d for d, _ in bc.springs} == {bc.input_dof, bc.output_dof}
    assert bc.output_direction == -1.0
    full = preset_problem("inverter", m, symmetric=False)
    assert full.output_dof == 2 * m.node(8, 2)


def test_thermal_plate_preset():
    m = build_grid(60, 60, "thermal")
    bc = preset_problem("thermal_plate", m)
    assert np.all(bc.force[bc.free_dofs] > 0)
    assert bc.fixed_dofs.size == 25   # rows 18..42 of the left edge


def test_unit_cell_is_periodic():
    m = build_grid(4, 3)
    bc = preset_problem("unit_cell", m)
    assert bc.nfree == 2 * 4 * 3 - 2
    dm = bc.dof_map
    assert dm[2 * m.node(4, 3)] == dm[2 * m.node(0, 0)] == -1
    assert dm[2 * m.node(4, 1)] == dm[2 * m.node(0, 1)] >= 0
    assert dm[2 * m.node(2, 3) + 1] == dm[2 * m.node(2, 0) + 1] >= 0


def test_preset_errors():
    with pytest.raises(ValueError, match="unknown preset"):
        preset_problem("bridge", build_grid(2, 2))
    with pytest.raises(ValueError, match="thermal"):
        preset_problem("thermal_plate", build_grid(2, 2))


def test_bc_validation():
    with pytest.raises(ValueError):
        BoundaryConditions(4, [0], np.array([1.0, 0, 0, 0]))
    with pytest.raises(ValueError):
        BoundaryConditions(4, [0], np.zeros(4), springs=[(1, 0.0)])


def test_reduce_expand_roundtrip(rng):
    bc = preset_problem("cantilever", build_grid(3, 2))
    r = rng.normal(size=bc.nfree)
    np.testing.assert_array_equal(bc.reduce(bc.expand(r)), r)
    assert np.all(bc.expand(r)[bc.fixed_dofs] == 0)
