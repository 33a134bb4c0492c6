import numpy as np
import pytest

from geomflow.errors import InvalidInputError, InvalidMeshError
from geomflow.refmesh import (
    POLYGON_HEADER,
    ReferenceMesh,
    load_mesh,
    make_circle_mesh,
    make_cuboid_mesh,
    make_icosphere_mesh,
    read_obj,
    read_polygon,
    write_obj,
    write_polygon,
)


def test_circle_mesh_basic():
    mesh = make_circle_mesh(12)
    assert mesh.dim == 1
    assert mesh.nvertices == mesh.ncells == 12
    assert np.allclose(np.linalg.norm(mesh.vertices, axis=1), 1.0)
    # counterclockwise orientation: positive signed area
    a = mesh.vertices[mesh.cells[:, 0]]
    b = mesh.vertices[mesh.cells[:, 1]]
    signed = 0.5 * np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
    assert signed > 0


def test_circle_mesh_too_small():
    with pytest.raises(InvalidMeshError):
        make_circle_mesh(2)


@pytest.mark.parametrize("r,V,F", [(0, 12, 20), (1, 42, 80), (2, 162, 320)])
def test_icosphere_counts(r, V, F):
    mesh = make_icosphere_mesh(r)
    assert (mesh.nvertices, mesh.ncells) == (V, F)
    assert len(mesh.edges) == mesh.nvertices + mesh.ncells - 2  # Euler
    assert np.allclose(np.linalg.norm(mesh.vertices, axis=1), 1.0)


def test_icosphere_outward_orientation():
    mesh = make_icosphere_mesh(1)
    tri = mesh.vertices[mesh.cells]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    centroid = tri.mean(axis=1)
    assert np.all(np.einsum("ck,ck->c", n, centroid) > 0)


def test_cuboid_reference_counts():
    mesh = make_cuboid_mesh(8.0, 1.0, 1.0, 3)
    assert mesh.nvertices == 308
    assert len(mesh.edges) == 918
    assert mesh.ncells == 612
    assert np.allclose(np.abs(mesh.vertices).max(axis=0), [4.0, 0.5, 0.5])


def test_cuboid_invalid_args():
    with pytest.raises(InvalidInputError):
        make_cuboid_mesh(0.0, 1.0, 1.0)
    with pytest.raises(InvalidInputError):
        make_cuboid_mesh(1.0, 1.0, 1.0, density=0)


def test_validate_rejects_open_surface():
    mesh = make_icosphere_mesh(0)
    with pytest.raises(InvalidMeshError):
        ReferenceMesh(2, mesh.vertices, mesh.cells[:-1])


def test_validate_rejects_flipped_triangle():
    mesh = make_icosphere_mesh(0)
    cells = mesh.cells.copy()
    cells[0] = cells[0][::-1]
    with pytest.raises(InvalidMeshError):
        ReferenceMesh(2, mesh.vertices, cells)


def test_validate_rejects_bad_polygon():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    cells = np.array([[0, 1], [1, 2], [0, 2]])  # vertex 2 has two incoming edges
    with pytest.raises(InvalidMeshError):
        ReferenceMesh(1, verts, cells)


def test_obj_roundtrip(tmp_path, ico1):
    path = tmp_path / "s.obj"
    write_obj(path, ico1.vertices, ico1.cells)
    back = read_obj(path)
    assert np.array_equal(back.cells, ico1.cells)
    assert np.allclose(back.vertices, ico1.vertices, atol=1e-15)


def test_polygon_roundtrip(tmp_path):
    mesh = make_circle_mesh(9)
    path = tmp_path / "c.txt"
    write_polygon(path, mesh.vertices)
    back = read_polygon(path)
    assert back.dim == 1 and back.nvertices == 9
    assert np.allclose(back.vertices, mesh.vertices, atol=1e-15)
    with open(path) as f:
        assert f.readline().strip() == POLYGON_HEADER


def test_load_mesh_dispatch(tmp_path, ico1):
    p1 = tmp_path / "a.obj"
    write_obj(p1, ico1.vertices, ico1.cells)
    assert load_mesh(p1).dim == 2
    p2 = tmp_path / "b.txt"
    write_polygon(p2, make_circle_mesh(8).vertices)
    assert load_mesh(p2).dim == 1


def test_polygon_bad_header(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("NOT-A-POLYGON\n3\n0 0\n1 0\n0 1\n")
    with pytest.raises(InvalidMeshError):
        read_polygon(p)


def test_max_edge_length_halves_under_refinement():
    h = [make_icosphere_mesh(r).max_edge_length() for r in (0, 1, 2)]
    assert h[0] > h[1] > h[2]
    assert 1.6 < h[0] / h[1] < 2.1 and 1.6 < h[1] / h[2] < 2.1
