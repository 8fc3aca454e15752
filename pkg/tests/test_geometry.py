import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecgi_vae.errors import FormatError, GeometryError, InvalidArgument
from ecgi_vae.geometry import (LeadField, build_lattice_mesh, fibonacci_leads, load_bundle,
                               load_lead_field, mesh_from_edges, save_bundle, save_lead_field,
                               synthesize_lead_field)


def test_smallest_lattice():
    m = build_lattice_mesh((2, 1, 1), 1.0)
    assert m.node_count == 2 and len(m.edges) == 1
    np.testing.assert_array_equal(m.laplacian.toarray(), [[-1, 1], [1, -1]])


def test_lattice_degrees():
    m = build_lattice_mesh((3, 3, 1), 1.0)
    assert m.node_count == 9
    assert m.degree[0] == 2 and m.degree[4] == 4


def test_laplacian_properties():
    m = build_lattice_mesh((4, 4, 2), 0.5)
    L = m.laplacian.toarray()
    # direct summation, independent of the sparse row-sum
    sums = [sum(L[i, j] for j in range(L.shape[1])) for i in range(L.shape[0])]
    assert np.max(np.abs(sums)) < 1e-12
    np.testing.assert_array_equal(L, L.T)
    assert L[0, 0] == pytest.approx(-3 / 0.25)


@pytest.mark.parametrize("dims,spacing", [((0, 2, 2), 1.0), ((2, 2, -1), 1.0), ((2, 2, 2), 0.0),
                                          ((1, 1, 1), 1.0)])
def test_lattice_invalid(dims, spacing):
    with pytest.raises(InvalidArgument):
        build_lattice_mesh(dims, spacing)


def test_disconnected_mesh_rejected():
    with pytest.raises(GeometryError):
        mesh_from_edges(np.zeros((3, 3)), [(0, 1)])


def test_lead_equidistant_gives_zero_row():
    m = mesh_from_edges([[-1, 0, 0], [1, 0, 0]], [(0, 1)])
    lf = synthesize_lead_field(m, [[0, 5, 0]])
    np.testing.assert_allclose(lf.H, [[0, 0]], atol=1e-15)


def test_lead_hand_arithmetic():
    m = mesh_from_edges([[0, 0, 0], [1, 0, 0]], [(0, 1)])
    lf = synthesize_lead_field(m, [[-1, 0, 0]], min_dist=0.5)
    np.testing.assert_allclose(lf.H, [[0.25, -0.25]], atol=1e-15)


def test_lead_too_close():
    m = build_lattice_mesh((2, 2, 2))
    with pytest.raises(GeometryError):
        synthesize_lead_field(m, [[0.1, 0, 0]], min_dist=1.0)


def test_default_layout(desk_mesh, desk_lead_field):
    H = desk_lead_field.H
    assert H.shape == (32, 256)
    assert np.max(np.abs(H.sum(axis=1))) < 1e-12
    # uniform TMP column projects to zero ECG
    assert np.max(np.abs(H @ np.full(256, 0.7))) < 1e-10
    r = np.linalg.norm(desk_lead_field.lead_coords - desk_mesh.node_coords.mean(0), axis=1)
    np.testing.assert_allclose(r, 4 * desk_mesh.bbox_diagonal)
    again = synthesize_lead_field(desk_mesh)
    assert again.H.tobytes() == H.tobytes()


@settings(max_examples=20, deadline=None)
@given(st.permutations(list(range(8))))
def test_permutation_equivariance(perm):
    m = build_lattice_mesh((2, 2, 2))
    leads = fibonacci_leads(m, 5)
    H = synthesize_lead_field(m, leads).H
    perm = np.array(perm)
    inv = np.argsort(perm)
    edges = inv[m.edges]
    mp = mesh_from_edges(m.node_coords[perm], edges)
    Hp = synthesize_lead_field(mp, leads).H
    np.testing.assert_allclose(Hp, H[:, perm], atol=1e-15)


def test_lead_field_round_trip(tmp_path, desk_lead_field):
    p = save_lead_field(tmp_path / "H.ntc", desk_lead_field)
    back = load_lead_field(p, n_nodes=256)
    assert back.H.tobytes() == desk_lead_field.H.tobytes()
    assert back.lead_coords.tobytes() == desk_lead_field.lead_coords.tobytes()


def test_lead_field_load_errors(tmp_path):
    from ecgi_vae.container import save_container
    save_container(tmp_path / "noH.ntc", {"G": np.ones((2, 3))})
    with pytest.raises(FormatError):
        load_lead_field(tmp_path / "noH.ntc")
    bad = np.ones((2, 3))
    bad[1, 1] = np.nan
    save_container(tmp_path / "nan.ntc", {"H": bad})
    with pytest.raises(FormatError):
        load_lead_field(tmp_path / "nan.ntc")
    save_container(tmp_path / "ok.ntc", {"H": np.ones((2, 3))})
    with pytest.raises(FormatError):
        load_lead_field(tmp_path / "ok.ntc", n_nodes=4)


def test_bundle_round_trip(tmp_path, desk_mesh, desk_lead_field):
    p = save_bundle(tmp_path / "mesh.bundle", desk_mesh, desk_lead_field)
    m, lf = load_bundle(p)
    assert m.node_count == 256 and m.dims == (8, 8, 4)
    assert (m.laplacian != desk_mesh.laplacian).nnz == 0
    assert lf.H.tobytes() == desk_lead_field.H.tobytes()


def test_immutable(desk_lead_field):
    with pytest.raises(ValueError):
        desk_lead_field.H[0, 0] = 1.0
