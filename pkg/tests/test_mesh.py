import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from plapschwarz.mesh import (
    FeFunction,
    build_mesh_pair,
    build_uniform_mesh,
    coarse_to_fine,
    dump_mesh,
    evaluate,
    load_mesh,
    nodal_interpolate,
)


@pytest.mark.parametrize("m, nodes, tris, interior", [(1, 4, 2, 0), (4, 25, 32, 9)])
def test_counts_small(m, nodes, tris, interior):
    mesh = build_uniform_mesh(m)
    assert (mesh.n_nodes, mesh.n_triangles, mesh.n_dofs) == (nodes, tris, interior)


@pytest.mark.parametrize("m", [1, 2, 3, 7, 16, 64, 128])
def test_counting_identities_and_areas(m):
    mesh = build_uniform_mesh(m)
    assert mesh.n_nodes == (m + 1) ** 2
    assert mesh.n_triangles == 2 * m * m
    assert mesh.n_dofs == (m - 1) ** 2
    np.testing.assert_allclose(mesh.areas, 0.5 * mesh.h**2, rtol=1e-12)
    assert abs(mesh.areas.sum() - 1.0) < 1e-12
    t = mesh.triangles
    assert t.min() >= 0 and t.max() < mesh.n_nodes
    assert np.all((t[:, 0] != t[:, 1]) & (t[:, 1] != t[:, 2]) & (t[:, 0] != t[:, 2]))


def test_boundary_flags():
    mesh = build_uniform_mesh(5)
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    expect = (x == 0) | (x == 1) | (y == 0) | (y == 1)
    assert np.array_equal(mesh.boundary, expect)
    assert np.all(mesh.interior_index[mesh.boundary] == -1)
    assert np.array_equal(mesh.interior_index[mesh.interior_nodes], np.arange(mesh.n_dofs))


def test_row_major_and_diagonal():
    mesh = build_uniform_mesh(3)
    # node index = j*(m+1) + i
    assert np.allclose(mesh.nodes[6], [2 / 3, 1 / 3])
    # every triangle contains the lower-left and upper-right corners of its square
    p = mesh.nodes[mesh.triangles]
    lo = p.min(axis=1)
    hi = p.max(axis=1)
    for tri_pts, a, b in zip(p, lo, hi):
        assert any(np.allclose(q, a) for q in tri_pts)
        assert any(np.allclose(q, b) for q in tri_pts)


def test_rejects_bad_m():
    with pytest.raises(ValueError):
        build_uniform_mesh(0)
    with pytest.raises(ValueError):
        build_mesh_pair(3, 8)


def test_coarse_nodes_coincide():
    pair = build_mesh_pair(4, 16)
    for c in range(pair.coarse.n_nodes):
        f = pair.coarse_node_to_fine(c)
        assert np.max(np.abs(pair.fine.nodes[f] - pair.coarse.nodes[c])) <= 1e-15


def test_coarse_to_fine_zero_and_hat():
    pair = build_mesh_pair(4, 16)
    z = coarse_to_fine(pair, FeFunction.zeros(pair.coarse))
    assert not np.any(z.coeffs)
    c = 4  # an interior coarse dof
    hat = np.zeros(pair.coarse.n_dofs)
    hat[c] = 1.0
    v = coarse_to_fine(pair, FeFunction(pair.coarse, hat))
    node = pair.coarse.interior_nodes[c]
    fnode = pair.coarse_node_to_fine(node)
    assert v.coeffs[pair.fine.interior_index[fnode]] == pytest.approx(1.0)
    # support inside the coarse elements touching c (distance <= H in max norm)
    xy = pair.fine.nodes[pair.fine.interior_nodes]
    far = np.max(np.abs(xy - pair.coarse.nodes[node]), axis=1) >= pair.H - 1e-14
    assert not np.any(v.coeffs[far])


def test_coarse_to_fine_pointwise(rng):
    pair = build_mesh_pair(4, 16)
    v0 = FeFunction(pair.coarse, rng.standard_normal(pair.coarse.n_dofs))
    v = coarse_to_fine(pair, v0)
    pts = rng.uniform(size=(50, 2))
    assert np.max(np.abs(evaluate(v, pts) - evaluate(v0, pts))) <= 1e-13


def test_coarse_to_fine_mesh_mismatch():
    pair = build_mesh_pair(2, 8)
    with pytest.raises(ValueError):
        coarse_to_fine(pair, FeFunction.zeros(pair.fine))


def test_nodal_interpolate(rng):
    mesh = build_uniform_mesh(8)
    assert not np.any(nodal_interpolate(mesh, lambda x, y: 0.0 * x).coeffs)
    v = FeFunction(mesh, rng.standard_normal(mesh.n_dofs))
    full = v.nodal()
    lookup = {tuple(np.round(xy * 8).astype(int)): full[k] for k, xy in enumerate(mesh.nodes)}
    again = nodal_interpolate(
        mesh, lambda x, y: np.array([lookup[(round(a * 8), round(b * 8))] for a, b in zip(x, y)])
    )
    assert np.array_equal(again.coeffs, v.coeffs)


def test_nodal_interpolate_product_is_nodewise(rng):
    from plapschwarz.decomposition import build_decomposition

    pair = build_mesh_pair(2, 8)
    dec = build_decomposition(pair, 1)
    w = FeFunction(pair.fine, rng.standard_normal(pair.fine.n_dofs))
    theta = dec.pou[0]
    xy = pair.fine.nodes[pair.fine.interior_nodes]
    index = {tuple(np.round(p * 8).astype(int)): k for k, p in enumerate(xy)}

    def product(x, y):
        ks = [index[(round(a * 8), round(b * 8))] for a, b in zip(x, y)]
        return theta[ks] * w.coeffs[ks]

    assert np.array_equal(nodal_interpolate(pair.fine, product).coeffs, theta * w.coeffs)


@given(st.integers(1, 6), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_nesting_exact_everywhere(M, r, seed):
    pair = build_mesh_pair(M, M * r)
    rng = np.random.default_rng(seed)
    v0 = FeFunction(pair.coarse, rng.standard_normal(pair.coarse.n_dofs))
    pts = rng.uniform(size=(20, 2))
    assert np.allclose(evaluate(coarse_to_fine(pair, v0), pts), evaluate(v0, pts), atol=1e-13)


def test_fefunction_arithmetic(rng):
    mesh = build_uniform_mesh(4)
    a = FeFunction(mesh, rng.standard_normal(mesh.n_dofs))
    b = FeFunction(mesh, rng.standard_normal(mesh.n_dofs))
    assert np.allclose((a + b - b).coeffs, a.coeffs)
    assert np.allclose((a * 2.0).coeffs, 2.0 * a.coeffs)
    assert np.allclose((-a).coeffs, -a.coeffs)
    with pytest.raises(ValueError):
        a + FeFunction.zeros(build_uniform_mesh(4))
    with pytest.raises(ValueError):
        FeFunction(mesh, np.zeros(3))


def test_dump_roundtrip(tmp_path):
    mesh = build_uniform_mesh(3)
    path = tmp_path / "mesh.txt"
    dump_mesh(mesh, path)
    assert path.read_text().splitlines()[0] == "m=3"
    m, nodes, tris = load_mesh(path)
    assert m == 3
    assert np.array_equal(nodes, mesh.nodes)
    assert np.array_equal(tris, mesh.triangles)
