import math

import numpy as np
import pytest

from xfemoc.mesh import (Mesh, MeshError, build_structured_crack_mesh,
                         build_three_quarter_disk_mesh, export_mesh, import_mesh)


def test_unfitted_n9_counts(mesh9):
    assert mesh9.n_triangles == 162
    assert mesh9.n_nodes == 100
    assert {t for *_, t in mesh9.boundary_edges} == {"outer"}


def test_fitted_n10_counts_match_brute_force_duplicates(mesh10_fitted):
    m = mesh10_fitted
    assert m.n_triangles == 200
    assert m.n_nodes == 126
    # brute force: group nodes by rounded position, keep positions with two indices
    seen = {}
    for k, p in enumerate(np.round(m.nodes, 12).tolist()):
        seen.setdefault(tuple(p), []).append(k)
    dup = sorted(p[0] for p, ks in seen.items() if len(ks) == 2)
    assert np.allclose(dup, [-1.0, -0.8, -0.6, -0.4, -0.2])
    assert all(abs(p[1]) < 1e-12 for p, ks in seen.items() if len(ks) == 2)
    assert len(seen[(0.0, 0.0)]) == 1
    assert len(m.boundary_by_tag("crack_upper")) == 5
    assert len(m.boundary_by_tag("crack_lower")) == 5


def test_fitted_crack_faces_reference_distinct_copies(mesh10_fitted):
    m = mesh10_fitted
    up = {i for i, j, _ in m.boundary_by_tag("crack_upper")} | {j for i, j, _ in m.boundary_by_tag("crack_upper")}
    lo = {i for i, j, _ in m.boundary_by_tag("crack_lower")} | {j for i, j, _ in m.boundary_by_tag("crack_lower")}
    shared = up & lo
    assert len(shared) == 1  # only the tip is shared
    assert np.allclose(m.nodes[shared.pop()], 0.0)
    cen = m.nodes[m.triangles].mean(axis=1)
    for k in np.nonzero(cen[:, 1] < 0)[0]:
        assert not set(m.triangles[k]) & (up - lo)
    for k in np.nonzero(cen[:, 1] > 0)[0]:
        assert not set(m.triangles[k]) & (lo - up)


def test_tip_lies_on_central_diagonal_for_n39():
    m = build_structured_crack_mesh(39)
    c = 1.0 / 39.0
    tl, br = np.array([-c, c]), np.array([c, -c])
    on_nodes = [np.argmin(np.linalg.norm(m.nodes - p, axis=1)) for p in (tl, br)]
    assert np.allclose(m.nodes[on_nodes], [tl, br], atol=1e-14)
    assert (on_nodes[0], on_nodes[1]) in m.edge_to_triangle() or \
        (on_nodes[1], on_nodes[0]) in m.edge_to_triangle()
    # the tip is the midpoint of that edge
    assert np.allclose(0.5 * (tl + br), 0.0)


@pytest.mark.parametrize("N, fitted", [(2, False), (9, True)])
def test_parity_errors(N, fitted):
    with pytest.raises(MeshError, match="N"):
        build_structured_crack_mesh(N, fitted=fitted)


@pytest.mark.parametrize("N, fitted", [(9, False), (15, False), (10, True), (16, True)])
def test_structured_invariants(N, fitted):
    m = build_structured_crack_mesh(N, fitted=fitted)
    assert (m.signed_areas() > 0).all()
    assert abs(m.signed_areas().sum() - 4.0) < 1e-12
    V, E, F = m.n_nodes, len(m.edges()), m.n_triangles
    assert V - E + F == 1
    counts = [len(v) for v in m.edge_to_triangle().values()]
    assert max(counts) <= 2
    assert counts.count(1) == len(m.boundary_edges)


def test_unfitted_node_set_point_symmetric(mesh9):
    a = {tuple(p) for p in np.round(mesh9.nodes, 12).tolist()}
    b = {tuple(p) for p in np.round(-mesh9.nodes, 12).tolist()}
    assert a == b


@pytest.mark.parametrize("h, ref_count", [(0.25, 51), (0.125, 186)])
def test_disk_node_counts_near_reference(h, ref_count):
    m = build_three_quarter_disk_mesh(h)
    assert abs(m.n_nodes - ref_count) <= 0.3 * ref_count


@pytest.mark.parametrize("h", [0.25, 0.125, 1.0 / 12])
def test_disk_domain_membership_area_and_quality(h):
    m = build_three_quarter_disk_mesh(h)
    x, y = m.nodes.T
    assert (np.hypot(x, y) <= 1 + 1e-12).all()
    assert not ((x > 1e-12) & (y < -1e-12)).any()
    assert abs(m.signed_areas().sum() - 0.75 * math.pi) < 2 * h * h
    e = m.edges()
    L = np.linalg.norm(m.nodes[e[:, 0]] - m.nodes[e[:, 1]], axis=1)
    assert L.min() >= 0.5 * h and L.max() <= 2 * h
    # boundary nodes sit on the arc or on one of the two straight edges
    b = np.unique([i for i, j, _ in m.boundary_edges] + [j for i, j, _ in m.boundary_edges])
    bx, by = m.nodes[b].T
    on_arc = np.abs(np.hypot(bx, by) - 1) < 1e-10
    on_x = (np.abs(by) < 1e-12) & (bx >= -1e-12)
    on_y = (np.abs(bx) < 1e-12) & (by <= 1e-12)
    assert (on_arc | on_x | on_y).all()


def test_disk_mesh_is_deterministic():
    a, b = build_three_quarter_disk_mesh(0.125), build_three_quarter_disk_mesh(0.125)
    assert np.array_equal(a.nodes, b.nodes) and np.array_equal(a.triangles, b.triangles)


def test_disk_rejects_bad_h():
    with pytest.raises(MeshError):
        build_three_quarter_disk_mesh(1.5)


SINGLE = """xfemmesh 1
nodes 3
0 0
1 0
0 1
triangles 1
0 1 2
boundary 3
0 1 outer
1 2 outer
2 0 outer
"""


def test_import_single_triangle():
    m = import_mesh(SINGLE)
    assert m.n_nodes == 3 and m.n_triangles == 1


def test_import_clockwise_triangle_names_index():
    with pytest.raises(MeshError, match="triangle 0"):
        import_mesh(SINGLE.replace("0 1 2", "0 2 1"))


def test_import_parse_error_reports_line():
    with pytest.raises(MeshError, match="line 4"):
        import_mesh(SINGLE.replace("1 0\n", "1 zero\n"))


def test_import_rejects_unknown_tag_and_bad_header():
    with pytest.raises(MeshError, match="boundary edge 2"):
        import_mesh(SINGLE.replace("2 0 outer", "2 0 side"))
    with pytest.raises(MeshError, match="line 1"):
        import_mesh(SINGLE.replace("xfemmesh 1", "mesh 2"))


@pytest.mark.parametrize("fitted, N", [(False, 9), (True, 10)])
def test_export_import_round_trip(fitted, N):
    m = build_structured_crack_mesh(N, fitted=fitted)
    text = export_mesh(m)
    back = import_mesh(text)
    assert np.array_equal(back.nodes, m.nodes)
    assert np.array_equal(back.triangles, m.triangles)
    assert back.boundary_edges == m.boundary_edges
    assert export_mesh(back).split() == text.split()


def test_mesh_is_immutable(mesh9):
    with pytest.raises(ValueError):
        mesh9.nodes[0, 0] = 5.0


def test_validate_rejects_edge_shared_by_three():
    nodes = [[0, 0], [1, 0], [0, 1], [1, 1], [-1, 1]]
    tris = [[0, 1, 2], [1, 3, 2], [0, 2, 4], [0, 1, 2]]
    with pytest.raises(MeshError):
        Mesh(np.array(nodes, float), np.array(tris)).validate()
