import numpy as np
import pytest
from shapely.geometry import Point, Polygon

from gfdmflow import (
    DomainGeometry,
    NodeKind,
    add_virtual_nodes,
    build_index_sets,
    generate_cartesian_cloud,
    generate_scattered_cloud,
    load_cloud,
    save_cloud,
)
from gfdmflow.errors import GeometryError, StencilDeficiencyError

RECT = DomainGeometry.rectangle(0, 0, 300, 100)
ALL_DERIV = {"G1": "derivative", "G2": "derivative", "G3": "derivative", "G4": "derivative"}
TOP_BOTTOM = {"G1": "dirichlet", "G2": "dirichlet", "G3": "derivative", "G4": "derivative"}
ALL_DIR = {s: "dirichlet" for s in ("G1", "G2", "G3", "G4")}

POLY32 = DomainGeometry(
    np.array([[0, 0], [300, 20], [300, 120], [160, 170], [0, 130]], dtype=float),
    ("G4", "G2", "G3", "G3", "G1"),
)


def lattice_count(lx, ly, d):
    # hand formula: (Nx+1)(Ny+1) lattice points
    return (int(lx / d) + 1) * (int(ly / d) + 1)


def test_cartesian_node_counts():
    cloud = generate_cartesian_cloud(RECT, 5.0, 5.0)
    assert cloud.n_nodes == lattice_count(300, 100, 5) == 1281
    cloud2 = generate_cartesian_cloud(RECT, 2.0, 2.0)
    assert cloud2.n_nodes == lattice_count(300, 100, 2) == 7701


def test_cartesian_boundary_classification():
    cloud = generate_cartesian_cloud(RECT, 5.0, 5.0)
    boundary = [i for i in range(cloud.n_nodes) if cloud.node_segments[i]]
    # perimeter of a 61 x 21 lattice: 2*61 + 2*21 - 4 corners counted once
    assert len(boundary) == 2 * 61 + 2 * 21 - 4 == 160
    corners = [i for i in boundary if len(cloud.node_segments[i]) == 2]
    assert len(corners) == 4
    assert len(boundary) - len(corners) == 156
    assert cloud.h_avg == 5.0
    # interior nodes keep kind INTERIOR
    assert int(np.sum(cloud.kinds == int(NodeKind.INTERIOR))) == 59 * 19


def test_cartesian_rejects_bad_spacing():
    with pytest.raises(GeometryError):
        generate_cartesian_cloud(RECT, 7.0, 5.0)  # 300/7 not integral
    with pytest.raises(GeometryError):
        DomainGeometry.rectangle(0, 0, 0, 100)  # zero width


def test_scattered_determinism():
    a = generate_scattered_cloud(POLY32, 12.0, seed=42)
    b = generate_scattered_cloud(POLY32, 12.0, seed=42)
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.kinds, b.kinds)
    c = generate_scattered_cloud(POLY32, 12.0, seed=43)
    assert not np.array_equal(a.positions, c.positions)


def test_scattered_nodes_inside_polygon():
    cloud = generate_scattered_cloud(POLY32, 12.0, seed=1)
    # independent containment oracle
    poly = Polygon(POLY32.vertices)
    for pos in cloud.positions:
        assert poly.buffer(1e-6).contains(Point(pos))


def test_scattered_spacing_too_large():
    square = DomainGeometry.rectangle(0, 0, 1, 1)
    with pytest.raises(GeometryError):
        generate_scattered_cloud(square, 10.0, seed=0)


def test_virtual_nodes_top_bottom():
    cloud = generate_cartesian_cloud(RECT, 5.0, 5.0)
    cloud = add_virtual_nodes(cloud, TOP_BOTTOM, offset=5.0)
    virt = cloud.virtual_ids
    # one per non-corner top/bottom node plus one per corner (Dirichlet +
    # derivative junction adds a single node along the derivative normal)
    assert len(virt) == 2 * 59 + 4
    top_virt = virt[cloud.positions[virt, 1] > 100]
    assert np.allclose(cloud.positions[top_virt, 1], 105.0)
    bot_virt = virt[cloud.positions[virt, 1] < 0]
    assert np.allclose(cloud.positions[bot_virt, 1], -5.0)


def test_corner_virtual_placement():
    cloud = generate_cartesian_cloud(RECT, 5.0, 5.0)
    cloud = add_virtual_nodes(cloud, TOP_BOTTOM, offset=5.0)
    corner = [
        i
        for i in range(cloud.n_nodes)
        if tuple(cloud.positions[i]) == (0.0, 100.0)
    ][0]
    owned = [v for v in cloud.virtual_ids if cloud.owner[v] == corner]
    assert len(owned) == 1
    assert tuple(cloud.positions[owned[0]]) == (0.0, 105.0)
    # the corner keeps a Dirichlet row of its own
    assert cloud.kinds[corner] == int(NodeKind.DIRICHLET)


def test_two_derivative_segments_corner_gets_two_virtuals():
    cloud = generate_cartesian_cloud(RECT, 5.0, 5.0)
    cloud = add_virtual_nodes(cloud, ALL_DERIV, offset=5.0)
    corner = [
        i for i in range(cloud.n_nodes) if tuple(cloud.positions[i]) == (0.0, 0.0)
    ][0]
    owned = [v for v in cloud.virtual_ids if cloud.owner[v] == corner]
    assert len(owned) == 2
    dirs = sorted(tuple(np.round(cloud.virtual_direction[v], 12)) for v in owned)
    assert dirs == [(-1.0, 0.0), (0.0, -1.0)]


def test_segment_interior_corner_uses_bisector():
    # vertex (160, 170) sits inside segment G3: one virtual on the bisector
    cloud = generate_scattered_cloud(POLY32, 12.0, seed=1)
    cloud = add_virtual_nodes(cloud, TOP_BOTTOM, offset=6.0)
    vid = [
        i
        for i in range(cloud.n_nodes)
        if tuple(np.round(cloud.positions[i], 9)) == (160.0, 170.0)
    ][0]
    owned = [v for v in cloud.virtual_ids if cloud.owner[v] == vid]
    assert len(owned) == 1
    n1 = POLY32.edge_normal(2)
    n2 = POLY32.edge_normal(3)
    bis = (n1 + n2) / np.linalg.norm(n1 + n2)
    assert np.allclose(cloud.virtual_direction[owned[0]], bis, atol=1e-12)


def test_all_dirichlet_adds_no_virtuals():
    cloud = generate_cartesian_cloud(RECT, 5.0, 5.0)
    cloud = add_virtual_nodes(cloud, ALL_DIR, offset=5.0)
    assert len(cloud.virtual_ids) == 0
    assert cloud.counts()["dirichlet"] == 160


def test_virtual_nodes_strictly_outside():
    cloud = generate_scattered_cloud(POLY32, 12.0, seed=1)
    cloud = add_virtual_nodes(cloud, TOP_BOTTOM, offset=6.0)
    poly = Polygon(POLY32.vertices)
    for v in cloud.virtual_ids:
        assert not poly.buffer(1e-9).contains(Point(cloud.positions[v]))


def test_virtual_inside_domain_rejected():
    # a deep notch: bisector at the reflex corner points into the slot
    notch = DomainGeometry(
        np.array(
            [[0, 0], [10, 0], [10, 10], [5.5, 10], [5.0, 2.0], [4.5, 10], [0, 10]],
            dtype=float,
        ),
        ("B", "R", "T", "T", "T", "T", "L"),
    )
    cloud = generate_scattered_cloud(notch, 1.0, seed=3)
    with pytest.raises(GeometryError):
        add_virtual_nodes(
            cloud, {"B": "dirichlet", "R": "dirichlet", "L": "dirichlet", "T": "derivative"},
            offset=3.0,
        )


def offsets_within(radius):
    # lattice offsets with euclidean norm <= radius (independent count oracle)
    r = int(np.ceil(radius))
    out = [
        (a, b)
        for a in range(-r, r + 1)
        for b in range(-r, r + 1)
        if (a, b) != (0, 0) and np.hypot(a, b) <= radius
    ]
    return out


def test_index_set_sizes_cartesian():
    cloud = generate_cartesian_cloud(RECT, 5.0, 5.0)
    cloud = add_virtual_nodes(cloud, TOP_BOTTOM, offset=5.0)
    c16 = build_index_sets(cloud, 1.6 * 5.0)
    interior = c16.ids_of_kind(NodeKind.INTERIOR)
    mid = interior[len(interior) // 2]
    assert len(c16.index_sets[mid]) == len(offsets_within(1.6)) == 8
    c29 = build_index_sets(cloud, 2.9 * 5.0)
    assert len(c29.index_sets[mid]) == len(offsets_within(2.9)) == 24


def test_index_set_deficiency_error():
    cloud = generate_cartesian_cloud(RECT, 5.0, 5.0)
    cloud = add_virtual_nodes(cloud, TOP_BOTTOM, offset=5.0)
    with pytest.raises(StencilDeficiencyError):
        build_index_sets(cloud, 0.5 * 5.0)


def test_index_set_symmetry():
    cloud = generate_scattered_cloud(POLY32, 12.0, seed=5)
    cloud = add_virtual_nodes(cloud, TOP_BOTTOM, offset=6.0)
    cloud = build_index_sets(cloud, 24.0)
    eq_owner = set(np.flatnonzero(cloud.kinds != int(NodeKind.VIRTUAL)).tolist())
    for i in eq_owner:
        for j in cloud.index_sets[i]:
            if int(j) in eq_owner:
                assert i in cloud.index_sets[j], (i, j)


def test_no_self_membership_and_radius_rule():
    cloud = generate_scattered_cloud(POLY32, 12.0, seed=5)
    cloud = build_index_sets(cloud, 20.0)
    pos = cloud.positions
    for i in range(cloud.n_nodes):
        ids = cloud.index_sets[i]
        assert i not in ids
        if len(ids):
            d = np.linalg.norm(pos[ids] - pos[i], axis=1)
            assert np.all(d <= 20.0 + 1e-12)


def test_forced_virtual_membership():
    # offset beyond r_m: the owner still sees its virtual node
    cloud = generate_cartesian_cloud(RECT, 5.0, 5.0)
    cloud = add_virtual_nodes(cloud, TOP_BOTTOM, offset=11.0)
    cloud = build_index_sets(cloud, 10.0)
    for v in cloud.virtual_ids:
        o = int(cloud.owner[v])
        assert v in cloud.index_sets[o]
        d = np.linalg.norm(cloud.positions[v] - cloud.positions[o])
        assert d > cloud.r_m  # genuinely outside the search radius


@pytest.mark.parametrize("n_nodes,seed", [(500, 0), (2000, 1), (5000, 2)])
def test_kdtree_matches_brute_force(n_nodes, seed):
    rng = np.random.default_rng(seed)
    square = DomainGeometry.rectangle(0, 0, 1, 1)
    pts = rng.uniform(0.02, 0.98, size=(n_nodes, 2))
    from gfdmflow.cloud import PointCloud, _empty_cloud_arrays

    cloud = PointCloud(
        geometry=square,
        positions=pts,
        node_segments=[()] * n_nodes,
        h_avg=1.0 / np.sqrt(n_nodes),
        **_empty_cloud_arrays(n_nodes),
    )
    r_m = 3.0 / np.sqrt(n_nodes)
    built = build_index_sets(cloud, r_m)
    # brute-force O(N^2) oracle
    for i in rng.choice(n_nodes, size=60, replace=False):
        d = np.linalg.norm(pts - pts[i], axis=1)
        expect = set(np.flatnonzero((d <= r_m)).tolist()) - {i}
        assert set(built.index_sets[i].tolist()) == expect


def test_cloud_file_roundtrip(tmp_path):
    cloud = generate_cartesian_cloud(RECT, 10.0, 10.0)
    cloud = add_virtual_nodes(cloud, TOP_BOTTOM, offset=10.0)
    path = tmp_path / "cloud.txt"
    save_cloud(cloud, path)
    loaded = load_cloud(path, geometry=RECT)
    assert np.array_equal(loaded.positions, cloud.positions)
    assert np.array_equal(loaded.kinds, cloud.kinds)
    assert np.array_equal(loaded.owner, cloud.owner)
    assert loaded.node_segments == cloud.node_segments
    assert loaded.h_avg == cloud.h_avg
    for v in loaded.virtual_ids:
        assert np.allclose(loaded.virtual_direction[v], cloud.virtual_direction[v])


def test_cloud_loader_validates(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("0 0.0 0.0 V 5:G3\n")  # owner out of range
    with pytest.raises(GeometryError):
        load_cloud(path)
    path.write_text("0 0.0 0.0 Q -\n")  # unknown kind
    with pytest.raises(GeometryError):
        load_cloud(path)


def test_node_view():
    cloud = generate_cartesian_cloud(RECT, 5.0, 5.0)
    cloud = add_virtual_nodes(cloud, TOP_BOTTOM, offset=5.0)
    node = cloud.node(int(cloud.virtual_ids[0]))
    assert node.kind == NodeKind.VIRTUAL
    assert node.owner is not None
    top_mid = [
        i for i in range(cloud.n_nodes) if tuple(cloud.positions[i]) == (150.0, 100.0)
    ][0]
    nv = cloud.node(top_mid)
    assert nv.kind == NodeKind.DERIVATIVE
    assert nv.outward_normal is not None
    assert abs(np.hypot(*nv.outward_normal) - 1.0) < 1e-12
