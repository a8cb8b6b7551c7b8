import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gfdmflow import (
    DomainGeometry,
    NodeKind,
    add_virtual_nodes,
    build_all_stencils,
    build_index_sets,
    build_stencil,
    generate_cartesian_cloud,
    weight,
)
from gfdmflow.errors import DegenerateStencilError
from gfdmflow.stencil import WEIGHT_SUPPORT_FACTOR, apply

EIGHT_POINT = np.array(
    [[-1, 0], [1, 0], [0, 1], [0, -1], [-1, 1], [1, 1], [-1, -1], [1, -1]],
    dtype=float,
)


def reference_ls_rows(center, neighbors, r_m):
    """Independent weighted-least-squares oracle via lstsq on sqrt-weighted
    Taylor rows (no shared code with the production path)."""
    d = np.asarray(neighbors, float) - np.asarray(center, float)
    L = np.column_stack([d[:, 0], d[:, 1], d[:, 0] ** 2 / 2, d[:, 1] ** 2 / 2,
                         d[:, 0] * d[:, 1]])
    r = np.hypot(d[:, 0], d[:, 1])
    q = r / (WEIGHT_SUPPORT_FACTOR * r_m)
    w = np.where(q <= 1, 1 - 6 * q**2 + 8 * q**3 - 3 * q**4, 0.0)
    sw = w  # error function weights each residual by w -> sqrt of w^2
    rows = np.empty((5, len(d)))
    # derivative of the LS solution w.r.t. each (u_j - u_0): solve per column
    for col in range(len(d)):
        e = np.zeros(len(d))
        e[col] = 1.0
        sol, *_ = np.linalg.lstsq(sw[:, None] * L, sw * e, rcond=None)
        rows[:, col] = sol
    return rows


def test_weight_values():
    assert weight(0.0, 1.0) == 1.0
    assert weight(1.0, 1.0) == pytest.approx(0.0, abs=1e-15)
    assert weight(0.5, 1.0) == pytest.approx(0.3125, rel=1e-15)
    assert weight(1.5, 1.0) == 0.0


def test_weight_argument_errors():
    with pytest.raises(ValueError):
        weight(-0.1, 1.0)
    with pytest.raises(ValueError):
        weight(0.5, 0.0)


@given(st.floats(0.0, 2.0), st.floats(0.0, 2.0))
@settings(max_examples=200, deadline=None)
def test_weight_bounded_and_monotone(r1, r2):
    w1, w2 = weight(r1, 1.0), weight(r2, 1.0)
    assert 0.0 <= w1 <= 1.0
    if r1 <= r2:
        assert w1 >= w2 - 1e-12


def test_cartesian_closed_form_coefficients():
    st_ = build_stencil((0.0, 0.0), EIGHT_POINT, r_m=1.6)
    m3 = st_.rows[2]
    # reference magnitudes of the 8-point lattice row (the transverse pair is
    # negative; quadratic exactness and the group sums force the sign)
    assert abs(m3[0]) == pytest.approx(0.96308, rel=1e-3)
    assert abs(m3[2]) == pytest.approx(0.036917, rel=1e-3)
    assert abs(m3[4]) == pytest.approx(0.018459, rel=1e-3)
    assert m3[2] < 0 < m3[0]


def test_group_sums_one_over_dx2():
    for dx in (1.0, 5.0):
        st_ = build_stencil((0.0, 0.0), EIGHT_POINT * dx, r_m=1.6 * dx)
        lap = st_.rows[2] + st_.rows[3]
        left = lap[0] + lap[4] + lap[6]      # column x = -dx
        right = lap[1] + lap[5] + lap[7]     # column x = +dx
        assert left == pytest.approx(1.0 / dx**2, rel=1e-9)
        assert right == pytest.approx(1.0 / dx**2, rel=1e-9)


def test_matches_independent_least_squares():
    rng = np.random.default_rng(3)
    for _ in range(20):
        k = rng.integers(6, 15)
        r_m = 1.0
        ang = rng.uniform(0, 2 * np.pi, k)
        rad = rng.uniform(0.3, 1.0, k) * r_m
        neigh = np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
        try:
            st_ = build_stencil((0.0, 0.0), neigh, r_m)
        except DegenerateStencilError:
            continue
        ref = reference_ls_rows((0.0, 0.0), neigh, r_m)
        assert np.allclose(st_.rows, ref, rtol=1e-8, atol=1e-10)


def test_quadratic_exactness_randomized():
    rng = np.random.default_rng(7)
    done = 0
    while done < 300:
        k = int(rng.integers(5, 20))
        ang = rng.uniform(0, 2 * np.pi, k)
        rad = rng.uniform(0.2, 1.0, k)
        neigh = np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
        try:
            st_ = build_stencil((0.0, 0.0), neigh, 1.0)
        except DegenerateStencilError:
            continue
        a = rng.normal(size=6)
        u0 = a[0]
        u = (a[0] + a[1] * neigh[:, 0] + a[2] * neigh[:, 1]
             + a[3] * neigh[:, 0] ** 2 + a[4] * neigh[:, 1] ** 2
             + a[5] * neigh[:, 0] * neigh[:, 1])
        got = st_.rows @ (u - u0)
        exact = np.array([a[1], a[2], 2 * a[3], 2 * a[4], a[5]])
        scale = max(1.0, float(np.max(np.abs(exact))))
        assert np.max(np.abs(got - exact)) / scale < 1e-9
        done += 1


def test_constant_field_is_exactly_zero():
    st_ = build_stencil((0.0, 0.0), EIGHT_POINT, 1.6)
    u = np.full(8, 7.0)
    assert np.all(st_.rows @ (u - 7.0) == 0.0)


def test_translation_invariance():
    # binary-grid coordinates keep the shifted positions exactly
    # representable, so the recomputed offsets are bit-identical
    rng = np.random.default_rng(11)
    neigh = np.round(rng.uniform(-1, 1, size=(9, 2)) * 64) / 64
    neigh = neigh[np.hypot(neigh[:, 0], neigh[:, 1]) > 0]
    base = build_stencil((0.0, 0.0), neigh, 1.5)
    shift = np.array([123.25, -56.5])
    moved = build_stencil(shift, neigh + shift, 1.5)
    assert np.allclose(base.rows, moved.rows, rtol=1e-12, atol=1e-15)


def test_collinear_layout_raises():
    t = np.array([-1.0, -0.6, 0.3, 0.7, 1.0])
    line = np.column_stack([t, 0.5 * t])  # one line through the node
    with pytest.raises(DegenerateStencilError):
        build_stencil((0.0, 0.0), line, 2.0)


def test_apply_on_fields():
    rect = DomainGeometry.rectangle(0, 0, 3, 1)
    cloud = generate_cartesian_cloud(rect, 0.1, 0.1)
    cloud = build_index_sets(cloud, 0.16)
    stencils = build_all_stencils(cloud)
    x = cloud.positions[:, 0]
    u = np.sin(x)
    interior = cloud.ids_of_kind(NodeKind.INTERIOR)
    worst = 0.0
    for i in interior:
        dx_val = apply(stencils[i], u)[0]
        worst = max(worst, abs(dx_val - np.cos(x[i])))
    assert worst < 5e-3
    # quadratic field: d2/dx2 = 2 everywhere, others per calculus
    u2 = x**2
    for i in interior[:25]:
        d = apply(stencils[i], u2)
        assert d[2] == pytest.approx(2.0, rel=1e-9)
        assert d[0] == pytest.approx(2 * x[i], rel=1e-9, abs=1e-9)
        assert abs(d[1]) < 1e-9 and abs(d[3]) < 1e-9 and abs(d[4]) < 1e-9


def test_apply_rejects_missing_values():
    st_ = build_stencil((0.0, 0.0), EIGHT_POINT, 1.6)
    u = np.full(9, np.nan)
    with pytest.raises(ValueError):
        apply(st_, u)
    with pytest.raises(ValueError):
        apply(st_, np.ones(3))


def test_second_derivative_converges_under_refinement():
    errs = []
    for dx in (0.2, 0.1):
        rect = DomainGeometry.rectangle(0, 0, 4, 4 * dx / 0.2 * 0.2)
        cloud = generate_cartesian_cloud(rect, dx, dx)
        cloud = build_index_sets(cloud, 1.6 * dx)
        stencils = build_all_stencils(cloud)
        x = cloud.positions[:, 0]
        u = np.sin(x)
        interior = cloud.ids_of_kind(NodeKind.INTERIOR)
        errs.append(
            max(abs(apply(stencils[i], u)[2] + np.sin(x[i])) for i in interior)
        )
    assert errs[1] < errs[0]


def test_batch_matches_single_node():
    rect = DomainGeometry.rectangle(0, 0, 300, 100)
    cloud = generate_cartesian_cloud(rect, 5.0, 5.0)
    cloud = add_virtual_nodes(
        cloud,
        {"G1": "dirichlet", "G2": "dirichlet", "G3": "derivative", "G4": "derivative"},
        offset=5.0,
    )
    cloud = build_index_sets(cloud, 8.0)
    stencils = build_all_stencils(cloud)
    rng = np.random.default_rng(0)
    owners = cloud.stencil_owner_ids()
    for i in rng.choice(owners, size=12, replace=False):
        if int(i) in stencils.deficient_ids:
            continue
        nb = cloud.index_sets[i]
        single = build_stencil(cloud.positions[i], cloud.positions[nb], cloud.r_m,
                               node_id=int(i))
        assert np.allclose(single.rows, stencils[int(i)].rows, rtol=1e-13, atol=1e-16)


def test_stencil_dump(tmp_path):
    rect = DomainGeometry.rectangle(0, 0, 30, 10)
    cloud = generate_cartesian_cloud(rect, 5.0, 5.0)
    cloud = build_index_sets(cloud, 8.0)
    stencils = build_all_stencils(cloud)
    path = tmp_path / "rows.txt"
    stencils.dump(path)
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    assert len(lines) == sum(
        len(cloud.index_sets[i]) for i in cloud.stencil_owner_ids()
    )
