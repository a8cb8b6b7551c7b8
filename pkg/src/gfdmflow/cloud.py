"""Point clouds for 2D meshless discretization.

A cloud is built in three stages:

1. ``generate_cartesian_cloud`` / ``generate_scattered_cloud`` place nodes and
   classify them against the boundary segments of a :class:`DomainGeometry`;
2. ``add_virtual_nodes`` inserts one exterior helper node per derivative
   boundary condition so that boundary stencils stay balanced;
3. ``build_index_sets`` fills the per-node neighbor lists within the uniform
   influence radius ``r_m``.

Clouds are treated as immutable once stage 3 has run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np
from scipy.spatial import cKDTree

from .errors import GeometryError, StencilDeficiencyError

# Boundary node is a corner when the interior angle deviates from a straight
# line by more than this (degrees).
CORNER_ANGLE_TOL_DEG = 1.0

# Interior candidates of the scattered generator are dropped when closer than
# this fraction of the target spacing to the boundary polyline.
BOUNDARY_CLEARANCE = 0.45

# Jitter amplitude of the scattered generator's interior lattice, as a
# fraction of the target spacing (must stay <= 0.25 to keep clouds graded).
JITTER_FRACTION = 0.25

MIN_STENCIL_NEIGHBORS = 5


class NodeKind(IntEnum):
    INTERIOR = 0
    DIRICHLET = 1
    DERIVATIVE = 2
    VIRTUAL = 3


KIND_CHARS = {
    NodeKind.INTERIOR: "I",
    NodeKind.DIRICHLET: "D",
    NodeKind.DERIVATIVE: "N",
    NodeKind.VIRTUAL: "V",
}
CHAR_KINDS = {v: k for k, v in KIND_CHARS.items()}


@dataclass(frozen=True)
class Node:
    """Read-only view of one cloud node."""

    id: int
    position: tuple[float, float]
    kind: NodeKind
    owner: int | None = None
    outward_normal: tuple[float, float] | None = None
    segments: tuple[str, ...] = ()


@dataclass(frozen=True)
class DomainGeometry:
    """Simple closed polygon with named boundary segments.

    ``vertices`` are ordered counter-clockwise without repeating the first
    point.  ``edge_labels[e]`` names the segment that edge
    ``vertices[e] -> vertices[(e+1) % n]`` belongs to; a segment may span
    several consecutive edges.
    """

    vertices: np.ndarray
    edge_labels: tuple[str, ...]

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=float)
        object.__setattr__(self, "vertices", verts)
        if verts.ndim != 2 or verts.shape[1] != 2 or len(verts) < 3:
            raise GeometryError("polygon needs at least 3 (x, y) vertices")
        if len(self.edge_labels) != len(verts):
            raise GeometryError(
                f"{len(verts)} edges but {len(self.edge_labels)} labels"
            )
        if self.signed_area() <= 0:
            raise GeometryError("polygon must be counter-clockwise with positive area")
        if _polygon_self_intersects(verts):
            raise GeometryError("polygon is self-intersecting")

    @classmethod
    def rectangle(cls, x0, y0, x1, y1, left="G1", right="G2", top="G3", bottom="G4"):
        if not (x1 > x0 and y1 > y0):
            raise GeometryError("rectangle must have positive width and height")
        verts = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
        return cls(np.array(verts, dtype=float), (bottom, right, top, left))

    @property
    def n_edges(self):
        return len(self.vertices)

    @property
    def segment_names(self):
        seen = []
        for lab in self.edge_labels:
            if lab not in seen:
                seen.append(lab)
        return tuple(seen)

    def edge(self, e):
        a = self.vertices[e]
        b = self.vertices[(e + 1) % self.n_edges]
        return a, b

    def edge_normal(self, e):
        """Outward unit normal of edge ``e`` (CCW polygon: right of travel)."""
        a, b = self.edge(e)
        t = b - a
        n = np.array([t[1], -t[0]])
        return n / np.linalg.norm(n)

    def signed_area(self):
        x = self.vertices[:, 0]
        y = self.vertices[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def is_rectangle(self):
        if self.n_edges != 4:
            return False
        v = self.vertices
        for e in range(4):
            a, b = v[e], v[(e + 1) % 4]
            if abs(a[0] - b[0]) > 1e-12 and abs(a[1] - b[1]) > 1e-12:
                return False
        return True

    def contains(self, points, include_boundary=True, tol=1e-9):
        """Vectorized even-odd point-in-polygon test."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        inside = np.zeros(len(pts), dtype=bool)
        v = self.vertices
        n = len(v)
        x, y = pts[:, 0], pts[:, 1]
        for e in range(n):
            x1, y1 = v[e]
            x2, y2 = v[(e + 1) % n]
            crosses = (y1 > y) != (y2 > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            inside ^= crosses & (x < np.where(crosses, xint, np.inf))
        on_edge = self.distance_to_boundary(pts) <= tol
        result = np.where(on_edge, include_boundary, inside)
        return result if np.asarray(points).ndim == 2 else bool(result[0])

    def distance_to_boundary(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        dmin = np.full(len(pts), np.inf)
        for e in range(self.n_edges):
            a, b = self.edge(e)
            ab = b - a
            t = np.clip(((pts - a) @ ab) / (ab @ ab), 0.0, 1.0)
            proj = a + t[:, None] * ab
            dmin = np.minimum(dmin, np.linalg.norm(pts - proj, axis=1))
        return dmin if np.asarray(points).ndim == 2 else float(dmin[0])


def _polygon_self_intersects(verts):
    n = len(verts)
    for i in range(n):
        a1, a2 = verts[i], verts[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue  # shared endpoint
            b1, b2 = verts[j], verts[(j + 1) % n]
            if _segments_cross(a1, a2, b1, b2):
                return True
    return False


def _segments_cross(a1, a2, b1, b2):
    def orient(p, q, r):
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    d1 = orient(a1, a2, b1)
    d2 = orient(a1, a2, b2)
    d3 = orient(b1, b2, a1)
    d4 = orient(b1, b2, a2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


@dataclass
class PointCloud:
    """Node set plus (optionally) the per-node influence-domain index sets.

    ``node_segments[i]`` lists the boundary segments node ``i`` lies on; for a
    virtual node it holds the single segment whose derivative condition the
    node carries.  ``virtual_direction[i]`` is the unit vector along which a
    virtual node was offset from its owner (NaN elsewhere).
    """

    geometry: DomainGeometry | None
    positions: np.ndarray
    kinds: np.ndarray
    owner: np.ndarray
    normals: np.ndarray
    node_segments: list[tuple[str, ...]]
    virtual_direction: np.ndarray
    h_avg: float
    r_m: float | None = None
    index_sets: list[np.ndarray] | None = None
    virtual_offset: float | None = None

    @property
    def n_nodes(self):
        return len(self.positions)

    def node(self, i):
        kind = NodeKind(int(self.kinds[i]))
        owner = int(self.owner[i]) if self.owner[i] >= 0 else None
        normal = None
        if np.all(np.isfinite(self.normals[i])):
            normal = (float(self.normals[i, 0]), float(self.normals[i, 1]))
        return Node(
            id=i,
            position=(float(self.positions[i, 0]), float(self.positions[i, 1])),
            kind=kind,
            owner=owner,
            outward_normal=normal,
            segments=tuple(self.node_segments[i]),
        )

    def ids_of_kind(self, kind):
        return np.flatnonzero(self.kinds == int(kind))

    @property
    def virtual_ids(self):
        return self.ids_of_kind(NodeKind.VIRTUAL)

    @property
    def real_ids(self):
        return np.flatnonzero(self.kinds != int(NodeKind.VIRTUAL))

    def stencil_owner_ids(self):
        """Nodes whose derivative stencil is actually used.

        These are the interior nodes, derivative-boundary nodes, and any
        boundary node that owns at least one virtual node (a mixed corner
        keeps a Dirichlet row of its own but its stencil carries the
        derivative condition assigned to its virtual node).
        """
        needed = set(np.flatnonzero(self.kinds == int(NodeKind.INTERIOR)).tolist())
        needed.update(np.flatnonzero(self.kinds == int(NodeKind.DERIVATIVE)).tolist())
        for v in self.virtual_ids:
            needed.add(int(self.owner[v]))
        return np.array(sorted(needed), dtype=int)

    def counts(self):
        return {
            "interior": int(np.sum(self.kinds == int(NodeKind.INTERIOR))),
            "dirichlet": int(np.sum(self.kinds == int(NodeKind.DIRICHLET))),
            "derivative": int(np.sum(self.kinds == int(NodeKind.DERIVATIVE))),
            "virtual": int(np.sum(self.kinds == int(NodeKind.VIRTUAL))),
            "total": self.n_nodes,
        }


def _empty_cloud_arrays(n):
    return dict(
        kinds=np.zeros(n, dtype=np.int8),
        owner=np.full(n, -1, dtype=np.int64),
        normals=np.full((n, 2), np.nan),
        virtual_direction=np.full((n, 2), np.nan),
    )


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def generate_cartesian_cloud(rect: DomainGeometry, dx: float, dy: float) -> PointCloud:
    """Lattice cloud on an axis-aligned rectangle, boundary included.

    ``dx`` and ``dy`` must divide the side lengths evenly.  Boundary nodes are
    classified by the segments of the edges they lie on; lattice corners carry
    both adjacent segment labels.
    """
    if not (rect.is_rectangle()):
        raise GeometryError("cartesian generator requires an axis-aligned rectangle")
    if dx <= 0 or dy <= 0:
        raise GeometryError("node spacing must be positive")
    x0, y0 = rect.vertices.min(axis=0)
    x1, y1 = rect.vertices.max(axis=0)
    wx, wy = x1 - x0, y1 - y0
    if wx <= 0 or wy <= 0:
        raise GeometryError("degenerate rectangle (zero width or height)")
    nx = wx / dx
    ny = wy / dy
    if abs(nx - round(nx)) > 1e-9 * max(1.0, nx) or abs(ny - round(ny)) > 1e-9 * max(1.0, ny):
        raise GeometryError(
            f"spacing ({dx}, {dy}) does not divide the rectangle sides ({wx}, {wy}) evenly"
        )
    nx, ny = int(round(nx)), int(round(ny))

    xs = x0 + dx * np.arange(nx + 1)
    ys = y0 + dy * np.arange(ny + 1)
    X, Y = np.meshgrid(xs, ys)  # row-major over y then x: deterministic ids
    positions = np.column_stack([X.ravel(), Y.ravel()])
    n = len(positions)
    arrays = _empty_cloud_arrays(n)
    node_segments: list[tuple[str, ...]] = [()] * n

    cloud = PointCloud(
        geometry=rect,
        positions=positions,
        node_segments=node_segments,
        h_avg=float(min(dx, dy)),
        **arrays,
    )
    _classify_boundary(cloud)
    return cloud


def generate_scattered_cloud(
    geom: DomainGeometry, target_spacing: float, seed: int
) -> PointCloud:
    """Jittered-lattice cloud inside an arbitrary simple polygon.

    Boundary nodes sit at the polygon vertices and at uniform arc-length
    subdivisions of each edge; interior nodes come from a seeded jittered
    lattice (jitter amplitude 0.25 * spacing) culled to points strictly inside
    the polygon with a clearance to the boundary.  Output is reproducible for
    a fixed seed.
    """
    if target_spacing <= 0:
        raise GeometryError("target spacing must be positive")
    s = float(target_spacing)

    # boundary nodes: polygon vertices + per-edge uniform subdivision
    bpos = []
    bsegs = []
    nE = geom.n_edges
    for e in range(nE):
        a, b = geom.edge(e)
        vertex_segs = (geom.edge_labels[(e - 1) % nE], geom.edge_labels[e])
        if vertex_segs[0] == vertex_segs[1]:
            vertex_segs = (vertex_segs[0],)
        bpos.append(a)
        bsegs.append(vertex_segs)
        length = float(np.linalg.norm(b - a))
        nsub = max(1, int(round(length / s)))
        for k in range(1, nsub):
            bpos.append(a + (b - a) * (k / nsub))
            bsegs.append((geom.edge_labels[e],))
    bpos = np.array(bpos)

    # interior candidates: cell-centered lattice over the bounding box
    x0, y0 = geom.vertices.min(axis=0)
    x1, y1 = geom.vertices.max(axis=0)
    ix = np.arange(x0 + 0.5 * s, x1, s)
    iy = np.arange(y0 + 0.5 * s, y1, s)
    if len(ix) == 0 or len(iy) == 0:
        raise GeometryError("target spacing is too large for the polygon")
    X, Y = np.meshgrid(ix, iy)
    cand = np.column_stack([X.ravel(), Y.ravel()])
    rng = np.random.default_rng(seed)
    cand = cand + rng.uniform(-JITTER_FRACTION * s, JITTER_FRACTION * s, size=cand.shape)

    keep = geom.contains(cand, include_boundary=False)
    keep &= geom.distance_to_boundary(cand) >= BOUNDARY_CLEARANCE * s
    interior = cand[keep]
    if len(interior) < MIN_STENCIL_NEIGHBORS:
        raise GeometryError(
            f"target spacing {s} leaves only {len(interior)} interior nodes; "
            f"at least {MIN_STENCIL_NEIGHBORS} are required"
        )

    positions = np.vstack([bpos, interior])
    n = len(positions)
    arrays = _empty_cloud_arrays(n)
    node_segments = list(bsegs) + [()] * len(interior)

    # average nearest-neighbor spacing
    tree = cKDTree(positions)
    dists, _ = tree.query(positions, k=2)
    h_avg = float(np.mean(dists[:, 1]))

    cloud = PointCloud(
        geometry=geom,
        positions=positions,
        node_segments=node_segments,
        h_avg=h_avg,
        **arrays,
    )
    _classify_boundary(cloud, boundary_ids=np.arange(len(bpos)))
    return cloud


def _classify_boundary(cloud: PointCloud, boundary_ids=None):
    """Set node kinds/normals/segment lists from the geometry.

    All boundary nodes start as DIRICHLET placeholders; ``add_virtual_nodes``
    refines the kind once the per-segment BC kinds are known.
    """
    geom = cloud.geometry
    pos = cloud.positions
    if boundary_ids is None:
        boundary_ids = np.flatnonzero(geom.distance_to_boundary(pos) <= 1e-9)

    # edge membership per boundary node
    for i in boundary_ids:
        p = pos[i]
        touching = []
        for e in range(geom.n_edges):
            a, b = geom.edge(e)
            ab = b - a
            t = float(np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0))
            if np.linalg.norm(p - (a + t * ab)) <= 1e-9 * max(1.0, np.linalg.norm(ab)):
                touching.append(e)
        if not touching:
            continue
        segs = []
        for e in touching:
            if geom.edge_labels[e] not in segs:
                segs.append(geom.edge_labels[e])
        if not cloud.node_segments[i]:
            cloud.node_segments[i] = tuple(segs)
        cloud.kinds[i] = int(NodeKind.DIRICHLET)
        normals = np.array([geom.edge_normal(e) for e in touching])
        nsum = normals.sum(axis=0)
        norm = np.linalg.norm(nsum)
        if norm > 1e-12:
            cloud.normals[i] = nsum / norm


def _touching_edges(geom: DomainGeometry, p):
    out = []
    for e in range(geom.n_edges):
        a, b = geom.edge(e)
        ab = b - a
        t = float(np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0))
        if np.linalg.norm(p - (a + t * ab)) <= 1e-9 * max(1.0, np.linalg.norm(ab)):
            out.append(e)
    return out


def _is_corner(geom: DomainGeometry, edges):
    """Corner test: interior angle between the touched edges off straight by
    more than CORNER_ANGLE_TOL_DEG."""
    if len(edges) < 2:
        return False
    n1 = geom.edge_normal(edges[0])
    n2 = geom.edge_normal(edges[1])
    cosang = float(np.clip(n1 @ n2, -1.0, 1.0))
    return math.degrees(math.acos(cosang)) > CORNER_ANGLE_TOL_DEG


# ---------------------------------------------------------------------------
# virtual nodes
# ---------------------------------------------------------------------------


def add_virtual_nodes(cloud: PointCloud, bc_kinds: dict, offset: float) -> PointCloud:
    """Insert one exterior virtual node per derivative boundary condition.

    ``bc_kinds`` maps each segment name to ``"dirichlet"`` or ``"derivative"``.
    Placement follows the corner taxonomy: a non-corner derivative node gets a
    node along its edge normal; a corner joining a Dirichlet segment and one
    derivative segment gets a single node along the derivative edge's normal;
    a corner joining two derivative segments gets one node per normal; a
    corner interior to a single derivative segment gets one node on the
    exterior angular bisector.  Boundary-node kinds are refined here:
    DIRICHLET when any touching segment is Dirichlet, DERIVATIVE otherwise.
    """
    if offset <= 0:
        raise GeometryError("virtual-node offset must be positive")
    geom = cloud.geometry
    if geom is None:
        raise GeometryError("cloud has no geometry; cannot place virtual nodes")
    unknown = set(bc_kinds) - set(geom.segment_names)
    missing = set(geom.segment_names) - set(bc_kinds)
    if unknown or missing:
        raise GeometryError(
            f"bc kinds do not match geometry segments (unknown {sorted(unknown)}, "
            f"missing {sorted(missing)})"
        )

    new_pos = []
    new_owner = []
    new_dir = []
    new_seg = []

    boundary_ids = np.flatnonzero(
        (cloud.kinds == int(NodeKind.DIRICHLET))
        | (cloud.kinds == int(NodeKind.DERIVATIVE))
    )
    kinds = cloud.kinds.copy()

    for i in boundary_ids:
        p = cloud.positions[i]
        edges = _touching_edges(geom, p)
        segs = cloud.node_segments[i]
        has_dirichlet = any(bc_kinds[s] == "dirichlet" for s in segs)
        deriv_segs = [s for s in segs if bc_kinds[s] == "derivative"]
        kinds[i] = int(NodeKind.DIRICHLET) if has_dirichlet else int(NodeKind.DERIVATIVE)
        if not deriv_segs:
            continue

        if _is_corner(geom, edges):
            if len(segs) == 1:
                # corner interior to a single segment: exterior bisector
                n1 = geom.edge_normal(edges[0])
                n2 = geom.edge_normal(edges[1])
                bis = n1 + n2
                norm = np.linalg.norm(bis)
                if norm < 1e-12:
                    raise GeometryError(
                        f"cannot place a bisector virtual node at node {i}: "
                        f"edge normals cancel"
                    )
                directions = [(bis / norm, segs[0])]
            else:
                directions = []
                for s in deriv_segs:
                    for e in edges:
                        if geom.edge_labels[e] == s:
                            directions.append((geom.edge_normal(e), s))
                            break
        else:
            directions = [(geom.edge_normal(edges[0]), deriv_segs[0])]

        for d, s in directions:
            vpos = p + offset * d
            if geom.contains(vpos, include_boundary=True):
                raise GeometryError(
                    f"virtual node for boundary node {i} at {tuple(vpos)} falls "
                    f"inside the domain; use a smaller offset"
                )
            new_pos.append(vpos)
            new_owner.append(i)
            new_dir.append(d)
            new_seg.append(s)

    n_old = cloud.n_nodes
    n_new = len(new_pos)
    if n_new == 0:
        return replace(cloud, kinds=kinds, virtual_offset=float(offset))

    positions = np.vstack([cloud.positions, np.array(new_pos)])
    kinds = np.concatenate([kinds, np.full(n_new, int(NodeKind.VIRTUAL), dtype=np.int8)])
    owner = np.concatenate([cloud.owner, np.array(new_owner, dtype=np.int64)])
    normals = np.vstack([cloud.normals, np.full((n_new, 2), np.nan)])
    vdir = np.vstack([cloud.virtual_direction, np.array(new_dir)])
    node_segments = list(cloud.node_segments) + [(s,) for s in new_seg]

    return PointCloud(
        geometry=cloud.geometry,
        positions=positions,
        kinds=kinds,
        owner=owner,
        normals=normals,
        node_segments=node_segments,
        virtual_direction=vdir,
        h_avg=cloud.h_avg,
        r_m=None,
        index_sets=None,
        virtual_offset=float(offset),
    )


# ---------------------------------------------------------------------------
# index sets
# ---------------------------------------------------------------------------


def build_index_sets(cloud: PointCloud, r_m: float) -> PointCloud:
    """Populate the influence-domain index sets for all non-virtual nodes.

    Search is KD-tree based (O(N log N + N k), never the O(N^2) pairwise
    scan).  Each virtual node is guaranteed membership in its owner's set even
    if the offset exceeds ``r_m``.  Neighbor lists are sorted by (distance,
    id) so identical inputs give identical clouds.
    """
    if r_m <= 0:
        raise GeometryError("influence radius must be positive")
    pos = cloud.positions
    n = cloud.n_nodes
    tree = cKDTree(pos)
    neighbor_lists = tree.query_ball_point(pos, r_m)

    index_sets: list[np.ndarray] = [np.empty(0, dtype=int)] * n
    for i in range(n):
        if cloud.kinds[i] == int(NodeKind.VIRTUAL):
            continue
        ids = [j for j in neighbor_lists[i] if j != i]
        index_sets[i] = np.array(ids, dtype=int)

    # forced membership of a virtual node in its owner's set
    for v in cloud.virtual_ids:
        o = int(cloud.owner[v])
        if v not in index_sets[o]:
            index_sets[o] = np.append(index_sets[o], v)

    for i in range(n):
        ids = index_sets[i]
        if len(ids):
            d = np.linalg.norm(pos[ids] - pos[i], axis=1)
            order = np.lexsort((ids, d))
            index_sets[i] = ids[order]

    for i in _stencil_required_ids(cloud):
        if len(index_sets[i]) < MIN_STENCIL_NEIGHBORS:
            raise StencilDeficiencyError(int(i), len(index_sets[i]))

    return replace(cloud, r_m=float(r_m), index_sets=index_sets)


def _stencil_required_ids(cloud: PointCloud):
    needed = set(np.flatnonzero(cloud.kinds == int(NodeKind.INTERIOR)).tolist())
    needed.update(np.flatnonzero(cloud.kinds == int(NodeKind.DERIVATIVE)).tolist())
    for v in cloud.virtual_ids:
        needed.add(int(cloud.owner[v]))
    return sorted(needed)


# ---------------------------------------------------------------------------
# cloud file format:  one record per line,  "id x y kind label"
#   kind in {I, D, N, V}; label is the comma-joined segment list for boundary
#   nodes, "-" for interior nodes, and "owner:segment" for virtual nodes.
# ---------------------------------------------------------------------------


def save_cloud(cloud: PointCloud, path):
    with open(path, "w") as f:
        f.write(f"# gfdmflow cloud  nodes={cloud.n_nodes}  h_avg={cloud.h_avg!r}\n")
        for i in range(cloud.n_nodes):
            kind = KIND_CHARS[NodeKind(int(cloud.kinds[i]))]
            x, y = (float(v) for v in cloud.positions[i])
            if cloud.kinds[i] == int(NodeKind.VIRTUAL):
                label = f"{int(cloud.owner[i])}:{cloud.node_segments[i][0]}"
            elif cloud.node_segments[i]:
                label = ",".join(cloud.node_segments[i])
            else:
                label = "-"
            f.write(f"{i} {x!r} {y!r} {kind} {label}\n")


def load_cloud(path, geometry: DomainGeometry | None = None) -> PointCloud:
    """Read a cloud file and validate its structural invariants."""
    ids, xs, ys, kinds, labels = [], [], [], [], []
    h_avg = None
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line.split():
                    if tok.startswith("h_avg="):
                        h_avg = float(tok.split("=", 1)[1])
                continue
            parts = line.split()
            if len(parts) != 5:
                raise GeometryError(f"malformed cloud record: {line!r}")
            ids.append(int(parts[0]))
            xs.append(float(parts[1]))
            ys.append(float(parts[2]))
            if parts[3] not in CHAR_KINDS:
                raise GeometryError(f"unknown node kind {parts[3]!r}")
            kinds.append(int(CHAR_KINDS[parts[3]]))
            labels.append(parts[4])
    n = len(ids)
    if n == 0:
        raise GeometryError("empty cloud file")
    if ids != list(range(n)):
        raise GeometryError("cloud ids must be contiguous from 0")

    positions = np.column_stack([xs, ys])
    arrays = _empty_cloud_arrays(n)
    arrays["kinds"] = np.array(kinds, dtype=np.int8)
    node_segments: list[tuple[str, ...]] = []
    for i in range(n):
        if kinds[i] == int(NodeKind.VIRTUAL):
            if ":" not in labels[i]:
                raise GeometryError(f"virtual node {i} is missing its owner label")
            owner_s, seg = labels[i].split(":", 1)
            o = int(owner_s)
            if not (0 <= o < n) or kinds[o] == int(NodeKind.VIRTUAL):
                raise GeometryError(f"virtual node {i} has invalid owner {o}")
            arrays["owner"][i] = o
            node_segments.append((seg,))
        else:
            node_segments.append(() if labels[i] == "-" else tuple(labels[i].split(",")))

    if h_avg is None:
        tree = cKDTree(positions)
        d, _ = tree.query(positions, k=2)
        h_avg = float(np.mean(d[:, 1]))

    cloud = PointCloud(
        geometry=geometry,
        positions=positions,
        node_segments=node_segments,
        h_avg=h_avg,
        **arrays,
    )
    # recover virtual offset directions from positions
    for v in cloud.virtual_ids:
        o = int(cloud.owner[v])
        d = cloud.positions[v] - cloud.positions[o]
        norm = np.linalg.norm(d)
        if norm <= 0:
            raise GeometryError(f"virtual node {v} coincides with its owner")
        cloud.virtual_direction[v] = d / norm
        if cloud.virtual_offset is None:
            cloud.virtual_offset = float(norm)
    if geometry is not None:
        _restore_boundary_normals(cloud)
    return cloud


def _restore_boundary_normals(cloud):
    geom = cloud.geometry
    for i in np.flatnonzero(
        (cloud.kinds == int(NodeKind.DIRICHLET))
        | (cloud.kinds == int(NodeKind.DERIVATIVE))
    ):
        edges = _touching_edges(geom, cloud.positions[i])
        if edges:
            normals = np.array([geom.edge_normal(e) for e in edges])
            nsum = normals.sum(axis=0)
            norm = np.linalg.norm(nsum)
            if norm > 1e-12:
                cloud.normals[i] = nsum / norm
