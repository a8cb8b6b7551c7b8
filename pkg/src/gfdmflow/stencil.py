"""Generalized finite-difference stencils from weighted least squares.

For a node at ``x0`` with neighbors ``x_j`` inside the influence radius, the
five spatial derivatives (d/dx, d/dy, d2/dx2, d2/dy2, d2/dxdy) are expressed
as ``sum_j m_kj (u_j - u_0)``.  The coefficient rows ``m`` come from
minimizing the weighted squared residual of the local second-order Taylor
expansion: with offsets ``D_j = x_j - x0``, rows ``L_j = (Dx, Dy, Dx^2/2,
Dy^2/2, Dx Dy)`` and weights ``w_j``, solve ``(L^T W L) M = L^T W`` with
``W = diag(w_j^2)``.

Offsets are nondimensionalized by ``r_m`` before the solve (the normal matrix
mixes units up to m^4 and conditions badly at small spacing); the returned
rows are in physical units.  Rows depend on geometry only, so a cloud's
stencils are built once and reused for every time step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud, _stencil_required_ids
from .errors import DegenerateStencilError

# The quartic-spline weight is evaluated with a support slightly beyond the
# neighbor-search radius (support = 1.125 * r_m).  This keeps neighbors that
# sit exactly at r_m from being zero-weighted; the factor is pinned by the
# closed-form coefficients of the 8-point Cartesian stencil
# (0.96308 / 0.036917 / 0.018459 at r_m = 1.6 * spacing).
WEIGHT_SUPPORT_FACTOR = 1.125

CONDITION_LIMIT = 1e12


def weight(r, r_m):
    """Quartic-spline weight: 1 - 6 q^2 + 8 q^3 - 3 q^4 with q = r / r_m.

    Returns 0 beyond the support radius.  Accepts scalars or arrays.
    """
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0):
        raise ValueError("distance must be non-negative")
    if r_m <= 0:
        raise ValueError("support radius must be positive")
    q = r_arr / r_m
    w = 1.0 - 6.0 * q**2 + 8.0 * q**3 - 3.0 * q**4
    w = np.where(q <= 1.0, w, 0.0)
    return float(w) if np.isscalar(r) else w


@dataclass(frozen=True)
class Stencil:
    """Per-node derivative coefficient rows.

    ``rows`` is 5 x len(neighbor_ids), ordered (d/dx, d/dy, d2/dx2, d2/dy2,
    d2/dxdy); units 1/m for the first two rows and 1/m^2 for the rest.

    ``null_basis`` is normally None.  For a rank-deficient neighbor layout it
    holds an orthonormal basis (r x 5) of the unidentifiable derivative
    combinations; rows with a component inside it carry min-norm placeholder
    values and must not be used.  The assemblers check this: PDE rows refuse
    such a node outright, a boundary-condition row only requires its own
    direction to be identifiable (the typical case: a Cartesian corner whose
    neighbors span just two x values cannot separate d/dx from d2/dx2, but
    the wall-normal d/dy it actually needs is fine).
    """

    node_id: int
    neighbor_ids: np.ndarray
    rows: np.ndarray
    null_basis: np.ndarray | None = None


def build_stencil(center, neighbors, r_m, node_id=-1) -> Stencil:
    """Build the coefficient rows for one node.

    ``center`` is the (x, y) of the node, ``neighbors`` the (k, 2) positions
    of its index set (k >= 5, positions distinct from the node).  Raises
    DegenerateStencilError when the neighbor layout is collinear or otherwise
    leaves the 5x5 normal matrix with condition number above 1e12.
    """
    center = np.asarray(center, dtype=float)
    neighbors = np.asarray(neighbors, dtype=float)
    if neighbors.ndim != 2 or neighbors.shape[1] != 2:
        raise ValueError("neighbors must be a (k, 2) position array")
    if len(neighbors) < 5:
        raise ValueError("at least 5 neighbors are required")
    offsets = neighbors - center
    r = np.linalg.norm(offsets, axis=1)
    if np.any(r == 0):
        raise ValueError("neighbor positions must be distinct from the node")
    rows, nulls = _solve_rows(
        offsets[None, :, :], weight(r, WEIGHT_SUPPORT_FACTOR * r_m)[None, :], r_m
    )
    if nulls[0] is not None:
        svals = _normal_matrix_svals(offsets / r_m, weight(r, WEIGHT_SUPPORT_FACTOR * r_m))
        cond = float("inf") if svals[-1] == 0 else float(svals[0] / svals[-1])
        raise DegenerateStencilError(node_id, cond)
    return Stencil(node_id=node_id, neighbor_ids=np.arange(len(neighbors)), rows=rows[0])


def _normal_matrix_svals(d, w):
    dx, dy = d[:, 0], d[:, 1]
    L = np.column_stack([dx, dy, 0.5 * dx**2, 0.5 * dy**2, dx * dy])
    A = L.T @ (w[:, None] ** 2 * L)
    return np.linalg.svd(A, compute_uv=False)


def _solve_rows(offsets, w, r_m):
    """Batched weighted-LS solve via SVD of the 5x5 normal matrix.

    offsets: (n, k, 2) padded offsets (zero rows allowed when w == 0);
    w: (n, k) weights.  Returns ``(rows, nulls)`` where rows is (n, 5, k) in
    physical units and nulls[i] is None for a well-conditioned node or the
    null-space basis of its normal matrix.
    """
    d = offsets / r_m
    dx, dy = d[..., 0], d[..., 1]
    L = np.stack([dx, dy, 0.5 * dx**2, 0.5 * dy**2, dx * dy], axis=-1)  # (n,k,5)
    w2 = w**2
    Lw = L * w2[..., None]
    A = np.einsum("nki,nkj->nij", Lw, L)

    U, S, Vt = np.linalg.svd(A)
    cutoff = S[:, :1] / CONDITION_LIMIT
    inv_s = np.where(S > cutoff, 1.0 / np.where(S > 0, S, 1.0), 0.0)
    # A is symmetric PSD: pinv = V diag(1/s) U^T, truncated below the cutoff
    Apinv = np.einsum("nji,nj,nkj->nik", Vt, inv_s, U)
    M = Apinv @ np.swapaxes(Lw, 1, 2)  # (n,5,k)
    scale = 1.0 / np.array([r_m, r_m, r_m**2, r_m**2, r_m**2])
    rows = M * scale[None, :, None]

    nulls: list[np.ndarray | None] = []
    for i in range(len(A)):
        dead = S[i] <= cutoff[i, 0]
        nulls.append(Vt[i][dead] if np.any(dead) else None)
    return rows, nulls


def apply(stencil: Stencil, field) -> np.ndarray:
    """Evaluate the five derivatives of a nodal field at the stencil's node.

    ``field`` is indexed by node id; values must exist (and be finite) at the
    node and at every neighbor.
    """
    field = np.asarray(field, dtype=float)
    needed = np.append(stencil.neighbor_ids, stencil.node_id)
    if field.ndim != 1 or needed.max() >= len(field):
        raise ValueError("field does not cover the stencil's node ids")
    vals = field[needed]
    if not np.all(np.isfinite(vals)):
        raise ValueError("field has missing (non-finite) values on the stencil")
    return stencil.rows @ (field[stencil.neighbor_ids] - field[stencil.node_id])


class StencilSet:
    """All stencils of a cloud plus flattened (node, neighbor) pair arrays.

    The flat arrays drive vectorized system assembly: entry ``p`` couples
    equation node ``pair_i[p]`` to neighbor ``pair_j[p]`` with Laplacian
    coefficient ``pair_lap[p] = m3 + m4`` and first-derivative coefficients
    ``pair_dx``/``pair_dy``.  Pairs are grouped by owner; ``owner_slice[i]``
    addresses node ``i``'s block.
    """

    def __init__(self, stencils, pair_i, pair_j, pair_lap, pair_dx, pair_dy,
                 owner_slice, deficient_ids=frozenset()):
        self.stencils = stencils
        self.pair_i = pair_i
        self.pair_j = pair_j
        self.pair_lap = pair_lap
        self.pair_dx = pair_dx
        self.pair_dy = pair_dy
        self.owner_slice = owner_slice
        self.deficient_ids = frozenset(deficient_ids)

    def __getitem__(self, node_id) -> Stencil:
        st = self.stencils[node_id]
        if st is None:
            raise KeyError(f"node {node_id} owns no stencil")
        return st

    def __contains__(self, node_id):
        return self.stencils[node_id] is not None

    def dump(self, path):
        """Write per-node rows to a text file for external cross-checking."""
        with open(path, "w") as f:
            f.write("# node neighbor m1 m2 m3 m4 m5\n")
            for st in self.stencils:
                if st is None:
                    continue
                for c, j in enumerate(st.neighbor_ids):
                    f.write(
                        f"{st.node_id} {j} "
                        + " ".join(f"{float(st.rows[k, c])!r}" for k in range(5))
                        + "\n"
                    )


def build_all_stencils(cloud: PointCloud) -> StencilSet:
    """Build stencils for every node that needs one (batched solve).

    Requires ``build_index_sets`` to have run.  Nodes are padded to the
    largest neighbor count; padded entries carry zero weight and drop out of
    the least squares exactly.  An interior node with a degenerate layout
    raises immediately; a boundary node's rank deficiency is recorded on the
    stencil and checked where the rows are consumed.
    """
    from .cloud import NodeKind

    if cloud.index_sets is None or cloud.r_m is None:
        raise ValueError("cloud has no index sets; run build_index_sets first")
    ids = _stencil_required_ids(cloud)
    n = len(ids)
    counts = np.array([len(cloud.index_sets[i]) for i in ids])
    kmax = int(counts.max()) if n else 0

    offsets = np.zeros((n, kmax, 2))
    w = np.zeros((n, kmax))
    support = WEIGHT_SUPPORT_FACTOR * cloud.r_m
    for row, i in enumerate(ids):
        nb = cloud.index_sets[i]
        off = cloud.positions[nb] - cloud.positions[i]
        offsets[row, : len(nb)] = off
        w[row, : len(nb)] = weight(np.linalg.norm(off, axis=1), support)

    rows_all, nulls = _solve_rows(offsets, w, cloud.r_m)

    stencils: list[Stencil | None] = [None] * cloud.n_nodes
    deficient = set()
    blocks_i, blocks_j, blocks_lap, blocks_dx, blocks_dy = [], [], [], [], []
    owner_slice = {}
    start = 0
    for row, i in enumerate(ids):
        nb = cloud.index_sets[i]
        k = len(nb)
        rows = rows_all[row, :, :k]
        null_basis = nulls[row]
        if null_basis is not None:
            if cloud.kinds[i] == int(NodeKind.INTERIOR):
                raise DegenerateStencilError(int(i), float("inf"))
            deficient.add(int(i))
        stencils[i] = Stencil(
            node_id=int(i), neighbor_ids=nb.copy(), rows=rows, null_basis=null_basis
        )
        blocks_i.append(np.full(k, i, dtype=np.int64))
        blocks_j.append(nb)
        blocks_lap.append(rows[2] + rows[3])
        blocks_dx.append(rows[0])
        blocks_dy.append(rows[1])
        owner_slice[int(i)] = slice(start, start + k)
        start += k

    cat = (lambda parts: np.concatenate(parts) if parts else np.empty(0))
    return StencilSet(
        stencils=stencils,
        pair_i=cat(blocks_i).astype(np.int64) if blocks_i else np.empty(0, dtype=np.int64),
        pair_j=cat(blocks_j).astype(np.int64) if blocks_j else np.empty(0, dtype=np.int64),
        pair_lap=cat(blocks_lap),
        pair_dx=cat(blocks_dx),
        pair_dy=cat(blocks_dy),
        owner_slice=owner_slice,
        deficient_ids=deficient,
    )
