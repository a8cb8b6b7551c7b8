"""Sparse-system assembly for one sequential time step.

Every node owns exactly one row: interior and derivative-boundary nodes get
the discretized PDE, Dirichlet nodes get identity rows, and each virtual node
carries the derivative boundary condition of its owner (a directional
first-derivative row built from the owner's stencil).  The convected
temperature between two nodes is taken from the higher-pressure (donor) node,
which keeps the temperature system linear: the convective coefficient simply
lands on the donor's column.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .cloud import NodeKind, PointCloud
from .errors import SolvabilityError
from .props import (
    ALPHA_UNIT,
    BETA_UNIT,
    PropertySet,
    arithmetic_visc,
    harmonic_lambda,
    harmonic_perm,
    lambda_c,
    permeability_at,
    porosity,
    viscosity,
)
from .stencil import StencilSet


@dataclass(frozen=True)
class BoundaryCondition:
    """Dirichlet value or derivative condition h*u + l*du/dn = q.

    ``direction`` overrides the derivative direction; by default the outward
    normal along which the virtual node was offset is used.
    """

    kind: str
    value: float = 0.0
    h: float = 0.0
    l: float = 0.0
    q: float = 0.0
    direction: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in ("dirichlet", "derivative"):
            raise ValueError(f"unknown BC kind {self.kind!r}")
        if self.kind == "derivative" and self.h == 0.0 and self.l == 0.0:
            raise ValueError("derivative BC requires h and l not both zero")

    @classmethod
    def dirichlet(cls, value):
        return cls(kind="dirichlet", value=float(value))

    @classmethod
    def derivative(cls, h=0.0, l=1.0, q=0.0, direction=None):
        if direction is not None:
            direction = (float(direction[0]), float(direction[1]))
        return cls(kind="derivative", h=float(h), l=float(l), q=float(q),
                   direction=direction)


@dataclass
class SourceTerm:
    """Nodal mass source q (1/day) and heat source q_h (J/m^3/day)."""

    q: np.ndarray | None = None
    q_h: np.ndarray | None = None

    def mass(self, n):
        return np.zeros(n) if self.q is None else np.asarray(self.q, dtype=float)

    def heat(self, n):
        return np.zeros(n) if self.q_h is None else np.asarray(self.q_h, dtype=float)


@dataclass
class LinearSystem:
    """Square sparse system; row k is the equation of node unknown_map[k]."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    unknown_map: np.ndarray

    def dump(self, path):
        """Coordinate text dump: one `row col value` triplet per line, then
        `# rhs` and one `row value` per line."""
        coo = self.matrix.tocoo()
        with open(path, "w") as f:
            f.write(f"# {self.matrix.shape[0]} x {self.matrix.shape[1]}\n")
            for r, c, v in zip(coo.row, coo.col, coo.data):
                f.write(f"{r} {c} {float(v)!r}\n")
            f.write("# rhs\n")
            for r, v in enumerate(self.rhs):
                f.write(f"{r} {float(v)!r}\n")


def upwind_select(p_i, p_j, T_i, T_j):
    """Donor temperature of the higher-pressure node; ties donate from j."""
    return np.where(np.asarray(p_j) >= np.asarray(p_i), T_j, T_i)[()]


def transmissibility(i, j, state, props: PropertySet, stencils: StencilSet, cloud: PointCloud):
    """Inter-node coefficients for the pair (i, j), j in i's index set.

    Returns ``(pressure_coeff, conduction_coeff)`` where pressure_coeff =
    (k_ij / mu_ij) * (m3 + m4) and conduction_coeff = lambda_ij * (m3 + m4);
    the unit factors alpha/beta are applied by the assemblers.  Viscosity is
    evaluated from ``state.T`` and the mixture conductivity from
    ``(state.p, state.T)`` nodally, then averaged pairwise.
    """
    st = stencils[i]
    where = np.flatnonzero(st.neighbor_ids == j)
    if len(where) == 0:
        raise ValueError(f"node {j} is not in the index set of node {i}")
    c = float(st.rows[2, where[0]] + st.rows[3, where[0]])
    xi, yi = cloud.positions[i]
    xj, yj = cloud.positions[j]
    k_i = permeability_at(xi, yi, props.permeability, cloud.h_avg)
    k_j = permeability_at(xj, yj, props.permeability, cloud.h_avg)
    mu_ij = arithmetic_visc(viscosity(state.T[i], props), viscosity(state.T[j], props))
    lam_ij = harmonic_lambda(
        lambda_c(state.p[i], state.T[i], props),
        lambda_c(state.p[j], state.T[j], props),
    )
    return harmonic_perm(k_i, k_j) / mu_ij * c, lam_ij * c


# ---------------------------------------------------------------------------
# row planning
# ---------------------------------------------------------------------------


def _bc_lookup(bcs, segment, fld):
    try:
        return bcs[segment][fld]
    except KeyError:
        raise KeyError(f"no {fld!r} boundary condition for segment {segment!r}")


def _plan_rows(cloud: PointCloud, bcs, fld):
    """Classify every node's row for one field.

    Returns (pde_mask, dirichlet_ids, dirichlet_values, virtual_rows) where
    virtual_rows is a list of (virtual_id, owner_id, BoundaryCondition | None,
    direction); a None condition requests the value-tie fallback row (owner's
    condition for this field is Dirichlet, so the virtual only mirrors the
    owner's value).
    """
    n = cloud.n_nodes
    pde_mask = cloud.kinds == int(NodeKind.INTERIOR)
    dir_ids, dir_vals = [], []
    virtual_rows = []
    for i in np.flatnonzero(cloud.kinds != int(NodeKind.INTERIOR)):
        kind = int(cloud.kinds[i])
        if kind == int(NodeKind.VIRTUAL):
            owner = int(cloud.owner[i])
            seg = cloud.node_segments[i][0]
            bc = _bc_lookup(bcs, seg, fld)
            if bc.kind == "derivative":
                direction = bc.direction
                if direction is None:
                    direction = tuple(cloud.virtual_direction[i])
                virtual_rows.append((i, owner, bc, direction))
            else:
                virtual_rows.append((i, owner, None, None))
        else:
            conds = [_bc_lookup(bcs, s, fld) for s in cloud.node_segments[i]]
            dirichlet = [c for c in conds if c.kind == "dirichlet"]
            if dirichlet:
                dir_ids.append(i)
                dir_vals.append(dirichlet[0].value)
            else:
                pde_mask[i] = True
    return pde_mask, np.array(dir_ids, dtype=int), np.array(dir_vals), virtual_rows


def _virtual_row_entries(stencils: StencilSet, virtual_rows):
    """COO entries and rhs values for the virtual-node BC rows."""
    from .errors import DegenerateStencilError

    rows, cols, vals = [], [], []
    rhs_rows, rhs_vals = [], []
    for v, b, bc, direction in virtual_rows:
        if bc is None:
            # owner's condition for this field is Dirichlet: tie the virtual
            # value to the owner's so nearby stencils see a smooth field
            rows += [v, v]
            cols += [v, b]
            vals += [1.0, -1.0]
            rhs_rows.append(v)
            rhs_vals.append(0.0)
            continue
        dvec = bc.direction if bc.direction is not None else direction
        null_basis = stencils[b].null_basis
        if null_basis is not None:
            # the row uses only the (d/dx, d/dy) combination along dvec;
            # refuse when that combination is not identifiable
            spill = null_basis[:, 0] * dvec[0] + null_basis[:, 1] * dvec[1]
            if np.max(np.abs(spill)) > 1e-8:
                raise DegenerateStencilError(b, float("inf"))
        sl = stencils.owner_slice[b]
        D = dvec[0] * stencils.pair_dx[sl] + dvec[1] * stencils.pair_dy[sl]
        nbrs = stencils.pair_j[sl]
        rows += [v] * (len(nbrs) + 1)
        cols += list(nbrs) + [b]
        vals += list(bc.l * D) + [bc.h - bc.l * float(np.sum(D))]
        rhs_rows.append(v)
        rhs_vals.append(bc.q)
    return rows, cols, vals, rhs_rows, rhs_vals


def _check_pde_stencils(stencils: StencilSet, pde_mask):
    if not stencils.deficient_ids:
        return
    from .errors import DegenerateStencilError

    for i in stencils.deficient_ids:
        if pde_mask[i]:
            raise DegenerateStencilError(i, float("inf"))


# ---------------------------------------------------------------------------
# pressure
# ---------------------------------------------------------------------------


def assemble_pressure(
    state_n,
    dt,
    cloud: PointCloud,
    stencils: StencilSet,
    props: PropertySet,
    bcs,
    sources: SourceTerm | None = None,
) -> LinearSystem:
    """Implicit pressure system at time level n+1 (viscosity lagged to T^n)."""
    if dt <= 0:
        raise ValueError("time step must be positive")
    n = cloud.n_nodes
    sources = sources or SourceTerm()
    pde_mask, dir_ids, dir_vals, virtual_rows = _plan_rows(cloud, bcs, "p")
    _check_pde_stencils(stencils, pde_mask)

    if len(dir_ids) == 0 and props.c_t == 0.0:
        raise SolvabilityError(
            "pressure system is singular: no Dirichlet condition and zero "
            "compressibility leave a constant-pressure nullspace"
        )

    k_nodal = permeability_at(
        cloud.positions[:, 0], cloud.positions[:, 1], props.permeability, cloud.h_avg
    )
    mu_nodal = viscosity(state_n.T, props)

    sel = pde_mask[stencils.pair_i]
    pi = stencils.pair_i[sel]
    pj = stencils.pair_j[sel]
    lap = stencils.pair_lap[sel]
    t_pair = ALPHA_UNIT * harmonic_perm(k_nodal[pi], k_nodal[pj]) / arithmetic_visc(
        mu_nodal[pi], mu_nodal[pj]
    ) * lap

    pde_ids = np.flatnonzero(pde_mask)
    accum = (
        (1.0 + (1.0 - props.phi_0) / props.phi_0 * props.c_temp
         * (state_n.T[pde_ids] - props.t_0))
        * props.c_t / dt
    )

    rows = [pi, pi, pde_ids]
    cols = [pj, pi, pde_ids]
    vals = [t_pair, -t_pair, -accum]
    rhs = np.zeros(n)
    rhs[pde_ids] = -accum * state_n.p[pde_ids] - sources.mass(n)[pde_ids]

    if len(dir_ids):
        rows.append(dir_ids)
        cols.append(dir_ids)
        vals.append(np.ones(len(dir_ids)))
        rhs[dir_ids] = dir_vals

    vr, vc, vv, vr_rhs, vval_rhs = _virtual_row_entries(stencils, virtual_rows)
    rows.append(np.array(vr, dtype=int))
    cols.append(np.array(vc, dtype=int))
    vals.append(np.array(vv))
    rhs[np.array(vr_rhs, dtype=int)] = vval_rhs if len(vr_rhs) else rhs[[]]

    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()
    matrix.sum_duplicates()
    return LinearSystem(matrix=matrix, rhs=rhs, unknown_map=np.arange(n))


# ---------------------------------------------------------------------------
# temperature
# ---------------------------------------------------------------------------


def assemble_temperature(
    state_n,
    p_next,
    dt,
    cloud: PointCloud,
    stencils: StencilSet,
    props: PropertySet,
    bcs,
    sources: SourceTerm | None = None,
    convection_time: str = "implicit",
) -> LinearSystem:
    """Implicit temperature system at n+1 using the fresh pressure.

    Conduction couples neighbor pairs through harmonic mixture conductivity
    evaluated at (p^{n+1}, T^n); convection puts the coefficient
    alpha*rho_l*c_l*(k_ij/mu_ij)*(m3+m4)*(p_j - p_i) on the donor unknown
    (column j when p_j >= p_i, else the diagonal).  With
    ``convection_time="explicit"`` the donor temperature is taken at level n
    and the term moves to the right-hand side.
    """
    if dt <= 0:
        raise ValueError("time step must be positive")
    if convection_time not in ("implicit", "explicit"):
        raise ValueError(f"unknown convection_time {convection_time!r}")
    n = cloud.n_nodes
    p_next = np.asarray(p_next, dtype=float)
    sources = sources or SourceTerm()
    pde_mask, dir_ids, dir_vals, virtual_rows = _plan_rows(cloud, bcs, "T")
    _check_pde_stencils(stencils, pde_mask)

    k_nodal = permeability_at(
        cloud.positions[:, 0], cloud.positions[:, 1], props.permeability, cloud.h_avg
    )
    mu_nodal = viscosity(state_n.T, props)
    lam_nodal = lambda_c(p_next, state_n.T, props)

    sel = pde_mask[stencils.pair_i]
    pi = stencils.pair_i[sel]
    pj = stencils.pair_j[sel]
    lap = stencils.pair_lap[sel]

    g_pair = BETA_UNIT * harmonic_lambda(lam_nodal[pi], lam_nodal[pj]) * lap

    dp = p_next[pj] - p_next[pi]
    v_pair = (
        ALPHA_UNIT * props.rho_l * props.c_l
        * harmonic_perm(k_nodal[pi], k_nodal[pj])
        / arithmetic_visc(mu_nodal[pi], mu_nodal[pj])
        * lap * dp
    )
    donor = np.where(dp >= 0.0, pj, pi)

    pde_ids = np.flatnonzero(pde_mask)
    phi_new = porosity(p_next[pde_ids], state_n.T[pde_ids], props)
    phi_old = porosity(state_n.p[pde_ids], state_n.T[pde_ids], props)
    cap_new = (1.0 - phi_new) * props.rho_r * props.c_r + phi_new * props.rho_l * props.c_l
    cap_old = (1.0 - phi_old) * props.rho_r * props.c_r + phi_old * props.rho_l * props.c_l

    rows = [pi, pi, pde_ids]
    cols = [pj, pi, pde_ids]
    vals = [g_pair, -g_pair, -cap_new / dt]
    rhs = np.zeros(n)
    rhs[pde_ids] = -cap_old / dt * state_n.T[pde_ids] - sources.heat(n)[pde_ids]

    if convection_time == "implicit":
        rows.append(pi)
        cols.append(donor)
        vals.append(v_pair)
    else:
        np.subtract.at(rhs, pi, v_pair * state_n.T[donor])

    if len(dir_ids):
        rows.append(dir_ids)
        cols.append(dir_ids)
        vals.append(np.ones(len(dir_ids)))
        rhs[dir_ids] = dir_vals

    vr, vc, vv, vr_rhs, vval_rhs = _virtual_row_entries(stencils, virtual_rows)
    rows.append(np.array(vr, dtype=int))
    cols.append(np.array(vc, dtype=int))
    vals.append(np.array(vv))
    rhs[np.array(vr_rhs, dtype=int)] = vval_rhs if len(vr_rhs) else rhs[[]]

    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()
    matrix.sum_duplicates()
    return LinearSystem(matrix=matrix, rhs=rhs, unknown_map=np.arange(n))
