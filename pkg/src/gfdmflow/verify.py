"""Verification oracles, error metrics, and the convergence-study harness.

The 1D upwind finite-difference solver here is deliberately independent of
the meshless path: it builds its own tridiagonal systems with
``scipy.linalg.solve_banded`` and shares no stencil or assembly code, so it
can serve as a reference when the 2D problem degenerates to one dimension.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .errors import SolverError
from .props import ALPHA_UNIT, BETA_UNIT, PropertySet, lambda_c, permeability_at, viscosity


def analytical_pressure(x):
    """Steady linear pressure of the rectangular benchmark: 25 - x/20 MPa."""
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < 0) or np.any(x_arr > 300):
        raise ValueError("x must lie in [0, 300] m")
    out = 25.0 - x_arr / 20.0
    return float(out) if out.ndim == 0 else out


def advection_diffusion_coefficients(
    props: PropertySet, pressure_drop, length, x_for_perm=0.0
):
    """Coefficients of the 1D reduction a*Txx - b*Tx = c*Tt from a property set.

    a = beta * lambda_c(p0, T0); b = alpha * rho_l * c_l * (k / mu0) * (dp/L);
    c = (1 - phi0) * rho_r * c_r + phi0 * rho_l * c_l.
    """
    a = BETA_UNIT * lambda_c(props.p_0, props.t_0, props)
    k = permeability_at(x_for_perm, 0.0, props.permeability)
    b = (
        ALPHA_UNIT * props.rho_l * props.c_l
        * (k / viscosity(props.t_0, props))
        * (pressure_drop / length)
    )
    c = (1.0 - props.phi_0) * props.rho_r * props.c_r + props.phi_0 * props.rho_l * props.c_l
    return {"diffusion": float(a), "convection": float(b), "accumulation": float(c)}


def fdm1d_upwind(nx, dx, dt, t_end, coeffs, bc, t_init, snapshot_times=None):
    """Implicit 1D convection-diffusion reference solver.

    Solves a*d2T/dx2 - b*dT/dx = c*dT/dt on nx intervals of width dx with a
    central second difference, first-order upwind first difference (flow in
    +x), Dirichlet end values ``bc = (T_left, T_right)``, and uniform (or
    array) initial profile ``t_init``.  Returns ``(x, times, profiles)`` with
    one profile row per requested snapshot time (default: final time only).
    """
    a = float(coeffs["diffusion"])
    b = float(coeffs["convection"])
    c = float(coeffs["accumulation"])
    if a < 0 or c <= 0:
        raise ValueError("diffusion must be >= 0 and accumulation > 0")
    if b < 0:
        raise ValueError("convection direction must be +x (b >= 0)")
    n = nx + 1
    x = dx * np.arange(n)
    T = np.full(n, t_init, dtype=float) if np.isscalar(t_init) else np.array(t_init, float)
    if len(T) != n:
        raise ValueError("initial profile length must be nx + 1")

    if snapshot_times is None:
        snapshot_times = (t_end,)
    wanted = sorted(set(float(s) for s in snapshot_times))
    for s in wanted:
        if not 0.0 <= s <= t_end + 1e-12:
            raise ValueError(f"snapshot time {s} outside [0, {t_end}]")

    # banded tridiagonal: interior row i couples (i-1, i, i+1)
    lower = -(a / dx**2 + b / dx)
    diag = c / dt + 2.0 * a / dx**2 + b / dx
    upper = -(a / dx**2)
    ab = np.zeros((3, n))
    ab[0, 2:] = upper
    ab[1, 1:-1] = diag
    ab[2, :-2] = lower
    ab[1, 0] = 1.0
    ab[1, -1] = 1.0
    if np.any(ab[1] == 0.0):
        raise SolverError("singular tridiagonal system")

    profiles = []
    times = []

    def maybe_record(t, Tnow):
        if any(abs(t - s) <= 1e-9 * max(1.0, s) for s in wanted):
            times.append(t)
            profiles.append(Tnow.copy())

    maybe_record(0.0, T)
    n_steps = int(round(t_end / dt)) if t_end > 0 else 0
    for k in range(1, n_steps + 1):
        rhs = c / dt * T
        rhs[0] = bc[0]
        rhs[-1] = bc[1]
        T = solve_banded((1, 1), ab, rhs)
        maybe_record(k * dt, T)
    if not times:
        times.append(t_end)
        profiles.append(T.copy())
    return x, np.array(times), np.array(profiles)


def l2_relative_error(computed, reference):
    """||computed - reference||_2 / ||reference||_2 over matching nodes."""
    computed = np.asarray(computed, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if computed.shape != reference.shape:
        raise ValueError(
            f"node sets differ: {computed.shape} vs {reference.shape}"
        )
    ref_norm = np.linalg.norm(reference)
    if ref_norm == 0.0:
        raise ValueError("reference field has zero norm")
    return float(np.linalg.norm(computed - reference) / ref_norm)


def dissipation_estimate(dx, v_x, d2T_dx2):
    """Leading first-order upwind dissipation term (dx/2)*|v_x * d2T/dx2|."""
    return 0.5 * dx * abs(v_x * d2T_dx2)


@dataclass(frozen=True)
class ErrorReport:
    field_name: str
    l2_relative: float
    linf_absolute: float
    node_count: int
    r_m_over_dx: float
    dx: float

    def __post_init__(self):
        if self.l2_relative < 0:
            raise ValueError("l2 error cannot be negative")


def section_profile(cloud, values, y, tol=1e-9):
    """Values along the horizontal section y ~ const, sorted by x.

    Only non-virtual nodes participate.  Returns (x, values_at_section).
    """
    from .cloud import NodeKind

    mask = (np.abs(cloud.positions[:, 1] - y) <= tol) & (
        cloud.kinds != int(NodeKind.VIRTUAL)
    )
    ids = np.flatnonzero(mask)
    order = np.argsort(cloud.positions[ids, 0])
    ids = ids[order]
    return cloud.positions[ids, 0], np.asarray(values)[ids]


# ---------------------------------------------------------------------------
# convergence studies on the rectangular benchmark
# ---------------------------------------------------------------------------


def _run_rect_case(config, dx, rm_mult, dt=None):
    """One study cell: returns (prepared case, run result)."""
    from . import config as cfg_mod
    from . import march

    cell = cfg_mod.with_overrides(config, dx=dx, rm_mult=rm_mult, dt=dt)
    prep = cfg_mod.prepare(cell)
    result = march.run(prep)
    return prep, result


def _study_cell(args):
    config, dx, rm_mult, dt, fine = args
    prep, result = _run_rect_case(config, dx, rm_mult, dt)
    cloud = prep.cloud
    real = cloud.real_ids
    x_real = cloud.positions[real, 0]

    final = result.snapshots[-1]
    p_err = l2_relative_error(final.p[real], analytical_pressure(x_real))
    p_linf = float(np.max(np.abs(final.p[real] - analytical_pressure(x_real))))

    # temperature against the fine 1D oracle, interpolated to node x
    xf, _, prof = fine
    Tref = np.interp(x_real, xf, prof[-1])
    T_err = l2_relative_error(final.T[real], Tref)
    T_linf = float(np.max(np.abs(final.T[real] - Tref)))

    return [
        ErrorReport("p", p_err, p_linf, len(real), rm_mult, dx),
        ErrorReport("T", T_err, T_linf, len(real), rm_mult, dx),
    ]


def convergence_study(config, dx_list, r_m_multipliers, out_dir=None):
    """Run the rectangular benchmark over (dx, r_m) pairs.

    Pressure is scored against the analytic linear profile and temperature
    against a fine-resolution independent 1D upwind-FDM oracle evaluated at
    the node abscissas.  The time step scales with dx (dt_cell = dt_config *
    dx / max(dx)).  Emits ``study.csv`` (dx, r_m_mult, field, l2_rel, linf)
    when ``out_dir`` is given.  Cells are independent; set GFDMFLOW_WORKERS
    > 1 to run them in separate processes.
    """
    from . import config as cfg_mod

    if list(dx_list) != sorted(dx_list, reverse=True):
        raise ValueError("dx_list must be sorted descending")

    # one shared fine oracle (aligned with every dx in the list)
    sched = config.schedule
    coeffs = advection_diffusion_coefficients(
        cfg_mod.props_from_config(config), *_pressure_drop_and_length(config)
    )
    bc = _temperature_end_values(config)
    fine_dx = min(dx_list) / 10.0
    fine_nx = int(round(_domain_length(config) / fine_dx))
    fine_dt = sched.dt * (min(dx_list) / max(dx_list)) / 10.0
    fine = fdm1d_upwind(
        fine_nx, fine_dx, fine_dt, sched.t_end, coeffs, bc,
        t_init=config.initial["T"],
    )

    cells = [
        (config, dx, m, sched.dt * dx / max(dx_list), fine)
        for dx in dx_list
        for m in r_m_multipliers
    ]
    workers = int(os.environ.get("GFDMFLOW_WORKERS", "1"))
    if workers > 1:
        import concurrent.futures as cf

        with cf.ProcessPoolExecutor(max_workers=workers) as ex:
            nested = list(ex.map(_study_cell, cells))
    else:
        nested = [_study_cell(c) for c in cells]
    reports = [r for pair in nested for r in pair]

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "study.csv"), "w") as f:
            f.write("dx,r_m_mult,field,l2_rel,linf\n")
            for r in reports:
                f.write(
                    f"{r.dx!r},{r.r_m_over_dx!r},{r.field_name},"
                    f"{r.l2_relative!r},{r.linf_absolute!r}\n"
                )
        with open(os.path.join(out_dir, "study_summary.txt"), "w") as f:
            f.write(f"{'dx':>8} {'r_m/dx':>8} {'field':>6} {'l2_rel':>12} {'linf':>12}\n")
            for r in reports:
                f.write(
                    f"{r.dx:8.3f} {r.r_m_over_dx:8.2f} {r.field_name:>6} "
                    f"{r.l2_relative:12.4e} {r.linf_absolute:12.4e}\n"
                )
    return reports


def _domain_length(config):
    verts = np.asarray(config.geometry_vertices)
    return float(verts[:, 0].max() - verts[:, 0].min())


def _pressure_drop_and_length(config):
    pvals = {}
    for seg, fields in config.bcs.items():
        bc = fields["p"]
        if bc.kind == "dirichlet":
            pvals[seg] = bc.value
    vals = list(pvals.values())
    if len(vals) != 2:
        raise ValueError("the 1D reduction needs exactly two Dirichlet pressure ends")
    return abs(vals[0] - vals[1]), _domain_length(config)


def _temperature_end_values(config):
    tvals = {}
    for seg, fields in config.bcs.items():
        bc = fields["T"]
        if bc.kind == "dirichlet":
            tvals[seg] = bc.value
    vals = list(tvals.values())
    if len(vals) != 2:
        raise ValueError("the 1D reduction needs exactly two Dirichlet temperature ends")
    # left end = segment whose Dirichlet pressure is larger (inflow side)
    pvals = {
        seg: fields["p"].value
        for seg, fields in config.bcs.items()
        if fields["p"].kind == "dirichlet"
    }
    segs = sorted(pvals, key=pvals.get, reverse=True)
    return tvals[segs[0]], tvals[segs[1]]


def write_section_dump(path, x, t_gfdm, t_fdm, t_ref):
    with open(path, "w") as f:
        f.write("x,T_gfdm,T_fdm,T_ref\n")
        for row in zip(x, t_gfdm, t_fdm, t_ref):
            f.write(",".join(repr(float(v)) for v in row) + "\n")
