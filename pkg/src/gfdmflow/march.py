"""Sequential coupled time stepping: pressure first, then temperature.

Each step solves the implicit pressure system with viscosity and porosity
factors lagged to the previous temperature, then the implicit temperature
system using the fresh pressure.  There is no sub-iteration inside a step;
the time-step size is the accuracy control.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import LinearSystem, SourceTerm, assemble_pressure, assemble_temperature
from .cloud import KIND_CHARS, NodeKind, PointCloud
from .errors import SolverError
from .props import PropertySet, porosity
from .stencil import StencilSet

RESIDUAL_LIMIT = 1e-10


@dataclass(frozen=True)
class State:
    """Pressure and temperature of every node (virtual included) at one time."""

    time: float
    p: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        object.__setattr__(self, "T", np.asarray(self.T, dtype=float))
        if self.p.shape != self.T.shape:
            raise ValueError("pressure and temperature arrays must match in length")


@dataclass(frozen=True)
class ScheduleConfig:
    dt: float
    t_end: float
    snapshot_times: tuple[float, ...] = ()
    convection_time: str = "implicit"

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be non-negative")
        if self.t_end > 0 and self.dt > self.t_end:
            raise ValueError("dt must not exceed t_end")
        if self.convection_time not in ("implicit", "explicit"):
            raise ValueError(f"unknown convection_time {self.convection_time!r}")
        for s in self.snapshot_times:
            if not 0.0 <= s <= self.t_end:
                raise ValueError(f"snapshot time {s} outside [0, {self.t_end}]")


def solve_linear(system: LinearSystem, cache: dict | None = None,
                 cache_key=None) -> np.ndarray:
    """Direct sparse solve with a hard relative-residual bound of 1e-10.

    Rows are equilibrated to unit max-norm before factorization (PDE rows
    carry accumulation terms around 1e6 while boundary rows are O(1)) and one
    iterative-refinement pass polishes the solution.

    When properties are decoupled the assembled matrix repeats bit-for-bit
    across time steps; pass a ``cache`` dict to reuse the factorization after
    an exact structure-and-value comparison.
    """
    matrix = system.matrix.tocsr()
    entry = None
    if cache is not None:
        prev = cache.get(cache_key)
        if (
            prev is not None
            and prev["nnz"] == matrix.nnz
            and np.array_equal(prev["indptr"], matrix.indptr)
            and np.array_equal(prev["indices"], matrix.indices)
            and np.array_equal(prev["data"], matrix.data)
        ):
            entry = prev
    if entry is None:
        row_scale = np.abs(matrix).max(axis=1).toarray().ravel()
        if np.any(row_scale == 0.0):
            bad = int(np.flatnonzero(row_scale == 0.0)[0])
            raise SolverError(
                f"singular system: empty row for node {system.unknown_map[bad]}"
            )
        scaled = (sp.diags(1.0 / row_scale) @ matrix).tocsc()
        try:
            lu = spla.splu(scaled)
        except RuntimeError as exc:
            diag = scaled.diagonal()
            zero_rows = np.flatnonzero(diag == 0.0)
            hint = ""
            if len(zero_rows):
                hint = f" (zero diagonal at node {system.unknown_map[zero_rows[0]]})"
            raise SolverError(f"sparse factorization failed: {exc}{hint}") from exc
        entry = {
            "nnz": matrix.nnz,
            "indptr": matrix.indptr.copy(),
            "indices": matrix.indices.copy(),
            "data": matrix.data.copy(),
            "row_scale": row_scale,
            "scaled": scaled,
            "lu": lu,
        }
        if cache is not None:
            cache[cache_key] = entry
    lu = entry["lu"]
    scaled = entry["scaled"]
    rhs = system.rhs / entry["row_scale"]
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        bad = int(np.flatnonzero(~np.isfinite(x))[0])
        raise SolverError(
            f"singular system: non-finite solution at node {system.unknown_map[bad]}"
        )
    x = x + lu.solve(rhs - scaled @ x)
    rhs_norm = np.linalg.norm(rhs)
    resid = np.linalg.norm(scaled @ x - rhs)
    if rhs_norm > 0 and resid / rhs_norm > RESIDUAL_LIMIT:
        raise SolverError(
            f"relative residual {resid / rhs_norm:.3e} exceeds {RESIDUAL_LIMIT:.1e}"
        )
    return x


def step(
    state_n: State,
    dt,
    cloud: PointCloud,
    stencils: StencilSet,
    props: PropertySet,
    bcs,
    sources: SourceTerm | None = None,
    convection_time: str = "implicit",
    solver_cache: dict | None = None,
) -> State:
    """Advance one time step: implicit pressure, then implicit temperature."""
    p_sys = assemble_pressure(state_n, dt, cloud, stencils, props, bcs, sources)
    p_next = solve_linear(p_sys, cache=solver_cache, cache_key="p")
    t_sys = assemble_temperature(
        state_n, p_next, dt, cloud, stencils, props, bcs, sources,
        convection_time=convection_time,
    )
    T_next = solve_linear(t_sys, cache=solver_cache, cache_key="T")
    for name, arr in (("pressure", p_next), ("temperature", T_next)):
        if not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.isfinite(arr))[0])
            raise SolverError(f"non-finite {name} at node {bad} after step")
    return State(time=state_n.time + dt, p=p_next, T=T_next)


@dataclass
class PreparedCase:
    """Everything a run needs, already built from a configuration."""

    name: str
    cloud: PointCloud
    stencils: StencilSet
    props: PropertySet
    bcs: dict
    schedule: ScheduleConfig
    sources: SourceTerm = field(default_factory=SourceTerm)


@dataclass
class RunResult:
    snapshots: list[State]
    metrics: list[dict]
    wall_seconds: float
    steps: int


def _snapshot_metrics(state: State, cloud: PointCloud, props: PropertySet) -> dict:
    real = cloud.real_ids
    phi = porosity(state.p[real], state.T[real], props)
    cap = (1.0 - phi) * props.rho_r * props.c_r + phi * props.rho_l * props.c_l
    return {
        "time": state.time,
        "p_min": float(state.p[real].min()),
        "p_max": float(state.p[real].max()),
        "T_min": float(state.T[real].min()),
        "T_max": float(state.T[real].max()),
        # nodal budget diagnostics (per-node averages, field units)
        "pore_volume_mean": float(phi.mean()),
        "heat_content_mean": float(np.mean(cap * state.T[real])),
    }


def run(case: PreparedCase, out_dir=None, formats=("csv",)) -> RunResult:
    """March from the initial state to t_end, collecting snapshots.

    The initial snapshot records the raw initial condition; boundary values
    take over from the first solve onward.  Snapshot times must sit on the
    time grid (the configuration layer rounds them).  When ``out_dir`` is
    given, snapshots are written as they are produced and a step failure
    leaves a partial-output manifest next to them before re-raising.
    """
    sched = case.schedule
    n = case.cloud.n_nodes
    state = State(
        time=0.0,
        p=np.full(n, case.props.p_0),
        T=np.full(n, case.props.t_0),
    )
    wanted = sorted(set(float(s) for s in sched.snapshot_times))
    snapshots: list[State] = []
    metrics: list[dict] = []
    written: list[str] = []

    def emit(st):
        snapshots.append(st)
        metrics.append(_snapshot_metrics(st, case.cloud, case.props))
        if out_dir is not None:
            written.extend(_write_snapshot(st, case.cloud, out_dir, formats))

    def maybe_snapshot(st):
        if any(abs(st.time - s) <= 1e-9 * max(1.0, abs(s)) for s in wanted):
            emit(st)

    t0 = _time.perf_counter()
    maybe_snapshot(state)
    steps = 0
    solver_cache: dict = {}
    if sched.t_end > 0:
        n_steps = int(round(sched.t_end / sched.dt))
        if abs(n_steps * sched.dt - sched.t_end) > 1e-9 * max(1.0, sched.t_end):
            n_steps = int(np.ceil(sched.t_end / sched.dt - 1e-12))
        for k in range(1, n_steps + 1):
            try:
                state = step(
                    state,
                    sched.dt,
                    case.cloud,
                    case.stencils,
                    case.props,
                    case.bcs,
                    case.sources,
                    convection_time=sched.convection_time,
                    solver_cache=solver_cache,
                )
            except Exception as exc:
                if out_dir is not None:
                    write_partial_manifest(out_dir, written, exc)
                raise
            # keep the time grid exact to make snapshot matching robust
            state = State(time=k * sched.dt, p=state.p, T=state.T)
            maybe_snapshot(state)
            steps = k
    wall = _time.perf_counter() - t0
    if not snapshots or snapshots[-1].time < state.time:
        emit(state)
    result = RunResult(snapshots=snapshots, metrics=metrics, wall_seconds=wall, steps=steps)
    if out_dir is not None:
        import os

        write_summary(result, case, os.path.join(out_dir, "summary.txt"))
    return result


def _write_snapshot(state, cloud, out_dir, formats):
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths = []
    if "csv" in formats:
        p = os.path.join(out_dir, snapshot_filename(state.time))
        write_snapshot_csv(state, cloud, p)
        paths.append(p)
    if "vtk" in formats:
        p = os.path.join(out_dir, snapshot_filename(state.time).replace(".csv", ".vtk"))
        write_vtk(state, cloud, p)
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# output writers
# ---------------------------------------------------------------------------


def snapshot_filename(t):
    return f"snap_t{t:010.3f}.csv"


def write_snapshot_csv(state: State, cloud: PointCloud, path):
    """CSV with header x,y,kind,p,T covering every node (virtual included)."""
    with open(path, "w") as f:
        f.write("x,y,kind,p,T\n")
        for i in range(cloud.n_nodes):
            kind = KIND_CHARS[NodeKind(int(cloud.kinds[i]))]
            f.write(
                f"{float(cloud.positions[i, 0])!r},{float(cloud.positions[i, 1])!r},"
                f"{kind},{float(state.p[i])!r},{float(state.T[i])!r}\n"
            )


def write_vtk(state: State, cloud: PointCloud, path):
    """Legacy-VTK unstructured points file with p and T point data."""
    n = cloud.n_nodes
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write(f"gfdmflow snapshot t={state.time!r}\n")
        f.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {n} double\n")
        for i in range(n):
            f.write(f"{float(cloud.positions[i, 0])!r} {float(cloud.positions[i, 1])!r} 0.0\n")
        f.write(f"CELLS {n} {2 * n}\n")
        for i in range(n):
            f.write(f"1 {i}\n")
        f.write(f"CELL_TYPES {n}\n")
        f.write("1\n" * n)
        f.write(f"POINT_DATA {n}\n")
        f.write("SCALARS pressure double 1\nLOOKUP_TABLE default\n")
        for v in state.p:
            f.write(f"{float(v)!r}\n")
        f.write("SCALARS temperature double 1\nLOOKUP_TABLE default\n")
        for v in state.T:
            f.write(f"{float(v)!r}\n")


def write_summary(result: RunResult, case: PreparedCase, path):
    counts = case.cloud.counts()
    with open(path, "w") as f:
        f.write(f"case: {case.name}\n")
        f.write(
            "nodes: total={total} interior={interior} dirichlet={dirichlet} "
            "derivative={derivative} virtual={virtual}\n".format(**counts)
        )
        f.write(f"h_avg: {case.cloud.h_avg!r}\n")
        f.write(f"r_m: {case.cloud.r_m!r}\n")
        f.write(f"dt: {case.schedule.dt!r}  t_end: {case.schedule.t_end!r}\n")
        f.write(f"steps: {result.steps}\n")
        f.write(f"wall_seconds: {result.wall_seconds:.3f}\n")
        f.write("snapshots:\n")
        for m in result.metrics:
            f.write(
                "  t={time:10.3f}  p=[{p_min:.6f}, {p_max:.6f}]  "
                "T=[{T_min:.6f}, {T_max:.6f}]  phi_mean={pore_volume_mean:.6f}  "
                "heat_mean={heat_content_mean:.6e}\n".format(**m)
            )


def write_partial_manifest(out_dir, completed, error):
    """Record what a failed run managed to produce before halting."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "manifest_partial.txt")
    with open(path, "w") as f:
        f.write(f"error: {error}\n")
        f.write("completed snapshots:\n")
        for p in completed:
            f.write(f"  {p}\n")
    return path
