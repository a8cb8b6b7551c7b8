"""Meshless upwind generalized-finite-difference simulator for coupled
single-phase heat and mass transfer in 2D porous media."""

from .cloud import (
    DomainGeometry,
    Node,
    NodeKind,
    PointCloud,
    add_virtual_nodes,
    build_index_sets,
    generate_cartesian_cloud,
    generate_scattered_cloud,
    load_cloud,
    save_cloud,
)
from .stencil import Stencil, StencilSet, build_all_stencils, build_stencil, weight
from .props import (
    ALPHA_UNIT,
    BETA_UNIT,
    PermeabilityField,
    PropertySet,
    arithmetic_visc,
    harmonic_lambda,
    harmonic_perm,
    lambda_c,
    permeability_at,
    porosity,
    viscosity,
)
from .assembly import (
    BoundaryCondition,
    LinearSystem,
    SourceTerm,
    assemble_pressure,
    assemble_temperature,
    transmissibility,
    upwind_select,
)
from .march import (
    PreparedCase,
    RunResult,
    ScheduleConfig,
    State,
    run,
    solve_linear,
    step,
)
from .verify import (
    ErrorReport,
    advection_diffusion_coefficients,
    analytical_pressure,
    convergence_study,
    dissipation_estimate,
    fdm1d_upwind,
    l2_relative_error,
)
from .config import (
    CaseConfig,
    bundled_case_path,
    load_bundled,
    parse_config,
    prepare,
    with_overrides,
)

__version__ = "0.1.0"
