"""Exception types shared across the package."""


class GfdmError(Exception):
    """Base class for all package errors."""


class GeometryError(GfdmError):
    """Invalid domain geometry or node placement."""


class StencilDeficiencyError(GfdmError):
    """A node that must own a derivative stencil has fewer than 5 neighbors."""

    def __init__(self, node_id, count):
        self.node_id = node_id
        self.count = count
        super().__init__(
            f"node {node_id} has only {count} neighbors inside its influence "
            f"domain; at least 5 are required for the second-order Taylor system"
        )


class DegenerateStencilError(GfdmError):
    """The 5x5 least-squares normal matrix is singular or near-singular."""

    def __init__(self, node_id, cond):
        self.node_id = node_id
        self.cond = cond
        super().__init__(
            f"degenerate stencil at node {node_id} (condition number {cond:.3e}); "
            f"neighbor layout is collinear or nearly so - enlarge the influence radius"
        )


class PhysicalityError(GfdmError):
    """A property model produced a value outside its physical range."""


class SolverError(GfdmError):
    """Linear system could not be solved to the required residual."""


class SolvabilityError(SolverError):
    """Assembled system is structurally singular (e.g. all-Neumann with no storage)."""


class ConfigError(GfdmError):
    """Case configuration file is invalid."""

    def __init__(self, path, message):
        self.field_path = path
        super().__init__(f"{path}: {message}")
