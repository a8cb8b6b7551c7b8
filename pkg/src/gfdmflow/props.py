"""Rock and fluid property models in field units.

Everything stays in the field-unit system (MPa, days, meters, mD, mPa.s,
degrees C) with the two fixed conversion factors ALPHA_UNIT = 0.0864 (Darcy
flux, mD * MPa / (mPa.s * m) -> m/day) and BETA_UNIT = 86400 (J/s -> J/day).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import PhysicalityError

ALPHA_UNIT = 0.0864
BETA_UNIT = 86400.0


@dataclass(frozen=True)
class PermeabilityField:
    """Permeability as a uniform value, an exponential-in-x profile
    k0 * exp(-x / decay_length), or tabulated nodal values (nearest-node
    lookup within one average spacing)."""

    kind: str
    value: float = 0.0
    k0: float = 0.0
    decay_length: float = 1.0
    table_xy: np.ndarray | None = None
    table_k: np.ndarray | None = None

    @classmethod
    def uniform(cls, k):
        if k <= 0:
            raise ValueError("permeability must be positive")
        return cls(kind="uniform", value=float(k))

    @classmethod
    def exponential_x(cls, k0, decay_length):
        if k0 <= 0 or decay_length <= 0:
            raise ValueError("k0 and decay length must be positive")
        return cls(kind="exponential_x", k0=float(k0), decay_length=float(decay_length))

    @classmethod
    def table(cls, xy, k):
        xy = np.asarray(xy, dtype=float)
        k = np.asarray(k, dtype=float)
        if len(xy) != len(k) or np.any(k <= 0):
            raise ValueError("table needs one positive k per (x, y) row")
        return cls(kind="table", table_xy=xy, table_k=k)


def permeability_at(x, y, perm_field: PermeabilityField, h_avg=None):
    """Evaluate the permeability field (mD) at positions; vectorized."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if perm_field.kind == "uniform":
        out = np.full_like(x, perm_field.value, dtype=float)
    elif perm_field.kind == "exponential_x":
        out = perm_field.k0 * np.exp(-x / perm_field.decay_length)
    elif perm_field.kind == "table":
        tree = cKDTree(perm_field.table_xy)
        d, idx = tree.query(np.column_stack([np.atleast_1d(x), np.atleast_1d(y)]))
        if h_avg is not None and np.any(d > h_avg):
            bad = int(np.argmax(d))
            raise LookupError(
                f"no tabulated permeability within h_avg={h_avg} of point "
                f"({np.atleast_1d(x)[bad]}, {np.atleast_1d(y)[bad]})"
            )
        out = perm_field.table_k[idx].reshape(np.shape(x))
    else:
        raise ValueError(f"unknown permeability field kind {perm_field.kind!r}")
    return float(out) if np.isscalar(x) or x.ndim == 0 else out


@dataclass(frozen=True)
class PropertySet:
    """All rock/fluid constants of one case."""

    phi_0: float          # initial porosity, fraction
    c_t: float            # compressibility, 1/MPa
    c_temp: float         # thermal expansion coefficient, 1/degC
    p_0: float            # initial pressure, MPa
    t_0: float            # initial temperature, degC
    mu_0: float           # viscosity at t_0, mPa.s
    alpha_t: float        # viscosity-temperature coefficient, 1/degC
    lambda_l: float       # fluid heat conduction, J/s/m/degC
    lambda_r: float       # rock heat conduction, J/s/m/degC
    rho_l: float          # fluid density, kg/m^3
    rho_r: float          # rock density, kg/m^3
    c_l: float            # fluid heat capacity, J/kg/degC
    c_r: float            # rock heat capacity, J/kg/degC
    permeability: PermeabilityField = field(
        default_factory=lambda: PermeabilityField.uniform(500.0)
    )

    alpha_unit = ALPHA_UNIT
    beta_unit = BETA_UNIT

    def __post_init__(self):
        if not 0.0 < self.phi_0 < 1.0:
            raise ValueError(f"porosity must be in (0, 1), got {self.phi_0}")
        for name in ("mu_0", "lambda_l", "lambda_r", "rho_l", "rho_r", "c_l", "c_r"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.c_t < 0 or self.c_temp < 0:
            raise ValueError("compressibility and thermal expansion must be >= 0")


def porosity(p, T, props: PropertySet):
    """phi(p, T) = [phi0 + Ct (p - p0)] [1 + ((1 - phi0)/phi0) Ctemp (T - T0)]."""
    p = np.asarray(p, dtype=float)
    T = np.asarray(T, dtype=float)
    phi = (props.phi_0 + props.c_t * (p - props.p_0)) * (
        1.0 + (1.0 - props.phi_0) / props.phi_0 * props.c_temp * (T - props.t_0)
    )
    if np.any(phi <= 0.0) or np.any(phi >= 1.0):
        raise PhysicalityError(
            f"porosity left (0, 1): range [{np.min(phi)}, {np.max(phi)}]"
        )
    return float(phi) if phi.ndim == 0 else phi


def lambda_c(p, T, props: PropertySet):
    """Porosity-weighted mixture conductivity phi*lambda_l + (1-phi)*lambda_r."""
    phi = porosity(p, T, props)
    return phi * props.lambda_l + (1.0 - phi) * props.lambda_r


def viscosity(T, props: PropertySet):
    """mu(T) = mu0 * exp(-alpha_T (T - T0)), mPa.s."""
    T = np.asarray(T, dtype=float)
    mu = props.mu_0 * np.exp(-props.alpha_t * (T - props.t_0))
    return float(mu) if mu.ndim == 0 else mu


def _check_positive(*vals):
    for v in vals:
        if np.any(np.asarray(v) <= 0):
            raise ValueError("inter-node averages require strictly positive inputs")


def harmonic_perm(k_i, k_j):
    """Series-flow permeability between two nodes: 2 ki kj / (ki + kj)."""
    _check_positive(k_i, k_j)
    k_i = np.asarray(k_i, dtype=float)
    k_j = np.asarray(k_j, dtype=float)
    out = 2.0 * k_i * k_j / (k_i + k_j)
    return float(out) if out.ndim == 0 else out


def arithmetic_visc(mu_i, mu_j):
    """Inter-node viscosity: plain average."""
    _check_positive(mu_i, mu_j)
    mu_i = np.asarray(mu_i, dtype=float)
    mu_j = np.asarray(mu_j, dtype=float)
    out = 0.5 * (mu_i + mu_j)
    return float(out) if out.ndim == 0 else out


def harmonic_lambda(l_i, l_j):
    """Inter-node mixture conductivity, harmonic like the permeability."""
    _check_positive(l_i, l_j)
    l_i = np.asarray(l_i, dtype=float)
    l_j = np.asarray(l_j, dtype=float)
    out = 2.0 * l_i * l_j / (l_i + l_j)
    return float(out) if out.ndim == 0 else out
