"""Case configuration: JSON schema, strict parsing, and case preparation.

A case file is a single JSON object; unknown keys anywhere are rejected with
the offending field path.  ``parse_config`` returns a :class:`CaseConfig`
whose normalized dictionary (defaults applied) round-trips exactly through
``to_dict`` -> json -> ``parse``.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import cloud as cloud_mod
from .assembly import BoundaryCondition, SourceTerm
from .cloud import DomainGeometry
from .errors import ConfigError
from .march import PreparedCase, ScheduleConfig
from .props import PermeabilityField, PropertySet
from .stencil import build_all_stencils

MIN_RM_MULT = 1.3

_PROP_KEYS = {
    "phi_0", "c_t", "c_temp", "mu_0", "alpha_t",
    "lambda_l", "lambda_r", "rho_l", "rho_r", "c_l", "c_r", "permeability",
}


@dataclass
class CaseConfig:
    name: str
    geometry: DomainGeometry
    cloud_spec: dict
    rm_mult: float
    virtual_offset: float | None
    props: PropertySet
    bcs: dict
    initial: dict
    schedule: ScheduleConfig
    sources: dict
    output: dict
    raw: dict

    @property
    def geometry_vertices(self):
        return self.geometry.vertices


def _expect_keys(d, allowed, required, path):
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}", "unknown key")
    for k in required:
        if k not in d:
            raise ConfigError(f"{path}.{k}", "missing required field")


def _number(d, key, path, default=None, minimum=None):
    if key not in d:
        if default is None:
            raise ConfigError(f"{path}.{key}", "missing required field")
        return default
    v = d[key]
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise ConfigError(f"{path}.{key}", f"expected a number, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{path}.{key}", f"must be >= {minimum}")
    return float(v)


def _parse_geometry(d, path="geometry"):
    _expect_keys(d, {"rectangle", "polygon"}, set(), path)
    if ("rectangle" in d) == ("polygon" in d):
        raise ConfigError(path, "exactly one of 'rectangle' or 'polygon' is required")
    if "rectangle" in d:
        r = d["rectangle"]
        _expect_keys(
            r, {"x0", "y0", "x1", "y1", "segments"}, {"x0", "y0", "x1", "y1", "segments"},
            f"{path}.rectangle",
        )
        segs = r["segments"]
        _expect_keys(
            segs, {"left", "right", "top", "bottom"},
            {"left", "right", "top", "bottom"}, f"{path}.rectangle.segments",
        )
        try:
            return DomainGeometry.rectangle(
                r["x0"], r["y0"], r["x1"], r["y1"],
                left=segs["left"], right=segs["right"],
                top=segs["top"], bottom=segs["bottom"],
            )
        except Exception as exc:
            raise ConfigError(f"{path}.rectangle", str(exc))
    p = d["polygon"]
    _expect_keys(p, {"vertices", "edge_segments"}, {"vertices", "edge_segments"},
                 f"{path}.polygon")
    try:
        return DomainGeometry(np.asarray(p["vertices"], dtype=float),
                              tuple(p["edge_segments"]))
    except Exception as exc:
        raise ConfigError(f"{path}.polygon", str(exc))


def _parse_permeability(d, path):
    _expect_keys(d, {"type", "k", "k0", "decay_length", "table"}, {"type"}, path)
    kind = d["type"]
    try:
        if kind == "uniform":
            return PermeabilityField.uniform(_number(d, "k", path))
        if kind == "exponential_x":
            return PermeabilityField.exponential_x(
                _number(d, "k0", path), _number(d, "decay_length", path)
            )
        if kind == "table":
            rows = np.asarray(d["table"], dtype=float)
            return PermeabilityField.table(rows[:, :2], rows[:, 2])
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(path, str(exc))
    raise ConfigError(f"{path}.type", f"unknown permeability type {kind!r}")


def _parse_bc(d, path):
    _expect_keys(d, {"kind", "value", "h", "l", "q", "direction"}, {"kind"}, path)
    kind = d["kind"]
    try:
        if kind == "dirichlet":
            return BoundaryCondition.dirichlet(_number(d, "value", path))
        if kind == "derivative":
            direction = d.get("direction")
            return BoundaryCondition.derivative(
                h=_number(d, "h", path, default=0.0),
                l=_number(d, "l", path, default=1.0),
                q=_number(d, "q", path, default=0.0),
                direction=direction,
            )
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(path, str(exc))
    raise ConfigError(f"{path}.kind", f"unknown BC kind {kind!r}")


def parse_config(path) -> CaseConfig:
    """Read and fully validate a case file."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path) as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(str(path), f"not valid JSON: {exc}")
    name = raw.get("name") or os.path.splitext(os.path.basename(path))[0]
    return config_from_dict(raw, default_name=name)


def config_from_dict(raw, default_name="case") -> CaseConfig:
    top_allowed = {
        "name", "geometry", "cloud", "rm_mult", "virtual_offset", "props",
        "initial", "bcs", "schedule", "sources", "output",
    }
    _expect_keys(raw, top_allowed,
                 {"geometry", "cloud", "rm_mult", "props", "initial", "bcs", "schedule"},
                 "case")
    geometry = _parse_geometry(raw["geometry"])

    cs = raw["cloud"]
    _expect_keys(cs, {"type", "dx", "dy", "spacing", "seed", "path"}, {"type"}, "cloud")
    ctype = cs["type"]
    if ctype == "cartesian":
        cloud_spec = {
            "type": "cartesian",
            "dx": _number(cs, "dx", "cloud"),
            "dy": _number(cs, "dy", "cloud", default=_number(cs, "dx", "cloud")),
        }
    elif ctype == "scattered":
        cloud_spec = {
            "type": "scattered",
            "spacing": _number(cs, "spacing", "cloud"),
            "seed": int(_number(cs, "seed", "cloud", default=0.0)),
        }
    elif ctype == "file":
        if "path" not in cs:
            raise ConfigError("cloud.path", "missing required field")
        cloud_spec = {"type": "file", "path": cs["path"]}
    else:
        raise ConfigError("cloud.type", f"unknown cloud type {ctype!r}")

    rm_mult = _number(raw, "rm_mult", "case")
    if rm_mult < MIN_RM_MULT:
        raise ConfigError(
            "rm_mult", f"must be >= {MIN_RM_MULT} (interior stencils are deficient below)"
        )
    virtual_offset = None
    if raw.get("virtual_offset") is not None:
        virtual_offset = _number(raw, "virtual_offset", "case", minimum=1e-12)

    pd = raw["props"]
    _expect_keys(pd, _PROP_KEYS, _PROP_KEYS - {"permeability"}, "props")
    perm = _parse_permeability(
        pd.get("permeability", {"type": "uniform", "k": 500.0}), "props.permeability"
    )

    init = raw["initial"]
    _expect_keys(init, {"p", "T"}, {"p", "T"}, "initial")
    initial = {"p": _number(init, "p", "initial"), "T": _number(init, "T", "initial")}

    try:
        props = PropertySet(
            phi_0=_number(pd, "phi_0", "props"),
            c_t=_number(pd, "c_t", "props"),
            c_temp=_number(pd, "c_temp", "props"),
            p_0=initial["p"],
            t_0=initial["T"],
            mu_0=_number(pd, "mu_0", "props"),
            alpha_t=_number(pd, "alpha_t", "props"),
            lambda_l=_number(pd, "lambda_l", "props"),
            lambda_r=_number(pd, "lambda_r", "props"),
            rho_l=_number(pd, "rho_l", "props"),
            rho_r=_number(pd, "rho_r", "props"),
            c_l=_number(pd, "c_l", "props"),
            c_r=_number(pd, "c_r", "props"),
            permeability=perm,
        )
    except ValueError as exc:
        raise ConfigError("props", str(exc))

    segments = set(geometry.segment_names)
    bcs_raw = raw["bcs"]
    extra = set(bcs_raw) - segments
    if extra:
        raise ConfigError(f"bcs.{sorted(extra)[0]}", "segment not present in geometry")
    bcs = {}
    for seg in sorted(segments):
        if seg not in bcs_raw:
            raise ConfigError(f"bcs.{seg}", "missing boundary conditions for segment")
        fields = bcs_raw[seg]
        _expect_keys(fields, {"p", "T"}, {"p", "T"}, f"bcs.{seg}")
        bcs[seg] = {
            "p": _parse_bc(fields["p"], f"bcs.{seg}.p"),
            "T": _parse_bc(fields["T"], f"bcs.{seg}.T"),
        }

    sd = raw["schedule"]
    _expect_keys(sd, {"dt", "t_end", "snapshots", "convection_time"},
                 {"dt", "t_end"}, "schedule")
    dt = _number(sd, "dt", "schedule")
    t_end = _number(sd, "t_end", "schedule", minimum=0.0)
    snaps = sd.get("snapshots", [t_end])
    if not isinstance(snaps, list):
        raise ConfigError("schedule.snapshots", "expected a list of times")
    # snap times are pinned to the time grid
    snaps = tuple(
        float(np.clip(round(s / dt) * dt, 0.0, t_end)) if t_end > 0 else 0.0
        for s in snaps
    )
    conv = sd.get("convection_time", "implicit")
    try:
        schedule = ScheduleConfig(
            dt=dt, t_end=t_end, snapshot_times=snaps, convection_time=conv
        )
    except ValueError as exc:
        raise ConfigError("schedule", str(exc))

    src = raw.get("sources", {})
    _expect_keys(src, {"q", "q_h"}, set(), "sources")
    sources = {
        "q": _number(src, "q", "sources", default=0.0),
        "q_h": _number(src, "q_h", "sources", default=0.0),
    }

    out = raw.get("output", {})
    _expect_keys(out, {"dir", "formats"}, set(), "output")
    formats = out.get("formats", ["csv"])
    for fmt in formats:
        if fmt not in ("csv", "vtk"):
            raise ConfigError("output.formats", f"unknown format {fmt!r}")
    output = {"dir": out.get("dir", f"out/{raw.get('name', default_name)}"),
              "formats": list(formats)}

    cfg = CaseConfig(
        name=raw.get("name", default_name),
        geometry=geometry,
        cloud_spec=cloud_spec,
        rm_mult=rm_mult,
        virtual_offset=virtual_offset,
        props=props,
        bcs=bcs,
        initial=initial,
        schedule=schedule,
        sources=sources,
        output=output,
        raw=None,
    )
    cfg.raw = to_dict(cfg)
    return cfg


def to_dict(cfg: CaseConfig) -> dict:
    """Normalized dictionary with all defaults applied (round-trip stable)."""
    geom = cfg.geometry
    if geom.is_rectangle():
        x0, y0 = geom.vertices.min(axis=0)
        x1, y1 = geom.vertices.max(axis=0)
        labels = geom.edge_labels  # (bottom, right, top, left)
        gdict = {
            "rectangle": {
                "x0": float(x0), "y0": float(y0), "x1": float(x1), "y1": float(y1),
                "segments": {
                    "bottom": labels[0], "right": labels[1],
                    "top": labels[2], "left": labels[3],
                },
            }
        }
    else:
        gdict = {
            "polygon": {
                "vertices": [[float(x), float(y)] for x, y in geom.vertices],
                "edge_segments": list(geom.edge_labels),
            }
        }
    perm = cfg.props.permeability
    if perm.kind == "uniform":
        pdict = {"type": "uniform", "k": perm.value}
    elif perm.kind == "exponential_x":
        pdict = {"type": "exponential_x", "k0": perm.k0, "decay_length": perm.decay_length}
    else:
        pdict = {
            "type": "table",
            "table": [
                [float(x), float(y), float(k)]
                for (x, y), k in zip(perm.table_xy, perm.table_k)
            ],
        }

    def bc_dict(bc):
        if bc.kind == "dirichlet":
            return {"kind": "dirichlet", "value": bc.value}
        d = {"kind": "derivative", "h": bc.h, "l": bc.l, "q": bc.q}
        if bc.direction is not None:
            d["direction"] = list(bc.direction)
        return d

    return {
        "name": cfg.name,
        "geometry": gdict,
        "cloud": dict(cfg.cloud_spec),
        "rm_mult": cfg.rm_mult,
        "virtual_offset": cfg.virtual_offset,
        "props": {
            "phi_0": cfg.props.phi_0, "c_t": cfg.props.c_t, "c_temp": cfg.props.c_temp,
            "mu_0": cfg.props.mu_0, "alpha_t": cfg.props.alpha_t,
            "lambda_l": cfg.props.lambda_l, "lambda_r": cfg.props.lambda_r,
            "rho_l": cfg.props.rho_l, "rho_r": cfg.props.rho_r,
            "c_l": cfg.props.c_l, "c_r": cfg.props.c_r,
            "permeability": pdict,
        },
        "initial": dict(cfg.initial),
        "bcs": {
            seg: {"p": bc_dict(fields["p"]), "T": bc_dict(fields["T"])}
            for seg, fields in cfg.bcs.items()
        },
        "schedule": {
            "dt": cfg.schedule.dt,
            "t_end": cfg.schedule.t_end,
            "snapshots": list(cfg.schedule.snapshot_times),
            "convection_time": cfg.schedule.convection_time,
        },
        "sources": dict(cfg.sources),
        "output": dict(cfg.output),
    }


def with_overrides(cfg: CaseConfig, dx=None, dy=None, spacing=None, rm_mult=None,
                   dt=None, t_end=None, out_dir=None, snapshots=None,
                   virtual_offset=None) -> CaseConfig:
    """New config with selected fields replaced (re-validated from the dict)."""
    d = copy.deepcopy(to_dict(cfg))
    if dx is not None:
        if d["cloud"]["type"] != "cartesian":
            raise ConfigError("cloud.dx", "dx override requires a cartesian cloud")
        d["cloud"]["dx"] = float(dx)
        d["cloud"]["dy"] = float(dy if dy is not None else dx)
    if spacing is not None:
        if d["cloud"]["type"] != "scattered":
            raise ConfigError("cloud.spacing", "spacing override requires a scattered cloud")
        d["cloud"]["spacing"] = float(spacing)
    if virtual_offset is not None:
        d["virtual_offset"] = float(virtual_offset)
    if rm_mult is not None:
        d["rm_mult"] = float(rm_mult)
    if dt is not None:
        d["schedule"]["dt"] = float(dt)
    if t_end is not None:
        d["schedule"]["t_end"] = float(t_end)
    if snapshots is not None:
        d["schedule"]["snapshots"] = list(snapshots)
    if out_dir is not None:
        d["output"]["dir"] = str(out_dir)
    return config_from_dict(d, default_name=cfg.name)


def props_from_config(cfg: CaseConfig) -> PropertySet:
    return cfg.props


def build_cloud(cfg: CaseConfig):
    """Generate (or load) the cloud, add virtual nodes, build index sets."""
    spec = cfg.cloud_spec
    if spec["type"] == "cartesian":
        cloud = cloud_mod.generate_cartesian_cloud(cfg.geometry, spec["dx"], spec["dy"])
    elif spec["type"] == "scattered":
        cloud = cloud_mod.generate_scattered_cloud(cfg.geometry, spec["spacing"], spec["seed"])
    else:
        cloud = cloud_mod.load_cloud(spec["path"], geometry=cfg.geometry)

    bc_kinds = {
        seg: ("derivative"
              if any(fields[f].kind == "derivative" for f in ("p", "T"))
              else "dirichlet")
        for seg, fields in cfg.bcs.items()
    }
    if len(cloud.virtual_ids) == 0:
        offset = cfg.virtual_offset if cfg.virtual_offset is not None else cloud.h_avg
        cloud = cloud_mod.add_virtual_nodes(cloud, bc_kinds, offset)
    # the multiplier scales the nominal spacing: dx for lattice clouds, the
    # target spacing for scattered ones (jitter drags the measured average
    # nearest-neighbor distance below nominal), h_avg for loaded files
    if spec["type"] == "cartesian":
        basis = min(spec["dx"], spec["dy"])
    elif spec["type"] == "scattered":
        basis = spec["spacing"]
    else:
        basis = cloud.h_avg
    r_m = cfg.rm_mult * basis
    return cloud_mod.build_index_sets(cloud, r_m)


def prepare(cfg: CaseConfig) -> PreparedCase:
    """Build everything a run needs from a validated configuration."""
    cloud = build_cloud(cfg)
    stencils = build_all_stencils(cloud)
    n = cloud.n_nodes
    sources = SourceTerm(
        q=np.full(n, cfg.sources["q"]) if cfg.sources["q"] else None,
        q_h=np.full(n, cfg.sources["q_h"]) if cfg.sources["q_h"] else None,
    )
    return PreparedCase(
        name=cfg.name,
        cloud=cloud,
        stencils=stencils,
        props=cfg.props,
        bcs=cfg.bcs,
        schedule=cfg.schedule,
        sources=sources,
    )


def bundled_case_path(name: str) -> str:
    """Filesystem path of a bundled case file (e.g. 'case_3_1')."""
    fname = name if name.endswith(".json") else f"{name}.json"
    return str(resources.files("gfdmflow").joinpath("cases", fname))


def load_bundled(name: str) -> CaseConfig:
    return parse_config(bundled_case_path(name))
