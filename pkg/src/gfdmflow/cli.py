"""Command-line surface.

Subcommands: ``cloud gen``, ``cloud info``, ``run``, ``verify``, ``study``,
``dump-matrix``.  Exit status 0 on success, 1 when a run or a verification
check fails, 2 on bad usage / unreadable or invalid configuration.
Set GFDMFLOW_WORKERS to parallelize convergence-study cells.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import cloud as cloud_mod
from . import config as cfg_mod
from . import march, verify
from .errors import GfdmError


def _load(args):
    cfg = cfg_mod.parse_config(args.config)
    overrides = {}
    if getattr(args, "dx", None) is not None:
        overrides["dx"] = args.dx
    if getattr(args, "dt", None) is not None:
        overrides["dt"] = args.dt
    if getattr(args, "t_end", None) is not None:
        overrides["t_end"] = args.t_end
    if getattr(args, "rm_mult", None) is not None:
        overrides["rm_mult"] = args.rm_mult
    if getattr(args, "out", None) is not None:
        overrides["out_dir"] = args.out
    if overrides:
        cfg = cfg_mod.with_overrides(cfg, **overrides)
    return cfg


def _echo_config(cfg, quiet):
    if quiet:
        return
    import json

    print(f"# effective configuration ({cfg.name})")
    print(json.dumps(cfg_mod.to_dict(cfg), indent=2))


def cmd_cloud_gen(args):
    cfg = _load(args)
    _echo_config(cfg, args.quiet)
    cloud = cfg_mod.build_cloud(cfg)
    out = args.cloud_file or os.path.join(cfg.output["dir"], "cloud.txt")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    cloud_mod.save_cloud(cloud, out)
    if not args.quiet:
        print(f"wrote {out}")
        _print_cloud_info(cloud)
    return 0


def _print_cloud_info(cloud):
    counts = cloud.counts()
    print(
        "nodes: total={total} interior={interior} dirichlet={dirichlet} "
        "derivative={derivative} virtual={virtual}".format(**counts)
    )
    print(f"h_avg: {cloud.h_avg:.6g} m")
    if cloud.index_sets is not None:
        sizes = [
            len(cloud.index_sets[i])
            for i in range(cloud.n_nodes)
            if cloud.kinds[i] != int(cloud_mod.NodeKind.VIRTUAL)
        ]
        print(f"r_m: {cloud.r_m:.6g} m   |index sets|: min={min(sizes)} max={max(sizes)}")


def cmd_cloud_info(args):
    cfg = _load(args)
    cloud = cfg_mod.build_cloud(cfg)
    _print_cloud_info(cloud)
    return 0


def cmd_run(args):
    cfg = _load(args)
    _echo_config(cfg, args.quiet)
    prep = cfg_mod.prepare(cfg)
    out_dir = cfg.output["dir"]
    formats = tuple(cfg.output["formats"])
    result = march.run(prep, out_dir=out_dir, formats=formats)
    if not args.quiet:
        print(f"completed {result.steps} steps in {result.wall_seconds:.2f}s")
        for m in result.metrics:
            print(
                "  t={time:9.3f}  p=[{p_min:.6f}, {p_max:.6f}]  "
                "T=[{T_min:.6f}, {T_max:.6f}]".format(**m)
            )
        print(f"outputs in {out_dir}")
    return 0


def _is_1d_reducible(cfg):
    """Rectangle, uniform k, decoupled properties, Dirichlet left/right and
    homogeneous derivative top/bottom: the benchmark reduces to 1D."""
    if not cfg.geometry.is_rectangle() or cfg.cloud_spec["type"] != "cartesian":
        return False
    props = cfg.props
    if props.permeability.kind != "uniform":
        return False
    if props.c_t != 0.0 or props.c_temp != 0.0 or props.alpha_t != 0.0:
        return False
    p_dir = [s for s, f in cfg.bcs.items() if f["p"].kind == "dirichlet"]
    t_dir = [s for s, f in cfg.bcs.items() if f["T"].kind == "dirichlet"]
    if sorted(p_dir) != sorted(t_dir) or len(p_dir) != 2:
        return False
    for s, f in cfg.bcs.items():
        if s not in p_dir:
            for fld in ("p", "T"):
                bc = f[fld]
                if bc.kind != "derivative" or bc.h != 0.0 or bc.q != 0.0:
                    return False
    return True


def cmd_verify(args):
    cfg = _load(args)
    checks = []

    prep = cfg_mod.prepare(cfg)
    cloud, stencils = prep.cloud, prep.stencils

    # quadratic reproduction on a sample of stencils
    rng = np.random.default_rng(0)
    coef = rng.normal(size=6)
    pos = cloud.positions
    u = (coef[0] + coef[1] * pos[:, 0] + coef[2] * pos[:, 1]
         + coef[3] * pos[:, 0] ** 2 + coef[4] * pos[:, 1] ** 2
         + coef[5] * pos[:, 0] * pos[:, 1])
    worst = 0.0
    from .stencil import apply as apply_stencil

    for i in cloud.stencil_owner_ids():
        if i in stencils.deficient_ids:
            continue
        x, y = pos[i]
        exact = np.array([
            coef[1] + 2 * coef[3] * x + coef[5] * y,
            coef[2] + 2 * coef[4] * y + coef[5] * x,
            2 * coef[3], 2 * coef[4], coef[5],
        ])
        got = apply_stencil(stencils[i], u)
        scale = max(1.0, np.max(np.abs(exact)))
        worst = max(worst, float(np.max(np.abs(got - exact)) / scale))
    checks.append(("stencil quadratic exactness <= 1e-9", worst <= 1e-9, f"worst={worst:.3e}"))

    result = march.run(prep)
    real = cloud.real_ids
    final = result.snapshots[-1]

    t_bounds = [cfg.initial["T"]] + [
        f["T"].value for f in cfg.bcs.values() if f["T"].kind == "dirichlet"
    ]
    lo, hi = min(t_bounds), max(t_bounds)
    t_min = min(s.T[real].min() for s in result.snapshots)
    t_max = max(s.T[real].max() for s in result.snapshots)
    ok = t_min >= lo - 1e-6 and t_max <= hi + 1e-6
    checks.append(
        ("temperature maximum principle (+-1e-6)", ok, f"range=[{t_min:.8f}, {t_max:.8f}]")
    )

    if _is_1d_reducible(cfg):
        p_dir = {s: f["p"].value for s, f in cfg.bcs.items() if f["p"].kind == "dirichlet"}
        vals = sorted(p_dir.values())
        x = cloud.positions[real, 0]
        length = x.max() - x.min()
        p_exact = vals[1] - (vals[1] - vals[0]) * (x - x.min()) / length
        p_err = verify.l2_relative_error(final.p[real], p_exact)
        checks.append(("pressure matches linear profile <= 1e-6", p_err <= 1e-6,
                       f"l2={p_err:.3e}"))

        coeffs = verify.advection_diffusion_coefficients(
            cfg.props, vals[1] - vals[0], length
        )
        tl, tr = verify._temperature_end_values(cfg)
        dx = cfg.cloud_spec["dx"]
        nx = int(round(length / dx))
        _, _, prof = verify.fdm1d_upwind(
            nx, dx, cfg.schedule.dt, cfg.schedule.t_end, coeffs, (tl, tr),
            t_init=cfg.initial["T"],
        )
        y_mid = round(np.median(np.unique(cloud.positions[real, 1])) / dx) * dx
        xs, Ts = verify.section_profile(cloud, final.T, y=y_mid)
        t_err = verify.l2_relative_error(Ts, prof[-1])
        checks.append(
            (f"temperature equals matched upwind-FDM oracle <= 1e-6 (section y={y_mid:g})",
             t_err <= 1e-6, f"l2={t_err:.3e}"),
        )

    failed = 0
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}  [{detail}]")
        failed += 0 if ok else 1
    if not args.quiet:
        print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return 0 if failed == 0 else 1


def cmd_study(args):
    cfg = _load(args)
    dx_list = [float(v) for v in args.dx_list.split(",")]
    mults = [float(v) for v in args.rm_mults.split(",")]
    out_dir = args.out or cfg.output["dir"]
    reports = verify.convergence_study(cfg, dx_list, mults, out_dir=out_dir)
    if not args.quiet:
        print(f"{'dx':>8} {'r_m/dx':>8} {'field':>6} {'l2_rel':>12} {'linf':>12}")
        for r in reports:
            print(
                f"{r.dx:8.3f} {r.r_m_over_dx:8.2f} {r.field_name:>6} "
                f"{r.l2_relative:12.4e} {r.linf_absolute:12.4e}"
            )
        print(f"table written to {os.path.join(out_dir, 'study.csv')}")
    return 0


def cmd_dump_matrix(args):
    cfg = _load(args)
    prep = cfg_mod.prepare(cfg)
    n = prep.cloud.n_nodes
    state = march.State(0.0, np.full(n, cfg.initial["p"]), np.full(n, cfg.initial["T"]))
    for _ in range(args.step - 1):
        state = march.step(
            state, prep.schedule.dt, prep.cloud, prep.stencils, prep.props,
            prep.bcs, prep.sources, convection_time=prep.schedule.convection_time,
        )
    from .assembly import assemble_pressure, assemble_temperature

    p_sys = assemble_pressure(
        state, prep.schedule.dt, prep.cloud, prep.stencils, prep.props,
        prep.bcs, prep.sources,
    )
    p_next = march.solve_linear(p_sys)
    t_sys = assemble_temperature(
        state, p_next, prep.schedule.dt, prep.cloud, prep.stencils, prep.props,
        prep.bcs, prep.sources, convection_time=prep.schedule.convection_time,
    )
    out_dir = args.out or cfg.output["dir"]
    os.makedirs(out_dir, exist_ok=True)
    p_path = os.path.join(out_dir, f"pressure_step{args.step}.txt")
    t_path = os.path.join(out_dir, f"temperature_step{args.step}.txt")
    p_sys.dump(p_path)
    t_sys.dump(t_path)
    if not args.quiet:
        print(f"wrote {p_path}\nwrote {t_path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gfdmflow",
        description="meshless GFDM simulator for heat and mass transfer in porous media",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_overrides=True):
        p.add_argument("config", help="case configuration (JSON)")
        p.add_argument("--quiet", action="store_true")
        if with_overrides:
            p.add_argument("--out", help="output directory override")
            p.add_argument("--dx", type=float, help="cartesian node spacing override")
            p.add_argument("--dt", type=float, help="time step override (days)")
            p.add_argument("--t-end", dest="t_end", type=float, help="end time override")
            p.add_argument("--rm-mult", dest="rm_mult", type=float,
                           help="influence radius multiplier override")

    p_cloud = sub.add_parser("cloud", help="point-cloud utilities")
    cloud_sub = p_cloud.add_subparsers(dest="cloud_command", required=True)
    p_gen = cloud_sub.add_parser("gen", help="generate a cloud and write it to a file")
    common(p_gen)
    p_gen.add_argument("--cloud-file", help="output cloud path")
    p_gen.set_defaults(func=cmd_cloud_gen)
    p_info = cloud_sub.add_parser("info", help="node counts, h_avg, index-set sizes")
    common(p_info)
    p_info.set_defaults(func=cmd_cloud_info)

    p_run = sub.add_parser("run", help="run a case and write snapshots")
    common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_verify = sub.add_parser("verify", help="oracle comparisons and invariant checks")
    common(p_verify)
    p_verify.set_defaults(func=cmd_verify)

    p_study = sub.add_parser("study", help="convergence study over (dx, r_m) pairs")
    common(p_study)
    p_study.add_argument("--dx-list", default="5,2", help="comma-separated, descending")
    p_study.add_argument("--rm-mults", default="1.6,2.6,3.6", help="comma-separated")
    p_study.set_defaults(func=cmd_study)

    p_dump = sub.add_parser("dump-matrix", help="dump assembled systems as triplets")
    common(p_dump)
    p_dump.add_argument("--step", type=int, default=1, help="time step number (1-based)")
    p_dump.set_defaults(func=cmd_dump_matrix)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: cannot read {exc}", file=sys.stderr)
        return 2
    except GfdmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PermissionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
