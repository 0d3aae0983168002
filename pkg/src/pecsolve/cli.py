"""Command-line entry point.

Exit codes: 0 success, 1 configuration/usage error, 2 numerical failure
(divergence or non-convergence).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from pecsolve import device as dev
from pecsolve import verify
from pecsolve.config import REGISTRY, RunConfig, parse_bias_grid
from pecsolve.errors import ConfigError, PecsolveError
from pecsolve.stepping import StepperKind, run_to_steady, write_history_csv


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="pecsolve", description=__doc__)
    sub = p.add_subparsers(dest="command")

    def common(sp):
        sp.add_argument("--preset", default=None, help="device preset name (D-I..D-VII)")
        sp.add_argument("--config", default=None, help="path to a section.key config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key")
        sp.add_argument("--stepper", default=None,
                        choices=[k.value for k in StepperKind])
        sp.add_argument("--k", type=int, default=None, help="polynomial degree")
        sp.add_argument("--elements", type=int, default=None,
                        help="element count per subdomain")
        sp.add_argument("--light", choices=["on", "off"], default=None)
        sp.add_argument("--phi-app", type=float, default=None)
        sp.add_argument("--out-dir", default=".", help="output directory")
        sp.add_argument("--seed", type=int, default=None,
                        help="reserved; all methods are deterministic")

    sp = sub.add_parser("steady", help="march one configuration to steady state")
    common(sp)

    sp = sub.add_parser("iv", help="steady I-V sweep under illumination")
    common(sp)
    sp.add_argument("--bias-grid", default=None,
                    help="'a,b,c' or 'linspace:start:stop:n'")
    sp.add_argument("--no-refine", action="store_true",
                    help="skip extra solves when extracting metrics")

    sp = sub.add_parser("converge-1d", help="steady-state self-convergence study")
    common(sp)
    sp.add_argument("--counts", default="16,32,64", help="per-subdomain element counts")
    sp.add_argument("--ref", type=int, default=512, help="reference element count")

    sp = sub.add_parser("converge-2d", help="coupled parabolic manufactured benchmark")
    sp.add_argument("--k", type=int, default=1)
    sp.add_argument("--levels", type=int, default=3)
    sp.add_argument("--coarsest", type=int, default=8)
    sp.add_argument("--out-dir", default=".")

    sp = sub.add_parser("bench-steppers", help="profile the four stepping algorithms")
    common(sp)

    sp = sub.add_parser("schottky-compare", help="full model vs Schottky approximation")
    common(sp)
    sp.add_argument("--bias-grid", default=None)

    sub.add_parser("presets", help="list device presets")
    return p


def _config_from_args(args) -> dev.DeviceConfig:
    if args.preset:
        run = RunConfig.from_preset(args.preset)
    else:
        run = RunConfig(device=dev.DeviceConfig())
    if args.config:
        run = RunConfig.parse(Path(args.config).read_text(), base=run.device)
    pairs = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, val = item.partition("=")
        pairs[key.strip()] = val.strip()
    if pairs:
        run = run.override_many(pairs)
    cfg = run.device
    if args.stepper:
        cfg = replace(cfg, stepper=StepperKind.parse(args.stepper))
    if args.k is not None:
        cfg = replace(cfg, degree=args.k)
    if args.elements is not None:
        cfg = replace(cfg, n_semiconductor=args.elements, n_electrolyte=args.elements)
    if args.light is not None:
        cfg = replace(cfg, gamma=1 if args.light == "on" else 0)
    if getattr(args, "phi_app", None) is not None:
        cfg = replace(cfg, phi_app=args.phi_app)
    return cfg


def _cmd_presets() -> int:
    for name, cfg in dev.presets().items():
        t = cfg.transfer
        print(
            f"{name}: domain=({cfg.x_left},{cfg.x_right}) rho_n_e={cfg.rho_n_e} "
            f"rho_p_e={cfg.rho_p_e} rho_r_inf={cfg.rho_r_inf} rho_o_inf={cfg.rho_o_inf} "
            f"k_et={t.k_et:g} k_ht={t.k_ht:g}"
            + (f" v_n={t.v_n:g} v_p={t.v_p:g}" if t.v_n or t.v_p else "")
        )
    return 0


def _cmd_steady(args) -> int:
    cfg = _config_from_args(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sim, result = dev.run_steady(cfg)
    if not result.converged:
        print("run hit the step budget before steady state", file=sys.stderr)
        return 2
    dev.emit_fields(sim, result.state, str(out / "fields.csv"))
    write_history_csv(result.history, str(out / "history.csv"))
    (out / "profile.txt").write_text(sim.profiler.report() + "\n")
    current = dev.total_current(sim, result.state)
    print(f"steady in {result.steps} steps; mean J = {current.mean:.6e}; "
          f"spatial variation = {current.rel_variation:.3e}")
    return 0


def _cmd_iv(args) -> int:
    cfg = _config_from_args(args)
    if args.light is None:
        cfg = replace(cfg, gamma=1)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = (
        parse_bias_grid(args.bias_grid)
        if args.bias_grid
        else dev.default_bias_grid(cfg)
    )
    metrics, curve, resolver = dev.device_fill_factor(
        cfg, biases=grid, refine=not args.no_refine
    )
    dev.write_iv_csv(curve, str(out / "iv.csv"))
    dev.write_metrics(metrics, str(out / "metrics.txt"))
    print(
        f"J_sc={metrics.j_sc:.6e} Phi_oc={metrics.phi_oc:.4f} "
        f"ff={metrics.fill_factor:.4f}"
        + (f" eff={metrics.efficiency:.4%}" if metrics.efficiency is not None else "")
    )
    return 0


def _cmd_converge_1d(args) -> int:
    cfg = _config_from_args(args)
    counts = [int(tok) for tok in args.counts.split(",")]
    table = verify.self_convergence_1d(cfg, counts, args.ref)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "converge_1d.csv").write_text(table.to_csv())
    print(table.to_csv())
    return 0


def _cmd_converge_2d(args) -> int:
    table = verify.run_manufactured(args.k, levels=args.levels, coarsest_cells=args.coarsest)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "converge_2d.csv").write_text(table.to_csv())
    print(table.to_csv())
    return 0


def _cmd_bench(args) -> int:
    cfg = _config_from_args(args)
    report = verify.bench_steppers(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.txt").write_text(report.to_text())
    print(report.to_text())
    if not report.consistent:
        print("steady states disagree; report invalidated", file=sys.stderr)
        return 2
    return 0


def _cmd_schottky(args) -> int:
    cfg = _config_from_args(args)
    if args.light is None:
        cfg = replace(cfg, gamma=1)
    grid = (
        parse_bias_grid(args.bias_grid)
        if args.bias_grid
        else dev.default_bias_grid(cfg, n_points=13)
    )
    cmp = dev.schottky_compare(cfg, grid)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dev.write_iv_csv(cmp.full_curve, str(out / "iv_full.csv"))
    dev.write_iv_csv(cmp.schottky_curve, str(out / "iv_schottky.csv"))
    print(f"max |J_full - J_schottky| over grid = {cmp.deviation:.6e}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage()
            return 1
        if args.command == "presets":
            return _cmd_presets()
        if args.command == "steady":
            return _cmd_steady(args)
        if args.command == "iv":
            return _cmd_iv(args)
        if args.command == "converge-1d":
            return _cmd_converge_1d(args)
        if args.command == "converge-2d":
            return _cmd_converge_2d(args)
        if args.command == "bench-steppers":
            return _cmd_bench(args)
        if args.command == "schottky-compare":
            return _cmd_schottky(args)
        parser.print_usage()
        return 1
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except PecsolveError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
