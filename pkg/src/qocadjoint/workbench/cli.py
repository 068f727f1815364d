"""Command-line entry points.

Subcommands: gen-system, propagate, grad-check, hess-check, run, study,
bench-scaling.  File-consuming commands take --system and --config paths and
write their artifacts under --out; --seed overrides the config's seed where a
random draw is involved.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .bench import bench_scaling, write_bench_csv, write_bench_summary
from .io import RunConfig, load_config, load_system, save_config, save_system
from .runner import run_derivative_check, run_optimization, run_propagation
from .study import study
from .synth import generate_synthetic


def _add_common(parser, *, system_required: bool = True) -> None:
    parser.add_argument("--system", required=system_required, help="system JSON file")
    parser.add_argument("--config", help="run-config JSON file (defaults are used if omitted)")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")


def _load(args) -> tuple:
    system_file = load_system(args.system)
    config = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config = RunConfig.from_dict({**config.to_dict(), "seed": args.seed})
    return system_file, config


def _parse_int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qocadjoint",
        description="adjoint-method derivative and optimization workbench for "
        "discrete-time quantum control problems",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-system", help="write a seeded synthetic system file")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name", default=None)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("propagate", help="forward-propagate once and emit series files")
    _add_common(p)
    p.add_argument("--zero-controls", action="store_true", help="use f = 0 instead of a random draw")

    for name in ("grad-check", "hess-check"):
        p = sub.add_parser(name, help=f"{name.split('-')[0]}ient/adjoint vs finite differences"
                           if name == "grad-check" else "adjoint Hessian vs finite differences")
        _add_common(p)

    p = sub.add_parser("run", help="solve one instance with the configured optimizer")
    _add_common(p)

    p = sub.add_parser("study", help="paired Newton/BFGS comparison over seeded trials")
    _add_common(p)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("bench-scaling", help="time derivative passes over a (N, J) grid")
    _add_common(p, system_required=False)
    p.add_argument("--dims", default="4,16", help="comma-separated dimensions")
    p.add_argument(
        "--steps",
        default="4,8,16,32,64,128,256,512,1024",
        help="comma-separated step counts J",
    )
    p.add_argument("--trials", type=int, default=3)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.command == "gen-system":
        system_file = generate_synthetic(args.dim, args.channels, args.seed, name=args.name)
        save_system(system_file, out / "system.json")
        save_config(RunConfig(seed=args.seed), out / "config.json")
        print(f"wrote {out / 'system.json'} (dim={args.dim}, channels={args.channels})")
        return 0

    if args.command == "propagate":
        system_file, config = _load(args)
        summary = run_propagation(
            system_file, config, out, seed=args.seed, zero_controls=args.zero_controls
        )
        print(
            f"propagated {config.num_steps} steps: max norm drift "
            f"{summary['max_norm_drift']:.3e}, target violation {summary['target_violation']:.6f}"
        )
        return 0

    if args.command in ("grad-check", "hess-check"):
        system_file, config = _load(args)
        kind = "gradient" if args.command == "grad-check" else "hessian"
        check = run_derivative_check(kind, system_file, config, out, seed=args.seed)
        status = "PASS" if check.passed else "FAIL"
        print(
            f"{status} {kind}: max relative error {check.max_relative_error:.3e} "
            f"(tolerance {check.tolerance:.1e})"
        )
        return 0 if check.passed else 1

    if args.command == "run":
        system_file, config = _load(args)
        report = run_optimization(system_file, config, out, seed=args.seed)
        print(
            f"{config.optimizer}: {report.iterations} iterations, "
            f"cost {report.final_cost:.6f}, |grad| {report.final_grad_norm:.3e}, "
            f"target violation {report.final_target_violation:.3e} "
            f"({report.termination_reason})"
        )
        return 0

    if args.command == "study":
        system_file, config = _load(args)
        summary = study(system_file, config, args.trials, out, workers=args.workers)
        mean = summary["ratio_mean"]
        q05, q95 = summary["ratio_q05"], summary["ratio_q95"]
        print(f"{args.trials} trials (first-order / second-order ratios):")
        for name in ("iterations", "wall_s", "final_cost", "grad_norm", "target_viol"):
            print(
                f"  {name:>12}: mean {mean[name]:.3f} "
                f"(q05 {q05[name]:.3f}, q95 {q95[name]:.3f})"
            )
        return 0

    if args.command == "bench-scaling":
        system_file = load_system(args.system) if args.system else None
        config = load_config(args.config) if args.config else RunConfig()
        records, slopes = bench_scaling(
            _parse_int_list(args.dims),
            _parse_int_list(args.steps),
            args.trials,
            args.seed if args.seed is not None else config.seed,
            dt=config.dt,
            rho=config.rho,
            system_file=system_file,
        )
        write_bench_csv(records, out / "bench.csv")
        write_bench_summary(slopes, out / "bench_summary.json")
        for (dim, algorithm), slope in sorted(slopes.items()):
            print(f"N={dim:>4} {algorithm:>12}: log-log slope {slope:.4f}")
        return 0

    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
