"""Command-line front end.

Subcommands: ``run`` (single evolution), ``sweep`` (refinement study),
``oracle`` (closed-form bar answers), ``verify`` (re-check output files).
Exit codes: 0 ok, 1 usage, 2 invariant violation / failed verification,
3 solver nonconvergence, 4 I/O (lock, parse, missing files).
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import io as fio
from .config import build_problem, load_config
from .driver import check_energy_inequality, evolve
from .errors import (ConfigError, FractureError, InvariantViolationError,
                     NonconvergenceError, OutputLockedError,
                     SnapshotVersionError, TrajectoryFormatError)
from .harness import balance_convergence, refine_study
from .oracle import BarOracle, bar_crack_time, verify_trajectory

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVARIANT = 2
EXIT_NONCONVERGENCE = 3
EXIT_IO = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="fracture-qs",
                     description="quasi-static brittle fracture on a bond lattice")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one evolution")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--resume", default=None,
                     help="checkpoint file to continue from")

    sweep = sub.add_parser("sweep", help="refinement study over nested grids")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--levels", type=int, default=None)
    sweep.add_argument("--out", required=True)

    oracle = sub.add_parser("oracle", help="closed-form answers")
    osub = oracle.add_subparsers(dest="oracle_kind", required=True)
    bar = osub.add_parser("bar", help="uniform bar crack time")
    bar.add_argument("--L", type=float, required=True)
    bar.add_argument("--kappa", type=float, required=True)
    bar.add_argument("--rate", type=float, default=1.0)
    bar.add_argument("--T", type=float, required=True)

    verify = sub.add_parser("verify", help="re-check run outputs")
    verify.add_argument("--traj", required=True)
    verify.add_argument("--ledger", required=True)
    verify.add_argument("--config", required=True)
    return parser


def _cmd_run(args) -> int:
    config = load_config(args.config)
    problem = build_problem(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "checkpoint.json"
    every = int(config.output.get("checkpoint_every", 25))
    counter = {"k": 0}

    def ckpt_writer(snapshot):
        counter["k"] += 1
        if every and counter["k"] % every == 0:
            fio.write_checkpoint(snapshot, ckpt_path)
        ckpt_writer.last = snapshot

    ckpt_writer.last = None

    resume = fio.read_checkpoint(args.resume) if args.resume else None
    with fio.OutputLock(out):
        (out / "config_used.toml").write_text(config.text, encoding="utf-8")
        try:
            result = evolve(problem.mesh, problem.density, problem.load,
                            problem.grid, opts=problem.opts,
                            checkpoint_writer=ckpt_writer, resume=resume)
        except NonconvergenceError as err:
            if ckpt_writer.last is not None:
                fio.write_checkpoint(ckpt_writer.last, ckpt_path)
            print(f"nonconvergence: {err}", file=sys.stderr)
            return EXIT_NONCONVERGENCE
        if ckpt_writer.last is not None:
            fio.write_checkpoint(ckpt_writer.last, ckpt_path)
        fio.write_ledger_csv(result.ledger, out / "ledger.csv")
        fio.write_trajectory(result.records, out / "trajectory.ndjson")

        snap_every = int(config.output.get("snapshot_every", 0))
        if snap_every:
            snap_dir = out / "snapshots"
            snap_dir.mkdir(exist_ok=True)
            for k, (rec, state) in enumerate(zip(result.records, result.states)):
                if k % snap_every:
                    continue
                fields = {"displacement": rec.values}
                if state.damage is not None:
                    fields["damage"] = state.damage
                fio.write_vtk(problem.mesh, fields,
                              snap_dir / f"snap_{k:06d}.vtk")

        report = check_energy_inequality(result.ledger)
        grows = all(set(result.records[i].broken) <= set(result.records[i + 1].broken)
                    for i in range(len(result.records) - 1))
        if not report.passed or not grows:
            print("invariant violation: "
                  + ("energy inequality" if not report.passed else "irreversibility"),
                  file=sys.stderr)
            return EXIT_INVARIANT
    print(f"run complete: {len(result.records)} knots, "
          f"final total {result.ledger.total[-1]!r}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    config = load_config(args.config)
    problem = build_problem(config)
    levels = args.levels if args.levels is not None else int(config.time.get("levels", 2))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with fio.OutputLock(out):
        study = refine_study(problem, levels)
        fio.write_study_csv(study, out / "study.csv")
        fio.write_rates_csv(balance_convergence(study), out / "rates.csv")
        for flag in study.flags:
            print(f"note: {flag}")
    print(f"sweep complete: {levels} levels, "
          f"crack times {study.crack_times()}")
    return EXIT_OK


def _cmd_oracle(args) -> int:
    oracle = BarOracle(length=args.L, kappa=args.kappa, rate=args.rate,
                       horizon=args.T)
    t = bar_crack_time(oracle)
    print("none" if t is None else repr(t))
    return EXIT_OK


def _cmd_verify(args) -> int:
    config = load_config(args.config)
    problem = build_problem(config)
    records = fio.read_trajectory(args.traj)
    rows = fio.read_ledger_csv(args.ledger)
    report = verify_trajectory(records, rows, problem.mesh, problem.density,
                               problem.load, problem.opts)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_INVARIANT


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return int(err.code or 0)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "oracle":
            return _cmd_oracle(args)
        if args.command == "verify":
            return _cmd_verify(args)
        return EXIT_USAGE
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (TrajectoryFormatError, SnapshotVersionError, OutputLockedError,
            OSError) as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_IO
    except NonconvergenceError as err:
        print(f"nonconvergence: {err}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except InvariantViolationError as err:
        print(f"invariant violation: {err}", file=sys.stderr)
        return EXIT_INVARIANT
    except FractureError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
