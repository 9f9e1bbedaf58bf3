"""Command-line front end: ``hems-lp {run,kkt,repair,oracle}``.

Outputs are CSV/JSON only. Numbers in CSV files use 12 significant digits so
that repeated runs produce byte-identical files.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import kkt, mpc, oracle, repair
from .model import DecisionTrajectory, cost, simultaneous_steps, soc_trajectory
from .problem import build_lp
from .solver import solve

_LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_SOLVER = 2
EXIT_CONFIG = 3
EXIT_KKT = 4
EXIT_INFEASIBLE = 5

EXIT_CODES_HELP = """exit codes:
  0  success
  2  solver failure (LP not optimal at some step)
  3  configuration or input-file error
  4  KKT check failed
  5  input trajectory infeasible

environment:
  HEMS_LOG  logging verbosity: error, info or debug (default error)
"""

TRAJECTORY_COLUMNS = ("hour", "p_grid", "p_ch", "p_dis", "p_c", "soc")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _fmt(v: float) -> str:
    v = float(v)
    return format(0.0 if v == 0 else v, ".12g")


def write_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str | Path, payload) -> None:
    write_atomic(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def trajectory_csv(hours, x: DecisionTrajectory, soc) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRAJECTORY_COLUMNS)
    for row in zip(hours, x.p_grid, x.p_ch, x.p_dis, x.p_c, soc):
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def read_trajectory(path: str | Path) -> tuple[np.ndarray, DecisionTrajectory]:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            needed = set(TRAJECTORY_COLUMNS) - {"soc"}
            if reader.fieldnames is None or not needed <= set(reader.fieldnames):
                raise CliError(f"{path}: header must contain {', '.join(sorted(needed))}",
                               EXIT_CONFIG)
            rows = [{k: float(r[k]) for k in needed} for r in reader]
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_CONFIG) from None
    except (TypeError, ValueError) as exc:
        raise CliError(f"{path}: bad number ({exc})", EXIT_CONFIG) from None
    if not rows:
        raise CliError(f"{path}: no data rows", EXIT_CONFIG)
    col = {k: np.array([r[k] for r in rows]) for k in needed}
    return col["hour"], DecisionTrajectory(col["p_grid"], col["p_ch"], col["p_dis"], col["p_c"])


def _load_config(path, solar_scale=None, net_metering=None) -> mpc.ScenarioConfig:
    try:
        cfg = mpc.ScenarioConfig.from_file(path)
        return cfg.with_overrides(solar_scale, True if net_metering else None)
    except mpc.ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None


def _window_for(cfg: mpc.ScenarioConfig, hours: np.ndarray, n: int):
    """Profile/tariff window of length n starting at the first stored hour."""
    start = float(hours[0]) if len(hours) else cfg.start_hour
    shifted = replace(cfg, start_hour=start)
    try:
        return shifted.forecaster().window(0, n)
    except mpc.ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None


# --- run --------------------------------------------------------------------------


@dataclass(frozen=True)
class OutputBundle:
    directory: Path

    @property
    def trajectory(self) -> Path:
        return self.directory / "trajectory.csv"

    @property
    def plan(self) -> Path:
        return self.directory / "plan.csv"

    @property
    def kkt(self) -> Path:
        return self.directory / "kkt.json"

    @property
    def summary(self) -> Path:
        return self.directory / "summary.json"

    def write(self, log: mpc.RunLog) -> dict:
        cfg = log.config
        applied = log.applied
        write_atomic(self.trajectory, trajectory_csv(log.hours, applied, log.soc[1:]))

        first = log.records[0]
        plan_params = replace(cfg.ess, e0=first.soc_before)
        plan_hours = (first.hour + np.arange(first.plan.n) * cfg.dt) % mpc.HOURS_PER_DAY
        write_atomic(self.plan, trajectory_csv(
            plan_hours, first.plan, soc_trajectory(first.plan, plan_params).e[1:]))

        write_json(self.kkt, {
            "passed": log.kkt_all_passed,
            "steps": [{"step": r.step, "hour": r.hour, **r.kkt.to_dict()} for r in log.records],
        })

        prof, tariff = log.realized_inputs()
        try:
            fixed = repair.repair_until_clean(applied, cfg.ess, prof, tariff,
                                              cfg.simultaneity_tol)
            repair_delta, repair_rounds = fixed.cost_reduction, fixed.rounds
        except (repair.RepairError, repair.InfeasibleTrajectory) as exc:
            _LOGGER.warning("repair of applied controls failed: %s", exc)
            repair_delta, repair_rounds = None, None
        regime = kkt.classify_regime(tariff)
        summary = {
            "objective": first.plan_objective,
            "total_cost": log.total_cost(),
            "simultaneity_steps": log.simultaneity_steps,
            "regime": {"row": regime.row, "behavior": regime.behavior.value},
            "repair_delta": repair_delta,
            "repair_rounds": repair_rounds,
            "kkt_passed": log.kkt_all_passed,
            "steps": len(log.records),
            "soc_final": float(log.soc[-1]),
            "config": cfg.to_dict(),
        }
        write_json(self.summary, summary)
        return summary


def _run_one(scenario: str, out: str, solar_scale, net_metering) -> tuple[str, int, str]:
    """Run one scenario; returns (scenario, exit code, message). Safe for a worker process."""
    try:
        cfg = _load_config(scenario, solar_scale, net_metering)
        bundle = OutputBundle(Path(out))
        try:
            log = mpc.run(cfg)
        except mpc.ConfigError as exc:
            raise CliError(str(exc), EXIT_CONFIG) from None
        except mpc.MpcSolverError as exc:
            Path(out).mkdir(parents=True, exist_ok=True)
            dump = exc.dump(Path(out) / f"failed_step_{exc.step}.npz")
            raise CliError(f"{exc}; LP written to {dump}", EXIT_SOLVER) from None
        summary = bundle.write(log)
    except CliError as exc:
        return scenario, exc.code, str(exc)
    code = EXIT_OK if summary["kkt_passed"] else EXIT_KKT
    msg = (f"{scenario}: cost {summary['total_cost']:.6f}, "
           f"simultaneous steps {summary['simultaneity_steps']}, kkt "
           f"{'pass' if summary['kkt_passed'] else 'FAIL'} -> {out}")
    return scenario, code, msg


def cmd_run(args) -> int:
    src = Path(args.scenario)
    if src.is_dir():
        jobs = [(str(p), str(Path(args.out) / p.stem)) for p in sorted(src.glob("*.json"))]
        if not jobs:
            raise CliError(f"{src}: no *.json scenarios", EXIT_CONFIG)
    else:
        jobs = [(str(src), args.out)]

    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, *zip(*jobs), [args.solar_scale] * len(jobs),
                                    [args.net_metering] * len(jobs)))
    else:
        results = [_run_one(s, o, args.solar_scale, args.net_metering) for s, o in jobs]

    worst = EXIT_OK
    for _, code, msg in results:
        print(msg, file=sys.stdout if code == EXIT_OK else sys.stderr)
        worst = max(worst, code)
    return worst


# --- kkt --------------------------------------------------------------------------


def format_kkt_table(report: kkt.KktReport) -> str:
    lines = [f"{'group':<26}{'residual':>14}{'threshold':>14}  status"]
    for rec in report.to_records():
        lines.append(f"{rec['group']:<26}{rec['residual']:>14.3e}{rec['threshold']:>14.3e}  "
                     f"{'pass' if rec['passed'] else 'FAIL'}")
    return "\n".join(lines)


def cmd_kkt(args) -> int:
    cfg = _load_config(args.scenario)
    hours, x = read_trajectory(args.trajectory)
    prof, tariff = _window_for(cfg, hours, x.n)
    mult, _ = kkt.recover_multipliers(x, cfg.ess, prof, tariff,
                                      energy_weighted_cost=cfg.energy_weighted_cost)
    report = kkt.check_solution(kkt.Solution(x, mult, cost(x, tariff)), cfg.ess, prof, tariff,
                                tol=cfg.kkt_tol,
                                cost_weight=cfg.dt if cfg.energy_weighted_cost else 1.0)
    print(format_kkt_table(report))
    print("KKT", "pass" if report.passed else "FAIL")
    return EXIT_OK if report.passed else EXIT_KKT


# --- repair -----------------------------------------------------------------------


def cmd_repair(args) -> int:
    cfg = _load_config(args.scenario)
    hours, x = read_trajectory(args.trajectory)
    prof, tariff = _window_for(cfg, hours, x.n)
    try:
        result = repair.repair_until_clean(x, cfg.ess, prof, tariff, cfg.simultaneity_tol)
    except repair.InfeasibleTrajectory as exc:
        raise CliError(f"input trajectory infeasible: {exc}", EXIT_INFEASIBLE) from None
    fixed = result.trajectory
    write_atomic(args.out, trajectory_csv(hours, fixed, soc_trajectory(fixed, cfg.ess).e[1:]))
    print(f"rounds {result.rounds}, cost delta {result.cost_reduction:.12g}, "
          f"simultaneous steps before {simultaneous_steps(x, cfg.simultaneity_tol)} "
          f"after {simultaneous_steps(fixed, cfg.simultaneity_tol)}")
    return EXIT_OK


# --- oracle -----------------------------------------------------------------------


def cmd_oracle(args) -> int:
    cfg = _load_config(args.scenario)
    if not 1 <= args.n <= oracle.MAX_HORIZON:
        raise CliError(f"--n must be 1..{oracle.MAX_HORIZON}", EXIT_CONFIG)
    prof, tariff = _window_for(cfg, np.array([cfg.start_hour]), args.n)
    lp, _ = build_lp(cfg.ess, prof, tariff)
    out = solve(lp)
    if not out.optimal:
        raise CliError(f"LP ended {out.status.value}", EXIT_SOLVER)
    grid = oracle.GridSpec(args.step) if args.step else oracle.GridSpec.default_for(args.n)
    try:
        relaxed = oracle.enumerate_grid(cfg.ess, prof, tariff, grid)
        strict = oracle.enumerate_grid(cfg.ess, prof, tariff, grid, enforce_complementarity=True)
    except oracle.OracleInfeasible as exc:
        raise CliError(str(exc), EXIT_INFEASIBLE) from None
    bound = relaxed.error_bound
    regime = kkt.classify_regime(tariff)
    print(f"LP objective                     {out.objective:.9f}")
    print(f"oracle objective                 {relaxed.objective:.9f}")
    print(f"oracle objective, complementary  {strict.objective:.9f}")
    print(f"grid step {grid.step:g} kW, error bound {bound:.6g}, regime row {regime.row} "
          f"({regime.behavior.value})")
    lp_gap = relaxed.objective - out.objective
    comp_gap = strict.objective - relaxed.objective
    print(f"LP gap {lp_gap:.3e} ({'within' if abs(lp_gap) <= bound else 'OUTSIDE'} bound)")
    print(f"complementarity gap {comp_gap:.3e}"
          f" ({'within' if abs(comp_gap) <= bound else 'outside'} bound)")
    return EXIT_OK


# --- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hems-lp",
        description="Battery dispatch LP for a home with solar: simulate, certify, repair.",
        epilog=EXIT_CODES_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        return sub.add_parser(name, help=help_, description=help_, epilog=EXIT_CODES_HELP,
                              formatter_class=argparse.RawDescriptionHelpFormatter)

    p = add("run", "run a receding-horizon scenario and write an output bundle")
    p.add_argument("--scenario", required=True, help="scenario JSON file or a directory of them")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--solar-scale", type=float, default=None, help="override solar_scale")
    p.add_argument("--net-metering", action="store_true", help="allow export to the grid")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers for a scenario directory")
    p.set_defaults(func=cmd_run)

    p = add("kkt", "check a stored plan against the KKT conditions")
    p.add_argument("--trajectory", required=True, help="plan CSV (hour,p_grid,p_ch,p_dis,p_c[,soc])")
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=cmd_kkt)

    p = add("repair", "remove simultaneous charge/discharge from a stored plan")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True, help="repaired plan CSV")
    p.set_defaults(func=cmd_repair)

    p = add("oracle", "compare the LP with brute-force enumeration on a short window")
    p.add_argument("--scenario", required=True)
    p.add_argument("--n", type=int, required=True, help="horizon, 1..3")
    p.add_argument("--step", type=float, default=None, help="grid step in kW")
    p.set_defaults(func=cmd_oracle)
    return parser


def _configure_logging():
    level = os.environ.get("HEMS_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
