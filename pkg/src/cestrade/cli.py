"""Command-line front end.

Exit codes: 0 success, 1 validation failure, 2 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .exceptions import CesTradeError, ConvergenceError, InfeasibleError, ScenarioError
from .experiments import DEFAULT_ETA, DEFAULT_Y0, alpha_grid, robustness_rows, sweep_alpha
from .participation import (
    WORKERS_ENV,
    build_cost_table,
    expectation_metrics,
    participant_baseline,
    run_dynamics,
)
from .scenario import Scenario, load_scenario
from .stackelberg import StackelbergSolution, solve_stackelberg
from .storage import check_feasible, charge_trajectory

log = logging.getLogger("cestrade")

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".12g")
    if v is None:
        return ""
    return str(v)


def write_csv(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        if not rows:
            return
        writer = csv.writer(fh, lineterminator="\n")
        header = list(rows[0])
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(row.get(k)) for k in header])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _metadata(scenario: Scenario) -> dict:
    return {
        "scenario": scenario.name,
        "config_hash": scenario.meta.get("config_hash"),
        "cestrade": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
    }


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.replace(" ", "").split(",") if v]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.replace(" ", "").split(",") if v]


# --- commands -------------------------------------------------------------------


def cmd_validate(args) -> int:
    try:
        scenario = load_scenario(args.config)
    except ScenarioError as exc:
        for problem in str(exc).split("; "):
            print(f"ERROR: {problem}")
        return EXIT_INVALID
    bat = scenario.battery
    K = scenario.K
    print(f"scenario {scenario.name}: K={K}, I={scenario.I} participants, N={scenario.N} non-participants")
    print(f"allowed starts: {[list(s) for s in scenario.allowed_starts]}")
    idle = charge_trajectory(bat, np.zeros(K), np.zeros(K))
    report = check_feasible(bat, idle)
    print(f"idle battery: {report.describe()}")
    if not report.continuity_ok:
        need = (bat.q0 - idle[-1]) / bat.beta_plus
        print(f"  operator must charge at least {need:.6g} kWh net to offset leakage")
        if idle[-1] + bat.beta_plus * need > bat.capacity:
            print("ERROR: leakage compensation exceeds capacity; continuity unreachable")
            return EXIT_INVALID
    print("OK")
    return EXIT_OK


def solution_rows(scenario: Scenario, sol: StackelbergSolution) -> list[dict]:
    rows = []
    for t in range(scenario.K):
        row = {
            "slot": t + 1,
            "a": sol.strategy.a[t],
            "l_q": sol.strategy.l_q[t],
            "q": sol.trajectory.q[t],
            "p": sol.price[t],
            "L": sol.total_load[t],
            "active": int(sum(1 for h in sol.h if h <= t + 1)),
        }
        for n, uid in enumerate(sol.participant_ids):
            row[f"x_{uid}"] = sol.x[n, t]
        for n, uid in enumerate(sol.participant_ids):
            row[f"l_{uid}"] = sol.loads[n, t]
        rows.append(row)
    return rows


def cmd_solve(args) -> int:
    try:
        scenario = load_scenario(args.config)
        h = _int_list(args.h)
        if len(h) == 1 and scenario.I > 1:
            h = h * scenario.I
        h = scenario.validate_profile(h)
    except (ScenarioError, ValueError) as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        sol = solve_stackelberg(scenario, h)
    except (InfeasibleError, ConvergenceError) as exc:
        print(f"SOLVER FAILURE: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    out = Path(args.out)
    write_csv(out / "solution.csv", solution_rows(scenario, sol))
    write_json(
        out / "summary.json",
        {
            "meta": _metadata(scenario),
            "h": list(h),
            "revenue": sol.revenue,
            "leader_objective": sol.objective,
            "daily_costs": dict(zip(sol.participant_ids, sol.daily_costs)),
            "projected": sol.projected,
            "battery": {"feasible": sol.feasibility.feasible, "detail": sol.feasibility.describe()},
        },
    )
    print(f"revenue R = {sol.revenue:.6f}; battery {sol.feasibility.describe()}; wrote {out}")
    return EXIT_OK


def _alpha_arg(text: str | None):
    if text is None:
        return None
    vals = _float_list(text)
    return vals[0] if len(vals) == 1 else vals


def cmd_participation(args) -> int:
    try:
        scenario = load_scenario(args.config)
        alpha = _alpha_arg(args.alpha)
        if args.model == "pt" and alpha is None:
            raise ScenarioError("--alpha is required with --model pt")
        y0 = _float_list(args.y0) if args.y0 else None
    except (ScenarioError, ValueError) as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        table = build_cost_table(scenario, workers=args.workers)
        y, trace = run_dynamics(
            table, args.model, alpha, eta=args.eta, y0=y0, max_iter=args.max_iter, eps=args.eps
        )
    except CesTradeError as exc:
        print(f"SOLVER FAILURE: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        return EXIT_INVALID
    metrics = expectation_metrics(y, table, participant_baseline(scenario))
    out = Path(args.out)
    rows = []
    for n, uid in enumerate(table.participant_ids):
        row = {"user": uid}
        row.update({f"h={h}": p for h, p in zip(table.starts[n], y[n])})
        rows.append(row)
    write_csv(out / "probabilities.csv", rows)
    trace_rows = []
    for i, (yi, dev) in enumerate(zip(trace.iterates, trace.deviations)):
        row = {"iteration": i, "deviation": dev}
        for n, uid in enumerate(table.participant_ids):
            row.update({f"y_{uid}_h={h}": p for h, p in zip(table.starts[n], yi[n])})
        trace_rows.append(row)
    write_csv(out / "trace.csv", trace_rows)
    write_json(
        out / "metrics.json",
        {
            "meta": _metadata(scenario),
            "model": args.model,
            "alpha": alpha,
            "eta": args.eta,
            "converged_at": trace.converged_at,
            "epsilon": trace.epsilon_achieved,
            **metrics.to_dict(),
        },
    )
    status = "converged" if trace.converged_at is not None else "not converged"
    print(f"{status}: epsilon={trace.epsilon_achieved:.3g}; W={metrics.expected_revenue:.6f}; wrote {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    try:
        scenario = load_scenario(args.config)
        grid = alpha_grid(args.grid)
        y0 = _float_list(args.y0) if args.y0 else list(DEFAULT_Y0)
        if not grid or any(not 0 < a <= 1 for a in grid):
            raise ScenarioError(f"alpha grid {grid} must be nonempty with values in (0, 1]")
    except (ScenarioError, ValueError) as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        result = sweep_alpha(
            scenario, grid, eta=args.eta, y0=y0, eps=args.eps, max_iter=args.max_iter, workers=args.workers
        )
    except CesTradeError as exc:
        print(f"SOLVER FAILURE: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    out = Path(args.out)
    write_csv(out / "probabilities.csv", result.probability_rows())
    write_csv(out / "sweep.csv", result.metric_rows())
    robust = robustness_rows(result)
    write_json(
        out / "metrics.json",
        {
            "meta": _metadata(scenario),
            "settings": result.settings,
            "participant_ids": list(result.participant_ids),
            "starts": [list(s) for s in result.starts],
            "runs": [r.summary() for r in result.runs],
            "robustness": robust,
        },
    )
    write_report(out)
    print(f"{len(result.runs)} runs written to {out}")
    return EXIT_OK


def render_report(payload: dict) -> str:
    runs = payload["runs"]
    lines = [
        f"# Alpha sweep: {payload['meta']['scenario']}",
        "",
        f"config hash: `{payload['meta']['config_hash']}`",
        "",
        "| model | alpha | mean savings % | expected revenue W | expected PAR | PAR reduction % | epsilon |",
        "|---|---|---|---|---|---|---|",
    ]
    for r in runs:
        alpha = "" if r["alpha"] is None else f"{r['alpha']:g}"
        sav = r["mean_savings_pct"]
        lines.append(
            f"| {r['model']} | {alpha} | {'n/a' if sav is None else f'{sav:.3f}'} | "
            f"{r['expected_revenue']:.6f} | {r['expected_par']:.4f} | {r['par_reduction_pct']:.3f} | "
            f"{r['epsilon']:.2e} |"
        )
    lines += [
        "",
        "## Robustness against expected utility (alpha >= 0.4)",
        "",
        "Tolerances: savings within 2 percentage points (mean and every user), revenue within 2 % relative.",
        "",
        "| alpha | savings diff (pp) | max user diff (pp) | revenue rel. diff | pass |",
        "|---|---|---|---|---|",
    ]
    for row in payload["robustness"]:
        ok = row["savings_ok"] and row["revenue_ok"]
        lines.append(
            f"| {row['alpha']:g} | {row['savings_diff_pp']:.4f} | {row['max_user_savings_diff_pp']:.4f} | "
            f"{row['revenue_rel_diff']:.2e} | {'yes' if ok else 'NO'} |"
        )
    return "\n".join(lines) + "\n"


def write_report(directory: Path) -> Path:
    payload = json.loads((directory / "metrics.json").read_text(encoding="utf-8"))
    path = directory / "report.md"
    path.write_text(render_report(payload), encoding="utf-8")
    return path


def cmd_report(args) -> int:
    directory = Path(args.directory)
    if not (directory / "metrics.json").is_file():
        print(f"ERROR: {directory} has no metrics.json from sweep-alpha", file=sys.stderr)
        return EXIT_INVALID
    path = write_report(directory)
    print(path.read_text(encoding="utf-8"), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cestrade", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="load a scenario and check its invariants")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", help="Stackelberg equilibrium for one start profile")
    p.add_argument("config")
    p.add_argument("--h", required=True, help="comma-separated start slots, one per participant")
    p.add_argument("--out", default="out/solve")
    p.set_defaults(func=cmd_solve)

    def dynamics_args(p):
        p.add_argument("--eta", type=float, default=DEFAULT_ETA)
        p.add_argument("--y0", help="initial probabilities shared by all users, e.g. 0.3,0.3,0.4")
        p.add_argument("--eps", type=float, default=1e-3)
        p.add_argument("--max-iter", type=int, default=5000)
        p.add_argument("--workers", type=int, default=None, help=f"defaults to ${WORKERS_ENV} or 1")

    p = sub.add_parser("participation", help="fictitious play for the start-time game")
    p.add_argument("config")
    p.add_argument("--model", choices=["eut", "pt"], default="eut")
    p.add_argument("--alpha", help="Prelec parameter, one value or one per participant")
    p.add_argument("--out", default="out/participation")
    dynamics_args(p)
    p.set_defaults(func=cmd_participation)

    p = sub.add_parser("sweep-alpha", help="EUT run plus PT runs over an alpha grid")
    p.add_argument("config")
    p.add_argument("--grid", default="0.1:1.0:0.1", help="comma list or start:stop:step")
    p.add_argument("--out", default="out/sweep")
    dynamics_args(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="render report.md from a sweep-alpha output directory")
    p.add_argument("directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
