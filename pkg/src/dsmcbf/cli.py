"""Command-line front end: ``dsmcbf {simulate,verify-thresholds,compare,selftest}``.

Exit codes: 0 success, 2 configuration error, 3 safety-contract violation
(including unsound thresholds and failed self-tests), 4 solver failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import BACKEND
from .config import (VerifyGrid, parse_config, parse_verify_grid, read_config_text,
                     serialize_config)
from .errors import ConfigurationError, SafetyContractViolation, SolverFailure
from .lyapunov import gamma_i, gamma_star_oracle
from .sim import CONTROLLERS, ScenarioConfig, TrajectoryLog, run_scenario, settling_time

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONTRACT = 3
EXIT_SOLVER = 4

CSV_HEADER = "t,x,theta,xdot,thetadot,v,u,rho,dmin,status"



def fmt17(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(tlog: TrajectoryLog, path: Path) -> None:
    """One row per logged sample; floats at 17 significant digits."""
    dmin = tlog.dmin
    rows = [CSV_HEADER]
    for k in range(len(tlog.t)):
        s = tlog.x[k]
        vals = (tlog.t[k], s[0], s[1], s[2], s[3], tlog.v[k], tlog.u[k], tlog.rho[k], dmin[k])
        rows.append(",".join(fmt17(v) for v in vals) + "," + tlog.status[k])
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return _jsonable(x.item())
    return x


def run_summary(cfg: ScenarioConfig, tlog: TrajectoryLog) -> dict:
    u = tlog.u[~np.isnan(tlog.u)]
    dmin = tlog.dmin
    return {
        "records": len(tlog.t),
        "completed": tlog.completed,
        "settling_time": settling_time(tlog, r=cfg.r),
        "max_abs_u": float(np.abs(u).max(initial=0.0)),
        "min_margin": float(np.nanmin(dmin)) if np.isfinite(dmin).any() else None,
        "violations": tlog.violations(cfg.constraints, cfg.params.L),
        "events": [{k: v for k, v in ev.items()} for ev in tlog.events],
    }


def _load(args) -> tuple[ScenarioConfig, str, str]:
    text, source = read_config_text(args.config)
    cfg = parse_config(text, source)
    over = {}
    if getattr(args, "dt", None) is not None:
        over["dt"] = args.dt
    if getattr(args, "horizon", None) is not None:
        over["horizon"] = args.horizon
    if over:
        cfg = cfg.with_(**over).validate()
    return cfg, text, source


def _controllers(choice: str | None) -> tuple[str, ...]:
    return CONTROLLERS if choice in (None, "all") else (choice,)


def _run_many(cfg, controllers, out: Path | None):
    """Run controllers in order; returns (logs, contract violation or None)."""
    logs = {}
    for name in controllers:
        try:
            logs[name] = run_scenario(cfg.with_(controller=name))
        except SafetyContractViolation as exc:
            partial = exc.diagnostics.pop("log", None)
            if partial is not None:
                logs[name] = partial
                if out is not None:
                    write_csv(partial, out / f"{name}.csv")
            return logs, exc
        if out is not None:
            write_csv(logs[name], out / f"{name}.csv")
    return logs, None


def cmd_simulate(args) -> int:
    cfg, _, source = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    controllers = _controllers(args.controller)
    manifest = {
        "config_path": source,
        "out_dir": str(out),
        "seed": args.seed,
        "controllers": list(controllers),
        "backend": BACKEND,
        "version": __version__,
        "config_text": serialize_config(cfg),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    logs, violation = _run_many(cfg, controllers, out)
    summary = {"scenario": cfg.name, "controllers": {}}
    for name, tlog in logs.items():
        summary["controllers"][name] = run_summary(cfg, tlog)
    if violation is not None:
        summary["contract_violation"] = {"message": str(violation),
                                         "diagnostics": violation.diagnostics}
    (out / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2) + "\n",
                                      encoding="utf-8")
    for name, s in summary["controllers"].items():
        ev = ", ".join(f"{e['kind']}@{e['t']:.3f}s" for e in s["events"]) or "none"
        print(f"{name:8s} records={s['records']:6d} settle={s['settling_time']:.3f} s "
              f"max|u|={s['max_abs_u']:.4f} events={ev}")
    if violation is not None:
        print(f"safety contract violated: {violation}", file=sys.stderr)
        return EXIT_CONTRACT
    return EXIT_OK


def verify_thresholds(cfg: ScenarioConfig, grid: VerifyGrid) -> list[dict]:
    """Closed-form threshold vs brute-force infimum for every constraint and reference."""
    rows = []
    for c in sorted(cfg.constraints, key=lambda c: c.kind.index):
        for v in grid.references():
            closed = gamma_i(float(v), c, cfg.params, cfg.pi_gains, cfg.angle_form)
            oracle = gamma_star_oracle(float(v), c, cfg.params, cfg.pi_gains, grid.resolution)
            excess = closed - oracle
            ok = excess <= grid.tol * abs(closed)
            rows.append({"index": c.kind.index, "kind": c.kind.value, "v": float(v),
                         "gamma": closed, "oracle": oracle, "excess": excess, "ok": ok})
    return rows


def cmd_verify_thresholds(args) -> int:
    cfg, text, source = _load(args)
    grid = parse_verify_grid(text, source)
    over = {k: getattr(args, k) for k in ("resolution", "tol") if getattr(args, k) is not None}
    if over:
        grid = VerifyGrid(**{**grid.__dict__, **over})
    if not cfg.constraints:
        print("no constraints")
        return EXIT_OK
    rows = verify_thresholds(cfg, grid)
    print(f"{'i':>2} {'constraint':15s} {'v':>8s} {'Gamma':>12s} {'oracle':>12s}  status")
    for r in rows:
        print(f"{r['index']:>2} {r['kind']:15s} {r['v']:8.4f} {r['gamma']:12.6g} "
              f"{r['oracle']:12.6g}  {'ok' if r['ok'] else 'VIOLATION'}")
    worst = max(rows, key=lambda r: r["excess"] / max(abs(r["gamma"]), 1e-300))
    print(f"max excess over oracle: {worst['excess']:.3e} J "
          f"(constraint {worst['index']}, v={worst['v']:.4f}; tolerance {grid.tol:.1%} of Gamma)")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        lines = ["index,kind,v,gamma,oracle,ok"]
        lines += [f"{r['index']},{r['kind']},{fmt17(r['v'])},{fmt17(r['gamma'])},"
                  f"{fmt17(r['oracle'])},{int(r['ok'])}" for r in rows]
        (out / "thresholds.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK if all(r["ok"] for r in rows) else EXIT_CONTRACT


def compare_table(cfg: ScenarioConfig, logs: dict) -> list[dict]:
    rows = []
    for name in CONTROLLERS:
        if name not in logs:
            continue
        tlog = logs[name]
        s = run_summary(cfg, tlog)
        inf_t = tlog.event_time("infeasible")
        rows.append({"controller": name, "settle": s["settling_time"], "max_abs_u": s["max_abs_u"],
                     "violations": s["violations"],
                     "infeasible_t": "-" if inf_t is None else f"{inf_t:.3f}"})
    return rows


def cmd_compare(args) -> int:
    cfg, _, _ = _load(args)
    logs, violation = _run_many(cfg, CONTROLLERS, None)
    rows = compare_table(cfg, logs)
    idx = [c.kind.index for c in sorted(cfg.constraints, key=lambda c: c.kind.index)]
    head = ["controller", "settle_s", "max_abs_u"] + [f"viol_{i}" for i in idx] + ["infeasible_t"]
    lines = [",".join(head)]
    for r in rows:
        lines.append(",".join([r["controller"], fmt17(r["settle"]), fmt17(r["max_abs_u"])]
                              + [fmt17(r["violations"][i]) for i in idx] + [r["infeasible_t"]]))
    print(f"scenario {cfg.name}")
    print(f"{'controller':10s} {'settle [s]':>10s} {'max|u|':>8s} "
          + " ".join(f"{'viol' + str(i):>9s}" for i in idx) + f" {'infeasible':>10s}")
    for r in rows:
        print(f"{r['controller']:10s} {r['settle']:10.3f} {r['max_abs_u']:8.4f} "
              + " ".join(f"{r['violations'][i]:9.2e}" for i in idx) + f" {r['infeasible_t']:>10s}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "compare.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if violation is not None:
        print(f"safety contract violated: {violation}", file=sys.stderr)
        return EXIT_CONTRACT
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .checks import run_selftest

    cfg, _, _ = _load(args)
    results = run_selftest(cfg, args.seed, quick=not args.full)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_CONTRACT


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dsmcbf", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, default_config=None):
        p.add_argument("--config", required=default_config is None, default=default_config,
                       help="config file, run manifest, or bundled name (scenario_a, scenario_b)")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--dt", type=float, default=None, help="override the step size (s)")
        p.add_argument("--horizon", type=float, default=None, help="override the horizon (s)")
        p.add_argument("--seed", type=int, default=0, help="seed for randomized sweeps")

    p = sub.add_parser("simulate", help="simulate controllers and write CSV logs")
    common(p)
    p.add_argument("--controller", choices=CONTROLLERS + ("all",), default="all")
    p.set_defaults(func=cmd_simulate, out_default="out")

    p = sub.add_parser("verify-thresholds", help="check closed-form thresholds against the oracle")
    common(p)
    p.add_argument("--resolution", type=int, default=None, help="oracle grid points per axis")
    p.add_argument("--tol", type=float, default=None, help="relative tolerance on Gamma")
    p.set_defaults(func=cmd_verify_thresholds)

    p = sub.add_parser("compare", help="run all controllers and print a comparison table")
    common(p)
    p.add_argument("--controller", choices=CONTROLLERS + ("all",), default="all",
                   help="accepted for symmetry; compare always runs every controller")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("selftest", help="run the randomized property suite")
    common(p, default_config="scenario_b")
    p.add_argument("--full", action="store_true", help="ten times the default sample counts")
    p.set_defaults(func=cmd_selftest)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.out is None and getattr(args, "out_default", None):
        args.out = args.out_default
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SafetyContractViolation as exc:
        print(f"safety contract violated: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
