"""Command-line entry point: ``webweaver run|sweep|verify|stats``."""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from . import harness, properties, stats
from .config import PRESETS, ScenarioConfig, evenly_spaced_fractions
from .engine import ConfigError, run_trajectory


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _fraction(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError("must lie in [0, 1]")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="webweaver", description="Agent-based simulator for parallel-chain proof of work.")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_args(sp):
        src = sp.add_mutually_exclusive_group()
        src.add_argument("--scenario", choices=sorted(PRESETS), help="built-in preset")
        src.add_argument("--config", type=Path, help="scenario TOML file")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--trajectories", type=_positive_int, help="trajectories per parameter point")
        sp.add_argument("--jobs", type=_positive_int, default=1, help="worker processes")
        sp.add_argument("--out", type=Path, help="output directory (default $WEBWEAVER_OUT/<name>)")
        sp.add_argument("--adversary-fraction", type=_fraction, help="fraction of censoring miners")
        sp.add_argument("--quick", action="store_true", help="reduced trajectories and block targets")

    run = sub.add_parser("run", help="run one ensemble")
    scenario_args(run)
    run.add_argument("--no-logs", action="store_true", help="skip writing JSON-lines logs")

    sw = sub.add_parser("sweep", help="run the scenario at every sweep point")
    scenario_args(sw)
    sw.add_argument("--points", type=_positive_int, help="evenly spaced adversary fractions in (0, 1)")
    sw.add_argument("--save-logs", action="store_true", help="also write per-trajectory logs")

    ver = sub.add_parser("verify", help="run the built-in property suite")
    ver.add_argument("--quick", action="store_true", help="reduced iteration counts")
    ver.add_argument("--inject-fault", action="store_true",
                     help="drop two predicate clauses to confirm the cut-set check fails")

    st = sub.add_parser("stats", help="recompute estimators from saved logs")
    st.add_argument("logdir", type=Path)
    st.add_argument("--out", type=Path, help="summary CSV path (default <logdir>/summary.csv)")
    st.add_argument("--tau", type=float, action="append", default=[], help="height-function window (repeatable)")
    return p


def load_scenario(args) -> ScenarioConfig:
    if args.config is not None:
        cfg = ScenarioConfig.load(args.config)
    else:
        cfg = ScenarioConfig.preset(args.scenario or "censorship")
    if args.quick:
        cfg = cfg.quick()
    if args.seed is not None:
        cfg = cfg.with_value("run.seed", args.seed)
    if args.trajectories is not None:
        cfg = cfg.with_value("run.trajectories", args.trajectories)
    if args.adversary_fraction is not None:
        cfg = cfg.with_value("adversary_fraction", args.adversary_fraction)
    return cfg


def _out_dir(args, cfg: ScenarioConfig) -> Path:
    return args.out if args.out is not None else harness.default_out_root() / cfg.run["name"]


def _report(res: harness.PointResult) -> None:
    label = harness.param_label(res.point)
    keep = ("interarrival", "liveness_time", "relative_reward", "sharpe_honest", "sharpe_adversary")
    parts = [f"{r['stat']}={r['mean']:.4g}" for r in res.rows if r["stat"] in keep]
    print(f"[{label}] {len(res.logs)} trajectories  " + "  ".join(parts), flush=True)


def cmd_run(args) -> int:
    cfg = load_scenario(args)
    cfg.sweep = {}
    out = _out_dir(args, cfg)
    t0 = time.time()
    results = harness.run_points(cfg, [{}], jobs=args.jobs, progress=_report)
    harness.write_results(cfg, results, out, save_logs=not args.no_logs)
    print(f"wrote {out} in {time.time() - t0:.1f}s")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_scenario(args)
    if args.points is not None:
        cfg.sweep = {"adversary_fraction": evenly_spaced_fractions(args.points)}
    if not cfg.sweep:
        raise ConfigError("scenario has no [sweep] section")
    if args.adversary_fraction is not None:
        cfg.sweep.pop("adversary_fraction", None)
        if not cfg.sweep:
            raise ConfigError("--adversary-fraction fixes the only swept parameter; use run instead")
    out = _out_dir(args, cfg)
    t0 = time.time()
    results = harness.run_points(cfg, cfg.sweep_points(), jobs=args.jobs, progress=_report)
    harness.write_results(cfg, results, out, save_logs=args.save_logs)
    print(f"wrote {out} in {time.time() - t0:.1f}s")
    return 0


def _determinism(quick: bool) -> properties.PropertyResult:
    for name in sorted(PRESETS):
        cfg = ScenarioConfig.preset(name).quick()
        cfg.run["target_blocks"] = 40 if quick else 150
        if int(cfg.run.get("blocks_per_chain", 0)):
            cfg.run["blocks_per_chain"] = 3 if quick else 10
        sim = cfg.sim_config(0)
        a = run_trajectory(sim, 11).dumps()
        b = run_trajectory(cfg.sim_config(0), 11).dumps()
        if a != b:
            return properties.PropertyResult("determinism", False, f"preset {name}", 11)
    return properties.PropertyResult("determinism", True, f"{len(PRESETS)} presets, byte-identical logs")


def _identities(quick: bool) -> properties.PropertyResult:
    cfg = ScenarioConfig.preset("censorship").with_value("adversary_fraction", 0.3)
    cfg.run["target_blocks"] = 60 if quick else 300
    for seed in range(2 if quick else 5):
        problems = properties.check_log_identities(run_trajectory(cfg.sim_config(seed), seed, seed))
        if problems:
            return properties.PropertyResult("normalization identities", False, problems[0], seed)
    return properties.PropertyResult("normalization identities", True, "gamma columns and reward partition exact")


def cmd_verify(args) -> int:
    steps, seeds = (2000, 5) if args.quick else (10_000, 20)
    clauses = properties.FAULTED_CLAUSES if args.inject_fault else properties.CLAUSES
    checks = [
        lambda: properties.check_claim(steps, seeds, clauses),
        lambda: properties.check_simplex(200 if args.quick else 2000),
        lambda: _determinism(args.quick),
        lambda: _identities(args.quick),
    ]
    failed = 0
    for check in checks:
        t0 = time.time()
        res = check()
        status = "PASS" if res.passed else "FAIL"
        seed = f" (seed {res.seed})" if not res.passed and res.seed is not None else ""
        print(f"{status}  {res.name}: {res.detail}{seed}  [{time.time() - t0:.1f}s]", flush=True)
        failed += not res.passed
    return 1 if failed else 0


def cmd_stats(args) -> int:
    logs = harness.load_logs(args.logdir)
    if not logs:
        print(f"no .jsonl logs under {args.logdir}", file=sys.stderr)
        return 2
    groups: dict[str, list] = {}
    for log in logs:
        groups.setdefault(harness.param_label(log.header.get("point", {})), []).append(log)
    rows = []
    for label, group in groups.items():
        rows += harness.ensemble_rows(group, label, args.tau)
    out = args.out if args.out is not None else args.logdir / "summary.csv"
    stats.write_summary_csv(rows, out)
    for r in rows:
        print(f"{r['param']:>24}  {r['stat']:<20} {r['mean']:.6g}  [{r['ci_lo']:.4g}, {r['ci_hi']:.4g}]  n={r['n']}")
    return 0


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "verify": cmd_verify, "stats": cmd_stats}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except harness.TrajectoryFailure as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return 3
