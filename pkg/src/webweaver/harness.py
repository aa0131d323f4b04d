"""Ensemble execution, sweeps and CSV export."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import stats
from .config import ScenarioConfig
from .engine import InvalidStateError, TrajectoryLog, run_trajectory

TRAJECTORY_COLUMNS = ("param", "trajectory", "seed", "blocks", "discarded", "stalled", "interarrival",
                      "liveness_time", "reward_honest", "reward_adversary", "gamma_honest",
                      "gamma_adversary")


class TrajectoryFailure(RuntimeError):
    def __init__(self, trajectory: int, seed: int, cause: Exception):
        super().__init__(f"trajectory {trajectory} (seed {seed}) failed: {cause}")
        self.trajectory = trajectory
        self.seed = seed


def _run_one(args) -> TrajectoryLog:
    cfg_dict, trajectory, point = args
    scenario = ScenarioConfig.from_dict(cfg_dict)
    seed = int(scenario.run["seed"])
    try:
        sim_cfg = scenario.sim_config(trajectory)
        return run_trajectory(sim_cfg, seed, trajectory,
                              header_extra={"scenario": scenario.to_dict(), "point": point})
    except InvalidStateError as exc:
        raise TrajectoryFailure(trajectory, seed, exc) from exc


def run_ensemble(scenario: ScenarioConfig, jobs: int = 1, point: dict | None = None) -> list[TrajectoryLog]:
    """All trajectories of one scenario; output order follows trajectory index."""
    n = int(scenario.run["trajectories"])
    tasks = [(scenario.to_dict(), t, point or {}) for t in range(n)]
    if jobs <= 1 or n == 1:
        return [_run_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_one, tasks))


# ---------------------------------------------------------------------------
# statistics per ensemble


def _has_roles(log: TrajectoryLog) -> bool:
    roles = set(log.roles.values())
    return "censor" in roles and len(roles) > 1


def trajectory_row(log: TrajectoryLog, param) -> dict:
    row = {"param": param, "trajectory": log.header["trajectory"], "seed": log.header["seed"],
           "blocks": sum(len(b) - 1 for b in stats.main_branches(log)),
           "discarded": log.header.get("discarded", 0), "stalled": log.header.get("stalled", False),
           "interarrival": stats.safe(lambda: stats.interarrival(log)[0]),
           "liveness_time": stats.safe(lambda: stats.liveness_time(log).value)}
    if _has_roles(log):
        cf = stats.censorship_fractions(log)
        row.update(reward_honest=stats.rewards(log, stats.honest_set)[0],
                   reward_adversary=stats.rewards(log, "censor")[0],
                   gamma_honest=cf.gamma_honest, gamma_adversary=cf.gamma_adversary)
    else:
        row.update(reward_honest=math.nan, reward_adversary=math.nan,
                   gamma_honest=math.nan, gamma_adversary=math.nan)
    return row


def _ratio_summary(hon: np.ndarray, adv: np.ndarray, seed: int = 0) -> stats.EnsembleSummary:
    def rel(idx):
        return stats.safe(stats.relative_reward, hon[idx].mean(), adv[idx].mean())

    mean = rel(np.arange(hon.size))
    if hon.size < 2:
        return stats.EnsembleSummary(mean, math.nan, int(hon.size), mean, mean)
    lo, hi = stats.bootstrap_ci(hon.size, rel, seed=seed)
    per = [stats.safe(stats.relative_reward, h, a) for h, a in zip(hon, adv)]
    std = float(np.nanstd(per, ddof=1)) if np.isfinite(per).sum() > 1 else math.nan
    return stats.EnsembleSummary(mean, std, int(hon.size), min(lo, mean), max(hi, mean))


def _sharpe_summary(x: np.ndarray, seed: int = 0) -> stats.EnsembleSummary:
    value = stats.safe(stats.sharpe, x)
    if x.size < 3 or not math.isfinite(value):
        return stats.EnsembleSummary(value, math.nan, int(x.size), value, value)
    lo, hi = stats.bootstrap_ci(x.size, lambda i: stats.safe(stats.sharpe, x[i]), seed=seed)
    return stats.EnsembleSummary(value, math.nan, int(x.size), min(lo, value), max(hi, value))


def ensemble_rows(logs: list[TrajectoryLog], param, taus=()) -> list[dict]:
    """Summary rows (``stats.CSV_COLUMNS``) for one parameter point."""
    per = [trajectory_row(log, param) for log in logs]
    rows = []

    def add(name, values):
        x = np.asarray(values, float)
        x = x[np.isfinite(x)]
        if x.size:
            rows.append(stats.summarize(x).row(param, name))

    add("interarrival", [r["interarrival"] for r in per])
    add("liveness_time", [r["liveness_time"] for r in per])
    add("discarded", [r["discarded"] for r in per])
    for tau in taus:
        add(f"H(tau={tau:g})", [stats.height_function(log, tau) for log in logs])
    if all(_has_roles(log) for log in logs):
        hon = np.array([r["reward_honest"] for r in per])
        adv = np.array([r["reward_adversary"] for r in per])
        add("reward_honest", hon)
        add("reward_adversary", adv)
        add("gamma_honest", [r["gamma_honest"] for r in per])
        add("gamma_adversary", [r["gamma_adversary"] for r in per])
        rows.append(_ratio_summary(hon, adv).row(param, "relative_reward"))
        rows.append(_sharpe_summary(hon).row(param, "sharpe_honest"))
        rows.append(_sharpe_summary(adv).row(param, "sharpe_adversary"))
    return rows


# ---------------------------------------------------------------------------
# output


def default_out_root() -> Path:
    return Path(os.environ.get("WEBWEAVER_OUT", "webweaver_out"))


def param_label(point: dict) -> str:
    if not point:
        return "-"
    return ";".join(f"{k}={v}" for k, v in point.items())


def write_logs(logs: list[TrajectoryLog], directory: Path, prefix: str = "") -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for log in logs:
        log.write(directory / f"{prefix}traj_{log.header['trajectory']:04d}.jsonl")


def write_rows(rows: list[dict], path: Path, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)


@dataclass
class PointResult:
    point: dict
    logs: list[TrajectoryLog]
    rows: list[dict] = field(default_factory=list)


def run_points(scenario: ScenarioConfig, points: list[dict], jobs: int = 1, progress=None) -> list[PointResult]:
    taus = [float(t) for t in scenario.run.get("tau", [])]
    out = []
    for point in points:
        cfg = scenario.at_point(point)
        logs = run_ensemble(cfg, jobs, point)
        res = PointResult(point, logs, ensemble_rows(logs, param_label(point), taus))
        out.append(res)
        if progress:
            progress(res)
    return out


def write_results(scenario: ScenarioConfig, results: list[PointResult], out_dir: Path,
                  save_logs: bool = True) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(scenario.to_dict(), indent=2, sort_keys=True) + "\n")
    (out_dir / "config.toml").write_text(scenario.to_toml())
    rows = [r for res in results for r in res.rows]
    stats.write_summary_csv(rows, out_dir / "summary.csv")
    per = [trajectory_row(log, param_label(res.point)) for res in results for log in res.logs]
    write_rows(per, out_dir / "trajectories.csv", TRAJECTORY_COLUMNS)
    if save_logs:
        multi = len(results) > 1
        for i, res in enumerate(results):
            write_logs(res.logs, out_dir / "logs", prefix=f"p{i:02d}_" if multi else "")
    write_figure_csv(scenario, results, out_dir)


def _stat(rows: list[dict], name: str, key: str = "mean") -> float:
    for r in rows:
        if r["stat"] == name:
            return r[key]
    return math.nan


def write_figure_csv(scenario: ScenarioConfig, results: list[PointResult], out_dir: Path) -> Path | None:
    """Plot-ready CSV for the preset's figure, if the sweep matches one."""
    keys = set(scenario.sweep)
    if keys == {"base.n"}:
        rows = [{"n": res.point["base.n"], "interarrival_mean": _stat(res.rows, "interarrival"),
                 "interarrival_std": _stat(res.rows, "interarrival", "std")} for res in results]
        cols, name = ("n", "interarrival_mean", "interarrival_std"), "fig_interarrival.csv"
    elif keys == {"network.m", "routing.max_connections"}:
        rows = []
        for res in results:
            nets = [log.header["config"]["network"] for log in res.logs]
            degrees = [2 * len(net["edges"]) / net["n"] for net in nets]
            rows.append({"m": res.point["network.m"], "mean_degree": float(np.mean(degrees)),
                         "max_connections": res.point["routing.max_connections"],
                         "liveness_mean": _stat(res.rows, "liveness_time"),
                         "ci_lo": _stat(res.rows, "liveness_time", "ci_lo"),
                         "ci_hi": _stat(res.rows, "liveness_time", "ci_hi")})
        cols, name = ("m", "mean_degree", "max_connections", "liveness_mean", "ci_lo", "ci_hi"), "fig_liveness.csv"
    elif keys == {"network.p"}:
        rows = []
        taus = [float(t) for t in scenario.run.get("tau", [])]
        for res in results:
            hs = stats.height_function(res.logs, np.asarray(taus)) if taus else []
            rows += [{"p": res.point["network.p"], "tau": t, "H": float(h)} for t, h in zip(taus, hs)]
        cols, name = ("p", "tau", "H"), "fig_height.csv"
    elif keys == {"adversary_fraction"}:
        rows = [{"f": res.point["adversary_fraction"],
                 "relative_reward": _stat(res.rows, "relative_reward"),
                 "ci_lo": _stat(res.rows, "relative_reward", "ci_lo"),
                 "ci_hi": _stat(res.rows, "relative_reward", "ci_hi"),
                 "sharpe_honest": _stat(res.rows, "sharpe_honest"),
                 "sharpe_adversary": _stat(res.rows, "sharpe_adversary")} for res in results]
        cols, name = ("f", "relative_reward", "ci_lo", "ci_hi", "sharpe_honest", "sharpe_adversary"), \
            "fig_censorship.csv"
    else:
        return None
    path = out_dir / name
    write_rows(rows, path, cols)
    return path


def load_logs(directory: Path) -> list[TrajectoryLog]:
    paths = sorted(Path(directory).rglob("*.jsonl"))
    return [TrajectoryLog.read(p) for p in paths]
