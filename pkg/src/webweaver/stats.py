"""Estimators computed after the fact from trajectory logs.

Everything here is a pure function of :class:`~webweaver.engine.TrajectoryLog`
objects. Post-hoc "main branch" means the final main branch of the observer
miner (miner 0 unless the log header says otherwise), reconstructed with the
same fork-choice rule the engine uses.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .engine import TrajectoryLog

CSV_COLUMNS = ("param", "stat", "mean", "std", "ci_lo", "ci_hi", "n")


class UndefinedStatistic(ValueError):
    """The statistic has no defined value on the given data."""


def _as_list(logs) -> list[TrajectoryLog]:
    if isinstance(logs, TrajectoryLog):
        return [logs]
    logs = list(logs)
    if not logs:
        raise ValueError("empty ensemble")
    return logs


def _cached(log: TrajectoryLog, key: str, fn):
    cache = log.__dict__.setdefault("_stats_cache", {})
    if key not in cache:
        cache[key] = fn()
    return cache[key]


def main_branches(log: TrajectoryLog, observer: int | None = None) -> list[list]:
    """Per chain, the observer's final main branch (genesis first)."""
    if observer is None:
        observer = log.header.get("config", {}).get("observer", 0)

    def build():
        idx = log.block_index()
        arrival = {b: 0.0 for b in range(log.n_chains)}
        for bid, m, t in log.deliveries:
            if m == observer:
                arrival[bid] = t
        best: dict[int, tuple] = {}
        for bid, t in arrival.items():
            b = idx[bid]
            key = (-b.height, t, b.id)
            if b.chain not in best or key < best[b.chain]:
                best[b.chain] = key
        out = []
        for c in range(log.n_chains):
            cur = idx[best[c][2]]
            path = [cur]
            while cur.parent is not None:
                cur = idx[cur.parent]
                path.append(cur)
            out.append(path[::-1])
        return out

    return _cached(log, f"main:{observer}", build)


# ---------------------------------------------------------------------------
# height function


def _mean_height_steps(log: TrajectoryLog) -> tuple[np.ndarray, np.ndarray]:
    """Jump times and cumulative values of the (miner, chain)-averaged local height."""

    def build():
        idx = log.block_index()
        cur: dict[tuple[int, int], int] = {}
        times, incs = [], []
        for bid, m, t in log.deliveries:
            b = idx[bid]
            key = (m, b.chain)
            h0 = cur.get(key, 0)
            if b.height > h0:
                cur[key] = b.height
                times.append(t)
                incs.append(b.height - h0)
        norm = log.n_miners * log.n_chains
        return np.asarray(times, float), np.cumsum(np.asarray(incs, float)) / norm

    return _cached(log, "hsteps", build)


def mean_height_at(log: TrajectoryLog, t) -> np.ndarray:
    """Right-continuous average local height at times ``t`` (0 for ``t < 0``)."""
    times, cum = _mean_height_steps(log)
    t = np.asarray(t, float)
    pos = np.searchsorted(times, t, side="right") - 1
    vals = np.where(pos >= 0, cum[np.clip(pos, 0, None)] if cum.size else 0.0, 0.0)
    return np.where(t < 0, 0.0, vals)


def height_function(logs, tau, horizon: float | None = None, grid: int = 512):
    """Expected local height gain within a window of length ``tau``.

    The time average runs over ``grid`` evenly spaced points on ``[0, T]``
    (``T`` defaults to each log's mining end) and the result is averaged over
    the ensemble. ``tau`` may be a scalar or an array.
    """
    logs = _as_list(logs)
    taus = np.atleast_1d(np.asarray(tau, float))
    if np.any(taus < 0):
        raise ValueError("tau must be non-negative")
    total = np.zeros(taus.size)
    for log in logs:
        T = horizon if horizon is not None else log.header.get("mining_end", log.end_time)
        if not T > 0:
            raise ValueError("horizon must be positive")
        ts = np.linspace(0.0, T, grid)
        now = mean_height_at(log, ts)
        for i, tv in enumerate(taus):
            total[i] += np.mean(now - mean_height_at(log, ts - tv))
    out = total / len(logs)
    return float(out[0]) if np.ndim(tau) == 0 else out


# ---------------------------------------------------------------------------
# liveness


@dataclass(frozen=True)
class LivenessResult:
    value: float
    n_blocks: int
    n_excluded: int

    @property
    def excluded_fraction(self) -> float:
        total = self.n_blocks + self.n_excluded
        return self.n_excluded / total if total else 0.0


def _receive_spread(log: TrajectoryLog) -> dict[int, tuple[int, float, float]]:
    def build():
        spread: dict[int, list] = {}
        for bid, _, t in log.deliveries:
            s = spread.get(bid)
            if s is None:
                spread[bid] = [1, t, t]
            else:
                s[0] += 1
                if t < s[1]:
                    s[1] = t
                if t > s[2]:
                    s[2] = t
        return {k: tuple(v) for k, v in spread.items()}

    return _cached(log, "spread", build)


def liveness_single(log: TrajectoryLog) -> LivenessResult:
    spread = _receive_spread(log)
    n = log.n_miners
    chain_means = []
    used = excluded = 0
    for branch in main_branches(log):
        vals = []
        for b in branch[1:]:
            cnt, lo, hi = spread.get(b.id, (0, 0.0, 0.0))
            if cnt == n:
                vals.append(hi - lo)
            else:
                excluded += 1
        used += len(vals)
        if vals:
            chain_means.append(float(np.mean(vals)))
    if not chain_means:
        raise UndefinedStatistic(
            f"no main-branch block reached all {n} miners ({excluded} excluded)")
    return LivenessResult(float(np.mean(chain_means)), used, excluded)


def liveness_time(logs) -> LivenessResult:
    """Mean over chains of the first-to-last receive spread of main-branch blocks.

    Blocks that did not reach every miner are excluded and counted. For an
    ensemble the per-trajectory values are averaged.
    """
    res = [liveness_single(log) for log in _as_list(logs)]
    return LivenessResult(
        float(np.mean([r.value for r in res])),
        sum(r.n_blocks for r in res),
        sum(r.n_excluded for r in res),
    )


# ---------------------------------------------------------------------------
# rewards and censorship


def _resolve_set(log: TrajectoryLog, miners) -> set[int]:
    if isinstance(miners, str):
        return {m for m, r in log.roles.items() if r == miners}
    if callable(miners):
        return set(miners(log))
    return set(miners)


def honest_set(log: TrajectoryLog) -> set[int]:
    return {m for m, r in log.roles.items() if r != "censor"}


def gamma_matrix(log: TrajectoryLog, h: int) -> tuple[np.ndarray, list[int]]:
    """``gamma[i, a]``: share of main-branch blocks of chain ``a`` at heights 1..h mined by ``i``.

    Returns the matrix and the chains whose main branch is shorter than ``h``
    (their share uses the whole branch).
    """
    g = np.zeros((log.n_miners, log.n_chains))
    partial = []
    for a, branch in enumerate(main_branches(log)):
        top = min(h, len(branch) - 1)
        if top < h:
            partial.append(a)
        if top <= 0:
            continue
        for b in branch[1:top + 1]:
            g[b.miner, a] += 1.0
        g[:, a] /= top
    return g, partial


@dataclass(frozen=True)
class CensorshipFractions:
    gamma_honest: float
    gamma_adversary: float
    partial_chains: tuple[int, ...]


def censorship_fractions(log: TrajectoryLog, honest=None, h: int | None = None) -> CensorshipFractions:
    """Per-capita, chain-averaged main-branch shares of honest and adversarial miners."""
    hon = honest_set(log) if honest is None else _resolve_set(log, honest)
    adv = set(range(log.n_miners)) - hon
    if not hon or not adv:
        raise ValueError("honest set must be a non-empty proper subset of the miners")
    if h is None:
        h = max(len(b) - 1 for b in main_branches(log))
    g, partial = gamma_matrix(log, h)
    s = log.n_chains
    gh = g[sorted(hon)].sum() / (len(hon) * s)
    ga = g[sorted(adv)].sum() / (len(adv) * s)
    return CensorshipFractions(float(gh), float(ga), tuple(partial))


def rewards(logs, miner_set) -> list[float]:
    """Per-trajectory, per-capita count of final main-branch blocks (one coin each)."""
    out = []
    for log in _as_list(logs):
        members = _resolve_set(log, miner_set)
        if not members:
            out.append(0.0)
            continue
        won = sum(1 for branch in main_branches(log) for b in branch[1:] if b.miner in members)
        out.append(won / len(members))
    return out


def relative_reward(r_hon: float, r_adv: float) -> float:
    if r_adv == 0:
        raise UndefinedStatistic("relative reward undefined when adversary reward is 0")
    return (r_hon - r_adv) / r_adv


def sharpe(values) -> float:
    """Mean over sample standard deviation (n - 1 denominator)."""
    x = np.asarray(values, float)
    if x.size < 2:
        raise UndefinedStatistic("Sharpe ratio needs at least two trajectories")
    sd = x.std(ddof=1)
    if sd == 0:
        raise UndefinedStatistic("Sharpe ratio undefined for zero variance")
    return float(x.mean() / sd)


def interarrival_gaps(log: TrajectoryLog, chain: int | None = None) -> np.ndarray:
    branches = main_branches(log)
    chains = range(log.n_chains) if chain is None else [chain]
    gaps = [np.diff([b.created_at for b in branches[c][1:]]) for c in chains]
    return np.concatenate(gaps) if gaps else np.array([])


def interarrival(logs, chain: int | None = None) -> tuple[float, float]:
    """Mean and std of creation-time gaps between consecutive main-branch blocks.

    ``chain=None`` pools every chain.
    """
    gaps = np.concatenate([interarrival_gaps(log, chain) for log in _as_list(logs)])
    if gaps.size == 0:
        raise UndefinedStatistic("need at least two main-branch blocks past genesis")
    return float(gaps.mean()), float(gaps.std())


# ---------------------------------------------------------------------------
# ensemble summaries


def bootstrap_ci(n: int, statistic: Callable[[np.ndarray], float], n_boot: int = 2000,
                 level: float = 0.95, seed: int = 0) -> tuple[float, float]:
    """Percentile interval of ``statistic(indices)`` over resampled trajectory indices."""
    rng = np.random.default_rng(seed)
    draws = np.array([statistic(rng.integers(n, size=n)) for _ in range(n_boot)])
    lo, hi = np.quantile(draws, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


@dataclass(frozen=True)
class EnsembleSummary:
    mean: float
    std: float
    n: int
    ci_lo: float
    ci_hi: float

    def row(self, param, stat: str) -> dict:
        return {"param": param, "stat": stat, "mean": self.mean, "std": self.std,
                "ci_lo": self.ci_lo, "ci_hi": self.ci_hi, "n": self.n}


def summarize(values: Iterable[float], seed: int = 0, n_boot: int = 2000) -> EnsembleSummary:
    x = np.asarray(list(values), float)
    if x.size == 0:
        raise ValueError("cannot summarize an empty sample")
    mean = float(x.mean())
    std = float(x.std(ddof=1)) if x.size > 1 else 0.0
    if x.size == 1:
        return EnsembleSummary(mean, std, 1, mean, mean)
    lo, hi = bootstrap_ci(x.size, lambda i: x[i].mean(), n_boot=n_boot, seed=seed)
    return EnsembleSummary(mean, std, int(x.size), min(lo, mean), max(hi, mean))


def write_summary_csv(rows: Iterable[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in CSV_COLUMNS})


def safe(fn, *args, **kwargs) -> float:
    """Evaluate a statistic, mapping undefined values to NaN."""
    try:
        return fn(*args, **kwargs)
    except UndefinedStatistic:
        return math.nan
