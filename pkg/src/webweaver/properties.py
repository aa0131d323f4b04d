"""Randomized property checks shared by the test suite and ``webweaver verify``."""

from __future__ import annotations

import random
from dataclasses import dataclass

import numpy as np

from . import agents, stats
from .arboretum import CLAUSES, Arboretum, cut_set, mine_local, validate_and_attach
from .graphs import Graph, gen_complete, gen_line_er, gen_path, gen_petersen

# predicate with the off-by-one and compat clauses removed; used as a negative control
FAULTED_CLAUSES = CLAUSES - {"w_behind", "compat"}


def claim_bases() -> dict[str, Graph]:
    return {
        "K2": gen_complete(2),
        "path4": gen_path(4),
        "petersen": gen_petersen(),
        "line_er8": gen_line_er(8, 0.3, rng=12345),
    }


@dataclass
class WalkViolation:
    step: int
    miner: int
    kind: str
    detail: str


def random_mining_walk(base: Graph, steps: int, seed: int, n_miners: int = 3,
                       p_mine: float = 0.5, clauses=CLAUSES) -> WalkViolation | None:
    """Interleave random local mining and random out-of-order deliveries.

    Returns the first violation of cut-set non-emptiness or of the per-edge
    height window, or None.
    """
    rng = random.Random(seed)
    arbs = [Arboretum(base) for _ in range(n_miners)]
    edges = base.edges()
    pending: list[tuple[int, object]] = []
    next_id = base.n

    def check(step, m):
        arb = arbs[m]
        if not cut_set(arb, clauses):
            return WalkViolation(step, m, "empty cut set", f"heights={arb.heights()}")
        hs = [t.height for t in arb.trees]
        for v, w in edges:
            if abs(hs[v] - hs[w]) > 1:
                return WalkViolation(step, m, "height window", f"edge ({v},{w}) heights {hs[v]},{hs[w]}")
        return None

    for m in range(n_miners):
        bad = check(0, m)
        if bad:
            return bad
    for step in range(1, steps + 1):
        if pending and rng.random() >= p_mine:
            m, blk = pending.pop(rng.randrange(len(pending)))
            validate_and_attach(arbs[m], blk, float(step))
        else:
            m = rng.randrange(n_miners)
            blk = mine_local(arbs[m], rng.randrange(base.n), m, float(step), next_id, clauses)
            if blk is not None:
                next_id += 1
                validate_and_attach(arbs[m], blk, float(step))
                pending.extend((o, blk) for o in range(n_miners) if o != m)
        bad = check(step, m)
        if bad:
            return bad
    return None


@dataclass
class PropertyResult:
    name: str
    passed: bool
    detail: str = ""
    seed: int | None = None


def check_claim(steps: int, seeds: int, clauses=CLAUSES) -> PropertyResult:
    for name, base in claim_bases().items():
        for seed in range(seeds):
            bad = random_mining_walk(base, steps, seed, clauses=clauses)
            if bad is not None:
                return PropertyResult("cut set non-empty", False,
                                      f"{name}: {bad.kind} at step {bad.step} ({bad.detail})", seed)
    return PropertyResult("cut set non-empty", True,
                          f"{len(claim_bases())} bases x {seeds} seeds x {steps} steps")


def check_simplex(trials: int, seed: int = 0) -> PropertyResult:
    rng = np.random.default_rng(seed)
    for t in range(trials):
        n = int(rng.integers(2, 12))
        zeta = rng.dirichlet(np.ones(n))
        grads = [-rng.random(n) / np.maximum(zeta, 1e-6) ** 2 for _ in range(int(rng.integers(1, 9)))]
        for sign in ("ascent", "descent"):
            z = agents.gradient_step(zeta, grads, float(rng.uniform(0, 0.1)), 0.5, sign)
            if abs(z.sum() - 1) > 1e-9 or z.min() < 0:
                return PropertyResult("simplex preserved", False, f"trial {t}: sum={z.sum()}", seed)
        censored = {int(rng.integers(n))}
        z = agents.censor_redistribute(zeta, censored)
        if abs(z.sum() - 1) > 1e-9 or z.min() < 0 or any(z[c] != 0 for c in censored):
            return PropertyResult("simplex preserved", False, f"trial {t}: censor rule", seed)
    return PropertyResult("simplex preserved", True, f"{trials} random updates")


def check_log_identities(log) -> list[str]:
    """Exact normalization and partition identities on one trajectory log."""
    problems = []
    g, _ = stats.gamma_matrix(log, max(len(b) - 1 for b in stats.main_branches(log)))
    for a, branch in enumerate(stats.main_branches(log)):
        if len(branch) > 1 and abs(g[:, a].sum() - 1.0) > 1e-12:
            problems.append(f"gamma column {a} sums to {g[:, a].sum()}")
    total = sum(len(b) - 1 for b in stats.main_branches(log))
    roles = set(log.roles.values())
    parts = 0.0
    for role in roles:
        members = [m for m, r in log.roles.items() if r == role]
        parts += stats.rewards(log, role)[0] * len(members)
    if round(parts) != total or abs(parts - total) > 1e-9:
        problems.append(f"reward partition {parts} != {total}")
    return problems
