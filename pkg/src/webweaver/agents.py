"""Miner policies acting on a hash-power distribution over chains.

A miner's only action is to choose ``zeta``, a point on the probability
simplex over chains. Honest miners follow a smoothed gradient of the utility
``U = sum_a gamma_a / zeta_a``; censors do the same and then move all mass off
the censored chains; static miners never move.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .arboretum import Arboretum

POLICIES = ("honest", "censor", "static")


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class AgentParams:
    eta: float = 0.01
    alpha_decay: float = 0.5
    window_k: int = 8
    gamma_window: int = 100
    update_cadence: int = 1
    epsilon_h: float = 1e-6
    # "descent" applies S - eta * grad as written; "ascent" flips the sign
    gradient_sign: str = "descent"

    def __post_init__(self):
        if self.eta < 0:
            raise PolicyError("eta must be non-negative")
        if not 0.0 < self.alpha_decay < 1.0:
            raise PolicyError("alpha_decay must lie in (0, 1)")
        if self.window_k < 1 or self.gamma_window < 1 or self.update_cadence < 1:
            raise PolicyError("window_k, gamma_window and update_cadence must be >= 1")
        if self.epsilon_h <= 0:
            raise PolicyError("epsilon_h must be positive")
        if self.gradient_sign not in ("ascent", "descent"):
            raise PolicyError(f"unknown gradient_sign {self.gradient_sign!r}")


@dataclass
class AgentState:
    zeta: np.ndarray
    policy: str = "honest"
    censored: frozenset[int] = frozenset()
    window_k: int = 8
    # newest first
    utility_history: deque = field(default_factory=deque)
    grad_history: deque = field(default_factory=deque)
    gamma_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise PolicyError(f"unknown policy {self.policy!r}")
        self.zeta = np.asarray(self.zeta, dtype=float)
        self.utility_history = deque(self.utility_history, maxlen=self.window_k)
        self.grad_history = deque(self.grad_history, maxlen=self.window_k)
        if self.policy == "censor":
            self.zeta = censor_redistribute(self.zeta, self.censored)


def project_simplex(y) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    y = np.asarray(y, dtype=float).tolist()
    return np.array(_project(y))


def _project(y: list[float]) -> list[float]:
    # plain floats: the vectors are short and this runs once per agent tick
    css = 0.0
    theta = 0.0
    for j, v in enumerate(sorted(y, reverse=True), 1):
        css += v
        t = (css - 1.0) / j
        if v > t:
            theta = t
    x = [v - theta if v > theta else 0.0 for v in y]
    # renormalize away rounding drift
    s = sum(x)
    return [v / s for v in x]


def gamma_of(miner: int, arb: Arboretum, alpha: int, window: int) -> float:
    """Share of the trailing ``window`` main-branch blocks of ``alpha`` mined by ``miner``."""
    miners = arb.trees[alpha].branch_miners
    n = min(window, len(miners) - 1)
    if n <= 0:
        return 0.0
    return miners[-n:].count(miner) / n


def gamma_vector(miner: int, arb: Arboretum, window: int, cache: dict | None = None) -> list[float]:
    """``gamma_of`` on every chain; ``cache`` maps chain -> (branch version, value)."""
    out = []
    for a, tree in enumerate(arb.trees):
        if cache is not None:
            hit = cache.get(a)
            if hit is not None and hit[0] == tree.version:
                out.append(hit[1])
                continue
        g = gamma_of(miner, arb, a, window)
        if cache is not None:
            cache[a] = (tree.version, g)
        out.append(g)
    return out


def utility_single(gamma: float, h: float, epsilon_h: float = 1e-6) -> float:
    return gamma / max(h, epsilon_h)


def utility_total(miner: int, arb: Arboretum, zeta, window: int = 100, epsilon_h: float = 1e-6) -> float:
    return sum(
        utility_single(gamma_of(miner, arb, a, window), float(zeta[a]), epsilon_h)
        for a in range(arb.n_chains)
    )


def utility_gradient(gammas, zeta, epsilon_h: float = 1e-6) -> np.ndarray:
    """Partial derivatives of ``sum gamma_a / zeta_a`` with gamma held fixed."""
    h = np.maximum(np.asarray(zeta, dtype=float), epsilon_h)
    return -np.asarray(gammas, dtype=float) / h**2


def ema_reward(history, alpha_decay: float = 0.5) -> float:
    """Exponentially weighted sum of utilities, newest first."""
    if len(history) == 0:
        raise ValueError("ema_reward needs a non-empty history")
    return float(sum(alpha_decay**tau * u for tau, u in enumerate(history)))


def smoothed_gradient(grads, alpha_decay: float = 0.5) -> list[float]:
    """``sum_tau alpha_decay**tau * grads[tau]``, newest first."""
    out = [0.0] * len(grads[0])
    w = 1.0
    for g in grads:
        for a, v in enumerate(g):
            out[a] += w * v
        w *= alpha_decay
    return out


def gradient_step(zeta, grads, eta: float, alpha_decay: float = 0.5, sign: str = "descent") -> np.ndarray:
    """One smoothed gradient update followed by projection onto the simplex.

    ``grads`` are past utility gradients, newest first, weighted by
    ``alpha_decay ** tau``. ``descent`` applies ``zeta - eta * g``.
    """
    z = np.asarray(zeta, dtype=float).tolist()
    if eta == 0 or len(grads) == 0:
        return np.array(z)
    return np.array(_step(z, grads, eta, alpha_decay, sign))


def _step(z: list[float], grads, eta, alpha_decay, sign) -> list[float]:
    g = smoothed_gradient(grads, alpha_decay)
    c = eta if sign == "ascent" else -eta
    return _project([zi + c * gi for zi, gi in zip(z, g)])


def censor_redistribute(zeta, censored) -> np.ndarray:
    """Zero the censored chains and share the removed mass equally among the rest."""
    z = np.asarray(zeta, dtype=float).tolist()
    censored = frozenset(censored)
    if len(censored) >= len(z):
        raise PolicyError("cannot censor every chain")
    return np.array(_redistribute(z, censored))


def _redistribute(z: list[float], censored) -> list[float]:
    if not censored:
        return z
    excess = sum(z[c] for c in censored)
    share = excess / (len(z) - len(censored))
    return [0.0 if a in censored else v + share for a, v in enumerate(z)]


def agent_tick(miner: int, arb: Arboretum, state: AgentState, params: AgentParams) -> AgentState:
    """Observe utilities on the local arboretum and update ``state.zeta`` in place."""
    if state.policy == "static":
        return state
    eps = params.epsilon_h
    gammas = gamma_vector(miner, arb, params.gamma_window, state.gamma_cache)
    z = state.zeta.tolist()
    h = [v if v > eps else eps for v in z]
    state.utility_history.appendleft(sum(g / hv for g, hv in zip(gammas, h)))
    state.grad_history.appendleft([-g / (hv * hv) for g, hv in zip(gammas, h)])
    if params.eta != 0:
        z = _step(z, state.grad_history, params.eta, params.alpha_decay, params.gradient_sign)
    if state.policy == "censor":
        z = _redistribute(z, state.censored)
    state.zeta = np.array(z)
    return state
