"""Discrete-event simulation of block production and propagation.

Blocks are produced by a generative model: chain ``a`` with probability
``Gamma_a`` (the hash-power share on ``a``), miner ``j`` with probability
proportional to ``H_j * zeta_{j,a}``, and exponential waiting times. Each miner
mines against its own arboretum; blocks reach other miners through the
network graph with sampled per-transmission latencies.
"""

from __future__ import annotations

import heapq
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import agents
from .arboretum import Arboretum, AttachStatus, Block, genesis_block, mine_local, validate_and_attach
from .graphs import Graph, is_connected

RATE_MODES = ("per_event", "superposed")
ROUTING_MODES = ("knn", "gossip")


class ConfigError(ValueError):
    """Invalid simulation configuration, detected before a run starts."""


class InvalidStateError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# generative model


@dataclass
class GenerativeParams:
    lam: float
    hash_power: np.ndarray
    zeta: np.ndarray
    rate_mode: str = "per_event"

    def __post_init__(self):
        self.hash_power = np.asarray(self.hash_power, dtype=float)
        self.zeta = np.atleast_2d(np.asarray(self.zeta, dtype=float))
        if not self.lam > 0:
            raise ConfigError("block rate lambda must be positive")
        if self.rate_mode not in RATE_MODES:
            raise ConfigError(f"unknown rate_mode {self.rate_mode!r}")
        if self.zeta.shape[0] != self.hash_power.size:
            raise ConfigError("zeta needs one row per miner")
        if np.any(self.hash_power < 0):
            raise ConfigError("hash power must be non-negative")
        if np.any(self.zeta < 0) or np.any(np.abs(self.zeta.sum(axis=1) - 1.0) > 1e-9):
            raise ConfigError("every zeta row must lie on the simplex")

    @property
    def n_chains(self) -> int:
        return self.zeta.shape[1]

    @property
    def h_total(self) -> float:
        return float(self.hash_power.sum())

    def event_rate(self) -> float:
        """Rate of the exponential wait between block-production events."""
        return self.lam * self.n_chains if self.rate_mode == "superposed" else self.lam


def gamma_vector(params: GenerativeParams) -> np.ndarray:
    if params.h_total <= 0:
        raise InvalidStateError("total hash power is zero")
    return params.hash_power @ params.zeta / params.h_total


def gamma_fraction(params: GenerativeParams, alpha: int) -> float:
    return float(gamma_vector(params)[alpha])


def _categorical(weights: np.ndarray, u: float) -> int:
    cdf = np.cumsum(weights)
    return min(int(np.searchsorted(cdf, u * cdf[-1], side="right")), weights.size - 1)


def sample_block_event(params: GenerativeParams, rng: np.random.Generator) -> tuple[float, int, int]:
    """Draw ``(delta_t, chain, miner)``: chain over Gamma, then miner over the chain's column."""
    delta_t = float(rng.exponential(1.0 / params.event_rate()))
    gamma = gamma_vector(params)
    while True:
        chain = _categorical(gamma, rng.random())
        column = params.hash_power * params.zeta[:, chain]
        if column.sum() > 0:
            break
    miner = _categorical(column, rng.random())
    return delta_t, chain, miner


class EventSampler:
    """Same joint law as :func:`sample_block_event`, factorized miner-first.

    P(chain=a, miner=j) = H_j zeta_{j,a} / H_total, so drawing the miner by
    hash power and then the chain from its own ``zeta`` row avoids rebuilding
    Gamma every time an agent moves.
    """

    def __init__(self, params: GenerativeParams, rng: np.random.Generator):
        if params.h_total <= 0:
            raise InvalidStateError("total hash power is zero")
        self.params = params
        self.rng = rng
        self.rate = params.event_rate()
        self._miner_cdf = np.cumsum(params.hash_power)
        self._row_cdf: dict[int, np.ndarray] = {}

    def invalidate(self, miner: int) -> None:
        self._row_cdf.pop(miner, None)

    def wait(self) -> float:
        return float(self.rng.exponential(1.0 / self.rate))

    def draw(self) -> tuple[int, int]:
        u1, u2 = self.rng.random(2)
        cdf = self._miner_cdf
        miner = min(int(np.searchsorted(cdf, u1 * cdf[-1], side="right")), cdf.size - 1)
        row = self._row_cdf.get(miner)
        if row is None:
            row = self._row_cdf[miner] = np.cumsum(self.params.zeta[miner])
        chain = min(int(np.searchsorted(row, u2 * row[-1], side="right")), row.size - 1)
        return chain, miner


# ---------------------------------------------------------------------------
# network


@dataclass(frozen=True)
class LatencyModel:
    kind: str = "lognormal"
    mu: float = math.log(0.5)
    sigma: float = 1.0
    value: float = 1.0
    table: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("lognormal", "constant", "empirical"):
            raise ConfigError(f"unknown latency kind {self.kind!r}")
        if self.kind == "empirical":
            if not self.table:
                raise ConfigError("empirical latency table is empty")
            if any(not (math.isfinite(x) and x > 0) for x in self.table):
                raise ConfigError("latency table entries must be positive and finite")
        if self.kind == "constant" and not (math.isfinite(self.value) and self.value > 0):
            raise ConfigError("constant latency must be positive")
        if self.kind == "lognormal" and self.sigma < 0:
            raise ConfigError("lognormal sigma must be non-negative")

    @classmethod
    def from_file(cls, path: str | Path) -> "LatencyModel":
        values = [float(x) for x in Path(path).read_text().split()]
        return cls(kind="empirical", table=tuple(values))

    @property
    def min_support(self) -> float:
        if self.kind == "constant":
            return self.value
        if self.kind == "empirical":
            return min(self.table)
        return 0.0

    def to_dict(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "value": self.value}
        if self.kind == "empirical":
            return {"kind": "empirical", "table": list(self.table)}
        return {"kind": "lognormal", "mu": self.mu, "sigma": self.sigma}


def sample_latency(model: LatencyModel, rng: np.random.Generator, size: int | None = None):
    """Positive latency sample(s) in seconds."""
    if model.kind == "constant":
        return model.value if size is None else np.full(size, model.value)
    if model.kind == "empirical":
        table = model.table
        idx = rng.integers(len(table), size=size)
        return table[idx] if size is None else np.asarray(table)[idx]
    out = rng.lognormal(model.mu, model.sigma, size=size)
    return float(out) if size is None else out


@dataclass(frozen=True)
class NetworkModel:
    graph: Graph
    routing: str = "gossip"
    k: int = 8
    fanout: int = 1_000_000
    max_connections: int = 8
    latency: LatencyModel = field(default_factory=LatencyModel)

    def __post_init__(self):
        if self.routing not in ROUTING_MODES:
            raise ConfigError(f"unknown routing mode {self.routing!r}")
        if self.routing == "knn" and not 1 <= self.k <= max(self.graph.max_degree, 1):
            raise ConfigError(f"knn k={self.k} exceeds the maximum degree {self.graph.max_degree}")
        if self.fanout < 1 or self.max_connections < 1:
            raise ConfigError("fanout and max_connections must be >= 1")


class Router:
    """Per-trajectory forwarding state; each node forwards a given block once."""

    def __init__(self, net: NetworkModel, rngs: list[np.random.Generator]):
        self.net = net
        self.rngs = rngs
        self._sent: set[tuple[int, int]] = set()

    def forward(self, node: int, block_id: int, now: float) -> list[tuple[int, float]]:
        key = (node, block_id)
        if key in self._sent:
            return []
        self._sent.add(key)
        return forward(node, self.net, self.rngs[node], now)


def forward(node: int, net: NetworkModel, rng: np.random.Generator, now: float = 0.0) -> list[tuple[int, float]]:
    """Targets and delivery times for one node relaying one block.

    ``max_connections`` bounds how many transmissions are in flight at once:
    targets are served in order by the first free connection slot.
    """
    nbrs = net.graph.adjacency[node]
    if not nbrs:
        return []
    lat = sample_latency(net.latency, rng, size=len(nbrs))
    if net.routing == "knn":
        order = np.argsort(lat, kind="stable")[: net.k]
    else:
        order = rng.permutation(len(nbrs))[: min(net.fanout, len(nbrs))]
    chosen = [nbrs[i] for i in order]
    lat = lat[order]
    if net.max_connections >= len(order):
        return list(zip(chosen, (now + lat).tolist()))
    slots = [(now, s) for s in range(net.max_connections)]
    out = []
    for nbr, d in zip(chosen, lat.tolist()):
        free, s = heapq.heappop(slots)
        t = free + d
        heapq.heappush(slots, (t, s))
        out.append((nbr, t))
    return out


# ---------------------------------------------------------------------------
# configuration and logs


@dataclass(frozen=True)
class AgentTemplate:
    policy: str = "honest"
    fraction: float = 1.0
    params: agents.AgentParams = field(default_factory=agents.AgentParams)


@dataclass(frozen=True)
class SimConfig:
    network: NetworkModel
    base: Graph
    lam: float = 1.0
    rate_mode: str = "per_event"
    hash_power: tuple[float, ...] | None = None
    templates: tuple[AgentTemplate, ...] = (AgentTemplate("static"),)
    censored: frozenset[int] = frozenset({0})
    initial_zeta: tuple[float, ...] | None = None
    target_blocks: int = 2000
    horizon: float = math.inf
    drain: bool = True
    observer: int = 0
    # consecutive discarded attempts after which mining is declared stalled
    stall_limit: int = 200_000

    @property
    def n_miners(self) -> int:
        return self.network.graph.n

    def validate(self) -> None:
        if not is_connected(self.network.graph):
            raise ConfigError("network graph is disconnected")
        if not is_connected(self.base):
            raise ConfigError("base graph is disconnected")
        if self.rate_mode not in RATE_MODES:
            raise ConfigError(f"unknown rate_mode {self.rate_mode!r}")
        if not self.lam > 0:
            raise ConfigError("lambda must be positive")
        if self.hash_power is not None and len(self.hash_power) != self.n_miners:
            raise ConfigError("hash_power needs one entry per miner")
        fr = [t.fraction for t in self.templates]
        if not self.templates or min(fr) < 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError("agent template fractions must lie on the simplex")
        if any(not 0 <= c < self.base.n for c in self.censored):
            raise ConfigError("censored chain out of range")
        if self.initial_zeta is not None and len(self.initial_zeta) != self.base.n:
            raise ConfigError("initial_zeta needs one entry per chain")
        if not 0 <= self.observer < self.n_miners:
            raise ConfigError("observer must be a miner index")
        if self.stall_limit < 1:
            raise ConfigError("stall_limit must be >= 1")
        if self.target_blocks < 1 and not math.isfinite(self.horizon):
            raise ConfigError("need a finite horizon or a positive block target")

    def describe(self) -> dict:
        g, b = self.network.graph, self.base
        return {
            "network": {"n": g.n, "edges": g.edges()},
            "base": {"n": b.n, "edges": b.edges()},
            "routing": {"mode": self.network.routing, "k": self.network.k,
                        "fanout": self.network.fanout, "max_connections": self.network.max_connections},
            "latency": self.network.latency.to_dict(),
            "lam": self.lam,
            "rate_mode": self.rate_mode,
            "hash_power": list(self.hash_power) if self.hash_power is not None else None,
            "templates": [{"policy": t.policy, "fraction": t.fraction, "params": t.params.__dict__}
                          for t in self.templates],
            "censored": sorted(self.censored),
            "initial_zeta": list(self.initial_zeta) if self.initial_zeta is not None else None,
            "target_blocks": self.target_blocks,
            "horizon": self.horizon if math.isfinite(self.horizon) else None,
            "drain": self.drain,
            "observer": self.observer,
            "stall_limit": self.stall_limit,
        }


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), sort_keys=False)


@dataclass
class TrajectoryLog:
    """Append-only record of block creations and per-miner attach times.

    ``deliveries`` holds ``(block_id, miner, received_at)`` where
    ``received_at`` is the moment the block joined that miner's arboretum
    (for the creator, its creation time).
    """

    header: dict
    blocks: list[Block] = field(default_factory=list)
    deliveries: list[tuple[int, int, float]] = field(default_factory=list)
    # interleaving of the two record kinds: True = block, False = delivery
    order: list[bool] = field(default_factory=list)
    end_time: float = 0.0

    @property
    def n_miners(self) -> int:
        return self.header["config"]["network"]["n"]

    @property
    def n_chains(self) -> int:
        return self.header["config"]["base"]["n"]

    @property
    def roles(self) -> dict[int, str]:
        return {int(k): v for k, v in self.header.get("roles", {}).items()}

    def add_block(self, b: Block) -> None:
        self.blocks.append(b)
        self.order.append(True)

    def add_delivery(self, block_id: int, miner: int, t: float) -> None:
        self.deliveries.append((block_id, miner, t))
        self.order.append(False)

    def block_index(self) -> dict[int, Block]:
        idx = {a: genesis_block(a) for a in range(self.n_chains)}
        idx.update((b.id, b) for b in self.blocks)
        return idx

    def iter_lines(self):
        yield _dumps(dict(self.header, end_time=self.end_time))
        bi = di = 0
        for is_block in self.order:
            if is_block:
                yield _dumps(self.blocks[bi].to_record())
                bi += 1
            else:
                bid, m, t = self.deliveries[di]
                yield _dumps({"block_id": bid, "miner": m, "received_at": t})
                di += 1

    def dumps(self) -> str:
        buf = io.StringIO()
        for line in self.iter_lines():
            buf.write(line)
            buf.write("\n")
        return buf.getvalue()

    def write(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for line in self.iter_lines():
                fh.write(line)
                fh.write("\n")

    @classmethod
    def read(cls, path: str | Path) -> "TrajectoryLog":
        with open(path) as fh:
            return cls.loads(fh)

    @classmethod
    def loads(cls, lines) -> "TrajectoryLog":
        if isinstance(lines, str):
            lines = lines.splitlines()
        log = None
        for line in lines:
            if not line.strip():
                continue
            rec = json.loads(line)
            if log is None:
                if "config" not in rec:
                    raise ValueError("trajectory log must start with a header record")
                end = rec.pop("end_time", 0.0)
                log = cls(header=rec, end_time=end)
            elif "block_id" in rec:
                log.add_delivery(rec["block_id"], rec["miner"], rec["received_at"])
            else:
                log.add_block(Block.from_record(rec))
        if log is None:
            raise ValueError("empty trajectory log")
        return log


# ---------------------------------------------------------------------------
# trajectory


def assign_templates(n: int, templates, rng: np.random.Generator) -> list[int]:
    """Template index per miner: largest-remainder counts, shuffled."""
    fr = np.array([t.fraction for t in templates], dtype=float)
    raw = fr * n
    counts = np.floor(raw).astype(int)
    rem = n - counts.sum()
    for i in np.argsort(-(raw - counts), kind="stable")[:rem]:
        counts[i] += 1
    labels = np.repeat(np.arange(len(templates)), counts)
    return rng.permutation(labels).tolist()


_FOUND, _DELIVER = 0, 1


class Simulation:
    """Single-threaded, deterministic execution of one trajectory."""

    def __init__(self, config: SimConfig, seed: int, trajectory: int = 0, header_extra: dict | None = None):
        config.validate()
        self.config = config
        ss = np.random.SeedSequence([int(seed), int(trajectory)])
        ev_ss, assign_ss, net_ss = ss.spawn(3)
        n, s = config.n_miners, config.base.n
        self.n_miners, self.n_chains = n, s

        assign_rng = np.random.default_rng(assign_ss)
        labels = assign_templates(n, config.templates, assign_rng)
        self.roles = [config.templates[i].policy for i in labels]
        z0 = np.full(s, 1.0 / s) if config.initial_zeta is None else np.asarray(config.initial_zeta, float)
        self.agent_params = [config.templates[i].params for i in labels]
        self.agents = [
            agents.AgentState(zeta=z0.copy(), policy=self.roles[i], censored=config.censored,
                              window_k=self.agent_params[i].window_k)
            for i in range(n)
        ]
        hp = np.ones(n) if config.hash_power is None else np.asarray(config.hash_power, float)
        self.params = GenerativeParams(config.lam, hp, np.array([a.zeta for a in self.agents]), config.rate_mode)
        self.sampler = EventSampler(self.params, np.random.default_rng(ev_ss))
        self.router = Router(config.network, [np.random.default_rng(c) for c in net_ss.spawn(n)])
        self.arbs = [Arboretum(config.base) for _ in range(n)]
        self._last_tick = [0] * n

        header = {"config": config.describe(), "seed": int(seed), "trajectory": int(trajectory),
                  "roles": {str(i): r for i, r in enumerate(self.roles)}}
        if header_extra:
            header.update(header_extra)
        self.log = TrajectoryLog(header=header)
        self._queue: list = []
        self._seq = 0
        self._next_id = s
        self.now = 0.0
        self.mining = True
        self.discarded = 0
        self._streak = 0
        self.stalled = False

    def _push(self, t: float, kind: int, a, b) -> None:
        heapq.heappush(self._queue, (t, self._seq, kind, a, b))
        self._seq += 1

    def _on_attached(self, miner: int, blocks: list[Block], now: float) -> None:
        for blk in blocks:
            self.log.add_delivery(blk.id, miner, now)
            for nbr, t in self.router.forward(miner, blk.id, now):
                self._push(t, _DELIVER, nbr, blk)
        state = self.agents[miner]
        if state.policy == "static":
            return
        params = self.agent_params[miner]
        total = self.arbs[miner].height_sum
        if total - self._last_tick[miner] >= params.update_cadence:
            self._last_tick[miner] = total
            agents.agent_tick(miner, self.arbs[miner], state, params)
            self.params.zeta[miner] = state.zeta
            self.sampler.invalidate(miner)

    def _found(self, now: float) -> None:
        chain, miner = self.sampler.draw()
        arb = self.arbs[miner]
        blk = mine_local(arb, chain, miner, now, self._next_id)
        if blk is None:
            self.discarded += 1
            self._streak += 1
            return
        self._streak = 0
        self._next_id += 1
        self.log.add_block(blk)
        res = validate_and_attach(arb, blk, now)
        if res.status is not AttachStatus.ATTACHED:
            raise InvalidStateError(f"locally mined block {blk.id} failed to attach: {res.reason}")
        self._on_attached(miner, res.attached, now)

    def _deliver(self, miner: int, blk: Block, now: float) -> None:
        arb = self.arbs[miner]
        if blk.id in arb.known or blk.id in arb.orphans:
            return
        res = validate_and_attach(arb, blk, now)
        if res.status is AttachStatus.ATTACHED:
            self._on_attached(miner, res.attached, now)

    def _done_mining(self) -> bool:
        return self.arbs[self.config.observer].height_sum >= self.config.target_blocks

    def run(self) -> TrajectoryLog:
        cfg = self.config
        self._push(self.sampler.wait(), _FOUND, None, None)
        queue = self._queue
        while queue:
            t, _, kind, a, b = heapq.heappop(queue)
            if t > cfg.horizon:
                break
            self.now = t
            if kind == _FOUND:
                if not self.mining:
                    continue
                self._found(t)
                if self._streak >= cfg.stall_limit:
                    # no hash power left on any minable chain
                    self.stalled = True
                if self._done_mining() or self.stalled:
                    self.mining = False
                    self.log.header["mining_end"] = t
                    if not cfg.drain:
                        break
                else:
                    self._push(t + self.sampler.wait(), _FOUND, None, None)
            else:
                self._deliver(a, b, t)
                if self.mining and self._done_mining():
                    self.mining = False
                    self.log.header["mining_end"] = t
                    if not cfg.drain:
                        break
        self.log.end_time = self.now if math.isinf(cfg.horizon) else min(self.now, cfg.horizon)
        self.log.header["discarded"] = self.discarded
        self.log.header["stalled"] = self.stalled
        self.log.header.setdefault("mining_end", self.log.end_time)
        return self.log


def run_trajectory(config: SimConfig, seed: int, trajectory: int = 0, header_extra: dict | None = None) -> TrajectoryLog:
    return Simulation(config, seed, trajectory, header_extra).run()
