"""Scenario configuration: TOML files, presets and dotted-path overrides.

A scenario file has the sections ``network``, ``base``, ``generative``,
``routing``, ``latency``, ``run``, ``sweep`` and an array of ``agents``
tables. Every key is optional; missing keys take the defaults below.

    [network]
    kind = "barabasi"       # complete | path | petersen | hoffman_singleton
    n = 64                  # | barabasi (n, m) | line_er (n, p) | file (path)
    m = 3

    [[agents]]
    policy = "honest"
    fraction = 0.9
    eta = 0.001

    [sweep]
    adversary_fraction = [0.1, 0.3, 0.5]

Sweep keys are dotted paths into the scenario (``routing.max_connections``,
``base.n``) or the special ``adversary_fraction``; several keys form a grid.
"""

from __future__ import annotations

import copy
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from . import agents
from .engine import AgentTemplate, ConfigError, LatencyModel, NetworkModel, SimConfig
from .graphs import GraphError, build_graph

SECTIONS = ("network", "base", "generative", "routing", "latency", "run", "sweep")
AGENT_KEYS = ("policy", "fraction", "eta", "alpha_decay", "window_k", "gamma_window",
              "update_cadence", "epsilon_h", "gradient_sign")

DEFAULTS = {
    "network": {"kind": "barabasi", "n": 64, "m": 3},
    "base": {"kind": "petersen"},
    "generative": {"lam": 1 / 600, "rate_mode": "per_event", "hash_power": "uniform"},
    "routing": {"mode": "gossip", "k": 8, "fanout": 1_000_000, "max_connections": 8},
    "latency": {"kind": "lognormal", "mu": math.log(0.5), "sigma": 1.0},
    "run": {
        "name": "custom",
        "trajectories": 8,
        "seed": 0,
        "target_blocks": 2000,
        # when set, the target is this many blocks per chain
        "blocks_per_chain": 0,
        "horizon": 0.0,
        "drain": True,
        "observer": 0,
        "censored": [0],
        "tau": [],
        "stall_limit": 200_000,
    },
    "sweep": {},
}
DEFAULT_AGENTS = [{"policy": "static", "fraction": 1.0}]

_CENSOR_PARAMS = {"eta": 1e-3, "gradient_sign": "descent"}

PRESETS = {
    "completeness": {
        "network": {"kind": "barabasi", "n": 64, "m": 3},
        "base": {"kind": "complete", "n": 16},
        "generative": {"lam": 0.1},
        "run": {"name": "completeness", "trajectories": 20, "blocks_per_chain": 30},
        "sweep": {"base.n": [2, 4, 8, 16, 32]},
    },
    "liveness": {
        "network": {"kind": "barabasi", "n": 64, "m": 3},
        "base": {"kind": "petersen"},
        "generative": {"lam": 1.0},
        "routing": {"mode": "gossip", "max_connections": 10},
        "run": {"name": "liveness", "trajectories": 10, "target_blocks": 300},
        "sweep": {"network.m": [1, 2, 3, 5, 8], "routing.max_connections": [1, 5, 10]},
    },
    "heightfn": {
        "network": {"kind": "line_er", "n": 64, "p": 0.1},
        "base": {"kind": "petersen"},
        "generative": {"lam": 1 / 600},
        "run": {"name": "heightfn", "trajectories": 10, "target_blocks": 500,
                "tau": [float(t) for t in range(0, 601, 20)]},
        "sweep": {"network.p": [0.005, 0.01, 0.1, 0.25, 0.5]},
    },
    "censorship": {
        "network": {"kind": "barabasi", "n": 64, "m": 3},
        "base": {"kind": "petersen"},
        "generative": {"lam": 1 / 600},
        "agents": [dict(policy="honest", fraction=0.9, **_CENSOR_PARAMS),
                   dict(policy="censor", fraction=0.1, **_CENSOR_PARAMS)],
        "run": {"name": "censorship", "trajectories": 32, "target_blocks": 2000},
        "sweep": {"adversary_fraction": [0.1, 0.3, 0.5, 0.7, 0.9]},
    },
}

# graph kinds whose instance depends on the trajectory seed
RANDOM_GRAPHS = ("barabasi", "line_er")
_GRAPH_STREAM = 0x6772


@dataclass
class ScenarioConfig:
    """Resolved scenario: plain nested dicts with every default filled in."""

    network: dict = field(default_factory=lambda: dict(DEFAULTS["network"]))
    base: dict = field(default_factory=lambda: dict(DEFAULTS["base"]))
    generative: dict = field(default_factory=lambda: dict(DEFAULTS["generative"]))
    routing: dict = field(default_factory=lambda: dict(DEFAULTS["routing"]))
    latency: dict = field(default_factory=lambda: dict(DEFAULTS["latency"]))
    agents: list = field(default_factory=lambda: copy.deepcopy(DEFAULT_AGENTS))
    run: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["run"]))
    sweep: dict = field(default_factory=dict)

    # -- construction --------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        unknown = set(data) - set(SECTIONS) - {"agents"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        out = cls()
        for sec in SECTIONS:
            given = data.get(sec, {})
            if not isinstance(given, dict):
                raise ConfigError(f"[{sec}] must be a table")
            if sec == "sweep":
                out.sweep = {k: list(v) for k, v in given.items()}
                continue
            merged = getattr(out, sec)
            if sec in ("network", "base", "latency") and "kind" in given and given["kind"] != merged.get("kind"):
                merged = {}
            merged.update(copy.deepcopy(given))
            setattr(out, sec, merged)
        if "agents" in data:
            out.agents = [dict(a) for a in data["agents"]]
        out.validate()
        return out

    @classmethod
    def from_toml(cls, text: str) -> "ScenarioConfig":
        try:
            data = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse config: {exc}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_toml(path.read_text())

    @classmethod
    def preset(cls, name: str) -> "ScenarioConfig":
        if name not in PRESETS:
            raise ConfigError(f"unknown scenario {name!r}; choose from {sorted(PRESETS)}")
        return cls.from_dict(copy.deepcopy(PRESETS[name]))

    def to_dict(self) -> dict:
        d = {sec: copy.deepcopy(getattr(self, sec)) for sec in SECTIONS}
        d["agents"] = copy.deepcopy(self.agents)
        return d

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def copy(self) -> "ScenarioConfig":
        return ScenarioConfig.from_dict(self.to_dict())

    # -- validation and overrides -------------------------------------------

    def validate(self) -> None:
        run = self.run
        if int(run["trajectories"]) < 1:
            raise ConfigError("run.trajectories must be >= 1")
        if not self.agents:
            raise ConfigError("at least one [[agents]] entry is required")
        for i, a in enumerate(self.agents):
            bad = set(a) - set(AGENT_KEYS)
            if bad:
                raise ConfigError(f"agents[{i}]: unknown keys {sorted(bad)}")
            if a.get("policy", "honest") not in agents.POLICIES:
                raise ConfigError(f"agents[{i}].policy: unknown policy {a.get('policy')!r}")
        fr = [float(a.get("fraction", 0.0)) for a in self.agents]
        if min(fr) < 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError(f"agents: fractions must be >= 0 and sum to 1 (got {sum(fr):g})")
        for sec in ("network", "base"):
            spec = getattr(self, sec)
            if spec.get("kind") == "file" and not Path(spec.get("path", "")).exists():
                raise ConfigError(f"{sec}.path: file not found: {spec.get('path')}")
        if self.latency.get("kind") == "empirical" and "file" in self.latency:
            if not Path(self.latency["file"]).exists():
                raise ConfigError(f"latency.file: file not found: {self.latency['file']}")
        for key, values in self.sweep.items():
            if not values:
                raise ConfigError(f"sweep.{key}: empty value list")
            if key != "adversary_fraction":
                self._check_path(key)

    def _check_path(self, path: str) -> None:
        sec, _, key = path.partition(".")
        if sec not in SECTIONS or sec == "sweep" or not key:
            raise ConfigError(f"sweep key {path!r} is not a section.key path")

    def with_value(self, path: str, value) -> "ScenarioConfig":
        """Copy with one dotted-path value (or ``adversary_fraction``) replaced."""
        out = self.copy()
        if path == "adversary_fraction":
            out.agents = _with_adversary_fraction(out.agents, float(value))
        else:
            self._check_path(path)
            sec, _, key = path.partition(".")
            getattr(out, sec)[key] = value
        out.validate()
        return out

    def sweep_points(self) -> list[dict]:
        """Grid over the sweep section, in key order; ``[{}]`` without a sweep."""
        if not self.sweep:
            return [{}]
        keys = list(self.sweep)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(self.sweep[k] for k in keys))]

    def at_point(self, point: dict) -> "ScenarioConfig":
        cfg = self
        for k, v in point.items():
            cfg = cfg.with_value(k, v)
        return cfg

    # -- materialization -----------------------------------------------------

    def graph_rng(self, trajectory: int) -> np.random.Generator:
        seed = int(self.run["seed"])
        return np.random.default_rng(np.random.SeedSequence([seed, int(trajectory), _GRAPH_STREAM]))

    def build_graphs(self, trajectory: int):
        rng = self.graph_rng(trajectory)
        try:
            net = _build(self.network, rng)
            base = _build(self.base, rng)
        except (GraphError, KeyError, ValueError) as exc:
            raise ConfigError(f"graph construction failed: {exc}") from None
        return net, base

    def latency_model(self) -> LatencyModel:
        lat = dict(self.latency)
        kind = lat.pop("kind", "lognormal")
        if kind == "empirical" and "file" in lat:
            return LatencyModel.from_file(lat["file"])
        if kind == "empirical":
            return LatencyModel("empirical", table=tuple(float(x) for x in lat.get("table", ())))
        if kind == "constant":
            return LatencyModel("constant", value=float(lat.get("value", 1.0)))
        return LatencyModel("lognormal", mu=float(lat.get("mu", math.log(0.5))), sigma=float(lat.get("sigma", 1.0)))

    def templates(self) -> tuple[AgentTemplate, ...]:
        out = []
        for a in self.agents:
            params = {k: a[k] for k in AGENT_KEYS if k in a and k not in ("policy", "fraction")}
            try:
                p = agents.AgentParams(**params)
            except agents.PolicyError as exc:
                raise ConfigError(f"agents: {exc}") from None
            out.append(AgentTemplate(a.get("policy", "honest"), float(a.get("fraction", 0.0)), p))
        return tuple(out)

    def sim_config(self, trajectory: int = 0) -> SimConfig:
        net_graph, base = self.build_graphs(trajectory)
        r, g = self.routing, self.generative
        network = NetworkModel(net_graph, routing=r.get("mode", "gossip"), k=int(r.get("k", 8)),
                               fanout=int(r.get("fanout", 1_000_000)),
                               max_connections=int(r.get("max_connections", 8)),
                               latency=self.latency_model())
        hp = g.get("hash_power", "uniform")
        hash_power = None if hp == "uniform" else tuple(float(x) for x in hp)
        run = self.run
        target = int(run["target_blocks"])
        if int(run.get("blocks_per_chain", 0)) > 0:
            target = int(run["blocks_per_chain"]) * base.n
        horizon = float(run.get("horizon", 0.0))
        return SimConfig(
            network=network,
            base=base,
            lam=float(g.get("lam", 1 / 600)),
            rate_mode=g.get("rate_mode", "per_event"),
            hash_power=hash_power,
            templates=self.templates(),
            censored=frozenset(int(c) for c in run.get("censored", [0])),
            target_blocks=target,
            horizon=horizon if horizon > 0 else math.inf,
            drain=bool(run.get("drain", True)),
            observer=int(run.get("observer", 0)),
            stall_limit=int(run.get("stall_limit", 200_000)),
        )

    def quick(self) -> "ScenarioConfig":
        """Reduced-size copy for smoke runs."""
        out = self.copy()
        out.run["trajectories"] = min(int(out.run["trajectories"]), 3)
        out.run["target_blocks"] = max(int(out.run["target_blocks"]) // 10, 20)
        if int(out.run.get("blocks_per_chain", 0)) > 0:
            out.run["blocks_per_chain"] = max(int(out.run["blocks_per_chain"]) // 3, 5)
        return out


def _build(spec: dict, rng):
    params = {k: v for k, v in spec.items() if k != "kind"}
    return build_graph(spec.get("kind", "complete"), rng=rng, **params)


def _with_adversary_fraction(agent_list: list, f: float) -> list:
    if not 0.0 <= f <= 1.0:
        raise ConfigError(f"adversary fraction {f} outside [0, 1]")
    out = copy.deepcopy(agent_list)
    censors = [a for a in out if a.get("policy") == "censor"]
    others = [a for a in out if a.get("policy") != "censor"]
    if not censors:
        censors = [dict(others[0] if others else {}, policy="censor")]
        out.append(censors[0])
    if not others:
        others = [dict(censors[0], policy="honest")]
        out.append(others[0])
    for a in censors:
        a["fraction"] = f / len(censors)
    for a in others:
        a["fraction"] = (1.0 - f) / len(others)
    return out


def evenly_spaced_fractions(points: int) -> list[float]:
    """``points`` evenly spaced adversary fractions strictly inside (0, 1)."""
    if points < 1:
        raise ConfigError("--points must be >= 1")
    return [round(i / (points + 1), 12) for i in range(1, points + 1)]
