import json
import math

import numpy as np
import pytest
from scipy import stats as sps

from webweaver.agents import AgentParams
from webweaver.arboretum import Arboretum, validate_and_attach
from webweaver.engine import (
    AgentTemplate,
    ConfigError,
    EventSampler,
    GenerativeParams,
    InvalidStateError,
    LatencyModel,
    NetworkModel,
    Router,
    SimConfig,
    Simulation,
    TrajectoryLog,
    assign_templates,
    forward,
    gamma_fraction,
    gamma_vector,
    run_trajectory,
    sample_block_event,
    sample_latency,
)
from webweaver.graphs import Graph, gen_barabasi, gen_complete, gen_path, gen_petersen


# --- generative model --------------------------------------------------------

def test_gamma_examples():
    p = GenerativeParams(1.0, [1, 1], [[1, 0], [0, 1]])
    assert gamma_vector(p).tolist() == [0.5, 0.5]
    assert np.allclose(gamma_vector(GenerativeParams(1.0, [1], [[0.2, 0.8]])), [0.2, 0.8])
    p = GenerativeParams(1.0, [1, 3], [[1, 0], [0, 1]])
    assert gamma_fraction(p, 0) == 0.25 and gamma_fraction(p, 1) == 0.75


def test_gamma_zero_hash_power():
    with pytest.raises(InvalidStateError):
        gamma_vector(GenerativeParams(1.0, [0, 0], [[1, 0], [0, 1]]))


@pytest.mark.parametrize("bad", [
    dict(lam=0.0, hash_power=[1], zeta=[[1.0]]),
    dict(lam=1.0, hash_power=[-1], zeta=[[1.0]]),
    dict(lam=1.0, hash_power=[1], zeta=[[0.5, 0.6]]),
    dict(lam=1.0, hash_power=[1, 1], zeta=[[1.0]]),
])
def test_generative_params_validation(bad):
    with pytest.raises(ConfigError):
        GenerativeParams(**bad)


def test_sample_single_miner_mean_wait():
    lam = 0.25
    p = GenerativeParams(lam, [1], [[1.0]])
    rng = np.random.default_rng(0)
    n = 100_000
    waits = np.array([sample_block_event(p, rng)[0] for _ in range(n)])
    assert abs(waits.mean() - 1 / lam) <= 3 * (1 / lam) / math.sqrt(n)


def test_sample_degenerate_column():
    p = GenerativeParams(1.0, [1, 1], [[1.0, 0.0], [0.0, 1.0]])
    rng = np.random.default_rng(1)
    for _ in range(500):
        _, chain, miner = sample_block_event(p, rng)
        assert miner == chain


def test_sample_chain_frequencies_binomial():
    p = GenerativeParams(1.0, [1, 3], [[1, 0], [0, 1]])
    rng = np.random.default_rng(2)
    n = 100_000
    hits = sum(sample_block_event(p, rng)[1] == 0 for _ in range(n))
    assert abs(hits - 0.25 * n) <= 3 * math.sqrt(n * 0.25 * 0.75)


def test_rate_modes():
    z = np.full((2, 4), 0.25)
    assert GenerativeParams(0.5, [1, 1], z).event_rate() == 0.5
    assert GenerativeParams(0.5, [1, 1], z, rate_mode="superposed").event_rate() == 2.0


def test_event_sampler_matches_gamma_first_law():
    # same joint law two ways: chi-square of the factorized sampler against H_j zeta_ja / H_total
    rng = np.random.default_rng(3)
    H = np.array([1.0, 2.0, 0.5])
    Z = rng.dirichlet(np.ones(4), size=3)
    p = GenerativeParams(1.0, H, Z)
    s = EventSampler(p, np.random.default_rng(4))
    n = 100_000
    counts = np.zeros((3, 4))
    for _ in range(n):
        c, m = s.draw()
        counts[m, c] += 1
    expected = (H[:, None] * Z / H.sum()).ravel() * n
    assert sps.chisquare(counts.ravel(), expected).pvalue > 0.01
    assert sps.chisquare(counts.sum(axis=0), gamma_vector(p) * n).pvalue > 0.01


# --- latency / forwarding ----------------------------------------------------

def test_latency_examples():
    rng = np.random.default_rng(0)
    assert sample_latency(LatencyModel("constant", value=2.0), rng) == 2.0
    assert sample_latency(LatencyModel("empirical", table=(1.0,)), rng) == 1.0
    with pytest.raises(ConfigError):
        LatencyModel("empirical", table=())


def test_lognormal_median():
    m = LatencyModel()
    x = sample_latency(m, np.random.default_rng(5), size=100_000)
    assert np.all(x > 0)
    # order-statistic CI for the median under a binomial(n, 1/2) count
    n = x.size
    below = np.sum(x < math.exp(m.mu))
    assert abs(below - n / 2) <= 3 * math.sqrt(n) / 2


def test_latency_from_file(tmp_path):
    f = tmp_path / "lat.txt"
    f.write_text("0.5\n1.5\n")
    m = LatencyModel.from_file(f)
    x = sample_latency(m, np.random.default_rng(0), size=200)
    assert set(np.unique(x)) == {0.5, 1.5}


def star(deg):
    return Graph.from_edges(deg + 1, [(0, i) for i in range(1, deg + 1)])


def test_gossip_fanout_above_degree_hits_all():
    net = NetworkModel(star(3), routing="gossip", fanout=10)
    out = forward(0, net, np.random.default_rng(0))
    assert sorted(n for n, _ in out) == [1, 2, 3]


class FixedLatency:
    """rng stand-in returning a fixed latency vector for lognormal draws."""

    def __init__(self, values):
        self.values = np.asarray(values, float)

    def lognormal(self, mu, sigma, size=None):
        return self.values.copy()


def test_knn_picks_lowest_latency():
    net = NetworkModel(star(3), routing="knn", k=1)
    out = forward(0, net, FixedLatency([5.0, 9.0, 7.0]), now=0.0)
    assert out == [(1, 5.0)]


def test_router_suppresses_repeat():
    net = NetworkModel(star(3))
    r = Router(net, [np.random.default_rng(i) for i in range(4)])
    assert len(r.forward(0, 42, 0.0)) == 3
    assert r.forward(0, 42, 1.0) == []
    assert len(r.forward(0, 43, 1.0)) == 3


def test_max_connections_serializes():
    net = NetworkModel(star(4), latency=LatencyModel("constant", value=1.0), max_connections=2)
    times = sorted(t for _, t in forward(0, net, np.random.default_rng(0), now=10.0))
    assert times == [11.0, 11.0, 12.0, 12.0]


def test_knn_k_above_degree_rejected():
    with pytest.raises(ConfigError):
        NetworkModel(gen_path(3), routing="knn", k=5)


# --- trajectories ------------------------------------------------------------

def small_config(**kw):
    base = dict(network=NetworkModel(gen_complete(6)), base=gen_petersen(), lam=1 / 60, target_blocks=120)
    base.update(kw)
    return SimConfig(**base)


def test_run_deterministic():
    cfg = small_config(templates=(AgentTemplate("honest", 0.5, AgentParams(eta=1e-3, gradient_sign="descent")),
                                  AgentTemplate("censor", 0.5, AgentParams(eta=1e-3, gradient_sign="descent"))))
    assert run_trajectory(cfg, 7).dumps() == run_trajectory(cfg, 7).dumps()
    assert run_trajectory(cfg, 7).dumps() != run_trajectory(cfg, 8).dumps()
    assert run_trajectory(cfg, 7, 0).dumps() != run_trajectory(cfg, 7, 1).dumps()


def test_single_miner_linear_chain():
    cfg = SimConfig(network=NetworkModel(gen_complete(1)), base=gen_complete(1), target_blocks=100)
    log = run_trajectory(cfg, 0)
    assert len(log.blocks) == 100
    assert [b.height for b in log.blocks] == list(range(1, 101))
    assert all(b.parent == p.id for p, b in zip(log.blocks, log.blocks[1:]))


def test_constant_latency_single_hop():
    L = 3.0
    net = NetworkModel(gen_complete(2), routing="gossip", fanout=1, latency=LatencyModel("constant", value=L))
    cfg = SimConfig(network=net, base=gen_path(2), lam=0.01, target_blocks=40)
    log = run_trajectory(cfg, 1)
    created = {b.id: (b.created_at, b.miner) for b in log.blocks}
    for bid, m, t in log.deliveries:
        c, miner = created[bid]
        assert t == (c if m == miner else c + L)


def test_conservation_under_flooding():
    g = gen_barabasi(12, 2, rng=0)
    net = NetworkModel(g, routing="knn", k=g.max_degree)
    cfg = SimConfig(network=net, base=gen_petersen(), lam=0.2, target_blocks=150)
    log = run_trajectory(cfg, 3)
    got = {}
    for bid, m, _ in log.deliveries:
        got.setdefault(bid, set()).add(m)
    for b in log.blocks:
        assert got[b.id] == set(range(g.n))


def test_delivery_times_respect_latency_floor():
    lat = LatencyModel("empirical", table=(0.7, 2.0))
    cfg = small_config(network=NetworkModel(gen_complete(6), latency=lat))
    log = run_trajectory(cfg, 4)
    created = {b.id: b for b in log.blocks}
    for bid, m, t in log.deliveries:
        b = created[bid]
        assert t == b.created_at if m == b.miner else t >= b.created_at + 0.7


def test_log_roundtrip(tmp_path):
    log = run_trajectory(small_config(), 5)
    path = tmp_path / "t.jsonl"
    log.write(path)
    back = TrajectoryLog.read(path)
    assert back.dumps() == log.dumps()
    first = path.read_text().splitlines()[1]
    assert list(json.loads(first)) == ["id", "chain", "height", "parent", "miner", "created_at",
                                 "neighbor_refs"]


def test_replay_reconstructs_observer_state():
    cfg = small_config()
    sim = Simulation(cfg, 6)
    log = sim.run()
    byid = {b.id: b for b in log.blocks}
    arb = Arboretum(cfg.base)
    for bid, m, t in sorted((d for d in log.deliveries if d[1] == 0), key=lambda d: d[2]):
        validate_and_attach(arb, byid[bid], t)
    assert [t.branch for t in arb.trees] == [t.branch for t in sim.arbs[0].trees]


def test_disconnected_network_rejected():
    net = NetworkModel(Graph.from_edges(3, [(0, 1)]))
    with pytest.raises(ConfigError):
        run_trajectory(SimConfig(network=net, base=gen_path(2)), 0)


def test_template_assignment_counts():
    ts = (AgentTemplate("honest", 0.9), AgentTemplate("censor", 0.1))
    labels = assign_templates(64, ts, np.random.default_rng(0))
    assert labels.count(1) == 6 and labels.count(0) == 58


def test_censor_never_mines_censored_chain():
    p = AgentParams(eta=1e-3, gradient_sign="descent")
    cfg = small_config(templates=(AgentTemplate("honest", 0.5, p), AgentTemplate("censor", 0.5, p)))
    log = run_trajectory(cfg, 9)
    roles = log.roles
    assert not [b for b in log.blocks if b.chain == 0 and roles[b.miner] == "censor"]


def test_event_times_nondecreasing():
    log = run_trajectory(small_config(), 10)
    times = [b.created_at for b in log.blocks]
    assert times == sorted(times)


def test_stall_detected_when_no_minable_chain_has_hash_power():
    cfg = SimConfig(network=NetworkModel(gen_complete(2)), base=gen_path(2), initial_zeta=(1.0, 0.0),
                    target_blocks=10, stall_limit=500)
    log = run_trajectory(cfg, 0)
    assert log.header["stalled"] is True
    assert {b.height for b in log.blocks} == {1}
    assert log.header["discarded"] >= 500
