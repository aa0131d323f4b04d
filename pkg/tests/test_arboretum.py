import itertools
import random

import pytest
from hypothesis import given, settings, strategies as st

from webweaver.arboretum import (
    Arboretum,
    AttachStatus,
    Block,
    ChainTree,
    compat,
    cut_set,
    genesis_block,
    lambda_clauses,
    lambda_edge,
    main_branch,
    mine_local,
    validate_and_attach,
)
from webweaver.graphs import gen_complete, gen_path, gen_petersen
from webweaver.properties import FAULTED_CLAUSES, claim_bases, random_mining_walk


class Ids:
    def __init__(self, start):
        self.next = start

    def __call__(self):
        self.next += 1
        return self.next - 1


def mine(arb, chain, miner=0, now=1.0, ids=None):
    blk = mine_local(arb, chain, miner, now, ids())
    assert blk is not None
    res = validate_and_attach(arb, blk, now)
    assert res.status is AttachStatus.ATTACHED
    return blk


def raw_block(id, chain, height, parent, refs, miner=0):
    return Block(id=id, chain=chain, height=height, parent=parent, neighbor_refs=refs, miner=miner, created_at=0.0)


# --- compat / lambda ---------------------------------------------------------

def test_compat_fresh():
    arb = Arboretum(gen_path(2))
    assert compat(arb, 0, 1) and compat(arb, 1, 0)


def test_compat_reference_to_genesis():
    arb = Arboretum(gen_path(2))
    b = mine(arb, 0, ids=Ids(2))
    assert b.neighbor_refs == {1: 1}
    assert compat(arb, 0, 1)


def test_compat_breaks_after_neighbor_reorg():
    arb = Arboretum(gen_path(2))
    ids = Ids(2)
    a1 = mine(arb, 1, now=1.0, ids=ids)                      # chain 1, height 1
    b1 = raw_block(ids(), 1, 1, 1, {0: 0})                   # competing chain-1 block
    assert validate_and_attach(arb, b1, 2.0).status is AttachStatus.ATTACHED
    assert arb.trees[1].tip == a1.id
    mine(arb, 0, now=3.0, ids=ids)                           # chain 0 height 1
    c2 = mine(arb, 0, now=4.0, ids=ids)                      # chain 0 height 2, refs a1
    assert c2.neighbor_refs == {1: a1.id}
    assert compat(arb, 0, 1)
    # extend the b1 fork to height 2 -> chain 1 reorganizes away from a1
    b2 = raw_block(ids(), 1, 2, b1.id, {0: arb.trees[0].branch[1]})
    assert validate_and_attach(arb, b2, 5.0).status is AttachStatus.ATTACHED
    assert arb.trees[1].branch[1] == b1.id
    assert not compat(arb, 0, 1)


def test_compat_non_edge_raises():
    arb = Arboretum(gen_path(3))
    with pytest.raises(ValueError):
        compat(arb, 0, 2)
    with pytest.raises(ValueError):
        lambda_edge(arb, 0, 2)


def force_chain(tree: ChainTree, n: int, ids, ref_chain):
    """Grow ``tree`` by ``n`` blocks with placeholder refs, bypassing validation."""
    for _ in range(n):
        h = tree.height
        tree.add(raw_block(ids(), tree.chain, h + 1, tree.tip, {ref_chain: -1}), 0.0)


def test_lambda_edge_examples():
    arb = Arboretum(gen_path(2))
    assert lambda_edge(arb, 0, 1)
    ids = Ids(2)
    for _ in range(2):
        mine(arb, 0, ids=ids)
        mine(arb, 1, ids=ids)
    mine(arb, 0, ids=ids)
    assert arb.heights() == [3, 2]
    assert lambda_edge(arb, 0, 1) and lambda_edge(arb, 1, 0)

    bad = Arboretum(gen_path(2))
    force_chain(bad.trees[0], 5, ids, 1)
    force_chain(bad.trees[1], 3, ids, 0)
    assert bad.heights() == [5, 3]
    assert not lambda_edge(bad, 0, 1)


def test_lambda_clauses_each_disjunct():
    none = frozenset()
    assert not lambda_clauses(5, 3, False)
    assert lambda_clauses(3, 2, False, {"w_behind"})
    assert lambda_clauses(2, 3, False, {"w_ahead"})
    assert lambda_clauses(3, 3, False, {"equal"})
    assert lambda_clauses(0, 7, False, {"v_genesis"})
    assert lambda_clauses(9, 1, True, {"compat"})
    assert not lambda_clauses(3, 3, True, none)


# --- cut set / mining --------------------------------------------------------

@pytest.mark.parametrize("base", [gen_path(2), gen_path(5), gen_petersen(), gen_complete(6)])
def test_cut_set_fresh_is_everything(base):
    assert cut_set(Arboretum(base)) == set(range(base.n))


def test_cut_set_path_after_one_block():
    arb = Arboretum(gen_path(2))
    mine(arb, 0, ids=Ids(2))
    assert cut_set(arb) == {1}
    assert mine_local(arb, 0, 0, 2.0, 99) is None


def test_cut_set_k2_equal_heights():
    arb = Arboretum(gen_complete(2))
    ids = Ids(2)
    for h in range(4):
        assert cut_set(arb) == {0, 1}
        mine(arb, 0, ids=ids)
        mine(arb, 1, ids=ids)


def test_mine_local_fresh_refs_genesis():
    arb = Arboretum(gen_petersen())
    b = mine_local(arb, 4, miner=7, now=2.5, block_id=10)
    assert b.height == 1 and b.parent == 4 and b.miner == 7 and b.created_at == 2.5
    assert b.neighbor_refs == {w: w for w in gen_petersen().neighbors(4)}


def test_concurrent_mining_forks():
    base = gen_path(2)
    a, b = Arboretum(base), Arboretum(base)
    x = mine_local(a, 0, 0, 1.0, 10)
    y = mine_local(b, 0, 1, 1.0, 11)
    assert x.id != y.id
    assert (x.chain, x.height, x.parent) == (y.chain, y.height, y.parent)


# --- attach / orphans --------------------------------------------------------

def test_attach_orphan_then_release():
    base = gen_path(2)
    src = Arboretum(base)
    ids = Ids(2)
    b1 = mine(src, 0, ids=ids)
    b2 = mine(src, 1, ids=ids)
    b3 = mine(src, 0, ids=ids)
    dst = Arboretum(base)
    r = validate_and_attach(dst, b3, 1.0)
    assert r.status is AttachStatus.ORPHANED
    assert validate_and_attach(dst, b2, 2.0).status is AttachStatus.ATTACHED
    r = validate_and_attach(dst, b1, 3.0)
    assert r.status is AttachStatus.ATTACHED
    assert [b.id for b in r.attached] == [b1.id, b3.id]
    assert dst.heights() == src.heights() == [2, 1]
    assert not dst.orphans


def test_attach_rejects_wrong_ref_height():
    arb = Arboretum(gen_path(2))
    ids = Ids(2)
    b1 = mine(arb, 0, ids=ids)
    bad = raw_block(ids(), 1, 2, 1, {0: b1.id})   # parent genesis at height 0, but height 2
    assert validate_and_attach(arb, bad, 1.0).status is AttachStatus.REJECTED
    bad2 = raw_block(ids(), 1, 1, 1, {0: b1.id})  # ref at height 1, needs 0
    assert validate_and_attach(arb, bad2, 1.0).status is AttachStatus.REJECTED


def test_attach_rejects_duplicates_and_bad_refs():
    arb = Arboretum(gen_path(3))
    ids = Ids(3)
    b = mine(arb, 1, ids=ids)
    assert validate_and_attach(arb, b, 2.0).reason == "duplicate id"
    missing_ref = raw_block(ids(), 1, 1, 1, {0: 0})
    assert validate_and_attach(arb, missing_ref, 2.0).status is AttachStatus.REJECTED


def test_orphan_dropped_when_dependency_inconsistent():
    arb = Arboretum(gen_path(2))
    orphan = raw_block(50, 0, 2, 40, {1: 1})       # parent 40 unknown, ref height wrong
    assert validate_and_attach(arb, orphan, 1.0).status is AttachStatus.ORPHANED
    parent = raw_block(40, 0, 1, 0, {1: 1})
    r = validate_and_attach(arb, parent, 2.0)
    assert [b.id for b in r.attached] == [40]
    assert 50 in arb.dropped and 50 not in arb.orphans


# --- main branch -------------------------------------------------------------

def test_main_branch_linear():
    tree = ChainTree(genesis_block(0))
    tree.add(raw_block(5, 0, 1, 0, {}), 1.0)
    tree.add(raw_block(6, 0, 2, 5, {}), 2.0)
    assert [b.id for b in main_branch(tree)] == [0, 5, 6]
    assert len(main_branch(tree)) == tree.height + 1
    assert main_branch(tree) == main_branch(tree)


def test_main_branch_longest_fork_wins():
    tree = ChainTree(genesis_block(0))
    tree.add(raw_block(1, 0, 1, 0, {}), 1.0)
    tree.add(raw_block(2, 0, 2, 1, {}), 2.0)
    # fork at height 2: branch A 2 blocks beyond height 1, branch B 3 blocks
    tree.add(raw_block(10, 0, 3, 2, {}), 3.0)
    tree.add(raw_block(20, 0, 2, 1, {}), 3.5)
    tree.add(raw_block(21, 0, 3, 20, {}), 4.0)
    assert tree.tip == 10
    tree.add(raw_block(22, 0, 4, 21, {}), 5.0)
    assert [b.id for b in main_branch(tree)] == [0, 1, 20, 21, 22]


def test_main_branch_equal_length_first_arrival():
    tree = ChainTree(genesis_block(0))
    tree.add(raw_block(9, 0, 1, 0, {}), 1.0)
    tree.add(raw_block(3, 0, 1, 0, {}), 2.0)
    assert tree.tip == 9
    # same arrival time -> smaller id
    t2 = ChainTree(genesis_block(0))
    t2.add(raw_block(9, 0, 1, 0, {}), 1.0)
    t2.add(raw_block(3, 0, 1, 0, {}), 1.0)
    assert t2.tip == 3


# --- properties --------------------------------------------------------------

@pytest.mark.parametrize("name", list(claim_bases()))
def test_cut_set_never_empty(name):
    base = claim_bases()[name]
    for seed in range(3):
        assert random_mining_walk(base, 3000, seed) is None


def test_faulted_predicate_is_caught():
    bad = random_mining_walk(gen_path(4), 100, 0, clauses=FAULTED_CLAUSES)
    assert bad is not None and bad.kind == "empty cut set"


def _blocks_from_walk(base, steps, seed):
    """Blocks produced by one miner, with strictly increasing heights per chain."""
    rng = random.Random(seed)
    arb = Arboretum(base)
    out = []
    nid = base.n
    for _ in range(steps):
        blk = mine_local(arb, rng.randrange(base.n), 0, 0.0, nid)
        if blk is not None:
            nid += 1
            validate_and_attach(arb, blk, 0.0)
            out.append(blk)
    return out, arb


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), perm_seed=st.integers(0, 10_000))
def test_delivery_order_independence(seed, perm_seed):
    base = gen_petersen()
    blocks, src = _blocks_from_walk(base, 60, seed)
    order = blocks[:]
    random.Random(perm_seed).shuffle(order)
    dst = Arboretum(base)
    for i, b in enumerate(order):
        validate_and_attach(dst, b, float(i))
    assert [t.branch for t in dst.trees] == [t.branch for t in src.trees]
    assert not dst.orphans


def test_height_window_under_random_walks():
    base = gen_complete(5)
    assert random_mining_walk(base, 2000, 7, n_miners=4) is None
