"""Per-miner block state: one block tree per chain, tied together by the base graph.

A block at height ``h`` on chain ``v`` must reference, for every base-graph
neighbor ``w`` of ``v``, a block of chain ``w`` at height ``h - 1``. Each miner
owns one :class:`Arboretum`; blocks themselves are immutable and shared.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .graphs import Graph

# Disjuncts of the admissibility predicate on a base edge (v, w).
CLAUSES = frozenset({"w_behind", "w_ahead", "equal", "v_genesis", "compat"})


@dataclass(frozen=True, eq=False)
class Block:
    id: int
    chain: int
    height: int
    parent: int | None
    neighbor_refs: dict[int, int]
    miner: int
    created_at: float

    @property
    def is_genesis(self) -> bool:
        return self.height == 0

    def dependencies(self) -> list[int]:
        deps = [] if self.parent is None else [self.parent]
        deps.extend(self.neighbor_refs.values())
        return deps

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "chain": self.chain,
            "height": self.height,
            "parent": self.parent,
            "miner": self.miner,
            "created_at": self.created_at,
            "neighbor_refs": {str(w): b for w, b in sorted(self.neighbor_refs.items())},
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Block":
        return cls(
            id=rec["id"],
            chain=rec["chain"],
            height=rec["height"],
            parent=rec["parent"],
            neighbor_refs={int(w): b for w, b in rec["neighbor_refs"].items()},
            miner=rec["miner"],
            created_at=rec["created_at"],
        )


def genesis_block(chain: int) -> Block:
    """Genesis of ``chain``; its id is the chain index, miner -1 (earns nothing)."""
    return Block(id=chain, chain=chain, height=0, parent=None, neighbor_refs={}, miner=-1, created_at=0.0)


class ChainTree:
    """Block tree of one chain with an incrementally maintained main branch.

    Fork choice: greatest height, then earliest local arrival, then smaller id.
    ``branch[h]`` is the id of the main-branch block at height ``h``.
    """

    def __init__(self, genesis: Block):
        self.chain = genesis.chain
        self.blocks: dict[int, Block] = {genesis.id: genesis}
        self.children: dict[int, list[int]] = {genesis.id: []}
        self.arrival: dict[int, float] = {genesis.id: 0.0}
        self.branch: list[int] = [genesis.id]
        self.branch_miners: list[int] = [genesis.miner]
        # bumped whenever the main branch changes
        self.version = 0

    @property
    def tip(self) -> int:
        return self.branch[-1]

    @property
    def height(self) -> int:
        return len(self.branch) - 1

    def _better_tip(self, b: Block) -> bool:
        if b.height != self.height:
            return b.height > self.height
        tip = self.tip
        return self.arrival[b.id] == self.arrival[tip] and b.id < tip

    def add(self, b: Block, now: float) -> bool:
        """Store ``b`` (parent already present); return True if the tip moved."""
        self.blocks[b.id] = b
        self.children[b.id] = []
        self.children[b.parent].append(b.id)
        self.arrival[b.id] = now
        if not self._better_tip(b):
            return False
        # walk back to the fork point on the current branch
        path = []
        cur = b
        while cur.height >= len(self.branch) or self.branch[cur.height] != cur.id:
            path.append(cur)
            cur = self.blocks[cur.parent]
        del self.branch[cur.height + 1:]
        del self.branch_miners[cur.height + 1:]
        for blk in reversed(path):
            self.branch.append(blk.id)
            self.branch_miners.append(blk.miner)
        self.version += 1
        return True

    def block_at(self, height: int) -> Block:
        return self.blocks[self.branch[height]]


def main_branch(tree: ChainTree) -> list[Block]:
    """Genesis-to-tip blocks of the current main branch."""
    return [tree.blocks[i] for i in tree.branch]


class AttachStatus(enum.Enum):
    ATTACHED = "attached"
    ORPHANED = "orphaned"
    REJECTED = "rejected"


@dataclass
class AttachResult:
    status: AttachStatus
    # blocks newly attached by this call, in attachment order (includes released orphans)
    attached: list[Block] = field(default_factory=list)
    reason: str = ""


class Arboretum:
    """One miner's local view: base graph plus one :class:`ChainTree` per chain."""

    def __init__(self, base: Graph):
        self.base = base
        self.trees = [ChainTree(genesis_block(a)) for a in range(base.n)]
        self.known: dict[int, Block] = {t.tip: t.blocks[t.tip] for t in self.trees}
        self.height_sum = 0
        self.orphans: dict[int, Block] = {}
        self._waiting: dict[int, list[int]] = {}
        self.dropped: list[int] = []

    @property
    def n_chains(self) -> int:
        return self.base.n

    def heights(self) -> list[int]:
        return [t.height for t in self.trees]

    def _require_edge(self, v: int, w: int) -> None:
        if not self.base.has_edge(v, w):
            raise ValueError(f"({v}, {w}) is not an edge of the base graph")

    def _check(self, b: Block) -> tuple[str, int | None]:
        """Return ("ok"|"missing"|"bad", detail) for a block's dependencies."""
        deps = [(b.parent, b.chain)] + [(ref, w) for w, ref in b.neighbor_refs.items()]
        for dep, chain in deps:
            blk = self.known.get(dep)
            if blk is None:
                return "missing", dep
            if blk.chain != chain or blk.height != b.height - 1:
                return "bad", dep
        return "ok", None

    def _attach(self, b: Block, now: float) -> None:
        self.known[b.id] = b
        tree = self.trees[b.chain]
        before = tree.height
        tree.add(b, now)
        self.height_sum += tree.height - before


def compat(arb: Arboretum, v: int, w: int) -> bool:
    """Tip of chain ``v`` references the main-branch block of ``w`` one height below."""
    arb._require_edge(v, w)
    tv = arb.trees[v]
    if tv.height == 0:
        return True
    ref = tv.blocks[tv.tip].neighbor_refs.get(w)
    tw = arb.trees[w]
    h = tv.height - 1
    return ref is not None and h <= tw.height and tw.branch[h] == ref


def lambda_clauses(hv: int, hw: int, compat_ok: bool, clauses=CLAUSES) -> bool:
    """Disjunction of the enabled clauses of the per-edge admissibility predicate."""
    return (
        ("w_behind" in clauses and hw == hv - 1)
        or ("w_ahead" in clauses and hw - 1 == hv)
        or ("equal" in clauses and hw == hv)
        or ("v_genesis" in clauses and hv == 0)
        or ("compat" in clauses and compat_ok)
    )


def lambda_edge(arb: Arboretum, v: int, w: int, clauses=CLAUSES) -> bool:
    arb._require_edge(v, w)
    return lambda_clauses(arb.trees[v].height, arb.trees[w].height, compat(arb, v, w), clauses)


def is_admissible(arb: Arboretum, alpha: int, clauses=CLAUSES) -> bool:
    """Would extending the main tip of ``alpha`` keep the predicate on its edges?

    The hypothetical block references each neighbor's main-branch block at the
    current height of ``alpha``, so compat holds iff that block exists.
    """
    trees = arb.trees
    h = trees[alpha].height
    for w in arb.base.adjacency[alpha]:
        hw = trees[w].height
        if not lambda_clauses(h + 1, hw, hw >= h, clauses):
            return False
    return True


def cut_set(arb: Arboretum, clauses=CLAUSES) -> set[int]:
    return {a for a in range(arb.n_chains) if is_admissible(arb, a, clauses)}


def mine_local(arb: Arboretum, chain: int, miner: int, now: float, block_id: int,
               clauses=CLAUSES) -> Block | None:
    """New block on the local main tip of ``chain``, or None if not admissible."""
    if not is_admissible(arb, chain, clauses):
        return None
    tree = arb.trees[chain]
    h = tree.height
    refs = {}
    for w in arb.base.adjacency[chain]:
        tw = arb.trees[w]
        if h > tw.height:
            # only reachable with a faulted predicate
            return None
        refs[w] = tw.branch[h]
    return Block(id=block_id, chain=chain, height=h + 1, parent=tree.tip,
                 neighbor_refs=refs, miner=miner, created_at=now)


def validate_and_attach(arb: Arboretum, b: Block, now: float) -> AttachResult:
    """Attach ``b`` if its dependencies are known, buffer it if not.

    Attaching a block retries any orphans waiting on it; orphans found to be
    inconsistent at that point are dropped (recorded in ``arb.dropped``).
    """
    if b.id in arb.known or b.id in arb.orphans:
        return AttachResult(AttachStatus.REJECTED, reason="duplicate id")
    if not 0 <= b.chain < arb.n_chains or b.height < 1 or b.parent is None:
        return AttachResult(AttachStatus.REJECTED, reason="malformed block")
    if set(b.neighbor_refs) != set(arb.base.adjacency[b.chain]):
        return AttachResult(AttachStatus.REJECTED, reason="neighbor_refs do not match base graph")
    state, dep = arb._check(b)
    if state == "bad":
        return AttachResult(AttachStatus.REJECTED, reason=f"dependency {dep} has wrong chain or height")
    if state == "missing":
        arb.orphans[b.id] = b
        arb._waiting.setdefault(dep, []).append(b.id)
        return AttachResult(AttachStatus.ORPHANED, reason=f"waiting on {dep}")

    attached = []
    ready = [b]
    while ready:
        blk = ready.pop()
        arb._attach(blk, now)
        attached.append(blk)
        for oid in arb._waiting.pop(blk.id, ()):
            orphan = arb.orphans[oid]
            state, dep = arb._check(orphan)
            if state == "ok":
                del arb.orphans[oid]
                ready.append(orphan)
            elif state == "missing":
                arb._waiting.setdefault(dep, []).append(oid)
            else:
                del arb.orphans[oid]
                arb.dropped.append(oid)
    return AttachResult(AttachStatus.ATTACHED, attached)
