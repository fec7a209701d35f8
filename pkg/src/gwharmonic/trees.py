"""Finite plane trees and the samplers built on them.

Trees are arena-style: flat numpy arrays in breadth-first order, so the
children of a node form a contiguous index range and each generation is a
contiguous slice.  Samplers draw offspring counts one generation at a time
(one vectorized RNG call per generation), which keeps conditioned sampling
by rejection affordable.

All trees here are pruned at the generation actually needed downstream;
harmonic measure and conductances never look deeper.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .offspring import OffspringDistribution, SurvivalTable, survival_table

__all__ = [
    "BudgetError",
    "PlaneTree",
    "ReducedTree",
    "SpinePrefix",
    "MSequence",
    "tree_from_generation_counts",
    "sample_gw",
    "sample_conditioned",
    "sample_reduced_conditioned",
    "sample_kesten_prefix",
    "sample_backward_prefix",
    "reduce_tree",
    "boundary_ancestor_mask",
    "extract_m_sequence",
    "simulate_kn_fast",
    "extend_next_gap",
]

DEFAULT_NODE_BUDGET = 10**8


class BudgetError(RuntimeError):
    """Node or rejection budget exhausted (resource limit, not a law error)."""


@dataclass(frozen=True)
class PlaneTree:
    """Finite ordered rooted tree in breadth-first arena layout.

    ``children of i`` = indices ``first_child[i] .. first_child[i]+n_children[i]-1``;
    generation ``d`` = indices ``level_start[d] .. level_start[d+1]-1``.
    The root is node 0 with ``parent[0] == -1``.
    """

    parent: np.ndarray
    depth: np.ndarray
    n_children: np.ndarray
    first_child: np.ndarray
    level_start: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.parent)

    @property
    def height(self) -> int:
        return len(self.level_start) - 2

    def level(self, d: int) -> np.ndarray:
        """Node ids at depth d (empty beyond the height)."""
        if d > self.height:
            return np.empty(0, dtype=np.int64)
        return np.arange(self.level_start[d], self.level_start[d + 1])

    def level_size(self, d: int) -> int:
        if d > self.height:
            return 0
        return int(self.level_start[d + 1] - self.level_start[d])

    def children(self, i: int) -> np.ndarray:
        f = self.first_child[i]
        return np.arange(f, f + self.n_children[i])

    def dump(self, path, header: str = "") -> None:
        """Write `id parent_id depth n_children` per node, one header line."""
        with open(path, "w") as fh:
            fh.write(f"# {header}\n")
            for i in range(self.n_nodes):
                fh.write(f"{i} {self.parent[i]} {self.depth[i]} {self.n_children[i]}\n")


def tree_from_generation_counts(counts_per_gen) -> PlaneTree:
    """Assemble a PlaneTree from per-generation offspring-count arrays.

    ``counts_per_gen[d]`` holds the offspring counts of the depth-d nodes in
    breadth-first order; nodes of the last generation are childless.
    """
    sizes = [1]
    for c in counts_per_gen:
        if len(c) != sizes[-1]:
            raise ValueError("generation count array has wrong width")
        sizes.append(int(c.sum()))
    if sizes[-1] == 0:
        sizes.pop()
        counts_per_gen = counts_per_gen[: len(sizes) - 1]
    level_start = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    total = int(level_start[-1])

    n_children = np.zeros(total, dtype=np.int64)
    parent = np.full(total, -1, dtype=np.int64)
    depth = np.empty(total, dtype=np.int64)
    for d, s in enumerate(sizes):
        depth[level_start[d] : level_start[d] + s] = d
    for d, c in enumerate(counts_per_gen):
        ids = np.arange(level_start[d], level_start[d + 1])
        n_children[ids] = c
        parent[level_start[d + 1] : level_start[d + 2]] = np.repeat(ids, c)
    first_child = np.empty(total, dtype=np.int64)
    first_child[0] = 1
    np.cumsum(n_children[:-1], out=first_child[1:])
    first_child[1:] += 1
    return PlaneTree(parent, depth, n_children, first_child, level_start)


@dataclass(frozen=True)
class ReducedTree:
    """Vertices of a source tree having a descendant at the target height.

    Leaves all sit at depth ``target_height``; ``origin_ids[i]`` is the
    source-tree node behind reduced node ``i`` (identity for trees sampled
    directly in reduced form).
    """

    tree: PlaneTree
    target_height: int
    origin_ids: np.ndarray


@dataclass(frozen=True)
class SpinePrefix:
    """Backward spine tree truncated at generation 0.

    The plane tree is rooted at the spine top u_n; ``spine[j]`` is the node
    id of u_j (depth n - j), so ``spine[0]`` is the generation-0 spine vertex.
    Grafts at u_j are its non-spine children: ``left_counts[j]`` of them sit
    left of the spine continuation, the rest right.  Index 0 of the per-j
    arrays is unused (u_0 has no children).
    """

    tree: PlaneTree
    spine: np.ndarray
    left_counts: np.ndarray
    right_counts: np.ndarray
    graft_roots: list = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.spine) - 1


@dataclass(frozen=True)
class MSequence:
    """Marked spine levels: eps_j flags a graft at u_j reaching generation 0.

    ``M`` lists the marks as 0 = M_0 < M_1 < ... <= n; ``next_gap`` holds
    L_{k_n + 1} when the mark sequence was extended past n.
    """

    n: int
    eps: np.ndarray
    M: np.ndarray
    next_gap: int | None = None

    @property
    def k_n(self) -> int:
        return len(self.M) - 1

    @property
    def L(self) -> np.ndarray:
        """Gaps L_k = M_k - M_{k-1}, k = 1..k_n (index k-1)."""
        return np.diff(self.M)


def _marks_from_eps(eps: np.ndarray) -> np.ndarray:
    return np.concatenate([[0], np.flatnonzero(eps[1:]) + 1]).astype(np.int64)


# ----------------------------------------------------------------------
# plain and conditioned sampling
# ----------------------------------------------------------------------
def sample_gw(
    dist: OffspringDistribution,
    rng: np.random.Generator,
    height_cap: int | None = None,
    node_budget: int = DEFAULT_NODE_BUDGET,
) -> PlaneTree:
    """Sample a Galton-Watson tree, optionally pruned at `height_cap`.

    Nodes at the cap are left childless.  Without a cap the critical tree is
    a.s. finite; the node budget guards against the heavy size tail.
    """
    counts = []
    z, total, d = 1, 1, 0
    while z > 0 and (height_cap is None or d < height_cap):
        c = np.atleast_1d(dist.sample(rng, z)).astype(np.int64)
        total += int(c.sum())
        if total > node_budget:
            raise BudgetError(f"node budget {node_budget} exceeded")
        counts.append(c)
        z = int(c.sum())
        d += 1
    return tree_from_generation_counts(counts)


def sample_conditioned(
    dist: OffspringDistribution,
    n: int,
    rng: np.random.Generator,
    max_tries: int | None = None,
    node_budget: int = DEFAULT_NODE_BUDGET,
    return_tries: bool = False,
):
    """Sample T^(n): a GW tree conditioned on non-extinction at generation n.

    Plain rejection (regenerate whole trees, abort a try as soon as the
    population dies); the output is pruned at generation n, which is all the
    harmonic measure at level n can see.  Expected number of tries ~ 1/q_n.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    tries = 0
    while True:
        tries += 1
        if max_tries is not None and tries > max_tries:
            raise BudgetError(f"rejection budget {max_tries} exceeded")
        counts = []
        z, total = 1, 1
        for _ in range(n):
            c = np.atleast_1d(dist.sample(rng, z)).astype(np.int64)
            total += int(c.sum())
            if total > node_budget:
                raise BudgetError(f"node budget {node_budget} exceeded")
            counts.append(c)
            z = int(c.sum())
            if z == 0:
                break
        if z > 0:
            tree = tree_from_generation_counts(counts)
            return (tree, tries) if return_tries else tree


def sample_reduced_counts(
    dist: OffspringDistribution,
    n: int,
    rng: np.random.Generator,
    survival: SurvivalTable | None = None,
    node_budget: int = DEFAULT_NODE_BUDGET,
) -> list:
    """Per-level offspring counts of the reduced tree T*n, sampled directly.

    Given survival to n, the reduced tree is an inhomogeneous branching
    process: a reduced vertex at level i has offspring distributed as the
    number of its theta-children whose subtrees reach level n (each
    independently with probability q_{n-i-1}), conditioned to be >= 1.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    q = survival.q if survival is not None else survival_table(dist, n).q
    if len(q) < n + 1:
        raise ValueError("survival table too short for target height")

    geometric = dist.kind == "geometric"
    if not geometric:
        # level i uses survival level q_{n-i-1}
        pmf = dist.reduced_offspring_matrix(q[n - 1 :: -1])
        cum = np.cumsum(pmf, axis=1)
        cum[:, -1] = 1.0

    counts = []
    w, total = 1, 1
    for i in range(n):
        if geometric:
            c = rng.geometric(1.0 / (1.0 + q[n - i - 1]), w).astype(np.int64)
        else:
            c = (np.searchsorted(cum[i], rng.random(w), side="right") + 1).astype(np.int64)
        total += int(c.sum())
        if total > node_budget:
            raise BudgetError(f"node budget {node_budget} exceeded")
        counts.append(c)
        w = int(c.sum())
    return counts


def sample_reduced_conditioned(
    dist: OffspringDistribution,
    n: int,
    rng: np.random.Generator,
    survival: SurvivalTable | None = None,
    node_budget: int = DEFAULT_NODE_BUDGET,
) -> ReducedTree:
    """Sample the reduced tree T*n of T^(n) directly, level by level.

    Equivalent in law to ``reduce_tree(sample_conditioned(...), n)`` at a
    fraction of the cost (the dead subtrees are never generated).
    """
    if n == 0:
        tree = tree_from_generation_counts([])
        return ReducedTree(tree, 0, np.arange(tree.n_nodes))
    counts = sample_reduced_counts(dist, n, rng, survival, node_budget)
    tree = tree_from_generation_counts(counts)
    return ReducedTree(tree, n, np.arange(tree.n_nodes))


# ----------------------------------------------------------------------
# spine constructions
# ----------------------------------------------------------------------
def sample_kesten_prefix(
    dist: OffspringDistribution,
    n: int,
    rng: np.random.Generator,
    node_budget: int = DEFAULT_NODE_BUDGET,
):
    """First n generations of the size-biased (Kesten) tree, with its spine.

    Spine vertices reproduce by the size-biased law and pass the spine to a
    uniformly chosen child; everything off the spine is plain GW, pruned at
    generation n.  Returns ``(tree, spine_ids)`` with ``spine_ids[d]`` the
    spine vertex at depth d.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    counts = []
    spine_pos = [0]
    pos, total = 0, 1
    for _ in range(n):
        w = 1 if not counts else int(counts[-1].sum())
        c = np.atleast_1d(dist.sample(rng, w)).astype(np.int64)
        nh = int(dist.sample_size_biased(rng))
        c[pos] = nh
        total += int(c.sum())
        if total > node_budget:
            raise BudgetError(f"node budget {node_budget} exceeded")
        counts.append(c)
        pos = int(c[:pos].sum()) + int(rng.integers(nh))
        spine_pos.append(pos)
    tree = tree_from_generation_counts(counts)
    spine_ids = np.array(
        [tree.level_start[d] + p for d, p in enumerate(spine_pos)], dtype=np.int64
    )
    return tree, spine_ids


def sample_backward_prefix(
    dist: OffspringDistribution,
    n: int,
    rng: np.random.Generator,
    node_budget: int = DEFAULT_NODE_BUDGET,
) -> SpinePrefix:
    """Backward size-biased spine tree, kept above generation 0.

    The spine runs u_n (root) down to u_0 (childless, at depth n).  Each u_j,
    j >= 1, has Nhat_j children: L_j grafts left of the spine continuation
    and Nhat_j - 1 - L_j right, with L_j uniform on {0..Nhat_j-1}.  Grafts
    are plain GW trees pruned at depth n (generation 0); their placement is
    recorded but carries no downstream statistics.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    counts = []
    lefts = np.zeros(n + 1, dtype=np.int64)
    rights = np.zeros(n + 1, dtype=np.int64)
    nhats = np.zeros(n + 1, dtype=np.int64)
    spine_pos = [0]
    pos, total = 0, 1
    for d in range(n):
        j = n - d
        w = 1 if not counts else int(counts[-1].sum())
        c = np.atleast_1d(dist.sample(rng, w)).astype(np.int64)
        nh = int(dist.sample_size_biased(rng))
        left = int(rng.integers(nh))
        c[pos] = nh
        total += int(c.sum())
        if total > node_budget:
            raise BudgetError(f"node budget {node_budget} exceeded")
        counts.append(c)
        nhats[j], lefts[j], rights[j] = nh, left, nh - 1 - left
        pos = int(c[:pos].sum()) + left
        spine_pos.append(pos)
    tree = tree_from_generation_counts(counts)

    spine = np.empty(n + 1, dtype=np.int64)
    graft_roots: list = [np.empty(0, dtype=np.int64)] * (n + 1)
    for d, p in enumerate(spine_pos):
        spine[n - d] = tree.level_start[d] + p
    for j in range(1, n + 1):
        u = spine[j]
        kids = tree.first_child[u] + np.arange(nhats[j])
        graft_roots[j] = np.delete(kids, lefts[j])
    return SpinePrefix(tree, spine, lefts, rights, graft_roots)


# ----------------------------------------------------------------------
# reduction
# ----------------------------------------------------------------------
def boundary_ancestor_mask(tree: PlaneTree, n: int) -> np.ndarray:
    """Boolean mask of nodes having a descendant at depth n (themselves included)."""
    if tree.height < n:
        raise ValueError(f"tree has no depth-{n} vertex")
    keep = tree.depth == n
    for d in range(n, 0, -1):
        ids = tree.level(d)
        kept = ids[keep[ids]]
        keep[tree.parent[kept]] = True
    return keep


def reduce_tree(tree: PlaneTree, n: int) -> ReducedTree:
    """Reduced tree: exactly the vertices with a depth-n descendant."""
    keep = boundary_ancestor_mask(tree, n)
    ids = np.flatnonzero(keep)
    remap = np.full(tree.n_nodes, -1, dtype=np.int64)
    remap[ids] = np.arange(len(ids))

    depth = tree.depth[ids]
    parent = np.full(len(ids), -1, dtype=np.int64)
    parent[1:] = remap[tree.parent[ids[1:]]]
    n_children = np.bincount(parent[1:], minlength=len(ids)).astype(np.int64)
    first_child = np.empty(len(ids), dtype=np.int64)
    first_child[0] = 1
    np.cumsum(n_children[:-1], out=first_child[1:])
    first_child[1:] += 1
    level_start = np.concatenate([[0], np.cumsum(np.bincount(depth, minlength=n + 1))]).astype(
        np.int64
    )
    reduced = PlaneTree(parent, depth, n_children, first_child, level_start)
    return ReducedTree(reduced, n, ids)


# ----------------------------------------------------------------------
# mark sequences
# ----------------------------------------------------------------------
def extract_m_sequence(prefix: SpinePrefix) -> MSequence:
    """Marks of a sampled backward prefix: eps_j = 1 iff a graft at u_j reaches depth n."""
    n = prefix.n
    keep = boundary_ancestor_mask(prefix.tree, n)
    eps = np.zeros(n + 1, dtype=np.int8)
    for j in range(1, n + 1):
        roots = prefix.graft_roots[j]
        if len(roots) and keep[roots].any():
            eps[j] = 1
    return MSequence(n=n, eps=eps, M=_marks_from_eps(eps))


def simulate_kn_fast(
    dist: OffspringDistribution,
    n: int,
    rng: np.random.Generator,
    survival: SurvivalTable | None = None,
    extend: bool = False,
) -> MSequence:
    """Simulate the marks without trees: eps_j ~ Bernoulli(1 - g'(1 - q_{j-1})).

    The eps_j are independent with P(eps_j = 0) = E[(1-q_{j-1})^(Nhat-1)]
    = g'(1 - q_{j-1}), so the mark law matches the tree-based extraction
    exactly.  With ``extend`` the sequence continues past n until the next
    mark, filling ``next_gap`` = L_{k_n + 1}.
    """
    q = survival.q if survival is not None else survival_table(dist, n).q
    if len(q) < n:
        raise ValueError("survival table too short")
    p_zero = dist.pgf_derivative(1.0 - q[: n])
    eps = np.zeros(n + 1, dtype=np.int8)
    eps[1:] = rng.random(n) >= p_zero
    mseq = MSequence(n=n, eps=eps, M=_marks_from_eps(eps))
    if extend:
        mseq = extend_next_gap(dist, mseq, rng, q_n=float(q[n]) if len(q) > n else None)
    return mseq


def extend_next_gap(
    dist: OffspringDistribution,
    mseq: MSequence,
    rng: np.random.Generator,
    q_n: float | None = None,
    max_extension_factor: int = 10**4,
) -> MSequence:
    """Sample L_{k_n + 1} by continuing the Bernoulli marks past n.

    Marks beyond the prefix are independent of everything at or below n, so
    continuing eps_j ~ Bernoulli(1 - g'(1 - q_{j-1})) for j > n yields the
    exact conditional law of the next gap.  Only the gap is produced; no
    graft structure exists beyond n.
    """
    n = mseq.n
    q = q_n
    if q is None:
        q = survival_table(dist, n).q[n]
    j = n
    block = 1024
    while True:
        us = rng.random(block)
        for u in us:
            j += 1
            if j - n > max_extension_factor * max(n, 1):
                raise BudgetError("mark extension budget exceeded")
            if u >= dist.pgf_derivative_scalar(1.0 - q):
                return MSequence(n=n, eps=mseq.eps, M=mseq.M, next_gap=int(j - mseq.M[-1]))
            q = dist.survival_step(q)
