"""Exact harmonic measure and conductances on finite trees.

Two independent routes to the hitting distribution of the target level:

* series/parallel recursion on the reduced tree plus a top-down unit-current
  flow split (the production path), and
* a leaf-peeling Gaussian elimination of the absorbing-chain harmonic system
  on the raw tree (the oracle path).

Edges carry unit resistance.  A boundary child contributes series term 1
rather than an infinite conductance, matching the limit C/(1+C) -> 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .offspring import OffspringDistribution, SurvivalTable, survival_table
from .trees import (
    MSequence,
    PlaneTree,
    ReducedTree,
    SpinePrefix,
    reduce_tree,
    sample_reduced_counts,
    simulate_kn_fast,
)

__all__ = [
    "ConductanceMap",
    "HarmonicMeasure",
    "SpineStatistics",
    "subtree_conductances",
    "reduced_root_conductance",
    "conductance_to_level",
    "harmonic_measure",
    "hitting_probabilities_linear_solve",
    "backward_hit_prob",
    "spine_statistics",
    "sample_spine_statistics",
]

LINEAR_SOLVE_MAX_NODES = 10**4


@dataclass(frozen=True)
class ConductanceMap:
    """Per-vertex effective conductance to the target level through its subtree.

    Boundary vertices are flagged; their stored value is +inf and never
    enters arithmetic (the series rule uses the flag instead).
    """

    values: np.ndarray
    is_boundary: np.ndarray

    @property
    def root(self) -> float:
        return float(self.values[0])


@dataclass(frozen=True)
class HarmonicMeasure:
    """Probability mass of the first level-n vertex hit by the walk."""

    leaf_ids: np.ndarray
    depth: int
    mass: np.ndarray
    origin_ids: np.ndarray | None = None

    def to_csv(self, path) -> None:
        ids = self.leaf_ids if self.origin_ids is None else self.origin_ids
        with open(path, "w") as fh:
            fh.write("leaf_id,depth,mass\n")
            for i, m in zip(ids, self.mass):
                fh.write(f"{int(i)},{self.depth},{float(m)!r}\n")


def _series_terms(cond_values: np.ndarray, boundary: bool) -> np.ndarray:
    if boundary:
        return np.ones(len(cond_values))
    return cond_values / (1.0 + cond_values)


def subtree_conductances(reduced: ReducedTree) -> ConductanceMap:
    """Bottom-up series/parallel pass over a reduced tree.

    A boundary child contributes edge conductance 1; a child c below the
    boundary contributes C(c)/(1+C(c)) (unit edge in series with its
    subtree); children combine in parallel (sum).
    """
    t = reduced.tree
    n = reduced.target_height
    is_boundary = t.depth == n
    if np.any(t.n_children[~is_boundary] == 0):
        raise ValueError("malformed reduced tree: interior vertex without children")
    values = np.full(t.n_nodes, np.inf)
    for d in range(n - 1, -1, -1):
        ids = t.level(d)
        kids = t.level(d + 1)
        s = _series_terms(values[kids], boundary=(d + 1 == n))
        seg = np.concatenate([[0], np.cumsum(t.n_children[ids])[:-1]])
        values[ids] = np.add.reduceat(s, seg)
    return ConductanceMap(values, is_boundary)


def reduced_root_conductance(counts: list) -> float:
    """Root subtree conductance straight from per-level reduced offspring counts.

    Same series/parallel recursion as `subtree_conductances`, skipping tree
    assembly; used on sampling hot paths where only C(root) is needed.
    """
    vals = counts[-1].astype(float)  # deepest interior level: all children boundary
    if len(counts) > 1:
        for c in counts[-2::-1]:
            s = vals / (1.0 + vals)
            seg = np.concatenate([[0], np.cumsum(c[:-1])])
            vals = np.add.reduceat(s, seg)
    return float(vals[0])


def conductance_to_level(tree, i: int) -> float:
    """C_i: hitting probability of level i before the phantom root edge.

    Equals the effective conductance between the phantom vertex (attached
    below the root by a unit edge) and level i, i.e. C/(1+C) for the root
    subtree conductance C.
    """
    if i == 0:
        return 1.0
    if isinstance(tree, ReducedTree) and tree.target_height == i:
        red = tree
    else:
        base = tree.tree if isinstance(tree, ReducedTree) else tree
        red = reduce_tree(base, i)
    c = subtree_conductances(red).root
    return c / (1.0 + c)


def harmonic_measure(reduced: ReducedTree) -> HarmonicMeasure:
    """Hitting distribution of the target level via unit-current flow.

    Top-down: a vertex with through-flow phi sends phi * s(c) / C(v) into
    child c, where s(c) is the child's series contribution; the mass at a
    boundary vertex is the flow reaching it.
    """
    t = reduced.tree
    n = reduced.target_height
    if n == 0:
        return HarmonicMeasure(
            np.array([0]), 0, np.array([1.0]), reduced.origin_ids[:1]
        )
    cmap = subtree_conductances(reduced)
    flow = np.zeros(t.n_nodes)
    flow[0] = 1.0
    for d in range(n):
        ids = t.level(d)
        kids = t.level(d + 1)
        s = _series_terms(cmap.values[kids], boundary=(d + 1 == n))
        flow[kids] = s * np.repeat(flow[ids] / cmap.values[ids], t.n_children[ids])
    leaves = t.level(n)
    return HarmonicMeasure(leaves, n, flow[leaves], reduced.origin_ids[leaves])


# ----------------------------------------------------------------------
# absorbing-chain oracle
# ----------------------------------------------------------------------
def _absorbing_solve(tree: PlaneTree, absorbing: np.ndarray, preset: np.ndarray) -> np.ndarray:
    """Solve h(v) = mean of h at neighbours, h = preset on the absorbing set.

    Leaf-peeling elimination: every transient vertex is expressed as
    h(v) = a_v h(parent) + b_v bottom-up, then resolved top-down.  O(V).
    """
    a = np.zeros(tree.n_nodes)
    b = np.where(absorbing, preset, 0.0)
    top = len(tree.level_start) - 2
    for d in range(top, -1, -1):
        ids = tree.level(d)
        trans = ids[~absorbing[ids]]
        if len(trans) == 0:
            continue
        deg = tree.n_children[trans] + (1 if d > 0 else 0)
        sum_a = np.zeros(len(trans))
        sum_b = np.zeros(len(trans))
        if d < top:
            kids = tree.level(d + 1)
            rel = tree.parent[kids] - tree.level_start[d]
            keep = ~absorbing[tree.parent[kids]]
            wa = np.bincount(rel[keep], weights=a[kids[keep]], minlength=len(ids))
            wb = np.bincount(rel[keep], weights=b[kids[keep]], minlength=len(ids))
            sel = trans - tree.level_start[d]
            sum_a = wa[sel]
            sum_b = wb[sel]
        denom = deg - sum_a
        a[trans] = 1.0 / denom
        b[trans] = sum_b / denom
    h = np.empty(tree.n_nodes)
    h[0] = b[0]
    for d in range(1, top + 1):
        ids = tree.level(d)
        h[ids] = a[ids] * h[tree.parent[ids]] + b[ids]
    return h


def hitting_probabilities_linear_solve(tree: PlaneTree, n: int) -> HarmonicMeasure:
    """Oracle hitting distribution of level n for SRW from the root.

    Solves the absorbing-chain system once per boundary vertex on the raw
    (unreduced) tree; independent of the series/parallel flow path.
    """
    if tree.height < n:
        raise ValueError(f"tree has no depth-{n} vertex")
    if tree.n_nodes > LINEAR_SOLVE_MAX_NODES:
        raise ValueError("tree too large for the linear-solve oracle")
    boundary = tree.level(n)
    absorbing = tree.depth >= n
    mass = np.empty(len(boundary))
    preset = np.zeros(tree.n_nodes)
    for i, target in enumerate(boundary):
        preset[target] = 1.0
        mass[i] = _absorbing_solve(tree, absorbing, preset)[0]
        preset[target] = 0.0
    return HarmonicMeasure(boundary, n, mass)


def backward_hit_prob(prefix: SpinePrefix, mseq: MSequence, k: int) -> float:
    """p_k: SRW from u_{M_k} hits generation 0 at u_0 before visiting u_{M_{k+1}}.

    Absorbing-chain solve on the sub-prefix between u_{M_{k+1}} and
    generation 0 (equivalently the full prefix with u_{M_{k+1}} absorbing).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if k + 1 > mseq.k_n:
        raise ValueError(f"M_{k + 1} lies beyond the sampled prefix")
    n = prefix.n
    absorbing = prefix.tree.depth == n
    stop = prefix.spine[mseq.M[k + 1]]
    absorbing = absorbing.copy()
    absorbing[stop] = True
    preset = np.zeros(prefix.tree.n_nodes)
    preset[prefix.spine[0]] = 1.0
    h = _absorbing_solve(prefix.tree, absorbing, preset)
    return float(h[prefix.spine[mseq.M[k]]])


# ----------------------------------------------------------------------
# backward-spine statistics
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class SpineStatistics:
    """Per-mark quantities of a backward spine: conductances and gaps.

    Arrays are indexed k-1 for mark k = 1..k_n: ``c[k-1]`` is the summed
    graft conductance at u_{M_k}, ``h[k-1]`` the conductance-style
    probability of reaching generation 0 from u_{M_k - 1} before u_{M_k},
    ``L[k-1]`` the gap M_k - M_{k-1}.  ``next_gap`` is L_{k_n+1} if known.
    """

    M: np.ndarray
    c: np.ndarray
    h: np.ndarray
    L: np.ndarray
    next_gap: int | None = None

    @property
    def k_n(self) -> int:
        return len(self.L)

    def _gaps_with_next(self) -> np.ndarray:
        if self.next_gap is not None:
            return np.append(self.L, self.next_gap)
        return self.L

    def q_terms(self) -> np.ndarray:
        """Q_j = log(1 + (c_j + l_{j+1})/l_j - l_j/(l_j + c_{j-1} + h_{j-1})),
        for j = 2 .. (k_n if the next gap is known, else k_n - 1)."""
        gaps = self._gaps_with_next()
        jmax = len(gaps) - 1
        out = np.empty(max(jmax - 1, 0))
        for j in range(2, jmax + 1):
            lj = 1.0 / gaps[j - 1]
            lj1 = 1.0 / gaps[j]
            out[j - 2] = math.log1p(
                (self.c[j - 1] + lj1) / lj - lj / (lj + self.c[j - 2] + self.h[j - 2])
            )
        return out

    def p1(self) -> float:
        """p_1 = l_1 / (l_1 + c_1 + l_2); needs at least two marks."""
        gaps = self._gaps_with_next()
        if len(gaps) < 2:
            raise ValueError("p_1 needs the gap to the second mark")
        l1, l2 = 1.0 / gaps[0], 1.0 / gaps[1]
        return l1 / (l1 + self.c[0] + l2)

    def p_product(self, k: int) -> float:
        """p_k via the product formula p_k = p_1 * exp(-sum_{j=2}^k Q_j)."""
        q = self.q_terms()
        if k - 2 > len(q) - 1 or k < 1:
            raise ValueError("k out of range for the available marks")
        return self.p1() * math.exp(-float(q[: k - 1].sum()))


def spine_statistics(prefix: SpinePrefix, mseq: MSequence) -> SpineStatistics:
    """Tree-based spine statistics of a sampled backward prefix.

    One global bottom-up conductance pass over the reduced prefix yields all
    c_k (graft series terms summed per mark) and h_k (subtree conductance at
    u_{M_k - 1} turned into a hitting probability).
    """
    if mseq.k_n < 1:
        raise ValueError("no marks within the prefix")
    n = prefix.n
    red = reduce_tree(prefix.tree, n)
    remap = np.full(prefix.tree.n_nodes, -1, dtype=np.int64)
    remap[red.origin_ids] = np.arange(len(red.origin_ids))
    cmap = subtree_conductances(red)

    k_n = mseq.k_n
    c = np.zeros(k_n)
    h = np.zeros(k_n)
    for k in range(1, k_n + 1):
        m = int(mseq.M[k])
        for root in prefix.graft_roots[m]:
            rid = remap[root]
            if rid < 0:
                continue
            if cmap.is_boundary[rid]:
                c[k - 1] += 1.0
            else:
                val = cmap.values[rid]
                c[k - 1] += val / (1.0 + val)
        up = remap[prefix.spine[m - 1]]
        if cmap.is_boundary[up]:
            h[k - 1] = 1.0
        else:
            val = cmap.values[up]
            h[k - 1] = val / (1.0 + val)
    return SpineStatistics(M=mseq.M.copy(), c=c, h=h, L=mseq.L.astype(float), next_gap=mseq.next_gap)


def _surviving_graft_count(
    dist: OffspringDistribution, q: float, rng: np.random.Generator, batch: int = 256
) -> int:
    """Draw (number of grafts reaching generation 0 | at least one does).

    Joint law: Nhat size-biased, S ~ Binomial(Nhat - 1, q), conditioned on
    S >= 1; plain rejection, vectorized in batches.
    """
    while True:
        nh = dist.sample_size_biased(rng, batch)
        s = rng.binomial(nh - 1, q)
        hits = np.flatnonzero(s >= 1)
        if len(hits):
            return int(s[hits[0]])


def sample_spine_statistics(
    dist: OffspringDistribution,
    n: int,
    rng: np.random.Generator,
    survival: SurvivalTable | None = None,
    extend: bool = True,
) -> SpineStatistics:
    """Sample SpineStatistics without materializing the O(n^2) prefix.

    Marks come from the exact Bernoulli law of eps_j; at each mark the
    surviving grafts are drawn as conditioned reduced trees and only their
    conductances kept; h_k follows the series/parallel recursion
    h_k = 1/(L_k + 1/(c_{k-1} + h_{k-1})), h_1 = 1/M_1.  Identical in law
    to ``spine_statistics(sample_backward_prefix(...), ...)``.
    """
    surv = survival if survival is not None else survival_table(dist, n)
    mseq = simulate_kn_fast(dist, n, rng, survival=surv, extend=extend)
    k_n = mseq.k_n
    c = np.zeros(k_n)
    h = np.zeros(k_n)
    for k in range(1, k_n + 1):
        m = int(mseq.M[k]) - 1
        count = _surviving_graft_count(dist, surv.q[m], rng)
        if m == 0:
            c[k - 1] = float(count)
        else:
            sub = SurvivalTable(surv.q[: m + 1])
            for _ in range(count):
                counts = sample_reduced_counts(dist, m, rng, survival=sub)
                val = reduced_root_conductance(counts)
                c[k - 1] += val / (1.0 + val)
        if k == 1:
            h[0] = 1.0 / mseq.M[1]
        else:
            h[k - 1] = 1.0 / (mseq.L[k - 1] + 1.0 / (c[k - 2] + h[k - 2]))
    return SpineStatistics(
        M=mseq.M.copy(), c=c, h=h, L=mseq.L.astype(float), next_gap=mseq.next_gap
    )
