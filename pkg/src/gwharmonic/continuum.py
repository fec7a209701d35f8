"""Continuum reduced trees and Yule populations.

The binary continuum tree is sampled through its branch heights
Y_v = Y_parent + U_v (1 - Y_parent) and truncated at height 1 - eps; the
size-biased variant grafts rescaled independent copies onto a distinguished
spine at heights accumulating by V-steps, V with density 2(1-x).

Truncation is certified: 0 <= C(trunc) - C(full) <= eps * C(trunc) for the
plain tree and <= 2 eps * C(full) for the spine version, so a target
relative tolerance fixes eps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .trees import BudgetError

__all__ = [
    "ContinuumSkeleton",
    "SpineSkeleton",
    "sample_delta",
    "conductance_delta",
    "conductance_delta_certified",
    "sample_delta_hat",
    "conductance_delta_hat",
    "conductance_delta_hat_certified",
    "sample_v",
    "sample_yule_count",
    "yule_split_times",
]

DEFAULT_SKELETON_BUDGET = 10**7


@dataclass(frozen=True)
class ContinuumSkeleton:
    """Finite binary skeleton of the continuum reduced tree, cut at 1 - eps.

    Nodes are stored in sampling waves (parents before children):
    node i spans heights [start[i], branch[i]]; it has two children iff
    branch[i] < 1 - eps, otherwise its segment is clipped at 1 - eps.
    Re-truncation at any coarser eps' >= eps is exact.
    """

    start: np.ndarray
    branch: np.ndarray
    parent: np.ndarray
    eps: float
    wave_start: np.ndarray = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.start)

    def n_leaves(self, eps: float | None = None) -> int:
        e = self.eps if eps is None else eps
        live = self.start < 1.0 - e
        return int(np.sum(live & (self.branch >= 1.0 - e)))

    def dump(self, path, header: str = "") -> None:
        with open(path, "w") as fh:
            fh.write(f"# {header}\n")
            for i in range(self.n_nodes):
                fh.write(f"{i} {self.parent[i]} {self.branch[i]!r}\n")


@dataclass(frozen=True)
class SpineSkeleton:
    """Size-biased continuum tree: spine of grafted, rescaled skeletons.

    Graft k sits at height ``heights[k]`` on the distinguished spine, on the
    recorded side, and holds an independent skeleton in internal coordinates
    (scale factor 1 - heights[k]).  Only grafts below 1 - eps are kept.
    """

    heights: np.ndarray
    sides: np.ndarray
    grafts: list
    eps: float

    @property
    def n_grafts(self) -> int:
        return len(self.heights)


def sample_delta(
    eps: float,
    rng: np.random.Generator,
    node_budget: int = DEFAULT_SKELETON_BUDGET,
) -> ContinuumSkeleton:
    """Sample the continuum reduced tree truncated at height 1 - eps.

    Iterative frontier expansion (no recursion); a branch stops once its
    height reaches 1 - eps.  Expected size grows like 1/eps.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    cut = 1.0 - eps
    starts = [np.array([0.0])]
    parents = [np.array([-1], dtype=np.int64)]
    branches = []
    wave_start = [0]
    total = 1
    frontier = starts[0]
    frontier_ids = np.array([0], dtype=np.int64)
    while len(frontier):
        u = rng.random(len(frontier))
        y = frontier + u * (1.0 - frontier)
        branches.append(y)
        split = y < cut
        n_new = 2 * int(split.sum())
        if n_new:
            total += n_new
            if total > node_budget:
                raise BudgetError(f"skeleton budget {node_budget} exceeded")
            wave_start.append(total - n_new)
            frontier = np.repeat(y[split], 2)
            frontier_ids_new = np.arange(total - n_new, total, dtype=np.int64)
            starts.append(frontier)
            parents.append(np.repeat(frontier_ids[split], 2))
            frontier_ids = frontier_ids_new
        else:
            frontier = np.empty(0)
    return ContinuumSkeleton(
        start=np.concatenate(starts),
        branch=np.concatenate(branches),
        parent=np.concatenate(parents),
        eps=eps,
        wave_start=np.array(wave_start + [total], dtype=np.int64),
    )


def conductance_delta(skel: ContinuumSkeleton, eps: float | None = None) -> float:
    """C of the truncated tree: series segments, parallel binary splits.

    With a = segment start and Y = branch height, an internal node gives
    C = 1/((Y - a) + 1/(C_left + C_right)) and a clipped leaf C = 1/(1-eps-a).
    Passing ``eps`` re-truncates the same skeleton at a coarser level.
    """
    e = skel.eps if eps is None else eps
    if e < skel.eps:
        raise ValueError("can only re-truncate at eps >= the sampled eps")
    cut = 1.0 - e
    acc = np.zeros(skel.n_nodes)
    for w in range(len(skel.wave_start) - 2, -1, -1):
        ids = np.arange(skel.wave_start[w], skel.wave_start[w + 1])
        ids = ids[skel.start[ids] < cut]
        if len(ids) == 0:
            continue
        a = skel.start[ids]
        y = skel.branch[ids]
        leaf = y >= cut
        inner = ~leaf
        c = np.empty(len(ids))
        c[leaf] = 1.0 / (cut - a[leaf])
        c[inner] = 1.0 / ((y[inner] - a[inner]) + 1.0 / acc[ids[inner]])
        par = skel.parent[ids]
        live = par >= 0
        np.add.at(acc, par[live], c[live])
        if w == 0:
            return float(c[0])
    raise AssertionError("unreachable: root wave always present")


def conductance_delta_certified(
    tol: float,
    rng: np.random.Generator,
    node_budget: int = DEFAULT_SKELETON_BUDGET,
) -> float:
    """Draw C of the full continuum tree with relative error <= tol.

    Uses eps = tol/2: the truncation inequality bounds the relative error
    of C(trunc) against C(full) by eps/(1-eps) <= tol for tol <= 1.
    """
    if not 0.0 < tol < 1.0:
        raise ValueError("tol must lie in (0, 1)")
    return conductance_delta(sample_delta(tol / 2.0, rng, node_budget))


def sample_v(rng: np.random.Generator, size=None):
    """Draw V with density 2(1-x) on [0,1] by inverse CDF: V = 1 - sqrt(1-U)."""
    return 1.0 - np.sqrt(1.0 - rng.random(size))


def sample_delta_hat(
    eps: float,
    rng: np.random.Generator,
    node_budget: int = DEFAULT_SKELETON_BUDGET,
) -> SpineSkeleton:
    """Sample the size-biased continuum tree truncated at 1 - eps.

    Spine graft heights follow y_k = y_{k-1} + (1 - y_{k-1}) V_k; each graft
    is an independent skeleton rescaled by 1 - y_k (internal truncation
    eps / (1 - y_k)), on a fair-coin side.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    heights = []
    sides = []
    grafts = []
    y = 0.0
    while True:
        y = y + (1.0 - y) * float(sample_v(rng))
        if y >= 1.0 - eps:
            break
        heights.append(y)
        sides.append(int(rng.integers(2)))
        grafts.append(sample_delta(eps / (1.0 - y), rng, node_budget))
    return SpineSkeleton(
        heights=np.array(heights), sides=np.array(sides, dtype=np.int64), grafts=grafts, eps=eps
    )


def conductance_delta_hat(skel: SpineSkeleton, eps: float | None = None) -> float:
    """C of the truncated size-biased tree by the spine series/parallel pass.

    Grafted subtree conductances rescale as C_internal / (1 - height); the
    spine is folded top-down: above the last graft a bare segment, then
    alternately parallel (graft) and series (spine gap).
    """
    e = skel.eps if eps is None else eps
    if e < skel.eps:
        raise ValueError("can only re-truncate at eps >= the sampled eps")
    cut = 1.0 - e
    keep = np.flatnonzero(skel.heights < cut)
    if len(keep) == 0:
        return 1.0 / cut
    hs = skel.heights[keep]
    acc = 0.0
    for i in range(len(keep) - 1, -1, -1):
        g = skel.grafts[keep[i]]
        scale = 1.0 - hs[i]
        g_cond = conductance_delta(g, e / scale) / scale
        if i == len(keep) - 1:
            above = 1.0 / (cut - hs[i])
        else:
            above = 1.0 / ((hs[i + 1] - hs[i]) + 1.0 / acc)
        acc = g_cond + above
    return 1.0 / (hs[0] + 1.0 / acc)


def conductance_delta_hat_certified(
    tol: float,
    rng: np.random.Generator,
    node_budget: int = DEFAULT_SKELETON_BUDGET,
) -> float:
    """Draw C of the full size-biased tree with relative error <= tol (eps = tol/4)."""
    if not 0.0 < tol < 1.0:
        raise ValueError("tol must lie in (0, 1)")
    return conductance_delta_hat(sample_delta_hat(tol / 4.0, rng, node_budget))


def yule_split_times(r: float, rng: np.random.Generator, budget: int = 10**7) -> np.ndarray:
    """Split times of a Yule process (unit-rate lifetimes, binary splits) up to r.

    After k splits the population is k + 1, so the waiting times are
    Exp(1)/1, Exp(1)/2, ...; drawn blockwise.
    """
    if r < 0:
        raise ValueError("r must be >= 0")
    times = []
    t, k = 0.0, 1
    block = 512
    while True:
        e = rng.exponential(1.0, block) / np.arange(k, k + block)
        cum = t + np.cumsum(e)
        hit = np.searchsorted(cum, r, side="right")
        times.append(cum[:hit])
        if hit < block:
            return np.concatenate(times)
        t = float(cum[-1])
        k += block
        if k > budget:
            raise BudgetError(f"Yule population budget {budget} exceeded")


def sample_yule_count(r: float, rng: np.random.Generator, budget: int = 10**7) -> int:
    """Population size of the Yule tree at height r (= 1 + number of splits)."""
    return 1 + len(yule_split_times(r, rng, budget))
