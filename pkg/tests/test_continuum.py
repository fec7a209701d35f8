"""Continuum skeletons: branch-height laws, certified conductances, Yule counts."""

import math

import numpy as np
import pytest

from gwharmonic import (
    BudgetError,
    conductance_delta,
    conductance_delta_certified,
    conductance_delta_hat,
    conductance_delta_hat_certified,
    sample_delta,
    sample_delta_hat,
    sample_yule_count,
)
from gwharmonic.continuum import sample_v, yule_split_times
from gwharmonic.stats import geometric_count_cdf, ks_statistic, ks_statistic_discrete

from conftest import rng_for


# ----------------------------------------------------------------------
# branch-height laws
# ----------------------------------------------------------------------
def test_root_height_uniform():
    rng = rng_for(3)
    heights = np.array([sample_delta(0.45, rng).branch[0] for _ in range(200000)])
    assert heights.mean() == pytest.approx(0.5, abs=0.002)
    # eps = 0.49: P(root height >= 0.51) = 0.49
    tail = np.array([sample_delta(0.49, rng).branch[0] >= 0.51 for _ in range(50000)])
    assert tail.mean() == pytest.approx(0.49, abs=0.01)


def test_small_tree_shapes():
    rng = rng_for(5)
    sizes = np.array([sample_delta(0.49, rng).n_nodes for _ in range(2000)])
    assert np.all(sizes % 2 == 1)  # binary branching: odd node counts
    assert np.mean((sizes == 1) | (sizes == 3)) > 0.5


def test_heights_increase_along_paths():
    skel = sample_delta(0.01, rng_for(7))
    child = skel.parent >= 0
    assert np.all(skel.branch[skel.parent[child]] == skel.start[child])
    assert np.all(skel.branch > skel.start)


def test_leaf_count_matches_yule_population():
    # leaves of the eps-truncation correspond to the Yule level at r = -log eps
    rng = rng_for(11)
    eps = math.exp(-3.0)
    leaves = np.array([sample_delta(eps, rng).n_leaves() for _ in range(3000)])
    assert abs(leaves.mean() / math.exp(3.0) - 1.0) < 0.15
    yule = np.array([sample_yule_count(3.0, rng) for _ in range(3000)])
    assert abs(leaves.mean() / yule.mean() - 1.0) < 0.1


def test_skeleton_budget():
    with pytest.raises(BudgetError):
        sample_delta(1e-6, rng_for(13), node_budget=50)


def test_skeleton_dump(tmp_path):
    skel = sample_delta(0.2, rng_for(17))
    path = tmp_path / "skel.txt"
    skel.dump(path, header="eps=0.2")
    lines = path.read_text().splitlines()
    assert len(lines) == skel.n_nodes + 1


# ----------------------------------------------------------------------
# conductances
# ----------------------------------------------------------------------
def test_bare_segment_conductance():
    rng = rng_for(19)
    while True:
        skel = sample_delta(0.4, rng)
        if skel.n_nodes == 1:
            break
    assert conductance_delta(skel) == pytest.approx(1.0 / 0.6, rel=1e-14)


def test_conductance_at_least_one():
    rng = rng_for(23)
    for _ in range(300):
        assert conductance_delta(sample_delta(0.02, rng)) >= 1.0
        assert conductance_delta_hat(sample_delta_hat(0.05, rng)) >= 1.0


def test_truncation_monotone_with_certified_gap():
    # nested truncations of one skeleton: eps' < eps implies
    # C(eps') <= C(eps) <= C(eps') + eps C(eps)
    rng = rng_for(29)
    for _ in range(100):
        skel = sample_delta(0.005, rng)
        c_fine = conductance_delta(skel)
        for eps in (0.01, 0.05, 0.2):
            c_coarse = conductance_delta(skel, eps)
            assert c_fine <= c_coarse + 1e-12
            assert c_coarse - c_fine <= eps * c_coarse + 1e-12


def test_truncation_monotone_hat():
    rng = rng_for(31)
    for _ in range(50):
        skel = sample_delta_hat(0.01, rng)
        c_fine = conductance_delta_hat(skel)
        c_coarse = conductance_delta_hat(skel, 0.05)
        assert c_fine <= c_coarse + 1e-12
        # the 2 eps bound is relative to the *limit*; against the finer
        # truncation it is implied with margin
        assert c_coarse - c_fine <= 2 * 0.05 * c_coarse + 1e-12


def test_retruncation_requires_coarser_eps():
    skel = sample_delta(0.1, rng_for(37))
    with pytest.raises(ValueError):
        conductance_delta(skel, 0.05)


def test_certified_tolerance_arguments():
    with pytest.raises(ValueError):
        conductance_delta_certified(0.0, rng_for(41))
    with pytest.raises(ValueError):
        conductance_delta_hat_certified(1.5, rng_for(41))
    assert conductance_delta_certified(0.05, rng_for(43)) >= 1.0


# ----------------------------------------------------------------------
# size-biased spine
# ----------------------------------------------------------------------
def test_v_law():
    v = sample_v(rng_for(47), 10**6)
    assert v.mean() == pytest.approx(1.0 / 3.0, abs=0.002)
    assert np.all((v >= 0) & (v <= 1))


def test_spine_graft_count_and_sides():
    rng = rng_for(53)
    eps = math.exp(-4.0)
    counts, sides = [], []
    for _ in range(2000):
        skel = sample_delta_hat(eps, rng)
        counts.append(skel.n_grafts)
        sides.extend(skel.sides.tolist())
    # graft heights follow unit-mean/2 exponentials in Yule coordinates
    assert np.mean(counts) == pytest.approx(2.0 * 4.0, rel=0.05)
    assert np.mean(sides) == pytest.approx(0.5, abs=0.02)


def test_spine_heights_increase():
    skel = sample_delta_hat(0.01, rng_for(59))
    assert np.all(np.diff(skel.heights) > 0)
    assert np.all(skel.heights < 1.0 - skel.eps)


# ----------------------------------------------------------------------
# Yule populations
# ----------------------------------------------------------------------
def _yule_master_equation_pmf(r, kmax, dt=0.002):
    """Oracle: integrate P'_k = (k-1) P_{k-1} - k P_k by RK4 up to time r."""
    p = np.zeros(kmax + 1)
    p[1] = 1.0
    ks = np.arange(kmax + 1)

    def deriv(state):
        out = -ks * state
        out[1:] += ks[:-1] * state[:-1]
        return out

    steps = int(round(r / dt))
    for _ in range(steps):
        k1 = deriv(p)
        k2 = deriv(p + 0.5 * dt * k1)
        k3 = deriv(p + 0.5 * dt * k2)
        k4 = deriv(p + dt * k3)
        p = p + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return p


def test_master_equation_confirms_geometric_law():
    r = 3.0
    pmf = _yule_master_equation_pmf(r, 400)
    ks = np.arange(1, 401)
    geo = math.exp(-r) * (1.0 - math.exp(-r)) ** (ks - 1.0)
    assert np.max(np.abs(pmf[1:] - geo)) < 1e-6


def test_yule_population_geometric():
    rng = rng_for(61)
    r = 3.0
    draws = np.array([sample_yule_count(r, rng) for _ in range(10**5)], dtype=float)
    d = ks_statistic_discrete(draws, geometric_count_cdf(math.exp(-r)))
    assert d < 0.02


def test_yule_zero_height():
    assert sample_yule_count(0.0, rng_for(67)) == 1


def test_first_branch_height_uniform():
    # the image 1 - e^{-T} of the first split time matches the uniform root
    # branch law; conditioning on a split before r keeps the law uniform on
    # the window [0, 1 - e^{-r}]
    rng = rng_for(71)
    r = 3.0
    first = []
    for _ in range(10**5):
        times = yule_split_times(r, rng)
        if len(times):
            first.append(times[0])
    heights = 1.0 - np.exp(-np.asarray(first))
    window = 1.0 - math.exp(-r)
    d = ks_statistic(heights, lambda x: np.clip(x / window, 0.0, 1.0))
    assert d < 0.02


def test_yule_budget():
    with pytest.raises(BudgetError):
        sample_yule_count(30.0, rng_for(73), budget=1000)
