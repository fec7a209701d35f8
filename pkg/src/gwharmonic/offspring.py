"""Critical offspring laws: pmf/pgf machinery, survival probabilities, size-biasing.

Every supported law has mean one (criticality) and finite positive variance.
Three named families are provided besides user pmfs:

* ``geometric``: theta(k) = 2^-(k+1), sigma^2 = 2.  The pgf keeps its exact
  closed form 1/(2-s); only the sampling table is truncated.
* ``poisson``: Poisson(1) truncated where the tail mass drops below 1e-15,
  then re-balanced on theta(0), theta(1) so that total mass and mean are
  exact again.  The finite table *is* the law.
* ``binary``: theta(0) = theta(2) = 1/2, sigma^2 = 1.

Sampling is inverse-CDF on a precomputed cumulative table (branch-free,
deterministic given the RNG stream).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "OffspringError",
    "OffspringDistribution",
    "SurvivalTable",
    "make_distribution",
    "survival_table",
]

MASS_TOL = 1e-12
MEAN_TOL = 1e-9
POISSON_TAIL = 1e-15
GEOMETRIC_TABLE_TAIL = 1e-16


class OffspringError(ValueError):
    """The supplied pmf is not a usable critical offspring law."""


@dataclass(frozen=True)
class OffspringDistribution:
    """A critical offspring distribution on the non-negative integers.

    Immutable after construction and safe to share across threads; sampling
    takes an explicit per-thread generator.

    Attributes
    ----------
    kind : str
        One of ``geometric``, ``poisson``, ``binary``, ``custom``.
    ks, probs : ndarray
        Finite support table.  For ``geometric`` this is a sampling table
        truncated at tail mass < 1e-15; analytic quantities (pgf, survival
        steps) use the exact closed forms instead.
    sigma2 : float
        Offspring variance.
    """

    kind: str
    ks: np.ndarray
    probs: np.ndarray
    sigma2: float
    _cum: np.ndarray = field(repr=False)
    _cum_sb: np.ndarray = field(repr=False)

    # ------------------------------------------------------------------
    # generating function
    # ------------------------------------------------------------------
    def pgf(self, s):
        """g(s) = sum_k theta(k) s^k for s in [0, 1]."""
        s_arr = np.asarray(s, dtype=float)
        if np.any(s_arr < 0.0) or np.any(s_arr > 1.0):
            raise ValueError("pgf argument must lie in [0, 1]")
        if self.kind == "geometric":
            out = 1.0 / (2.0 - s_arr)
        else:
            out = np.polynomial.polynomial.polyval(s_arr, self._dense_probs())
        return float(out) if np.isscalar(s) else out

    def pgf_derivative(self, s):
        """g'(s); equals E[s^(Nhat-1)] for the size-biased variable Nhat."""
        s_arr = np.asarray(s, dtype=float)
        if np.any(s_arr < 0.0) or np.any(s_arr > 1.0):
            raise ValueError("pgf argument must lie in [0, 1]")
        if self.kind == "geometric":
            out = 1.0 / (2.0 - s_arr) ** 2
        else:
            dense = self._dense_probs()
            deriv = dense[1:] * np.arange(1, len(dense))
            out = np.polynomial.polynomial.polyval(s_arr, deriv)
        return float(out) if np.isscalar(s) else out

    def _dense_probs(self) -> np.ndarray:
        dense = np.zeros(int(self.ks[-1]) + 1)
        dense[self.ks] = self.probs
        return dense

    def pgf_derivative_scalar(self, s: float) -> float:
        """Scalar g'(s) on the hot path (no array wrapping)."""
        if self.kind == "geometric":
            return 1.0 / (2.0 - s) ** 2
        acc = 0.0
        for coef in self._deriv_coeffs:
            acc = acc * s + coef
        return acc

    @cached_property
    def _deriv_coeffs(self) -> list:
        dense = self._dense_probs()
        return (dense[1:] * np.arange(1, len(dense))).tolist()[::-1]

    # ------------------------------------------------------------------
    # survival recursion
    # ------------------------------------------------------------------
    def survival_step(self, q: float) -> float:
        """One step of the survival recursion: q |-> 1 - g(1 - q).

        Evaluated in a cancellation-free form so that q ~ 1e-6 keeps full
        relative precision (needed for tables up to n = 1e6).
        """
        if q <= 0.0:
            return 0.0
        if self.kind == "geometric":
            return q / (1.0 + q)
        if self.kind == "binary":
            return q - 0.5 * q * q
        if q >= 1.0:
            return 1.0 - self.pgf(0.0)
        # 1 - sum theta_k (1-q)^k = sum theta_k (1 - (1-q)^k), term-wise stable
        lg = math.log1p(-q)
        terms = [p * (-math.expm1(k * lg)) for k, p in zip(self.ks.tolist(), self.probs.tolist())]
        return math.fsum(terms)

    # ------------------------------------------------------------------
    # sampling
    # ------------------------------------------------------------------
    def sample(self, rng: np.random.Generator, size=None):
        """Draw from theta by inverse CDF on the precomputed table."""
        u = rng.random(size)
        idx = np.searchsorted(self._cum, u, side="right")
        out = self.ks[idx]
        return int(out) if size is None else out

    def sample_size_biased(self, rng: np.random.Generator, size=None):
        """Draw from the size-biased law P(Nhat = k) = k theta(k); never 0."""
        u = rng.random(size)
        idx = np.searchsorted(self._cum_sb, u, side="right")
        out = self.ks[idx]
        return int(out) if size is None else out

    def reduced_offspring_matrix(self, q: np.ndarray) -> np.ndarray:
        """Conditional reduced-offspring pmfs for an array of survival levels.

        Row i is the law of (number of children whose subtree reaches the
        target level | at least one does) when each of the theta-distributed
        children independently reaches it with probability ``q[i]``:

            P(Y = j) = sum_k theta(k) C(k,j) q^j (1-q)^(k-j) / (1 - g(1-q)),
            j = 1..kmax.

        Returns an array of shape (len(q), kmax) over j = 1..kmax.
        """
        q = np.asarray(q, dtype=float)
        kmax = int(self.ks[-1])
        pmf = np.zeros((len(q), kmax + 1))
        exact = q >= 1.0
        r = np.where(exact, 0.0, q / np.where(exact, 1.0, 1.0 - q))
        for k, p in zip(self.ks.tolist(), self.probs.tolist()):
            if k == 0:
                continue
            b = np.empty((len(q), k + 1))
            b[:, 0] = (1.0 - np.where(exact, 0.0, q)) ** k
            for j in range(k):
                b[:, j + 1] = b[:, j] * ((k - j) / (j + 1)) * r
            if exact.any():
                b[exact] = 0.0
                b[exact, k] = 1.0
            pmf[:, : k + 1] += p * b
        pmf = pmf[:, 1:]
        total = pmf.sum(axis=1, keepdims=True)
        if np.any(total <= 0.0):
            raise OffspringError("reduced offspring law degenerate (q too small?)")
        return pmf / total

    def sample_reduced_offspring(self, q: float, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw `size` conditioned reduced-offspring counts at survival level q."""
        if self.kind == "geometric":
            # mixture pmf is geometric on {0,1,...}; conditioning shifts it to {1,2,...}
            return rng.geometric(1.0 / (1.0 + q), size).astype(np.int64)
        pmf = self.reduced_offspring_matrix(np.array([q]))[0]
        cum = np.cumsum(pmf)
        cum[-1] = 1.0
        return (np.searchsorted(cum, rng.random(size), side="right") + 1).astype(np.int64)

    @property
    def mean_size_biased(self) -> float:
        """E[Nhat] = sigma^2 + 1 under criticality."""
        return self.sigma2 + 1.0


@dataclass(frozen=True)
class SurvivalTable:
    """Survival probabilities q_j = P(height >= j), j = 0..n; q_0 = 1."""

    q: np.ndarray

    def __post_init__(self):
        if self.q[0] != 1.0:
            raise ValueError("q_0 must be 1")
        if np.any(np.diff(self.q) >= 0.0) or np.any(self.q <= 0.0):
            raise ValueError("survival table must be strictly decreasing and positive")

    def __len__(self) -> int:
        return len(self.q) - 1

    def __getitem__(self, j: int) -> float:
        return float(self.q[j])


def _table(kind, ks, probs, sigma2):
    ks = np.asarray(ks, dtype=np.int64)
    probs = np.asarray(probs, dtype=float)
    cum = np.cumsum(probs)
    cum[-1] = 1.0
    sb = ks * probs
    cum_sb = np.cumsum(sb / sb.sum())
    cum_sb[-1] = 1.0
    return OffspringDistribution(kind, ks, probs, float(sigma2), cum, cum_sb)


def make_distribution(kind: str, pmf=None) -> OffspringDistribution:
    """Build a validated critical offspring distribution.

    Parameters
    ----------
    kind : str
        ``geometric``, ``poisson``, ``binary`` or ``custom``.
    pmf : sequence of (k, probability), optional
        Required for ``custom``; finite support, critical within 1e-9.
    """
    if kind == "geometric":
        ks = np.arange(0, 53)
        probs = 0.5 ** (ks + 1.0)
        return _table(kind, ks, probs, 2.0)

    if kind == "binary":
        return _table(kind, [0, 2], [0.5, 0.5], 1.0)

    if kind == "poisson":
        probs = []
        k, term, tail = 0, math.exp(-1.0), 1.0
        while tail >= POISSON_TAIL:
            probs.append(term)
            tail -= term
            k += 1
            term /= k
        probs = np.array(probs)
        # re-balance theta(0), theta(1) so mass and mean are exact again
        d_mass = 1.0 - math.fsum(probs)
        d_mean = 1.0 - math.fsum(probs * np.arange(len(probs)))
        probs[1] += d_mean
        probs[0] += d_mass - d_mean
        sigma2 = math.fsum(probs * np.arange(len(probs)) ** 2) - 1.0
        return _table(kind, np.arange(len(probs)), probs, sigma2)

    if kind == "custom":
        if pmf is None:
            raise OffspringError("custom distribution needs an explicit pmf")
        pairs = sorted((int(k), float(p)) for k, p in pmf)
        ks = np.array([k for k, _ in pairs], dtype=np.int64)
        probs = np.array([p for _, p in pairs])
        if len(ks) != len(set(ks.tolist())) or np.any(ks < 0):
            raise OffspringError("pmf support must be distinct non-negative integers")
        if np.any(probs < 0.0):
            raise OffspringError("pmf has negative mass")
        mass = math.fsum(probs)
        if abs(mass - 1.0) > MASS_TOL:
            raise OffspringError(f"pmf mass {mass} differs from 1 by more than {MASS_TOL}")
        mean = math.fsum(probs * ks)
        if abs(mean - 1.0) > MEAN_TOL:
            raise OffspringError(f"pmf mean {mean} is not critical within {MEAN_TOL}")
        if probs[ks == 1].sum() >= 1.0 - 1e-15:
            raise OffspringError("degenerate pmf: theta(1) = 1")
        sigma2 = math.fsum(probs * ks**2) - mean**2
        if sigma2 <= 0.0:
            raise OffspringError("offspring variance must be positive")
        return _table(kind, ks, probs, sigma2)

    raise OffspringError(f"unknown offspring kind {kind!r}")


def survival_table(dist: OffspringDistribution, n: int) -> SurvivalTable:
    """Survival probabilities q_0..q_n via q_j = 1 - g(1 - q_{j-1}).

    Each step is evaluated in a cancellation-free form, so the table stays
    accurate up to n = 1e6 where q_n ~ 2/(n sigma^2).
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    q = np.empty(n + 1)
    q[0] = 1.0
    x = 1.0
    for j in range(1, n + 1):
        x = dist.survival_step(x)
        q[j] = x
    return SurvivalTable(q)
