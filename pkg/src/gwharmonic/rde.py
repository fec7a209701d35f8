"""Population dynamics for the conductance laws and the exponent built on them.

Two recursive distributional equations are iterated on large sample pools
(synchronous resampling with replacement):

    C    =d  (U + (1-U)/(C_1 + C_2))^{-1},        U uniform on [0,1],
    Chat =d  (V + (1-V)/(Chat + C))^{-1},         V with density 2(1-x),

the second one driven by an already-stationary C pool.  The exponent is
lambda = E[Chat] - 1, with an independent logarithmic estimator
lambda = 2 E[log((Chat + C)/Chat)] as a cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .continuum import sample_v

__all__ = [
    "SamplePool",
    "DensityFit",
    "init_pool",
    "step_gamma",
    "step_gamma_hat",
    "run_gamma",
    "run_gamma_hat",
    "estimate_lambda_moment",
    "estimate_lambda_log",
    "check_identity_g",
    "fit_densities",
    "sample_R",
    "estimate_Q_infinity",
    "estimate_Q_infinity_identity",
    "laplace_ode_check",
    "density_ode_check",
]

MIN_POOL = 10**3
DELTA_INF_PROXY = 1e12  # stand-in for a point mass at infinity; one step maps it into [1, 1/V]


@dataclass(frozen=True)
class SamplePool:
    """Empirical distribution driven by the population-dynamics iteration."""

    values: np.ndarray
    generation: int = 0

    @property
    def size(self) -> int:
        return len(self.values)

    def mean(self) -> float:
        return float(self.values.mean())

    def stderr(self) -> float:
        return float(self.values.std(ddof=1) / math.sqrt(len(self.values)))

    def resample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        m = self.size if size is None else size
        return self.values[rng.integers(0, self.size, m)]

    def save_csv(self, path) -> None:
        np.savetxt(path, self.values, fmt="%r")

    def save_npy(self, path) -> None:
        np.save(path, self.values)

    def summary(self) -> dict:
        """Generation counter and the first moments with standard errors."""
        v = self.values
        n = len(v)
        return {
            "generation": self.generation,
            "size": n,
            "mean": float(v.mean()),
            "mean_stderr": self.stderr(),
            "second_moment": float(np.mean(v**2)),
            "second_moment_stderr": float(np.std(v**2, ddof=1) / math.sqrt(n)),
            "min": float(v.min()),
            "max": float(v.max()),
        }


def init_pool(size: int, init="delta1", rng: np.random.Generator | None = None) -> SamplePool:
    """Seed a pool: 'delta1', 'infinity' (large-constant proxy), 'uniform', or values."""
    if size < MIN_POOL:
        raise ValueError(f"pool size must be >= {MIN_POOL}")
    if isinstance(init, str):
        if init == "delta1":
            values = np.ones(size)
        elif init == "infinity":
            values = np.full(size, DELTA_INF_PROXY)
        elif init == "uniform":
            if rng is None:
                raise ValueError("uniform seeding needs an rng")
            values = 1.0 + rng.random(size)
        else:
            raise ValueError(f"unknown pool seed {init!r}")
    elif np.isscalar(init):
        values = np.full(size, float(init))
    else:
        values = np.asarray(init, dtype=float)
        if len(values) != size:
            raise ValueError("seed array length must match pool size")
        values = values.copy()
    return SamplePool(values, generation=0)


def step_gamma(pool: SamplePool, rng: np.random.Generator) -> SamplePool:
    """One synchronous step of C =d (U + (1-U)/(C1 + C2))^{-1}."""
    c1 = pool.resample(rng)
    c2 = pool.resample(rng)
    u = rng.random(pool.size)
    return SamplePool(1.0 / (u + (1.0 - u) / (c1 + c2)), pool.generation + 1)


def step_gamma_hat(
    pool_hat: SamplePool, pool_gamma: SamplePool, rng: np.random.Generator
) -> SamplePool:
    """One synchronous step of Chat =d (V + (1-V)/(Chat + C))^{-1}."""
    chat = pool_hat.resample(rng)
    c = pool_gamma.resample(rng, pool_hat.size)
    v = sample_v(rng, pool_hat.size)
    return SamplePool(1.0 / (v + (1.0 - v) / (chat + c)), pool_hat.generation + 1)


def run_gamma(size: int, steps: int, rng: np.random.Generator, init="delta1") -> SamplePool:
    pool = init_pool(size, init, rng)
    for _ in range(steps):
        pool = step_gamma(pool, rng)
    return pool


def run_gamma_hat(
    pool_gamma: SamplePool, steps: int, rng: np.random.Generator, init="delta1"
) -> SamplePool:
    """Iterate the hat map against a fixed (stationary) gamma pool."""
    pool = init_pool(pool_gamma.size, init, rng)
    for _ in range(steps):
        pool = step_gamma_hat(pool, pool_gamma, rng)
    return pool


# ----------------------------------------------------------------------
# exponent estimators
# ----------------------------------------------------------------------
def estimate_lambda_moment(pool_hat: SamplePool) -> tuple[float, float]:
    """lambda = E[Chat] - 1 with its naive Monte Carlo standard error."""
    return pool_hat.mean() - 1.0, pool_hat.stderr()


def estimate_lambda_log(
    pool_hat: SamplePool,
    pool_gamma: SamplePool,
    rng: np.random.Generator,
    n_samples: int = 10**6,
) -> tuple[float, float]:
    """lambda = 2 E[log((Chat + C)/Chat)] from independent pool resamples."""
    chat = pool_hat.resample(rng, n_samples)
    c = pool_gamma.resample(rng, n_samples)
    x = np.log((chat + c) / chat)
    return 2.0 * float(x.mean()), 2.0 * float(x.std(ddof=1) / math.sqrt(n_samples))


def check_identity_g(
    pool_hat: SamplePool,
    pool_gamma: SamplePool,
    g,
    g_prime,
    rng: np.random.Generator,
    n_samples: int = 10**6,
) -> tuple[float, float]:
    """Residual of E[Chat(Chat-1)g'(Chat)] + 2E[g(Chat)] - 2E[g(Chat + C)].

    Per-sample statistic over independently paired (Chat, C) draws, so the
    returned standard error is the plain error of its mean.  Raises on
    non-finite moments (g grows too fast for the tails).
    """
    chat = pool_hat.resample(rng, n_samples)
    c = pool_gamma.resample(rng, n_samples)
    a = chat * (chat - 1.0) * g_prime(chat) + 2.0 * g(chat) - 2.0 * g(chat + c)
    if not np.all(np.isfinite(a)):
        raise FloatingPointError("identity statistic overflow: g unsuitable for these tails")
    return float(a.mean()), float(a.std(ddof=1) / math.sqrt(n_samples))


# ----------------------------------------------------------------------
# density fits
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class DensityFit:
    """Least-squares fit of the closed-form densities on [1, 2].

    f(t) = K0 t^{-2} for the plain conductance and
    fhat(t) = 4 A0 (t-1) t^{-3} for the size-biased one, fitted to histogram
    densities with bin-count weights.  ``argmax_hat`` is the location of the
    (coarsely binned) empirical mode of the size-biased density.
    """

    a0: float
    a0_stderr: float
    k0: float
    k0_stderr: float
    sup_resid_hat: float
    sup_resid_gamma: float
    argmax_hat: float
    first_bin_density_hat: float
    bin_width: float


def _weighted_amplitude(y, x, counts, nh):
    """Weighted LS amplitude of y ~ amp * x with bin-count weights.

    var(y_i) is taken Poisson: counts_i / (N h)^2.
    """
    w = np.maximum(counts, 1.0)
    den = float(np.sum(w * x * x))
    amp = float(np.sum(w * y * x)) / den
    var = float(np.sum(w * w * x * x * (np.maximum(counts, 1.0) / nh**2))) / den**2
    return amp, var


def fit_densities(
    gamma_values: np.ndarray,
    hat_values: np.ndarray,
    bin_width: float = 0.01,
    argmax_bin_width: float = 0.05,
) -> DensityFit:
    """Fit K0 and A0 on [1, 2] and locate the size-biased mode.

    Histogram bin width 0.01 with bin-count weights; the mode is read from a
    coarser histogram (default width 0.05) because the density is nearly
    flat around its maximum.
    """
    edges = np.arange(1.0, 2.0 + bin_width / 2, bin_width)
    mids = 0.5 * (edges[:-1] + edges[1:])

    cnt_hat, _ = np.histogram(hat_values, bins=edges)
    cnt_gam, _ = np.histogram(gamma_values, bins=edges)
    dens_hat = cnt_hat / (len(hat_values) * bin_width)
    dens_gam = cnt_gam / (len(gamma_values) * bin_width)

    shape_hat = 4.0 * (mids - 1.0) / mids**3
    shape_gam = mids**-2.0
    a0, var_a0 = _weighted_amplitude(dens_hat, shape_hat, cnt_hat, len(hat_values) * bin_width)
    k0, var_k0 = _weighted_amplitude(dens_gam, shape_gam, cnt_gam, len(gamma_values) * bin_width)

    coarse = np.arange(1.0, 4.0 + argmax_bin_width / 2, argmax_bin_width)
    cnt_coarse, _ = np.histogram(hat_values, bins=coarse)
    argmax = 0.5 * (coarse[np.argmax(cnt_coarse)] + coarse[np.argmax(cnt_coarse) + 1])

    return DensityFit(
        a0=a0,
        a0_stderr=math.sqrt(max(var_a0, 0.0)),
        k0=k0,
        k0_stderr=math.sqrt(max(var_k0, 0.0)),
        sup_resid_hat=float(np.max(np.abs(dens_hat - a0 * shape_hat))),
        sup_resid_gamma=float(np.max(np.abs(dens_gam - k0 * shape_gam))),
        argmax_hat=float(argmax),
        first_bin_density_hat=float(dens_hat[0]),
        bin_width=bin_width,
    )


# ----------------------------------------------------------------------
# the limiting five-tuple functional
# ----------------------------------------------------------------------
def sample_R(rng: np.random.Generator, size=None):
    """Draw R with tail P(R > x) = (1+x)^{-2} by inverse CDF: (1-U)^{-1/2} - 1."""
    return (1.0 - rng.random(size)) ** -0.5 - 1.0


def estimate_Q_infinity(
    pool_hat: SamplePool,
    pool_gamma: SamplePool,
    rng: np.random.Generator,
    n_samples: int = 10**7,
    batch: int = 10**6,
) -> tuple[float, float]:
    """Mean of log(1 + (C + 1/R) R'/(1+R') - 1/(1 + R'(C' + Chat))).

    Independent five-tuples (R, R', C, C', Chat); batched to bound memory.
    """
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_samples:
        m = min(batch, n_samples - done)
        r = sample_R(rng, m)
        rp = sample_R(rng, m)
        c = pool_gamma.resample(rng, m)
        cp = pool_gamma.resample(rng, m)
        chat = pool_hat.resample(rng, m)
        q = np.log1p((c + 1.0 / r) * rp / (1.0 + rp) - 1.0 / (1.0 + rp * (cp + chat)))
        total += float(q.sum())
        total_sq += float((q * q).sum())
        done += m
    mean = total / n_samples
    var = total_sq / n_samples - mean**2
    return mean, math.sqrt(var / n_samples)


def estimate_Q_infinity_identity(
    pool_hat: SamplePool,
    pool_gamma: SamplePool,
    rng: np.random.Generator,
    n_samples: int = 10**7,
    batch: int = 10**6,
) -> tuple[float, float]:
    """Same limit through the reduced assembly E[log(1 - V + V (C + Chat))]."""
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_samples:
        m = min(batch, n_samples - done)
        v = sample_v(rng, m)
        c = pool_gamma.resample(rng, m)
        chat = pool_hat.resample(rng, m)
        q = np.log1p(v * (c + chat - 1.0))
        total += float(q.sum())
        total_sq += float((q * q).sum())
        done += m
    mean = total / n_samples
    var = total_sq / n_samples - mean**2
    return mean, math.sqrt(var / n_samples)


def density_ode_check(
    pool_hat: SamplePool,
    pool_gamma: SamplePool,
    rng: np.random.Generator,
    t_grid=(2.2, 2.5, 2.8),
    bandwidth: float = 0.02,
) -> list[tuple[float, float, float]]:
    """Residuals of t(t-1) Fhat'(t) - 2 Fhat(t) + 2 P(Chat + C >= t) on [2, 3].

    Fhat(t) = P(Chat >= t) and the convolution tail are Monte Carlo
    estimates; Fhat' = -density is a window估 estimate of width 2*bandwidth,
    so this check only holds at loose tolerance.  Returns (t, residual,
    stderr) per grid point.
    """
    chat = pool_hat.values
    n = len(chat)
    csum = chat + pool_gamma.resample(rng, n)
    out = []
    for t in t_grid:
        f_tail = float(np.mean(chat >= t))
        window = float(np.mean((chat >= t - bandwidth) & (chat < t + bandwidth)))
        density = window / (2.0 * bandwidth)
        g_tail = float(np.mean(csum >= t))
        resid = -t * (t - 1.0) * density - 2.0 * f_tail + 2.0 * g_tail
        se_d = math.sqrt(max(window * (1 - window), 1e-12) / n) / (2.0 * bandwidth)
        se_f = math.sqrt(max(f_tail * (1 - f_tail), 1e-12) / n)
        se_g = math.sqrt(max(g_tail * (1 - g_tail), 1e-12) / n)
        se = math.sqrt((t * (t - 1.0) * se_d) ** 2 + 4 * se_f**2 + 4 * se_g**2)
        out.append((float(t), resid, se))
    return out


# ----------------------------------------------------------------------
# Laplace-transform ODE
# ----------------------------------------------------------------------
def laplace_ode_check(
    pool_hat: SamplePool, pool_gamma: SamplePool, ell_grid
) -> list[tuple[float, float, float]]:
    """Residuals of 2 l phi_hat'' + l phi_hat' - 2 (1 - phi(l)) phi_hat = 0.

    phi(l) = E[exp(-l C / 2)], phi_hat likewise for Chat; the derivatives
    are exact moment formulas (no finite differences).  Returns
    (l, residual, stderr) per grid point; the stderr combines the hat-pool
    statistic with the plug-in uncertainty of phi(l).
    """
    out = []
    chat = pool_hat.values
    c = pool_gamma.values
    for ell in ell_grid:
        w_hat = np.exp(-ell * chat / 2.0)
        w_gam = np.exp(-ell * c / 2.0)
        phi = float(w_gam.mean())
        half = chat / 2.0
        # per-sample residual statistic, linear in the hat-pool averages
        r = 2.0 * ell * half**2 * w_hat - ell * half * w_hat - 2.0 * (1.0 - phi) * w_hat
        resid = float(r.mean())
        se_hat = float(r.std(ddof=1) / math.sqrt(len(r)))
        se_phi = 2.0 * float(w_hat.mean()) * float(w_gam.std(ddof=1) / math.sqrt(len(c)))
        out.append((float(ell), resid, math.hypot(se_hat, se_phi)))
    return out
