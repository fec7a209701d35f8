"""Seeded experiment runners binding the samplers into reproducible studies.

Each experiment takes a flat configuration (file and/or overrides), runs a
fixed set of Monte Carlo measurements against its acceptance thresholds, and
emits machine-readable output: ``raw.csv`` with documented columns and
``summary.json`` validated against the packaged schema.  The same master
seed yields byte-identical raw CSVs for any thread count: every sample draws
from its own counter-keyed substream and rows are emitted in index order.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import continuum as cont
from . import rde, stats
from .electric import (
    backward_hit_prob,
    harmonic_measure,
    reduced_root_conductance,
    sample_spine_statistics,
    spine_statistics,
)
from .offspring import SurvivalTable, make_distribution, survival_table
from .seeds import substream
from .trees import (
    extract_m_sequence,
    sample_backward_prefix,
    sample_reduced_conditioned,
    sample_reduced_counts,
    simulate_kn_fast,
)

FAMILIES = ("geometric", "poisson", "binary")

# substream key tags: (seed, TAG, ...) so loops never collide
_T_SAMPLE, _T_POOL, _T_AUX = 0, 1, 2


# ----------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------
GENERAL_KEYS = {
    "offspring": ("str", "geometric", "offspring family: geometric|poisson|binary|custom"),
    "pmf": ("pmf", None, "inline pmf for offspring=custom, e.g. 0:0.25,1:0.5,3:0.25"),
    "seed": ("int", 20240801, "master seed; fixes every substream"),
    "out": ("str", None, "output directory for raw.csv and summary.json"),
    "threads": ("int", 1, "worker processes for the sample loops"),
}

EXPERIMENT_KEYS = {
    "mass_exponents": {
        "n_values": ("ints", (100, 300, 1000), "tree heights, ascending"),
        "samples": ("int", 2000, "Monte Carlo samples per height"),
    },
    "yaglom": {
        "n": ("int", 200, "tree height"),
        "samples": ("int", 10000, "Monte Carlo samples"),
        "ks_tol": ("float", 0.05, "KS distance threshold vs Exp(2/sigma^2)"),
    },
    "kolmogorov": {
        "n": ("int", 10000, "generation at which n q_n sigma^2/2 is checked"),
        "tol": ("float", 0.05, "allowed deviation of n q_n sigma^2/2 from 1"),
    },
    "conductance_cv": {
        "n": ("int", 200, "tree height"),
        "samples": ("int", 10000, "samples per offspring family"),
        "pool_size": ("int", 10**6, "population size of the reference pool"),
        "burn_in": ("int", 200, "pool iterations before use"),
        "w1_tol": ("float", 0.1, "Wasserstein-1 threshold vs the stationary pool"),
        "ks_tol": ("float", 0.05, "pairwise KS threshold across families"),
        "second_moment_cap": ("float", 10.0, "empirical bound on E[(n C_n)^2]"),
    },
    "kn": {
        "n_fast": ("int", 10**5, "height for the mark-count asymptotics"),
        "runs_fast": ("int", 1000, "fast runs for the mean of k_n/(2 log n)"),
        "ratio_lo": ("float", 0.9, "lower bound for mean k_n/(2 log n)"),
        "ratio_hi": ("float", 1.1, "upper bound for mean k_n/(2 log n)"),
        "n_law": ("int", 1000, "height for the tree-vs-fast law comparison"),
        "samples_tree": ("int", 10000, "tree-based prefixes for the law comparison"),
        "samples_fast": ("int", 40000, "fast runs for the law comparison"),
        "law_family": ("str", "binary", "offspring family for the law comparison"),
        "p_min": ("float", 0.001, "KS p-value floor for law agreement"),
    },
    "ergodic_q": {
        "n_spine": ("int", 20000, "spine length for the ergodic average"),
        "prefixes": ("int", 200, "number of spine samples"),
        "pool_size": ("int", 10**6, "pool size for the lambda reference"),
        "burn_in": ("int", 200, "pool iterations before use"),
        "qbar_tol": ("float", 0.1, "allowed |mean Qbar - lambda/2|"),
        "q_draws": ("int", 10**7, "five-tuple draws for the direct limit"),
        "qinf_tol": ("float", 0.01, "allowed |E[Q_inf] - lambda/2|"),
        "product_prefixes": ("int", 20, "prefixes for the product-formula cross-check"),
        "product_n": ("int", 500, "height of the cross-check prefixes"),
        "product_tol": ("float", 1e-9, "allowed |p_k(product) - p_k(linear solve)|"),
    },
    "rde_suite": {
        "pool_size": ("int", 10**6, "population size of each pool"),
        "burn_in": ("int", 200, "pool iterations before estimates"),
        "lambda_lo": ("float", 1.15, "lower acceptance bound for lambda"),
        "lambda_hi": ("float", 1.27, "upper acceptance bound for lambda"),
        "lambda_agree": ("float", 0.02, "allowed gap between the two estimators"),
        "echat_lo": ("float", 2.16, "lower bound for E[Chat]"),
        "echat_hi": ("float", 2.26, "upper bound for E[Chat]"),
        "a0_lo": ("float", 0.95, "lower bound for the fitted A0"),
        "a0_hi": ("float", 1.00, "upper bound for the fitted A0"),
        "k0_lo": ("float", 1.45, "lower bound for the fitted K0"),
        "k0_hi": ("float", 1.51, "upper bound for the fitted K0"),
        "argmax_lo": ("float", 1.4, "lower bound for the density mode"),
        "argmax_hi": ("float", 1.6, "upper bound for the density mode"),
        "first_bin_max": ("float", 0.1, "cap on the first-bin density of fhat"),
        "identity_sigmas": ("float", 3.0, "allowed residual in standard errors"),
        "ode_sigmas": ("float", 5.0, "allowed ODE residual in standard errors"),
        "ode_grid": ("floats", (0.5, 1.0, 2.0, 4.0), "Laplace variable grid"),
        "fit_generations": ("int", 8, "post-burn-in generations pooled for fits"),
        "continuum": ("bool", True, "run the continuum cross-checks"),
        "delta_samples": ("int", 30000, "certified conductance draws (plain tree)"),
        "delta_tol": ("float", 0.005, "certified relative tolerance (plain tree)"),
        "delta_w1_tol": ("float", 0.05, "W1 threshold vs the stationary pool"),
        "delta_hat_samples": ("int", 10000, "certified draws (size-biased tree)"),
        "delta_hat_tol": ("float", 0.005, "certified relative tolerance (size-biased)"),
        "yule_r": ("float", 6.0, "Yule height for the population-limit check"),
        "yule_samples": ("int", 10000, "Yule population draws"),
        "yule_ks_tol": ("float", 0.05, "KS threshold of e^-r #pop vs Exp(1)"),
    },
}


def config_help(experiment: str) -> str:
    """The inline schema doc: every key with type, default and meaning."""
    lines = [f"# configuration keys for experiment '{experiment}'", "# key = value ('#' comments)"]
    for key, (typ, default, help_) in {**GENERAL_KEYS, **EXPERIMENT_KEYS[experiment]}.items():
        lines.append(f"# {key} ({typ}, default {default!r}): {help_}")
    return "\n".join(lines)


def _parse_value(typ: str, text: str):
    if typ == "int":
        return int(text)
    if typ == "float":
        return float(text)
    if typ == "str":
        return text
    if typ == "bool":
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if typ == "ints":
        return tuple(int(x) for x in text.replace(",", " ").split())
    if typ == "floats":
        return tuple(float(x) for x in text.replace(",", " ").split())
    if typ == "pmf":
        pairs = []
        for item in text.replace(",", " ").split():
            k, p = item.split(":")
            pairs.append((int(k), float(p)))
        return pairs
    raise ValueError(f"unknown config type {typ}")


def parse_config_file(path) -> dict:
    """Flat key = value format with '#' comments and blank lines."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, text = line.partition("=")
            values[key.strip()] = text.strip()
    return values


def build_config(experiment: str, file_values: dict | None = None, overrides: dict | None = None) -> dict:
    """Resolve defaults <- config file <- explicit overrides, with typing."""
    if experiment not in EXPERIMENT_KEYS:
        raise ValueError(f"unknown experiment {experiment!r}")
    schema = {**GENERAL_KEYS, **EXPERIMENT_KEYS[experiment]}
    cfg = {key: default for key, (_, default, _) in schema.items()}
    for source in (file_values or {}, overrides or {}):
        for key, text in source.items():
            if key == "experiment":
                continue
            if key not in schema:
                raise ValueError(f"unknown config key {key!r} for experiment {experiment}")
            typ = schema[key][0]
            cfg[key] = text if not isinstance(text, str) else _parse_value(typ, text)
    cfg["experiment"] = experiment
    return cfg


def _dist_from_config(cfg, kind=None):
    kind = kind or cfg["offspring"]
    return make_distribution(kind, cfg.get("pmf")) if kind == "custom" else make_distribution(kind)


# ----------------------------------------------------------------------
# reports
# ----------------------------------------------------------------------
@dataclass
class ExperimentReport:
    """Structured experiment outcome plus the raw per-sample table."""

    experiment: str
    seed: int
    threads: int
    params: dict
    estimates: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    raw_header: list = field(default_factory=list)
    raw_rows: list = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def add_estimate(self, name, value, stderr=None, exact=False):
        entry = {"name": name, "value": value}
        if exact:
            entry["exact"] = True
        else:
            entry["stderr"] = float(stderr)
        self.estimates.append(entry)

    def add_check(self, name, passed, detail=""):
        self.checks.append({"name": name, "passed": bool(passed), "detail": detail})

    def summary(self) -> dict:
        return {
            "experiment": self.experiment,
            "seed": self.seed,
            "threads": self.threads,
            "params": {
                k: (list(v) if isinstance(v, tuple) else v)
                for k, v in self.params.items()
                if k not in ("out", "threads", "seed")
            },
            "estimates": self.estimates,
            "checks": self.checks,
            "all_passed": self.all_passed,
        }


def _format_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def load_summary_schema() -> dict:
    with resources.files("gwharmonic").joinpath("summary_schema.json").open() as fh:
        return json.load(fh)


def write_report(report: ExperimentReport, outdir) -> tuple[str, str]:
    """Write raw.csv and summary.json (schema-validated) into `outdir`."""
    import jsonschema

    os.makedirs(outdir, exist_ok=True)
    raw_path = os.path.join(outdir, "raw.csv")
    with open(raw_path, "w") as fh:
        fh.write(",".join(report.raw_header) + "\n")
        for row in report.raw_rows:
            fh.write(",".join(_format_cell(v) for v in row) + "\n")
    summary = report.summary()
    jsonschema.validate(summary, load_summary_schema())
    summary_path = os.path.join(outdir, "summary.json")
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return raw_path, summary_path


# ----------------------------------------------------------------------
# chunked sample loops (process-parallel, order-stable)
# ----------------------------------------------------------------------
def _chunk_ranges(n_items: int, threads: int):
    per = max(1, math.ceil(n_items / max(1, 4 * threads)))
    return [(lo, min(lo + per, n_items)) for lo in range(0, n_items, per)]


def run_chunked(worker, payload, n_items: int, threads: int) -> list:
    """Run ``worker((payload, lo, hi))`` over index chunks, rows in index order.

    Results depend only on (payload, index) through per-index substreams, so
    aggregates are identical for every thread count.
    """
    tasks = [(payload, lo, hi) for lo, hi in _chunk_ranges(n_items, threads)]
    if threads <= 1:
        parts = [worker(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(worker, tasks))
    return [row for part in parts for row in part]


# ----------------------------------------------------------------------
# experiment: mass exponents at the boundary
# ----------------------------------------------------------------------
def _mass_exponents_chunk(task):
    (kind, pmf, n, seed, tag), lo, hi = task
    dist = make_distribution(kind, pmf) if kind == "custom" else make_distribution(kind)
    surv = survival_table(dist, n)
    rows = []
    logn = math.log(n)
    for i in range(lo, hi):
        rng = substream(seed, _T_SAMPLE, tag, i)
        red = sample_reduced_conditioned(dist, n, rng, survival=surv)
        hm = harmonic_measure(red)
        defect = abs(float(hm.mass.sum()) - 1.0)
        n_leaves = len(hm.mass)
        uniform_ix = int(rng.integers(n_leaves))
        cum = np.cumsum(hm.mass)
        harmonic_ix = int(np.searchsorted(cum, rng.random() * cum[-1]))
        x_unif = -math.log(hm.mass[uniform_ix]) / logn
        x_harm = -math.log(hm.mass[harmonic_ix]) / logn
        rows.append((n, i, n_leaves, x_unif, x_harm, defect))
    return rows


def _median_with_stderr(values: np.ndarray) -> tuple[float, float]:
    """Sample median with the order-statistic stderr (binomial CI width / 2z)."""
    s = np.sort(values)
    n = len(s)
    med = float(np.median(s))
    half = 1.959964 * math.sqrt(n) / 2.0
    lo = int(np.clip(math.floor(n / 2 - half), 0, n - 1))
    hi = int(np.clip(math.ceil(n / 2 + half), 0, n - 1))
    return med, float(s[hi] - s[lo]) / (2.0 * 1.959964)


def exp_mass_exponents(cfg: dict) -> ExperimentReport:
    """Harmonic mass exponents at uniform and harmonic-typical level-n vertices.

    Records x = -log mu_n(v) / log n per sample for both vertex choices and
    checks the ordering median(x_harmonic) < 1 < median(x_uniform) at the
    largest height (the point values converge only logarithmically).
    """
    rep = ExperimentReport("mass_exponents", cfg["seed"], cfg["threads"], dict(cfg))
    rep.raw_header = ["n", "sample", "n_leaves", "x_uniform", "x_harmonic", "mass_defect"]
    med_u, med_h = {}, {}
    for tag, n in enumerate(cfg["n_values"]):
        payload = (cfg["offspring"], cfg.get("pmf"), n, cfg["seed"], tag)
        rows = run_chunked(_mass_exponents_chunk, payload, cfg["samples"], cfg["threads"])
        rep.raw_rows.extend(rows)
        xu = np.array([r[3] for r in rows])
        xh = np.array([r[4] for r in rows])
        mu, su = _median_with_stderr(xu)
        mh, sh = _median_with_stderr(xh)
        med_u[n], med_h[n] = mu, mh
        rep.add_estimate(f"median_x_uniform_n{n}", mu, stderr=su)
        rep.add_estimate(f"median_x_harmonic_n{n}", mh, stderr=sh)
        rep.add_estimate(
            f"quartiles_x_uniform_n{n}",
            list(np.percentile(xu, [25, 75])),
            exact=True,
        )
    n_max = max(cfg["n_values"])
    defect = max(r[5] for r in rep.raw_rows)
    rep.add_estimate("max_mass_defect", defect, exact=True)
    rep.add_check("mass_normalized", defect < 1e-12, f"max defect {defect:.2e}")
    rep.add_check(
        "exponent_ordering",
        med_h[n_max] < 1.0 < med_u[n_max],
        f"median_harm={med_h[n_max]:.4f} < 1 < median_unif={med_u[n_max]:.4f}",
    )
    n_min = min(cfg["n_values"])
    rep.add_check(
        "uniform_median_drifts_up",
        med_u[n_max] > med_u[n_min],
        f"{med_u[n_min]:.4f} -> {med_u[n_max]:.4f}",
    )
    return rep


# ----------------------------------------------------------------------
# experiment: yaglom
# ----------------------------------------------------------------------
def _yaglom_chunk(task):
    (kind, pmf, n, seed), lo, hi = task
    dist = make_distribution(kind, pmf) if kind == "custom" else make_distribution(kind)
    surv = survival_table(dist, n)
    rows = []
    for i in range(lo, hi):
        rng = substream(seed, _T_SAMPLE, i)
        counts = sample_reduced_counts(dist, n, rng, survival=surv)
        rows.append((i, int(counts[-1].sum())))
    return rows


def exp_yaglom(cfg: dict) -> ExperimentReport:
    """Level population of T^(n) over n against the exponential limit law."""
    rep = ExperimentReport("yaglom", cfg["seed"], cfg["threads"], dict(cfg))
    rep.raw_header = ["sample", "level_population"]
    dist = _dist_from_config(cfg)
    n = cfg["n"]
    payload = (cfg["offspring"], cfg.get("pmf"), n, cfg["seed"])
    rows = run_chunked(_yaglom_chunk, payload, cfg["samples"], cfg["threads"])
    rep.raw_rows = rows
    scaled = np.array([r[1] for r in rows]) / n
    rate = 2.0 / dist.sigma2
    ks = stats.ks_statistic(scaled, stats.exponential_cdf(rate))
    rep.add_estimate("mean_scaled_population", float(scaled.mean()),
                     stderr=float(scaled.std(ddof=1) / math.sqrt(len(scaled))))
    rep.add_estimate("ks_distance_vs_exponential", ks, exact=True)
    rep.add_check("yaglom_ks", ks < cfg["ks_tol"], f"KS={ks:.4f} < {cfg['ks_tol']}")
    return rep


# ----------------------------------------------------------------------
# experiment: kolmogorov
# ----------------------------------------------------------------------
def exp_kolmogorov(cfg: dict) -> ExperimentReport:
    """Survival asymptotics n q_n sigma^2 / 2 -> 1 for all three families."""
    rep = ExperimentReport("kolmogorov", cfg["seed"], cfg["threads"], dict(cfg))
    rep.raw_header = ["family", "n", "q_n", "normalized"]
    n = cfg["n"]
    for kind in FAMILIES:
        dist = make_distribution(kind)
        q = survival_table(dist, n)
        val = n * q[n] * dist.sigma2 / 2.0
        rep.raw_rows.append((kind, n, q[n], val))
        rep.add_estimate(f"n_qn_sigma2_half_{kind}", val, exact=True)
        rep.add_check(
            f"kolmogorov_{kind}",
            abs(val - 1.0) < cfg["tol"],
            f"|{val:.6f} - 1| < {cfg['tol']}",
        )
    return rep


# ----------------------------------------------------------------------
# experiment: conductance convergence / universality
# ----------------------------------------------------------------------
def _conductance_chunk(task):
    (kind, pmf, n, seed, tag), lo, hi = task
    dist = make_distribution(kind, pmf) if kind == "custom" else make_distribution(kind)
    surv = survival_table(dist, n)
    rows = []
    for i in range(lo, hi):
        rng = substream(seed, _T_SAMPLE, tag, i)
        counts = sample_reduced_counts(dist, n, rng, survival=surv)
        c_root = reduced_root_conductance(counts)
        rows.append((kind, i, n * c_root / (1.0 + c_root)))
    return rows


def _reference_pool(cfg, seed_tag: int) -> rde.SamplePool:
    rng = substream(cfg["seed"], _T_POOL, seed_tag)
    return rde.run_gamma(cfg["pool_size"], cfg["burn_in"], rng)


def exp_conductance_cv(cfg: dict) -> ExperimentReport:
    """n C_n(T*n) against the stationary conductance law, for every family."""
    rep = ExperimentReport("conductance_cv", cfg["seed"], cfg["threads"], dict(cfg))
    rep.raw_header = ["family", "sample", "n_conductance"]
    pool = _reference_pool(cfg, 0)
    samples_by_family = {}
    for tag, kind in enumerate(FAMILIES):
        payload = (kind, None, cfg["n"], cfg["seed"], tag)
        rows = run_chunked(_conductance_chunk, payload, cfg["samples"], cfg["threads"])
        rep.raw_rows.extend(rows)
        vals = np.array([r[2] for r in rows])
        samples_by_family[kind] = vals
        w1 = stats.wasserstein1(vals, pool.values)
        m2 = float(np.mean(vals**2))
        rep.add_estimate(f"mean_nC_{kind}", float(vals.mean()),
                         stderr=float(vals.std(ddof=1) / math.sqrt(len(vals))))
        rep.add_estimate(f"w1_vs_pool_{kind}", w1, exact=True)
        rep.add_estimate(f"second_moment_{kind}", m2, exact=True)
        rep.add_check(f"w1_{kind}", w1 < cfg["w1_tol"], f"W1={w1:.4f} < {cfg['w1_tol']}")
        rep.add_check(
            f"second_moment_{kind}",
            m2 <= cfg["second_moment_cap"],
            f"E[(nC)^2]={m2:.3f} <= {cfg['second_moment_cap']}",
        )
    for a in range(len(FAMILIES)):
        for b in range(a + 1, len(FAMILIES)):
            ka, kb = FAMILIES[a], FAMILIES[b]
            d = stats.ks_statistic_two_sample(samples_by_family[ka], samples_by_family[kb])
            rep.add_estimate(f"ks_{ka}_{kb}", d, exact=True)
            rep.add_check(f"ks_{ka}_{kb}", d < cfg["ks_tol"], f"KS={d:.4f} < {cfg['ks_tol']}")
    return rep


# ----------------------------------------------------------------------
# experiment: k_n asymptotics and law agreement
# ----------------------------------------------------------------------
def _kn_tree_chunk(task):
    (kind, n, seed), lo, hi = task
    dist = make_distribution(kind)
    rows = []
    for i in range(lo, hi):
        rng = substream(seed, _T_SAMPLE, 0, i)
        prefix = sample_backward_prefix(dist, n, rng)
        rows.append((i, "tree", extract_m_sequence(prefix).k_n))
    return rows


def _kn_fast_chunk(task):
    (kind, n, seed), lo, hi = task
    dist = make_distribution(kind)
    surv = survival_table(dist, n)
    rows = []
    for i in range(lo, hi):
        rng = substream(seed, _T_SAMPLE, 1, i)
        rows.append((i, "fast", simulate_kn_fast(dist, n, rng, survival=surv).k_n))
    return rows


def exp_kn(cfg: dict) -> ExperimentReport:
    """Mark-count growth k_n / (2 log n) and tree-vs-Bernoulli law agreement."""
    rep = ExperimentReport("kn", cfg["seed"], cfg["threads"], dict(cfg))
    rep.raw_header = ["sample", "sampler", "k_n"]
    dist = _dist_from_config(cfg)
    surv = survival_table(dist, cfg["n_fast"])
    ratios = np.empty(cfg["runs_fast"])
    for i in range(cfg["runs_fast"]):
        rng = substream(cfg["seed"], _T_AUX, i)
        ratios[i] = simulate_kn_fast(dist, cfg["n_fast"], rng, survival=surv).k_n
    ratios /= 2.0 * math.log(cfg["n_fast"])
    mean_ratio = float(ratios.mean())
    rep.add_estimate("mean_kn_ratio", mean_ratio,
                     stderr=float(ratios.std(ddof=1) / math.sqrt(len(ratios))))
    rep.add_check(
        "kn_growth",
        cfg["ratio_lo"] <= mean_ratio <= cfg["ratio_hi"],
        f"mean k_n/(2 log n) = {mean_ratio:.4f} in [{cfg['ratio_lo']}, {cfg['ratio_hi']}]",
    )

    payload = (cfg["law_family"], cfg["n_law"], cfg["seed"])
    tree_rows = run_chunked(_kn_tree_chunk, payload, cfg["samples_tree"], cfg["threads"])
    fast_rows = run_chunked(_kn_fast_chunk, payload, cfg["samples_fast"], cfg["threads"])
    rep.raw_rows = tree_rows + fast_rows
    kn_tree = np.array([r[2] for r in tree_rows], dtype=float)
    kn_fast = np.array([r[2] for r in fast_rows], dtype=float)
    d = stats.ks_statistic_two_sample(kn_tree, kn_fast)
    p = stats.ks_pvalue_two_sample(d, len(kn_tree), len(kn_fast))
    rep.add_estimate("law_agreement_ks", d, exact=True)
    rep.add_estimate("law_agreement_p", p, exact=True)
    rep.add_check("kn_law_agreement", p > cfg["p_min"], f"KS p={p:.4f} > {cfg['p_min']}")
    return rep


# ----------------------------------------------------------------------
# experiment: ergodic averages along the backward spine
# ----------------------------------------------------------------------
def _ergodic_chunk(task):
    (kind, n, seed, q), lo, hi = task
    dist = make_distribution(kind)
    surv = SurvivalTable(q)
    rows = []
    for i in range(lo, hi):
        rng = substream(seed, _T_SAMPLE, 0, i)
        st = sample_spine_statistics(dist, n, rng, survival=surv, extend=True)
        qt = st.q_terms()
        rows.append((i, st.k_n, float(qt.sum()) / st.k_n if st.k_n >= 2 else float("nan")))
    return rows


def exp_ergodic_q(cfg: dict) -> ExperimentReport:
    """Ergodic mean of the Q-increments and the direct five-tuple limit."""
    rep = ExperimentReport("ergodic_q", cfg["seed"], cfg["threads"], dict(cfg))
    rep.raw_header = ["sample", "k_n", "q_bar"]
    dist = _dist_from_config(cfg)

    rng_pool = substream(cfg["seed"], _T_POOL, 0)
    gamma = rde.run_gamma(cfg["pool_size"], cfg["burn_in"], rng_pool)
    gamma_hat = rde.run_gamma_hat(gamma, cfg["burn_in"], rng_pool)
    lam, lam_se = rde.estimate_lambda_moment(gamma_hat)
    rep.add_estimate("lambda_hat", lam, stderr=lam_se)

    surv = survival_table(dist, cfg["n_spine"])
    payload = (cfg["offspring"], cfg["n_spine"], cfg["seed"], surv.q)
    rows = run_chunked(_ergodic_chunk, payload, cfg["prefixes"], cfg["threads"])
    rep.raw_rows.extend(rows)
    qbars = np.array([r[2] for r in rows])
    qbars = qbars[np.isfinite(qbars)]
    qbar_mean = float(qbars.mean())
    qbar_se = float(qbars.std(ddof=1) / math.sqrt(len(qbars)))
    rep.add_estimate("mean_q_bar", qbar_mean, stderr=qbar_se)
    rep.add_check(
        "ergodic_limit",
        abs(qbar_mean - lam / 2.0) < cfg["qbar_tol"],
        f"|{qbar_mean:.4f} - {lam / 2:.4f}| < {cfg['qbar_tol']}",
    )

    rng_q = substream(cfg["seed"], _T_AUX, 0)
    qi, qi_se = rde.estimate_Q_infinity(gamma_hat, gamma, rng_q, cfg["q_draws"])
    qi2, qi2_se = rde.estimate_Q_infinity_identity(gamma_hat, gamma, rng_q, cfg["q_draws"])
    rep.add_estimate("q_infinity", qi, stderr=qi_se)
    rep.add_estimate("q_infinity_identity", qi2, stderr=qi2_se)
    rep.add_check(
        "q_infinity_limit",
        abs(qi - lam / 2.0) < cfg["qinf_tol"],
        f"|{qi:.5f} - {lam / 2:.5f}| < {cfg['qinf_tol']}",
    )
    rep.add_check(
        "q_infinity_assemblies_agree",
        abs(qi - qi2) < 2.0 * math.hypot(qi_se, qi2_se) + 1e-4,
        f"|{qi:.5f} - {qi2:.5f}| vs 2 se",
    )

    # product formula vs absorbing-chain solve on honest prefixes
    worst = 0.0
    done = 0
    attempt = 0
    while done < cfg["product_prefixes"]:
        rng = substream(cfg["seed"], _T_AUX, 1, attempt)
        attempt += 1
        prefix = sample_backward_prefix(dist, cfg["product_n"], rng)
        mseq = extract_m_sequence(prefix)
        if mseq.k_n < 3:
            continue
        st = spine_statistics(prefix, mseq)
        k = mseq.k_n - 1
        diff = abs(st.p_product(k) - backward_hit_prob(prefix, mseq, k))
        worst = max(worst, diff)
        done += 1
    rep.add_estimate("product_formula_max_diff", worst, exact=True)
    rep.add_check(
        "product_formula",
        worst < cfg["product_tol"],
        f"max |p_k(product) - p_k(solve)| = {worst:.2e} < {cfg['product_tol']}",
    )
    return rep


# ----------------------------------------------------------------------
# experiment: the RDE suite
# ----------------------------------------------------------------------
def _delta_chunk(task):
    (tol, seed, hat), lo, hi = task
    rows = []
    for i in range(lo, hi):
        rng = substream(seed, _T_SAMPLE, 3 if hat else 2, i)
        if hat:
            rows.append((i, "delta_hat", cont.conductance_delta_hat_certified(tol, rng)))
        else:
            rows.append((i, "delta", cont.conductance_delta_certified(tol, rng)))
    return rows


def _yule_chunk(task):
    (r, seed), lo, hi = task
    rows = []
    for i in range(lo, hi):
        rng = substream(seed, _T_SAMPLE, 4, i)
        rows.append((i, "yule", float(cont.sample_yule_count(r, rng))))
    return rows


def exp_rde_suite(cfg: dict) -> ExperimentReport:
    """Population-dynamics solution of the conductance laws and all its checks."""
    rep = ExperimentReport("rde_suite", cfg["seed"], cfg["threads"], dict(cfg))
    rep.raw_header = ["index", "kind", "value"]
    rng = substream(cfg["seed"], _T_POOL, 0)
    size, burn = cfg["pool_size"], cfg["burn_in"]

    gamma = rde.run_gamma(size, burn, rng)
    hat = rde.run_gamma_hat(gamma, burn, rng)

    # stationarity: the same chains, twice the burn-in
    gamma2, hat2 = gamma, hat
    fit_gamma, fit_hat = [gamma.values], [hat.values]
    for step in range(burn):
        gamma2 = rde.step_gamma(gamma2, rng)
        hat2 = rde.step_gamma_hat(hat2, gamma2, rng)
        if step < cfg["fit_generations"] - 1:
            fit_gamma.append(gamma2.values)
            fit_hat.append(hat2.values)
    ks_g = stats.ks_statistic_two_sample(gamma.values, gamma2.values)
    ks_h = stats.ks_statistic_two_sample(hat.values, hat2.values)
    rep.add_estimate("stationarity_ks_gamma", ks_g, exact=True)
    rep.add_estimate("stationarity_ks_hat", ks_h, exact=True)
    rep.add_check("stationarity", max(ks_g, ks_h) < 0.01, f"KS(200 vs 400) <= {max(ks_g, ks_h):.4f}")

    # seed independence of the fixed point
    rng_alt = substream(cfg["seed"], _T_POOL, 1)
    gamma_inf = rde.run_gamma(size, burn, rng_alt, init="infinity")
    hat_inf = rde.run_gamma_hat(gamma_inf, burn, rng_alt, init="infinity")
    rep.add_estimate("gamma_mean_delta1_seed", gamma.mean(), stderr=gamma.stderr())
    rep.add_estimate("gamma_mean_infinity_seed", gamma_inf.mean(), stderr=gamma_inf.stderr())
    rep.add_check(
        "seed_independence_mean",
        abs(gamma.mean() - gamma_inf.mean()) < 0.005,
        f"|{gamma.mean():.5f} - {gamma_inf.mean():.5f}| < 0.005",
    )
    ks_seed = stats.ks_statistic_two_sample(hat.values, hat_inf.values)
    rep.add_estimate("seed_independence_ks_hat", ks_seed, exact=True)
    rep.add_check("seed_independence_law", ks_seed < 0.01, f"KS={ks_seed:.4f} < 0.01")

    # lambda and E[Chat]
    lam_m, lam_m_se = rde.estimate_lambda_moment(hat)
    lam_l, lam_l_se = rde.estimate_lambda_log(hat, gamma, rng)
    echat = hat.mean()
    rep.add_estimate("lambda_moment", lam_m, stderr=lam_m_se)
    rep.add_estimate("lambda_log", lam_l, stderr=lam_l_se)
    rep.add_estimate("e_chat", echat, stderr=hat.stderr())
    rep.add_check(
        "lambda_range",
        cfg["lambda_lo"] <= lam_m <= cfg["lambda_hi"] and cfg["lambda_lo"] <= lam_l <= cfg["lambda_hi"],
        f"moment {lam_m:.4f}, log {lam_l:.4f} in [{cfg['lambda_lo']}, {cfg['lambda_hi']}]",
    )
    rep.add_check(
        "lambda_estimators_agree",
        abs(lam_m - lam_l) < cfg["lambda_agree"],
        f"|{lam_m:.4f} - {lam_l:.4f}| < {cfg['lambda_agree']}",
    )
    rep.add_check(
        "e_chat_range",
        cfg["echat_lo"] <= echat <= cfg["echat_hi"],
        f"E[Chat]={echat:.4f} in [{cfg['echat_lo']}, {cfg['echat_hi']}]",
    )
    lower99 = lam_m - 2.326348 * lam_m_se
    rep.add_check("lambda_above_one", lower99 > 1.0, f"99% lower bound {lower99:.4f} > 1")

    # distributional identities
    gs = {
        "x": (lambda x: x, lambda x: np.ones_like(x)),
        "log": (np.log, lambda x: 1.0 / x),
        "x2": (lambda x: x**2, lambda x: 2.0 * x),
    }
    for name, (g, gp) in gs.items():
        res, se = rde.check_identity_g(hat, gamma, g, gp, rng)
        rep.add_estimate(f"identity_{name}_residual", res, stderr=se)
        rep.add_check(
            f"identity_{name}",
            abs(res) < cfg["identity_sigmas"] * se,
            f"|{res:.5f}| < {cfg['identity_sigmas']} x {se:.5f}",
        )

    for ell, resid, se in rde.laplace_ode_check(hat, gamma, cfg["ode_grid"]):
        rep.add_estimate(f"ode_residual_l{ell:g}", resid, stderr=se)
        rep.add_check(
            f"ode_l{ell:g}",
            abs(resid) < cfg["ode_sigmas"] * se,
            f"|{resid:.6f}| < {cfg['ode_sigmas']} x {se:.6f}",
        )

    # density fits on pooled post-burn-in generations
    fit = rde.fit_densities(np.concatenate(fit_gamma), np.concatenate(fit_hat))
    rep.add_estimate("A0", fit.a0, stderr=fit.a0_stderr)
    rep.add_estimate("K0", fit.k0, stderr=fit.k0_stderr)
    rep.add_estimate("density_argmax", fit.argmax_hat, exact=True)
    rep.add_estimate("first_bin_density", fit.first_bin_density_hat, exact=True)
    rep.add_check("A0_range", cfg["a0_lo"] <= fit.a0 <= cfg["a0_hi"],
                  f"A0={fit.a0:.4f} in [{cfg['a0_lo']}, {cfg['a0_hi']}]")
    rep.add_check("K0_range", cfg["k0_lo"] <= fit.k0 <= cfg["k0_hi"],
                  f"K0={fit.k0:.4f} in [{cfg['k0_lo']}, {cfg['k0_hi']}]")
    rep.add_check("density_argmax", cfg["argmax_lo"] <= fit.argmax_hat <= cfg["argmax_hi"],
                  f"argmax={fit.argmax_hat:.3f} in [{cfg['argmax_lo']}, {cfg['argmax_hi']}]")
    rep.add_check("density_vanishes_at_one", fit.first_bin_density_hat < cfg["first_bin_max"],
                  f"fhat near 1 = {fit.first_bin_density_hat:.4f} < {cfg['first_bin_max']}")

    # closed-form tail of the size-biased law on [1, 2]
    grid = np.linspace(1.05, 1.95, 10)
    emp = np.array([(hat.values >= t).mean() for t in grid])
    closed = (4.0 * grid - 2.0) / grid**2 * fit.a0 - 2.0 * fit.a0 + 1.0
    tail_dev = float(np.max(np.abs(emp - closed)))
    rep.add_estimate("tail_closed_form_max_dev", tail_dev, exact=True)
    rep.add_check("tail_closed_form", tail_dev < 0.01, f"max |F - closed| = {tail_dev:.4f} < 0.01")

    # tail ODE on [2, 3]: loose Monte Carlo check (window density estimate)
    for t, resid, se in rde.density_ode_check(hat, gamma, rng):
        rep.add_estimate(f"density_ode_residual_t{t:g}", resid, stderr=se)
        rep.add_check(
            f"density_ode_t{t:g}",
            abs(resid) < 5.0 * se,
            f"|{resid:.5f}| < 5 x {se:.5f}",
        )

    # raw per-sample output: a fixed-size snapshot of each stationary pool
    snap = min(10000, size)
    rep.raw_rows.extend((i, "gamma_pool", float(v)) for i, v in enumerate(gamma.values[:snap]))
    rep.raw_rows.extend((i, "hat_pool", float(v)) for i, v in enumerate(hat.values[:snap]))

    if cfg["continuum"]:
        rows = run_chunked(_delta_chunk, (cfg["delta_tol"], cfg["seed"], False),
                           cfg["delta_samples"], cfg["threads"])
        rep.raw_rows.extend(rows)
        delta_vals = np.array([r[2] for r in rows])
        w1 = stats.wasserstein1(delta_vals, gamma.values)
        rep.add_estimate("w1_delta_vs_pool", w1, exact=True)
        rep.add_check("continuum_delta_w1", w1 < cfg["delta_w1_tol"],
                      f"W1={w1:.4f} < {cfg['delta_w1_tol']}")

        rows = run_chunked(_delta_chunk, (cfg["delta_hat_tol"], cfg["seed"], True),
                           cfg["delta_hat_samples"], cfg["threads"])
        rep.raw_rows.extend(rows)
        hat_vals = np.array([r[2] for r in rows])
        mean_hat = float(hat_vals.mean())
        rep.add_estimate("mean_chat_continuum", mean_hat,
                         stderr=float(hat_vals.std(ddof=1) / math.sqrt(len(hat_vals))))
        rep.add_check("continuum_chat_mean",
                      cfg["echat_lo"] <= mean_hat <= cfg["echat_hi"],
                      f"mean={mean_hat:.4f} in [{cfg['echat_lo']}, {cfg['echat_hi']}]")

        rows = run_chunked(_yule_chunk, (cfg["yule_r"], cfg["seed"]),
                           cfg["yule_samples"], cfg["threads"])
        rep.raw_rows.extend(rows)
        scaled = np.array([r[2] for r in rows]) * math.exp(-cfg["yule_r"])
        ks = stats.ks_statistic(scaled, stats.exponential_cdf(1.0))
        rep.add_estimate("yule_ks_vs_exp", ks, exact=True)
        rep.add_check("yule_population_limit", ks < cfg["yule_ks_tol"],
                      f"KS={ks:.4f} < {cfg['yule_ks_tol']}")
    return rep


EXPERIMENTS = {
    "mass_exponents": exp_mass_exponents,
    "yaglom": exp_yaglom,
    "kolmogorov": exp_kolmogorov,
    "conductance_cv": exp_conductance_cv,
    "kn": exp_kn,
    "ergodic_q": exp_ergodic_q,
    "rde_suite": exp_rde_suite,
}


def run_experiment(experiment: str, cfg: dict) -> ExperimentReport:
    return EXPERIMENTS[experiment](cfg)
