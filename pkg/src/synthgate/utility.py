"""Utility of a synthetic release relative to the original data.

Global measures compare whole datasets (propensity score, ECDF gaps);
analysis-specific measures compare confidence intervals for the mean,
quantiles and regression coefficients, with the synthetic intervals formed by
the combining rules for partially synthetic data.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats
from scipy.special import expit

from ._util import derive_rng, to_jsonable
from .synth import SyntheticRelease
from .tabular import Dataset, EncodingOptions, design_matrix, encode_variable

log = logging.getLogger(__name__)

RIDGE = 1e-8


# ---------------------------------------------------------------------------
# propensity score


@dataclass(frozen=True)
class PropensityResult:
    u_p: float
    p_hat: np.ndarray
    separated: bool
    converged: bool
    iterations: int


def propensity_score_measure(p_hat: np.ndarray) -> float:
    p_hat = np.asarray(p_hat, dtype=np.float64)
    return float(np.mean((p_hat - 0.5) ** 2))


def logistic_irls(
    X: np.ndarray, y: np.ndarray, ridge: float = RIDGE, max_iter: int = 200, tol: float = 1e-10
) -> tuple[np.ndarray, bool, int]:
    """Ridge-stabilized maximum likelihood logistic fit by Newton/IRLS.

    Returns ``(beta, converged, iterations)``.
    """
    n, p = X.shape
    beta = np.zeros(p)
    penalty = ridge * np.eye(p)
    for it in range(1, max_iter + 1):
        eta = X @ beta
        mu = expit(eta)
        w = mu * (1.0 - mu)
        grad = X.T @ (y - mu) - ridge * beta
        H = (X * w[:, None]).T @ X + penalty
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        beta = beta + step
        if np.max(np.abs(step)) <= tol * (1.0 + np.max(np.abs(beta))):
            return beta, True, it
    return beta, False, max_iter


def _standardize_columns(X: np.ndarray) -> np.ndarray:
    X = X.copy()
    for j in range(1, X.shape[1]):
        sd = X[:, j].std()
        X[:, j] = (X[:, j] - X[:, j].mean()) / sd if sd > 0 else 0.0
    return X


def propensity_u_p(
    original: Dataset,
    synthetic: Dataset,
    covariates: Sequence[str] | None = None,
    include_target: bool = True,
    ridge: float = RIDGE,
) -> PropensityResult:
    """Propensity score utility of one original/synthetic pair.

    The 2n stacked rows get a membership label (0 original, 1 synthetic) and
    a main-effects logistic regression on the target and ``covariates``
    (default: every predictor) estimates each row's probability of being
    synthetic. ``U_p`` is the mean squared distance of those probabilities
    from 1/2.
    """
    if original.n != synthetic.n:
        raise ValueError(f"datasets differ in size: {original.n} vs {synthetic.n}")
    if original.names != synthetic.names:
        raise ValueError("datasets do not share a schema")
    names = [v.name for v in original.predictors] if covariates is None else list(covariates)
    n = original.n
    blocks = [np.ones((2 * n, 1))]
    if include_target:
        tgt = np.concatenate([original.target_values, synthetic.target_values])
        blocks.append(tgt[:, None])
    for name in names:
        var = original.variable(name)
        vals = np.concatenate([original[name], synthetic[name]])
        col, _, _ = encode_variable(vals, var, EncodingOptions(standardize=False))
        blocks.append(col)
    X = _standardize_columns(np.hstack(blocks))
    y = np.concatenate([np.zeros(n), np.ones(n)])
    beta, converged, iters = logistic_irls(X, y, ridge=ridge)
    eta = X @ beta
    p_hat = expit(eta)
    split = eta[:n].max() < eta[n:].min() or eta[n:].max() < eta[:n].min()
    separated = bool(split) or not converged
    if separated:
        log.warning("propensity model shows (quasi-)separation; score uses the ridge-stabilized fit")
    return PropensityResult(propensity_score_measure(p_hat), p_hat, separated, converged, iters)


# ---------------------------------------------------------------------------
# empirical CDF


def ecdf_measures(original: np.ndarray, synthetic: np.ndarray) -> tuple[float, float]:
    """Max and mean squared gap between the two ECDFs over the merged points.

    Differences are accumulated as exact integers, so both results are
    correctly rounded.
    """
    o = np.sort(np.asarray(original, dtype=np.float64))
    s = np.sort(np.asarray(synthetic, dtype=np.float64))
    if len(o) == 0 or len(s) == 0:
        raise ValueError("ECDF measures need non-empty inputs")
    merged = np.concatenate([o, s])
    no, ns = len(o), len(s)
    co = np.searchsorted(o, merged, side="right").astype(np.int64)
    cs = np.searchsorted(s, merged, side="right").astype(np.int64)
    num = co * ns - cs * no  # = (D_O - D_S) * no * ns
    denom = no * ns
    u_m = int(np.abs(num).max()) / denom
    sq = sum(int(x) * int(x) for x in num)
    u_s = sq / (denom * denom * len(merged))
    return u_m, u_s


# ---------------------------------------------------------------------------
# combining rules and intervals


@dataclass(frozen=True)
class IntervalEstimate:
    point: float
    low: float
    high: float
    source: str = "original"

    def __post_init__(self):
        if not self.low <= self.point <= self.high:
            raise ValueError(f"interval [{self.low}, {self.high}] does not contain point {self.point}")

    def to_dict(self) -> dict:
        return {"point": self.point, "low": self.low, "high": self.high, "source": self.source}


@dataclass(frozen=True)
class CombinedEstimate:
    q_bar_m: float
    b_m: float
    v_bar_m: float
    T_p: float
    v_p: float
    ci_low: float
    ci_high: float
    level: float = 0.95
    m: int = 0
    degenerate: bool = False

    def interval(self) -> IntervalEstimate:
        return IntervalEstimate(self.q_bar_m, self.ci_low, self.ci_high, "synthetic-combined")

    def to_dict(self) -> dict:
        return to_jsonable(self.__dict__)


def combine(q: Sequence[float], v: Sequence[float], level: float = 0.95) -> CombinedEstimate:
    """Combining rules for partially synthetic data.

    ``T_p = b_m/m + v_bar_m`` with a t reference on
    ``(m-1)(1 + v_bar_m/(b_m/m))`` degrees of freedom. When ``b_m`` is 0 the
    degrees of freedom are infinite and the normal quantile is used.
    """
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    m = len(q)
    if m < 2:
        raise ValueError("combining rules need m >= 2")
    if v.shape != q.shape:
        raise ValueError("q and v must have the same length")
    if (v < 0).any():
        raise ValueError("variance estimates must be non-negative")
    if (q == q[0]).all():
        q_bar, b_m = float(q[0]), 0.0
    else:
        q_bar = float(q.sum() / m)
        b_m = float(((q - q_bar) ** 2).sum() / (m - 1))
    v_bar = float(v.sum() / m)
    T_p = b_m / m + v_bar
    tail = 1.0 - (1.0 - level) / 2.0
    if b_m == 0.0:
        v_p = float("inf")
        crit = stats.norm.ppf(tail)
        degenerate = True
    else:
        v_p = (m - 1) * (1.0 + v_bar / (b_m / m))
        crit = stats.t.ppf(tail, v_p)
        degenerate = False
    half = float(crit * np.sqrt(T_p))
    return CombinedEstimate(q_bar, b_m, v_bar, T_p, v_p, q_bar - half, q_bar + half, level, m, degenerate)


def interval_overlap(orig: IntervalEstimate, synth: IntervalEstimate) -> float:
    """Interval overlap; 1 for identical intervals, negative when disjoint."""
    wo = orig.high - orig.low
    ws = synth.high - synth.low
    if not (wo > 0 and ws > 0):
        raise ValueError("interval overlap needs intervals of positive width")
    inter = min(orig.high, synth.high) - max(orig.low, synth.low)
    return inter / (2.0 * wo) + inter / (2.0 * ws)


def normal_interval(q: float, v: float, level: float, source: str = "original") -> IntervalEstimate:
    half = float(stats.norm.ppf(1.0 - (1.0 - level) / 2.0) * np.sqrt(v))
    return IntervalEstimate(q, q - half, q + half, source)


def mean_estimate(target: np.ndarray) -> tuple[float, float]:
    x = np.asarray(target, dtype=np.float64)
    if len(x) == 0:
        raise ValueError("mean of an empty vector")
    if len(x) == 1:
        return float(x[0]), 0.0
    return float(x.mean()), float(x.var(ddof=1) / len(x))


@dataclass(frozen=True)
class BootstrapQuantile:
    q_level: float
    point: float
    variance: float
    low: float
    high: float
    boot_mean: float

    def interval(self, source: str = "original") -> IntervalEstimate:
        return IntervalEstimate(self.point, min(self.low, self.point), max(self.high, self.point), source)


def bootstrap_quantile(
    target: np.ndarray,
    q_level: float | Sequence[float],
    B: int = 1000,
    level: float = 0.95,
    rng: np.random.Generator | None = None,
) -> BootstrapQuantile | list[BootstrapQuantile]:
    """Type-7 quantile with bootstrap variance and percentile interval.

    Passing several ``q_level`` values reuses one set of resamples and returns
    a list.
    """
    x = np.asarray(target, dtype=np.float64)
    if len(x) == 0:
        raise ValueError("quantile of an empty vector")
    scalar = np.isscalar(q_level)
    levels = np.atleast_1d(np.asarray(q_level, dtype=np.float64))
    if ((levels <= 0) | (levels >= 1)).any():
        raise ValueError("q_level must lie in (0, 1)")
    if B < 100:
        raise ValueError("B must be at least 100")
    rng = rng if rng is not None else np.random.default_rng(0)
    points = np.quantile(x, levels)
    reps = np.empty((B, len(levels)))
    chunk = max(1, 4_000_000 // max(len(x), 1))
    for start in range(0, B, chunk):
        stop = min(B, start + chunk)
        idx = rng.integers(0, len(x), size=(stop - start, len(x)))
        reps[start:stop] = np.quantile(x[idx], levels, axis=1).T
    alpha = (1.0 - level) / 2.0
    out = []
    for j, ql in enumerate(levels):
        r = reps[:, j]
        lo, hi = np.quantile(r, [alpha, 1.0 - alpha])
        out.append(BootstrapQuantile(float(ql), float(points[j]), float(r.var(ddof=1)), float(lo), float(hi), float(r.mean())))
    return out[0] if scalar else out


@dataclass(frozen=True)
class OlsResult:
    names: tuple[str, ...]
    coef: np.ndarray
    variance: np.ndarray
    dof: int


def ols_coefficients(ds: Dataset, log_target: bool = False, offset: float = 1.0) -> OlsResult:
    """OLS of the target (raw by default) on the dummy-coded, unstandardized predictors."""
    dm = design_matrix(ds, EncodingOptions(standardize=False))
    X = dm.matrix
    y = ds.target_values
    if log_target:
        y = np.log(y + offset)
    n, p = X.shape
    if np.linalg.matrix_rank(X) < p:
        raise ValueError(f"regression design is rank deficient ({p} columns)")
    if n <= p:
        raise ValueError(f"need more rows ({n}) than coefficients ({p})")
    Q, R = np.linalg.qr(X)
    coef = np.linalg.solve(R, Q.T @ y)
    resid = y - X @ coef
    s2 = float(resid @ resid) / (n - p)
    Rinv = np.linalg.inv(R)
    var = s2 * np.sum(Rinv**2, axis=1)
    return OlsResult(dm.names, coef, var, n - p)


# ---------------------------------------------------------------------------
# report


@dataclass(frozen=True)
class UtilityConfig:
    quantiles: tuple[float, ...] = (0.10, 0.80)
    bootstrap_b: int = 1000
    level: float = 0.95
    regression: bool = True
    regression_log: bool = False
    seed: int = 0
    grid_points: int = 512
    plots: bool = True
    workers: int = 1


@dataclass(frozen=True)
class GlobalUtility:
    u_p: float
    u_m: float
    u_s: float
    per_vector: list[dict]

    def to_dict(self) -> dict:
        return to_jsonable(self.__dict__)


@dataclass
class UtilityReport:
    global_: dict[str, GlobalUtility]
    analyses: dict[str, dict]
    plot_data: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return to_jsonable(
            {
                "global": {k: g.to_dict() for k, g in self.global_.items()},
                "analyses": self.analyses,
                "plot_data": {k: v for k, v in self.plot_data.items() if k != "density"},
                "config": self.config,
            }
        )


def global_utility(original: Dataset, release: SyntheticRelease, workers: int = 1) -> GlobalUtility:
    def one(ell):
        syn = release.dataset(original, ell)
        prop = propensity_u_p(original, syn)
        u_m, u_s = ecdf_measures(original.target_values, release.vectors[ell])
        return {"vector": ell + 1, "u_p": prop.u_p, "u_m": u_m, "u_s": u_s, "separated": prop.separated}

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, range(release.m)))
    else:
        rows = [one(ell) for ell in range(release.m)]
    mean = lambda key: float(sum(r[key] for r in rows) / len(rows))  # noqa: E731
    return GlobalUtility(mean("u_p"), mean("u_m"), mean("u_s"), rows)


def _analysis_entry(orig: IntervalEstimate, comb: CombinedEstimate, extra: dict | None = None) -> dict:
    syn = comb.interval()
    try:
        overlap = interval_overlap(orig, syn)
    except ValueError:
        overlap = float("nan")
    entry = {"original": orig.to_dict(), "synthetic": syn.to_dict(), "combined": comb.to_dict(), "overlap": overlap}
    if extra:
        entry.update(extra)
    return entry


def _quantile_key(q: float) -> str:
    return f"quantile_{q:g}"


def analysis_measures(
    original: Dataset, releases: Mapping[str, SyntheticRelease], cfg: UtilityConfig
) -> dict[str, dict]:
    """Per-analysis interval comparison: ``analyses[name][method]``.

    Every bootstrap (original and each synthetic vector) reuses the same
    resample indices, so identical vectors get identical variances.
    """
    y = original.target_values
    out: dict[str, dict] = {}

    q0, v0 = mean_estimate(y)
    orig_mean = normal_interval(q0, v0, cfg.level)
    out["mean"] = {}

    orig_q = []
    if cfg.quantiles:
        orig_q = bootstrap_quantile(y, list(cfg.quantiles), cfg.bootstrap_b, cfg.level, derive_rng(cfg.seed, "bootstrap"))
        for bq in orig_q:
            out[_quantile_key(bq.q_level)] = {}

    orig_ols = None
    if cfg.regression:
        orig_ols = ols_coefficients(original, cfg.regression_log)
        for name in orig_ols.names:
            out[f"coef:{name}"] = {}

    for method, rel in releases.items():
        m = rel.m
        means = [mean_estimate(rel.vectors[ell]) for ell in range(m)]
        comb = combine([a for a, _ in means], [b for _, b in means], cfg.level)
        out["mean"][method] = _analysis_entry(orig_mean, comb)

        if cfg.quantiles:
            per = [
                bootstrap_quantile(
                    rel.vectors[ell], list(cfg.quantiles), cfg.bootstrap_b, cfg.level,
                    derive_rng(cfg.seed, "bootstrap"),
                )
                for ell in range(m)
            ]
            for j, bq in enumerate(orig_q):
                comb = combine([p[j].point for p in per], [p[j].variance for p in per], cfg.level)
                out[_quantile_key(bq.q_level)][method] = _analysis_entry(
                    bq.interval(), comb, {"original_bootstrap_mean": bq.boot_mean}
                )

        if orig_ols is not None:
            fits = [ols_coefficients(rel.dataset(original, ell), cfg.regression_log) for ell in range(m)]
            for j, name in enumerate(orig_ols.names):
                orig_iv = normal_interval(float(orig_ols.coef[j]), float(orig_ols.variance[j]), cfg.level)
                comb = combine([f.coef[j] for f in fits], [f.variance[j] for f in fits], cfg.level)
                out[f"coef:{name}"][method] = _analysis_entry(orig_iv, comb)
    return out


def marginal_plot_data(
    original: Dataset, releases: Mapping[str, SyntheticRelease], seed: int = 0, grid_points: int = 512
) -> dict:
    """Kernel densities on a shared grid and violin summaries.

    Each synthetic method contributes one randomly selected vector.
    """
    sources = {"original": original.target_values}
    chosen = {}
    for method, rel in releases.items():
        ell = int(derive_rng(seed, "plot", method).integers(rel.m))
        chosen[method] = ell + 1
        sources[method] = rel.vectors[ell]
    lo = min(float(v.min()) for v in sources.values())
    hi = max(float(v.max()) for v in sources.values())
    grid = np.linspace(lo, hi, grid_points)
    density = {}
    summary = {}
    for name, vals in sources.items():
        if np.ptp(vals) > 0:
            density[name] = stats.gaussian_kde(vals)(grid)
        else:
            density[name] = np.zeros_like(grid)
        q1, med, q3 = np.quantile(vals, [0.25, 0.5, 0.75])
        summary[name] = {
            "min": float(vals.min()), "q1": float(q1), "median": float(med), "q3": float(q3),
            "max": float(vals.max()), "mean": float(vals.mean()), "zero_rate": float(np.mean(vals == 0)),
        }
    return {"grid": grid, "density": density, "violin_summary": summary, "selected_vector": chosen}


def utility_report(
    original: Dataset,
    releases: Mapping[str, SyntheticRelease] | SyntheticRelease,
    cfg: UtilityConfig | None = None,
) -> UtilityReport:
    cfg = cfg or UtilityConfig()
    if isinstance(releases, SyntheticRelease):
        releases = {releases.method: releases}
    for method, rel in releases.items():
        if rel.n != original.n:
            raise ValueError(f"{method} release has {rel.n} rows, original has {original.n}")
    glob = {method: global_utility(original, rel, cfg.workers) for method, rel in releases.items()}
    analyses = analysis_measures(original, releases, cfg)
    plots = marginal_plot_data(original, releases, cfg.seed, cfg.grid_points) if cfg.plots else {}
    echo = {k: v for k, v in cfg.__dict__.items() if k != "workers"}
    return UtilityReport(glob, analyses, plots, to_jsonable(echo))
