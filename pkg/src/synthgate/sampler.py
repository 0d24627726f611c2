"""MCMC engines for the two synthesis regressions.

``fit_logistic`` runs adaptive random-walk Metropolis on a Bayesian logistic
regression; ``fit_linear`` runs a blocked Gibbs sampler on a Bayesian linear
regression with a Normal prior on the coefficients and a Gamma prior on the
precision. Both return a :class:`PosteriorChain` holding every iteration,
burn-in included, so draw selection can index by iteration number.
"""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from ._util import atomic_write_text, derive_rng, format_float
from .tabular import DesignMatrix

log = logging.getLogger(__name__)


class SamplerError(ValueError):
    pass


def _design_array(design) -> tuple[np.ndarray, tuple[str, ...]]:
    if isinstance(design, DesignMatrix):
        return design.matrix, design.names
    X = np.asarray(design, dtype=np.float64)
    if X.ndim != 2:
        raise SamplerError("design must be two-dimensional")
    return X, tuple(f"b{j}" for j in range(X.shape[1]))


def _prior_vector(value, p: int, what: str) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(value, dtype=np.float64), (p,)).copy()
    if what == "sd" and (arr <= 0).any():
        raise SamplerError("prior_sd must be positive")
    return arr


def check_full_rank(X: np.ndarray) -> None:
    if X.shape[0] == 0:
        raise SamplerError("design has no rows")
    rank = np.linalg.matrix_rank(X)
    if rank < X.shape[1]:
        sd = X.std(axis=0)
        flat = [j for j in range(1, X.shape[1]) if sd[j] == 0]
        hint = f"; zero-variance columns {flat}" if flat else ""
        raise SamplerError(f"design is rank deficient (rank {rank} < {X.shape[1]} columns{hint})")


@dataclass
class LogisticModelSpec:
    design: DesignMatrix | np.ndarray
    response: np.ndarray
    prior_mean: float | np.ndarray = 0.0
    prior_sd: float | np.ndarray = 1.0
    allow_empty: bool = False  # test-only: sample the prior when there are no rows

    def __post_init__(self):
        self.X, self.names = _design_array(self.design)
        self.response = np.asarray(self.response, dtype=np.float64)
        if self.response.shape != (self.X.shape[0],):
            raise SamplerError(f"response length {len(self.response)} != design rows {self.X.shape[0]}")
        if not np.isin(self.response, (0.0, 1.0)).all():
            raise SamplerError("logistic response must be 0/1")
        p = self.X.shape[1]
        self.mu0 = _prior_vector(self.prior_mean, p, "mean")
        self.sd0 = _prior_vector(self.prior_sd, p, "sd")


@dataclass
class LinearModelSpec:
    design: DesignMatrix | np.ndarray
    response: np.ndarray
    prior_mean: float | np.ndarray = 0.0
    prior_sd: float | np.ndarray = 1.0
    precision_shape: float = 1.0
    precision_rate: float = 1.0

    def __post_init__(self):
        self.X, self.names = _design_array(self.design)
        self.response = np.asarray(self.response, dtype=np.float64)
        if self.response.shape != (self.X.shape[0],):
            raise SamplerError(f"response length {len(self.response)} != design rows {self.X.shape[0]}")
        if not np.isfinite(self.response).all():
            raise SamplerError("linear response must be finite")
        if self.precision_shape <= 0 or self.precision_rate <= 0:
            raise SamplerError("precision_shape and precision_rate must be positive")
        p = self.X.shape[1]
        self.mu0 = _prior_vector(self.prior_mean, p, "mean")
        self.sd0 = _prior_vector(self.prior_sd, p, "sd")


@dataclass(frozen=True)
class McmcConfig:
    n_iterations: int = 20000
    burn_in: int = 5000
    adaptation_window: int = 100
    target_acceptance: float = 0.234
    seed: int = 0
    n_chains: int = 1

    def __post_init__(self):
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be positive")
        if not 0 <= self.burn_in < self.n_iterations:
            raise ValueError("burn_in must satisfy 0 <= burn_in < n_iterations")
        if not 0 < self.target_acceptance < 1:
            raise ValueError("target_acceptance must lie in (0, 1)")
        if self.adaptation_window < 1:
            raise ValueError("adaptation_window must be positive")
        if self.n_chains < 1:
            raise ValueError("n_chains must be positive")


@dataclass(frozen=True, eq=False)
class PosteriorChain:
    """All iterations of one chain; row ``t - 1`` holds iteration ``t``.

    For linear chains the last column of ``draws`` is sigma (a standard
    deviation, not a variance).
    """

    kind: str
    names: tuple[str, ...]
    draws: np.ndarray
    log_posterior: np.ndarray
    accepted: np.ndarray
    burn_in: int
    scale_trace: np.ndarray
    proposal_cov: np.ndarray | None = None
    chain_index: int = 0
    seed: int = 0

    @property
    def n_iterations(self) -> int:
        return self.draws.shape[0]

    @property
    def has_scale(self) -> bool:
        return self.kind == "linear"

    @property
    def n_coef(self) -> int:
        return self.draws.shape[1] - (1 if self.has_scale else 0)

    @property
    def post_burn_in(self) -> np.ndarray:
        return self.draws[self.burn_in:]

    @property
    def acceptance_rate(self) -> float:
        acc = self.accepted[self.burn_in:]
        return float(acc.mean()) if len(acc) else float("nan")

    def draw_at(self, iteration: int) -> "PosteriorDraw":
        if not 1 <= iteration <= self.n_iterations:
            raise IndexError(f"iteration {iteration} outside 1..{self.n_iterations}")
        row = self.draws[iteration - 1]
        if self.has_scale:
            return PosteriorDraw(row[:-1].copy(), float(row[-1]), iteration, self.chain_index)
        return PosteriorDraw(row.copy(), None, iteration, self.chain_index)

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["iteration", *self.names, "log_posterior", "accepted"])
        for t in range(self.n_iterations):
            w.writerow(
                [t + 1, *(format_float(x) for x in self.draws[t]), format_float(self.log_posterior[t]), int(self.accepted[t])]
            )
        return out.getvalue()

    def dump_csv(self, path) -> None:
        atomic_write_text(path, self.to_csv())


@dataclass(frozen=True)
class PosteriorDraw:
    coef: np.ndarray
    sigma: float | None = None
    iteration: int = 0
    chain_index: int = 0


def bernoulli_logit_logpmf(y: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """log Bernoulli(y | logit^-1(eta)) evaluated without overflow."""
    return y * eta - np.logaddexp(0.0, eta)


def _logistic_log_post(beta, X, y, mu0, prec0) -> float:
    eta = X @ beta
    d = beta - mu0
    return float(bernoulli_logit_logpmf(y, eta).sum() - 0.5 * np.dot(d * prec0, d))


def fit_logistic(spec: LogisticModelSpec, cfg: McmcConfig, chain: int = 0) -> PosteriorChain:
    """Adaptive random-walk Metropolis for Bayesian logistic regression.

    The proposal is a joint Gaussian. Its covariance starts at the inverse
    curvature of the log posterior at the prior mean and, during burn-in, is
    replaced every ``adaptation_window`` iterations by the running empirical
    covariance of the chain (re-estimated from scratch after the first third
    of burn-in); a Robbins-Monro recursion on the log scale factor
    steers acceptance toward ``cfg.target_acceptance``. Both are frozen after
    burn-in.
    """
    X, y = spec.X, spec.response
    n, p = X.shape
    if n == 0 and not spec.allow_empty:
        raise SamplerError("logistic model has no rows")
    if n > 0:
        check_full_rank(X)
    rng = derive_rng(cfg.seed, "logistic", chain)
    mu0, prec0 = spec.mu0, 1.0 / spec.sd0**2

    beta = mu0.copy()
    lp = _logistic_log_post(beta, X, y, mu0, prec0)
    if not np.isfinite(lp):
        raise SamplerError("log posterior is not finite at the initial point")

    # curvature at the start: X'WX with W = p(1-p), plus prior precision
    eta0 = X @ beta
    w0 = np.exp(eta0 - 2.0 * np.logaddexp(0.0, eta0))
    cov = np.linalg.inv((X * w0[:, None]).T @ X + np.diag(prec0))
    cov = 0.5 * (cov + cov.T)
    log_scale = np.log(2.38**2 / p)
    chol = np.linalg.cholesky(np.exp(log_scale) * cov)

    T = cfg.n_iterations
    draws = np.empty((T, p))
    lps = np.empty(T)
    accepted = np.zeros(T, dtype=bool)
    scale_trace = np.empty(T)
    run_n, run_mean, run_m2 = 0, np.zeros(p), np.zeros((p, p))
    # the empirical covariance restarts once the chain has left its starting point
    restart = cfg.burn_in // 3 if cfg.burn_in >= 6 * cfg.adaptation_window else -1
    target = cfg.target_acceptance
    jitter = 1e-10 * np.eye(p)

    z_all = rng.standard_normal((T, p))
    u_all = np.log(rng.random(T))
    for t in range(1, T + 1):
        prop = beta + chol @ z_all[t - 1]
        lp_prop = _logistic_log_post(prop, X, y, mu0, prec0)
        log_alpha = lp_prop - lp if np.isfinite(lp_prop) else -np.inf
        if u_all[t - 1] < log_alpha:
            beta, lp = prop, lp_prop
            accepted[t - 1] = True
        if t <= cfg.burn_in:
            alpha = float(np.exp(min(0.0, log_alpha)))
            log_scale += (alpha - target) / t**0.6
            if t == restart:
                run_n, run_mean, run_m2 = 0, np.zeros(p), np.zeros((p, p))
            run_n += 1
            delta = beta - run_mean
            run_mean += delta / run_n
            run_m2 += np.outer(delta, beta - run_mean)
            if t % cfg.adaptation_window == 0 and run_n >= 2 * cfg.adaptation_window:
                emp = run_m2 / (run_n - 1)
                try:
                    np.linalg.cholesky(emp + jitter)
                    cov = emp + jitter
                except np.linalg.LinAlgError:
                    pass
            try:
                chol = np.linalg.cholesky(np.exp(log_scale) * cov)
            except np.linalg.LinAlgError:
                chol = np.linalg.cholesky(np.exp(log_scale) * (cov + 1e-8 * np.eye(p)))
        draws[t - 1] = beta
        lps[t - 1] = lp
        scale_trace[t - 1] = np.exp(log_scale)

    out = PosteriorChain(
        kind="logistic",
        names=tuple(spec.names),
        draws=draws,
        log_posterior=lps,
        accepted=accepted,
        burn_in=cfg.burn_in,
        scale_trace=scale_trace,
        proposal_cov=np.exp(log_scale) * cov,
        chain_index=chain,
        seed=cfg.seed,
    )
    log.debug("logistic chain %d acceptance %.3f", chain, out.acceptance_rate)
    return out


def fit_linear(spec: LinearModelSpec, cfg: McmcConfig, chain: int = 0) -> PosteriorChain:
    """Blocked Gibbs sampler for Normal linear regression.

    Alternates the exact conditionals
    ``beta | tau ~ N(A^-1 (tau X'z + P0 mu0), A^-1)`` with
    ``A = tau X'X + P0`` and ``tau | beta ~ Gamma(a + n/2, b + SSR/2)``,
    where ``tau = 1/sigma^2`` and ``P0`` is the diagonal prior precision.
    """
    X, z = spec.X, spec.response
    n, p = X.shape
    if n < 2:
        raise SamplerError(f"linear model needs at least 2 rows, got {n}")
    check_full_rank(X)
    rng = derive_rng(cfg.seed, "linear", chain)
    mu0, prec0 = spec.mu0, 1.0 / spec.sd0**2
    a, b = spec.precision_shape, spec.precision_rate
    XtX = X.T @ X
    Xtz = X.T @ z
    P0mu0 = prec0 * mu0
    shape = a + 0.5 * n

    sd = float(z.std(ddof=1))
    tau = 1.0 / sd**2 if sd > 0 else 1.0

    T = cfg.n_iterations
    draws = np.empty((T, p + 1))
    lps = np.empty(T)
    z_all = rng.standard_normal((T, p))
    for t in range(T):
        A = tau * XtX
        A[np.diag_indices(p)] += prec0
        L = linalg.cholesky(A, lower=True)
        mean = linalg.cho_solve((L, True), tau * Xtz + P0mu0)
        beta = mean + linalg.solve_triangular(L.T, z_all[t], lower=False)
        resid = z - X @ beta
        ssr = float(resid @ resid)
        tau = rng.gamma(shape, 1.0 / (b + 0.5 * ssr))
        draws[t, :p] = beta
        draws[t, p] = 1.0 / np.sqrt(tau)
        d = beta - mu0
        lps[t] = (
            0.5 * n * np.log(tau) - 0.5 * tau * ssr
            - 0.5 * float(np.dot(d * prec0, d))
            + (a - 1.0) * np.log(tau) - b * tau
        )

    return PosteriorChain(
        kind="linear",
        names=tuple(spec.names) + ("sigma",),
        draws=draws,
        log_posterior=lps,
        accepted=np.ones(T, dtype=bool),
        burn_in=cfg.burn_in,
        scale_trace=np.ones(T),
        chain_index=chain,
        seed=cfg.seed,
    )


def run_chains(
    fit: Callable[..., PosteriorChain],
    spec,
    cfg: McmcConfig,
    workers: int = 1,
) -> list[PosteriorChain]:
    """Run ``cfg.n_chains`` independent chains; results do not depend on ``workers``."""
    idx = range(cfg.n_chains)
    if workers <= 1 or cfg.n_chains == 1:
        return [fit(spec, cfg, chain=c) for c in idx]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda c: fit(spec, cfg, chain=c), idx))


@dataclass(frozen=True)
class ChainDiagnostics:
    names: tuple[str, ...]
    ess: np.ndarray
    rhat: np.ndarray
    acceptance_rate: float
    flags: tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "parameters": {
                name: {"ess": float(e), "rhat": float(r)} for name, e, r in zip(self.names, self.ess, self.rhat)
            },
            "acceptance_rate": self.acceptance_rate,
            "flags": list(self.flags),
        }


def _autocovariance(x: np.ndarray) -> np.ndarray:
    n = len(x)
    nfft = 1 << (2 * n - 1).bit_length()
    xc = x - x.mean()
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n]
    return acov / n


def effective_sample_size(chains: np.ndarray) -> tuple[float, bool]:
    """Multi-chain ESS with Geyer's initial positive (monotone) sequence.

    ``chains`` has shape ``(n_chains, n_draws)``. Returns ``(ess, degenerate)``;
    a chain with no variation reports ESS 1 and ``degenerate=True``.
    """
    chains = np.atleast_2d(np.asarray(chains, dtype=np.float64))
    m, n = chains.shape
    acov = np.array([_autocovariance(c) for c in chains])
    chain_var = acov[:, 0] * n / max(n - 1, 1)
    W = chain_var.mean()
    if not np.isfinite(W) or W <= 0:
        return 1.0, True
    var_plus = W * (n - 1) / n
    if m > 1:
        var_plus += chains.mean(axis=1).var(ddof=1)
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # pair sums Gamma_k = rho_2k + rho_2k+1, kept while positive and forced monotone
    total = 0.0
    prev = np.inf
    k = 0
    while 2 * k + 1 < n:
        g = rho[2 * k] + rho[2 * k + 1]
        if g <= 0:
            break
        g = min(g, prev)
        total += g
        prev = g
        k += 1
    tau = -1.0 + 2.0 * total
    tau = max(tau, 1.0 / np.log10(max(m * n, 10)))
    return float(max(m * n / tau, 1.0)), False


def potential_scale_reduction(chains: np.ndarray) -> float:
    """Gelman-Rubin R-hat across chains; a single chain is split into halves."""
    chains = np.atleast_2d(np.asarray(chains, dtype=np.float64))
    if chains.shape[0] == 1:
        half = chains.shape[1] // 2
        chains = np.vstack([chains[0, :half], chains[0, half : 2 * half]])
    m, n = chains.shape
    W = chains.var(axis=1, ddof=1).mean()
    B = n * chains.mean(axis=1).var(ddof=1)
    if W <= 0:
        return 1.0 if B <= 0 else float("inf")
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def diagnostics(chains: Sequence[PosteriorChain] | PosteriorChain, min_draws: int = 100) -> ChainDiagnostics:
    if isinstance(chains, PosteriorChain):
        chains = [chains]
    if not chains:
        raise SamplerError("need at least one chain")
    kept = [c.post_burn_in for c in chains]
    n = min(len(k) for k in kept)
    if n < min_draws:
        raise SamplerError(f"need at least {min_draws} post-burn-in draws, got {n}")
    stacked = np.stack([k[:n] for k in kept])  # (chains, draws, params)
    ess, rhat, flags = [], [], []
    for j, name in enumerate(chains[0].names):
        e, degenerate = effective_sample_size(stacked[:, :, j])
        if degenerate:
            flags.append(f"constant-chain:{name}")
        ess.append(e)
        rhat.append(potential_scale_reduction(stacked[:, :, j]))
    acc = float(np.mean([c.acceptance_rate for c in chains]))
    return ChainDiagnostics(tuple(chains[0].names), np.array(ess), np.array(rhat), acc, tuple(flags))


def select_draws(chain: PosteriorChain, m: int, gap: int) -> list[PosteriorDraw]:
    """Draws at iterations ``burn_in + gap, burn_in + 2*gap, ..., burn_in + m*gap``."""
    if m < 1:
        raise SamplerError("m must be at least 1")
    if gap < 1:
        raise SamplerError("gap must be at least 1")
    last = chain.burn_in + m * gap
    if last > chain.n_iterations:
        raise SamplerError(
            f"chain too short: burn_in {chain.burn_in} + {m}*{gap} = {last} > {chain.n_iterations} iterations"
        )
    return [chain.draw_at(chain.burn_in + k * gap) for k in range(1, m + 1)]


def default_gap(cfg: McmcConfig, m: int) -> int:
    return (cfg.n_iterations - cfg.burn_in) // m
