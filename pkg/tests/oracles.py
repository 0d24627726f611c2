"""Brute-force reference implementations used by the tests."""

from fractions import Fraction

import numpy as np
from scipy import integrate, special, stats


def ecdf_oracle(original, synthetic):
    """O(n^2) ECDF gaps with exact rational arithmetic."""
    merged = list(original) + list(synthetic)
    no, ns = len(original), len(synthetic)
    gaps = []
    for z in merged:
        d_o = Fraction(sum(1 for x in original if x <= z), no)
        d_s = Fraction(sum(1 for x in synthetic if x <= z), ns)
        gaps.append(d_o - d_s)
    u_m = max(abs(g) for g in gaps)
    u_s = sum(g * g for g in gaps) / len(merged)
    return float(u_m), float(u_s)


def logistic_intercept_grid(y, prior_sd=1.0, lo=-10.0, hi=10.0, points=20001):
    """Posterior mean and sd of the intercept of an intercept-only logistic model."""
    b = np.linspace(lo, hi, points)
    k, n = float(np.sum(y)), len(y)
    logp = k * -np.logaddexp(0, -b) + (n - k) * -np.logaddexp(0, b) + stats.norm.logpdf(b, 0, prior_sd)
    w = np.exp(logp - logp.max())
    z = integrate.trapezoid(w, b)
    mean = integrate.trapezoid(b * w, b) / z
    sd = np.sqrt(integrate.trapezoid((b - mean) ** 2 * w, b) / z)
    return mean, sd


def linear_intercept_grid(z, prior_sd=1.0, shape=1.0, rate=1.0, points=2001):
    """Posterior moments of (beta0, sigma) for ``z ~ N(beta0, sigma^2)`` on a 2-D grid."""
    z = np.asarray(z, dtype=float)
    n = len(z)
    zbar = z.mean()
    b = np.linspace(zbar - 3.0, zbar + 3.0, points)
    s = np.linspace(1e-3, 3.0, points)
    B, S = np.meshgrid(b, s, indexing="ij")
    tau = 1.0 / S**2
    ss = ((z[None, None, :] - B[..., None]) ** 2).sum(-1) if n <= 200 else None
    loglik = 0.5 * n * np.log(tau) - 0.5 * tau * ss
    # Gamma prior on precision, transformed to sigma: p(sigma) = p(tau) * 2 / sigma^3
    logprior = stats.norm.logpdf(B, 0, prior_sd) + stats.gamma.logpdf(tau, shape, scale=1 / rate) + np.log(2 / S**3)
    logp = loglik + logprior
    w = np.exp(logp - logp.max())
    zsum = integrate.trapezoid(integrate.trapezoid(w, s, axis=1), b)

    def moment(f):
        return integrate.trapezoid(integrate.trapezoid(f * w, s, axis=1), b) / zsum

    mb, ms = moment(B), moment(S)
    return {"beta_mean": mb, "beta_sd": np.sqrt(moment((B - mb) ** 2)), "sigma_mean": ms,
            "sigma_sd": np.sqrt(moment((S - ms) ** 2))}


def beta_marginal_linear_zero(n, prior_sd=1.0, shape=1.0, rate=1.0):
    """Closed-form marginal sd of beta0 when every response is zero (precision integrated out)."""
    b = np.linspace(-3, 3, 200001)
    logp = stats.norm.logpdf(b, 0, prior_sd) + special.gammaln(n / 2 + shape) - (n / 2 + shape) * np.log(rate + n * b**2 / 2)
    w = np.exp(logp - logp.max())
    return np.sqrt(integrate.trapezoid(b**2 * w, b) / integrate.trapezoid(w, b))
