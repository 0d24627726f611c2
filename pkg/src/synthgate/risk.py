"""Disclosure risk of a synthetic release.

Identification risk: an intruder who knows a record's true target value and a
few un-synthesized attributes looks for released rows that agree on those
attributes and whose synthetic target lies within a percentage radius of the
truth. Attribute risk: the intruder ranks the true value against alternative
candidates by the synthesis model's posterior predictive density.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from ._util import derive_rng, to_jsonable
from .synth import SyntheticRelease
from .tabular import Dataset, EncodingOptions, design_matrix

log = logging.getLogger(__name__)


class RiskError(ValueError):
    pass


@dataclass(frozen=True)
class MatchConfig:
    known_vars: tuple[str, ...] = ("Sex", "Race", "Education")
    radius: float = 0.3

    def __post_init__(self):
        if not self.known_vars:
            raise RiskError("known_vars must not be empty")
        if not self.radius > 0:
            raise RiskError("radius must be positive")
        object.__setattr__(self, "known_vars", tuple(self.known_vars))


@dataclass(frozen=True)
class RecordMatch:
    c: int
    T: int
    K: int
    F: int

    @classmethod
    def from_counts(cls, c: int, T: int) -> "RecordMatch":
        return cls(c, T, int(c * T == 1), int(c * (1 - T) == 1))


def _check_known(ds: Dataset, cfg: MatchConfig) -> None:
    for name in cfg.known_vars:
        try:
            var = ds.variable(name)
        except KeyError:
            raise RiskError(f"unknown column {name!r} in known_vars") from None
        if var.kind not in ("binary", "categorical"):
            raise RiskError(f"known variable {name!r} must be binary or categorical")
        if var.role == "target":
            raise RiskError(f"known variable {name!r} is the synthesized target")


def _bounds(y, radius):
    y = np.asarray(y, dtype=np.float64)
    return y * (1.0 - radius), y * (1.0 + radius)


def match_record(i: int, original: Dataset, synthetic: Dataset, cfg: MatchConfig) -> RecordMatch:
    """Candidate set for record ``i``: rows agreeing on every known variable with
    synthetic target in ``[y_i(1-r), y_i(1+r)]``. A zero target only matches an
    exact synthetic zero."""
    _check_known(original, cfg)
    y = original.target_values[i]
    lo, hi = _bounds(y, cfg.radius)
    mask = np.ones(synthetic.n, dtype=bool)
    for name in cfg.known_vars:
        mask &= synthetic[name] == original[name][i]
    s = synthetic.target_values
    mask &= (s >= lo) & (s <= hi)
    return RecordMatch.from_counts(int(mask.sum()), int(mask[i]))


def match_all(original: Dataset, synthetic: Dataset | np.ndarray, cfg: MatchConfig) -> list[RecordMatch]:
    """Vectorized :func:`match_record` over every original record."""
    _check_known(original, cfg)
    if isinstance(synthetic, np.ndarray):
        synthetic = original.with_target(synthetic)
    if synthetic.n != original.n:
        raise RiskError("original and synthetic datasets must be aligned")
    keys_o = np.column_stack([original[name] for name in cfg.known_vars])
    keys_s = np.column_stack([synthetic[name] for name in cfg.known_vars])
    uniq, inv = np.unique(np.vstack([keys_o, keys_s]), axis=0, return_inverse=True)
    inv = inv.ravel()
    g_o, g_s = inv[: original.n], inv[original.n :]
    y = original.target_values
    s = synthetic.target_values
    lo, hi = _bounds(y, cfg.radius)
    c = np.zeros(original.n, dtype=np.int64)
    order = np.lexsort((s, g_s))
    s_sorted, g_sorted = s[order], g_s[order]
    starts = np.searchsorted(g_sorted, np.arange(len(uniq)), side="left")
    stops = np.searchsorted(g_sorted, np.arange(len(uniq)), side="right")
    for g in range(len(uniq)):
        rows = np.flatnonzero(g_o == g)
        if not len(rows):
            continue
        vals = s_sorted[starts[g] : stops[g]]
        c[rows] = np.searchsorted(vals, hi[rows], side="right") - np.searchsorted(vals, lo[rows], side="left")
    T = ((g_o == g_s) & (s >= lo) & (s <= hi)).astype(np.int64)
    return [RecordMatch.from_counts(int(ci), int(ti)) for ci, ti in zip(c, T)]


@dataclass(frozen=True)
class IdentificationRiskReport:
    expected_match_risk: float
    true_match_rate: float
    false_match_rate: float
    s: int
    n: int
    matches: list[RecordMatch] = field(repr=False, default_factory=list)
    flags: tuple[str, ...] = ()

    def to_dict(self, per_record: bool = False) -> dict:
        d = {
            "E": self.expected_match_risk,
            "T": self.true_match_rate,
            "F": self.false_match_rate,
            "s": self.s,
            "n": self.n,
            "flags": list(self.flags),
        }
        if per_record:
            d["records"] = {
                "c": [m.c for m in self.matches],
                "T": [m.T for m in self.matches],
                "K": [m.K for m in self.matches],
                "F": [m.F for m in self.matches],
            }
        return d


def identification_risk(matches: Sequence[RecordMatch]) -> IdentificationRiskReport:
    """Expected match risk, true match rate and false match rate.

    Records with an empty candidate set contribute 0 to the expected match
    risk; the false match rate is 0 (and flagged) when there are no unique
    matches.
    """
    n = len(matches)
    if n == 0:
        raise RiskError("no records to evaluate")
    E = sum((m.T / m.c) if m.c > 0 else 0.0 for m in matches) / n
    T = sum(m.K for m in matches) / n
    s = sum(1 for m in matches if m.c == 1)
    flags = []
    if s > 0:
        F = sum(m.F for m in matches) / s
    else:
        F = 0.0
        flags.append("no-unique-matches")
    return IdentificationRiskReport(float(E), float(T), float(F), s, n, list(matches), tuple(flags))


# ---------------------------------------------------------------------------
# attribute disclosure


def normalize_scores(log_scores: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Normalize per-record candidate log scores; column 0 must be the truth.

    Returns ``(probabilities, truth_rank, truth_tied)``. Ties are resolved in
    candidate order so the truth takes the best rank among equal scores.
    """
    log_scores = np.atleast_2d(np.asarray(log_scores, dtype=np.float64))
    probs = np.exp(log_scores - logsumexp(log_scores, axis=1, keepdims=True))
    truth = log_scores[:, :1]
    rank = 1 + np.sum(log_scores[:, 1:] > truth, axis=1)
    tied = np.any(log_scores[:, 1:] == truth, axis=1)
    return probs, rank.astype(np.int64), tied


@dataclass(frozen=True)
class AttributeRiskReport:
    method: str
    vector: int
    probability: np.ndarray
    rank: np.ndarray
    tied: np.ndarray
    candidates: np.ndarray = field(repr=False)
    bin_width: float = 1.0

    @property
    def n_candidates(self) -> int:
        return self.candidates.shape[1]

    def rank_histogram(self) -> np.ndarray:
        return np.bincount(self.rank, minlength=self.n_candidates + 1)[1:]

    def density(self, grid_points: int = 512) -> tuple[np.ndarray, np.ndarray]:
        grid = np.linspace(0.0, 1.0, grid_points)
        if np.ptp(self.probability) > 0:
            return grid, stats.gaussian_kde(self.probability)(grid)
        return grid, np.zeros_like(grid)

    def to_dict(self, per_record: bool = False) -> dict:
        d = {
            "method": self.method,
            "vector": self.vector,
            "n_candidates": self.n_candidates,
            "bin_width": self.bin_width,
            "mean_probability": float(self.probability.mean()),
            "median_probability": float(np.median(self.probability)),
            "mean_rank": float(self.rank.mean()),
            "share_rank_1": float(np.mean(self.rank == 1)),
            "rank_histogram": self.rank_histogram(),
            "ties": int(self.tied.sum()),
        }
        if per_record:
            d["records"] = {"probability": self.probability, "rank": self.rank, "tied": self.tied}
        return to_jsonable(d)


def build_candidates(y: np.ndarray, neighborhood_size: int, seed: int) -> np.ndarray:
    """Truth in column 0 followed by ``neighborhood_size`` alternatives drawn
    without replacement from the rows whose value differs from the truth."""
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    out = np.empty((n, neighborhood_size + 1))
    out[:, 0] = y
    for i in range(n):
        pool = np.flatnonzero(y != y[i])
        if len(pool) < neighborhood_size:
            raise RiskError(
                f"record {i}: only {len(pool)} rows with a different value; need {neighborhood_size} alternatives"
            )
        rng = derive_rng(seed, "attribute-candidates", i)
        out[i, 1:] = y[rng.choice(pool, size=neighborhood_size, replace=False)]
    return out


def candidate_log_scores(
    release: SyntheticRelease, X: np.ndarray, candidates: np.ndarray, bin_width: float = 1.0
) -> np.ndarray:
    """Posterior predictive log score of each candidate, averaged over the retained draws.

    Two-phase: ``1 - p`` for a zero candidate, otherwise
    ``p * LogNormal(y; mu, sigma) * bin_width``. Single-phase: the density of
    ``y`` implied by ``log(y + c) ~ N(mu, sigma)`` times ``bin_width``.
    """
    if not release.phase2_draws:
        raise RiskError(f"{release.method} release carries no posterior draws")
    B2 = np.column_stack([d.coef for d in release.phase2_draws])  # (p, m)
    sig = np.array([d.sigma for d in release.phase2_draws])
    if X.shape[1] != B2.shape[0]:
        raise RiskError("design does not match the release's draws")
    mu = (X @ B2)[:, None, :]  # (n, 1, m)
    y = candidates[:, :, None]
    log_bin = np.log(bin_width)
    if release.method == "two-phase":
        if not release.phase1_draws:
            raise RiskError("two-phase release carries no phase-1 draws")
        B1 = np.column_stack([d.coef for d in release.phase1_draws])
        eta = (X @ B1)[:, None, :]
        log_p = -np.logaddexp(0.0, -eta)
        log_q = -np.logaddexp(0.0, eta)
        pos = y > 0
        ly = np.log(np.where(pos, y, 1.0))
        dens = stats.norm.logpdf(ly, mu, sig) - ly + log_bin
        per_draw = np.where(pos, log_p + dens, log_q)
    else:
        shifted = np.log(y + release.offset)
        per_draw = stats.norm.logpdf(shifted, mu, sig) - shifted + log_bin
    return logsumexp(per_draw, axis=2) - np.log(per_draw.shape[2])


def attribute_probabilities(
    original: Dataset,
    release: SyntheticRelease,
    vector: int = 0,
    neighborhood_size: int = 10,
    seed: int = 0,
    bin_width: float = 1.0,
) -> AttributeRiskReport:
    enc = release.plan.get("encoding") or {}
    opts = EncodingOptions(
        standardize=enc.get("standardize", True),
        categorical=enc.get("categorical", "dummy"),
        variables=tuple(enc["variables"]) if enc.get("variables") else None,
    )
    X = design_matrix(original, opts).matrix
    if np.ptp(original.target_values) == 0:
        raise RiskError("target has a single value; no alternative candidates exist")
    cands = build_candidates(original.target_values, neighborhood_size, seed)
    scores = candidate_log_scores(release, X, cands, bin_width)
    probs, rank, tied = normalize_scores(scores)
    return AttributeRiskReport(release.method, vector + 1, probs[:, 0], rank, tied, cands, bin_width)


# ---------------------------------------------------------------------------
# report


@dataclass(frozen=True)
class RiskConfig:
    match: MatchConfig = field(default_factory=MatchConfig)
    neighborhood_size: int = 10
    bin_width: float = 1.0
    seed: int = 0
    attribute: bool = True
    per_record: bool = False


def identification_over_vectors(original: Dataset, release: SyntheticRelease, cfg: MatchConfig) -> dict:
    per = [identification_risk(match_all(original, release.vectors[ell], cfg)) for ell in range(release.m)]
    mean = lambda key: float(sum(r[key] for r in rows) / len(rows))  # noqa: E731
    rows = [r.to_dict() | {"vector": ell + 1} for ell, r in enumerate(per)]
    return {"E": mean("E"), "T": mean("T"), "F": mean("F"), "s": mean("s"), "per_vector": rows}


@dataclass
class RiskReport:
    identification: dict[str, dict]
    attribute: dict[str, AttributeRiskReport]
    config: dict

    def to_dict(self, per_record: bool = False) -> dict:
        return to_jsonable(
            {
                "config": self.config,
                "identification": self.identification,
                "attribute": {k: r.to_dict(per_record) for k, r in self.attribute.items()},
            }
        )


def risk_report(
    original: Dataset, releases: Mapping[str, SyntheticRelease] | SyntheticRelease, cfg: RiskConfig | None = None
) -> RiskReport:
    """Identification risk averaged over every vector of each release, and
    attribute risk on one seeded, randomly selected vector per release."""
    cfg = cfg or RiskConfig()
    if isinstance(releases, SyntheticRelease):
        releases = {releases.method: releases}
    _check_known(original, cfg.match)
    ident, attr = {}, {}
    for method, rel in releases.items():
        if rel.n != original.n:
            raise RiskError(f"{method} release is not aligned with the original data")
        ident[method] = identification_over_vectors(original, rel, cfg.match)
        if cfg.attribute:
            ell = int(derive_rng(cfg.seed, "attribute-vector").integers(rel.m))
            attr[method] = attribute_probabilities(original, rel, ell, cfg.neighborhood_size, cfg.seed, cfg.bin_width)
    config = {
        "known_vars": list(cfg.match.known_vars),
        "radius": cfg.match.radius,
        "neighborhood_size": cfg.neighborhood_size,
        "bin_width": cfg.bin_width,
        "seed": cfg.seed,
    }
    return RiskReport(ident, attr, config)
