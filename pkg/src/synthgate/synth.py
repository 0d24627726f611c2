"""Partially synthetic releases of the target column.

Two methods are provided. ``two-phase`` first synthesizes the zero/non-zero
indicator with a logistic model, then draws log income from a linear model
only for rows whose synthetic indicator is 1; all other rows get an exact 0.
``single-phase`` fits one linear model to ``log(y + c)`` over all rows and
back-transforms, so it never yields exact zeros.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
import numpy as np
from scipy.special import expit

from ._util import derive_rng, derive_seed, dumps_json, to_jsonable
from .sampler import (
    LinearModelSpec,
    LogisticModelSpec,
    McmcConfig,
    PosteriorChain,
    PosteriorDraw,
    default_gap,
    diagnostics,
    fit_linear,
    fit_logistic,
    run_chains,
    select_draws,
)
from .tabular import Dataset, DesignMatrix, EncodingOptions, derive_income_forms, design_matrix, format_csv

log = logging.getLogger(__name__)

METHODS = ("two-phase", "single-phase")


class SynthesisError(ValueError):
    pass


@dataclass(frozen=True)
class SynthesisPlan:
    m: int = 20
    phase1_cfg: McmcConfig = field(default_factory=McmcConfig)
    phase2_cfg: McmcConfig = field(default_factory=McmcConfig)
    offset: float = 1.0
    value_floor: float = 0.01
    seed: int = 0
    gap: int | None = None
    prior_mean: float = 0.0
    prior_sd: float = 1.0
    precision_shape: float = 1.0
    precision_rate: float = 1.0
    encoding: EncodingOptions = field(default_factory=EncodingOptions)
    clamp_to_observed: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if self.offset <= 0:
            raise ValueError("offset must be positive")
        if self.value_floor <= 0:
            raise ValueError("value_floor must be positive")
        if self.gap is not None and self.gap < 1:
            raise ValueError("gap must be at least 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("workers")  # execution detail; never changes results
        return to_jsonable(d)

    def config_hash(self) -> str:
        d = self.to_dict()
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True, eq=False)
class SyntheticRelease:
    method: str
    vectors: np.ndarray  # (m, n)
    draw_provenance: list[dict]
    n_syn_star: list[int]
    phase1_draws: list[PosteriorDraw] | None
    phase2_draws: list[PosteriorDraw]
    design_names: tuple[str, ...]
    plan: dict
    diagnostics: dict = field(default_factory=dict)
    chains: dict[str, list[PosteriorChain]] = field(default_factory=dict, repr=False)

    @property
    def m(self) -> int:
        return self.vectors.shape[0]

    @property
    def n(self) -> int:
        return self.vectors.shape[1]

    @property
    def offset(self) -> float:
        return float(self.plan["offset"])

    @classmethod
    def from_vectors(cls, method: str, vectors, plan: dict | None = None) -> "SyntheticRelease":
        """A release with no posterior draws, e.g. copies of the original target."""
        vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        m = vectors.shape[0]
        return cls(
            method=method,
            vectors=vectors,
            draw_provenance=[{"vector": ell + 1} for ell in range(m)],
            n_syn_star=[int((v != 0).sum()) for v in vectors],
            phase1_draws=None,
            phase2_draws=[],
            design_names=(),
            plan=plan or {"offset": 1.0, "seed": None},
        )

    def dataset(self, original: Dataset, ell: int) -> Dataset:
        """Original data with the target replaced by synthetic vector ``ell`` (0-based)."""
        return original.with_target(self.vectors[ell])

    def to_dict(self) -> dict:
        def draws(ds):
            if ds is None:
                return None
            return [
                {"coef": d.coef, "sigma": d.sigma, "iteration": d.iteration, "chain": d.chain_index} for d in ds
            ]

        return to_jsonable(
            {
                "method": self.method,
                "m": self.m,
                "n": self.n,
                "vectors": self.vectors,
                "draw_provenance": self.draw_provenance,
                "n_syn_star": self.n_syn_star,
                "phase1_draws": draws(self.phase1_draws),
                "phase2_draws": draws(self.phase2_draws),
                "design_names": list(self.design_names),
                "plan": self.plan,
                "diagnostics": self.diagnostics,
            }
        )

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticRelease":
        def draws(ds):
            if ds is None:
                return None
            return [
                PosteriorDraw(np.asarray(x["coef"], dtype=float), x["sigma"], x["iteration"], x["chain"]) for x in ds
            ]

        return cls(
            method=d["method"],
            vectors=np.asarray(d["vectors"], dtype=float).reshape(d["m"], d["n"]),
            draw_provenance=d["draw_provenance"],
            n_syn_star=list(d["n_syn_star"]),
            phase1_draws=draws(d["phase1_draws"]),
            phase2_draws=draws(d["phase2_draws"]),
            design_names=tuple(d["design_names"]),
            plan=d["plan"],
            diagnostics=d.get("diagnostics", {}),
        )

    def provenance(self) -> dict:
        return {
            "method": self.method,
            "m": self.m,
            "n": self.n,
            "seed": self.plan["seed"],
            "config_hash": self.plan.get("config_hash"),
            "draws": self.draw_provenance,
            "n_syn_star": self.n_syn_star,
            "diagnostics": self.diagnostics,
        }


def _check_draw(draw: PosteriorDraw, design: DesignMatrix):
    if len(draw.coef) != design.n_cols:
        raise SynthesisError(f"draw has {len(draw.coef)} coefficients, design has {design.n_cols} columns")


def phase1_probabilities(draw: PosteriorDraw, design: DesignMatrix) -> np.ndarray:
    _check_draw(draw, design)
    return expit(design.matrix @ draw.coef)


def synthesize_phase1(draw: PosteriorDraw, design: DesignMatrix, rng: np.random.Generator) -> np.ndarray:
    """Synthetic non-zero indicators: ``Y_i ~ Bernoulli(logit^-1(x_i' beta))``."""
    p = phase1_probabilities(draw, design)
    return (rng.random(design.n_rows) < p).astype(np.int64)


def synthesize_phase2(
    draw: PosteriorDraw, design: DesignMatrix, phase1: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Synthetic incomes: ``exp(N(x_i' beta*, sigma))`` where ``phase1`` is 1, exact 0 elsewhere."""
    _check_draw(draw, design)
    phase1 = np.asarray(phase1)
    if phase1.shape != (design.n_rows,):
        raise SynthesisError(f"phase-1 vector has length {len(phase1)}, design has {design.n_rows} rows")
    if draw.sigma is None or not draw.sigma > 0:
        raise SynthesisError(f"draw sigma must be positive, got {draw.sigma}")
    out = np.zeros(design.n_rows)
    rows = np.flatnonzero(phase1 == 1)
    if len(rows):
        mu = design.matrix[rows] @ draw.coef
        out[rows] = np.exp(mu + draw.sigma * rng.standard_normal(len(rows)))
    return out


def _fit_cfg(cfg: McmcConfig, seed: int, *labels) -> McmcConfig:
    return replace(cfg, seed=derive_seed(seed, *labels))


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _diag(chains: list[PosteriorChain]) -> dict:
    try:
        return diagnostics(chains).to_dict()
    except ValueError as exc:
        return {"error": str(exc)}


def _clamp(values: np.ndarray, observed: np.ndarray) -> np.ndarray:
    pos = observed[observed > 0]
    if not len(pos):
        return values
    out = values.copy()
    nz = out > 0
    out[nz] = np.clip(out[nz], pos.min(), pos.max())
    return out


def synthesize_two_phase(ds: Dataset, plan: SynthesisPlan) -> SyntheticRelease:
    forms = derive_income_forms(ds)
    if forms.income_b.sum() < 2:
        raise SynthesisError("phase 2 needs at least 2 rows with non-zero target")
    design = design_matrix(ds, plan.encoding)

    cfg1 = _fit_cfg(plan.phase1_cfg, plan.seed, "two-phase", "phase1")
    spec1 = LogisticModelSpec(design, forms.income_b, plan.prior_mean, plan.prior_sd)
    chains1 = run_chains(fit_logistic, spec1, cfg1, plan.workers)

    nz = forms.income_b == 1
    cfg2 = _fit_cfg(plan.phase2_cfg, plan.seed, "two-phase", "phase2")
    spec2 = LinearModelSpec(
        design.rows(nz), np.log(forms.income_c), plan.prior_mean, plan.prior_sd,
        plan.precision_shape, plan.precision_rate,
    )
    chains2 = run_chains(fit_linear, spec2, cfg2, plan.workers)

    draws1 = select_draws(chains1[0], plan.m, plan.gap or default_gap(cfg1, plan.m))
    draws2 = select_draws(chains2[0], plan.m, plan.gap or default_gap(cfg2, plan.m))

    def one(ell: int):
        rng = derive_rng(plan.seed, "two-phase", "vector", ell)
        ytil = synthesize_phase1(draws1[ell], design, rng)
        vec = synthesize_phase2(draws2[ell], design, ytil, rng)
        if plan.clamp_to_observed:
            vec = _clamp(vec, ds.target_values)
        return vec, int(ytil.sum())

    results = _map(one, range(plan.m), plan.workers)
    plan_d = plan.to_dict() | {"config_hash": plan.config_hash(), "phase1_seed": cfg1.seed, "phase2_seed": cfg2.seed}
    return SyntheticRelease(
        method="two-phase",
        vectors=np.vstack([r[0] for r in results]),
        draw_provenance=[
            {"vector": ell + 1, "phase1_iteration": draws1[ell].iteration, "phase2_iteration": draws2[ell].iteration}
            for ell in range(plan.m)
        ],
        n_syn_star=[r[1] for r in results],
        phase1_draws=draws1,
        phase2_draws=draws2,
        design_names=design.names,
        plan=plan_d,
        diagnostics={"phase1": _diag(chains1), "phase2": _diag(chains2)},
        chains={"phase1": chains1, "phase2": chains2},
    )


def synthesize_single_phase(ds: Dataset, plan: SynthesisPlan) -> SyntheticRelease:
    y = ds.target_values
    if np.isnan(y).any():
        raise SynthesisError("target contains empty cells; clean the dataset first")
    if (y + plan.offset <= 0).any():
        raise SynthesisError("target + offset must be positive")
    design = design_matrix(ds, plan.encoding)
    cfg = _fit_cfg(plan.phase2_cfg, plan.seed, "single-phase", "linear")
    spec = LinearModelSpec(
        design, np.log(y + plan.offset), plan.prior_mean, plan.prior_sd, plan.precision_shape, plan.precision_rate
    )
    chains = run_chains(fit_linear, spec, cfg, plan.workers)
    draws = select_draws(chains[0], plan.m, plan.gap or default_gap(cfg, plan.m))
    everyone = np.ones(ds.n, dtype=np.int64)

    def one(ell: int):
        rng = derive_rng(plan.seed, "single-phase", "vector", ell)
        raw = synthesize_phase2(draws[ell], design, everyone, rng)
        vec = np.maximum(raw - plan.offset, plan.value_floor)
        if plan.clamp_to_observed:
            vec = _clamp(vec, y)
        return vec

    vectors = _map(one, range(plan.m), plan.workers)
    plan_d = plan.to_dict() | {"config_hash": plan.config_hash(), "phase2_seed": cfg.seed}
    return SyntheticRelease(
        method="single-phase",
        vectors=np.vstack(vectors),
        draw_provenance=[{"vector": ell + 1, "iteration": draws[ell].iteration} for ell in range(plan.m)],
        n_syn_star=[ds.n] * plan.m,
        phase1_draws=None,
        phase2_draws=draws,
        design_names=design.names,
        plan=plan_d,
        diagnostics={"linear": _diag(chains)},
        chains={"linear": chains},
    )


def synthesize(ds: Dataset, plan: SynthesisPlan, method: str) -> SyntheticRelease:
    if method == "two-phase":
        return synthesize_two_phase(ds, plan)
    if method == "single-phase":
        return synthesize_single_phase(ds, plan)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def release_csv(original: Dataset, release: SyntheticRelease, ell: int) -> str:
    return format_csv(release.dataset(original, ell))


def release_json(release: SyntheticRelease) -> str:
    return dumps_json(release.to_dict())


def load_release(text: str) -> SyntheticRelease:
    return SyntheticRelease.from_dict(json.loads(text))

