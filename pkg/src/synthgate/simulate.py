"""Simulated NHIS-like microdata with a zero-inflated log-normal income."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import optimize
from scipy.special import expit

from ._util import derive_rng, to_jsonable
from .tabular import Dataset, EncodingOptions, design_matrix, parse_schema

NHIS_SCHEMA = """\
# simulated NHIS-like sample; codes follow the cleaned public extract
Income; kind=continuous; role=target
Age; kind=continuous; role=predictor
Sex; kind=binary; role=predictor; codes=1:male,2:female
Race; kind=categorical; role=predictor; codes=1:White,2:African-American,3:American Indian,4:Asian,5:other; missing=970,980,990
Education; kind=categorical; role=predictor; codes=1:high school or less,2:1-4 years college,3:5+ years college; missing=97,98,99
HoursWorked; kind=continuous; role=predictor; missing=0,97,98,99
HealthInsurance; kind=binary; role=predictor; codes=1:has coverage,2:no coverage; missing=7,8,9
HomeOwnership; kind=categorical; role=predictor; codes=1:own,2:rent,3:other; missing=97,98,99
"""

# coefficients on the default (standardized, dummy-coded) design
DEFAULT_PHASE1 = {
    "Age": 0.3, "Sex=2": -0.2,
    "Race=2": -0.3, "Race=3": 0.2, "Race=4": 0.1, "Race=5": -0.1,
    "Education=2": 0.4, "Education=3": 0.6,
    "HoursWorked": 0.8, "HealthInsurance=2": -0.4,
    "HomeOwnership=2": -0.2, "HomeOwnership=3": -0.3,
}
DEFAULT_PHASE2 = {
    "(Intercept)": 10.6, "Age": 0.15, "Sex=2": -0.25,
    "Race=2": -0.15, "Race=3": -0.1, "Race=4": 0.05, "Race=5": -0.1,
    "Education=2": 0.35, "Education=3": 0.7,
    "HoursWorked": 0.3, "HealthInsurance=2": -0.2,
    "HomeOwnership=2": -0.15, "HomeOwnership=3": -0.1,
}

_LEVEL_PROBS = {
    "Sex": ((1, 2), (0.5, 0.5)),
    "Race": ((1, 2, 3, 4, 5), (0.75, 0.12, 0.02, 0.07, 0.04)),
    "Education": ((1, 2, 3), (0.45, 0.40, 0.15)),
    "HealthInsurance": ((1, 2), (0.9, 0.1)),
    "HomeOwnership": ((1, 2, 3), (0.6, 0.35, 0.05)),
}


@dataclass(frozen=True)
class SimSpec:
    n: int = 5000
    zero_rate: float = 0.04
    phase1: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_PHASE1))
    phase2: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_PHASE2))
    sigma: float = 0.8

    def __post_init__(self):
        if self.n < 100:
            raise ValueError("n must be at least 100")
        if not 0 < self.zero_rate < 1:
            raise ValueError("zero_rate must lie in (0, 1)")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")


def nhis_schema():
    return parse_schema(NHIS_SCHEMA)


def _coef_vector(names, coefs: Mapping[str, float], what: str) -> np.ndarray:
    unknown = set(coefs) - set(names)
    if unknown:
        raise ValueError(f"{what}: unknown design columns {sorted(unknown)}")
    return np.array([coefs.get(name, 0.0) for name in names])


def simulate_predictors(n: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    cols = {"Age": rng.integers(18, 86, size=n).astype(float)}
    for name in ("Sex", "Race", "Education"):
        codes, probs = _LEVEL_PROBS[name]
        cols[name] = rng.choice(codes, size=n, p=probs).astype(float)
    cols["HoursWorked"] = np.clip(np.round(rng.normal(40.0, 10.0, size=n)), 1, 95)
    for name in ("HealthInsurance", "HomeOwnership"):
        codes, probs = _LEVEL_PROBS[name]
        cols[name] = rng.choice(codes, size=n, p=probs).astype(float)
    return cols


def simulate(spec: SimSpec, seed: int) -> tuple[Dataset, dict]:
    """Draw a dataset and its ground truth.

    The phase-1 intercept is solved so that the average non-zero probability
    equals ``1 - zero_rate`` on the drawn predictors (a supplied
    ``(Intercept)`` in ``spec.phase1`` is ignored).
    """
    rng = derive_rng(seed, "simulate")
    schema = nhis_schema()
    cols = simulate_predictors(spec.n, rng)
    cols["Income"] = np.zeros(spec.n)
    ds = Dataset(schema, cols)
    design = design_matrix(ds, EncodingOptions())
    X = design.matrix
    b1 = _coef_vector(design.names, spec.phase1, "phase1")
    b1[0] = 0.0
    lin = X @ b1
    target = 1.0 - spec.zero_rate
    b1[0] = optimize.brentq(lambda a: expit(lin + a).mean() - target, -50.0, 50.0, xtol=1e-12)
    b2 = _coef_vector(design.names, spec.phase2, "phase2")

    nonzero = rng.random(spec.n) < expit(X @ b1)
    z = X @ b2 + spec.sigma * rng.standard_normal(spec.n)
    income = np.where(nonzero, np.round(np.exp(z), 2), 0.0)
    income[nonzero & (income <= 0)] = 0.01
    ds = ds.with_target(income)
    truth = to_jsonable(
        {
            "seed": seed,
            "n": spec.n,
            "zero_rate": spec.zero_rate,
            "design_columns": list(design.names),
            "encoding": design.manifest()["transforms"],
            "phase1_coefficients": dict(zip(design.names, b1)),
            "phase2_coefficients": dict(zip(design.names, b2)),
            "sigma": spec.sigma,
            "empirical_zero_rate": float(np.mean(income == 0)),
        }
    )
    return ds, truth
