import itertools

import numpy as np
import pytest

from oracles import ecdf_oracle
from synthgate.synth import SyntheticRelease
from synthgate.tabular import Dataset, parse_schema
from synthgate.utility import (
    IntervalEstimate,
    UtilityConfig,
    bootstrap_quantile,
    combine,
    ecdf_measures,
    interval_overlap,
    mean_estimate,
    ols_coefficients,
    propensity_score_measure,
    propensity_u_p,
    utility_report,
)

# (original CI, synthetic CI, reference overlap); CI endpoints are given to 2 decimals
REFERENCE_OVERLAPS = [
    ((47206.82, 49371.42), (47445.45, 50023.35), 0.8184317),
    ((47206.82, 49371.42), (51198.93, 54569.49), -0.6932335),
    ((5000.00, 7400.70), (5547.33, 6502.99), 0.6990378),
    ((5000.00, 7400.70), (1039.03, 1305.37), -7.705418),
    ((74000.00, 78000.00), (80594.71, 88246.27), -0.4938931),
    ((74000.00, 78000.00), (142567.80, 149000.00), -13.09008),
    ((331.08, 457.11), (321.14, 485.61), 0.8831511),
    ((331.08, 457.11), (208.66, 438.67), 0.6607438),
]


def iv(lo, hi):
    return IntervalEstimate((lo + hi) / 2, lo, hi)


def test_propensity_measure_definition():
    assert propensity_score_measure(np.full(10, 0.5)) == 0.0
    assert propensity_score_measure(np.r_[np.zeros(5), np.ones(5)]) == 0.25


def test_propensity_identical_data(sim_small):
    ds, _ = sim_small
    res = propensity_u_p(ds, ds)
    assert res.u_p <= 1e-3
    assert not res.separated


def test_propensity_perfect_separation(sim_small):
    ds, _ = sim_small
    syn = ds.with_target(ds.target_values + 1e7)
    res = propensity_u_p(ds, syn)
    assert res.separated
    assert res.u_p == pytest.approx(0.25, abs=1e-9)


def test_propensity_rejects_mismatched(sim_small):
    ds, _ = sim_small
    with pytest.raises(ValueError):
        propensity_u_p(ds, ds.take(np.arange(10)))


def test_ecdf_hand_example():
    assert ecdf_measures([1, 2], [1, 3]) == (0.5, 0.0625)
    assert ecdf_measures([4, 1, 2], [2, 1, 4]) == (0.0, 0.0)


def test_ecdf_matches_oracle_with_ties(rng):
    for _ in range(30):
        o = rng.integers(0, 5, size=rng.integers(1, 12)).astype(float)
        s = rng.integers(0, 5, size=rng.integers(1, 12)).astype(float)
        assert ecdf_measures(o, s) == ecdf_oracle(o, s)


def test_combine_hand_values():
    c = combine([1.0, 3.0], [1.0, 1.0])
    assert (c.q_bar_m, c.b_m, c.v_bar_m, c.T_p, c.v_p) == (2.0, 2.0, 1.0, 2.0, 2.0)
    assert not c.degenerate


def test_combine_degenerate_between_variance():
    c = combine([0.1] * 20, [4.0] * 20)
    assert c.q_bar_m == 0.1 and c.b_m == 0.0 and c.degenerate
    assert c.v_p == float("inf")
    assert c.ci_high - c.q_bar_m == pytest.approx(1.959963984540054 * 2.0)


def test_combine_contracts():
    with pytest.raises(ValueError):
        combine([1.0], [1.0])
    with pytest.raises(ValueError):
        combine([1.0, 2.0], [1.0, -1.0])


def test_overlap_cases():
    assert interval_overlap(iv(0, 1), iv(0, 1)) == 1.0
    assert interval_overlap(iv(0, 1), iv(2, 3)) == -1.0
    with pytest.raises(ValueError):
        interval_overlap(IntervalEstimate(1, 1, 1), iv(0, 2))


@pytest.mark.parametrize("orig,syn,reference", REFERENCE_OVERLAPS)
def test_reference_overlaps_within_endpoint_rounding(orig, syn, reference):
    # the reference overlap must be reachable by some endpoints that round
    # to the 2-decimal ones
    values = [
        interval_overlap(iv(orig[0] + a, orig[1] + b), iv(syn[0] + c, syn[1] + d))
        for a, b, c, d in itertools.product((-0.005, 0.005), repeat=4)
    ]
    assert min(values) <= reference <= max(values)
    assert interval_overlap(iv(*orig), iv(*syn)) == pytest.approx(reference, abs=5e-5)


def test_mean_estimate():
    assert mean_estimate([2.0, 4.0]) == (3.0, 1.0)
    assert mean_estimate([7.0, 7.0, 7.0]) == (7.0, 0.0)


def test_bootstrap_quantile():
    bq = bootstrap_quantile(np.arange(1.0, 101.0), 0.5, B=200, rng=np.random.default_rng(0))
    assert bq.point == 50.5
    assert bq.low < 50.5 < bq.high
    const = bootstrap_quantile(np.full(30, 3.0), 0.1, B=200)
    assert (const.point, const.low, const.high, const.variance) == (3.0, 3.0, 3.0, 0.0)
    pair = bootstrap_quantile(np.arange(10.0), [0.1, 0.8], B=100)
    assert [b.q_level for b in pair] == [0.1, 0.8]
    with pytest.raises(ValueError):
        bootstrap_quantile(np.arange(10.0), 1.0)


def _xy_dataset(x, y):
    schema = parse_schema("Y; kind=continuous; role=target\nAge; kind=continuous\n")
    return Dataset(tuple(schema), {"Y": np.asarray(y, float), "Age": np.asarray(x, float)})


def test_ols_exact_fit():
    x = np.arange(10.0)
    fit = ols_coefficients(_xy_dataset(x, 2 * x))
    assert fit.names == ("(Intercept)", "Age")
    assert fit.coef[1] == pytest.approx(2.0)
    assert fit.variance[1] == pytest.approx(0.0, abs=1e-20)


def test_ols_recovers_slope(rng):
    x = rng.uniform(18, 85, 3000)
    y = 300 * x + rng.normal(0, 5000, 3000)
    fit = ols_coefficients(_xy_dataset(x, y))
    assert abs(fit.coef[1] - 300) < 3 * np.sqrt(fit.variance[1])


def test_copies_of_original_are_perfect(sim_small):
    ds, _ = sim_small
    rel = SyntheticRelease.from_vectors("copy", np.tile(ds.target_values, (4, 1)))
    rep = utility_report(ds, {"copy": rel}, UtilityConfig(bootstrap_b=200, plots=False))
    g = rep.global_["copy"]
    assert g.u_p <= 1e-3 and g.u_m == 0 and g.u_s == 0
    for name, entry in rep.analyses.items():
        if name.startswith("quantile"):
            continue  # percentile vs symmetric interval; see below
        assert entry["copy"]["overlap"] == pytest.approx(1.0, abs=1e-12), name
    for name in ("quantile_0.1", "quantile_0.8"):
        combined = rep.analyses[name]["copy"]["combined"]
        assert combined["b_m"] == 0.0 and combined["degenerate"]


def test_report_structure(sim_small, releases):
    ds, _ = sim_small
    rel = releases["two-phase"]
    small = SyntheticRelease.from_vectors("two-phase", rel.vectors[:2])
    rep = utility_report(ds, small, UtilityConfig(quantiles=(0.5,), bootstrap_b=100, regression=False))
    assert set(rep.analyses) == {"mean", "quantile_0.5"}
    d = rep.to_dict()
    assert "workers" not in d["config"]
    assert d["global"]["two-phase"]["per_vector"][1]["vector"] == 2
    assert set(rep.plot_data["violin_summary"]) == {"original", "two-phase"}


def test_two_phase_beats_single_phase_small(sim_small, releases):
    ds, _ = sim_small
    rep = utility_report(ds, releases, UtilityConfig(quantiles=(), regression=False, plots=False))
    two, one = rep.global_["two-phase"], rep.global_["single-phase"]
    assert two.u_m < one.u_m and two.u_s < one.u_s
    assert rep.analyses["mean"]["two-phase"]["overlap"] > rep.analyses["mean"]["single-phase"]["overlap"]
