import numpy as np
import pytest

from synthgate.sampler import McmcConfig
from synthgate.simulate import SimSpec, simulate
from synthgate.synth import SynthesisPlan, synthesize
from synthgate.tabular import parse_schema

TOY_SCHEMA = """\
Income; kind=continuous; role=target
Age; kind=continuous; role=predictor
Sex; kind=binary; role=predictor; codes=1:male,2:female
Race; kind=categorical; role=predictor; codes=1,2,3; missing=970,980,990
Education; kind=categorical; role=predictor; codes=1,2,3; missing=97,98,99; recode=4:3,5:3
HoursWorked; kind=continuous; role=predictor; missing=0,97,98,99
"""


def fast_plan(m=5, seed=3, **kw):
    return SynthesisPlan(
        m=m,
        seed=seed,
        phase1_cfg=McmcConfig(n_iterations=3000, burn_in=1000),
        phase2_cfg=McmcConfig(n_iterations=1500, burn_in=500),
        **kw,
    )


@pytest.fixture(scope="session")
def toy_schema():
    return parse_schema(TOY_SCHEMA)


@pytest.fixture(scope="session")
def sim_small():
    ds, truth = simulate(SimSpec(n=500), seed=11)
    return ds, truth


@pytest.fixture(scope="session")
def releases(sim_small):
    ds, _ = sim_small
    plan = fast_plan()
    return {method: synthesize(ds, plan, method) for method in ("two-phase", "single-phase")}


@pytest.fixture
def rng():
    return np.random.default_rng(20240)


# acceptance results, printed one line per criterion at the end of the run
ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {detail}")
