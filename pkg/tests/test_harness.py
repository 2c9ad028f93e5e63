import json

import numpy as np
import pytest

from abae.bootstrap import BootstrapConfig
from abae.harness import (
    ESTIMATORS,
    ExperimentPlan,
    InsufficientPoints,
    fit_power_law,
    fit_rate,
    paired_difference,
    proportional_budgets,
    run_coverage,
    run_mse,
    worker_count,
)
from abae.synthgen import SyntheticSpec, default_suite


def small(records=5000, **kw):
    return default_suite(records_per_stratum=records, **kw)


def test_constant_population_has_zero_mse():
    spec = SyntheticSpec(p=(0.1, 0.3, 0.6), mu=(2.0, 2.0, 2.0), sigma=(0.0, 0.0, 0.0), records_per_stratum=500)
    res = run_mse(ExperimentPlan(spec, [(20, 100)], trials=50, estimators=ESTIMATORS), workers=1)
    for row in res.rows:
        assert row["mse"] < 1e-25
        assert row["failed"] == 0


def test_exact_power_law_slope():
    n = np.array([1000, 2000, 4000, 8000, 16000])
    fit = fit_power_law(n, 3.0 / n)
    assert fit.slope == pytest.approx(-1.0, abs=1e-9)
    assert fit.stderr < 1e-9


def test_too_few_points():
    with pytest.raises(InsufficientPoints):
        fit_power_law([1000, 2000, 8000], [1, 0.5, 0.1])
    with pytest.raises(InsufficientPoints):
        fit_power_law([1000, 2000, 3000, 4000], [1, 0.5, 0.3, 0.2])
    with pytest.raises(InsufficientPoints):
        fit_power_law([1000, 2000, 4000, 8000], [1, 0.5, 0.0, 0.1])


def test_proportional_budgets():
    assert proportional_budgets([1000, 2000], 4) == [(125, 500), (250, 1000)]
    with pytest.raises(ValueError):
        proportional_budgets([4], 4)


def test_plan_validation_and_side_condition():
    with pytest.raises(ValueError):
        ExperimentPlan(small(), [(10, 10)], estimators=("magic",))
    plan = ExperimentPlan(small(), [(1000, 100), (100, 2000)])
    assert len(plan.side_condition_warnings) == 1
    again = ExperimentPlan.from_dict({"spec": small().to_dict(), "budgets": [[10, 100]], "trials": 5, "seed": 3})
    assert again.seed.seed == 3


def test_se_shrinks_with_trials():
    spec = small()
    a = run_mse(ExperimentPlan(spec, [(50, 400)], trials=1500), workers=1).rows[0]
    b = run_mse(ExperimentPlan(spec, [(50, 400)], trials=3000), workers=1).rows[0]
    assert a["se"] / b["se"] == pytest.approx(np.sqrt(2), rel=0.2)


@pytest.mark.slow
def test_abae_beats_uniform_allocation(suite):
    plan = ExperimentPlan(default_suite(), [(100, 4000)], trials=6000, estimators=("abae", "uniform-allocation"))
    res = run_mse(plan, data=suite[:2], workers=1)
    d, se = paired_difference(res.squared_errors("abae", 100, 4000), res.squared_errors("uniform-allocation", 100, 4000))
    assert d < 0 and -d > 3 * se


@pytest.mark.parametrize(
    "spec",
    [small(), small(value_law="truncated-normal"), SyntheticSpec(p=(0.3, 0.3), mu=(0, 5), sigma=(0.5, 4.0), records_per_stratum=5000)],
    ids=["default", "truncated", "two-strata"],
)
def test_oracle_optimal_not_worse_than_uniform(spec):
    plan = ExperimentPlan(spec, [(50, 800)], trials=1500, estimators=("oracle-optimal", "uniform-allocation"))
    res = run_mse(plan, workers=1)
    d, se = paired_difference(res.squared_errors("oracle-optimal", 50, 800), res.squared_errors("uniform-allocation", 50, 800))
    assert d <= 3 * se


def test_oracle_conditioned_under_upper_bound():
    plan = ExperimentPlan(small(20_000), [(250, 1000)], trials=3000, estimators=("oracle-conditioned",))
    row = run_mse(plan, workers=1).rows[0]
    assert row["mse"] <= row["e_star"] + 3 * row["se"]


@pytest.mark.slow
def test_reuse_not_worse_than_no_reuse():
    plan = ExperimentPlan(small(), [(50, 400)], trials=10_000, estimators=("abae", "abae-reuse"))
    res = run_mse(plan, workers=1)
    d, se = paired_difference(res.squared_errors("abae-reuse", 50, 400), res.squared_errors("abae", 50, 400))
    assert d <= 3 * se


def test_worker_count_independent_results(monkeypatch):
    plan = ExperimentPlan(small(1000), [(20, 200)], trials=64, estimators=("abae", "oracle-optimal"))
    one = run_mse(plan, workers=1)
    two = run_mse(plan, workers=2)
    assert one.to_json() == two.to_json()
    monkeypatch.setenv("ABAE_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("ABAE_THREADS", "0")
    assert worker_count() >= 1


def test_result_serialisation():
    plan = ExperimentPlan(small(1000), [(20, 200), (40, 400)], trials=10, estimators=("abae", "uniform-allocation"))
    res = run_mse(plan, workers=1)
    doc = json.loads(res.to_json())
    assert len(doc["rows"]) == 4
    assert doc["population"]["p"] == [0.01, 0.05, 0.2, 0.5]
    lines = res.to_csv().splitlines()
    assert len(lines) == 5 and lines[0].startswith("estimator,")
    assert all(r["mse"] >= 0 for r in res.rows)


def test_fit_rate_axes():
    plan = ExperimentPlan(small(), proportional_budgets([200, 400, 800, 1600], 4), trials=200)
    res = run_mse(plan, workers=1)
    fit = fit_rate(res, "abae", "n-total")
    assert fit.n_points == 4 and fit.slope < 0
    with pytest.raises(ValueError):
        fit_rate(res, "abae", "diagonal")


def test_coverage_half_alpha():
    plan = ExperimentPlan(small(20_000), [(200, 4000)], trials=400)
    row = run_coverage(plan, BootstrapConfig(resamples=300, alpha=0.5))[0]
    assert abs(row["coverage"] - 0.5) <= 3 * np.sqrt(0.25 / 400)


def test_coverage_degenerate_population():
    spec = SyntheticSpec(p=(0.2, 0.5), mu=(1.5, 1.5), sigma=(0.0, 0.0), records_per_stratum=500)
    row = run_coverage(ExperimentPlan(spec, [(20, 100)], trials=300), BootstrapConfig(resamples=100))[0]
    assert row["coverage"] == 1.0


def test_coverage_preconditions():
    with pytest.raises(ValueError):
        run_coverage(ExperimentPlan(small(1000), [(20, 100)], trials=100), BootstrapConfig())
    with pytest.raises(ValueError):
        run_coverage(ExperimentPlan(small(1000), [(20, 100)], trials=300, estimators=("oracle-optimal",)), BootstrapConfig())
