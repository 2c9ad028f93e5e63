import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abae.bootstrap import BootstrapConfig, adjust_ci, bootstrap_ci, bootstrap_statistics, percentile_interval
from abae.core import NoPositiveSamples, RngSeed
from abae.sampler import SampleStore, StratumEstimates, StratumSamples, run_abae

from conftest import make_dataset


def _est(p, b):
    k = len(p)
    return StratumEstimates(np.array(p, float), np.zeros(k), np.zeros(k), np.array(b), np.full(k, 100))


def test_config_validation():
    with pytest.raises(ValueError):
        BootstrapConfig(resamples=99)
    with pytest.raises(ValueError):
        BootstrapConfig(alpha=1.0)


def test_constant_values_give_zero_width():
    rng = np.random.default_rng(3)
    ds = make_dataset(rng.random(400) < 0.4, np.full(400, 2.5), proxy=rng.random(400))
    rep = run_abae(ds, 4, 20, 100, rng=RngSeed(1), bootstrap=BootstrapConfig(resamples=200))
    assert rep.ci.low == pytest.approx(2.5, rel=1e-12)
    assert rep.ci.high == pytest.approx(2.5, rel=1e-12)


def test_percentile_is_linear_quantile():
    stats = np.random.default_rng(0).permutation(np.arange(1000.0))
    low, high = percentile_interval(stats, 0.05)
    # positions 0.025*999 = 24.975 and 0.975*999 = 974.025 between order statistics
    assert low == pytest.approx(24.975)
    assert high == pytest.approx(974.025)


def test_adjust_examples():
    cfg = BootstrapConfig(adjustment=True)
    est = _est([0.1, 0.5], [5, 80])
    assert adjust_ci(1.0, 2.0, est, cfg, 2.0) == pytest.approx((0.8, 2.2))
    assert adjust_ci(1.0, 2.0, est, cfg, 0.0) == (1.0, 2.0)
    assert adjust_ci(1.0, 2.0, _est([0.1, 0.5], [30, 80]), cfg, 2.0) == (1.0, 2.0)
    assert adjust_ci(1.0, 2.0, est, BootstrapConfig(adjustment=False), 2.0) == (1.0, 2.0)


def test_no_positive_samples():
    store = SampleStore([StratumSamples(np.arange(3), np.zeros(3, bool), np.zeros(3))])
    with pytest.raises(NoPositiveSamples):
        bootstrap_statistics(store, 100, np.random.default_rng(0))


def test_alpha_nesting(small_suite):
    ds, _, strata = small_suite
    for reuse in (False, True):
        store = _store_of(ds, strata, reuse)
        stats = bootstrap_statistics(store, 1000, np.random.default_rng(7))
        lo99, hi99 = percentile_interval(stats, 0.01)
        lo90, hi90 = percentile_interval(stats, 0.10)
        assert lo99 <= lo90 <= hi90 <= hi99


def _store_of(ds, strata, reuse, seed=4, n2=500):
    from abae.allocation import empirical_allocation
    from abae.core import BudgetLedger
    from abae.sampler import stage1, stage2

    ledger = BudgetLedger.for_dataset(ds, 50, n2, 4)
    est1, store = stage1(strata, ds, 50, ledger, RngSeed(seed))
    _, store = stage2(strata, ds, empirical_allocation(est1, n2), store, reuse, ledger, RngSeed(seed), est1)
    return store


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.booleans(), st.sampled_from([0.01, 0.2, 0.5]))
def test_ci_contains_estimate(seed, reuse, alpha):
    rng = np.random.default_rng(seed)
    n = 120
    ds = make_dataset(rng.random(n) < 0.3, rng.exponential(size=n) ** 3, proxy=rng.random(n))
    try:
        rep = run_abae(ds, 3, 5, 20, reuse=reuse, rng=RngSeed(seed), bootstrap=BootstrapConfig(resamples=100, alpha=alpha))
    except NoPositiveSamples:
        return
    assert rep.ci.low <= rep.mu_all_hat <= rep.ci.high


def test_bootstrap_is_reproducible(small_suite):
    ds, _, strata = small_suite
    cfg = BootstrapConfig(resamples=300)
    a = run_abae(ds, 4, 50, 400, rng=RngSeed(9), strata=strata, bootstrap=cfg)
    b = run_abae(ds, 4, 50, 400, rng=RngSeed(9), strata=strata, bootstrap=cfg)
    assert (a.ci.low, a.ci.high) == (b.ci.low, b.ci.high)


def test_adjustment_needs_c_mu(small_suite):
    ds, _, strata = small_suite
    with pytest.raises(ValueError):
        run_abae(ds, 4, 50, 400, strata=strata, bootstrap=BootstrapConfig(adjustment=True))
    rep = run_abae(ds, 4, 50, 400, strata=strata, c_mu=1.0, bootstrap=BootstrapConfig(adjustment=True, resamples=200))
    plain = run_abae(ds, 4, 50, 400, strata=strata, bootstrap=BootstrapConfig(resamples=200))
    assert rep.ci.low < plain.ci.low and rep.ci.high > plain.ci.high


def test_width_decays_with_budget(suite):
    ds, _, strata = suite
    cfg = BootstrapConfig()
    widths = {}
    for n2 in (2000, 8000):
        w = []
        for seed in range(30):
            ci = run_abae(ds, 4, 100, n2, rng=RngSeed(seed), strata=strata, bootstrap=cfg).ci
            w.append(ci.high - ci.low)
        widths[n2] = np.median(w)
    assert widths[8000] < widths[2000]
