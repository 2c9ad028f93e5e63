import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abae.allocation import (
    AllocationPlan,
    TruePopulation,
    ceil_draws,
    empirical_allocation,
    loss,
    loss_batch,
    mse_upper_bound,
    optimal_allocation,
    uniform_allocation,
)
from abae.sampler import StratumEstimates

TWO = TruePopulation(p=[0.5, 0.5], sigma=[1.0, 3.0], mu=[0.0, 0.0])


def grid_minimiser(pop, n, steps=20001):
    """Brute-force minimiser over the two-stratum simplex."""
    t0 = np.linspace(0, 1, steps)
    ts = np.stack([t0, 1 - t0], axis=1)
    vals = [loss(t, pop, n) for t in ts]
    i = int(np.argmin(vals))
    return ts[i], vals[i]


def test_two_stratum_optimum_matches_grid():
    plan = optimal_allocation(TWO, n2=100)
    np.testing.assert_allclose(plan.t, [0.25, 0.75], rtol=1e-12)
    t_grid, v_grid = grid_minimiser(TWO, 400)
    np.testing.assert_allclose(plan.t, t_grid, atol=1e-4)
    assert loss(plan.t, TWO, 400) == pytest.approx(0.02, rel=1e-12)
    assert v_grid == pytest.approx(0.02, rel=1e-6)
    assert plan.draws.tolist() == [25, 75]


def test_upper_bound_values():
    assert mse_upper_bound(TWO, 400) == pytest.approx(0.02, rel=1e-12)
    assert mse_upper_bound(TWO, 800) == pytest.approx(0.01, rel=1e-12)
    with pytest.raises(ValueError):
        mse_upper_bound(TWO, 0)


def test_loss_infinite_when_needed_stratum_starved():
    assert loss([1.0, 0.0], TWO, 100) == float("inf")
    # a zero-variance stratum may get nothing
    pop = TruePopulation([0.5, 0.5], [0.0, 1.0], [1.0, 1.0])
    assert np.isfinite(loss([0.0, 1.0], pop, 100))


def test_degenerate_allocation_is_uniform_and_flagged():
    est = StratumEstimates(
        p_hat=np.array([0.0, 0.3, 0.2]),
        mu_hat=np.zeros(3),
        sigma_hat=np.zeros(3),
        b=np.zeros(3, dtype=int),
        drawn=np.full(3, 10),
    )
    plan = empirical_allocation(est, 30)
    assert plan.degenerate
    np.testing.assert_allclose(plan.t, [1 / 3] * 3)
    assert plan.draws.tolist() == [10, 10, 10]
    assert plan.warnings


def test_ceil_draws_total_within_k():
    t = np.array([0.1, 0.2, 0.3, 0.4])
    d = ceil_draws(t, 97)
    assert 97 <= d.sum() <= 97 + 4
    assert ceil_draws(np.array([0.25, 0.75]), 100).tolist() == [25, 75]


def test_plan_rejects_off_simplex():
    with pytest.raises(ValueError):
        AllocationPlan(np.array([0.5, 0.6]), np.array([1, 1]), 2)


def test_uniform():
    plan = uniform_allocation(4, 10)
    assert plan.draws.tolist() == [3, 3, 3, 3]


populations = st.integers(1, 8).flatmap(
    lambda k: st.tuples(
        st.lists(st.floats(1e-3, 1.0), min_size=k, max_size=k),
        st.lists(st.floats(1e-3, 10.0), min_size=k, max_size=k),
    )
)


@settings(max_examples=200, deadline=None)
@given(populations, st.integers(1, 10**6))
def test_optimal_loss_equals_upper_bound(ps, n):
    pop = TruePopulation(ps[0], ps[1], np.zeros(len(ps[0])))
    plan = optimal_allocation(pop)
    assert loss(plan.t, pop, n) == pytest.approx(mse_upper_bound(pop, n), rel=1e-10)


@settings(max_examples=100, deadline=None)
@given(populations, st.floats(0.01, 100.0), st.integers(0, 2**32 - 1))
def test_optimum_beats_random_allocations_and_is_scale_free(ps, scale, seed):
    pop = TruePopulation(ps[0], ps[1], np.zeros(len(ps[0])))
    t = optimal_allocation(pop).t
    rng = np.random.default_rng(seed)
    ts = rng.dirichlet(np.ones(pop.k), size=200)
    best = loss(t, pop, 100)
    assert (loss_batch(ts, pop, 100) >= best * (1 - 1e-12)).all()
    scaled = TruePopulation(pop.p, pop.sigma * scale, pop.mu)
    np.testing.assert_allclose(optimal_allocation(scaled).t, t, rtol=1e-9)
    assert abs(t.sum() - 1) < 1e-12 and (t >= 0).all()


def test_loss_batch_matches_scalar():
    pop = TruePopulation([0.1, 0.4, 0.9], [1.0, 2.0, 0.5], [0, 0, 0])
    ts = np.random.default_rng(1).dirichlet(np.ones(3), size=50)
    ts[0] = [0.0, 0.5, 0.5]
    np.testing.assert_allclose(loss_batch(ts, pop, 50), [loss(t, pop, 50) for t in ts])
