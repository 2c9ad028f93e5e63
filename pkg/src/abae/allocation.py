"""Neyman-style allocation of the second-stage budget.

The optimal share of stratum k is proportional to ``sqrt(p_k) * sigma_k``.
``loss`` is the variance functional that share minimises and
``mse_upper_bound`` is its value at the optimum.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# n2 * t is rounded to this many decimals before the ceiling so that exact
# products such as 100 * 0.75 are not pushed up by representation error.
_CEIL_DECIMALS = 9


@dataclass(frozen=True)
class TruePopulation:
    p: np.ndarray
    sigma: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        mu = np.asarray(self.mu, dtype=np.float64)
        if not (p.shape == sigma.shape == mu.shape) or p.ndim != 1:
            raise ValueError("p, sigma and mu must be 1-d arrays of equal length")
        if ((p < 0) | (p > 1)).any() or (sigma < 0).any():
            raise ValueError("p must lie in [0, 1] and sigma must be non-negative")
        if p.sum() <= 0:
            raise ValueError("at least one stratum needs a positive predicate rate")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "mu", mu)

    @property
    def k(self) -> int:
        return len(self.p)

    @property
    def p_all(self) -> float:
        return float(self.p.sum())

    @property
    def w(self) -> np.ndarray:
        return self.p / self.p.sum()

    @property
    def mu_all(self) -> float:
        return float(np.dot(self.w, self.mu))

    def to_dict(self) -> dict:
        return {
            "p": self.p.tolist(),
            "sigma": self.sigma.tolist(),
            "mu": self.mu.tolist(),
            "p_all": self.p_all,
            "w": self.w.tolist(),
            "mu_all": self.mu_all,
        }


@dataclass(frozen=True)
class AllocationPlan:
    t: np.ndarray
    draws: np.ndarray
    n2: int
    degenerate: bool = False
    warnings: tuple[str, ...] = field(default=())

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64)
        if (t < 0).any() or abs(t.sum() - 1.0) > 1e-12:
            raise ValueError(f"allocation fractions must lie on the simplex, got {t}")


def ceil_draws(t: np.ndarray, n2: int) -> np.ndarray:
    return np.ceil(np.round(n2 * np.asarray(t, dtype=np.float64), _CEIL_DECIMALS)).astype(np.int64)


def neyman_fractions(p, sigma) -> tuple[np.ndarray, bool]:
    """``sqrt(p)*sigma`` normalised to the simplex; uniform with a flag when all scores are zero."""
    score = np.sqrt(np.asarray(p, dtype=np.float64)) * np.asarray(sigma, dtype=np.float64)
    total = score.sum()
    if not total > 0:
        k = len(score)
        return np.full(k, 1.0 / k), True
    return score / total, False


def _plan(t: np.ndarray, degenerate: bool, n2: int) -> AllocationPlan:
    warnings = ("degenerate allocation: every sqrt(p)*sigma is zero, using uniform shares",) if degenerate else ()
    return AllocationPlan(t, ceil_draws(t, n2), int(n2), degenerate, warnings)


def optimal_allocation(pop: TruePopulation, n2: int = 0) -> AllocationPlan:
    t, degenerate = neyman_fractions(pop.p, pop.sigma)
    return _plan(t, degenerate, n2)


def empirical_allocation(est, n2: int) -> AllocationPlan:
    """Allocation from first-stage estimates (anything with ``p_hat`` and ``sigma_hat``)."""
    t, degenerate = neyman_fractions(est.p_hat, est.sigma_hat)
    return _plan(t, degenerate, n2)


def uniform_allocation(k: int, n2: int) -> AllocationPlan:
    return AllocationPlan(np.full(k, 1.0 / k), ceil_draws(np.full(k, 1.0 / k), n2), int(n2))


def loss(t, pop: TruePopulation, n: int | float) -> float:
    """Variance functional sum_k w_k^2 sigma_k^2 / (p_k t_k n); +inf if a needed stratum gets nothing."""
    t = np.asarray(t, dtype=np.float64)
    num = pop.w**2 * pop.sigma**2
    active = num > 0
    if (t[active] <= 0).any():
        return float("inf")
    return float(np.sum(num[active] / (pop.p[active] * t[active] * n)))


def loss_batch(ts: np.ndarray, pop: TruePopulation, n: int | float) -> np.ndarray:
    """Row-wise :func:`loss` for a (m, K) array of allocations."""
    ts = np.asarray(ts, dtype=np.float64)
    num = pop.w**2 * pop.sigma**2
    active = num > 0
    coef = num[active] / (pop.p[active] * n)
    sub = ts[:, active]
    with np.errstate(divide="ignore"):
        out = (coef / sub).sum(axis=1)
    out[(sub <= 0).any(axis=1)] = np.inf
    return out


def mse_upper_bound(pop: TruePopulation, n: int | float) -> float:
    if n < 1:
        raise ValueError("n must be at least 1")
    s = np.sum(np.sqrt(pop.p) * pop.sigma)
    return float(s * s / (n * pop.p_all**2))
