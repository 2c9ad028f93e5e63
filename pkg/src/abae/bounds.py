"""Explicit concentration inequalities for the first- and second-stage estimates.

Every calculator returns the closed-form right-hand side of an inequality that
holds with probability at least ``1 - delta`` (or ``1 - gamma``) per stratum.
:func:`validate_bounds` runs the engine repeatedly on a synthetic dataset and
counts how often each inequality fails.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .allocation import AllocationPlan, TruePopulation, empirical_allocation, optimal_allocation
from .core import AbaeError, BudgetLedger, Dataset, RngSeed
from .sampler import stage1, stage2
from .stratifier import Strata

LEMMAS = (1, 2, 3, 4, 5, 8)
CHECK_NAMES = {
    1: "rate upper bound",
    2: "rate lower bound",
    3: "weight bounds",
    4: "pilot match count",
    5: "variance half-width",
    8: "second-stage match count",
}


class InsufficientMatches(AbaeError):
    pass


def _log_inv(level: float) -> float:
    if not 0 < level <= 1:
        raise ValueError(f"failure probability must lie in (0, 1], got {level}")
    return math.log(1.0 / level)


def _width(p, n1, delta):
    return np.sqrt(2.0 * _log_inv(delta) * np.asarray(p, dtype=np.float64) / n1)


def p_upper_bound(p, n1: int, delta: float):
    return np.asarray(p, dtype=np.float64) + _width(p, n1, delta)


def p_lower_bound(p, n1: int, delta: float):
    return np.maximum(0.0, np.asarray(p, dtype=np.float64) - _width(p, n1, delta))


def w_bounds(p, n1: int, delta: float) -> tuple[np.ndarray, np.ndarray]:
    """Fraction-form bounds on the estimated weights p_hat_k / sum(p_hat)."""
    p = np.asarray(p, dtype=np.float64)
    width = _width(p, n1, delta)
    slack = width.sum()
    p_all = p.sum()
    lower = np.maximum(0.0, (p - width) / (p_all + slack))
    denom = p_all - slack
    upper = (p + width) / denom if denom > 0 else np.full_like(p, np.inf)
    return lower, upper


def b1_lower_bound(p, n1: int, delta: float):
    m = np.asarray(p, dtype=np.float64) * n1
    return np.maximum(0.0, m - np.sqrt(2.0 * _log_inv(delta) * m))


def sigma2_halfwidth(b1: int, delta: float, c_mu4: float) -> float:
    if b1 < 2:
        raise InsufficientMatches(f"variance bound needs at least 2 matched samples, got {b1}")
    return math.sqrt(8.0 * _log_inv(delta) * c_mu4 / b1)


def psigma_upper_bound(p, sigma, n1: int, c_sigma: float):
    """Ceiling on sqrt(p_hat)*sigma_hat for strata with fewer than two first-stage matches."""
    return np.sqrt(np.asarray(p, dtype=np.float64)) * np.asarray(sigma) + math.sqrt(2.0 / n1) * c_sigma


def p_star(n1: int, delta: float) -> float:
    L = _log_inv(delta)
    return (2.0 * L + 2.0 * math.sqrt(L) + 2.0) / n1


def b2_lower_bound(p: float, t_hat: float, n2: int, gamma: float) -> float:
    m = p * t_hat * n2
    if not m > 0:
        raise ValueError("p * t_hat * n2 must be positive")
    return max(0.0, m * (1.0 - math.sqrt(2.0 * _log_inv(gamma) / m)))


@dataclass(frozen=True)
class BoundParams:
    delta: float = 0.05
    gamma: float = 0.05
    c_mu: float = 1.0
    c_sigma: float = 1.0
    c_mu4: float = 1.0
    c_pall: float = 1.0

    def __post_init__(self):
        if not (0 < self.delta < 1 and 0 < self.gamma < 1):
            raise ValueError("delta and gamma must lie in (0, 1)")
        if min(self.c_mu, self.c_sigma, self.c_mu4, self.c_pall) <= 0:
            raise ValueError("bound constants must be positive")


@dataclass(frozen=True)
class BoundCheckReport:
    lemma: int
    level: float
    trials: int
    violations: int
    nominal: float
    per_stratum: tuple[int, ...] = field(default=())

    @property
    def empirical(self) -> float:
        return self.violations / self.trials

    @property
    def tolerance(self) -> float:
        q = self.nominal
        return q + 3.0 * math.sqrt(q * (1.0 - q) / self.trials)

    @property
    def passed(self) -> bool:
        return self.empirical <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "lemma": self.lemma,
            "check": CHECK_NAMES.get(self.lemma, ""),
            "level": self.level,
            "trials": self.trials,
            "violations": self.violations,
            "nominal": self.nominal,
            "empirical": self.empirical,
            "tolerance": self.tolerance,
            "pass": self.passed,
            "per_stratum": list(self.per_stratum),
        }


@dataclass
class Stage1Draws:
    """Per-trial first-stage (and optionally second-stage) outcomes, shape (trials, K)."""

    p_hat: np.ndarray
    b1: np.ndarray
    var_hat: np.ndarray
    t_hat: np.ndarray | None = None
    b2: np.ndarray | None = None


def matched_range_c_mu4(dataset: Dataset, strata: Strata) -> np.ndarray:
    """Per-stratum C^(mu^4) = b^2 with b = max (x_i - x_j)^2 / 2 over matched values."""
    out = np.zeros(strata.k)
    for j, pos in enumerate(strata.positions):
        x = dataset.value[pos][dataset.predicate[pos]]
        if len(x):
            b = 0.5 * (x.max() - x.min()) ** 2
            out[j] = b * b
    return out


def simulate(
    dataset: Dataset,
    strata: Strata,
    pop: TruePopulation,
    n1: int,
    trials: int,
    rng: RngSeed,
    n2: int | None = None,
    use_true_allocation: bool = False,
) -> Stage1Draws:
    k = strata.k
    p_hat = np.zeros((trials, k))
    b1 = np.zeros((trials, k), dtype=np.int64)
    var_hat = np.zeros((trials, k))
    t_hat = np.zeros((trials, k)) if n2 else None
    b2 = np.zeros((trials, k), dtype=np.int64) if n2 else None
    for i in range(trials):
        seed = RngSeed(rng.seed, rng.stream_id + i)
        ledger = BudgetLedger.for_dataset(dataset, n1, n2 or 1, k)
        est, store = stage1(strata, dataset, n1, ledger, seed)
        p_hat[i], b1[i], var_hat[i] = est.p_hat, est.b, est.sigma_hat**2
        if n2:
            plan: AllocationPlan = optimal_allocation(pop, n2) if use_true_allocation else empirical_allocation(est, n2)
            est2, _ = stage2(strata, dataset, plan, store, False, ledger, seed, est)
            t_hat[i], b2[i] = plan.t, est2.b
    return Stage1Draws(p_hat, b1, var_hat, t_hat, b2)


def check(
    lemma: int,
    draws: Stage1Draws,
    pop: TruePopulation,
    n1: int,
    level: float,
    n2: int | None = None,
    c_mu4=None,
    delta: float = 0.05,
) -> BoundCheckReport:
    """Count trials where the lemma's inequality fails for at least one stratum.

    ``level`` is delta for the first-stage checks and gamma for the
    second-stage match count, where ``delta`` only sets the p_* cutoff.
    """
    p = pop.p
    k = len(p)
    if lemma == 1:
        bad = draws.p_hat > p_upper_bound(p, n1, level)
        nominal = k * level
    elif lemma == 2:
        bad = draws.p_hat < p_lower_bound(p, n1, level)
        nominal = k * level
    elif lemma == 3:
        lo, hi = w_bounds(p, n1, level)
        tot = draws.p_hat.sum(axis=1, keepdims=True)
        w_hat = np.divide(draws.p_hat, tot, out=np.zeros_like(draws.p_hat), where=tot > 0)
        bad = (w_hat < lo) | (w_hat > hi)
        nominal = 2 * k * level
    elif lemma == 4:
        bad = draws.b1 < b1_lower_bound(p, n1, level)
        nominal = k * level
    elif lemma == 5:
        if c_mu4 is None:
            raise ValueError("the variance check needs per-stratum c_mu4")
        c = np.broadcast_to(np.asarray(c_mu4, dtype=np.float64), (k,))
        ok = draws.b1 >= 2
        half = np.sqrt(8.0 * _log_inv(level) * c / np.maximum(draws.b1, 1))
        bad = ok & (np.abs(draws.var_hat - pop.sigma**2) > half)
        nominal = 2 * k * level
    elif lemma == 8:
        if draws.b2 is None or not n2:
            raise ValueError("the second-stage check needs second-stage draws")
        m = p * draws.t_hat * n2
        eligible = (p > p_star(n1, delta)) & (m > 0)
        safe_m = np.where(m > 0, m, 1.0)
        bound = np.maximum(0.0, safe_m * (1.0 - np.sqrt(2.0 * _log_inv(level) / safe_m)))
        bad = eligible & (draws.b2 < bound)
        nominal = k * level
    else:
        raise ValueError(f"no validator for lemma {lemma}; choose from {LEMMAS}")
    return BoundCheckReport(
        lemma=lemma,
        level=float(level),
        trials=len(bad),
        violations=int(bad.any(axis=1).sum()),
        nominal=min(1.0, float(nominal)),
        per_stratum=tuple(int(v) for v in bad.sum(axis=0)),
    )


def validate_bound(
    lemma: int,
    pop: TruePopulation,
    n1: int,
    n2: int | None,
    level: float,
    trials: int,
    rng: RngSeed,
    *,
    dataset: Dataset,
    strata: Strata,
    delta: float = 0.05,
    c_mu4=None,
    use_true_allocation: bool = False,
) -> BoundCheckReport:
    if trials < 1000:
        raise ValueError("at least 1000 trials are required")
    need_stage2 = lemma == 8
    draws = simulate(dataset, strata, pop, n1, trials, rng, n2 if need_stage2 else None, use_true_allocation)
    if lemma == 5 and c_mu4 is None:
        c_mu4 = matched_range_c_mu4(dataset, strata)
    return check(lemma, draws, pop, n1, level, n2, c_mu4, delta)


def validate_bounds(
    lemmas,
    levels,
    pop: TruePopulation,
    n1: int,
    n2: int,
    trials: int,
    rng: RngSeed,
    *,
    dataset: Dataset,
    strata: Strata,
    delta: float = 0.05,
    use_true_allocation: bool = False,
) -> list[BoundCheckReport]:
    """Every (lemma, level) pair checked against one shared set of simulated queries."""
    if trials < 1000:
        raise ValueError("at least 1000 trials are required")
    lemmas = list(lemmas)
    draws = simulate(dataset, strata, pop, n1, trials, rng, n2 if 8 in lemmas else None, use_true_allocation)
    c_mu4 = matched_range_c_mu4(dataset, strata) if 5 in lemmas else None
    return [check(lem, draws, pop, n1, lvl, n2, c_mu4, delta) for lem in lemmas for lvl in levels]
