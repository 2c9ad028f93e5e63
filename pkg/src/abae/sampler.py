"""Two-stage stratified sampling and the ratio estimator over strata."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .allocation import AllocationPlan, empirical_allocation
from .core import (
    STREAM_BOOTSTRAP,
    STREAM_STAGE1,
    STREAM_STAGE2,
    BudgetLedger,
    Dataset,
    InvalidK,
    NoPositiveSamples,
    RngSeed,
)
from .stratifier import Strata, stratify

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StratumEstimates:
    p_hat: np.ndarray
    mu_hat: np.ndarray
    sigma_hat: np.ndarray
    b: np.ndarray
    drawn: np.ndarray

    @property
    def k(self) -> int:
        return len(self.p_hat)


@dataclass
class StratumSamples:
    """Draws for one stratum, in draw order. ``*_pos`` are dataset positions."""

    stage1_pos: np.ndarray
    stage1_pred: np.ndarray
    stage1_value: np.ndarray
    stage2_pos: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    stage2_pred: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=bool))
    stage2_value: np.ndarray = field(default_factory=lambda: np.empty(0))
    stage1_local: np.ndarray | None = None

    @property
    def x1(self) -> np.ndarray:
        return self.stage1_value[self.stage1_pred]

    @property
    def x2(self) -> np.ndarray:
        return self.stage2_value[self.stage2_pred]

    def pool(self, stage: str):
        """(pred, value) arrays for ``stage1``, ``stage2`` or the merged ``both`` pool."""
        if stage == "stage1":
            return self.stage1_pred, self.stage1_value
        if stage == "stage2":
            return self.stage2_pred, self.stage2_value
        return (
            np.concatenate([self.stage1_pred, self.stage2_pred]),
            np.concatenate([self.stage1_value, self.stage2_value]),
        )


@dataclass
class SampleStore:
    strata: list[StratumSamples]
    reuse: bool = False
    stage2_done: bool = False


@dataclass(frozen=True)
class ConfidenceInterval:
    low: float
    high: float
    alpha: float

    def contains(self, x: float) -> bool:
        return self.low <= x <= self.high

    def to_dict(self) -> dict:
        return {"low": self.low, "high": self.high, "alpha": self.alpha}


@dataclass
class QueryReport:
    mu_all_hat: float
    ci: ConfidenceInterval | None
    estimates: StratumEstimates
    stage1: StratumEstimates
    allocation: AllocationPlan
    spent: int
    seed: RngSeed
    n1: int
    n2: int
    reuse: bool
    warnings: list[str] = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.estimates.k

    def to_dict(self) -> dict:
        est, s1, plan = self.estimates, self.stage1, self.allocation
        strata = [
            {
                "p_hat": float(est.p_hat[j]),
                "mu_hat": float(est.mu_hat[j]),
                "sigma_hat": float(est.sigma_hat[j]),
                "b1": int(s1.b[j]),
                "b2": int(est.b[j]),
                "t_hat": float(plan.t[j]),
                "draws": int(plan.draws[j]),
            }
            for j in range(est.k)
        ]
        return {
            "estimate": float(self.mu_all_hat),
            "ci": None if self.ci is None else self.ci.to_dict(),
            "strata": strata,
            "budget": {"n1": self.n1, "n2": self.n2, "k": self.k, "spent": int(self.spent)},
            "reuse": self.reuse,
            "seed": self.seed.to_dict(),
            "warnings": list(self.warnings),
        }


def _moments(x: np.ndarray) -> tuple[float, float]:
    b = len(x)
    if b == 0:
        return 0.0, 0.0
    mu = float(x.mean())
    if b == 1:
        return mu, 0.0
    return mu, float(np.sqrt(np.sum((x - mu) ** 2) / (b - 1)))


def estimates_from_pools(preds, values, p_override=None) -> StratumEstimates:
    """Estimates from per-stratum (pred, value) pools; ``p_override`` keeps given rates."""
    k = len(preds)
    p_hat = np.zeros(k)
    mu_hat = np.zeros(k)
    sigma_hat = np.zeros(k)
    b = np.zeros(k, dtype=np.int64)
    drawn = np.zeros(k, dtype=np.int64)
    for j, (pred, val) in enumerate(zip(preds, values)):
        drawn[j] = len(pred)
        b[j] = int(np.count_nonzero(pred))
        if drawn[j]:
            p_hat[j] = b[j] / drawn[j]
        mu_hat[j], sigma_hat[j] = _moments(val[pred])
    if p_override is not None:
        p_hat = np.asarray(p_override, dtype=np.float64).copy()
    return StratumEstimates(p_hat, mu_hat, sigma_hat, b, drawn)


def _sample_excluding(rng: np.random.Generator, n: int, m: int, taken: np.ndarray) -> np.ndarray:
    """Up to m local indices drawn uniformly without replacement from range(n) minus ``taken``."""
    if m <= 0:
        return np.empty(0, dtype=np.int64)
    if len(taken) == 0:
        return rng.choice(n, size=min(m, n), replace=False)
    want = m + len(taken)
    if want <= n:
        # a uniform ordered draw, filtered, is uniform over the complement
        cand = rng.choice(n, size=want, replace=False)
        return cand[~np.isin(cand, taken, assume_unique=True)][:m]
    free = np.setdiff1d(np.arange(n), taken, assume_unique=True)
    return rng.permutation(free)[:m]


def stage1(
    strata: Strata,
    dataset: Dataset,
    n1: int,
    ledger: BudgetLedger,
    rng: RngSeed,
    warnings: list[str] | None = None,
) -> tuple[StratumEstimates, SampleStore]:
    if n1 < 1:
        raise ValueError("n1 must be at least 1")
    gen = rng.generator(STREAM_STAGE1)
    samples = []
    for j, members in enumerate(strata.positions):
        size = len(members)
        if size < n1 and warnings is not None:
            warnings.append(f"StratumTooSmall: stratum {j} has {size} records < n1={n1}")
        local = gen.choice(size, size=min(n1, size), replace=False)
        pos = members[local]
        pred, val = ledger.reveal(pos)
        samples.append(StratumSamples(pos, pred, val, stage1_local=local))
    store = SampleStore(samples)
    est = estimates_from_pools([s.stage1_pred for s in samples], [s.stage1_value for s in samples])
    return est, store


def stage2(
    strata: Strata,
    dataset: Dataset,
    plan: AllocationPlan,
    store: SampleStore,
    reuse: bool,
    ledger: BudgetLedger,
    rng: RngSeed,
    stage1_estimates: StratumEstimates | None = None,
    warnings: list[str] | None = None,
) -> tuple[StratumEstimates, SampleStore]:
    gen = rng.generator(STREAM_STAGE2)
    for j, members in enumerate(strata.positions):
        s = store.strata[j]
        m = int(plan.draws[j])
        size = len(members)
        taken = s.stage1_local
        if taken is None:
            taken = np.flatnonzero(np.isin(members, s.stage1_pos))
        local = _sample_excluding(gen, size, m, taken)
        if len(local) < m and warnings is not None:
            warnings.append(f"StratumExhausted: stratum {j} had {len(local)} unsampled records, {m} requested")
        pos = members[local]
        pred, val = ledger.reveal(pos)
        s.stage2_pos, s.stage2_pred, s.stage2_value = pos, pred, val
    store.reuse = bool(reuse)
    store.stage2_done = True
    if reuse:
        pools = [s.pool("both") for s in store.strata]
        est = estimates_from_pools([p for p, _ in pools], [v for _, v in pools])
    else:
        if stage1_estimates is None:
            stage1_estimates = estimates_from_pools(
                [s.stage1_pred for s in store.strata], [s.stage1_value for s in store.strata]
            )
        est = estimates_from_pools(
            [s.stage2_pred for s in store.strata],
            [s.stage2_value for s in store.strata],
            p_override=stage1_estimates.p_hat,
        )
    return est, store


def combine(p_hat, mu_hat) -> float:
    p_hat = np.asarray(p_hat, dtype=np.float64)
    total = p_hat.sum()
    if not total > 0:
        raise NoPositiveSamples("no stratum produced a predicate-matching sample")
    return float(np.dot(p_hat, mu_hat) / total)


def estimate_mu_all(estimates: StratumEstimates) -> float:
    return combine(estimates.p_hat, estimates.mu_hat)


def run_abae(
    dataset: Dataset,
    k: int,
    n1: int,
    n2: int,
    reuse: bool = False,
    rng: RngSeed | None = None,
    bootstrap=None,
    oracle=None,
    strata: Strata | None = None,
    c_mu: float | None = None,
    allocator=None,
) -> QueryReport:
    """Stratify, pilot-sample, allocate, sample again and estimate.

    ``bootstrap`` is a :class:`~abae.bootstrap.BootstrapConfig` or None to skip
    the interval. ``strata`` may be passed to avoid re-sorting a shared dataset.
    ``allocator(stage1_estimates, n2)`` overrides the allocation rule.
    """
    if min(n1, n2) < 1:
        raise ValueError("n1 and n2 must be positive")
    if not isinstance(k, (int, np.integer)) or k < 1 or k > len(dataset):
        raise InvalidK(f"k must be in [1, {len(dataset)}], got {k}")
    rng = rng or RngSeed()
    strata = strata or stratify(dataset, k)
    if strata.k != k:
        raise InvalidK(f"precomputed strata have k={strata.k}, expected {k}")
    ledger = BudgetLedger.for_dataset(dataset, n1, n2, k, oracle)
    warnings: list[str] = []

    est1, store = stage1(strata, dataset, n1, ledger, rng, warnings)
    plan = (allocator or empirical_allocation)(est1, n2)
    warnings.extend(plan.warnings)
    est2, store = stage2(strata, dataset, plan, store, reuse, ledger, rng, est1, warnings)
    mu_all = estimate_mu_all(est2)

    ci = None
    if bootstrap is not None:
        from .bootstrap import adjust_ci, bootstrap_ci

        low, high = bootstrap_ci(store, est2, bootstrap, rng.generator(STREAM_BOOTSTRAP))
        if bootstrap.adjustment:
            if c_mu is None:
                raise ValueError("c_mu is required when the small-sample adjustment is enabled")
            low, high = adjust_ci(low, high, est2, bootstrap, c_mu)
        ci = ConfidenceInterval(low, high, bootstrap.alpha)
    for w in warnings:
        log.debug(w)
    return QueryReport(mu_all, ci, est2, est1, plan, ledger.spent, rng, int(n1), int(n2), bool(reuse), warnings)
