"""Percentile bootstrap for the stratified ratio estimator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import NoPositiveSamples
from .sampler import SampleStore, StratumEstimates, estimate_mu_all

# cap on resamples*pool_size index draws held in memory at once
_CHUNK_ELEMENTS = 1 << 21


@dataclass(frozen=True)
class BootstrapConfig:
    resamples: int = 1000
    alpha: float = 0.05
    min_stratum_samples: int = 30
    adjustment: bool = False

    def __post_init__(self):
        if self.resamples < 100:
            raise ValueError("at least 100 resamples are required for a reported interval")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")


def _resample_pool(gen: np.random.Generator, pred: np.ndarray, value: np.ndarray, resamples: int):
    """Matched counts and matched-value sums for ``resamples`` with-replacement copies of a pool."""
    n = len(pred)
    if n == 0:
        return np.zeros(resamples, dtype=np.int64), np.zeros(resamples)
    matched_value = np.where(pred, value, 0.0)
    pred_i = pred.astype(np.int64)
    counts = np.empty(resamples, dtype=np.int64)
    sums = np.empty(resamples)
    step = max(1, _CHUNK_ELEMENTS // n)
    for start in range(0, resamples, step):
        stop = min(resamples, start + step)
        idx = gen.integers(0, n, size=(stop - start, n))
        counts[start:stop] = pred_i[idx].sum(axis=1)
        sums[start:stop] = matched_value[idx].sum(axis=1)
    return counts, sums


def bootstrap_statistics(store: SampleStore, resamples: int, gen: np.random.Generator) -> np.ndarray:
    """Resampled estimates of the overall mean; resamples with no matches anywhere are dropped.

    Each stratum's drawn records are resampled with replacement at their
    original count. With reuse the merged pool drives both the rate and the
    mean; without it the rate comes from the first-stage pool and the mean
    from the second-stage pool, mirroring the point estimator.
    """
    k = len(store.strata)
    p_star = np.zeros((resamples, k))
    mu_star = np.zeros((resamples, k))
    for j, s in enumerate(store.strata):
        if store.reuse:
            pred, value = s.pool("both")
            counts, sums = _resample_pool(gen, pred, value, resamples)
            n = len(pred)
            p_star[:, j] = counts / n if n else 0.0
        else:
            pred1, value1 = s.pool("stage1")
            c1, _ = _resample_pool(gen, pred1, value1, resamples)
            p_star[:, j] = c1 / len(pred1) if len(pred1) else 0.0
            pred2, value2 = s.pool("stage2") if store.stage2_done else s.pool("stage1")
            counts, sums = _resample_pool(gen, pred2, value2, resamples)
        mu_star[:, j] = np.divide(sums, counts, out=np.zeros(resamples), where=counts > 0)
    total = p_star.sum(axis=1)
    ok = total > 0
    stats = (p_star[ok] * mu_star[ok]).sum(axis=1) / total[ok]
    if len(stats) == 0:
        raise NoPositiveSamples("every bootstrap resample lacked predicate-matching samples")
    return stats


def percentile_interval(stats: np.ndarray, alpha: float) -> tuple[float, float]:
    low, high = np.quantile(stats, [alpha / 2, 1 - alpha / 2], method="linear")
    return float(low), float(high)


def bootstrap_ci(
    store: SampleStore,
    estimates: StratumEstimates,
    cfg: BootstrapConfig,
    rng: np.random.Generator,
) -> tuple[float, float]:
    point = estimate_mu_all(estimates)
    stats = bootstrap_statistics(store, cfg.resamples, rng)
    low, high = percentile_interval(stats, cfg.alpha)
    # percentile intervals can miss a skewed point estimate; widen to include it
    return min(low, point), max(high, point)


def adjust_ci(
    low: float,
    high: float,
    estimates: StratumEstimates,
    cfg: BootstrapConfig,
    c_mu: float,
) -> tuple[float, float]:
    """Widen both ends by ``p_hat_k * c_mu`` summed over strata with few matched samples."""
    if not cfg.adjustment:
        return low, high
    small = estimates.b < cfg.min_stratum_samples
    pad = float(np.sum(estimates.p_hat[small]) * c_mu)
    return low - pad, high + pad
