"""Monte Carlo experiments: MSE per budget, rate fits and bootstrap coverage."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .allocation import TruePopulation, mse_upper_bound, optimal_allocation, uniform_allocation
from .bootstrap import BootstrapConfig
from .core import AbaeError, Dataset, NoPositiveSamples, RngSeed
from .sampler import _sample_excluding, run_abae
from .stratifier import Strata, stratify
from .synthgen import SyntheticSpec, generate
from .bounds import p_star

log = logging.getLogger(__name__)

ESTIMATORS = ("abae", "abae-reuse", "uniform-allocation", "oracle-optimal", "oracle-conditioned")
# stage-1 failure level used to flag atypical trials
ATYPICAL_DELTA = 0.05


class InsufficientPoints(AbaeError):
    pass


@dataclass
class ExperimentPlan:
    spec: SyntheticSpec
    budgets: list[tuple[int, int]]
    trials: int = 1000
    estimators: tuple[str, ...] = ("abae",)
    seed: RngSeed = field(default_factory=RngSeed)

    def __post_init__(self):
        self.budgets = [(int(a), int(b)) for a, b in self.budgets]
        self.estimators = tuple(self.estimators)
        if isinstance(self.seed, int):
            self.seed = RngSeed(self.seed)
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ValueError(f"unknown estimators {sorted(unknown)}; choose from {ESTIMATORS}")
        if self.trials < 1 or not self.budgets:
            raise ValueError("need at least one budget and one trial")
        if any(n1 < 1 or n2 < 1 for n1, n2 in self.budgets):
            raise ValueError("budgets must be positive")

    @property
    def side_condition_warnings(self) -> list[str]:
        return [
            f"budget (n1={n1}, n2={n2}) violates n2 >= n1^(3/4)"
            for n1, n2 in self.budgets
            if n2 < n1**0.75
        ]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        d = dict(d)
        spec = SyntheticSpec.from_dict(d.pop("spec"))
        seed = d.pop("seed", 0)
        seed = RngSeed(**seed) if isinstance(seed, dict) else RngSeed(int(seed))
        return cls(spec=spec, seed=seed, **d)


def proportional_budgets(totals, k: int, stage1_share: float = 0.5) -> list[tuple[int, int]]:
    """Split each total N into k*n1 + n2 with roughly ``stage1_share`` spent on the pilot stage."""
    out = []
    for total in totals:
        n1 = max(1, int(round(total * stage1_share / k)))
        n2 = int(total) - k * n1
        if n2 < 1:
            raise ValueError(f"total {total} too small for k={k}")
        out.append((n1, n2))
    return out


@dataclass
class TrialErrors:
    """Signed errors per trial (NaN where the estimator failed) plus per-trial side data."""

    error: np.ndarray
    spent: np.ndarray
    atypical: np.ndarray


@dataclass
class ExperimentResult:
    rows: list[dict]
    errors: dict = field(default_factory=dict, repr=False)
    population: TruePopulation | None = None
    warnings: list[str] = field(default_factory=list)

    def row(self, estimator: str, n1: int, n2: int) -> dict:
        for r in self.rows:
            if r["estimator"] == estimator and r["n1"] == n1 and r["n2"] == n2:
                return r
        raise KeyError((estimator, n1, n2))

    def squared_errors(self, estimator: str, n1: int, n2: int) -> np.ndarray:
        return self.errors[(estimator, n1, n2)].error ** 2

    def to_dict(self) -> dict:
        return {
            "population": None if self.population is None else self.population.to_dict(),
            "rows": self.rows,
            "warnings": self.warnings,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = list(self.rows[0].keys()) if self.rows else []
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(self.rows)
        return buf.getvalue()


def mean_and_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=np.float64)
    x = x[~np.isnan(x)]
    if len(x) == 0:
        return float("nan"), float("nan")
    se = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else float("nan")
    return float(x.mean()), se


def paired_difference(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Mean and standard error of ``a - b`` over trials where both are defined."""
    ok = ~(np.isnan(a) | np.isnan(b))
    return mean_and_se(a[ok] - b[ok])


# worker state, set once per process
_STATE: dict = {}


def _init_state(dataset: Dataset, strata: Strata, pop: TruePopulation):
    matched = [dataset.value[pos][dataset.predicate[pos]] for pos in strata.positions]
    _STATE.update(dataset=dataset, strata=strata, pop=pop, matched=matched)


def _oracle_optimal(gen: np.random.Generator, total: int) -> float:
    strata, pop, dataset = _STATE["strata"], _STATE["pop"], _STATE["dataset"]
    plan = optimal_allocation(pop, total)
    mu_hat = np.zeros(strata.k)
    for j, members in enumerate(strata.positions):
        local = _sample_excluding(gen, len(members), int(plan.draws[j]), np.empty(0, dtype=np.int64))
        pos = members[local]
        x = dataset.value[pos][dataset.predicate[pos]]
        if len(x):
            mu_hat[j] = x.mean()
    return float(np.dot(pop.w, mu_hat))


def _oracle_conditioned(gen: np.random.Generator, total: int) -> float:
    """Exactly ceil(p_k T*_k N) matched values per stratum, true weights."""
    pop, matched = _STATE["pop"], _STATE["matched"]
    t = optimal_allocation(pop).t
    b = np.ceil(np.round(pop.p * t * total, 9)).astype(np.int64)
    mu_hat = np.zeros(pop.k)
    for j, x in enumerate(matched):
        m = min(int(b[j]), len(x))
        if m:
            mu_hat[j] = x[gen.choice(len(x), size=m, replace=False)].mean()
    return float(np.dot(pop.w, mu_hat))


def _atypical(stage1_b: np.ndarray, n1: int) -> bool:
    pop = _STATE["pop"]
    return bool(np.any((pop.p > p_star(n1, ATYPICAL_DELTA)) & (stage1_b < 2)))


def _run_trials(estimator: str, n1: int, n2: int, start: int, stop: int, seed: int, stream0: int):
    dataset, strata, pop = _STATE["dataset"], _STATE["strata"], _STATE["pop"]
    k = strata.k
    total = k * n1 + n2
    count = stop - start
    err = np.full(count, np.nan)
    spent = np.zeros(count, dtype=np.int64)
    atyp = np.zeros(count, dtype=bool)
    for i in range(count):
        rs = RngSeed(seed, stream0 + start + i)
        try:
            if estimator in ("abae", "abae-reuse", "uniform-allocation"):
                alloc = (lambda est, m: uniform_allocation(k, m)) if estimator == "uniform-allocation" else None
                rep = run_abae(dataset, k, n1, n2, reuse=estimator == "abae-reuse", rng=rs, strata=strata, allocator=alloc)
                err[i] = rep.mu_all_hat - pop.mu_all
                spent[i] = rep.spent
                atyp[i] = _atypical(rep.stage1.b, n1)
            elif estimator == "oracle-optimal":
                err[i] = _oracle_optimal(rs.generator(4), total) - pop.mu_all
                spent[i] = int(optimal_allocation(pop, total).draws.sum())
            else:
                err[i] = _oracle_conditioned(rs.generator(5), total) - pop.mu_all
                spent[i] = int(np.ceil(np.round(pop.p * optimal_allocation(pop).t * total, 9)).sum())
        except NoPositiveSamples:
            pass
    return start, err, spent, atyp


def worker_count() -> int:
    raw = os.environ.get("ABAE_THREADS", "0").strip() or "0"
    n = int(raw)
    if n < 0:
        raise ValueError("ABAE_THREADS must be >= 0")
    return n if n > 0 else (os.cpu_count() or 1)


def _collect(estimator, n1, n2, trials, seed: RngSeed, workers: int) -> TrialErrors:
    err = np.full(trials, np.nan)
    spent = np.zeros(trials, dtype=np.int64)
    atyp = np.zeros(trials, dtype=bool)
    if workers <= 1 or trials < 64:
        chunks = [_run_trials(estimator, n1, n2, 0, trials, seed.seed, seed.stream_id)]
    else:
        bounds = np.linspace(0, trials, workers * 4 + 1).astype(int)
        with ProcessPoolExecutor(
            max_workers=workers,
            initializer=_init_state,
            initargs=(_STATE["dataset"], _STATE["strata"], _STATE["pop"]),
        ) as pool:
            futs = [
                pool.submit(_run_trials, estimator, n1, n2, int(a), int(b), seed.seed, seed.stream_id)
                for a, b in zip(bounds[:-1], bounds[1:])
                if b > a
            ]
            chunks = [f.result() for f in futs]
    for start, e, s, a in chunks:
        err[start : start + len(e)] = e
        spent[start : start + len(e)] = s
        atyp[start : start + len(e)] = a
    return TrialErrors(err, spent, atyp)


def prepare(spec: SyntheticSpec, data=None):
    """Generate (or accept) the dataset and stratify it once for all trials."""
    dataset, pop = data if data is not None else generate(spec)
    strata = stratify(dataset, spec.k)
    _init_state(dataset, strata, pop)
    return dataset, strata, pop


def run_mse(plan: ExperimentPlan, data=None, workers: int | None = None) -> ExperimentResult:
    """Squared-error statistics for every (estimator, budget) pair.

    Trial i of every estimator uses stream ``plan.seed.stream_id + i``, so
    estimators are paired within a trial. Trials ending in NoPositiveSamples
    are excluded from the MSE and counted under ``failed``.
    """
    dataset, strata, pop = prepare(plan.spec, data)
    workers = worker_count() if workers is None else workers
    result = ExperimentResult(rows=[], population=pop, warnings=plan.side_condition_warnings)
    for w in result.warnings:
        log.warning(w)
    for n1, n2 in plan.budgets:
        total = strata.k * n1 + n2
        e_star = mse_upper_bound(pop, total)
        for est in plan.estimators:
            te = _collect(est, n1, n2, plan.trials, plan.seed, workers)
            result.errors[(est, n1, n2)] = te
            sq = te.error**2
            failed = int(np.isnan(te.error).sum())
            mse, se = mean_and_se(sq)
            mse_typ, se_typ = mean_and_se(np.where(te.atypical, np.nan, sq))
            ok = ~np.isnan(te.error)
            result.rows.append(
                {
                    "estimator": est,
                    "n1": n1,
                    "n2": n2,
                    "n_total": total,
                    "trials": plan.trials,
                    "failed": failed,
                    "mse": mse,
                    "se": se,
                    "mse_typical": mse_typ,
                    "se_typical": se_typ,
                    "atypical": int(te.atypical.sum()),
                    "mean_spent": float(te.spent[ok].mean()) if ok.any() else float("nan"),
                    "e_star": e_star,
                    "side_condition_ok": bool(n2 >= n1**0.75),
                }
            )
            log.info("%s n1=%d n2=%d mse=%.4g se=%.2g failed=%d", est, n1, n2, mse, se, failed)
    return result


@dataclass(frozen=True)
class RateFit:
    slope: float
    stderr: float
    intercept: float
    n_points: int

    def interval(self, level: float = 0.95) -> tuple[float, float]:
        dof = self.n_points - 2
        q = stats.t.ppf(0.5 + level / 2, dof) if dof > 0 else float("inf")
        return self.slope - q * self.stderr, self.slope + q * self.stderr

    def overlaps(self, other: "RateFit", level: float = 0.95) -> bool:
        a, b = self.interval(level), other.interval(level)
        return a[0] <= b[1] and b[0] <= a[1]

    def to_dict(self) -> dict:
        lo, hi = self.interval()
        return {"slope": self.slope, "stderr": self.stderr, "intercept": self.intercept,
                "n_points": self.n_points, "ci95": [lo, hi]}


def fit_power_law(budget, mse) -> RateFit:
    """OLS of log(mse) on log(budget)."""
    x = np.asarray(budget, dtype=np.float64)
    y = np.asarray(mse, dtype=np.float64)
    if len(x) < 4:
        raise InsufficientPoints(f"need at least 4 budget points, got {len(x)}")
    if x.max() / x.min() < 8:
        raise InsufficientPoints("budget points must span at least a factor of 8")
    if (y <= 0).any():
        raise InsufficientPoints("MSE must be positive at every point for a log-log fit")
    fit = stats.linregress(np.log(x), np.log(y))
    return RateFit(float(fit.slope), float(fit.stderr), float(fit.intercept), len(x))


def fit_rate(result: ExperimentResult, estimator: str, axis: str = "n-total") -> RateFit:
    key = {"n-total": "n_total", "n1": "n1", "n2": "n2"}.get(axis)
    if key is None:
        raise ValueError("axis must be one of n1, n2, n-total")
    rows = sorted((r for r in result.rows if r["estimator"] == estimator), key=lambda r: r[key])
    return fit_power_law([r[key] for r in rows], [r["mse"] for r in rows])


def run_coverage(
    plan: ExperimentPlan,
    cfg: BootstrapConfig,
    data=None,
) -> list[dict]:
    """Fraction of trials whose bootstrap interval contains the true mean, per budget."""
    if plan.trials < 300:
        raise ValueError("coverage studies need at least 300 trials")
    dataset, strata, pop = prepare(plan.spec, data)
    rows = []
    for est in plan.estimators:
        if est not in ("abae", "abae-reuse"):
            raise ValueError("coverage is defined for abae and abae-reuse only")
        for n1, n2 in plan.budgets:
            covered = failed = 0
            widths = []
            for i in range(plan.trials):
                rs = RngSeed(plan.seed.seed, plan.seed.stream_id + i)
                try:
                    rep = run_abae(dataset, strata.k, n1, n2, reuse=est == "abae-reuse", rng=rs,
                                   bootstrap=cfg, strata=strata)
                except NoPositiveSamples:
                    failed += 1
                    continue
                covered += rep.ci.contains(pop.mu_all)
                widths.append(rep.ci.high - rep.ci.low)
            n = plan.trials - failed
            cov = covered / n if n else float("nan")
            rows.append(
                {
                    "estimator": est,
                    "n1": n1,
                    "n2": n2,
                    "trials": plan.trials,
                    "failed": failed,
                    "alpha": cfg.alpha,
                    "coverage": cov,
                    "se": math.sqrt(cov * (1 - cov) / n) if n else float("nan"),
                    "median_width": float(np.median(widths)) if widths else float("nan"),
                }
            )
    return rows
