"""Two-stage stratified sampling for aggregation queries with expensive predicates."""
from .allocation import (
    AllocationPlan,
    TruePopulation,
    empirical_allocation,
    loss,
    mse_upper_bound,
    optimal_allocation,
)
from .bootstrap import BootstrapConfig, adjust_ci, bootstrap_ci
from .core import (
    AbaeError,
    BudgetExhausted,
    BudgetLedger,
    Dataset,
    InvalidK,
    NoPositiveSamples,
    Record,
    RngSeed,
    charge_and_reveal,
)
from .sampler import QueryReport, StratumEstimates, estimate_mu_all, run_abae, stage1, stage2
from .stratifier import Strata, stratify
from .synthgen import SyntheticSpec, default_suite, generate

__version__ = "0.1.0"
