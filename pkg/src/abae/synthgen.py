"""Synthetic datasets with known per-stratum predicate rate, mean and spread."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .allocation import TruePopulation
from .core import Dataset, InvalidSpec, RngSeed

VALUE_LAWS = ("two-point", "truncated-normal")
# truncated-normal values are clipped at this many sigmas
CLIP_SIGMAS = 5.0


@dataclass(frozen=True)
class SyntheticSpec:
    p: tuple[float, ...]
    mu: tuple[float, ...]
    sigma: tuple[float, ...]
    records_per_stratum: int = 100_000
    value_law: str = "two-point"
    proxy_noise: float = 0.0
    seed: RngSeed = field(default_factory=RngSeed)
    name: str = "synthetic"

    def __post_init__(self):
        for attr in ("p", "mu", "sigma"):
            object.__setattr__(self, attr, tuple(float(x) for x in getattr(self, attr)))
        if isinstance(self.seed, int):
            object.__setattr__(self, "seed", RngSeed(self.seed))
        self.validate()

    @property
    def k(self) -> int:
        return len(self.p)

    def validate(self):
        if not (len(self.p) == len(self.mu) == len(self.sigma)) or not self.p:
            raise InvalidSpec("p, mu and sigma must be non-empty and of equal length")
        if any(not 0 <= p <= 1 for p in self.p):
            raise InvalidSpec("every p must lie in [0, 1]")
        if any(s < 0 for s in self.sigma):
            raise InvalidSpec("every sigma must be non-negative")
        if self.records_per_stratum < 1:
            raise InvalidSpec("records_per_stratum must be positive")
        if self.value_law not in VALUE_LAWS:
            raise InvalidSpec(f"value_law must be one of {VALUE_LAWS}")
        if not 0 <= self.proxy_noise < 1:
            raise InvalidSpec("proxy_noise must lie in [0, 1)")
        if all(_matched_count(p, self.records_per_stratum) == 0 for p in self.p):
            raise InvalidSpec("no stratum would contain a predicate-matching record")

    def to_dict(self) -> dict:
        return {
            "p": list(self.p),
            "mu": list(self.mu),
            "sigma": list(self.sigma),
            "records_per_stratum": self.records_per_stratum,
            "value_law": self.value_law,
            "proxy_noise": self.proxy_noise,
            "seed": self.seed.to_dict(),
            "name": self.name,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        if "k" in d:
            k = d.pop("k")
            if len(d.get("p", ())) != k:
                raise InvalidSpec(f"k={k} does not match {len(d.get('p', ()))} strata")
        seed = d.pop("seed", 0)
        if isinstance(seed, dict):
            seed = RngSeed(**seed)
        elif not isinstance(seed, RngSeed):
            seed = RngSeed(int(seed))
        try:
            return cls(seed=seed, **d)
        except TypeError as e:
            raise InvalidSpec(str(e)) from None


def default_suite(records_per_stratum: int = 100_000, seed: int = 0, value_law: str = "two-point") -> SyntheticSpec:
    """Four strata with rare positives at the low end and heterogeneous sqrt(p)*sigma."""
    return SyntheticSpec(
        p=(0.01, 0.05, 0.2, 0.5),
        mu=(1.0, 2.0, 3.0, 4.0),
        sigma=(1.0, 1.0, 2.0, 2.0),
        records_per_stratum=records_per_stratum,
        value_law=value_law,
        seed=RngSeed(seed),
        name="default",
    )


def _matched_count(p: float, n: int) -> int:
    return int(np.floor(p * n + 0.5))


def _values(gen: np.random.Generator, law: str, mu: float, sigma: float, m: int) -> np.ndarray:
    if law == "two-point":
        signs = np.ones(m)
        signs[m // 2 : 2 * (m // 2)] = -1.0
        if m % 2:
            signs[-1] = 0.0
        return mu + sigma * gen.permutation(signs)
    z = np.clip(gen.standard_normal(m), -CLIP_SIGMAS, CLIP_SIGMAS)
    return mu + sigma * z


def generate(spec: SyntheticSpec) -> tuple[Dataset, TruePopulation]:
    """Build the dataset and its realised ground truth.

    Stratum k holds ids ``k*n .. (k+1)*n - 1`` and proxies in ``[k/K, (k+1)/K)``
    before noise. Exactly ``round(p_k * n)`` records match. Ground truth is
    computed from the emitted records, so full enumeration reproduces it.
    """
    spec.validate()
    k, n = spec.k, spec.records_per_stratum
    ids = np.arange(k * n, dtype=np.int64)
    proxy = np.empty(k * n)
    value = np.empty(k * n)
    pred = np.zeros(k * n, dtype=bool)
    for j in range(k):
        gen = spec.seed.generator(j)
        sl = slice(j * n, (j + 1) * n)
        band = (j + gen.random(n)) / k
        if spec.proxy_noise > 0:
            band = (1 - spec.proxy_noise) * band + spec.proxy_noise * gen.random(n)
        proxy[sl] = band
        m = _matched_count(spec.p[j], n)
        matched = gen.permutation(n)[:m]
        local_pred = np.zeros(n, dtype=bool)
        local_pred[matched] = True
        local_val = _values(gen, spec.value_law, spec.mu[j], spec.sigma[j], n)
        if m:
            local_val[matched] = _values(gen, spec.value_law, spec.mu[j], spec.sigma[j], m)
        pred[sl] = local_pred
        value[sl] = local_val
    dataset = Dataset(ids, proxy, value, pred, name=spec.name)
    return dataset, population_from_labels(value, pred, np.repeat(np.arange(k), n), k)


def population_from_labels(value, pred, labels, k: int) -> TruePopulation:
    """Exhaustive ground truth: per-stratum rate, matched mean and matched (population) std."""
    p = np.zeros(k)
    mu = np.zeros(k)
    sigma = np.zeros(k)
    for j in range(k):
        in_j = labels == j
        x = value[in_j & pred]
        p[j] = len(x) / np.count_nonzero(in_j)
        if len(x):
            mu[j] = x.mean()
            sigma[j] = x.std()
    return TruePopulation(p, sigma, mu)


def enumerate_population(dataset: Dataset, strata) -> TruePopulation:
    """Brute-force ground truth over every record of a dataset with an inline predicate."""
    if dataset.predicate is None:
        raise InvalidSpec("dataset has no predicate column to enumerate")
    return population_from_labels(dataset.value, dataset.predicate, strata.stratum_of(len(dataset)), strata.k)
