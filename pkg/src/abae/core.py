"""Domain types shared by every stage of the engine.

A :class:`Dataset` is immutable and can be shared between concurrent queries.
Everything that changes while a query runs (which records were revealed, how
much budget is spent) lives on the per-query :class:`BudgetLedger`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class AbaeError(Exception):
    """Base class for engine errors."""


class BudgetExhausted(AbaeError):
    pass


class InvalidK(AbaeError):
    pass


class NoPositiveSamples(AbaeError):
    pass


class InvalidSpec(AbaeError):
    pass


class DatasetError(AbaeError):
    pass


@dataclass(frozen=True)
class RngSeed:
    """Root of a reproducible family of random streams.

    ``generator(*path)`` derives a child stream keyed by ``(stream_id, *path)``.
    Children with different paths are independent; equal paths replay exactly.
    """

    seed: int = 0
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not 0 <= int(v) < 2**64:
                raise ValueError(f"{name} must be a 64-bit unsigned integer, got {v}")

    def sequence(self, *path: int) -> np.random.SeedSequence:
        return np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream_id), *map(int, path)))

    def generator(self, *path: int) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(self.sequence(*path)))

    def child(self, stream_id: int) -> "RngSeed":
        return RngSeed(self.seed, stream_id)

    def to_dict(self) -> dict:
        return {"seed": int(self.seed), "stream_id": int(self.stream_id)}


# stream purposes under one query seed
STREAM_STAGE1 = 1
STREAM_STAGE2 = 2
STREAM_BOOTSTRAP = 3


@dataclass(frozen=True)
class Record:
    """One row. ``predicate`` and ``value`` must only be read via :func:`charge_and_reveal`."""

    id: int
    proxy: float
    value: float
    predicate: bool | None = None


class Dataset:
    """Column store of records; ``predicate`` may be absent when an external oracle supplies it."""

    def __init__(self, ids, proxy, value, predicate=None, name: str = "dataset"):
        ids = np.asarray(ids, dtype=np.int64)
        proxy = np.asarray(proxy, dtype=np.float64)
        value = np.asarray(value, dtype=np.float64)
        if ids.ndim != 1 or len(ids) == 0:
            raise DatasetError("dataset must contain at least one record")
        if not (len(ids) == len(proxy) == len(value)):
            raise DatasetError("column lengths differ")
        if (ids < 0).any():
            raise DatasetError("record ids must be non-negative")
        if len(np.unique(ids)) != len(ids):
            raise DatasetError("record ids must be unique")
        if not (np.isfinite(proxy).all() and np.isfinite(value).all()):
            raise DatasetError("proxy and value must be finite")
        if predicate is not None:
            predicate = np.asarray(predicate, dtype=bool)
            if len(predicate) != len(ids):
                raise DatasetError("column lengths differ")
        for arr in (ids, proxy, value, predicate):
            if arr is not None:
                arr.flags.writeable = False
        self.ids = ids
        self.proxy = proxy
        self.value = value
        self.predicate = predicate
        self.name = name
        self._index = None

    @classmethod
    def from_records(cls, records: Iterable[Record], name: str = "dataset") -> "Dataset":
        records = list(records)
        has_pred = all(r.predicate is not None for r in records)
        return cls(
            [r.id for r in records],
            [r.proxy for r in records],
            [r.value for r in records],
            [bool(r.predicate) for r in records] if has_pred else None,
            name=name,
        )

    def __len__(self) -> int:
        return len(self.ids)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        same_pred = (self.predicate is None and other.predicate is None) or (
            self.predicate is not None
            and other.predicate is not None
            and np.array_equal(self.predicate, other.predicate)
        )
        return (
            np.array_equal(self.ids, other.ids)
            and np.array_equal(self.proxy, other.proxy)
            and np.array_equal(self.value, other.value)
            and same_pred
        )

    def record(self, pos: int) -> Record:
        pred = None if self.predicate is None else bool(self.predicate[pos])
        return Record(int(self.ids[pos]), float(self.proxy[pos]), float(self.value[pos]), pred)

    @property
    def records(self) -> list[Record]:
        return [self.record(i) for i in range(len(self))]

    def position_of(self, record_id: int) -> int:
        if self._index is None:
            self._index = {int(i): pos for pos, i in enumerate(self.ids)}
        try:
            return self._index[int(record_id)]
        except KeyError:
            raise KeyError(f"unknown record id {record_id}") from None

    def positions_of(self, record_ids: Sequence[int]) -> np.ndarray:
        return np.array([self.position_of(i) for i in record_ids], dtype=np.int64)


class InlineOracle:
    """Reads predicate and value straight from the dataset columns."""

    def __init__(self, dataset: Dataset):
        if dataset.predicate is None:
            raise DatasetError("predicate column required for the inline oracle")
        self.dataset = dataset

    def __call__(self, positions: np.ndarray):
        return self.dataset.predicate[positions], self.dataset.value[positions]


@dataclass
class BudgetLedger:
    """Per-query counter of oracle invocations.

    A record is charged the first time it is revealed; later reads come from
    the cache at no cost. The cap is ``k*n1 + n2 + k`` (ceiling slack).
    """

    n1_per_stratum: int
    n2_total: int
    k: int
    oracle: object = field(repr=False, default=None)
    spent: int = 0

    def __post_init__(self):
        if self.n1_per_stratum < 1 or self.n2_total < 1 or self.k < 1:
            raise ValueError("n1, n2 and k must be positive")
        self._revealed: np.ndarray | None = None
        self._pred: np.ndarray | None = None
        self._value: np.ndarray | None = None

    @classmethod
    def for_dataset(cls, dataset: Dataset, n1: int, n2: int, k: int, oracle=None) -> "BudgetLedger":
        return cls(n1, n2, k, oracle if oracle is not None else InlineOracle(dataset))

    @property
    def cap(self) -> int:
        return self.k * self.n1_per_stratum + self.n2_total + self.k

    @property
    def remaining(self) -> int:
        return self.cap - self.spent

    def is_charged(self, pos: int) -> bool:
        return self._revealed is not None and bool(self._revealed[pos])

    def _ensure(self, size: int):
        if self._revealed is None:
            self._revealed = np.zeros(size, dtype=bool)
            self._pred = np.zeros(size, dtype=bool)
            self._value = np.zeros(size, dtype=np.float64)

    def reveal(self, positions) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(predicate, value)`` for dataset positions, charging unseen ones."""
        positions = np.asarray(positions, dtype=np.int64)
        if self.oracle is None:
            raise AbaeError("ledger has no oracle attached")
        self._ensure(len(self.oracle.dataset))
        fresh = np.unique(positions[~self._revealed[positions]])
        if len(fresh):
            if self.spent + len(fresh) > self.cap:
                raise BudgetExhausted(
                    f"revealing {len(fresh)} records would exceed the budget cap "
                    f"({self.spent} spent of {self.cap})"
                )
            pred, value = self.oracle(fresh)
            self._pred[fresh] = pred
            self._value[fresh] = value
            self._revealed[fresh] = True
            self.spent += len(fresh)
        return self._pred[positions], self._value[positions]


def charge_and_reveal(record: Record, ledger: BudgetLedger) -> tuple[bool, float]:
    pos = ledger.oracle.dataset.position_of(record.id)
    pred, value = ledger.reveal(np.array([pos]))
    return bool(pred[0]), float(value[0])
