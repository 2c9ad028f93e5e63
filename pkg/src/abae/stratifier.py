from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset, InvalidK


@dataclass(frozen=True)
class Strata:
    """K contiguous blocks of the proxy-sorted dataset.

    ``positions[j]`` indexes into the dataset columns; ``ids[j]`` holds the
    matching record ids. ``boundaries[j]`` is the (min, max) proxy of block j.
    """

    k: int
    positions: tuple[np.ndarray, ...]
    ids: tuple[np.ndarray, ...]
    boundaries: tuple[tuple[float, float], ...]

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(p) for p in self.positions], dtype=np.int64)

    def stratum_of(self, n: int) -> np.ndarray:
        """Label array: stratum index for every dataset position."""
        labels = np.empty(n, dtype=np.int64)
        for j, pos in enumerate(self.positions):
            labels[pos] = j
        return labels


def stratify(dataset: Dataset, k: int) -> Strata:
    """Sort by (proxy, id) and cut into k blocks; the first ``len % k`` blocks get one extra record."""
    n = len(dataset)
    if not isinstance(k, (int, np.integer)) or k < 1 or k > n:
        raise InvalidK(f"k must be in [1, {n}], got {k}")
    order = np.lexsort((dataset.ids, dataset.proxy))
    blocks = np.array_split(order, int(k))
    for b in blocks:
        b.flags.writeable = False
    ids = tuple(dataset.ids[b] for b in blocks)
    bounds = tuple((float(dataset.proxy[b[0]]), float(dataset.proxy[b[-1]])) for b in blocks)
    return Strata(int(k), tuple(blocks), ids, bounds)
