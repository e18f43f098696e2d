"""Value tokens: mean, standard deviation and slope over multi-granularity intervals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from vsformer.dataset import MtsDataset

STATISTICS = ("mean", "std", "slope")


def partition_intervals(T: int, w: int) -> list[tuple[int, int]]:
    """Split ``[0, T)`` into ``w`` contiguous intervals.

    Every interval has ``T // w`` points; the first ``T % w`` get one extra.
    """
    if not 1 <= w <= T:
        raise ValueError(f"granularity w={w} must lie in [1, {T}]")
    base, extra = divmod(T, w)
    bounds = []
    start = 0
    for i in range(w):
        end = start + base + (1 if i < extra else 0)
        bounds.append((start, end))
        start = end
    return bounds


def _stats(seg: np.ndarray):
    """Mean, population std and least-squares slope along the last axis."""
    n = seg.shape[-1]
    mu = seg.mean(axis=-1)
    sigma = seg.std(axis=-1)
    if n == 1:
        return mu, np.zeros_like(mu), np.zeros_like(mu)
    t = np.arange(n) - (n - 1) / 2.0
    slope = (seg @ t) / (t @ t)
    return mu, sigma, slope


def interval_stats(segment) -> tuple[float, float, float]:
    seg = np.asarray(segment, dtype=np.float64)
    if seg.ndim != 1 or seg.size == 0:
        raise ValueError("segment must be a non-empty 1-D series")
    mu, sigma, slope = _stats(seg)
    return float(mu), float(sigma), float(slope)


def value_token_count(V: int, M: int) -> int:
    return V * 3 * (1 + M) * M // 2


@dataclass(frozen=True)
class ValueToken:
    variable: int
    granularity: int
    interval: int
    kind: str
    value: float
    t_start: int
    t_end: int


@dataclass(frozen=True)
class ValueTokenSet:
    """Value tokens of a whole dataset in array form.

    ``values`` is (N, n_tok). The metadata arrays are (n_tok,) and ordered by
    (variable, granularity, interval, statistic).
    """

    values: np.ndarray
    variable: np.ndarray
    granularity: np.ndarray
    interval: np.ndarray
    kind: np.ndarray  # index into STATISTICS
    start: np.ndarray
    end: np.ndarray

    @property
    def n_tokens(self) -> int:
        return self.variable.size

    def tokens(self, i: int) -> list[ValueToken]:
        return [
            ValueToken(int(v), int(w), int(j), STATISTICS[k], float(x), int(s), int(e))
            for v, w, j, k, x, s, e in zip(
                self.variable, self.granularity, self.interval, self.kind,
                self.values[i], self.start, self.end,
            )
        ]


def token_layout(V: int, T: int, M: int):
    """Metadata columns (variable, w, interval, kind, start, end) for every token."""
    if not 1 <= M <= T:
        raise ValueError(f"M={M} must lie in [1, T={T}]")
    rows = []
    for v in range(V):
        for w in range(1, M + 1):
            for j, (s, e) in enumerate(partition_intervals(T, w)):
                for k in range(3):
                    rows.append((v, w, j, k, s, e))
    return np.array(rows, dtype=np.int64).T


def build_value_tokens(d: MtsDataset, M: int) -> ValueTokenSet:
    """Value tokens for every instance; ``V * 3 * (1 + M) * M / 2`` per instance."""
    variable, gran, interval, kind, start, end = token_layout(d.V, d.T, M)
    per_interval = []
    for w in range(1, M + 1):
        for s, e in partition_intervals(d.T, w):
            per_interval.append(np.stack(_stats(d.X[:, :, s:e]), axis=-1))  # (N, V, 3)
    # (N, V, intervals, 3) flattens in the same nesting as token_layout
    values = np.stack(per_interval, axis=2).reshape(d.N, -1)
    return ValueTokenSet(values, variable, gran, interval, kind, start, end)
