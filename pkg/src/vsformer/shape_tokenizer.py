"""Shape tokens: class prototypes from motif discovery and nearest-match search.

Prototypes are found per (variable, class) on the concatenation of that
class's training series. Each prototype is then matched against every
instance; the best-matching window becomes a shape token.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from vsformer.dataset import MtsDataset

# windows whose std falls below this (relative to their level) are treated as
# constant and z-normalize to the zero vector
STD_TOL = 1e-10
# squared-distance band (per window point) re-scored exactly in matrix_profile
REFINE_BAND = 1e-8


def default_motif_length(T: int) -> int:
    return max(4, int(0.1 * T))


def default_exclusion(m: int) -> int:
    return int(math.ceil(m / 2))


def _is_constant(mu, sigma):
    return sigma <= STD_TOL * np.maximum(1.0, np.abs(mu))


def znormalize(x: np.ndarray) -> np.ndarray:
    """Z-normalize along the last axis; constant rows map to zeros."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    sigma = x.std(axis=-1, keepdims=True)
    const = _is_constant(mu, sigma)
    return np.where(const, 0.0, (x - mu) / np.where(const, 1.0, sigma))


def znorm_distance(a, b) -> float:
    """Euclidean distance between the z-normalized copies of ``a`` and ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((znormalize(a) - znormalize(b)) ** 2)))


def _window_stats(series: np.ndarray, m: int):
    w = sliding_window_view(series, m)
    return w.mean(axis=1), w.std(axis=1)


def matrix_profile(series, m: int, exclusion: int | None = None, mask=None):
    """Self-join matrix profile with a validity mask.

    For each valid start ``i`` the profile holds the smallest z-normalized
    distance to a window starting at a valid ``j`` with ``|i - j| >= exclusion``;
    the index holds that ``j``. Invalid starts get ``inf`` and index ``-1``.
    Dot products are updated along the diagonal recurrence, so the total work
    is O(L^2). The recurrence loses precision near zero distance (the square
    root amplifies cancellation), so candidates within a small band of each
    row minimum are re-scored directly from their z-normalized windows.

    Raises
    ------
    ValueError
        If ``m`` exceeds the series length or no valid pair exists.
    """
    T = np.asarray(series, dtype=np.float64)
    L = T.size
    if m < 1 or m > L:
        raise ValueError(f"window length {m} invalid for series of length {L}")
    n = L - m + 1
    if exclusion is None:
        exclusion = default_exclusion(m)
    valid = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).copy()
    if valid.shape != (n,):
        raise ValueError(f"mask must have {n} entries, got {valid.shape}")

    mu, sigma = _window_stats(T, m)
    const = _is_constant(mu, sigma)
    inv_sigma = np.where(const, 0.0, 1.0 / np.where(const, 1.0, sigma))
    windows = sliding_window_view(T, m)
    zwin = znormalize(windows)
    band = REFINE_BAND * m
    first_row = windows @ T[:m]
    qt = first_row.copy()
    profile = np.full(n, np.inf)
    index = np.full(n, -1, dtype=np.int64)
    positions = np.arange(n)
    for i in range(n):
        if i > 0:
            qt[1:] = qt[:-1] - T[i - 1] * T[: n - 1] + T[i + m - 1] * T[m : m + n - 1]
            qt[0] = first_row[i]
        if not valid[i]:
            continue
        rho = (qt - m * mu[i] * mu) * (inv_sigma[i] * inv_sigma) / m
        d2 = 2.0 * m * (1.0 - np.clip(rho, -1.0, 1.0))
        if const[i]:
            d2 = np.where(const, 0.0, float(m))
        else:
            d2[const] = m
        d2[~valid] = np.inf
        d2[np.abs(positions - i) < exclusion] = np.inf
        best = d2.min()
        if np.isfinite(best):
            cand = np.flatnonzero(d2 <= best + band)
            diff = zwin[cand] - zwin[i]
            exact = np.sqrt(np.einsum("ij,ij->i", diff, diff))
            k = int(np.argmin(exact))  # first minimum, so ties keep the smallest j
            profile[i] = exact[k]
            index[i] = cand[k]
    if not np.isfinite(profile).any():
        raise ValueError("no valid pair")
    return profile, index


@dataclass(frozen=True)
class Prototype:
    variable: int
    klass: int
    rank: int
    values: np.ndarray
    position: int  # start in the concatenated class series
    instance: int  # index of the training instance it came from (within its class)
    offset: int  # start within that instance

    @property
    def length(self) -> int:
        return self.values.size


@dataclass
class MotifResult:
    pairs: list[tuple[int, int, float]]
    warnings: list[str] = field(default_factory=list)


def boundary_mask(lengths, m: int) -> np.ndarray:
    """Valid-start flags for windows that stay within one concatenated piece."""
    flags = []
    for n in lengths:
        piece = np.zeros(n, dtype=bool)
        piece[: max(n - m + 1, 0)] = True
        flags.append(piece)
    total = np.concatenate(flags)
    return total[: total.size - m + 1]


def top_k_motifs(series, lengths, k: int, m: int, exclusion: int | None = None) -> MotifResult:
    """Select up to ``k`` motif pairs from a concatenation of pieces.

    ``lengths`` are the lengths of the concatenated pieces, in order; windows
    crossing a joint are never candidates. After each pair is taken, an
    exclusion zone around both members is invalidated and the profile is
    recomputed. Pairs are returned as (lower start, upper start, distance).
    """
    series = np.asarray(series, dtype=np.float64)
    if sum(lengths) != series.size:
        raise ValueError("piece lengths do not sum to the series length")
    if exclusion is None:
        exclusion = default_exclusion(m)
    mask = boundary_mask(lengths, m)
    positions = np.arange(mask.size)
    result = MotifResult([])
    for rank in range(k):
        try:
            profile, index = matrix_profile(series, m, exclusion, mask)
        except ValueError:
            msg = f"only {rank} of {k} motif pairs available"
            result.warnings.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            break
        i = int(np.argmin(profile))
        j = int(index[i])
        lo, hi = min(i, j), max(i, j)
        result.pairs.append((lo, hi, float(profile[i])))
        mask &= np.abs(positions - lo) >= exclusion
        mask &= np.abs(positions - hi) >= exclusion
    return result


def discover_prototypes(train: MtsDataset, k: int, m: int, exclusion: int | None = None) -> list[Prototype]:
    """Top-``k`` prototypes for every (variable, class), ordered by (v, c, rank)."""
    if m > train.T:
        raise ValueError(f"motif length {m} exceeds series length {train.T}")
    protos = []
    for v in range(train.V):
        for c in range(train.C):
            members = np.flatnonzero(train.y == c)
            if members.size == 0:
                warnings.warn(f"class {c} has no training instances", RuntimeWarning, stacklevel=2)
                continue
            series = train.X[members, v, :].reshape(-1)
            found = top_k_motifs(series, [train.T] * members.size, k, m, exclusion)
            for rank, (lo, _, _) in enumerate(found.pairs):
                protos.append(
                    Prototype(
                        variable=v,
                        klass=c,
                        rank=rank,
                        values=series[lo : lo + m].copy(),
                        position=lo,
                        instance=int(members[lo // train.T]),
                        offset=lo % train.T,
                    )
                )
    return protos


@dataclass(frozen=True)
class ShapeToken:
    prototype: int
    values: np.ndarray
    distance: float
    t_start: int
    t_end: int
    variable: int


def _distance_profile(zwindows: np.ndarray, proto: np.ndarray) -> np.ndarray:
    diff = zwindows - znormalize(proto)
    return np.sqrt(np.einsum("...j,...j->...", diff, diff))


def nearest_subsequence(series, proto: Prototype, proto_id: int = 0) -> ShapeToken:
    """Best-matching window of ``series`` for ``proto`` (ties: earliest start)."""
    series = np.asarray(series, dtype=np.float64)
    m = proto.length
    if series.size < m:
        raise ValueError(f"series of length {series.size} shorter than prototype ({m})")
    zw = znormalize(sliding_window_view(series, m))
    dist = _distance_profile(zw, proto.values)
    s = int(np.argmin(dist))
    return ShapeToken(proto_id, series[s : s + m].copy(), float(dist[s]), s, s + m, proto.variable)


@dataclass(frozen=True)
class ShapeTokenSet:
    """Shape tokens of a whole dataset in array form.

    ``values`` is (N, n_tok, m); ``distance`` and ``start`` are (N, n_tok).
    Token ``j`` of every instance matches ``prototypes[j]``.
    """

    prototypes: tuple[Prototype, ...]
    values: np.ndarray
    distance: np.ndarray
    start: np.ndarray

    @property
    def n_tokens(self) -> int:
        return len(self.prototypes)

    @property
    def m(self) -> int:
        return self.values.shape[-1]

    @property
    def variable(self) -> np.ndarray:
        return np.array([p.variable for p in self.prototypes], dtype=np.int64)

    @property
    def end(self) -> np.ndarray:
        return self.start + self.m

    def tokens(self, i: int) -> list[ShapeToken]:
        return [
            ShapeToken(j, self.values[i, j], float(self.distance[i, j]), int(self.start[i, j]),
                       int(self.start[i, j]) + self.m, p.variable)
            for j, p in enumerate(self.prototypes)
        ]


def build_shape_tokens(d: MtsDataset, prototypes) -> ShapeTokenSet:
    """Match every prototype against every instance of ``d``."""
    prototypes = tuple(prototypes)
    if not prototypes:
        raise ValueError("no prototypes")
    m = prototypes[0].length
    if any(p.length != m for p in prototypes):
        raise ValueError("prototypes must share one length")
    if d.T < m:
        raise ValueError(f"series length {d.T} shorter than prototype length {m}")
    n = len(prototypes)
    values = np.empty((d.N, n, m))
    distance = np.empty((d.N, n))
    start = np.empty((d.N, n), dtype=np.int64)
    zcache: dict[int, np.ndarray] = {}
    rows = np.arange(d.N)
    for j, p in enumerate(prototypes):
        if p.variable not in zcache:
            zcache[p.variable] = znormalize(sliding_window_view(d.X[:, p.variable, :], m, axis=-1))
        dist = _distance_profile(zcache[p.variable], p.values)
        s = np.argmin(dist, axis=1)
        start[:, j] = s
        distance[:, j] = dist[rows, s]
        values[:, j] = sliding_window_view(d.X[:, p.variable, :], m, axis=-1)[rows, s]
    return ShapeTokenSet(prototypes, values, distance, start)
