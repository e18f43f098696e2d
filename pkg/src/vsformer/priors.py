"""Class-specific prior information for shape and value tokens.

Shape priors combine how discriminative a prototype is (intra- versus
inter-class match distance) with how closely a token matches it. Value priors
are the information gain of a discretized token position about the label.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_ALPHA = 3.0
DEFAULT_BETA = 4.0
DEFAULT_BINS = 10


@dataclass(frozen=True)
class PrototypeWeight:
    d_intra: float
    d_inter: float
    ratio: float
    excess: float
    weight: float

    def as_array(self) -> np.ndarray:
        return np.array([self.d_intra, self.d_inter, self.ratio, self.excess, self.weight])

    @classmethod
    def from_array(cls, row) -> "PrototypeWeight":
        return cls(*(float(x) for x in row))


def prototype_weight(distances, labels, c: int, alpha: float = DEFAULT_ALPHA) -> PrototypeWeight:
    """Weight of a class-``c`` prototype from training match distances.

    ``D1`` is the mean distance over instances of class ``c`` and ``D2`` the
    mean over all other instances. The ratio ``D2 / (D1 + D2)`` is clamped at
    0.5 from below and mapped through ``exp(alpha * (ratio - 0.5))``.
    """
    distances = np.asarray(distances, dtype=np.float64)
    labels = np.asarray(labels)
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    intra = distances[labels == c]
    inter = distances[labels != c]
    if intra.size == 0 or inter.size == 0:
        raise ValueError("need at least one intra-class and one inter-class distance")
    d1 = float(intra.mean())
    d2 = float(inter.mean())
    ratio = 0.5 if d1 + d2 == 0 else d2 / (d1 + d2)
    excess = max(ratio - 0.5, 0.0)
    return PrototypeWeight(d1, d2, ratio, excess, float(np.exp(alpha * excess)))


def shape_token_weight(d, beta: float = DEFAULT_BETA):
    """``beta * exp(-d) + 1``; elementwise for arrays."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0):
        raise ValueError("distance must be non-negative")
    w = beta * np.exp(-d) + 1.0
    return float(w) if w.ndim == 0 else w


def shape_prior(w_proto, w_token):
    if np.any(np.asarray(w_proto) < 0) or np.any(np.asarray(w_token) < 0):
        raise ValueError("weights must be non-negative")
    return np.multiply(w_proto, w_token)


# ---------------------------------------------------------------------------
# value priors


def _entropy(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log2(p)).sum())


def equal_frequency_edges(values, bins: int) -> np.ndarray:
    """Interior bin edges at training quantiles, deduplicated.

    Edges at or below the minimum are dropped, so a constant feature has no
    edges and lands in a single bin.
    """
    values = np.asarray(values, dtype=np.float64)
    qs = np.quantile(values, np.arange(1, bins) / bins)
    edges = np.unique(qs)
    return edges[edges > values.min()]


def information_gain(bin_index, labels, n_classes: int) -> tuple[float, np.ndarray]:
    """Label entropy minus the bin-conditional label entropy, in bits.

    Returns the gain and the (bins, classes) contingency table.
    """
    bin_index = np.asarray(bin_index, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    n_bins = int(bin_index.max()) + 1
    table = np.zeros((n_bins, n_classes))
    np.add.at(table, (bin_index, labels), 1.0)
    n = table.sum()
    h_label = _entropy(table.sum(axis=0))
    h_cond = sum(row.sum() / n * _entropy(row) for row in table)
    return max(h_label - h_cond, 0.0), table


@dataclass(frozen=True)
class FeatureImportanceTable:
    """Fitted value-token priors: per position bin edges, contingency and gain."""

    edges: tuple[np.ndarray, ...]
    counts: tuple[np.ndarray, ...]
    importance: np.ndarray
    n_classes: int
    bins: int

    def bin_index(self, position: int, values) -> np.ndarray:
        """Bin membership of ``values``: the number of edges at or below each value.

        Values outside the training range clamp into the first or last bin.
        """
        return np.searchsorted(self.edges[position], np.asarray(values), side="right")

    @property
    def n_positions(self) -> int:
        return self.importance.size


def fit_feature_importance(values, labels, n_classes: int, bins: int = DEFAULT_BINS) -> FeatureImportanceTable:
    """Fit equal-frequency bins and information gain for each token position.

    Parameters
    ----------
    values : array_like, shape (N,) or (N, positions)
        Training token values.
    labels : array_like, shape (N,)
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    labels = np.asarray(labels, dtype=np.int64)
    if values.shape[0] < 2:
        raise ValueError("feature importance needs at least two instances")
    if bins < 2:
        raise ValueError("need at least two bins")
    edges, counts, fi = [], [], np.empty(values.shape[1])
    for j in range(values.shape[1]):
        e = equal_frequency_edges(values[:, j], bins)
        idx = np.searchsorted(e, values[:, j], side="right")
        gain, table = information_gain(idx, labels, n_classes)
        edges.append(e)
        counts.append(table)
        fi[j] = gain
    return FeatureImportanceTable(tuple(edges), tuple(counts), fi, n_classes, bins)
