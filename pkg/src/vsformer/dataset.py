"""Multivariate time-series corpora: UEA ``.ts`` I/O, splits, synthetic data."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class TsFormatError(ValueError):
    """Raised for malformed ``.ts`` files."""


@dataclass(frozen=True)
class MtsInstance:
    values: np.ndarray  # (V, T)
    label: int


@dataclass(frozen=True, eq=False)
class MtsDataset:
    """Equal-length labelled multivariate series.

    ``X`` has shape (N, V, T) and ``y`` holds class indices into
    ``class_names``. Arrays are made read-only on construction.
    """

    X: np.ndarray
    y: np.ndarray
    class_names: tuple[str, ...]
    name: str = "dataset"

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64)
        y = np.array(self.y, dtype=np.int64)
        if X.ndim != 3:
            raise ValueError(f"X must be (N, V, T), got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise ValueError(f"y must have {X.shape[0]} labels, got shape {y.shape}")
        C = len(self.class_names)
        if y.size and (y.min() < 0 or y.max() >= C):
            raise ValueError(f"labels must lie in [0, {C})")
        if not np.all(np.isfinite(X)):
            raise ValueError("dataset values must be finite")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def V(self) -> int:
        return self.X.shape[1]

    @property
    def T(self) -> int:
        return self.X.shape[2]

    @property
    def C(self) -> int:
        return len(self.class_names)

    def __len__(self) -> int:
        return self.N

    def __getitem__(self, i: int) -> MtsInstance:
        return MtsInstance(self.X[i], int(self.y[i]))

    @property
    def instances(self) -> list[MtsInstance]:
        return [self[i] for i in range(self.N)]

    def subset(self, indices) -> "MtsDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return MtsDataset(self.X[idx], self.y[idx], self.class_names, self.name)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.C)


# ---------------------------------------------------------------------------
# .ts reader / writer

_BOOL = {"true": True, "false": False}


def _interpolate(row: np.ndarray) -> np.ndarray:
    """Fill NaNs linearly between observed points and by nearest value at the edges."""
    missing = np.isnan(row)
    if not missing.any():
        return row
    if missing.all():
        raise ValueError("variable has no observed values")
    t = np.arange(row.size)
    return np.interp(t, t[~missing], row[~missing])


def _parse_float(tok: str) -> float:
    tok = tok.strip()
    if tok in ("?", "") or tok.lower() == "nan":
        return math.nan
    return float(tok)


def parse_ts(path) -> MtsDataset:
    """Read a UEA ``.ts`` classification file.

    The class vocabulary follows the ``@classLabel`` declaration order. Missing
    values (``?`` or ``NaN``) are filled by per-variable linear interpolation.
    Series of unequal length are padded at the tail with their last value when
    the header allows unequal lengths.

    Raises
    ------
    TsFormatError
        On a malformed header, an undeclared label, a dimension count or
        length that contradicts the header, or an empty data section.
    """
    path = Path(path)
    header: dict[str, object] = {}
    labels: list[str] | None = None
    rows: list[list[np.ndarray]] = []
    y: list[int] = []
    in_data = False
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if not in_data:
                if not line.startswith("@"):
                    raise TsFormatError(f"line {lineno}: expected a @directive before @data")
                parts = line.split()
                key = parts[0][1:].lower()
                args = parts[1:]
                if key == "data":
                    if labels is None:
                        raise TsFormatError(f"line {lineno}: @data reached without @classLabel")
                    in_data = True
                elif key == "problemname":
                    header["name"] = " ".join(args) or path.stem
                elif key in ("timestamps", "missing", "univariate", "equallength"):
                    if len(args) != 1 or args[0].lower() not in _BOOL:
                        raise TsFormatError(f"line {lineno}: @{key} expects true or false")
                    header[key] = _BOOL[args[0].lower()]
                    if key == "timestamps" and header[key]:
                        raise TsFormatError(f"line {lineno}: timestamped series are not supported")
                elif key in ("dimensions", "serieslength"):
                    if len(args) != 1 or not args[0].isdigit() or int(args[0]) < 1:
                        raise TsFormatError(f"line {lineno}: @{key} expects a positive integer")
                    header[key] = int(args[0])
                elif key == "classlabel":
                    if not args or args[0].lower() not in _BOOL:
                        raise TsFormatError(f"line {lineno}: @classLabel expects true/false and labels")
                    if not _BOOL[args[0].lower()]:
                        raise TsFormatError(f"line {lineno}: unlabelled data is not supported")
                    if len(args) < 2:
                        raise TsFormatError(f"line {lineno}: @classLabel true declares no labels")
                    labels = args[1:]
                    if len(set(labels)) != len(labels):
                        raise TsFormatError(f"line {lineno}: duplicate class labels")
                else:
                    raise TsFormatError(f"line {lineno}: unknown directive @{key}")
                continue

            fields = line.split(":")
            label = fields[-1].strip()
            dims = fields[:-1]
            expected = 1 if header.get("univariate") else header.get("dimensions")
            if expected is None:
                expected = header.setdefault("dimensions", len(dims))
            if len(dims) != expected:
                raise TsFormatError(f"line {lineno}: found {len(dims)} dimensions, expected {expected}")
            if label not in labels:
                raise TsFormatError(f"line {lineno}: label {label!r} not in @classLabel vocabulary")
            try:
                series = [np.array([_parse_float(t) for t in d.split(",")]) for d in dims]
            except ValueError as exc:
                raise TsFormatError(f"line {lineno}: {exc}") from None
            try:
                series = [_interpolate(s) for s in series]
            except ValueError as exc:
                raise TsFormatError(f"line {lineno}: {exc}") from None
            rows.append(series)
            y.append(labels.index(label))

    if not in_data:
        raise TsFormatError(f"{path}: no @data section")
    if not rows:
        raise TsFormatError(f"{path}: empty data section")

    lengths = {len(s) for r in rows for s in r}
    declared = header.get("serieslength")
    if header.get("equallength", False):
        if len(lengths) > 1:
            raise TsFormatError(f"{path}: @equalLength true but series lengths differ: {sorted(lengths)}")
        if declared is not None and lengths != {declared}:
            raise TsFormatError(f"{path}: @seriesLength {declared} but series have length {lengths.pop()}")
    T = max(lengths)
    X = np.empty((len(rows), len(rows[0]), T))
    for i, r in enumerate(rows):
        for v, s in enumerate(r):
            X[i, v, : len(s)] = s
            X[i, v, len(s) :] = s[-1]
    return MtsDataset(X, np.array(y), tuple(labels), str(header.get("name", path.stem)))


def write_ts(d: MtsDataset, path) -> None:
    """Write ``d`` in UEA ``.ts`` format with exact (round-trip) float text."""
    lines = [
        f"@problemName {d.name.replace(' ', '_')}",
        "@timeStamps false",
        "@missing false",
        f"@univariate {'true' if d.V == 1 else 'false'}",
        f"@dimensions {d.V}",
        "@equalLength true",
        f"@seriesLength {d.T}",
        "@classLabel true " + " ".join(d.class_names),
        "@data",
    ]
    for x, label in zip(d.X, d.y):
        dims = [",".join(repr(float(v)) for v in row) for row in x]
        lines.append(":".join(dims) + ":" + d.class_names[label])
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# splitting and normalization


def split_train_val(d: MtsDataset, fraction: float, seed: int = 0) -> tuple[MtsDataset, MtsDataset]:
    """Stratified, seeded split of ``d`` into (train, validation).

    The validation size is ``round(fraction * N)``, shared out across classes
    by largest remainder. A class with a single instance stays in train, and
    every class keeps at least one training instance.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    counts = d.class_counts()
    caps = np.where(counts >= 2, counts - 1, 0)
    target = min(int(round(fraction * d.N)), int(caps.sum()))
    quota = fraction * counts * (caps > 0)
    n_val = np.minimum(np.floor(quota).astype(int), caps)
    remainder = quota - n_val
    for c in np.argsort(-remainder, kind="stable"):
        if n_val.sum() >= target:
            break
        if n_val[c] < caps[c]:
            n_val[c] += 1
    train_idx, val_idx = [], []
    for c in range(d.C):
        members = rng.permutation(np.flatnonzero(d.y == c))
        val_idx.extend(members[: n_val[c]])
        train_idx.extend(members[n_val[c] :])
    if not train_idx or not val_idx:
        raise ValueError("split leaves one side empty")
    return d.subset(sorted(train_idx)), d.subset(sorted(val_idx))


def minmax_normalize(d: MtsDataset) -> MtsDataset:
    """Map each variable to [0, 1] using its range over the whole dataset."""
    lo = d.X.min(axis=(0, 2), keepdims=True)
    span = d.X.max(axis=(0, 2), keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    X = np.where(span > 0, (d.X - lo) / safe, 0.0)
    return MtsDataset(X, d.y, d.class_names, d.name)


# ---------------------------------------------------------------------------
# synthetic corpora

SHAPE_AMPLITUDE = 3.0


def class_template(index: int, length: int) -> np.ndarray:
    """A smooth, z-normalized template; higher indices oscillate faster."""
    # midpoint sampling keeps short templates off the sine's zero crossings
    t = (np.arange(length) + 0.5) / length
    raw = np.sin(np.pi * (index + 1) * t)
    if index % 2 == 1:
        raw = raw * np.hanning(length + 2)[1:-1]
    raw = raw - raw.mean()
    if raw.std() < 1e-9:
        raise ValueError(f"template {index} degenerates at length {length}")
    return raw / raw.std()


def _factors(kind: str, C: int) -> tuple[np.ndarray, np.ndarray]:
    c = np.arange(C)
    if kind != "mixed" or C < 4:
        return c, c
    n_shapes = math.ceil(C / 2)
    return c % n_shapes, c // n_shapes


def gen_synthetic(kind: str, n_per_class: int, V: int, T: int, C: int, seed: int = 0) -> MtsDataset:
    """Generate a corpus whose classes differ in shape, value, or both.

    ``shape``: unit-variance noise with a class template of length ``T // 8``
    added at a random offset; templates are z-normalized, so every class has
    the same global mean and variance. ``value``: white noise whose scale is
    ``10 ** c`` for class ``c``. ``mixed``: the first ``V // 2`` variables carry
    the shape signal and the rest the value signal. With four or more classes
    each class is a (template, scale level) pair over ``ceil(C / 2)`` templates
    and two scale levels, so neither signal alone identifies the class.
    """
    if kind not in ("shape", "value", "mixed"):
        raise ValueError(f"unknown kind {kind!r}")
    if T < 32:
        raise ValueError("T must be at least 32")
    if min(n_per_class, V, C) < 1:
        raise ValueError("n_per_class, V and C must be positive")
    if C < 2:
        raise ValueError("at least two classes are required")
    if kind == "mixed" and V < 2:
        raise ValueError("mixed corpora need at least two variables")
    rng = np.random.default_rng(seed)
    L = T // 8
    shape_id, value_id = _factors(kind, C)
    n_shape_vars = {"shape": V, "value": 0, "mixed": V // 2}[kind]
    templates = [class_template(i, L) for i in range(int(shape_id.max()) + 1)]

    N = n_per_class * C
    y = np.repeat(np.arange(C), n_per_class)
    X = rng.standard_normal((N, V, T))
    for i in range(N):
        c = y[i]
        for v in range(V):
            if v < n_shape_vars:
                off = rng.integers(0, T - L + 1)
                X[i, v, off : off + L] += SHAPE_AMPLITUDE * templates[shape_id[c]]
            else:
                X[i, v] *= 10.0 ** value_id[c]
    order = rng.permutation(N)
    names = tuple(f"class{c}" for c in range(C))
    return MtsDataset(X[order], y[order], names, f"synthetic_{kind}")
