"""Right-censored dataset container, fold assignment, and time grids.

The observed unit is z = (x, y, delta) with y = min(T, C) and
delta = 1{T <= C}. Datasets are immutable numpy-backed tables; folds are drawn
with replacement; grids are strictly increasing and always contain tau.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    DegenerateDataError,
    IdentificationError,
    SchemaError,
    ValidationError,
)

TIME_COLUMN = "time"
STATUS_COLUMN = "status"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ObservedRecord:
    """One subject's (x, y, delta) triple."""

    x: np.ndarray
    y: float
    delta: int

    def __post_init__(self):
        x = _frozen(np.asarray(self.x, dtype=float))
        object.__setattr__(self, "x", x)
        if not np.all(np.isfinite(x)):
            raise ValidationError("feature vector contains non-finite values")
        if not (self.y > 0 and math.isfinite(self.y)):
            raise ValidationError(f"follow-up time must be positive and finite, got {self.y}")
        if self.delta not in (0, 1):
            raise ValidationError(f"event indicator must be 0 or 1, got {self.delta}")


@dataclass(frozen=True)
class Dataset:
    """Immutable sample of n right-censored records."""

    x: np.ndarray                     # (n, p)
    y: np.ndarray                     # (n,)
    delta: np.ndarray                 # (n,)
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        delta = np.asarray(self.delta, dtype=np.int64)
        if x.ndim != 2:
            raise ValidationError("feature matrix must be 2-dimensional")
        n, p = x.shape
        if y.shape != (n,) or delta.shape != (n,):
            raise ValidationError("y and delta must have one entry per record")
        if self.feature_names is None:
            object.__setattr__(self, "feature_names", tuple(f"x{i + 1}" for i in range(p)))
        if len(self.feature_names) != p:
            raise ValidationError("feature_names length must match feature dimension")
        if not np.all(np.isfinite(x)):
            bad = int(np.argwhere(~np.isfinite(x))[0][0])
            raise ValidationError(f"non-finite feature value in row {bad}")
        if not np.all(np.isfinite(y)):
            bad = int(np.flatnonzero(~np.isfinite(y))[0])
            raise ValidationError(f"non-finite time in row {bad}")
        if np.any(y <= 0):
            bad = int(np.flatnonzero(y <= 0)[0])
            raise ValidationError(f"non-positive follow-up time in row {bad}")
        if not np.all((delta == 0) | (delta == 1)):
            bad = int(np.flatnonzero((delta != 0) & (delta != 1))[0])
            raise ValidationError(f"event indicator outside {{0,1}} in row {bad}")
        if not np.any(delta == 1):
            raise DegenerateDataError("dataset contains no events")
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "delta", _frozen(delta))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def record(self, i: int) -> ObservedRecord:
        return ObservedRecord(x=self.x[i], y=float(self.y[i]), delta=int(self.delta[i]))

    def subset(self, idx: np.ndarray) -> "Dataset":
        """Row subset preserving order of idx. The subset must keep >=1 event."""
        idx = np.asarray(idx)
        return Dataset(self.x[idx], self.y[idx], self.delta[idx], self.feature_names)


def load_dataset(source, feature_columns=None) -> Dataset:
    """Read a CSV with `time`, `status`, and feature columns into a Dataset.

    `source` is a path or an open text stream; `feature_columns` restricts and
    orders the features (default: every non-time, non-status column in header
    order). Missing values and non-numeric cells are rejected.
    """
    if hasattr(source, "read"):
        rows = list(csv.reader(source))
    else:
        with open(source, newline="") as fh:
            rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError("empty input: no header row")
    header = [h.strip() for h in rows[0]]
    for required in (TIME_COLUMN, STATUS_COLUMN):
        if required not in header:
            raise SchemaError(f"missing required column '{required}'")
    if feature_columns is None:
        feature_columns = [h for h in header if h not in (TIME_COLUMN, STATUS_COLUMN)]
    else:
        feature_columns = list(feature_columns)
        for name in feature_columns:
            if name not in header:
                raise SchemaError(f"missing feature column '{name}'")
    if not feature_columns:
        raise SchemaError("no feature columns present")
    col = {name: header.index(name) for name in header}

    def cell(raw_row, row_i, name):
        try:
            value = float(raw_row[col[name]])
        except (ValueError, IndexError):
            raise ValidationError(f"non-numeric or missing '{name}' in row {row_i}") from None
        if not math.isfinite(value):
            raise ValidationError(f"non-finite '{name}' in row {row_i}")
        return value

    x_rows, y_rows, d_rows = [], [], []
    for i, raw in enumerate(rows[1:]):
        if not raw or all(not c.strip() for c in raw):
            continue
        y = cell(raw, i, TIME_COLUMN)
        if y <= 0:
            raise ValidationError(f"non-positive follow-up time in row {i}")
        d = cell(raw, i, STATUS_COLUMN)
        if d not in (0.0, 1.0):
            raise ValidationError(f"status outside {{0,1}} in row {i}")
        x_rows.append([cell(raw, i, name) for name in feature_columns])
        y_rows.append(y)
        d_rows.append(int(d))
    if not y_rows:
        raise SchemaError("no data rows")
    return Dataset(
        np.asarray(x_rows, dtype=float),
        np.asarray(y_rows, dtype=float),
        np.asarray(d_rows, dtype=np.int64),
        tuple(feature_columns),
    )


def save_dataset(dataset: Dataset, path) -> None:
    """Write a Dataset as CSV; floats via repr so load(save(d)) is bit-identical."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([TIME_COLUMN, STATUS_COLUMN, *dataset.feature_names])
        for i in range(dataset.n):
            writer.writerow(
                [repr(float(dataset.y[i])), int(dataset.delta[i])]
                + [repr(float(v)) for v in dataset.x[i]]
            )


@dataclass(frozen=True)
class FoldAssignment:
    """Per-record fold labels in {1..K}, drawn uniformly with replacement."""

    labels: np.ndarray
    n_folds: int
    seed: int
    retries: int = 0

    def __post_init__(self):
        object.__setattr__(self, "labels", _frozen(np.asarray(self.labels, dtype=np.int64)))

    def indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k)

    def complement(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels != k)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_folds + 1)[1:]


def make_folds(n: int, n_folds: int, seed: int) -> FoldAssignment:
    """I.i.d. uniform fold labels; resampled wholesale (seed+1, ...) until no fold is empty."""
    if n_folds < 1:
        raise ConfigurationError(f"fold count must be >= 1, got {n_folds}")
    if n < 2 * n_folds:
        raise ConfigurationError(f"need n >= 2K for K={n_folds} folds, got n={n}")
    retries = 0
    draw_seed = seed
    while True:
        rng = np.random.default_rng(draw_seed)
        labels = rng.integers(1, n_folds + 1, size=n)
        if np.all(np.bincount(labels, minlength=n_folds + 1)[1:] > 0):
            return FoldAssignment(labels, n_folds, seed, retries)
        retries += 1
        draw_seed += 1


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing grid t_1 < ... < t_J containing tau, with t_J >= tau."""

    points: np.ndarray
    tau: float

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        if points.ndim != 1 or points.size == 0:
            raise ValidationError("grid must be a non-empty 1-d array")
        if np.any(points <= 0):
            raise ValidationError("grid points must be positive")
        if np.any(np.diff(points) <= 0):
            raise ValidationError("grid points must be strictly increasing")
        if not (self.tau > 0):
            raise ValidationError("tau must be positive")
        if points[-1] < self.tau:
            raise ValidationError("last grid point must be >= tau")
        if not np.any(points == self.tau):
            raise ValidationError("grid must contain tau")
        object.__setattr__(self, "points", _frozen(points))

    @property
    def J(self) -> int:
        return self.points.size

    def locate(self, times) -> np.ndarray:
        """Index of the largest grid point <= each time (-1 if before t_1)."""
        return np.searchsorted(self.points, np.asarray(times, dtype=float), side="right") - 1


def build_time_grid(dataset: Dataset, tau: float, policy: str = "events",
                    n_points: int | None = None) -> TimeGrid:
    """Construct the Riemann-sum grid on (0, tau].

    Default policy: the sorted unique observed event times in (0, tau], with
    tau appended when absent. "equal" policy: n_points equally spaced points
    ending at tau. Both require at least one observed event in (0, tau].
    """
    if not (tau > 0):
        raise ValidationError("tau must be positive")
    event_times = np.asarray(dataset.y)[np.asarray(dataset.delta) == 1]
    if not np.any(event_times <= tau):
        raise IdentificationError(
            f"no observed event time at or before tau={tau}; the target is not "
            "identified on (0, tau]"
        )
    if policy == "events":
        points = np.unique(event_times[event_times <= tau])
        if points[-1] != tau:
            points = np.append(points, tau)
        return TimeGrid(points, tau)
    if policy == "equal":
        if n_points is None or n_points < 1:
            raise ConfigurationError("equal-spacing policy needs n_points >= 1")
        points = np.linspace(tau / n_points, tau, n_points)
        points[-1] = tau
        return TimeGrid(points, tau)
    raise ConfigurationError(f"unknown grid policy '{policy}'")
