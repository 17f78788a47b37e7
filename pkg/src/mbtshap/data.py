"""Data tables, feature subsets and CSV ingestion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterator, Sequence

import numpy as np

MAX_ENUMERATION_FEATURES = 30


class DataError(ValueError):
    """Raised for malformed tables or inconsistent inputs."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """Column-labelled numeric table with optional model predictions.

    ``rows`` is an ``N x p`` float64 array, ``predictions`` (if set) has
    length ``N``.  Arrays are stored read-only.
    """

    columns: tuple
    rows: np.ndarray
    predictions: np.ndarray | None = None

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise DataError(f"rows must be 2-D, got shape {rows.shape}")
        n, p = rows.shape
        if n < 1 or p < 1:
            raise DataError(f"need N >= 1 and p >= 1, got N={n}, p={p}")
        if len(self.columns) != p:
            raise DataError(f"{len(self.columns)} column names for {p} columns")
        if not np.all(np.isfinite(rows)):
            bad = np.argwhere(~np.isfinite(rows))[0]
            raise DataError(f"non-finite value at row {bad[0]}, column {self.columns[bad[1]]!r}")
        object.__setattr__(self, "columns", tuple(str(c) for c in self.columns))
        object.__setattr__(self, "rows", _frozen(rows))
        if self.predictions is not None:
            pred = np.asarray(self.predictions, dtype=np.float64).reshape(-1)
            if pred.shape[0] != n:
                raise DataError(f"predictions have length {pred.shape[0]}, expected {n}")
            if not np.all(np.isfinite(pred)):
                raise DataError("predictions contain non-finite values")
            object.__setattr__(self, "predictions", _frozen(pred))

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def p(self) -> int:
        return self.rows.shape[1]

    def with_predictions(self, predictions) -> "Dataset":
        return Dataset(self.columns, self.rows, predictions)

    def take(self, index) -> "Dataset":
        index = np.asarray(index)
        pred = None if self.predictions is None else self.predictions[index]
        return Dataset(self.columns, self.rows[index], pred)

    def require_predictions(self) -> np.ndarray:
        if self.predictions is None:
            raise DataError("dataset has no predictions attached")
        return self.predictions


@dataclass(frozen=True, order=False)
class FeatureSubset:
    """Ordered set of feature indices drawn from ``range(universe_size)``."""

    members: tuple
    universe_size: int

    def __post_init__(self):
        members = tuple(int(i) for i in self.members)
        if any(b <= a for a, b in zip(members, members[1:])):
            members = tuple(sorted(set(members)))
        if members and (members[0] < 0 or members[-1] >= self.universe_size):
            raise DataError(f"subset {members} out of range for p={self.universe_size}")
        object.__setattr__(self, "members", members)

    @classmethod
    def from_mask(cls, mask: int, p: int) -> "FeatureSubset":
        return cls(tuple(i for i in range(p) if mask >> i & 1), p)

    @property
    def mask(self) -> int:
        m = 0
        for i in self.members:
            m |= 1 << i
        return m

    @property
    def size(self) -> int:
        return len(self.members)

    def complement(self) -> "FeatureSubset":
        s = set(self.members)
        return FeatureSubset(tuple(i for i in range(self.universe_size) if i not in s), self.universe_size)

    def indicator(self) -> np.ndarray:
        z = np.zeros(self.universe_size, dtype=np.float64)
        z[list(self.members)] = 1.0
        return z

    def sort_key(self):
        return (len(self.members), self.members)

    def __contains__(self, i) -> bool:
        return i in self.members

    def __iter__(self) -> Iterator[int]:
        return iter(self.members)

    def __len__(self) -> int:
        return len(self.members)


def enumerate_subsets(p: int, max_size: int | str = "all") -> list[FeatureSubset]:
    """All subsets of ``range(p)`` ordered by (size, lexicographic members).

    ``max_size="all"`` gives the full power set (``2**p`` subsets).
    """
    if p < 1:
        raise DataError("p must be >= 1")
    if max_size == "all":
        if p > MAX_ENUMERATION_FEATURES:
            raise DataError(f"full enumeration refused for p={p} > {MAX_ENUMERATION_FEATURES}")
        top = p
    else:
        top = int(max_size)
        if not 0 <= top <= p:
            raise DataError(f"max_size must lie in [0, {p}], got {top}")
    return [FeatureSubset(c, p) for k in range(top + 1) for c in combinations(range(p), k)]


def load_dataset(path, prediction_column: str | None = None) -> Dataset:
    """Read a comma-delimited numeric CSV with a mandatory header row."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        values = []
        for r, line in enumerate(reader, start=1):
            if not line or all(not c.strip() for c in line):
                continue
            if len(line) != len(header):
                raise DataError(f"{path}: row {r} has {len(line)} cells, header has {len(header)}")
            parsed = []
            for c, cell in enumerate(line):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: row {r}, column {header[c]!r}: cannot parse {cell!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: row {r}, column {header[c]!r}: non-finite value {cell!r}")
                parsed.append(v)
            values.append(parsed)
    if not values:
        raise DataError(f"{path}: no data rows")
    table = np.array(values, dtype=np.float64)
    if prediction_column is None:
        return Dataset(tuple(header), table)
    if prediction_column not in header:
        raise DataError(f"{path}: prediction column {prediction_column!r} not in header {header}")
    j = header.index(prediction_column)
    keep = [i for i in range(len(header)) if i != j]
    return Dataset(tuple(header[i] for i in keep), table[:, keep], table[:, j])


@dataclass(frozen=True)
class CorrelationSpec:
    """Block-equicorrelated correlation structure with optional extra links.

    Features inside each block share correlation ``rho``; ``cross_links``
    sets individual entries ``(i, j, r)`` after the blocks are laid down.
    """

    p: int
    blocks: Sequence[Sequence[int]] = field(default_factory=tuple)
    rho: float = 0.0
    cross_links: Sequence[tuple] = field(default_factory=tuple)

    def matrix(self) -> np.ndarray:
        if not 0.0 <= self.rho < 1.0:
            raise DataError(f"rho must lie in [0, 1), got {self.rho}")
        sigma = np.eye(self.p)
        for block in self.blocks:
            idx = np.asarray(block, dtype=int)
            sigma[np.ix_(idx, idx)] = self.rho
        for i, j, r in self.cross_links:
            sigma[i, j] = sigma[j, i] = r
        np.fill_diagonal(sigma, 1.0)
        check_psd(sigma, label=repr(self))
        return sigma


def check_psd(sigma: np.ndarray, label: str = "matrix", tol: float = 1e-10) -> np.ndarray:
    """Verify symmetry and positive semi-definiteness; return a square-root factor."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise DataError(f"{label}: not square")
    if not np.allclose(sigma, sigma.T, atol=1e-12):
        raise DataError(f"{label}: not symmetric")
    w, v = np.linalg.eigh(sigma)
    if w.min() < -tol * max(1.0, w.max()):
        raise DataError(f"{label}: not positive semi-definite (min eigenvalue {w.min():.3g})")
    return v * np.sqrt(np.clip(w, 0.0, None))
