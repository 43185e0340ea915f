"""Datasets: synthetic generators, LIBSVM ingestion, normalisation and folds."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from randrelu._random import as_generator

TASKS = ("binary", "multiclass", "regression")
GRID_KINDS = ("sine", "strips", "square", "checkboard")
BOUNDARY_MARGIN = 1e-12


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


@dataclass(frozen=True, eq=False)
class Dataset:
    """Design matrix plus labels.

    Binary labels are ``-1/+1``, multiclass labels are class indices
    ``0..K-1`` and regression labels are reals.  ``classes`` maps internal
    labels back to the original ones for classification data.
    """

    X: np.ndarray
    y: np.ndarray
    task: str
    name: str = ""
    classes: tuple | None = None
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.X.ndim != 2 or self.X.shape[0] < 1:
            raise ValueError("X must be a non-empty 2-d array")
        if self.y.shape[0] != self.X.shape[0]:
            raise ValueError("X and y disagree on the number of samples")
        if self.task == "binary" and not np.all(np.isin(self.y, (-1, 1))):
            raise ValueError("binary labels must be -1 or +1")

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def radius(self) -> float:
        return float(np.max(np.linalg.norm(self.X, axis=1)))

    @property
    def n_classes(self) -> int:
        if self.task == "binary":
            return 2
        if self.task == "multiclass":
            return len(self.classes) if self.classes else int(np.max(self.y)) + 1
        return 0

    def subset(self, idx) -> Dataset:
        return replace(self, X=self.X[idx], y=self.y[idx])

    def manifest(self) -> dict:
        return {
            "name": self.name,
            "m": self.m,
            "d": self.d,
            "task": self.task,
            "radius": self.radius,
            "seed": self.seed,
        }

    def original_labels(self) -> np.ndarray:
        if self.task == "regression":
            return self.y
        if self.task == "binary":
            classes = self.classes or (-1, 1)
            return np.where(self.y > 0, classes[1], classes[0])
        if self.classes:
            return np.asarray(self.classes, dtype=object)[self.y]
        return self.y


def _sphere(rng, m, dim):
    z = rng.standard_normal((m, dim))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def daniely_target(X: np.ndarray) -> np.ndarray:
    """``sin(8 pi u . v)`` for ``x = (u, v)`` split in two halves."""
    X = np.atleast_2d(X)
    half = X.shape[1] // 2
    return np.sin(8 * np.pi * np.sum(X[:, :half] * X[:, half:], axis=1))


def gen_daniely(d: int, m: int, rng=None) -> Dataset:
    """Regression data on S^(d-1) x S^(d-1) with label ``sin(8 pi u . v)``.

    ``u`` and ``v`` are independent and uniform on the unit sphere of R^d, so
    every point has norm ``sqrt(2)``.
    """
    if d < 2 or m < 1:
        raise ValueError("need d >= 2 and m >= 1")
    rng = as_generator(rng)
    X = np.hstack([_sphere(rng, m, d), _sphere(rng, m, d)])
    return Dataset(X, daniely_target(X), "regression", name=f"daniely{d}")


def grid2d_score(kind: str, X: np.ndarray) -> np.ndarray:
    """Signed decision score of a 2-d benchmark; the label is its sign."""
    x1, x2 = X[:, 0], X[:, 1]
    if kind == "sine":
        return x2 - 0.5 * np.sin(2 * np.pi * x1)
    if kind == "strips":
        return np.sin(3 * np.pi * x1)
    if kind == "square":
        return 0.5 - np.maximum(np.abs(x1), np.abs(x2))
    if kind == "checkboard":
        return np.sin(3 * np.pi * x1) * np.sin(3 * np.pi * x2)
    raise ValueError(f"unknown grid2d kind {kind!r}; choose from {GRID_KINDS}")


def gen_grid2d(kind: str, m: int, rng=None) -> Dataset:
    """Binary data uniform on ``[-1, 1]^2`` labelled by decision regions.

    sine: ``x2 > 0.5 sin(2 pi x1)``; strips: ``sin(3 pi x1) > 0``; square:
    ``max(|x1|, |x2|) <= 0.5``; checkboard: ``sin(3 pi x1) sin(3 pi x2) > 0``.
    Points within ``1e-12`` of a boundary are redrawn.
    """
    if kind not in GRID_KINDS:
        raise ValueError(f"unknown grid2d kind {kind!r}; choose from {GRID_KINDS}")
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = as_generator(rng)
    X = rng.uniform(-1.0, 1.0, (m, 2))
    score = grid2d_score(kind, X)
    bad = np.abs(score) <= BOUNDARY_MARGIN
    while np.any(bad):
        X[bad] = rng.uniform(-1.0, 1.0, (int(bad.sum()), 2))
        score[bad] = grid2d_score(kind, X[bad])
        bad = np.abs(score) <= BOUNDARY_MARGIN
    y = np.where(score > 0, 1, -1)
    return Dataset(X, y, "binary", name=kind, classes=(-1, 1))


def gen_radial(
    d: int,
    m: int,
    edges,
    weights,
    label_fn: Callable[[np.ndarray], np.ndarray],
    rng=None,
    task: str = "regression",
) -> Dataset:
    """Rotation-invariant data with a piecewise-constant radial density.

    Directions are uniform on S^(d-1).  The radius falls in bin
    ``[edges[k], edges[k+1])`` with probability proportional to ``weights[k]``
    and is uniform inside the bin.  Labels are ``label_fn(radius)``.
    """
    edges = np.asarray(edges, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if edges.ndim != 1 or edges.size != weights.size + 1 or np.any(np.diff(edges) <= 0):
        raise ValueError("edges must be increasing with one more entry than weights")
    if np.any(weights < 0) or weights.sum() <= 0 or edges[0] < 0:
        raise ValueError("weights must be non-negative with positive sum; radii >= 0")
    rng = as_generator(rng)
    bins = rng.choice(weights.size, size=m, p=weights / weights.sum())
    radii = rng.uniform(edges[bins], edges[bins + 1])
    X = _sphere(rng, m, d) * radii[:, None]
    y = np.asarray(label_fn(radii))
    if task == "binary":
        y = np.where(y > 0, 1, -1)
    return Dataset(X, y, task, name="radial", classes=(-1, 1) if task == "binary" else None)


def _parse_label(token: str, lineno: int):
    try:
        return float(token)
    except ValueError:
        raise ParseError(f"bad label {token!r}", lineno) from None


def load_libsvm(path, d: int | None = None, task: str | None = None) -> Dataset:
    """Parse a LIBSVM text file into a dense dataset.

    Each line is ``label index:value ...`` with 1-based indices.  ``d``
    defaults to the largest index seen.  Labels become ``-1/+1`` when there
    are two distinct values and class indices otherwise; pass
    ``task="regression"`` to keep them as reals.
    """
    rows, labels = [], []
    max_index = 0
    with open(Path(path)) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            labels.append(_parse_label(tokens[0], lineno))
            entries = {}
            for tok in tokens[1:]:
                idx, sep, val = tok.partition(":")
                try:
                    i, v = int(idx), float(val)
                except ValueError:
                    raise ParseError(f"malformed feature {tok!r}", lineno) from None
                if not sep or i < 1:
                    raise ParseError(f"malformed feature {tok!r}", lineno)
                entries[i] = v
                max_index = max(max_index, i)
            rows.append(entries)
    if not rows:
        raise ParseError(f"{path} contains no samples")
    width = max_index if d is None else d
    if width < max_index:
        raise ParseError(f"feature index {max_index} exceeds requested width {d}")
    X = np.zeros((len(rows), width))
    for r, entries in enumerate(rows):
        for i, v in entries.items():
            X[r, i - 1] = v
    raw = np.array(labels)
    name = Path(path).stem
    if task == "regression":
        return Dataset(X, raw, "regression", name=name)
    classes, y = np.unique(raw, return_inverse=True)
    classes = tuple(_tidy(c) for c in classes)
    if len(classes) == 2 and task != "multiclass":
        return Dataset(X, np.where(y == 1, 1, -1), "binary", name=name, classes=classes)
    return Dataset(X, y.astype(np.int64), "multiclass", name=name, classes=classes)


def _tidy(value: float):
    return int(value) if float(value).is_integer() else float(value)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def save_libsvm(dataset: Dataset, path) -> None:
    """Write ``dataset`` in LIBSVM format; zero entries are omitted."""
    labels = dataset.original_labels()
    with open(path, "w") as fh:
        for x, lab in zip(dataset.X, labels):
            nz = np.flatnonzero((x != 0.0) | np.signbit(x))
            feats = " ".join(f"{i + 1}:{repr(float(x[i]))}" for i in nz)
            fh.write(f"{_fmt(lab)} {feats}".rstrip() + "\n")


def save_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(dataset.d)] + ["y"])
        for x, lab in zip(dataset.X, dataset.y):
            w.writerow([repr(float(v)) for v in x] + [_fmt(lab)])


def save_manifest(dataset: Dataset, path) -> None:
    with open(path, "w") as fh:
        json.dump(dataset.manifest(), fh, indent=2)


def normalize(dataset: Dataset, mode: str = "unit_ball") -> Dataset:
    """Rescale features.

    ``unit_ball`` divides every row by the dataset radius.
    ``per_feature_standard`` centres each column and divides by its standard
    deviation; constant columns become all zeros.
    """
    X = dataset.X
    if mode == "unit_ball":
        r = dataset.radius
        Xn = X / r if r > 0 else X.copy()
    elif mode == "per_feature_standard":
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        safe = np.where(sd > 0, sd, 1.0)
        Xn = np.where(sd > 0, (X - mu) / safe, 0.0)
    else:
        raise ValueError(f"unknown normalisation {mode!r}")
    return replace(dataset, X=Xn)


@dataclass(frozen=True)
class SplitPlan:
    k: int = 5
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("need at least 2 folds")


def kfold(dataset: Dataset, plan: SplitPlan) -> list[tuple[np.ndarray, np.ndarray]]:
    """Deterministic k-fold split; classification data is stratified.

    Each class (or the whole index set) is shuffled and dealt round-robin
    onto the folds, continuing where the previous class stopped so that fold
    sizes differ by at most one.
    """
    m = dataset.m
    if plan.k > m:
        raise ValueError(f"cannot split {m} samples into {plan.k} folds")
    rng = np.random.default_rng(np.random.SeedSequence([plan.seed, 17]))
    if plan.stratified and dataset.task != "regression":
        groups = [np.flatnonzero(dataset.y == c) for c in np.unique(dataset.y)]
    else:
        groups = [np.arange(m)]
    assignment = np.empty(m, dtype=np.int64)
    offset = 0
    for g in groups:
        g = rng.permutation(g)
        assignment[g] = (offset + np.arange(g.size)) % plan.k
        offset += g.size
    folds = []
    for f in range(plan.k):
        val = np.flatnonzero(assignment == f)
        train = np.flatnonzero(assignment != f)
        folds.append((train, val))
    return folds


def train_test_split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 23]))
    perm = rng.permutation(dataset.m)
    n_test = int(round(test_fraction * dataset.m))
    return dataset.subset(perm[n_test:]), dataset.subset(perm[:n_test])
