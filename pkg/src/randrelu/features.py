"""Random feature maps of neural-network type.

A :class:`FeatureBank` holds the sampled inner weights of a finite random
feature map.  ReLU features follow ``max(0, w . (x, 1/gamma))`` with the bias
folded into the last coordinate of ``w``; Fourier features follow
``sqrt(2) cos(w . x / gamma + b)`` and serve as the comparison baseline.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from randrelu._random import substream

KINDS = ("relu", "fourier")
DISTRIBUTIONS = ("uniform_sphere", "gaussian", "ellipsoid")


@dataclass(frozen=True)
class FeatureSpec:
    """Everything needed to rebuild a feature bank bit-for-bit.

    Parameters
    ----------
    kind : {"relu", "fourier"}
    input_dim : int
        Data dimension ``d``.
    count : int
        Number of features ``N``.
    bandwidth : float
        ``gamma``.  Enters ReLU features as the ``1/gamma`` bias input and
        Fourier features as a divisor of ``w . x``.
    distribution : {"uniform_sphere", "gaussian", "ellipsoid"}
        Law of the inner weights.  Fourier banks default to ``gaussian``.
    scale : float
        Standard deviation for ``gaussian``.
    axes : tuple of float, optional
        ``d + 1`` semi-axes for ``ellipsoid``.
    seed : int
        64-bit seed.
    """

    kind: str
    input_dim: int
    count: int
    bandwidth: float = 1.0
    distribution: str | None = None
    scale: float = 1.0
    axes: tuple[float, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if self.distribution is None:
            default = "uniform_sphere" if self.kind == "relu" else "gaussian"
            object.__setattr__(self, "distribution", default)
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be > 0")
        if self.distribution == "gaussian" and not self.scale > 0:
            raise ValueError("scale must be > 0")
        if self.distribution == "ellipsoid":
            if self.axes is None or len(self.axes) != self.weight_dim:
                raise ValueError(f"ellipsoid needs {self.weight_dim} axes")
            if min(self.axes) <= 0:
                raise ValueError("ellipsoid axes must be > 0")
            object.__setattr__(self, "axes", tuple(float(a) for a in self.axes))
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def weight_dim(self) -> int:
        # ReLU weights carry the bias coordinate; Fourier weights use a phase.
        return self.input_dim + 1 if self.kind == "relu" else self.input_dim

    def replace(self, **changes) -> FeatureSpec:
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields.update(changes)
        return FeatureSpec(**fields)


@dataclass(frozen=True, eq=False)
class FeatureBank:
    spec: FeatureSpec
    omegas: np.ndarray
    phases: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        self.omegas.setflags(write=False)
        self.phases.setflags(write=False)

    @classmethod
    def sample(cls, spec: FeatureSpec) -> FeatureBank:
        """Draw a bank from ``spec``; the result depends only on ``spec``."""
        rng = substream(spec.seed, 0)
        dim = spec.weight_dim
        if spec.distribution == "uniform_sphere":
            omegas = _unit_rows(rng, spec.count, dim)
        elif spec.distribution == "gaussian":
            omegas = spec.scale * rng.standard_normal((spec.count, dim))
        else:
            omegas = _unit_rows(rng, spec.count, dim) * np.asarray(spec.axes)
        phases = np.empty(0)
        if spec.kind == "fourier":
            phases = substream(spec.seed, 1).uniform(0.0, 2 * np.pi, spec.count)
        return cls(spec, omegas, phases)

    @property
    def count(self) -> int:
        return self.omegas.shape[0]

    def transform(self, X) -> np.ndarray:
        if self.spec.kind == "relu":
            return relu_features(X, self)
        return fourier_features(X, self)


def _unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    z = rng.standard_normal((n, dim))
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    # a zero Gaussian draw has probability zero; redraw defensively anyway
    while np.any(norms == 0):
        bad = norms[:, 0] == 0
        z[bad] = rng.standard_normal((bad.sum(), dim))
        norms = np.linalg.norm(z, axis=1, keepdims=True)
    return z / norms


def sample_sphere(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` points uniformly from the unit sphere S^d in R^(d+1)."""
    if d < 1 or n < 1:
        raise ValueError(f"need d >= 1 and n >= 1, got d={d}, n={n}")
    return _unit_rows(rng, n, d + 1)


def sample_gaussian(d: int, n: int, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Draw an ``n x (d+1)`` array of i.i.d. Normal(0, scale^2) entries."""
    if d < 1 or n < 1:
        raise ValueError(f"need d >= 1 and n >= 1, got d={d}, n={n}")
    if not scale > 0:
        raise ValueError(f"scale must be > 0, got {scale}")
    return scale * rng.standard_normal((n, d + 1))


def _check_input(X, bank: FeatureBank, kind: str) -> np.ndarray:
    if bank.spec.kind != kind:
        raise ValueError(f"expected a {kind} bank, got {bank.spec.kind}")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != bank.spec.input_dim:
        raise ValueError(
            f"data has {X.shape[1]} columns but the bank expects {bank.spec.input_dim}"
        )
    return X


def relu_features(X, bank: FeatureBank) -> np.ndarray:
    """Evaluate ``max(0, w_j . (x_i, 1/gamma))`` as an ``m x N`` matrix."""
    X = _check_input(X, bank, "relu")
    W = bank.omegas
    pre = X @ W[:, :-1].T + W[:, -1] / bank.spec.bandwidth
    return np.maximum(pre, 0.0)


def fourier_features(X, bank: FeatureBank) -> np.ndarray:
    """Evaluate ``sqrt(2) cos(w_j . x_i / gamma + b_j)`` as an ``m x N`` matrix."""
    X = _check_input(X, bank, "fourier")
    pre = X @ bank.omegas.T / bank.spec.bandwidth + bank.phases
    return np.sqrt(2.0) * np.cos(pre)


def zero_fraction(F: np.ndarray) -> float:
    """Fraction of entries that are exactly zero."""
    F = np.asarray(F)
    return float(np.count_nonzero(F == 0.0)) / F.size


_HEADER = ("kind", "input_dim", "count", "bandwidth", "distribution", "scale", "axes", "seed")


def dump_bank(bank: FeatureBank, path) -> None:
    """Write ``bank`` as CSV: header rows, then one ``omega`` row per feature,
    then one ``phase`` row per feature (Fourier banks only).  Floats are
    written with ``repr`` so that :func:`load_bank` is bit-exact."""
    spec = bank.spec
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for key in _HEADER:
            value = getattr(spec, key)
            if key == "axes":
                value = "" if value is None else " ".join(repr(a) for a in value)
            elif isinstance(value, float):
                value = repr(value)
            w.writerow([key, value])
        for row in bank.omegas:
            w.writerow(["omega", *(repr(float(v)) for v in row)])
        for b in bank.phases:
            w.writerow(["phase", repr(float(b))])


def load_bank(path) -> FeatureBank:
    header, omegas, phases = {}, [], []
    with open(Path(path), newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            if row[0] == "omega":
                omegas.append([float(v) for v in row[1:]])
            elif row[0] == "phase":
                phases.append(float(row[1]))
            else:
                header[row[0]] = row[1]
    axes = header.get("axes") or None
    spec = FeatureSpec(
        kind=header["kind"],
        input_dim=int(header["input_dim"]),
        count=int(header["count"]),
        bandwidth=float(header["bandwidth"]),
        distribution=header["distribution"],
        scale=float(header["scale"]),
        axes=None if axes is None else tuple(float(a) for a in axes.split()),
        seed=int(header["seed"]),
    )
    omegas = np.array(omegas, dtype=np.float64).reshape(spec.count, spec.weight_dim)
    return FeatureBank(spec, omegas, np.array(phases, dtype=np.float64))
