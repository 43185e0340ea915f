"""Experiment runner: cross-validated grid search over bandwidth and learning
rate, and the depth-separation sweep over parameter budgets."""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from randrelu import data as ds
from randrelu._random import substream
from randrelu.features import FeatureBank, FeatureSpec, zero_fraction
from randrelu.learn import (
    DenseNet,
    TrainConfig,
    dense_forward,
    dense_train,
    fit_outer,
    matched_width_3layer,
    metric,
    n_outputs,
    shallow_param_count,
    LossSpec,
)

log = logging.getLogger(__name__)

METHODS = ("rrf", "rff", "dense2", "dense3")
SWEEPS = ("grid", "depth")
DEFAULT_BANDWIDTHS = tuple(2.0**k for k in range(-3, 4))
DEFAULT_RATES = (1e-3, 1e-2, 1e-1, 1e0)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(float(t)) for t in text.replace(",", " ").split())


def _words(text: str) -> tuple[str, ...]:
    return tuple(t for t in text.replace(",", " ").split())


@dataclass(frozen=True)
class ExperimentConfig:
    """One sweep: a dataset, a set of methods and the grids to search.

    ``counts`` lists feature counts ``N`` (grid sweep) and ``budgets`` lists
    shallow widths (depth sweep; the parameter budget is ``N (d + 2)``).
    ``method_rates`` pins a learning rate per method and overrides ``rates``.
    """

    dataset: str = "sine"
    m: int = 2000
    d: int = 2
    path: str = ""
    normalize: str = ""
    methods: tuple[str, ...] = ("rrf",)
    loss: str = "hinge"
    sweep: str = "grid"
    bandwidths: tuple[float, ...] = DEFAULT_BANDWIDTHS
    rates: tuple[float, ...] = DEFAULT_RATES
    method_rates: tuple[tuple[str, float], ...] = ()
    counts: tuple[int, ...] = (20,)
    budgets: tuple[int, ...] = tuple(20 * 2**k for k in range(9))
    radius: float = 1e3
    folds: int = 5
    seeds: tuple[int, ...] = (0,)
    epochs: int = 10
    batch_size: int = 64
    optimizer: str = "sgd_projected"
    test_fraction: float = 0.2
    output: str = ""

    def __post_init__(self):
        for name in ("methods", "bandwidths", "rates", "seeds"):
            if not getattr(self, name):
                raise ValueError(f"grid {name!r} must be nonempty")
        if self.sweep not in SWEEPS:
            raise ValueError(f"unknown sweep {self.sweep!r}")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}")
        if self.sweep == "grid" and not self.counts:
            raise ValueError("grid 'counts' must be nonempty")
        if self.sweep == "depth" and not self.budgets:
            raise ValueError("grid 'budgets' must be nonempty")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")

    @classmethod
    def from_ini(cls, text: str) -> ExperimentConfig:
        """Parse the INI layout written by :meth:`to_ini`.

        Sections are ``[dataset]``, ``[method]``, ``[grid]``, ``[train]`` and
        ``[output]``; any key may be omitted to keep its default.  Rates per
        method go in ``[rates]`` as ``rrf = 0.01``.
        """
        parser = configparser.ConfigParser()
        parser.read_string(text)
        kwargs = {}
        types = {f.name: f.type for f in fields(cls)}
        for section in parser.sections():
            if section == "rates":
                kwargs["method_rates"] = tuple(
                    sorted((k, float(v)) for k, v in parser.items(section))
                )
                continue
            for key, raw in parser.items(section):
                if key not in types or key == "method_rates":
                    raise ValueError(f"unknown config key [{section}] {key}")
                kwargs[key] = _coerce(types[key], raw)
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        return cls.from_ini(Path(path).read_text())

    def to_ini(self) -> str:
        layout = {
            "dataset": ("dataset", "m", "d", "path", "normalize"),
            "method": ("methods", "loss", "sweep"),
            "grid": ("bandwidths", "rates", "counts", "budgets", "seeds", "folds"),
            "train": ("radius", "epochs", "batch_size", "optimizer", "test_fraction"),
            "output": ("output",),
        }
        lines = []
        for section, keys in layout.items():
            lines.append(f"[{section}]")
            for key in keys:
                value = getattr(self, key)
                if isinstance(value, tuple):
                    value = ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
                lines.append(f"{key} = {value}")
            lines.append("")
        if self.method_rates:
            lines.append("[rates]")
            lines += [f"{k} = {v!r}" for k, v in self.method_rates]
        return "\n".join(lines) + "\n"

    def rates_for(self, method: str) -> tuple[float, ...]:
        pinned = dict(self.method_rates)
        return (pinned[method],) if method in pinned else self.rates

    def train_config(self, rate: float, seed: int) -> TrainConfig:
        return TrainConfig(
            learning_rate=rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=seed,
            optimizer=self.optimizer,
            radius=self.radius,
        )


def _coerce(kind: str, raw: str):
    raw = raw.strip()
    if kind == "int":
        return int(float(raw))
    if kind == "float":
        return float(raw)
    if kind == "str":
        return raw
    if "int" in kind:
        return _ints(raw)
    if "float" in kind:
        return _floats(raw)
    return _words(raw)


@dataclass
class ResultRecord:
    """One grid cell: fold metrics (accuracy or MSE) and training time."""

    config_hash: str
    sweep: str
    method: str
    count: int
    bandwidth: float
    rate: float
    seed: int
    params: int
    fold_metrics: list[float]
    mean: float
    std: float
    seconds: float
    zero_fraction: float = float("nan")
    best: bool = False
    error: str = ""

    COLUMNS = (
        "config_hash", "sweep", "method", "count", "bandwidth", "rate", "seed", "params",
        "fold_metrics", "mean", "std", "seconds", "zero_fraction", "best", "error",
    )  # fmt: skip

    @property
    def ok(self) -> bool:
        return not self.error

    def row(self) -> list[str]:
        out = []
        for name in self.COLUMNS:
            v = getattr(self, name)
            if name == "fold_metrics":
                v = " ".join(repr(float(x)) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            out.append(str(v))
        return out

    @classmethod
    def from_row(cls, row: dict) -> ResultRecord:
        parse = {
            "count": int, "seed": int, "params": int,
            "bandwidth": float, "rate": float, "mean": float, "std": float,
            "seconds": float, "zero_fraction": float,
        }  # fmt: skip
        kwargs = {}
        for name in cls.COLUMNS:
            v = row[name]
            if name == "fold_metrics":
                v = [float(x) for x in v.split()] if isinstance(v, str) else [float(x) for x in v]
            elif name == "best":
                v = v if isinstance(v, bool) else v == "True"
            elif name in parse:
                v = parse[name](v)
            kwargs[name] = v
        return cls(**kwargs)


@dataclass(frozen=True)
class Cell:
    index: int
    method: str
    count: int
    bandwidth: float
    rate: float
    seed: int
    key: str = field(default="", compare=False)


def config_hash(cfg: ExperimentConfig, cell: Cell) -> str:
    """Stable digest of everything that determines a cell's result."""
    payload = asdict(replace(cfg, output=""))
    payload["cell"] = [cell.method, cell.count, cell.bandwidth, cell.rate, cell.seed]
    blob = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def build_dataset(cfg: ExperimentConfig, seed: int) -> ds.Dataset:
    rng = substream(seed, 101)
    if cfg.dataset == "daniely":
        dset = ds.gen_daniely(cfg.d, cfg.m, rng)
    elif cfg.dataset in ds.GRID_KINDS:
        dset = ds.gen_grid2d(cfg.dataset, cfg.m, rng)
    elif cfg.dataset == "libsvm":
        dset = ds.load_libsvm(cfg.path)
    else:
        raise ValueError(f"unknown dataset {cfg.dataset!r}")
    if cfg.normalize:
        dset = ds.normalize(dset, cfg.normalize)
    return dset


def grid_cells(cfg: ExperimentConfig) -> list[Cell]:
    cells = []
    sizes = cfg.counts if cfg.sweep == "grid" else cfg.budgets
    for method in cfg.methods:
        bandwidths = cfg.bandwidths if method in ("rrf", "rff") else (1.0,)
        for n in sizes:
            for gamma in bandwidths:
                for rate in cfg.rates_for(method):
                    for seed in cfg.seeds:
                        cells.append(Cell(len(cells), method, n, gamma, rate, seed))
    return [replace(c, key=config_hash(cfg, c)) for c in cells]


def _feature_spec(method: str, d: int, n: int, gamma: float, seed: int) -> FeatureSpec:
    kind = "relu" if method == "rrf" else "fourier"
    return FeatureSpec(kind, d, n, bandwidth=gamma, seed=seed)


def _fit_predict(cfg, cell, loss, Xtr, ytr, Xte, cell_seed):
    """Train one model; return (predictions on Xte, training seconds,
    zero fraction, parameter count)."""
    d = Xtr.shape[1]
    tcfg = cfg.train_config(cell.rate, cell_seed)
    if cell.method in ("rrf", "rff"):
        bank = FeatureBank.sample(_feature_spec(cell.method, d, cell.count, cell.bandwidth, cell_seed))
        Phi = bank.transform(Xtr)
        k = n_outputs(loss, ytr)
        t0 = time.perf_counter()
        C, _ = fit_outer(Phi, ytr, loss, tcfg, n_out=k)
        seconds = time.perf_counter() - t0
        return bank.transform(Xte) @ C, seconds, zero_fraction(Phi), C.size
    k = n_outputs(loss, ytr)
    if cell.method == "dense2":
        widths = [cell.count]
    else:
        budget = shallow_param_count(cell.count, d)
        w = matched_width_3layer(budget, d)
        widths = [w, w]
    net = DenseNet.init(d, widths, k, substream(cell_seed, 3))
    t0 = time.perf_counter()
    net = dense_train(net, (Xtr, ytr), loss, tcfg)
    seconds = time.perf_counter() - t0
    return dense_forward(net, Xte), seconds, float("nan"), net.param_count


def _empty_record(cfg, cell, error="") -> ResultRecord:
    return ResultRecord(
        cell.key, cfg.sweep, cell.method, cell.count, cell.bandwidth, cell.rate, cell.seed,
        0, [], float("nan"), float("nan"), 0.0, error=error,
    )  # fmt: skip


def run_cell(cfg: ExperimentConfig, cell: Cell) -> ResultRecord:
    """Evaluate one cell; failures are captured in the record."""
    loss = LossSpec(cfg.loss)
    try:
        dset = build_dataset(cfg, cell.seed)
        if cfg.sweep == "grid":
            splits = ds.kfold(dset, ds.SplitPlan(cfg.folds, seed=cell.seed))
        else:
            perm = substream(cell.seed, 102).permutation(dset.m)
            n_test = int(round(cfg.test_fraction * dset.m))
            splits = [(perm[n_test:], perm[:n_test])]
        scores, seconds, zeros, params = [], 0.0, [], 0
        for f, (tr, va) in enumerate(splits):
            cell_seed = int(substream(cell.seed, cell.index, f).integers(2**63))
            P, sec, z, params = _fit_predict(
                cfg, cell, loss, dset.X[tr], dset.y[tr], dset.X[va], cell_seed
            )
            scores.append(metric(loss, P, dset.y[va]))
            seconds += sec
            zeros.append(z)
    except Exception as exc:  # one bad cell must not sink the sweep
        log.warning("cell %d (%s) failed: %s", cell.index, cell.method, exc)
        return _empty_record(cfg, cell, f"{type(exc).__name__}: {exc}")
    arr = np.asarray(scores)
    return ResultRecord(
        cell.key, cfg.sweep, cell.method, cell.count, cell.bandwidth, cell.rate, cell.seed,
        params, [float(s) for s in arr], float(arr.mean()), float(arr.std()), seconds,
        float(np.mean(zeros)),
    )  # fmt: skip


def _flag_best(records: list[ResultRecord], higher_is_better: bool) -> None:
    """Mark the best learning rate per (method, count, bandwidth, seed)."""
    groups: dict[tuple, list[ResultRecord]] = {}
    for r in records:
        r.best = False
        if r.ok:
            groups.setdefault((r.method, r.count, r.bandwidth, r.seed), []).append(r)
    for group in groups.values():
        key = (lambda r: r.mean) if higher_is_better else (lambda r: -r.mean)
        max(group, key=key).best = True


def _execute(cfg, cells, jobs):
    if jobs <= 1 or len(cells) <= 1:
        return [run_cell(cfg, c) for c in cells]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_cell, [cfg] * len(cells), cells))


def run_grid(cfg: ExperimentConfig, jobs: int = 1, done=None) -> list[ResultRecord]:
    """k-fold cross-validation of every grid cell.

    ``done`` maps config hashes to records from an earlier run; those cells
    are not recomputed.  Records come back in cell order regardless of
    ``jobs``.
    """
    return _run(cfg, jobs, done)


def run_depth_sweep(cfg: ExperimentConfig, jobs: int = 1, done=None) -> list[ResultRecord]:
    """Test MSE of rrf, dense2 and dense3 at each budget on a held-out split.

    ``cfg.budgets`` are shallow widths ``N``; dense3 gets the largest equal
    width whose parameter count fits ``N (d + 2)``.
    """
    return _run(replace(cfg, sweep="depth"), jobs, done)


def _run(cfg, jobs, done):
    done = done or {}
    cells = grid_cells(cfg)
    todo = [c for c in cells if c.key not in done]
    fresh = {r.config_hash: r for r in _execute(cfg, todo, jobs)}
    records = [done[c.key] if c.key in done else fresh[c.key] for c in cells]
    _flag_best(records, higher_is_better=LossSpec(cfg.loss).is_classification)
    return records


def summarize(records: list[ResultRecord]) -> dict[tuple[str, int], tuple[float, float, int]]:
    """Mean and std of the per-record mean over seeds, keyed by (method,
    count); for each key only the best-flagged records count."""
    groups: dict[tuple[str, int], list[float]] = {}
    for r in records:
        if r.ok and r.best:
            groups.setdefault((r.method, r.count), []).append(r.mean)
    return {k: (float(np.mean(v)), float(np.std(v)), len(v)) for k, v in groups.items()}


def emit_results(records: list[ResultRecord], path, fmt: str = "csv") -> None:
    """Write records in long format, one row per record."""
    path = Path(path)
    try:
        if fmt == "csv":
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(ResultRecord.COLUMNS)
                for r in records:
                    w.writerow(r.row())
        elif fmt == "json":
            rows = [{k: getattr(r, k) for k in ResultRecord.COLUMNS} for r in records]
            path.write_text(json.dumps(rows, indent=1))
        else:
            raise ValueError(f"unknown format {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


def read_results(path, fmt: str | None = None) -> list[ResultRecord]:
    path = Path(path)
    fmt = fmt or ("json" if path.suffix == ".json" else "csv")
    if fmt == "json":
        return [ResultRecord.from_row(row) for row in json.loads(path.read_text())]
    with open(path, newline="") as fh:
        return [ResultRecord.from_row(row) for row in csv.DictReader(fh)]
