"""Training: random-features models under a norm constraint, and dense ReLU
networks used as depth-separation baselines."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from randrelu._random import substream
from randrelu.features import FeatureBank, FeatureSpec

LOSS_KINDS = ("hinge", "logistic_multiclass", "squared")
OPTIMIZERS = ("sgd_projected", "adam")
SCHEDULES = ("constant", "inverse_sqrt")
ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-8
NORM_SLACK = 1e-9


class TrainingError(RuntimeError):
    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class LabelError(ValueError):
    pass


@dataclass(frozen=True)
class LossSpec:
    kind: str

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss {self.kind!r}")

    @property
    def is_classification(self) -> bool:
        return self.kind != "squared"


def _as_loss(loss) -> LossSpec:
    return loss if isinstance(loss, LossSpec) else LossSpec(loss)


def check_labels(loss: LossSpec, y, n_outputs: int | None = None) -> np.ndarray:
    y = np.asarray(y)
    if loss.kind == "hinge":
        if not np.all(np.isin(y, (-1, 1))):
            raise LabelError("hinge loss needs labels in {-1, +1}")
        return y.astype(np.float64)
    if loss.kind == "logistic_multiclass":
        if not np.all(np.equal(np.mod(y, 1), 0)) or np.any(y < 0):
            raise LabelError("logistic loss needs non-negative integer class labels")
        y = y.astype(np.int64)
        if n_outputs is not None and np.any(y >= n_outputs):
            raise LabelError(f"class label out of range for {n_outputs} outputs")
        return y
    y = y.astype(np.float64)
    if not np.all(np.isfinite(y)):
        raise LabelError("squared loss needs finite real labels")
    return y


def batch_loss_grad(loss, P: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean loss over a batch and its gradient with respect to ``P``.

    ``P`` is ``b x K``.  The returned gradient already carries the ``1/b`` of
    the mean.
    """
    loss = _as_loss(loss)
    b = P.shape[0]
    if loss.kind == "hinge":
        margin = y * P[:, 0]
        active = margin < 1.0
        G = np.zeros_like(P)
        G[:, 0] = np.where(active, -y, 0.0) / b
        return float(np.mean(np.maximum(0.0, 1.0 - margin))), G
    if loss.kind == "squared":
        r = P[:, 0] - y
        G = np.zeros_like(P)
        G[:, 0] = 2.0 * r / b
        return float(np.mean(r**2)), G
    Z = P - P.max(axis=1, keepdims=True)
    logsum = np.log(np.sum(np.exp(Z), axis=1))
    probs = np.exp(Z - logsum[:, None])
    rows = np.arange(b)
    value = float(np.mean(logsum - Z[rows, y]))
    probs[rows, y] -= 1.0
    return value, probs / b


def loss_and_grad(spec, prediction, label) -> tuple[float, np.ndarray]:
    """Loss of one prediction vector and its gradient.

    hinge: ``max(0, 1 - y f)`` with subgradient ``-y`` when ``y f < 1`` (0 at
    the kink); logistic_multiclass: softmax cross-entropy against a class
    index; squared: ``(f - y)^2``.
    """
    spec = _as_loss(spec)
    P = np.atleast_1d(np.asarray(prediction, dtype=np.float64))[None, :]
    y = check_labels(spec, np.atleast_1d(label), P.shape[1])
    value, G = batch_loss_grad(spec, P, y)
    return value, G[0]


def project_ball(C: np.ndarray, R: float) -> np.ndarray:
    """Euclidean (Frobenius) projection onto ``{C : ||C|| <= R}``."""
    if not R > 0:
        raise ValueError("radius must be > 0")
    norm = frobenius(C)
    if norm <= R or not math.isfinite(norm):
        return C
    return C * (R / norm)


def frobenius(C: np.ndarray) -> float:
    """Frobenius norm that does not overflow for entries near the float
    range limit."""
    big = float(np.max(np.abs(C))) if C.size else 0.0
    if big == 0.0 or not math.isfinite(big):
        return big
    return big * float(np.linalg.norm(C / big))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 64
    epochs: int = 50
    seed: int = 0
    optimizer: str = "sgd_projected"
    radius: float = 1e3
    schedule: str = "constant"

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if not self.radius > 0:
            raise ValueError("radius must be > 0")

    def rate(self, epoch: int) -> float:
        if self.schedule == "inverse_sqrt":
            return self.learning_rate / math.sqrt(epoch + 1)
        return self.learning_rate


@dataclass
class Trace:
    """Per-epoch record of training loss, metric and outer-weight norm."""

    rows: list[tuple[int, float, float, float]] = field(default_factory=list)

    def add(self, epoch: int, loss: float, metric: float, norm: float = float("nan")):
        self.rows.append((epoch, loss, metric, norm))

    @property
    def losses(self) -> list[float]:
        return [r[1] for r in self.rows]

    @property
    def norms(self) -> list[float]:
        return [r[3] for r in self.rows]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "metric", "norm"])
            for row in self.rows:
                w.writerow([row[0], *(repr(float(v)) for v in row[1:])])


def metric(loss: LossSpec, P: np.ndarray, y: np.ndarray) -> float:
    """Accuracy for classification losses, mean squared error otherwise."""
    if loss.kind == "hinge":
        return float(np.mean(np.where(P[:, 0] >= 0, 1.0, -1.0) == y))
    if loss.kind == "logistic_multiclass":
        return float(np.mean(np.argmax(P, axis=1) == y))
    return float(np.mean((P[:, 0] - y) ** 2))


def n_outputs(loss: LossSpec, y) -> int:
    if loss.kind == "logistic_multiclass":
        return int(np.max(y)) + 1
    return 1


class _Adam:
    def __init__(self, params):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        c1 = 1 - ADAM_BETA1**self.t
        c2 = 1 - ADAM_BETA2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= ADAM_BETA1
            m += (1 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1 - ADAM_BETA2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


@dataclass(eq=False)
class RandomFeatureModel:
    """Frozen feature bank plus outer weights ``C`` (``N x K``) with
    ``||C||_F <= radius``."""

    bank: FeatureBank
    outer: np.ndarray
    radius: float
    trace: Trace = field(default_factory=Trace)

    def decision_function(self, X) -> np.ndarray:
        return self.bank.transform(X) @ self.outer

    def predict(self, X, loss="squared") -> np.ndarray:
        P = self.decision_function(X)
        kind = _as_loss(loss).kind
        if kind == "hinge":
            return np.where(P[:, 0] >= 0, 1.0, -1.0)
        if kind == "logistic_multiclass":
            return np.argmax(P, axis=1)
        return P[:, 0]

    def to_dict(self) -> dict:
        spec = self.bank.spec
        return {
            "type": "random_feature_model",
            "spec": {k: getattr(spec, k) for k in spec.__dataclass_fields__},
            "radius": self.radius,
            "outer": {"shape": list(self.outer.shape), "data": [float(v) for v in self.outer.ravel()]},
        }

    @classmethod
    def from_dict(cls, data: dict) -> RandomFeatureModel:
        spec_fields = dict(data["spec"])
        if spec_fields.get("axes") is not None:
            spec_fields["axes"] = tuple(spec_fields["axes"])
        bank = FeatureBank.sample(FeatureSpec(**spec_fields))
        outer = np.array(data["outer"]["data"], dtype=np.float64).reshape(data["outer"]["shape"])
        return cls(bank, outer, data["radius"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _split_dataset(dataset):
    if isinstance(dataset, tuple):
        return np.asarray(dataset[0], dtype=np.float64), np.asarray(dataset[1])
    return dataset.X, dataset.y


def fit_outer(
    Phi: np.ndarray,
    y,
    loss,
    cfg: TrainConfig,
    n_out: int | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, Trace]:
    """Minimise the mean loss of ``Phi @ C`` over ``||C||_F <= cfg.radius``.

    Minibatch SGD (or Adam) on ``C`` with a projection onto the ball after
    every step.  ``Phi`` is the frozen ``m x N`` feature matrix.
    """
    loss = _as_loss(loss)
    y = check_labels(loss, y)
    m, N = Phi.shape
    if m == 0:
        raise ValueError("cannot train on an empty dataset")
    K = n_out if n_out is not None else n_outputs(loss, y)
    rng = substream(cfg.seed, 1) if rng is None else rng
    C = np.zeros((N, K))
    adam = _Adam([C]) if cfg.optimizer == "adam" else None
    trace = Trace()
    step = 0
    for epoch in range(cfg.epochs):
        lr = cfg.rate(epoch)
        perm = rng.permutation(m)
        for start in range(0, m, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            Fb = Phi[idx]
            value, G = batch_loss_grad(loss, Fb @ C, y[idx])
            step += 1
            if not math.isfinite(value):
                raise TrainingError("training loss diverged", step)
            grad = Fb.T @ G
            if adam is None:
                C -= lr * grad
            else:
                adam.step([C], [grad], lr)
            if not np.all(np.isfinite(C)):
                raise TrainingError("outer weights diverged", step)
            C[...] = project_ball(C, cfg.radius)
            assert frobenius(C) <= cfg.radius * (1 + NORM_SLACK) + NORM_SLACK
        P = Phi @ C
        full_loss, _ = batch_loss_grad(loss, P, y)
        if not math.isfinite(full_loss):
            raise TrainingError("training loss diverged", step)
        trace.add(epoch, full_loss, metric(loss, P, y), float(np.linalg.norm(C)))
    return C, trace


def train_rrf(dataset, spec: FeatureSpec | FeatureBank, loss, cfg: TrainConfig) -> RandomFeatureModel:
    """Random ReLU features method: sample features once, then fit the outer
    weights by projected stochastic gradient descent.

    Fourier banks go through the same code path, which is how the baseline
    is trained.  ``cfg.optimizer == "adam"`` swaps the step rule but keeps
    the projection.
    """
    X, y = _split_dataset(dataset)
    bank = spec if isinstance(spec, FeatureBank) else FeatureBank.sample(spec)
    Phi = bank.transform(X)
    C, trace = fit_outer(Phi, y, loss, cfg)
    return RandomFeatureModel(bank, C, cfg.radius, trace)


@dataclass(eq=False)
class DenseNet:
    """Fully connected ReLU network with a linear output layer.

    ``weights[i]`` has shape ``(fan_in, fan_out)`` so a layer is ``h @ W + b``.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    trace: Trace = field(default_factory=Trace)

    def __post_init__(self):
        if len(self.weights) not in (2, 3) or len(self.biases) != len(self.weights):
            raise ValueError("DenseNet supports depth 2 or 3")
        for W, nxt in zip(self.weights, self.weights[1:]):
            if W.shape[1] != nxt.shape[0]:
                raise ValueError("layer shapes do not chain")

    @classmethod
    def init(cls, input_dim: int, widths, output_dim: int = 1, rng=None) -> DenseNet:
        """Glorot-uniform weights, zero biases.  ``widths`` lists the hidden
        layer sizes (one entry for depth 2, two for depth 3)."""
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        sizes = [input_dim, *widths, output_dim]
        weights, biases = [], []
        for a, b in zip(sizes[:-1], sizes[1:]):
            lim = math.sqrt(6.0 / (a + b))
            weights.append(rng.uniform(-lim, lim, (a, b)))
            biases.append(np.zeros(b))
        return cls(weights, biases)

    @classmethod
    def from_random_features(cls, model: RandomFeatureModel) -> DenseNet:
        """Depth-2 network computing the same function as ``model``."""
        if model.bank.spec.kind != "relu":
            raise ValueError("only relu models are two-layer ReLU networks")
        W = model.bank.omegas
        return cls(
            [W[:, :-1].T.copy(), model.outer.copy()],
            [W[:, -1] / model.bank.spec.bandwidth, np.zeros(model.outer.shape[1])],
        )

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def param_count(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> DenseNet:
        return DenseNet([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def to_dict(self) -> dict:
        return {
            "type": "dense_net",
            "weights": [{"shape": list(W.shape), "data": [float(v) for v in W.ravel()]} for W in self.weights],
            "biases": [[float(v) for v in b] for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data: dict) -> DenseNet:
        return cls(
            [np.array(w["data"], dtype=np.float64).reshape(w["shape"]) for w in data["weights"]],
            [np.array(b, dtype=np.float64) for b in data["biases"]],
        )


def dense_forward(net: DenseNet, X) -> np.ndarray:
    """ReLU hidden layers, linear output; returns ``m x K``."""
    h = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if h.shape[1] != net.weights[0].shape[0]:
        raise ValueError(f"expected {net.weights[0].shape[0]} input columns, got {h.shape[1]}")
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        h = np.maximum(h @ W + b, 0.0)
    return h @ net.weights[-1] + net.biases[-1]


def dense_loss_grad(net: DenseNet, X, y, loss) -> tuple[float, list[np.ndarray]]:
    """Mean loss and its gradient for every parameter (same order as
    :meth:`DenseNet.params`)."""
    loss = _as_loss(loss)
    acts = [np.atleast_2d(np.asarray(X, dtype=np.float64))]
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        acts.append(np.maximum(acts[-1] @ W + b, 0.0))
    P = acts[-1] @ net.weights[-1] + net.biases[-1]
    value, G = batch_loss_grad(loss, P, y)
    gW = [None] * net.depth
    gb = [None] * net.depth
    for i in range(net.depth - 1, -1, -1):
        gW[i] = acts[i].T @ G
        gb[i] = G.sum(axis=0)
        if i > 0:
            G = (G @ net.weights[i].T) * (acts[i] > 0)
    return value, gW + gb


def dense_train(net: DenseNet, dataset, loss, cfg: TrainConfig) -> DenseNet:
    """Backpropagation with Adam (or plain SGD when ``cfg.optimizer`` is
    ``sgd_projected``; no projection is applied to dense networks).  Returns a
    trained copy carrying its loss trace."""
    loss = _as_loss(loss)
    X, y = _split_dataset(dataset)
    y = check_labels(loss, y)
    net = net.copy()
    params = net.params()
    adam = _Adam(params) if cfg.optimizer == "adam" else None
    rng = substream(cfg.seed, 2)
    m = X.shape[0]
    step = 0
    for epoch in range(cfg.epochs):
        lr = cfg.rate(epoch)
        perm = rng.permutation(m)
        for start in range(0, m, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            value, grads = dense_loss_grad(net, X[idx], y[idx], loss)
            step += 1
            if not math.isfinite(value):
                raise TrainingError("training loss diverged", step)
            if adam is None:
                for p, g in zip(params, grads):
                    p -= lr * g
            else:
                adam.step(params, grads, lr)
        P = dense_forward(net, X)
        full_loss, _ = batch_loss_grad(loss, P, y)
        if not math.isfinite(full_loss):
            raise TrainingError("training loss diverged", step)
        net.trace.add(epoch, full_loss, metric(loss, P, y))
    return net


def matched_width_3layer(param_budget: int, d: int) -> int:
    """Largest equal width ``w`` of a 3-layer net with
    ``(d+1) w + (w+1) w + (w+1) <= param_budget``."""
    if param_budget < (d + 1) + 2 + 2:
        raise ValueError(f"budget {param_budget} is below the smallest 3-layer network")

    def count(w):
        return (d + 1) * w + (w + 1) * w + (w + 1)

    # count(w) = w^2 + (d+3) w + 1; solve, then fix floating-point rounding
    w = int((-(d + 3) + math.sqrt((d + 3) ** 2 + 4 * (param_budget - 1))) / 2)
    while count(w + 1) <= param_budget:
        w += 1
    while count(w) > param_budget:
        w -= 1
    return w


def shallow_param_count(n: int, d: int) -> int:
    """Parameters of a one-hidden-layer net with ``n`` nodes: ``n (d + 2)``."""
    return n * (d + 2)


def theory_counts(R: float, r: float, epsilon: float, delta: float) -> tuple[int, int]:
    """Sample and feature counts sufficient for excess risk ``3 eps`` with
    probability ``1 - 2 delta`` under a 1-Lipschitz loss.

    ``m >= [(4 + 2 sqrt(2 ln(1/delta))) R (sqrt(r^2+1) + 1) / eps]^2`` and
    ``N >= 5 (r^2+1) / eps^2 * ln(16 (r^2+1) / (eps^2 delta))``.
    """
    if min(R, r, epsilon, delta) <= 0 or delta >= 1:
        raise ValueError("need positive R, r, epsilon and 0 < delta < 1")
    c = r**2 + 1
    m = ((4 + 2 * math.sqrt(2 * math.log(1 / delta))) * R * (math.sqrt(c) + 1) / epsilon) ** 2
    n = 5 * c / epsilon**2 * math.log(16 * c / (epsilon**2 * delta))
    return math.ceil(m), math.ceil(n)


def with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(cfg, seed=seed)
