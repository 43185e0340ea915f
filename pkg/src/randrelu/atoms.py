"""Finite ReLU-atom functions, Maurey sparsification and multi-layer assembly.

An :class:`AtomicFunction` is ``f(x) = sum_j a_j ReLU(w_j . (x, 1))``, i.e. the
integral of a ReLU node against a finite signed measure.  Its total mass
``sum_j |a_j| |w_j|`` is the Lipschitz constant bound and drives the Maurey
error ``R sqrt(r^2 + 1) / sqrt(N)``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from randrelu._random import as_generator

DEFAULT_TRIALS = 20
DEFAULT_NODE_BUDGET = 2_000_000


class BudgetExceededError(RuntimeError):
    def __init__(self, required: int, budget: int):
        super().__init__(f"construction needs {required} hidden nodes, budget is {budget}")
        self.required = required
        self.budget = budget


class ZeroMassWarning(UserWarning):
    pass


def _augment(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((X.shape[0], 1))])


@dataclass(frozen=True, eq=False)
class AtomicFunction:
    input_dim: int
    coeffs: np.ndarray
    omegas: np.ndarray

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=np.float64).reshape(-1)
        omegas = np.asarray(self.omegas, dtype=np.float64).reshape(-1, self.input_dim + 1)
        if coeffs.shape[0] != omegas.shape[0]:
            raise ValueError("one coefficient per atom is required")
        if np.any(np.all(omegas == 0.0, axis=1)):
            raise ValueError("atoms with a zero weight vector are not allowed")
        coeffs.setflags(write=False)
        omegas.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "omegas", omegas)

    @classmethod
    def from_atoms(cls, atoms, input_dim: int | None = None) -> AtomicFunction:
        atoms = list(atoms)
        if input_dim is None:
            if not atoms:
                raise ValueError("input_dim is required for an empty atom list")
            input_dim = len(atoms[0][1]) - 1
        coeffs = [a for a, _ in atoms]
        omegas = [np.asarray(w, dtype=np.float64) for _, w in atoms]
        return cls(input_dim, np.array(coeffs), np.array(omegas).reshape(-1, input_dim + 1))

    @classmethod
    def zero(cls, input_dim: int) -> AtomicFunction:
        return cls(input_dim, np.empty(0), np.empty((0, input_dim + 1)))

    def __len__(self) -> int:
        return self.coeffs.shape[0]

    def __neg__(self) -> AtomicFunction:
        return AtomicFunction(self.input_dim, -self.coeffs, self.omegas)

    def __call__(self, X):
        return evaluate(self, X)

    def compress(self) -> AtomicFunction:
        """Merge atoms that share an identical weight vector."""
        if len(self) == 0:
            return self
        uniq, inverse = np.unique(self.omegas, axis=0, return_inverse=True)
        coeffs = np.zeros(uniq.shape[0])
        np.add.at(coeffs, inverse.ravel(), self.coeffs)
        return AtomicFunction(self.input_dim, coeffs, uniq)

    def to_dict(self) -> dict:
        return {
            "type": "atomic",
            "input_dim": self.input_dim,
            "atoms": [
                {"coeff": float(a), "omega": [float(v) for v in w]}
                for a, w in zip(self.coeffs, self.omegas)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> AtomicFunction:
        return cls.from_atoms(
            [(atom["coeff"], atom["omega"]) for atom in data["atoms"]], data["input_dim"]
        )


def evaluate(f: AtomicFunction, X):
    """Evaluate ``sum_j a_j ReLU(w_j . (x, 1))`` at one point or at each row."""
    arr = np.asarray(X, dtype=np.float64)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[1] != f.input_dim:
        raise ValueError(f"expected inputs of dimension {f.input_dim}, got {arr.shape[1]}")
    if len(f) == 0:
        out = np.zeros(arr.shape[0])
    else:
        out = np.maximum(_augment(arr) @ f.omegas.T, 0.0) @ f.coeffs
    return float(out[0]) if single else out


def total_mass(f: AtomicFunction) -> float:
    """Total-variation mass ``sum_j |a_j| |w_j|``."""
    return float(np.sum(np.abs(f.coeffs) * np.linalg.norm(f.omegas, axis=1)))


def maurey_error_bound(mass: float, radius: float, n: int) -> float:
    """``R sqrt(r^2 + 1) / sqrt(N)``."""
    if n < 1:
        raise ValueError("N must be >= 1")
    return mass * math.sqrt(radius**2 + 1) / math.sqrt(n)


class _Sparsifier:
    """Sampling law of a Maurey sparsification of one atomic function.

    Atoms with a zero coefficient carry no mass and are dropped up front, so
    the sign of every remaining atom is well defined.
    """

    def __init__(self, f: AtomicFunction):
        keep = f.coeffs != 0.0
        norms = np.linalg.norm(f.omegas[keep], axis=1)
        weights = np.abs(f.coeffs[keep]) * norms
        self.input_dim = f.input_dim
        self.mass = float(weights.sum())
        self.signs = np.sign(f.coeffs[keep])
        self.units = f.omegas[keep] / norms[:, None]
        self.probs = weights / self.mass if self.mass > 0 else weights

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.choice(self.probs.size, size=n, p=self.probs)

    def build(self, idx: np.ndarray) -> AtomicFunction:
        n = idx.size
        return AtomicFunction(self.input_dim, self.signs[idx] * (self.mass / n), self.units[idx])

    def unit_features(self, X: np.ndarray) -> np.ndarray:
        return np.maximum(_augment(X) @ self.units.T, 0.0)


def maurey_sparsify(f: AtomicFunction, n: int, rng=None) -> AtomicFunction:
    """Draw an ``n``-atom approximation of ``f``.

    Atoms are sampled i.i.d. with probability ``|a_j||w_j| / R`` where
    ``R = total_mass(f)``.  Every returned atom has a unit weight vector and a
    coefficient ``sign(a_j) R / n``.  A zero-mass input yields the empty
    (identically zero) function together with a :class:`ZeroMassWarning`.
    """
    if n < 1:
        raise ValueError("N must be >= 1")
    sp = _Sparsifier(f)
    if sp.mass == 0.0:
        warnings.warn("maurey_sparsify: zero-mass input, returning 0", ZeroMassWarning)
        return AtomicFunction.zero(f.input_dim)
    return sp.build(sp.draw(n, as_generator(rng)))


def l2_error(f, g, samples) -> float:
    """Monte Carlo ``L2(P)`` distance between two callables on P-samples."""
    diff = np.asarray(f(samples)) - np.asarray(g(samples))
    if diff.ndim == 2:
        return float(np.sqrt(np.mean(np.sum(diff**2, axis=1))))
    return float(np.sqrt(np.mean(diff**2)))


def best_of_k_sparsify(f: AtomicFunction, n: int, samples, trials: int = DEFAULT_TRIALS, rng=None):
    """Keep the best of ``trials`` independent sparsifications.

    Returns ``(g, err)`` where ``err`` is the empirical ``L2(P)`` error of
    ``g`` against ``f`` on ``samples``.  Candidates are scored through their
    atom counts, so scoring costs ``O(len(f))`` per sample whatever ``n`` is.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = as_generator(rng)
    X = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    sp = _Sparsifier(f)
    if sp.mass == 0.0:
        warnings.warn("best_of_k_sparsify: zero-mass input, returning 0", ZeroMassWarning)
        return AtomicFunction.zero(f.input_dim), l2_error(f, lambda Z: np.zeros(len(Z)), X)
    Phi = sp.unit_features(X) * sp.signs
    target = Phi @ (sp.mass * sp.probs)
    best_idx, best_err = None, np.inf
    for _ in range(trials):
        idx = sp.draw(n, rng)
        counts = np.bincount(idx, minlength=sp.probs.size)
        err = float(np.sqrt(np.mean((target - Phi @ (counts * (sp.mass / n))) ** 2)))
        if err < best_err:
            best_idx, best_err = idx, err
    return sp.build(best_idx), best_err


@dataclass(frozen=True, eq=False)
class VectorAtomic:
    """Vector-valued map whose components are atomic functions."""

    components: tuple[AtomicFunction, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("a vector map needs at least one component")
        if len({c.input_dim for c in comps}) != 1:
            raise ValueError("components must share the input dimension")
        object.__setattr__(self, "components", comps)

    @property
    def input_dim(self) -> int:
        return self.components[0].input_dim

    @property
    def output_dim(self) -> int:
        return len(self.components)

    def masses(self) -> np.ndarray:
        return np.array([total_mass(c) for c in self.components])

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.masses() ** 2)))

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.column_stack([evaluate(c, X) for c in self.components])


@dataclass(frozen=True, eq=False)
class LayerStack:
    """Composition ``f_L o ... o f_1`` with radius ``r``, margin ``s`` and
    declared layer norm bounds ``R_i`` (default: the actual layer norms)."""

    layers: tuple[VectorAtomic, ...]
    r: float
    s: float
    norms: tuple[float, ...] | None = None

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("a stack needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.input_dim != prev.output_dim:
                raise ValueError("layer input dimension must match previous output dimension")
        # a single layer is never composed, so it needs no margin
        if not (self.r > 0 and (self.s > 0 or (self.s == 0 and len(layers) == 1))):
            raise ValueError("r must be > 0 and s > 0 (s = 0 is allowed for one layer)")
        actual = tuple(layer.norm() for layer in layers)
        norms = actual if self.norms is None else tuple(float(R) for R in self.norms)
        if len(norms) != len(layers):
            raise ValueError("one norm bound per layer is required")
        for R, a in zip(norms, actual):
            if a > R * (1 + 1e-12):
                raise ValueError(f"layer norm {a} exceeds declared bound {R}")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "norms", norms)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].input_dim] + [layer.output_dim for layer in self.layers]

    def __call__(self, X) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(X, dtype=np.float64))
        for layer in self.layers:
            Z = layer(Z)
        return Z


def _ceil(x: float) -> int:
    # absorb floating-point noise in formulas that should land on an integer
    return max(1, math.ceil(x * (1 - 1e-12)))


def layer_node_counts(stack: LayerStack, epsilon: float) -> list[int]:
    """Atoms per output component for each layer.

    ``N_i = prod_{j>=i} R_j^2 ((r+s)^2 + 1) / eps^2``, rounded up from the top
    layer downwards (``N_L`` first, then ``N_i = ceil(R_i^2 N_{i+1})``).  The
    downward rounding keeps ``N_{i+1} / N_i <= 1 / R_i^2``, which is what the
    Frobenius bounds of the assembled network need.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    c = (stack.r + stack.s) ** 2 + 1
    counts = [_ceil(stack.norms[-1] ** 2 * c / epsilon**2)]
    for R in reversed(stack.norms[:-1]):
        counts.append(_ceil(R**2 * counts[-1]))
    return counts[::-1]


def stack_error_constant(stack: LayerStack) -> float:
    """Constant ``C`` with ``||f_{1:L} - g_{1:L}||_{L2(P)} <= C eps``.

    ``C = L + (r + sqrt(r^2+1) prod R_i) / s * sqrt(sum_{i<L} i^2 / prod_{j>i} R_j^2)``.
    """
    L, r, s, R = stack.depth, stack.r, stack.s, stack.norms
    tail = sum(i**2 / math.prod(R[j] ** 2 for j in range(i, L)) for i in range(1, L))
    if tail == 0:
        return float(L)
    return L + (r + math.sqrt(r**2 + 1) * math.prod(R)) / s * math.sqrt(tail)


@dataclass
class SparseStack:
    layers: list[VectorAtomic]
    node_counts: list[int]
    errors: list[list[float]] = field(default_factory=list)


def sparsify_stack(
    stack: LayerStack,
    epsilon: float,
    rng=None,
    samples=None,
    trials: int = DEFAULT_TRIALS,
    node_budget: int = DEFAULT_NODE_BUDGET,
) -> SparseStack:
    """Sparsify every component of every layer with ``N_i`` atoms.

    With ``samples`` (draws from P) each component keeps the best of
    ``trials`` candidates, scored on the samples pushed forward through the
    already-sparsified lower layers; without samples a single draw is used.
    """
    rng = as_generator(rng)
    counts = layer_node_counts(stack, epsilon)
    required = sum(layer.output_dim * n for layer, n in zip(stack.layers, counts))
    if required > node_budget:
        raise BudgetExceededError(required, node_budget)
    Z = None if samples is None else np.atleast_2d(np.asarray(samples, dtype=np.float64))
    layers, errors = [], []
    for layer, n in zip(stack.layers, counts):
        comps, errs = [], []
        for comp in layer.components:
            if Z is None:
                comps.append(maurey_sparsify(comp, n, rng))
            else:
                g, err = best_of_k_sparsify(comp, n, Z, trials, rng)
                comps.append(g)
                errs.append(err)
        sparse = VectorAtomic(tuple(comps))
        layers.append(sparse)
        errors.append(errs)
        if Z is not None:
            Z = VectorAtomic(tuple(c.compress() for c in comps))(Z)
    return SparseStack(layers, counts, errors)


@dataclass(frozen=True, eq=False)
class AssembledNet:
    """Explicit ReLU network ``x -> W_L relu(... relu(W_0 x + b_1) ...)``.

    ``weights[i]`` maps layer ``i`` to layer ``i+1`` (shape ``out x in``);
    ``biases[i]`` belongs to hidden layer ``i+1``.  The output layer has no
    bias.
    """

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    node_counts: tuple[int, ...]
    scale: float = 1.0

    def __call__(self, X, chunk: int = 1024) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.empty((X.shape[0], self.weights[-1].shape[0]))
        # hidden layers can hold tens of thousands of nodes; bound memory
        for start in range(0, X.shape[0], chunk):
            h = X[start : start + chunk]
            for W, b in zip(self.weights[:-1], self.biases):
                h = np.maximum(h @ W.T + b, 0.0)
            out[start : start + chunk] = h @ self.weights[-1].T
        return out

    def frobenius_norms(self) -> list[float]:
        return [float(np.linalg.norm(W)) for W in self.weights]

    def max_abs_bias(self) -> float:
        return max(float(np.max(np.abs(b))) for b in self.biases)

    def to_dict(self) -> dict:
        return {
            "type": "assembled_net",
            "scale": self.scale,
            "node_counts": list(self.node_counts),
            "weights": [_matrix_dict(W) for W in self.weights],
            "biases": [[float(v) for v in b] for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data: dict) -> AssembledNet:
        return cls(
            tuple(_matrix_from(w) for w in data["weights"]),
            tuple(np.array(b, dtype=np.float64) for b in data["biases"]),
            tuple(data["node_counts"]),
            data["scale"],
        )


def _matrix_dict(W: np.ndarray) -> dict:
    return {"shape": list(W.shape), "data": [float(v) for v in W.ravel()]}


def _matrix_from(data: dict) -> np.ndarray:
    return np.array(data["data"], dtype=np.float64).reshape(data["shape"])


def assemble(sparse: SparseStack, stack: LayerStack, epsilon: float) -> AssembledNet:
    """Write a sparsified stack as one ReLU network.

    Hidden layer ``i`` holds the ``m_{i+1} N_i`` atoms of layer ``i``.  The
    weight from hidden layer ``i`` to ``i+1`` is ``A_{i+1} B_i``: the
    coefficient rows ``B_i`` of layer ``i`` followed by the atom weights
    ``A_{i+1}`` of layer ``i+1``.  The input weights and every bias are
    multiplied by ``t`` and the output weights divided by it; ReLU's degree-1
    homogeneity leaves the function unchanged.  ``t`` is ``eps`` evaluated at
    the rounded ``N_1`` (never above ``eps``), capped at 1.
    """
    L = stack.depth
    c = (stack.r + stack.s) ** 2 + 1
    t = min(1.0, math.prod(stack.norms) * math.sqrt(c / sparse.node_counts[0]), epsilon)

    A, b, B = [], [], []
    for layer in sparse.layers:
        omegas = np.vstack([comp.omegas for comp in layer.components])
        A.append(omegas[:, :-1])
        b.append(omegas[:, -1])
        blocks = np.zeros((layer.output_dim, omegas.shape[0]))
        start = 0
        for j, comp in enumerate(layer.components):
            blocks[j, start : start + len(comp)] = comp.coeffs
            start += len(comp)
        B.append(blocks)

    weights = [t * A[0]]
    weights += [A[i + 1] @ B[i] for i in range(L - 1)]
    weights.append(B[-1] / t)
    biases = [t * bi for bi in b]
    nodes = tuple(layer.output_dim * n for layer, n in zip(sparse.layers, sparse.node_counts))
    return AssembledNet(tuple(weights), tuple(biases), nodes, t)


def frobenius_bounds(stack: LayerStack) -> list[float]:
    """Upper bounds for ``||W_{0->1}||_F, ..., ||W_{L->L+1}||_F``."""
    c = (stack.r + stack.s) ** 2 + 1
    m = stack.dims
    bounds = [math.prod(stack.norms) * math.sqrt(m[1] * c)]
    bounds += [math.sqrt(m[i + 1]) for i in range(1, stack.depth)]
    bounds.append(math.sqrt(c))
    return bounds


def approximate_stack(
    stack: LayerStack,
    epsilon: float,
    rng=None,
    samples=None,
    trials: int = DEFAULT_TRIALS,
    node_budget: int = DEFAULT_NODE_BUDGET,
) -> AssembledNet:
    """Bounded-weight ReLU network approximating ``stack`` to ``O(eps)``."""
    sparse = sparsify_stack(stack, epsilon, rng, samples, trials, node_budget)
    return assemble(sparse, stack, epsilon)


def to_json(obj, path=None) -> str:
    text = json.dumps(obj.to_dict())
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def from_json(text: str):
    data = json.loads(text)
    if data["type"] == "atomic":
        return AtomicFunction.from_dict(data)
    if data["type"] == "assembled_net":
        return AssembledNet.from_dict(data)
    raise ValueError(f"unknown object type {data['type']!r}")
