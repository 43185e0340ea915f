"""Acceptance criteria, one test each.  ``pytest`` prints a PASS/FAIL line per
criterion in the terminal summary."""

import math
import os
import time

import numpy as np
import pytest

from helpers import central_difference, dense_gradient_error, rel_error, unit_ball
from randrelu.atoms import (
    AtomicFunction,
    LayerStack,
    VectorAtomic,
    approximate_stack,
    best_of_k_sparsify,
    frobenius_bounds,
    maurey_error_bound,
    stack_error_constant,
    total_mass,
)
from randrelu.data import gen_grid2d, load_libsvm
from randrelu.experiments import ExperimentConfig, run_depth_sweep, run_grid, summarize
from randrelu.features import FeatureBank, FeatureSpec, zero_fraction
from randrelu.kernels import arccos_kernel, mc_kernel_estimate, taylor_coeffs
from randrelu.learn import DenseNet, TrainConfig, batch_loss_grad, train_rrf


def report(name, **values):
    parts = ", ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in values.items())
    print(f"[{name}] {parts}")


@pytest.mark.criterion(1, "kernel closed form vs Monte Carlo (d=4, N=1e5)")
def test_kernel_closed_form_vs_monte_carlo():
    start = time.perf_counter()
    d = 4
    rng = np.random.default_rng(2024)
    P = rng.standard_normal((200, d + 1))
    Q = rng.standard_normal((200, d + 1))
    P /= np.linalg.norm(P, axis=1, keepdims=True)
    Q /= np.linalg.norm(Q, axis=1, keepdims=True)
    bank = FeatureBank.sample(FeatureSpec("relu", d, 100_000, seed=1))
    est = np.array([mc_kernel_estimate(p, q, bank) for p, q in zip(P, Q)])
    exact = arccos_kernel(np.clip(np.sum(P * Q, axis=1), -1, 1), d)
    err = np.abs(est - exact)
    elapsed = time.perf_counter() - start
    report("c1", max_err=float(err.max()), rms=float(np.sqrt(np.mean(err**2))), seconds=elapsed)
    assert err.max() <= 0.01
    assert np.sqrt(np.mean(err**2)) <= 0.003
    assert elapsed < 30


@pytest.mark.criterion(2, "Taylor partial sum J=200 within 1e-6 on |s|<=0.9")
def test_taylor_agreement():
    s = np.round(np.arange(-0.9, 0.9 + 1e-9, 0.05), 10)
    assert s.size == 37
    worst = 0.0
    for d in (1, 3, 10):
        gap = np.abs(taylor_coeffs(d, 200)(s) - arccos_kernel(s, d))
        worst = max(worst, float(gap.max()))
    report("c2", max_gap=worst)
    assert worst <= 1e-6


@pytest.mark.criterion(3, "Maurey bound, best of 20, 50 sources, N in {100,400,1600}")
def test_maurey_bound():
    rng = np.random.default_rng(3)
    d, r = 3, 1.0
    counts = (100, 400, 1600)
    within, total = 0, 0
    errors = []
    for _ in range(50):
        n_atoms = int(rng.integers(1, 101))
        f = AtomicFunction(d, rng.standard_normal(n_atoms), rng.standard_normal((n_atoms, d + 1)))
        mass = rng.uniform(1.0, 20.0)
        f = AtomicFunction(d, f.coeffs * mass / total_mass(f), f.omegas)
        P = unit_ball(rng, 10_000, d, r)
        row = []
        for n in counts:
            _, err = best_of_k_sparsify(f, n, P, trials=20, rng=rng)
            within += err <= 1.2 * maurey_error_bound(total_mass(f), r, n)
            total += 1
            row.append(err)
        errors.append(row)
    errors = np.array(errors)
    # error ratio per 4x in N, geometric mean over sources
    shrink = np.exp(np.mean(np.log(errors[:, 1:] / errors[:, :-1]), axis=0))
    report("c3", within_bound=within / total, shrink_100_400=float(shrink[0]), shrink_400_1600=float(shrink[1]))
    assert within / total >= 0.95
    assert np.all((shrink >= 0.4) & (shrink <= 0.6))


def _two_layer_stack(rng, outer_norm):
    """R^4 -> R^3 -> R^1 with f_1 mapping the ball of radius r + s = 2 into
    the unit ball and layer norms below the declared integer bounds."""
    f1 = VectorAtomic(
        tuple(AtomicFunction(4, rng.standard_normal(10), rng.standard_normal((10, 5))) for _ in range(3))
    )
    sup = np.max(np.linalg.norm(f1(unit_ball(rng, 20_000, 4, 2.0)), axis=1))
    f1 = VectorAtomic(tuple(AtomicFunction(4, c.coeffs * 0.9 / sup, c.omegas) for c in f1.components))
    g = AtomicFunction(3, rng.standard_normal(10), rng.standard_normal((10, 4)))
    f2 = VectorAtomic((AtomicFunction(3, g.coeffs * outer_norm / total_mass(g), g.omegas),))
    R1 = math.ceil(f1.norm())
    assert R1 <= 4
    return LayerStack((f1, f2), r=1.0, s=1.0, norms=(R1, outer_norm))


@pytest.mark.criterion(4, "multi-layer construction: error <= C eps, Frobenius and bias bounds")
def test_multilayer_construction():
    rng = np.random.default_rng(4)
    for outer_norm in (2.0, 3.0, 4.0):
        stack = _two_layer_stack(rng, outer_norm)
        P = unit_ball(rng, 10_000, 4, 1.0)
        C = stack_error_constant(stack)
        for eps in (0.5, 0.25):
            net = approximate_stack(stack, eps, rng, samples=P)
            err = float(np.sqrt(np.mean(np.sum((net(P) - stack(P)) ** 2, axis=1))))
            norms, bounds = net.frobenius_norms(), frobenius_bounds(stack)
            report("c4", R=stack.norms, eps=eps, err=err, bound=C * eps, nodes=net.node_counts)
            assert err <= C * eps
            assert all(n <= b for n, b in zip(norms, bounds)), (norms, bounds)
            assert net.max_abs_bias() <= 1.0


@pytest.mark.criterion(5, "analytic vs finite-difference gradients, rel err <= 1e-5")
def test_gradient_checks():
    rng = np.random.default_rng(5)
    worst = 0.0
    labels = {
        "hinge": lambda k: rng.choice([-1.0, 1.0], 8),
        "logistic_multiclass": lambda k: rng.integers(0, k, 8),
        "squared": lambda k: rng.normal(size=8),
    }
    for kind, draw in labels.items():
        K = 3 if kind == "logistic_multiclass" else 1
        for _ in range(20):
            P = rng.normal(0, 2, (8, K))
            y = draw(K)
            if kind == "hinge":
                P[np.abs(y * P[:, 0] - 1) < 1e-3, 0] += 0.01
            _, G = batch_loss_grad(kind, P, y)
            worst = max(worst, rel_error(G, central_difference(lambda Q: batch_loss_grad(kind, Q, y)[0], P)))
        for widths in ([6], [5, 4]):
            for _ in range(20):
                net = DenseNet.init(3, widths, K, rng)
                for b in net.biases:
                    b += rng.normal(0, 0.1, b.shape)
                X = rng.normal(size=(8, 3))
                y = draw(K)
                worst = max(worst, dense_gradient_error(net, X, y, kind))
    report("c5", worst_rel_err=worst)
    assert worst <= 1e-5


@pytest.mark.criterion(6, "projection invariant over 10 epochs on sine data")
def test_projection_invariant():
    data = gen_grid2d("sine", 2000, np.random.default_rng(6))
    R = 1.0
    cfg = TrainConfig(learning_rate=0.5, epochs=10, radius=R)
    model = train_rrf(data, FeatureSpec("relu", 2, 200, seed=6), "hinge", cfg)
    norms = model.trace.norms
    report("c6", max_norm=max(norms), epochs=len(norms))
    assert len(norms) == 10
    assert max(norms) <= R + 1e-9
    assert max(norms) > 0.99 * R  # the constraint actually binds


@pytest.mark.criterion(7, "monotone capacity of rrf on sine, N = 20, 80, 320")
def test_monotone_capacity():
    cfg = ExperimentConfig(
        dataset="sine", m=2000, methods=("rrf",), loss="hinge", counts=(20, 80, 320),
        bandwidths=(1.0,), rates=(0.01, 0.1, 1.0), seeds=(0, 1, 2, 3, 4), folds=5, epochs=20,
    )  # fmt: skip
    table = summarize(run_grid(cfg))
    stats = [table[("rrf", n)] for n in cfg.counts]
    report("c7", **{f"acc_N{n}": s[0] for n, s in zip(cfg.counts, stats)}, **{f"std_N{n}": s[1] for n, s in zip(cfg.counts, stats)})
    for (m_lo, s_lo, _), (m_hi, s_hi, _) in zip(stats, stats[1:]):
        assert m_hi >= m_lo - max(s_lo, s_hi)


DEPTH_BUDGETS = tuple(20 * 2**k for k in range(7))


@pytest.fixture(scope="module")
def depth_table():
    cfg = ExperimentConfig(
        dataset="daniely", m=20_000, d=2, methods=("rrf", "dense2", "dense3"), loss="squared",
        sweep="depth", bandwidths=(1.0,), rates=(1e-3,), budgets=DEPTH_BUDGETS,
        method_rates=(("dense2", 1e-3), ("dense3", 3e-3), ("rrf", 1e-3)),
        seeds=tuple(range(10)), epochs=40, optimizer="adam", radius=1e3, test_fraction=0.2,
    )  # fmt: skip
    start = time.perf_counter()
    records = run_depth_sweep(cfg)
    elapsed = time.perf_counter() - start
    assert all(r.ok for r in records)
    return summarize(records), elapsed


@pytest.mark.slow
@pytest.mark.criterion(8, "depth separation on Daniely data: dense3 < dense2, dense3 < 0.6 rrf")
def test_depth_separation(depth_table):
    table, elapsed = depth_table
    for n in DEPTH_BUDGETS:
        report("c8", N=n, rrf=table[("rrf", n)][0], dense2=table[("dense2", n)][0], dense3=table[("dense3", n)][0])
    top = DEPTH_BUDGETS[-1]
    rrf, dense2, dense3 = (table[(m, top)][0] for m in ("rrf", "dense2", "dense3"))
    report("c8", seconds=elapsed)
    assert dense3 < dense2
    assert dense3 < 0.6 * rrf
    assert elapsed < 30 * 60


@pytest.mark.slow
def test_rrf_cannot_fit_oscillating_target(depth_table):
    # regression guard calibrated on a pilot run: the shallow random-feature
    # model stays close to the label variance (about 0.46) at every budget
    table, _ = depth_table
    for n in DEPTH_BUDGETS:
        assert table[("rrf", n)][0] >= 0.5 * 0.46


ADULT = os.environ.get("RANDRELU_ADULT")


@pytest.mark.criterion(9, "adult: rrf >= 0.83, rff >= 0.82 (optional, needs data file)")
@pytest.mark.skipif(not ADULT, reason="set RANDRELU_ADULT to a LIBSVM adult file to run")
def test_adult():
    data = load_libsvm(ADULT)
    assert data.task == "binary"
    best = {}
    for method in ("rrf", "rff"):
        cfg = ExperimentConfig(
            dataset="libsvm", path=ADULT, methods=(method,), loss="hinge", counts=(2000,),
            radius=1e4, folds=5, epochs=20, bandwidths=(1.0, 4.0, 16.0), rates=(1e-3, 1e-2, 1e-1),
        )  # fmt: skip
        best[method] = max(r.mean for r in run_grid(cfg) if r.ok)
    report("c9", **best)
    assert best["rrf"] >= 0.83
    assert best["rff"] >= 0.82


@pytest.mark.criterion(10, "half of rrf feature values are zero, none for rff")
def test_sparsity():
    rng = np.random.default_rng(10)
    for kind in ("sine", "strips", "square", "checkboard"):
        X = gen_grid2d(kind, 2000, rng).X
        relu = zero_fraction(FeatureBank.sample(FeatureSpec("relu", 2, 2000, seed=1)).transform(X))
        four = zero_fraction(FeatureBank.sample(FeatureSpec("fourier", 2, 2000, seed=1)).transform(X))
        report("c10", dataset=kind, relu_zero=relu, fourier_zero=four)
        assert 0.4 <= relu <= 0.6
        assert four == 0.0
