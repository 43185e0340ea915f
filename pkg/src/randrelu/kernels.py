"""The order-1 arc-cosine kernel induced by uniform ReLU features, plus
RKHS-norm bounds and an empirical admissibility score."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from randrelu.features import FeatureBank, relu_features

CLAMP_SLACK = 1e-9
PSD_TOL = 1e-8
JITTER = 1e-10


def arccos_kernel(s, d: int):
    """Arc-cosine kernel ``k(s)`` on S^d as a function of ``s = x . x'``.

    ``k(s) = [sqrt(1 - s^2) + (pi - arccos s) s] / (2 (d+1) pi)``.  Accepts
    scalars or arrays; inputs within ``1e-9`` of ``[-1, 1]`` are clamped.
    """
    s_arr = np.asarray(s, dtype=np.float64)
    if np.any(np.abs(s_arr) > 1 + CLAMP_SLACK) or np.any(np.isnan(s_arr)):
        raise ValueError("arccos_kernel is defined for |s| <= 1")
    if d < 1:
        raise ValueError("d must be >= 1")
    s_arr = np.clip(s_arr, -1.0, 1.0)
    k = (np.sqrt(1.0 - s_arr**2) + (np.pi - np.arccos(s_arr)) * s_arr) / (2 * (d + 1) * np.pi)
    return float(k) if np.ndim(k) == 0 else k


def lift_to_sphere(X) -> np.ndarray:
    """Map ``x`` in R^d to ``(x, 1) / sqrt(|x|^2 + 1)`` on S^d."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    aug = np.hstack([X, np.ones((X.shape[0], 1))])
    return aug / np.linalg.norm(aug, axis=1, keepdims=True)


def arccos_gram(X, Y=None, d: int | None = None) -> np.ndarray:
    """Gram matrix of the arc-cosine kernel between rows of ``X`` and ``Y``.

    Rows are taken to lie on S^d, so ``d`` defaults to ``X.shape[1] - 1``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = X if Y is None else np.atleast_2d(np.asarray(Y, dtype=np.float64))
    d = X.shape[1] - 1 if d is None else d
    S = np.clip(X @ Y.T, -1.0, 1.0)
    return arccos_kernel(S, d)


@dataclass(frozen=True)
class TaylorCoeffs:
    d: int
    coeffs: np.ndarray

    def __call__(self, s):
        return np.polynomial.polynomial.polyval(s, self.coeffs)


def taylor_coeffs(d: int, J: int) -> TaylorCoeffs:
    """Power-series coefficients ``a_0..a_J`` of :func:`arccos_kernel`.

    ``a_0 = 1/(2(d+1)pi)``, ``a_1 = 1/(4(d+1))``, ``a_2 = 1/(4(d+1)pi)`` and
    ``a_2k = (2k-3)!!/(2k)!! / (2k-1) / (2(d+1)pi)`` for ``k >= 2``; odd
    coefficients past ``a_1`` vanish.  The double-factorial ratio is updated
    multiplicatively so it never overflows.
    """
    if J < 0:
        raise ValueError("J must be >= 0")
    base = 1.0 / (2 * (d + 1) * math.pi)
    a = np.zeros(J + 1)
    a[0] = base
    if J >= 1:
        a[1] = 1.0 / (4 * (d + 1))
    if J >= 2:
        a[2] = base / 2
    ratio = 1.0 / 2.0  # (2k-3)!!/(2k)!! at k = 1
    for k in range(2, J // 2 + 1):
        ratio *= (2 * k - 3) / (2 * k)
        a[2 * k] = base * ratio / (2 * k - 1)
    return TaylorCoeffs(d, a)


def mc_kernel_estimate(x, x2, bank: FeatureBank) -> float:
    """Monte Carlo kernel value ``(1/N) sum_j phi_j(x) phi_j(x2)``.

    ``x`` of length ``d`` is augmented to ``(x, 1/gamma)`` as usual.  A point
    of length ``d + 1`` is taken to be already augmented (e.g. a point on S^d)
    and is used directly, which is how the estimate is compared against the
    closed form.
    """
    if bank.spec.kind != "relu":
        raise ValueError("mc_kernel_estimate needs a relu bank")
    p, q = _augment(x, bank), _augment(x2, bank)
    W = bank.omegas
    return float(np.mean(np.maximum(W @ p, 0.0) * np.maximum(W @ q, 0.0)))


def mc_kernel_matrix(X, Y, bank: FeatureBank) -> np.ndarray:
    """Monte Carlo Gram matrix between rows of ``X`` and ``Y`` (same augmentation
    rule as :func:`mc_kernel_estimate`)."""
    FX = _augmented_features(X, bank)
    FY = FX if Y is None else _augmented_features(Y, bank)
    return FX @ FY.T / bank.count


def _augment(x, bank: FeatureBank) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    d = bank.spec.input_dim
    if x.size == d:
        return np.append(x, 1.0 / bank.spec.bandwidth)
    if x.size == d + 1:
        return x
    raise ValueError(f"point of length {x.size} does not match bank dimension {d}")


def _augmented_features(X, bank: FeatureBank) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] == bank.spec.input_dim:
        return relu_features(X, bank)
    if X.shape[1] == bank.spec.input_dim + 1:
        return np.maximum(X @ bank.omegas.T, 0.0)
    raise ValueError(f"data of width {X.shape[1]} does not match bank dimension")


@dataclass(frozen=True)
class AdmissibilityReport:
    lam: float
    dmax: float
    sample_count: int
    probe_count: int
    jitter: float = 0.0


def empirical_dmax(kernel_matrix, feature_rows, lam: float) -> AdmissibilityReport:
    """Plug-in estimate of ``sup_w <phi_w, (Sigma + lam I)^-1 phi_w>``.

    Parameters
    ----------
    kernel_matrix : (m, m) array
        Kernel Gram matrix on the data sample.
    feature_rows : (P, m) array
        Each row is one probe feature evaluated at the ``m`` data points.
    lam : float
        Regularisation ``lambda > 0``.

    Returns
    -------
    AdmissibilityReport
        ``dmax = max_w (1/m) v_w^T (K/m + lam I)^-1 v_w``.  ``jitter`` is the
        diagonal shift that had to be added when the factorisation failed.
    """
    if not lam > 0:
        raise ValueError("lambda must be > 0")
    K = np.atleast_2d(np.asarray(kernel_matrix, dtype=np.float64))
    V = np.atleast_2d(np.asarray(feature_rows, dtype=np.float64))
    m = K.shape[0]
    if K.shape != (m, m) or V.shape[1] != m:
        raise ValueError("kernel matrix must be m x m and feature rows P x m")
    scale = max(1.0, float(np.max(np.abs(K))))
    if np.max(np.abs(K - K.T)) > PSD_TOL * scale:
        raise np.linalg.LinAlgError("kernel matrix is not symmetric")
    K = (K + K.T) / 2
    if np.linalg.eigvalsh(K)[0] < -PSD_TOL * scale:
        raise np.linalg.LinAlgError("kernel matrix is not positive semidefinite")

    A = K / m + lam * np.eye(m)
    jitter = 0.0
    while True:
        try:
            factor = scipy.linalg.cho_factor(A + jitter * np.eye(m), lower=True)
            break
        except np.linalg.LinAlgError:
            jitter = JITTER if jitter == 0.0 else jitter * 10
            if jitter > 1e-2 * scale:
                raise
    if jitter:
        warnings.warn(f"empirical_dmax: added jitter {jitter:g} to factorise", RuntimeWarning)
    sol = scipy.linalg.cho_solve(factor, V.T)
    quad = np.einsum("ij,ji->i", V, sol) / m
    return AdmissibilityReport(lam, float(np.max(quad)), m, V.shape[0], jitter)


def norm_bound_projection(alpha: float, p: int, d: int) -> float:
    """Upper bound ``sqrt(2(d+1)pi) alpha p`` on the RKHS norm of
    ``alpha (beta . x)^p`` on S^d, valid for ``p = 1`` or even ``p``."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if p < 1 or (p > 1 and p % 2):
        raise ValueError(f"order p={p} unsupported: use p = 1 or an even p")
    return math.sqrt(2 * (d + 1) * math.pi) * alpha * p


def norm_bound_radius(d: int) -> float:
    """Bound ``2 sqrt(2 pi) (d+1)^(3/2)`` on the norm of ``sqrt(1 + |x|^2)``."""
    if d < 1:
        raise ValueError("d must be >= 1")
    return 2 * math.sqrt(2 * math.pi) * (d + 1) ** 1.5


def norm_bound_dotprod(d: int) -> float:
    """Bound ``12 d sqrt((4d + 2) pi)`` on the norm of ``x_{1:d} . x_{d+1:2d}``
    over S^(d-1) x S^(d-1)."""
    if d < 1:
        raise ValueError("d must be >= 1")
    return 12 * d * math.sqrt((4 * d + 2) * math.pi)


def write_csv_matrix(path, matrix, header=None) -> None:
    """Dump a vector or matrix to CSV (used for Taylor coefficients and Gram
    matrices)."""
    arr = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header is not None:
            w.writerow(header)
        for row in arr:
            w.writerow([repr(float(v)) for v in row])


def write_taylor_csv(path, coeffs: TaylorCoeffs) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "a_j"])
        for j, a in enumerate(coeffs.coeffs):
            w.writerow([j, repr(float(a))])
