"""Scalar Mercer kernels, their spatial gradients, and lengthscale selection.

Two radial families are supported, both with unit diagonal:

    gaussian(x, y) = exp(-|x - y|^2 / (2 gamma^2))
    laplace(x, y)  = exp(-|x - y| / gamma)

All evaluations are double precision; near convergence the quantities built
on top of these kernels fall below single-precision resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

GAUSSIAN = "gaussian"
LAPLACE = "laplace"
_FAMILIES = (GAUSSIAN, LAPLACE)


@dataclass(frozen=True)
class KernelSpec:
    """A kernel family plus a positive lengthscale, in input-coordinate units."""

    family: str
    lengthscale: float

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {_FAMILIES}")
        if not np.isfinite(self.lengthscale) or self.lengthscale <= 0:
            raise ValueError(f"lengthscale must be a positive finite real, got {self.lengthscale}")


def _as_2d(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ValueError(f"expected a point or an N x d matrix, got shape {X.shape}")
    return X


def _check_dims(X: np.ndarray, Y: np.ndarray):
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")


def eval_kernel(spec: KernelSpec, x, y) -> float:
    """Evaluate the kernel on a single pair of points."""
    x, y = _as_2d(x), _as_2d(y)
    _check_dims(x, y)
    return float(kernel_matrix(spec, x, y)[0, 0])


def kernel_matrix(spec: KernelSpec, X, Y) -> np.ndarray:
    """Kernel matrix with entries k(X_i, Y_j); symmetric PSD when X is Y."""
    X, Y = _as_2d(X), _as_2d(Y)
    _check_dims(X, Y)
    if spec.family == GAUSSIAN:
        d2 = cdist(X, Y, "sqeuclidean")
        return np.exp(d2 / (-2.0 * spec.lengthscale**2))
    d = cdist(X, Y, "euclidean")
    return np.exp(-d / spec.lengthscale)


def kernel_grad_x(spec: KernelSpec, x, y) -> np.ndarray:
    """Gradient of eval_kernel(spec, x, y) with respect to x.

    For the laplace family at x == y the kernel is not differentiable; the
    zero vector (minimal-norm subgradient) is returned so training steps
    stay finite.
    """
    x, y = _as_2d(x), _as_2d(y)
    _check_dims(x, y)
    g = grad_x_matrix(spec, x, y)[0, 0]
    return g


def grad_x_matrix(spec: KernelSpec, X, Y) -> np.ndarray:
    """All pairwise gradients, shape (N, M, d): entry [i, j] = d k(X_i, Y_j) / d X_i."""
    X, Y = _as_2d(X), _as_2d(Y)
    _check_dims(X, Y)
    diff = X[:, None, :] - Y[None, :, :]
    if spec.family == GAUSSIAN:
        k = np.exp(np.sum(diff**2, axis=2) / (-2.0 * spec.lengthscale**2))
        return -diff * (k / spec.lengthscale**2)[:, :, None]
    dist = np.sqrt(np.sum(diff**2, axis=2))
    k = np.exp(-dist / spec.lengthscale)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(dist > 0, k / (spec.lengthscale * dist), 0.0)
    return -diff * scale[:, :, None]


def median_heuristic(X) -> float:
    """Median of the pairwise Euclidean distances over all unordered pairs.

    Duplicate rows contribute zero distances to the pool; an all-identical
    sample (median 0) is rejected because it yields no usable lengthscale.
    """
    X = _as_2d(X)
    n = X.shape[0]
    if n < 2:
        raise ValueError("median heuristic needs at least 2 rows")
    iu = np.triu_indices(n, k=1)
    med = float(np.median(cdist(X, X, "euclidean")[iu]))
    if med <= 0.0:
        raise ValueError("median pairwise distance is 0 (all rows identical)")
    return med
