"""Training objective: squared MMD plus a Sobolev-in-time RKHS penalty.

The penalty discretizes

    lambda1 * int_0^1 ||v(t,.)||_U^2 dt + lambda2 * int_0^1 ||v_dot(t,.)||_U^2 dt

by the midpoint rule on the integrator's own time grid, with coefficient
time derivatives taken by centered differences at interior nodes and
first-order one-sided differences at the two boundary nodes. For autonomous
fields the time integral degenerates: penalty = lambda1 * sum_l c_l^T U c_l
and the derivative term is identically zero.

The outer lambda_total multiplies the whole penalty, so only the products
(lambda_total * lambda1, lambda_total * lambda2) are effective knobs; all
three are exposed because they are configured independently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flow import VelocityField, flow_cached, flow_grad
from .kernels import KernelSpec, kernel_matrix
from .mmd import mmd2, mmd2_grad_A


@dataclass(frozen=True)
class PenaltyConfig:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda_total: float = 1e-4

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda_total"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be a nonnegative finite real, got {v}")


def _diff_matrix(T: int, dt: float) -> np.ndarray:
    """Finite-difference stencil mapping coefficient slices to time derivatives."""
    D = np.zeros((T, T))
    D[0, 0], D[0, 1] = -1.0 / dt, 1.0 / dt
    D[T - 1, T - 2], D[T - 1, T - 1] = -1.0 / dt, 1.0 / dt
    for k in range(1, T - 1):
        D[k, k - 1] = -0.5 / dt
        D[k, k + 1] = 0.5 / dt
    return D


def gram_matrix(field: VelocityField) -> np.ndarray:
    """U(X, X) over the field's inducing points; compute once per run and reuse."""
    return kernel_matrix(field.kernel_u, field.inducing_x, field.inducing_x)


def rkhs_penalty(field: VelocityField, cfg: PenaltyConfig, gram: np.ndarray | None = None) -> float:
    if gram is None:
        gram = gram_matrix(field)
    C = field.coeffs
    if field.autonomous:
        return float(cfg.lambda1 * np.einsum("jl,jk,kl->", C[0], gram, C[0]))
    T = field.time_steps
    dt = 1.0 / T
    UC = np.einsum("jk,tkl->tjl", gram, C)
    total = cfg.lambda1 * np.einsum("tjl,tjl->", C, UC)
    if cfg.lambda2 > 0:
        Cdot = np.tensordot(_diff_matrix(T, dt), C, axes=1)
        UCdot = np.einsum("jk,tkl->tjl", gram, Cdot)
        total += cfg.lambda2 * np.einsum("tjl,tjl->", Cdot, UCdot)
    return float(dt * total)


def rkhs_penalty_grad(field: VelocityField, cfg: PenaltyConfig,
                      gram: np.ndarray | None = None) -> np.ndarray:
    """Exact gradient of rkhs_penalty with respect to the coefficient tensor."""
    if gram is None:
        gram = gram_matrix(field)
    C = field.coeffs
    if field.autonomous:
        grad = 2.0 * cfg.lambda1 * np.einsum("jk,tkl->tjl", gram, C)
    else:
        T = field.time_steps
        dt = 1.0 / T
        grad = 2.0 * dt * cfg.lambda1 * np.einsum("jk,tkl->tjl", gram, C)
        if cfg.lambda2 > 0:
            D = _diff_matrix(T, dt)
            Cdot = np.tensordot(D, C, axes=1)
            UCdot = np.einsum("jk,tkl->tjl", gram, Cdot)
            grad += 2.0 * dt * cfg.lambda2 * np.tensordot(D.T, UCdot, axes=1)
    if field.mask_dim:
        grad[:, :, : field.mask_dim] = 0.0
    return grad


def objective(field: VelocityField, cfg: PenaltyConfig, batch_ref, batch_target,
              mmd_kernel: KernelSpec, bidirectional: bool = False,
              gram: np.ndarray | None = None):
    """Loss and coefficient gradient for one minibatch.

    loss = mmd2(forward(batch_ref), batch_target) + lambda_total * penalty,
    plus mmd2(backward(batch_target), batch_ref) when bidirectional. The
    gradient chains the MMD gradient through the cached RK4 stages and adds
    the penalty gradient.
    """
    if gram is None:
        gram = gram_matrix(field)
    X1, cache = flow_cached(field, batch_ref, backward=False)
    loss = mmd2(mmd_kernel, X1, batch_target)
    grad, _ = flow_grad(field, cache, mmd2_grad_A(mmd_kernel, X1, batch_target))
    if bidirectional:
        Y0, cache_b = flow_cached(field, batch_target, backward=True)
        loss += mmd2(mmd_kernel, Y0, batch_ref)
        grad_b, _ = flow_grad(field, cache_b, mmd2_grad_A(mmd_kernel, Y0, batch_ref))
        grad += grad_b
    if cfg.lambda_total > 0:
        loss += cfg.lambda_total * rkhs_penalty(field, cfg, gram)
        grad += cfg.lambda_total * rkhs_penalty_grad(field, cfg, gram)
    if field.mask_dim:
        grad[:, :, : field.mask_dim] = 0.0
    return loss, grad
