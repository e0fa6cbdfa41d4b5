"""Inducing-point velocity fields and fixed-step RK4 flows on [0, 1].

A velocity field is a kernel expansion over J spatial inducing points,

    v_l(t, x) = sum_j C[k, j, l] * U(X_j, x),      l = 1..d,

with one coefficient slice per integrator step (non-autonomous) or a single
slice shared by all steps (autonomous). Coefficients are held constant
within each step, so the discrete objective is exact and the reverse pass
is plain backpropagation through the RK4 stages: gradients are those of the
discretized map, not a continuous adjoint.

The first ``mask_dim`` output coordinates can be forced to zero, which makes
the flow block-triangular (those coordinates ride along unchanged); this is
what conditional sampling builds on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import GAUSSIAN, KernelSpec, kernel_matrix


@dataclass
class VelocityField:
    """Kernel velocity field: spatial points, spatial kernel, coefficient tensor.

    coeffs has shape (T_c, J, d) with T_c == 1 (autonomous) or
    T_c == time_steps (non-autonomous). The field must stay immutable while
    an integration is in progress.
    """

    inducing_x: np.ndarray
    kernel_u: KernelSpec
    coeffs: np.ndarray
    time_steps: int
    mask_dim: int = 0

    def __post_init__(self):
        self.inducing_x = np.asarray(self.inducing_x, dtype=np.float64)
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.inducing_x.ndim != 2:
            raise ValueError("inducing_x must be a J x d matrix")
        if self.time_steps < 1:
            raise ValueError("time_steps must be >= 1")
        J, d = self.inducing_x.shape
        if self.coeffs.ndim != 3 or self.coeffs.shape[1:] != (J, d):
            raise ValueError(f"coeffs must have shape (T, {J}, {d}), got {self.coeffs.shape}")
        if self.coeffs.shape[0] not in (1, self.time_steps):
            raise ValueError(
                f"coeffs must have 1 (autonomous) or time_steps={self.time_steps} slices, "
                f"got {self.coeffs.shape[0]}"
            )
        if not (0 <= self.mask_dim < d):
            raise ValueError(f"mask_dim must be in [0, {d}), got {self.mask_dim}")
        if not np.all(self.coeffs[:, :, : self.mask_dim] == 0.0):
            raise ValueError("masked coordinate slices of coeffs must be identically zero")
        if not np.isfinite(self.coeffs).all() or not np.isfinite(self.inducing_x).all():
            raise ValueError("non-finite values in coefficients or inducing points")

    @property
    def autonomous(self) -> bool:
        return self.coeffs.shape[0] == 1

    @property
    def dim(self) -> int:
        return self.inducing_x.shape[1]

    def zero_like(self) -> np.ndarray:
        return np.zeros_like(self.coeffs)

    def slice_index(self, k: int) -> int:
        if not 0 <= k < self.time_steps:
            raise ValueError(f"time-step index {k} out of range [0, {self.time_steps})")
        return 0 if self.autonomous else k


@dataclass
class Trajectory:
    """States recorded at step boundaries: times (T+1,), states (T+1, N, d)."""

    times: np.ndarray
    states: np.ndarray


def zero_field(inducing_x, kernel_u: KernelSpec, time_steps: int, autonomous: bool = False,
               mask_dim: int = 0) -> VelocityField:
    """A field with all-zero coefficients (the identity map)."""
    inducing_x = np.asarray(inducing_x, dtype=np.float64)
    J, d = inducing_x.shape
    slices = 1 if autonomous else time_steps
    return VelocityField(inducing_x, kernel_u, np.zeros((slices, J, d)), time_steps, mask_dim)


def eval_velocity(field: VelocityField, k: int, x) -> np.ndarray:
    """Velocity at step k for one point or a batch of points."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    C = field.coeffs[field.slice_index(k)]
    V = kernel_matrix(field.kernel_u, X, field.inducing_x) @ C
    if field.mask_dim:
        V[:, : field.mask_dim] = 0.0
    return V[0] if single else V


# ------------------------------------------------------------------
# Generic RK4 on a callable v(t, X); used by analytic test fields and
# the theory checks as well as by the trained fields below.
# ------------------------------------------------------------------

def rk4_step(f, t: float, h: float, X: np.ndarray) -> np.ndarray:
    k1 = f(t, X)
    k2 = f(t + 0.5 * h, X + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, X + 0.5 * h * k2)
    k4 = f(t + h, X + h * k3)
    return X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(f, X0, steps: int, t0: float = 0.0, t1: float = 1.0, record: bool = False):
    """Classical RK4 with ``steps`` uniform steps from t0 to t1.

    Returns the final state, or (final, Trajectory) when ``record``.
    """
    X = np.array(X0, dtype=np.float64)
    h = (t1 - t0) / steps
    if record:
        path = np.empty((steps + 1,) + X.shape)
        path[0] = X
    for k in range(steps):
        X = rk4_step(f, t0 + k * h, h, X)
        if not np.isfinite(X).all():
            raise RuntimeError(f"non-finite state encountered at step {k}")
        if record:
            path[k + 1] = X
    if record:
        times = t0 + np.arange(steps + 1) * h
        times[-1] = t1
        return X, Trajectory(times=times, states=path)
    return X


# ------------------------------------------------------------------
# Flows of inducing-point fields. The coefficient slice is frozen for
# all four stages of every step (and of every substep within it).
# ------------------------------------------------------------------

def _step_velocity(field: VelocityField, C: np.ndarray, sign: float):
    def f(_t, X):
        V = kernel_matrix(field.kernel_u, X, field.inducing_x) @ C
        return sign * V

    return f


def _slice_order(field: VelocityField, backward: bool):
    order = range(field.time_steps - 1, -1, -1) if backward else range(field.time_steps)
    return [field.slice_index(k) for k in order]


def _flow(field: VelocityField, X0, backward: bool, record: bool, substeps: int):
    X = np.array(X0, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != field.dim:
        raise ValueError(f"points must be N x {field.dim}")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    T = field.time_steps
    h = 1.0 / (T * substeps)
    sign = -1.0 if backward else 1.0
    if record:
        path = np.empty((T + 1,) + X.shape)
        path[0] = X
    for k, ci in enumerate(_slice_order(field, backward)):
        f = _step_velocity(field, field.coeffs[ci], sign)
        for _ in range(substeps):
            X = rk4_step(f, 0.0, h, X)
        if not np.isfinite(X).all():
            raise RuntimeError(f"non-finite state encountered at step {k}")
        if record:
            path[k + 1] = X
    if record:
        times = np.arange(T + 1) / T
        times[-1] = 1.0
        return X, Trajectory(times=times, states=path)
    return X


def flow_forward(field: VelocityField, X0, record: bool = False, substeps: int = 1):
    """Integrate each row from t=0 to t=1; returns the mapped points.

    With ``record`` the trajectory at step boundaries is returned as well.
    ``substeps`` refines the integration grid without changing the
    coefficient schedule (used for step-halving studies).
    """
    return _flow(field, X0, backward=False, record=record, substeps=substeps)


def flow_backward(field: VelocityField, X1, substeps: int = 1) -> np.ndarray:
    """Integrate the time-reversed field from the mapped points; approximates
    the inverse map."""
    return _flow(field, X1, backward=True, record=False, substeps=substeps)


# ------------------------------------------------------------------
# Reverse-mode sensitivities through the RK4 recursion.
# ------------------------------------------------------------------

def _velocity_raw(field: VelocityField, C: np.ndarray, X: np.ndarray) -> np.ndarray:
    return kernel_matrix(field.kernel_u, X, field.inducing_x) @ C


def _vjp_state(field: VelocityField, C: np.ndarray, Y: np.ndarray, W: np.ndarray,
               U: np.ndarray) -> np.ndarray:
    """(d v(Y) / d Y)^T W per row, for v(Y) = U(Y, X_ind) @ C."""
    gamma = field.kernel_u.lengthscale
    S = W @ C.T
    if field.kernel_u.family == GAUSSIAN:
        P = S * U / gamma**2
    else:
        diff = Y[:, None, :] - field.inducing_x[None, :, :]
        dist = np.sqrt(np.sum(diff**2, axis=2))
        with np.errstate(divide="ignore", invalid="ignore"):
            P = np.where(dist > 0, S * U / (gamma * dist), 0.0)
    return -(Y * P.sum(axis=1, keepdims=True) - P @ field.inducing_x)


def flow_cached(field: VelocityField, X0, backward: bool = False):
    """Run the flow once, caching per-step stage states for a later backprop.

    Returns (final points, cache); feed the cache to flow_grad.
    """
    X = np.array(X0, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != field.dim:
        raise ValueError(f"points must be N x {field.dim}")
    T = field.time_steps
    h = 1.0 / T
    sign = -1.0 if backward else 1.0
    order = _slice_order(field, backward)

    stages = []  # per step: (Y1, Y2, Y3, Y4)
    for k, ci in enumerate(order):
        C = field.coeffs[ci]
        Y1 = X
        K1 = sign * _velocity_raw(field, C, Y1)
        Y2 = X + 0.5 * h * K1
        K2 = sign * _velocity_raw(field, C, Y2)
        Y3 = X + 0.5 * h * K2
        K3 = sign * _velocity_raw(field, C, Y3)
        Y4 = X + h * K3
        K4 = sign * _velocity_raw(field, C, Y4)
        stages.append((Y1, Y2, Y3, Y4))
        X = X + (h / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4)
        if not np.isfinite(X).all():
            raise RuntimeError(f"non-finite state encountered at step {k}")
    return X, (stages, order, sign, h)


def flow_grad(field: VelocityField, cache, dL_dXout):
    """Backpropagate an adjoint through a cached flow.

    Returns (dL/d(coeffs), dL/d(input points)); exact gradients of the
    discretized map.
    """
    stages, order, sign, h = cache
    A = np.asarray(dL_dXout, dtype=np.float64).copy()
    coeff_grad = field.zero_like()
    for k in range(len(order) - 1, -1, -1):
        ci = order[k]
        C = field.coeffs[ci]
        Y1, Y2, Y3, Y4 = stages[k]
        U4 = kernel_matrix(field.kernel_u, Y4, field.inducing_x)
        gK4 = (h / 6.0) * A
        gY4 = sign * _vjp_state(field, C, Y4, gK4, U4)
        gK3 = (2.0 * h / 6.0) * A + h * gY4
        U3 = kernel_matrix(field.kernel_u, Y3, field.inducing_x)
        gY3 = sign * _vjp_state(field, C, Y3, gK3, U3)
        gK2 = (2.0 * h / 6.0) * A + 0.5 * h * gY3
        U2 = kernel_matrix(field.kernel_u, Y2, field.inducing_x)
        gY2 = sign * _vjp_state(field, C, Y2, gK2, U2)
        gK1 = (h / 6.0) * A + 0.5 * h * gY2
        U1 = kernel_matrix(field.kernel_u, Y1, field.inducing_x)
        gY1 = sign * _vjp_state(field, C, Y1, gK1, U1)
        coeff_grad[ci] += sign * (U1.T @ gK1 + U2.T @ gK2 + U3.T @ gK3 + U4.T @ gK4)
        A = A + gY1 + gY2 + gY3 + gY4

    if field.mask_dim:
        coeff_grad[:, :, : field.mask_dim] = 0.0
    return coeff_grad, A


def flow_forward_with_grad(field: VelocityField, X0, dL_dX1):
    """Forward flow plus exact reverse-mode gradients of the discrete map.

    Given dL/d(final points), returns (final points, dL/d(coeffs),
    dL/d(initial points)).
    """
    X1, cache = flow_cached(field, X0, backward=False)
    coeff_grad, dL_dX0 = flow_grad(field, cache, dL_dX1)
    return X1, coeff_grad, dL_dX0


def flow_backward_with_grad(field: VelocityField, X1, dL_dX0):
    """Same as flow_forward_with_grad but through the time-reversed flow."""
    X0, cache = flow_cached(field, X1, backward=True)
    coeff_grad, dL_dX1 = flow_grad(field, cache, dL_dX0)
    return X0, coeff_grad, dL_dX1
