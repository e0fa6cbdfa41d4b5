"""Empirical verification of the method's theory, plus the building blocks of
the predator-prey inference study.

The three theory checks are numerical probes of inequalities the training
procedure relies on:

- ``mmd_stability_check``: MMD between two pushforwards of the same point set
  is bounded by the feature-map Lipschitz constant times the sup distance of
  the maps. For the Gaussian kernel with lengthscale gamma,
  ||k(x,.) - k(x',.)||_H^2 = 2 (1 - exp(-|x-x'|^2 / 2 gamma^2)) <= (|x-x'|/gamma)^2,
  so that constant is 1/gamma. The bound fails to hold uniformly for the
  Laplace kernel (feature distance scales like sqrt(|x-x'|) near zero), which
  is why that family is rejected here.
- ``ode_perturbation_check``: flows started at nearby points under nearby
  fields stay within exp(L)|x-x'| + ((exp(L)-1)/L) ||v-v'||_inf of each
  other. Probed with affine fields, whose Lipschitz constants and sup
  differences are exact.
- ``convergence_study``: kernel interpolation error on equispaced grids
  decays superalgebraically in the fill distance for smooth kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
import scipy.linalg

from .flow import integrate
from .kernels import GAUSSIAN, KernelSpec, kernel_matrix
from .mmd import mmd2

try:  # numba only accelerates the scalar predator-prey solves (MCMC hot loop)
    from numba import njit as _njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False

    def _njit(*args, **kwargs):
        def deco(f):
            return f

        return deco


# ------------------------------------------------------------------
# Fill distance and kernel interpolation.
# ------------------------------------------------------------------

@dataclass(frozen=True)
class FillDistanceReport:
    h: float
    witness: np.ndarray


def fill_distance(S, candidates) -> FillDistanceReport:
    """max over candidates of the distance to the nearest point of S.

    The candidates must densely cover the domain of interest; the returned
    witness is the candidate attaining the max.
    """
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    candidates = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    if S.shape[0] == 0 or candidates.shape[0] == 0:
        raise ValueError("empty inputs")
    if S.shape[1] != candidates.shape[1]:
        raise ValueError("dimension mismatch")
    best_h = -1.0
    best_w = candidates[0]
    for i in range(0, candidates.shape[0], 8192):
        block = candidates[i : i + 8192]
        dmin = cdist(block, S, "euclidean").min(axis=1)
        j = int(dmin.argmax())
        if dmin[j] > best_h:
            best_h = float(dmin[j])
            best_w = block[j]
    return FillDistanceReport(h=best_h, witness=best_w)


def kernel_interpolate(spec: KernelSpec, X, values, ridge: float = 0.0) -> np.ndarray:
    """Solve (K(X,X) + ridge I) c = values; the interpolant is c^T K(X, .)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] != X.shape[0]:
        raise ValueError("values length must match the number of nodes")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    K = kernel_matrix(spec, X, X)
    if ridge:
        K = K + ridge * np.eye(X.shape[0])
    try:
        return scipy.linalg.solve(K, values, assume_a="pos")
    except scipy.linalg.LinAlgError as exc:
        raise ValueError(
            f"singular interpolation system ({exc}); duplicate or near-duplicate nodes — "
            "supply a positive ridge"
        ) from exc


def interpolant_eval(spec: KernelSpec, X, coeffs, x) -> np.ndarray:
    """Evaluate the kernel interpolant c^T K(X, .) at the points x."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return kernel_matrix(spec, x, np.atleast_2d(X)) @ np.asarray(coeffs, dtype=np.float64)


def convergence_study(spec: KernelSpec, test_function, grid_sizes,
                      ridge: float = 1e-12, eval_points: int = 10001):
    """Interpolate on equispaced [0,1] grids; returns [(fill distance, sup error)].

    grid_sizes must be strictly increasing.
    """
    sizes = list(grid_sizes)
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("grid_sizes must be strictly increasing")
    dense = np.linspace(0.0, 1.0, eval_points)[:, None]
    f_dense = np.asarray([test_function(float(t)) for t in dense[:, 0]])
    table = []
    for n in sizes:
        nodes = np.linspace(0.0, 1.0, n)[:, None]
        vals = np.asarray([test_function(float(t)) for t in nodes[:, 0]])
        c = kernel_interpolate(spec, nodes, vals, ridge=ridge)
        err = float(np.abs(interpolant_eval(spec, nodes, c, dense) - f_dense).max())
        h = fill_distance(nodes, dense).h
        table.append((h, err))
    return table


def loglog_slope(table) -> float:
    """Least-squares slope of log(error) against log(h) for a study table."""
    h = np.log([row[0] for row in table])
    e = np.log([row[1] for row in table])
    return float(np.polyfit(h, e, 1)[0])


# ------------------------------------------------------------------
# Theory checks.
# ------------------------------------------------------------------

def _random_map(rng, d):
    kind = rng.integers(0, 3)
    A = rng.normal(0.0, 0.6, (d, d))
    b = rng.normal(0.0, 1.0, d)
    if kind == 0:  # affine
        return lambda X: X @ A.T + b
    if kind == 1:  # affine plus elementwise sine warp
        amp = rng.uniform(0.1, 0.8)
        freq = rng.uniform(0.5, 2.0)
        return lambda X: X @ A.T + b + amp * np.sin(freq * X)
    shift = rng.normal(0.0, 0.5, d)  # pure translation of the identity
    return lambda X: X + shift


def mmd_stability_check(gamma, trials: int, seed=0, details: bool = False):
    """Max over random trials of MMD(T#eta, T'#eta) - (1/gamma) ||T - T'||_inf,eta.

    Expected to be <= ~1e-10 (roundoff); a positive value of any size would
    falsify the bound. Gaussian kernels only.
    """
    if isinstance(gamma, KernelSpec):
        if gamma.family != GAUSSIAN:
            raise ValueError("stability bound holds for the Gaussian family only")
        spec = gamma
    else:
        spec = KernelSpec(GAUSSIAN, float(gamma))
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    violations = np.empty(trials)
    for t in range(trials):
        d = int(rng.integers(1, 4))
        n = int(rng.integers(5, 40))
        X = rng.normal(0.0, 1.5, (n, d))
        T, Tp = _random_map(rng, d), _random_map(rng, d)
        A, B = T(X), Tp(X)
        lhs = math.sqrt(mmd2(spec, A, B))
        sup = float(np.linalg.norm(A - B, axis=1).max())
        violations[t] = lhs - sup / spec.lengthscale
    worst = float(violations.max())
    return (worst, violations) if details else worst


def ode_perturbation_check(trials: int, seed=0, steps: int = 256,
                           allowance: float = 1e-6, details: bool = False):
    """Max over affine-field trials of |T(x;v) - T(x';v')| - bound - allowance.

    v(x) = Ax + b and v'(x) = Ax + b' share the linear part, so the Lipschitz
    constant L = ||A||_2 and ||v - v'||_inf = |b - b'| are exact. Expected
    to be <= 0 up to the integrator allowance.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    violations = np.empty(trials)
    for t in range(trials):
        d = int(rng.integers(1, 4))
        A = rng.normal(0.0, 1.0, (d, d))
        L = float(np.linalg.norm(A, 2))
        A *= rng.uniform(0.2, 1.8) / max(L, 1e-12)
        L = float(np.linalg.norm(A, 2))
        b = rng.normal(0.0, 1.0, d)
        db = rng.normal(0.0, 0.5, d) * (0.0 if t % 7 == 0 else 1.0)
        x = rng.normal(0.0, 1.0, (1, d))
        dx = rng.normal(0.0, 0.5, d) * (0.0 if t % 5 == 0 else 1.0)
        Tx = integrate(lambda _t, X: X @ A.T + b, x, steps)
        Txp = integrate(lambda _t, X: X @ A.T + (b + db), x + dx, steps)
        lhs = float(np.linalg.norm(Tx - Txp))
        bound = math.exp(L) * float(np.linalg.norm(dx)) + math.expm1(L) / L * float(
            np.linalg.norm(db))
        violations[t] = lhs - bound - allowance
    worst = float(violations.max())
    return (worst, violations) if details else worst


# ------------------------------------------------------------------
# Adaptive Metropolis (the posterior oracle).
# ------------------------------------------------------------------

@dataclass
class McmcChain:
    samples: np.ndarray  # (K, p), post burn-in
    acceptance_rate: float
    proposal_cov_trace: float


def adaptive_metropolis(log_post, init, steps: int, seed, initial_scale: float = 0.1) -> McmcChain:
    """Random-walk Metropolis whose proposal covariance adapts to the chain.

    Burn-in is steps // 10 with a fixed isotropic proposal; afterwards the
    proposal covariance is (2.38^2 / p) * (chain covariance + 1e-8 I),
    re-estimated from the full history each step. The burn-in segment is
    discarded; the acceptance rate refers to the kept segment.
    """
    if steps < 1000:
        raise ValueError("steps must be >= 1000")
    x = np.asarray(init, dtype=np.float64).copy()
    p = x.shape[0]
    lp = float(log_post(x))
    if not np.isfinite(lp):
        raise ValueError("log_post is not finite at the initial point")
    rng = np.random.default_rng(seed)
    burn = steps // 10
    kept = np.empty((steps - burn, p))
    accepted = 0

    mean_acc = np.zeros(p)
    cov_acc = np.zeros((p, p))
    n_acc = 0
    chol = initial_scale * np.eye(p)
    scale = 2.38**2 / p

    for t in range(steps):
        prop = x + chol @ rng.standard_normal(p)
        lp_prop = float(log_post(prop))
        if np.isfinite(lp_prop) and math.log(rng.random()) < lp_prop - lp:
            x, lp = prop, lp_prop
            if t >= burn:
                accepted += 1
        if t >= burn:
            kept[t - burn] = x
        mean_acc += x
        cov_acc += np.outer(x, x)
        n_acc += 1
        if t >= burn:
            mu = mean_acc / n_acc
            cov = cov_acc / n_acc - np.outer(mu, mu)
            chol = np.linalg.cholesky(scale * (cov + 1e-8 * np.eye(p)))
    return McmcChain(samples=kept, acceptance_rate=accepted / (steps - burn),
                     proposal_cov_trace=float(np.trace(chol @ chol.T)))


# ------------------------------------------------------------------
# Predator-prey simulator: two interacting populations,
#     p1' = alpha p1 - beta p1 p2,   p2' = -gamma p2 + delta p1 p2,
# started at p(0) = (30, 1), observed every 2 time units up to t = 18,
# with multiplicative log-normal observation noise. Integration runs in
# log-population coordinates (positivity is automatic and the decoupled
# beta = delta = 0 case is solved exactly by RK4).
# ------------------------------------------------------------------

LV_INIT = (30.0, 1.0)
LV_OBS_INTERVAL = 2.0
LV_N_OBS = 9  # observation times 2, 4, ..., 18
LV_T_END = 20.0
LV_NOISE_SIGMA = 0.01
LV_INTERNAL_STEP = 0.002
_LV_BLOWUP_LOG = 21.0  # exp(21) > 1e9

# standard-normal prior z is mapped to rates u = LV_PRIOR_LOC + LV_PRIOR_SCALE * z,
# rejected to positivity; the true rates sit at z = (-0.267, 0, 0.6, -0.667)
LV_PRIOR_LOC = np.array([1.0, 0.05, 1.2, 0.03])
LV_PRIOR_SCALE = np.array([0.3, 0.02, 0.5, 0.015])
LV_TRUE_RATES = np.array([0.92, 0.05, 1.50, 0.02])


@_njit(cache=True)
def _lv_log_path_scalar(a, b, g, dl, dt, n_sub, n_obs):  # pragma: no cover - numba
    q1 = math.log(30.0)
    q2 = 0.0
    out = np.empty((n_obs, 2))
    ok = True
    for k in range(n_obs):
        for _ in range(n_sub):
            k11 = a - b * math.exp(q2)
            k12 = -g + dl * math.exp(q1)
            e1 = math.exp(q1 + 0.5 * dt * k11)
            e2 = math.exp(q2 + 0.5 * dt * k12)
            k21 = a - b * e2
            k22 = -g + dl * e1
            e1 = math.exp(q1 + 0.5 * dt * k21)
            e2 = math.exp(q2 + 0.5 * dt * k22)
            k31 = a - b * e2
            k32 = -g + dl * e1
            e1 = math.exp(q1 + dt * k31)
            e2 = math.exp(q2 + dt * k32)
            k41 = a - b * e2
            k42 = -g + dl * e1
            q1 += dt / 6.0 * (k11 + 2.0 * k21 + 2.0 * k31 + k41)
            q2 += dt / 6.0 * (k12 + 2.0 * k22 + 2.0 * k32 + k42)
            if q1 > 21.0 or q2 > 21.0:
                ok = False
                return out, ok
        out[k, 0] = q1
        out[k, 1] = q2
    return out, ok


def lotka_volterra_log_states(u, internal_step: float = LV_INTERNAL_STEP) -> np.ndarray:
    """Noiseless log-populations at the observation times, shape (9, 2).

    Raises on blow-up (population beyond 1e9).
    """
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (4,):
        raise ValueError("u must be a 4-vector of rates")
    n_sub = int(round(LV_OBS_INTERVAL / internal_step))
    out, ok = _lv_log_path_scalar(u[0], u[1], u[2], u[3], internal_step, n_sub, LV_N_OBS)
    if not ok:
        raise RuntimeError("population dynamics blew up (|p| > 1e9)")
    return out


def lotka_volterra_solve(u, internal_step: float = LV_INTERNAL_STEP) -> np.ndarray:
    """Noiseless populations at the observation times, shape (9, 2)."""
    return np.exp(lotka_volterra_log_states(u, internal_step))


def lotka_volterra_simulate(u, seed, internal_step: float = LV_INTERNAL_STEP,
                            noise_sigma: float = LV_NOISE_SIGMA) -> np.ndarray:
    """Noisy observation vector (length 18, time-major: p1(2), p2(2), p1(4), ...).

    Observations are multiplicative log-normal: y = p * exp(sigma * eps) with
    eps standard normal, seeded.
    """
    p = lotka_volterra_solve(u, internal_step).reshape(-1)
    eps = np.random.default_rng(seed).standard_normal(p.shape[0])
    return p * np.exp(noise_sigma * eps)


def _lv_log_states_batch(U: np.ndarray, internal_step: float):
    """Batched log-space solves: (N, 4) rates -> ((N, 9, 2) logs, (N,) ok mask)."""
    N = U.shape[0]
    a, b, g, dl = U[:, 0], U[:, 1], U[:, 2], U[:, 3]
    q = np.empty((N, 2))
    q[:, 0] = math.log(30.0)
    q[:, 1] = 0.0
    ok = np.ones(N, dtype=bool)
    n_sub = int(round(LV_OBS_INTERVAL / internal_step))
    out = np.empty((N, LV_N_OBS, 2))
    dt = internal_step

    def rhs(qq):
        e = np.exp(np.clip(qq, -700.0, 30.0))
        return np.stack([a - b * e[:, 1], -g + dl * e[:, 0]], axis=1)

    for k in range(LV_N_OBS):
        for _ in range(n_sub):
            k1 = rhs(q)
            k2 = rhs(q + 0.5 * dt * k1)
            k3 = rhs(q + 0.5 * dt * k2)
            k4 = rhs(q + dt * k3)
            q = q + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            bad = q.max(axis=1) > _LV_BLOWUP_LOG
            if bad.any():
                ok &= ~bad
                q = np.minimum(q, _LV_BLOWUP_LOG)
        out[:, k, :] = q
    return out, ok


def lotka_volterra_prior_pairs(n: int, seed, internal_step: float = LV_INTERNAL_STEP,
                               noise_sigma: float = LV_NOISE_SIGMA):
    """Draw n (observation-vector, z) pairs under the standard-normal prior.

    z rows rejected to positive rates or blown-up dynamics are redrawn from
    the same stream, so the output is deterministic given the seed. Returns
    (Y (n, 18), Z (n, 4)).
    """
    rng = np.random.default_rng(seed)
    Y = np.empty((n, 2 * LV_N_OBS))
    Z = np.empty((n, 4))
    filled = 0
    while filled < n:
        want = n - filled
        z = rng.standard_normal((want, 4))
        u = LV_PRIOR_LOC + LV_PRIOR_SCALE * z
        good = (u > 0).all(axis=1)
        logs, ok = _lv_log_states_batch(u[good], internal_step)
        good_idx = np.flatnonzero(good)[ok]
        logs = logs[ok]
        eps = rng.standard_normal((logs.shape[0], 2 * LV_N_OBS))
        take = min(len(good_idx), want)
        obs = np.exp(logs.reshape(-1, 2 * LV_N_OBS)[:take] + noise_sigma * eps[:take])
        Y[filled : filled + take] = obs
        Z[filled : filled + take] = z[good_idx[:take]]
        filled += take
    return Y, Z


def lotka_volterra_log_posterior(y_obs, internal_step: float = LV_INTERNAL_STEP,
                                 noise_sigma: float = LV_NOISE_SIGMA):
    """Log-posterior over z (standard-normal prior coordinates) given a noisy
    observation vector; the likelihood compares log-observations to the
    noiseless log-populations."""
    log_y = np.log(np.asarray(y_obs, dtype=np.float64))

    def log_post(z):
        u = LV_PRIOR_LOC + LV_PRIOR_SCALE * z
        if np.any(u <= 0):
            return -np.inf
        try:
            logs = lotka_volterra_log_states(u, internal_step).reshape(-1)
        except RuntimeError:
            return -np.inf
        resid = log_y - logs
        return -0.5 * float(z @ z) - 0.5 * float(resid @ resid) / noise_sigma**2

    return log_post
