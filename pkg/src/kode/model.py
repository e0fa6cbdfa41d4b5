"""End-to-end transport-model lifecycle: assemble, train, sample, condition,
serialize.

A trained model carries the velocity field, the data standardizer fitted on
the training target, the training kernel, and metadata. Internally
everything runs in standardized coordinates, where the reference measure is
the standard Gaussian; ``sample`` de-standardizes on the way out while
``pull_back`` returns standardized-space points (the reference lives there).

Conditional (triangular) models freeze the first ``mask_dim`` coordinates:
the velocity is zero there, so the conditioning block rides through the
flow unchanged and the remaining block is pushed to the conditional law.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field as dc_field

import numpy as np

from .data import Standardizer, fit_standardizer, sample_reference, select_inducing_points
from .flow import VelocityField, flow_backward, flow_forward, zero_field
from .kernels import GAUSSIAN, KernelSpec, median_heuristic
from .mmd import mmd_report
from .optim import TrainConfig, train

FORMAT_VERSION = 1

EVAL_KERNEL = KernelSpec(GAUSSIAN, 1.0)  # unit lengthscale, fixed for reporting


@dataclass(frozen=True)
class ModelConfig:
    """Architecture choices: kernels, inducing points, time grid, mask."""

    inducing_count: int = 50
    time_steps: int = 16
    autonomous: bool = False
    mask_dim: int = 0
    kernel_u_family: str = GAUSSIAN
    kernel_u_lengthscale: float | str = "median"  # "median" or a positive float
    kernel_u_median_scale: float = 1.0
    mmd_kernel_family: str = "laplace"
    mmd_kernel_lengthscale: float | str = "median"
    mmd_kernel_median_scale: float = 1.0
    median_subsample: int = 4096


@dataclass
class TransportModel:
    field: VelocityField
    standardizer: Standardizer
    mmd_train_kernel: KernelSpec
    integrator_steps: int
    mask_dim: int
    format_version: int = FORMAT_VERSION
    training_meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.integrator_steps != self.field.time_steps:
            raise ValueError("integrator_steps must equal field.time_steps")
        if self.mask_dim != self.field.mask_dim:
            raise ValueError("mask_dim must equal field.mask_dim")

    @property
    def dim(self) -> int:
        return self.field.dim


def _resolve_lengthscale(value, median_scale: float, data: np.ndarray, subsample: int, seed):
    if isinstance(value, str):
        if value != "median":
            raise ValueError(f"lengthscale must be a positive number or 'median', got {value!r}")
        X = data
        if X.shape[0] > subsample:
            idx = np.random.default_rng(seed).choice(X.shape[0], subsample, replace=False)
            X = X[idx]
        return median_heuristic(X) * median_scale
    if value <= 0:
        raise ValueError(f"lengthscale must be positive, got {value}")
    return float(value)


def _seeds(seed: int, n: int):
    return [np.random.SeedSequence([seed, 0xC0DE, i]) for i in range(n)]


def _prepare(train_cfg: TrainConfig, model_cfg: ModelConfig, target_train, target_val,
             make_ref_std):
    """Shared assembly: standardize, pick lengthscales and inducing points.

    ``make_ref_std(rng, tt)`` builds a standardized-space reference sample of
    the training set's size; inducing points cover the union of that sample
    and the standardized target, so they span both trajectory endpoints.
    """
    std = fit_standardizer(target_train)
    tt = std.apply(target_train)
    tv = std.apply(target_val)
    s_ref, s_med, s_kmeans, s_valref = _seeds(train_cfg.seed, 4)

    gamma_u = _resolve_lengthscale(model_cfg.kernel_u_lengthscale, model_cfg.kernel_u_median_scale,
                                   tt, model_cfg.median_subsample, s_med)
    gamma_k = _resolve_lengthscale(model_cfg.mmd_kernel_lengthscale, model_cfg.mmd_kernel_median_scale,
                                   tt, model_cfg.median_subsample, s_med)
    kernel_u = KernelSpec(model_cfg.kernel_u_family, gamma_u)
    mmd_kernel = KernelSpec(model_cfg.mmd_kernel_family, gamma_k)

    ref_std = make_ref_std(np.random.default_rng(s_ref), tt)
    inducing = select_inducing_points(ref_std, tt, model_cfg.inducing_count, s_kmeans)
    field = zero_field(inducing, kernel_u, model_cfg.time_steps,
                       autonomous=model_cfg.autonomous, mask_dim=model_cfg.mask_dim)
    return std, tt, tv, field, mmd_kernel, s_valref


def fit(train_cfg: TrainConfig, model_cfg: ModelConfig, target_train, target_val) -> TransportModel:
    """Train a transport map from the standard Gaussian to the target data."""
    target_train = np.asarray(target_train, dtype=np.float64)
    target_val = np.asarray(target_val, dtype=np.float64)
    if model_cfg.mask_dim != 0:
        raise ValueError("use fit_triangular for masked (conditional) models")

    def gaussian_ref(rng, target_batch):
        return rng.standard_normal(target_batch.shape)

    std, tt, tv, field, mmd_kernel, s_valref = _prepare(
        train_cfg, model_cfg, target_train, target_val, gaussian_ref)
    val_ref = sample_reference(tv.shape[0], tv.shape[1], s_valref)
    best, trace = train(field, train_cfg, gaussian_ref, tt, val_ref, tv,
                        mmd_kernel, eval_kernel=EVAL_KERNEL)
    meta = _meta(train_cfg, model_cfg, trace, tt)
    return TransportModel(best, std, mmd_kernel, model_cfg.time_steps, 0, training_meta=meta)


def fit_triangular(train_cfg: TrainConfig, model_cfg: ModelConfig, joint_train, joint_val,
                   m: int) -> TransportModel:
    """Train a block-triangular map for conditional sampling.

    Joint samples are (y, u) rows with y the first m coordinates. Reference
    rows copy each target row's y-block and draw the u-block from the
    standard Gaussian, so the map only has to move the u-block.
    """
    joint_train = np.asarray(joint_train, dtype=np.float64)
    joint_val = np.asarray(joint_val, dtype=np.float64)
    d = joint_train.shape[1]
    if not 1 <= m < d:
        raise ValueError(f"conditioning dimension m must satisfy 1 <= m < {d}, got {m}")
    model_cfg = ModelConfig(**{**asdict(model_cfg), "mask_dim": m})

    def triangular_ref(rng, target_batch):
        out = target_batch.copy()
        out[:, m:] = rng.standard_normal((target_batch.shape[0], d - m))
        return out

    std, tt, tv, field, mmd_kernel, s_valref = _prepare(
        train_cfg, model_cfg, joint_train, joint_val, triangular_ref)
    val_ref = triangular_ref(np.random.default_rng(s_valref), tv)
    best, trace = train(field, train_cfg, triangular_ref, tt, val_ref, tv,
                        mmd_kernel, eval_kernel=EVAL_KERNEL)
    meta = _meta(train_cfg, model_cfg, trace, tt)
    meta["y_range"] = {
        "low": tt[:, :m].min(axis=0).tolist(),
        "high": tt[:, :m].max(axis=0).tolist(),
    }
    return TransportModel(best, std, mmd_kernel, model_cfg.time_steps, m, training_meta=meta)


def _meta(train_cfg: TrainConfig, model_cfg: ModelConfig, trace, std_train) -> dict:
    best = trace.best()
    cfg = asdict(train_cfg)
    cfg.pop("trace_csv")
    return {
        "train_config": cfg,
        "model_config": asdict(model_cfg),
        "best_val_nmmd": best.val_nmmd,
        "best_val_epoch": best.epoch,
        "final_penalty": best.penalty,
        "n_train": int(std_train.shape[0]),
    }


def sample(model: TransportModel, n: int, seed) -> np.ndarray:
    """Draw n samples: Gaussian draws pushed through the flow, de-standardized."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return np.empty((0, model.dim))
    z = sample_reference(n, model.dim, seed)
    return model.standardizer.invert(flow_forward(model.field, z))


def pull_back(model: TransportModel, Y) -> np.ndarray:
    """Transport data points backward to reference space (standardized)."""
    return flow_backward(model.field, model.standardizer.apply(Y))


def condition(model: TransportModel, y, n: int, seed) -> np.ndarray:
    """Draw n samples from the learned conditional given the first-block value y."""
    m = model.mask_dim
    if m == 0:
        raise ValueError("conditioning requires a triangular model (mask_dim >= 1)")
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if y.shape != (m,):
        raise ValueError(f"y must have dimension {m}, got shape {y.shape}")
    std = model.standardizer
    y_std = (y - std.mean[:m]) / std.std[:m]
    y_range = model.training_meta.get("y_range")
    if y_range is not None and (
        np.any(y_std < np.asarray(y_range["low"])) or np.any(y_std > np.asarray(y_range["high"]))
    ):
        warnings.warn("conditioning value lies outside the training marginal's range; "
                      "samples are extrapolations", stacklevel=2)
    if n == 0:
        return np.empty((0, model.dim - m))
    rows = np.empty((n, model.dim))
    rows[:, :m] = y_std
    rows[:, m:] = sample_reference(n, model.dim - m, seed)
    out = flow_forward(model.field, rows)
    return out[:, m:] * std.std[m:] + std.mean[m:]


def evaluate(model: TransportModel, test, reference_seed) -> dict:
    """Score generated samples against a test set with the fixed Gaussian
    unit-lengthscale kernel.

    Returns both the standardized-space metrics (the reference is exactly
    N(0, I) there; a zero-coefficient model scores 1) and the raw-space
    squared ratio against N(0, I) reference draws, which is the quantity
    benchmark tables report.
    """
    test = np.asarray(test, dtype=np.float64)
    ref = sample_reference(test.shape[0], model.dim, reference_seed)
    test_std = model.standardizer.apply(test)
    gen_std = flow_forward(model.field, ref)
    rep_std = mmd_report(EVAL_KERNEL, gen_std, test_std, reference=ref)
    gen_raw = model.standardizer.invert(gen_std)
    rep_raw = mmd_report(EVAL_KERNEL, gen_raw, test, reference=ref)
    return {
        "normalized_mmd": rep_std.normalized,
        "normalized_mmd_squared": rep_std.normalized_squared,
        "mmd": rep_std.mmd,
        "mmd_squared": rep_std.mmd_squared,
        "raw_normalized_mmd": rep_raw.normalized,
        "raw_normalized_mmd_squared": rep_raw.normalized_squared,
        "n_test": int(test.shape[0]),
    }


# ------------------------------------------------------------------
# Serialization: a single JSON document, format_version 1. Floats are
# written with repr, so a load reproduces the model bit-exactly.
# ------------------------------------------------------------------

def save(model: TransportModel, path):
    doc = {
        "format_version": model.format_version,
        "kernel_u": {"family": model.field.kernel_u.family,
                     "lengthscale": model.field.kernel_u.lengthscale},
        "mmd_kernel": {"family": model.mmd_train_kernel.family,
                       "lengthscale": model.mmd_train_kernel.lengthscale},
        "inducing_x": model.field.inducing_x.tolist(),
        "coeffs": model.field.coeffs.tolist(),
        "time_steps": model.field.time_steps,
        "mask_dim": model.mask_dim,
        "integrator_steps": model.integrator_steps,
        "standardizer": {"mean": model.standardizer.mean.tolist(),
                         "std": model.standardizer.std.tolist()},
        "training_meta": model.training_meta,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load(path) -> TransportModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    required = ["format_version", "kernel_u", "mmd_kernel", "inducing_x", "coeffs",
                "time_steps", "mask_dim", "integrator_steps", "standardizer", "training_meta"]
    for key in required:
        if key not in doc:
            raise ValueError(f"{path}: missing field {key!r}")
    if doc["format_version"] != FORMAT_VERSION:
        raise ValueError(
            f"{path}: format_version {doc['format_version']} not supported (expected {FORMAT_VERSION})")
    try:
        field = VelocityField(
            np.asarray(doc["inducing_x"], dtype=np.float64),
            KernelSpec(doc["kernel_u"]["family"], doc["kernel_u"]["lengthscale"]),
            np.asarray(doc["coeffs"], dtype=np.float64),
            int(doc["time_steps"]),
            int(doc["mask_dim"]),
        )
        std_doc = doc["standardizer"]
        std = Standardizer(np.asarray(std_doc["mean"], float), np.asarray(std_doc["std"], float))
        if np.any(std.std <= 0) or not np.isfinite(std.mean).all() or not np.isfinite(std.std).all():
            raise ValueError("invalid standardizer statistics")
        model = TransportModel(
            field, std,
            KernelSpec(doc["mmd_kernel"]["family"], doc["mmd_kernel"]["lengthscale"]),
            int(doc["integrator_steps"]), int(doc["mask_dim"]),
            format_version=int(doc["format_version"]),
            training_meta=doc["training_meta"],
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed model file ({exc})") from exc
    except ValueError as exc:
        raise ValueError(f"{path}: invalid model: {exc}") from exc
    return model
