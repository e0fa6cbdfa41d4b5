"""Command-line front end.

Verbs: generate, train, sample, evaluate, trajectories, lotka-volterra,
theory-check. Every command is deterministic given its config and seeds,
validates inputs before any expensive compute, and uses exit codes
0 (success), 1 (runtime failure), 2 (usage/config error).

Config files are flat JSON documents with a frozen key set (unknown keys are
rejected); see README for the schemas. The environment variable KODE_THREADS
caps the numerical libraries' internal parallelism.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import analysis, data, model
from .model import ModelConfig, TransportModel
from .objective import PenaltyConfig
from .optim import TrainConfig


def _fail_usage(message: str):
    raise click.UsageError(message)


def _load_json(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        _fail_usage(f"config file not found: {path}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        _fail_usage(f"{path}: invalid JSON ({exc})")
    if not isinstance(doc, dict):
        _fail_usage(f"{path}: config must be a JSON object")
    return doc


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _load_model(path: str) -> TransportModel:
    if not Path(path).is_file():
        _fail_usage(f"model file not found: {path}")
    try:
        return model.load(path)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc


@click.group()
def main():
    """Kernel-ODE transport: train sampling maps, draw samples, run studies."""


# ------------------------------------------------------------------
# generate
# ------------------------------------------------------------------

@main.command()
@click.argument("name")
@click.argument("n", type=int)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("-o", "--out", "out_path", required=True, type=click.Path(dir_okay=False))
def generate(name, n, seed, out_path):
    """Write N draws from a named 2D benchmark to a CSV file."""
    try:
        pts = data.generate_benchmark(name, n, seed)
    except ValueError as exc:
        _fail_usage(str(exc))
    data.save_csv(out_path, pts)
    click.echo(f"wrote {n} x 2 samples from {name!r} to {out_path}")


# ------------------------------------------------------------------
# train
# ------------------------------------------------------------------

_TRAIN_KEYS = {
    # data (benchmark or explicit CSVs)
    "benchmark": str, "n_total": int, "data_seed": int,
    "train_csv": str, "val_csv": str, "test_csv": str,
    # model architecture
    "inducing_count": int, "time_steps": int, "autonomous": bool, "mask_dim": int,
    "kernel_u_family": str, "kernel_u_lengthscale": (int, float, str),
    "kernel_u_median_scale": (int, float),
    "mmd_kernel_family": str, "mmd_kernel_lengthscale": (int, float, str),
    "mmd_kernel_median_scale": (int, float),
    # training
    "epochs": int, "batch_size": int, "learning_rate": (int, float), "optimizer": str,
    "lambda1": (int, float), "lambda2": (int, float), "lambda_total": (int, float),
    "bidirectional": bool, "val_every": int, "lr_schedule": str, "seed": int,
    # output
    "output_dir": str,
}


def _check_keys(cfg: dict, allowed: dict, path: str):
    for key, value in cfg.items():
        if key not in allowed:
            _fail_usage(f"{path}: unknown config key {key!r}")
        expected = allowed[key]
        if not isinstance(value, expected) or isinstance(value, bool) and expected is not bool:
            _fail_usage(f"{path}: key {key!r} has invalid type {type(value).__name__}")


def _model_config(cfg: dict) -> ModelConfig:
    kwargs = {}
    for field in ("inducing_count", "time_steps", "autonomous", "mask_dim",
                  "kernel_u_family", "kernel_u_lengthscale", "kernel_u_median_scale",
                  "mmd_kernel_family", "mmd_kernel_lengthscale", "mmd_kernel_median_scale"):
        if field in cfg:
            kwargs[field] = cfg[field]
    return ModelConfig(**kwargs)


def _train_config(cfg: dict, trace_csv) -> TrainConfig:
    penalty = PenaltyConfig(cfg.get("lambda1", 1.0), cfg.get("lambda2", 1.0),
                            cfg.get("lambda_total", 1e-6))
    kwargs = {}
    for field in ("epochs", "batch_size", "learning_rate", "optimizer", "bidirectional",
                  "val_every", "lr_schedule", "seed"):
        if field in cfg:
            kwargs[field] = cfg[field]
    return TrainConfig(penalty=penalty, trace_csv=str(trace_csv), **kwargs)


@main.command()
@click.argument("config_path", type=click.Path(dir_okay=False))
def train(config_path):
    """Train a transport model from a JSON config; writes model.json, trace.csv
    and report.json into the configured output directory."""
    cfg = _load_json(config_path)
    _check_keys(cfg, _TRAIN_KEYS, config_path)
    if "output_dir" not in cfg:
        _fail_usage(f"{config_path}: missing required key 'output_dir'")
    has_benchmark = "benchmark" in cfg
    has_csv = "train_csv" in cfg or "val_csv" in cfg
    if has_benchmark == has_csv:
        _fail_usage(f"{config_path}: configure either 'benchmark' or 'train_csv'+'val_csv'")
    test_set = None
    if has_benchmark:
        name = cfg["benchmark"]
        if data._ALIASES.get(name, name) not in data.BENCHMARKS:
            _fail_usage(f"{config_path}: unknown benchmark {name!r}")
        train_set, val_set, test_set = data.benchmark_split(
            name, cfg.get("data_seed", 0), cfg.get("n_total", 25000))
    else:
        for key in ("train_csv", "val_csv"):
            if key not in cfg:
                _fail_usage(f"{config_path}: missing required key {key!r}")
            if not Path(cfg[key]).is_file():
                _fail_usage(f"{config_path}: {key} file not found: {cfg[key]}")
        if "test_csv" in cfg and not Path(cfg["test_csv"]).is_file():
            _fail_usage(f"{config_path}: test_csv file not found: {cfg['test_csv']}")
        train_set = data.load_csv(cfg["train_csv"])
        val_set = data.load_csv(cfg["val_csv"])
        if "test_csv" in cfg:
            test_set = data.load_csv(cfg["test_csv"])

    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        model_cfg = _model_config(cfg)
        train_cfg = _train_config(cfg, out_dir / "trace.csv")
    except ValueError as exc:
        _fail_usage(f"{config_path}: {exc}")

    t0 = time.perf_counter()
    try:
        if cfg.get("mask_dim", 0) > 0:
            trained = model.fit_triangular(train_cfg, model_cfg, train_set, val_set,
                                           m=cfg["mask_dim"])
        else:
            trained = model.fit(train_cfg, model_cfg, train_set, val_set)
    except (ValueError, RuntimeError) as exc:
        raise click.ClickException(f"training failed: {exc}") from exc
    elapsed = time.perf_counter() - t0

    model.save(trained, out_dir / "model.json")
    report = {
        "best_val_nmmd": trained.training_meta["best_val_nmmd"],
        "best_val_epoch": trained.training_meta["best_val_epoch"],
    }
    if test_set is not None:
        report["test"] = model.evaluate(trained, test_set, reference_seed=cfg.get("seed", 0) + 1)
    _write_json(out_dir / "report.json", report)
    print(f"training took {elapsed:.1f}s", file=sys.stderr)
    click.echo(f"validation normalized MMD: {trained.training_meta['best_val_nmmd']:.6g}")


# ------------------------------------------------------------------
# sample
# ------------------------------------------------------------------

@main.command()
@click.argument("model_path", type=click.Path(dir_okay=False))
@click.argument("n", type=int, required=False)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("-o", "--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--backward", "backward_csv", type=click.Path(dir_okay=False),
              help="pull the samples in this CSV back to reference space")
@click.option("--condition", "condition_y", type=str,
              help="comma-separated conditioning values (triangular models)")
def sample(model_path, n, seed, out_path, backward_csv, condition_y):
    """Draw N samples from a trained model (or transport data backward)."""
    if backward_csv and condition_y:
        _fail_usage("--backward and --condition are mutually exclusive")
    m = _load_model(model_path)
    if backward_csv:
        if not Path(backward_csv).is_file():
            _fail_usage(f"input file not found: {backward_csv}")
        pts = model.pull_back(m, data.load_csv(backward_csv))
        data.save_csv(out_path, pts)
        click.echo(f"wrote {pts.shape[0]} pulled-back samples (reference space) to {out_path}")
        return
    if n is None:
        _fail_usage("N is required unless --backward is given")
    if condition_y is not None:
        if m.mask_dim == 0:
            _fail_usage("--condition requires a triangular model (this one has mask_dim 0)")
        try:
            y = np.array([float(v) for v in condition_y.split(",")], dtype=np.float64)
        except ValueError:
            _fail_usage(f"could not parse --condition value {condition_y!r}")
        if y.shape[0] != m.mask_dim:
            _fail_usage(f"--condition needs {m.mask_dim} values, got {y.shape[0]}")
        pts = model.condition(m, y, n, seed)
    else:
        pts = model.sample(m, n, seed)
    data.save_csv(out_path, pts)
    click.echo(f"wrote {pts.shape[0]} x {pts.shape[1]} samples to {out_path}")


# ------------------------------------------------------------------
# evaluate
# ------------------------------------------------------------------

@main.command()
@click.argument("model_path", type=click.Path(dir_okay=False))
@click.argument("test_csv", type=click.Path(dir_okay=False))
@click.option("--reference-seed", type=int, default=0, show_default=True)
@click.option("-o", "--out", "report_path", type=click.Path(dir_okay=False),
              help="also write the full JSON report here")
def evaluate(model_path, test_csv, reference_seed, report_path):
    """Normalized MMD of generated samples against a test CSV."""
    m = _load_model(model_path)
    if not Path(test_csv).is_file():
        _fail_usage(f"test file not found: {test_csv}")
    test = data.load_csv(test_csv)
    if test.shape[1] != m.dim:
        _fail_usage(f"test data has dimension {test.shape[1]}, model expects {m.dim}")
    rep = model.evaluate(m, test, reference_seed)
    if report_path:
        _write_json(report_path, rep)
    click.echo(f"{rep['normalized_mmd']:.6g}")


# ------------------------------------------------------------------
# trajectories
# ------------------------------------------------------------------

@main.command()
@click.argument("model_path", type=click.Path(dir_okay=False))
@click.argument("n", type=int)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("-o", "--out", "out_path", required=True, type=click.Path(dir_okay=False))
def trajectories(model_path, n, seed, out_path):
    """Record the flow of N reference draws at every step boundary."""
    from .flow import flow_forward

    m = _load_model(model_path)
    z = data.sample_reference(n, m.dim, seed)
    _, traj = flow_forward(m.field, z, record=True)
    states = m.standardizer.invert(traj.states.reshape(-1, m.dim)).reshape(traj.states.shape)
    header = ["sample_id", "t"] + [f"x{i + 1}" for i in range(m.dim)]
    rows = []
    for i in range(n):
        for k, t in enumerate(traj.times):
            rows.append([float(i), float(t)] + [float(v) for v in states[k, i]])
    data.save_csv(out_path, np.asarray(rows), header=header)
    click.echo(f"wrote {len(rows)} trajectory rows to {out_path}")


# ------------------------------------------------------------------
# lotka-volterra study
# ------------------------------------------------------------------

_LV_KEYS = {
    "n_pairs": int, "seed": int, "mcmc_steps": int, "posterior_draws": int,
    "observation_seed": int, "output_dir": str,
    "inducing_count": int, "time_steps": int,
    "epochs": int, "batch_size": int, "learning_rate": (int, float),
    "lambda1": (int, float), "lambda2": (int, float), "lambda_total": (int, float),
    "val_every": int, "lr_schedule": str,
    "mmd_kernel_median_scale": (int, float), "kernel_u_median_scale": (int, float),
}


@main.command("lotka-volterra")
@click.argument("config_path", type=click.Path(dir_okay=False))
def lotka_volterra(config_path):
    """Likelihood-free inference of predator-prey rates, with an adaptive
    Metropolis oracle for comparison."""
    cfg = _load_json(config_path)
    _check_keys(cfg, _LV_KEYS, config_path)
    if "output_dir" not in cfg:
        _fail_usage(f"{config_path}: missing required key 'output_dir'")
    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)

    n_pairs = cfg.get("n_pairs", 100000)
    seed = cfg.get("seed", 0)
    mcmc_steps = cfg.get("mcmc_steps", 100000)
    draws = cfg.get("posterior_draws", 100000)

    t0 = time.perf_counter()
    click.echo(f"simulating {n_pairs} prior pairs ...")
    Y, Z = analysis.lotka_volterra_prior_pairs(n_pairs, np.random.SeedSequence([seed, 1]))
    y_obs = analysis.lotka_volterra_simulate(
        analysis.LV_TRUE_RATES, np.random.SeedSequence([cfg.get("observation_seed", seed), 2]))

    # condition on log-observations: the noise is additive there and the
    # conditional law is unchanged (coordinatewise bijection)
    joint = np.concatenate([np.log(Y), Z], axis=1)
    n_val = max(n_pairs // 20, 500)
    joint_train, joint_val = joint[:-n_val], joint[-n_val:]

    penalty = PenaltyConfig(cfg.get("lambda1", 1.0), cfg.get("lambda2", 1.0),
                            cfg.get("lambda_total", 1e-6))
    train_cfg = TrainConfig(
        epochs=cfg.get("epochs", 40), batch_size=cfg.get("batch_size", 512),
        learning_rate=cfg.get("learning_rate", 1e-2), seed=seed, penalty=penalty,
        val_every=cfg.get("val_every", 4), lr_schedule=cfg.get("lr_schedule", "cosine"))
    model_cfg = ModelConfig(
        inducing_count=cfg.get("inducing_count", 150),
        time_steps=cfg.get("time_steps", 8),
        mmd_kernel_median_scale=cfg.get("mmd_kernel_median_scale", 0.5),
        kernel_u_median_scale=cfg.get("kernel_u_median_scale", 1.0))

    click.echo("fitting the triangular transport model ...")
    trained = model.fit_triangular(train_cfg, model_cfg, joint_train, joint_val, m=Y.shape[1])
    z_kode = model.condition(trained, np.log(y_obs), draws,
                             np.random.SeedSequence([seed, 3]))
    u_kode = analysis.LV_PRIOR_LOC + analysis.LV_PRIOR_SCALE * z_kode

    click.echo(f"running the adaptive Metropolis oracle ({mcmc_steps} steps) ...")
    log_post = analysis.lotka_volterra_log_posterior(y_obs)
    z_init = (analysis.LV_TRUE_RATES - analysis.LV_PRIOR_LOC) / analysis.LV_PRIOR_SCALE
    chain = analysis.adaptive_metropolis(log_post, z_init, mcmc_steps,
                                         np.random.SeedSequence([seed, 4]))
    z_mcmc = chain.samples
    u_mcmc = analysis.LV_PRIOR_LOC + analysis.LV_PRIOR_SCALE * z_mcmc

    header = ["alpha", "beta", "gamma", "delta"]
    data.save_csv(out_dir / "kode_posterior.csv", u_kode, header=header)
    data.save_csv(out_dir / "mcmc_posterior.csv", u_mcmc, header=header)

    lo, hi = np.percentile(z_kode, [1, 99], axis=0)
    z_true = z_init
    report = {
        "n_pairs": n_pairs,
        "mcmc_acceptance_rate": chain.acceptance_rate,
        "observed_y": y_obs.tolist(),
        "true_rates": analysis.LV_TRUE_RATES.tolist(),
        "prior_loc": analysis.LV_PRIOR_LOC.tolist(),
        "prior_scale": analysis.LV_PRIOR_SCALE.tolist(),
        "kode_mean_z": z_kode.mean(axis=0).tolist(),
        "kode_std_z": z_kode.std(axis=0).tolist(),
        "mcmc_mean_z": z_mcmc.mean(axis=0).tolist(),
        "mcmc_std_z": z_mcmc.std(axis=0).tolist(),
        "mean_abs_diff_prior_std": np.abs(z_kode.mean(axis=0) - z_mcmc.mean(axis=0)).tolist(),
        "std_ratio": (z_kode.std(axis=0) / np.maximum(z_mcmc.std(axis=0), 1e-300)).tolist(),
        "true_in_kode_1_99_box": bool(np.all((z_true >= lo) & (z_true <= hi))),
        "best_val_nmmd": trained.training_meta["best_val_nmmd"],
    }
    _write_json(out_dir / "report.json", report)
    print(f"study took {time.perf_counter() - t0:.0f}s", file=sys.stderr)
    click.echo("per-parameter |mean difference| in prior-std units: "
               + ", ".join(f"{v:.4f}" for v in report["mean_abs_diff_prior_std"]))
    click.echo(f"true parameter inside the KODE [1%, 99%] box: {report['true_in_kode_1_99_box']}")


# ------------------------------------------------------------------
# theory-check
# ------------------------------------------------------------------

@main.command("theory-check")
@click.option("--out-dir", type=click.Path(file_okay=False), default="theory_check",
              show_default=True)
@click.option("--stability-trials", type=int, default=10000, show_default=True)
@click.option("--perturbation-trials", type=int, default=1000, show_default=True)
def theory_check(out_dir, stability_trials, perturbation_trials):
    """Run the analysis suite's empirical theory checks and emit CSV tables."""
    from .kernels import KernelSpec

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ok = True

    worst, violations = analysis.mmd_stability_check(1.0, stability_trials, seed=0, details=True)
    rows = np.stack([np.arange(len(violations), dtype=np.float64), violations], axis=1)
    data.save_csv(out / "stability_violations.csv", rows, header=["trial", "violation"])
    passed = worst <= 1e-10
    ok &= passed
    click.echo(f"mmd stability check: max violation {worst:.3e} -> {'PASS' if passed else 'FAIL'}")

    worst, violations = analysis.ode_perturbation_check(perturbation_trials, seed=0, details=True)
    rows = np.stack([np.arange(len(violations), dtype=np.float64), violations], axis=1)
    data.save_csv(out / "perturbation_violations.csv", rows, header=["trial", "violation"])
    passed = worst <= 0.0
    ok &= passed
    click.echo(f"ode perturbation check: max violation {worst:.3e} -> {'PASS' if passed else 'FAIL'}")

    table = analysis.convergence_study(KernelSpec("gaussian", 0.2),
                                       lambda t: np.sin(2 * np.pi * t), [10, 20, 40, 80])
    data.save_csv(out / "convergence.csv", np.asarray(table), header=["h", "sup_error"])
    slope = analysis.loglog_slope(table)
    passed = slope > 2.0
    ok &= passed
    click.echo(f"interpolation convergence: log-log slope {slope:.2f} -> {'PASS' if passed else 'FAIL'}")

    if not ok:
        raise click.ClickException("one or more theory checks failed")


if __name__ == "__main__":
    main()
