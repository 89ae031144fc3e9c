"""Experiment drivers: the ten-step table, the update field grid, and the
error-versus-sample-size scaling study.

All drivers are deterministic under their seeds and emit CSV plus a
key-value manifest so external tools can plot or re-check the numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import CovarianceModel, mahalanobis_inner, mahalanobis_norm
from .parallel import map_indexed
from .pipeline import GeneratorSource, PipelineConfig, PipelineError, run_pipeline
from .population import (
    DEFAULT_QUAD,
    GaussHermite,
    MixtureSpec,
    component_update,
    make_iterate,
    rate,
    run,
)

__all__ = [
    "TenStepRow",
    "TenStepTable",
    "FieldGrid",
    "ScalingResult",
    "ten_step_table",
    "field_grid",
    "scaling_study",
    "write_manifest",
    "write_tensteps_csv",
    "write_field_csv",
    "write_scaling_csv",
]

F17 = "{:.17g}"


@dataclass(frozen=True)
class TenStepRow:
    step: int
    lam: float
    relative_error: float
    kappa: float


@dataclass
class TenStepTable:
    snr: float
    target: float
    rows: list
    steps_needed: int


def ten_step_table(snr: float, target: float = 0.01, max_steps: int = 200,
                   quad: GaussHermite = DEFAULT_QUAD) -> TenStepTable:
    """One-dimensional run from the infinite start, tabulated per step.

    Columns are the iterate, its error relative to the noise scale, and
    the certificate; ``steps_needed`` is the first step whose relative
    error reaches ``target``.
    """
    if snr <= 0.0:
        raise ValueError(f"snr must be positive, got {snr}")
    spec = MixtureSpec(np.array([snr]), CovarianceModel.identity(1))
    traj = run(np.array([1.0]), spec, max_steps=max_steps, tol=target, quad=quad,
               infinite_start=True)
    rows = [
        TenStepRow(
            step=p.iterate.step,
            lam=float(p.iterate.vector[0]),
            relative_error=p.error,
            kappa=p.certificate.kappa,
        )
        for p in traj.points
    ]
    hits = [r.step for r in rows if r.relative_error <= target]
    steps_needed = hits[0] if hits else -1
    return TenStepTable(snr=snr, target=target, rows=rows, steps_needed=steps_needed)


@dataclass
class FieldGrid:
    """Per-cell EM update, certificate, actual decay, and basin label."""

    bounds: tuple
    resolution: int
    lam_in: np.ndarray  # (m, 2)
    lam_out: np.ndarray  # (m, 2)
    kappa: np.ndarray  # (m,)
    decay: np.ndarray  # (m,)
    basin: list  # "plus" | "minus" | "equidistant"


def _grid_cell(args):
    lam, spec, quad = args
    cov = spec.cov
    out = component_update(lam, spec.mean, cov, quad)
    align = mahalanobis_inner(lam, spec.mean, cov)
    if align > 0.0:
        basin, fixed_point = "plus", spec.mean
    elif align < 0.0:
        basin, fixed_point = "minus", -spec.mean
    else:
        basin, fixed_point = "equidistant", np.zeros(cov.dim)
    dist_in = mahalanobis_norm(lam - fixed_point, cov)
    dist_out = mahalanobis_norm(out - fixed_point, cov)
    decay = dist_out / dist_in if dist_in > 0.0 else 0.0
    if basin == "equidistant":
        kappa = 1.0
    else:
        ref = spec if basin == "plus" else MixtureSpec(-spec.mean, cov)
        kappa = rate(make_iterate(lam, 0, ref), ref).kappa
    return out, kappa, decay, basin


def field_grid(spec: MixtureSpec, bounds: tuple = (-4.0, 4.0), resolution: int = 81,
               quad: GaussHermite = DEFAULT_QUAD, workers: int = 1) -> FieldGrid:
    """Evaluate the update and its decay on a square grid (two dimensions only)."""
    if spec.dim != 2:
        raise ValueError(f"field grid is defined for dimension 2, got {spec.dim}")
    if resolution < 2:
        raise ValueError(f"resolution must be >= 2, got {resolution}")
    lo, hi = float(bounds[0]), float(bounds[1])
    if not lo < hi:
        raise ValueError(f"bounds must satisfy lo < hi, got {bounds}")
    axis = np.linspace(lo, hi, resolution)
    cells = [np.array([x1, x2]) for x2 in axis for x1 in axis]
    results = map_indexed(_grid_cell, [(lam, spec, quad) for lam in cells], workers)
    lam_out = np.array([r[0] for r in results])
    return FieldGrid(
        bounds=(lo, hi),
        resolution=resolution,
        lam_in=np.array(cells),
        lam_out=lam_out,
        kappa=np.array([r[1] for r in results]),
        decay=np.array([r[2] for r in results]),
        basin=[r[3] for r in results],
    )


@dataclass
class ScalingResult:
    """Median estimation error versus per-stage sample size, with a log-log fit."""

    n_values: list
    errors: list  # list of arrays, one per n (failed trials dropped)
    medians: list
    slope: float
    intercept: float
    residuals: list
    failures: int
    trials: int


def _run_scaling_trial(args):
    d, snr, epsilon, n, seed = args
    cov = CovarianceModel.identity(d)
    mu = np.zeros(d)
    mu[0] = snr
    source = GeneratorSource(mu, -mu, cov)
    config = PipelineConfig(epsilon=epsilon, n_center=n, n_init=n, n_step=n, seed=seed)
    try:
        return run_pipeline(config, source).final_error
    except PipelineError:
        return None


def scaling_study(d: int, snr: float, epsilon: float, n_values, trials: int,
                  master_seed: int, workers: int = 1) -> ScalingResult:
    """Run the full pipeline per (n, trial) and fit median error vs n.

    Requires at least 3 distinct n spanning a decade and >= 20 trials.
    Failed trials are dropped; more than 10% failures fails the study.
    """
    n_values = [int(n) for n in n_values]
    if len(n_values) < 3:
        raise ValueError(f"need at least 3 sample sizes, got {len(n_values)}")
    if min(n_values) <= 0:
        raise ValueError("sample sizes must be positive")
    if max(n_values) < 10 * min(n_values):
        raise ValueError(
            f"sample sizes must span at least one decade, got {min(n_values)}..{max(n_values)}"
        )
    if trials < 20:
        raise ValueError(f"need at least 20 trials per n, got {trials}")

    jobs = []
    for i, n in enumerate(n_values):
        for t in range(trials):
            seed = int(np.random.SeedSequence(master_seed, spawn_key=(i, t)).generate_state(1)[0])
            jobs.append((d, snr, epsilon, n, seed))
    outcomes = map_indexed(_run_scaling_trial, jobs, workers)

    errors, medians = [], []
    failures = 0
    for i, n in enumerate(n_values):
        errs = [e for e in outcomes[i * trials : (i + 1) * trials] if e is not None]
        failures += trials - len(errs)
        errors.append(np.array(errs))
        medians.append(float(np.median(errs)) if errs else math.nan)
    if failures > 0.1 * trials * len(n_values):
        raise PipelineError(
            "scaling", f"{failures} of {trials * len(n_values)} trials failed (over 10%)"
        )

    log_n = np.log(np.array(n_values, dtype=float))
    log_med = np.log(np.array(medians))
    slope, intercept = np.polyfit(log_n, log_med, 1)
    residuals = log_med - (slope * log_n + intercept)
    return ScalingResult(
        n_values=n_values,
        errors=errors,
        medians=medians,
        slope=float(slope),
        intercept=float(intercept),
        residuals=[float(r) for r in residuals],
        failures=failures,
        trials=trials,
    )


# -- CSV / manifest emission --------------------------------------------------

def write_manifest(path, entries: dict) -> None:
    """Key-value sidecar capturing the config and seeds behind an output."""
    path = Path(path)
    lines = [f"{k} = {entries[k]}" for k in sorted(entries)]
    path.write_text("\n".join(lines) + "\n")


def _fmt(value) -> str:
    if isinstance(value, float):
        return F17.format(value)
    return str(value)


def write_tensteps_csv(table: TenStepTable, path) -> None:
    lines = ["step,lambda,err,kappa"]
    for r in table.rows:
        lines.append(",".join([str(r.step), _fmt(r.lam), _fmt(r.relative_error), _fmt(r.kappa)]))
    Path(path).write_text("\n".join(lines) + "\n")


def write_field_csv(grid: FieldGrid, path) -> None:
    lines = ["lambda_in_1,lambda_in_2,lambda_out_1,lambda_out_2,kappa,decay,basin"]
    for i in range(grid.lam_in.shape[0]):
        lines.append(
            ",".join(
                [
                    _fmt(float(grid.lam_in[i, 0])),
                    _fmt(float(grid.lam_in[i, 1])),
                    _fmt(float(grid.lam_out[i, 0])),
                    _fmt(float(grid.lam_out[i, 1])),
                    _fmt(float(grid.kappa[i])),
                    _fmt(float(grid.decay[i])),
                    grid.basin[i],
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_scaling_csv(result: ScalingResult, path) -> None:
    lines = ["n,trial,error"]
    for n, errs in zip(result.n_values, result.errors):
        for t, e in enumerate(errs):
            lines.append(f"{n},{t},{_fmt(float(e))}")
    Path(path).write_text("\n".join(lines) + "\n")
