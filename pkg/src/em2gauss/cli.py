"""Command-line surface: converge, pipeline, field, scaling, tensteps.

Configuration is a flat key-value text file with dotted keys, e.g.

    model.mu = 1.0,0.0
    model.sigma = identity:2
    run.lambda0 = inf

Flags override file values (--seed, --out, --workers, and repeatable
--set key=value).  Exit codes: 0 success, 1 usage or config error,
2 algorithmic failure (non-convergence, stage failure).  Every CSV is
written with 17 significant digits and accompanied by a .manifest
sidecar capturing the resolved configuration and seeds.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .experiments import (
    field_grid,
    scaling_study,
    ten_step_table,
    write_field_csv,
    write_manifest,
    write_scaling_csv,
    write_tensteps_csv,
)
from .geometry import CovarianceModel
from .pipeline import (
    GeneratorSource,
    PipelineConfig,
    PipelineError,
    PoolSource,
    run_pipeline,
)
from .population import GaussHermite, MixtureSpec, run
from .sampling import load_batch

F17 = "{:.17g}"


class ConfigError(ValueError):
    """Bad or missing configuration; names the offending key."""


class Config:
    """Flat dotted-key configuration with typed accessors."""

    def __init__(self, entries: dict):
        self.entries = dict(entries)

    @classmethod
    def load(cls, path=None, overrides=()) -> "Config":
        entries = {}
        if path is not None:
            text = Path(path).read_text()
            for lineno, raw in enumerate(text.splitlines(), start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
                key, _, value = line.partition("=")
                entries[key.strip()] = value.strip()
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            key, _, value = item.partition("=")
            entries[key.strip()] = value.strip()
        return cls(entries)

    def dump(self, path) -> None:
        """Write entries back out; load(dump(cfg)) reproduces cfg exactly."""
        lines = [f"{k} = {self.entries[k]}" for k in sorted(self.entries)]
        Path(path).write_text("\n".join(lines) + "\n")

    def has(self, key: str) -> bool:
        return key in self.entries

    def raw(self, key: str, default=None, required: bool = False) -> str:
        if key in self.entries:
            return self.entries[key]
        if required:
            raise ConfigError(f"missing required config key {key}")
        return default

    def get_float(self, key: str, default=None, required: bool = False):
        raw = self.raw(key, required=required)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"config key {key} must be a number, got {raw!r}") from None

    def get_int(self, key: str, default=None, required: bool = False):
        raw = self.raw(key, required=required)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"config key {key} must be an integer, got {raw!r}") from None

    def get_bool(self, key: str, default=False):
        raw = self.raw(key)
        if raw is None:
            return default
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"config key {key} must be a boolean, got {raw!r}")

    def get_vector(self, key: str, required: bool = False):
        raw = self.raw(key, required=required)
        if raw is None:
            return None
        try:
            return np.array([float(v) for v in raw.split(",")])
        except ValueError:
            raise ConfigError(f"config key {key} must be a comma list of numbers, got {raw!r}") from None

    def get_sigma(self, key: str, dim: int = None, required: bool = True):
        """Sigma as `identity:d`, `diag:a,b,...`, or literal rows `a,b;c,d`."""
        raw = self.raw(key, required=required)
        if raw is None:
            if dim is not None:
                return CovarianceModel.identity(dim)
            raise ConfigError(f"missing required config key {key}")
        try:
            if raw.startswith("identity:"):
                return CovarianceModel.identity(int(raw.split(":", 1)[1]))
            if raw.startswith("diag:"):
                return CovarianceModel.diagonal([float(v) for v in raw.split(":", 1)[1].split(",")])
            rows = [[float(v) for v in row.split(",")] for row in raw.split(";")]
            return CovarianceModel(np.array(rows))
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"config key {key}: invalid covariance: {exc}") from None


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return F17.format(float(v))
    return str(v)


def _write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _manifest_entries(command, cfg: Config, seed, out, workers, extra=None) -> dict:
    entries = {f"config.{k}": v for k, v in cfg.entries.items()}
    entries.update({"command": command, "seed": seed, "out": str(out), "workers": workers})
    if extra:
        entries.update({k: _fmt(v) for k, v in extra.items()})
    return entries


def cmd_converge(cfg: Config, seed: int, out: str, workers: int) -> int:
    mu = cfg.get_vector("model.mu", required=True)
    cov = cfg.get_sigma("model.sigma", dim=mu.size, required=False)
    spec = MixtureSpec(mu, cov)
    raw0 = cfg.raw("run.lambda0", required=True)
    infinite = raw0 == "inf" or raw0.startswith("inf:")
    if raw0 == "inf":
        if spec.dim != 1:
            raise ConfigError("run.lambda0 = inf needs a direction for dim > 1: use inf:d1,d2,...")
        lam0 = np.array([1.0])
    elif infinite:
        lam0 = np.array([float(v) for v in raw0.split(":", 1)[1].split(",")])
    else:
        lam0 = cfg.get_vector("run.lambda0")
    if lam0.size != spec.dim:
        raise ConfigError(f"run.lambda0 has dimension {lam0.size}, model.mu has {spec.dim}")
    max_steps = cfg.get_int("run.max_steps", 10_000)
    tol = cfg.get_float("run.tol", 1e-6)
    quad = GaussHermite(cfg.get_int("quad.order", 80))

    traj = run(lam0, spec, max_steps=max_steps, tol=tol, quad=quad, infinite_start=infinite)
    header = ["step"] + [f"lambda_{j + 1}" for j in range(spec.dim)] + ["err", "kappa"]
    rows = [
        [p.iterate.step, *[float(v) for v in p.iterate.vector], p.error, p.certificate.kappa]
        for p in traj.points
    ]
    _write_csv(out, header, rows)
    write_manifest(
        str(out) + ".manifest",
        _manifest_entries(
            "converge", cfg, seed, out, workers,
            {"termination": traj.reason, "target_sign": traj.target_sign, "steps": len(traj) - 1},
        ),
    )
    return 0 if traj.reason in ("converged", "fixed_at_zero") else 2


def cmd_pipeline(cfg: Config, seed: int, out: str, workers: int) -> int:
    epsilon = cfg.get_float("pipeline.epsilon", required=True)
    config = PipelineConfig(
        epsilon=epsilon,
        eta=cfg.get_float("pipeline.eta", 0.05),
        n_center=cfg.get_int("pipeline.n_center"),
        n_init=cfg.get_int("pipeline.n_init"),
        n_step=cfg.get_int("pipeline.n_step"),
        bootstrap_cap=cfg.get_int("pipeline.bootstrap_cap"),
        main_steps=cfg.get_int("pipeline.main_steps"),
        blowup=cfg.get_float("pipeline.blowup"),
        allow_reuse=cfg.get_bool("pipeline.reuse", False),
        seed=seed,
        workers=workers,
    )
    if cfg.has("input.csv"):
        batch = load_batch(cfg.raw("input.csv"))
        cov = batch.cov if batch.cov is not None else cfg.get_sigma("model.sigma", required=True)
        source = PoolSource(batch.points, cov)
        synthetic = False
    else:
        mu1 = cfg.get_vector("model.mu1", required=True)
        mu2 = cfg.get_vector("model.mu2", required=True)
        cov = cfg.get_sigma("model.sigma", dim=mu1.size, required=False)
        source = GeneratorSource(mu1, mu2, cov)
        synthetic = True

    result = run_pipeline(config, source)

    if synthetic:
        header = ["step", "err_mahalanobis", "alignment", "batch_size", "seed_stream"]
        rows = [[s.step, s.error, s.alignment, s.batch_size, s.seed_stream] for s in result.steps]
    else:
        header = ["step", "alignment", "batch_size", "seed_stream"]
        rows = [[s.step, s.alignment, s.batch_size, s.seed_stream] for s in result.steps]
    _write_csv(out, header, rows)

    extra = {
        "estimate.plus": ",".join(F17.format(v) for v in result.pair[0]),
        "estimate.minus": ",".join(F17.format(v) for v in result.pair[1]),
        "center": ",".join(F17.format(v) for v in result.center.center),
        "snr_hat": result.snr_hat,
        "eigen_gap": result.eigen_gap,
        "blowup": result.blowup,
        "bootstrap.iterations": result.bootstrap.iterations_done,
    }
    if result.final_error is not None:
        extra["final_error"] = result.final_error
        extra["center_error"] = result.center_error
        extra["true_alignment"] = result.true_alignment
    write_manifest(str(out) + ".manifest", _manifest_entries("pipeline", cfg, seed, out, workers, extra))
    print(f"estimate.plus = {extra['estimate.plus']}")
    print(f"estimate.minus = {extra['estimate.minus']}")
    if result.final_error is not None:
        print(f"final_error = {F17.format(result.final_error)}")
    return 0


def cmd_field(cfg: Config, seed: int, out: str, workers: int) -> int:
    mu = cfg.get_vector("model.mu", required=True)
    if mu.size != 2:
        raise ConfigError(f"field requires a 2-dimensional model.mu, got dimension {mu.size}")
    cov = cfg.get_sigma("model.sigma", dim=2, required=False)
    bounds_raw = cfg.raw("field.bounds", "-4,4")
    try:
        lo, hi = (float(v) for v in bounds_raw.split(","))
    except ValueError:
        raise ConfigError(f"config key field.bounds must be 'lo,hi', got {bounds_raw!r}") from None
    resolution = cfg.get_int("field.resolution", 81)
    quad = GaussHermite(cfg.get_int("quad.order", 80))

    grid = field_grid(MixtureSpec(mu, cov), bounds=(lo, hi), resolution=resolution,
                      quad=quad, workers=workers)
    write_field_csv(grid, out)
    write_manifest(str(out) + ".manifest",
                   _manifest_entries("field", cfg, seed, out, workers, {"cells": resolution**2}))
    return 0


def cmd_scaling(cfg: Config, seed: int, out: str, workers: int) -> int:
    d = cfg.get_int("scaling.d", required=True)
    snr = cfg.get_float("scaling.snr", required=True)
    epsilon = cfg.get_float("scaling.epsilon", required=True)
    n_raw = cfg.raw("scaling.n_list", required=True)
    try:
        n_values = [int(v) for v in n_raw.split(",")]
    except ValueError:
        raise ConfigError(f"config key scaling.n_list must be a comma list of integers, got {n_raw!r}") from None
    trials = cfg.get_int("scaling.trials", required=True)

    result = scaling_study(d, snr, epsilon, n_values, trials, master_seed=seed, workers=workers)
    write_scaling_csv(result, out)
    extra = {
        "slope": result.slope,
        "intercept": result.intercept,
        "failures": result.failures,
        "medians": ",".join(F17.format(m) for m in result.medians),
    }
    write_manifest(str(out) + ".manifest", _manifest_entries("scaling", cfg, seed, out, workers, extra))
    print(f"slope = {F17.format(result.slope)}")
    return 0


def cmd_tensteps(cfg: Config, seed: int, out: str, workers: int) -> int:
    snr = cfg.get_float("model.snr", required=True)
    target = cfg.get_float("tensteps.target", 0.01)
    quad = GaussHermite(cfg.get_int("quad.order", 80))
    table = ten_step_table(snr, target=target, quad=quad)
    write_tensteps_csv(table, out)
    write_manifest(str(out) + ".manifest",
                   _manifest_entries("tensteps", cfg, seed, out, workers,
                                     {"steps_needed": table.steps_needed}))
    return 0 if table.steps_needed >= 0 else 2


_COMMANDS = {
    "converge": cmd_converge,
    "pipeline": cmd_pipeline,
    "field": cmd_field,
    "scaling": cmd_scaling,
    "tensteps": cmd_tensteps,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="em2gauss",
        description="Population and finite-sample EM for symmetric two-Gaussian mixtures.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None, help="key-value config file")
        p.add_argument("--seed", type=int, default=None, help="master seed (uint64)")
        p.add_argument("--out", type=str, required=True, help="output CSV path")
        p.add_argument("--workers", type=int, default=None, help="worker threads")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = Config.load(args.config, args.set)
        # Flags override file values; fall back to config, then defaults.
        seed = args.seed if args.seed is not None else cfg.get_int("seed", 0)
        workers = args.workers if args.workers is not None else cfg.get_int("workers", 1)
        code = _COMMANDS[args.command](cfg, seed, args.out, max(1, workers))
        return code
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except PipelineError as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
