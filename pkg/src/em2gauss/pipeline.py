"""Finite-sample estimation pipeline: center, bootstrap, iterate.

Three stages turn raw mixture samples into an estimate of the component
means when only the covariance is known:

1. Centering: the mixture mean is estimated per whitened axis as the
   average of the first and third empirical quartiles, which is robust to
   the bimodal shape.
2. Initialization: EM run at a tiny magnitude linearizes tanh, turning
   the iteration into power iteration on the whitened empirical second
   moment (whose top eigenvector is the separation direction with
   eigenvalue 1 + snr^2).  Renormalizing every step keeps it in the
   linear regime; a direction that stops moving is the initializer.
3. Main execution: blow the direction up to a magnitude safely above the
   data radius and run the stabilized sample EM update with a fresh,
   seeded batch per step.

The reported estimate is the unordered pair (c + lam, c - lam).  Stage
failures raise :class:`PipelineError` subclasses carrying a stage tag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import CovarianceModel, mahalanobis_norm, unwhiten, whiten
from .parallel import block_row_sum
from .sampling import SampleBatch, draw, rng_stream, stabilize, standard_normals

__all__ = [
    "PipelineError",
    "PreconditionError",
    "InitializationError",
    "NoSignalError",
    "CenterEstimate",
    "BootstrapState",
    "PipelineConfig",
    "StepDiagnostic",
    "PipelineResult",
    "GeneratorSource",
    "PoolSource",
    "quartile",
    "estimate_center",
    "empirical_covariance",
    "sample_update",
    "bootstrap_init",
    "run_pipeline",
    "STREAM_CENTER",
    "STREAM_INIT",
    "STREAM_PROBE",
    "STREAM_DIRECTION",
    "STREAM_MAIN_BASE",
]

# Fixed substream ids per stage; main-loop step t uses STREAM_MAIN_BASE + t.
STREAM_CENTER = 0
STREAM_INIT = 1
STREAM_PROBE = 2
STREAM_DIRECTION = 3
STREAM_MAIN_BASE = 10

NO_SIGNAL_GAP = 1.05
DIRECTION_ANGLE_TOL = 0.1


class PipelineError(RuntimeError):
    """A pipeline stage failed; ``stage`` carries the tag."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class PreconditionError(PipelineError):
    """Target accuracy is not smaller than the estimated signal."""


class InitializationError(PipelineError):
    """Bootstrap direction failed to stabilize within the iteration cap."""


class NoSignalError(InitializationError):
    """Empirical top-eigenvalue gap too small to carry a direction."""


def quartile(values, which: str) -> float:
    """Order statistic at rank ceil(n/4) (first) or ceil(3n/4) (third)."""
    values = np.asarray(values, dtype=float).ravel()
    n = values.size
    if n < 4:
        raise ValueError(f"need at least 4 values for a quartile, got {n}")
    if which == "first":
        rank = math.ceil(n / 4)
    elif which == "third":
        rank = math.ceil(3 * n / 4)
    else:
        raise ValueError(f"which must be 'first' or 'third', got {which!r}")
    return float(np.partition(values, rank - 1)[rank - 1])


@dataclass(frozen=True)
class CenterEstimate:
    """Quartile-average estimate of the mixture mean (mu1 + mu2) / 2."""

    center: np.ndarray
    per_axis_quartiles: np.ndarray  # (d, 2) first/third pairs, whitened axes
    n_used: int


def estimate_center(batch: SampleBatch, cov: CovarianceModel = None) -> CenterEstimate:
    """Per-whitened-axis average of first and third empirical quartiles."""
    cov = cov or batch.cov
    if cov is None:
        raise ValueError("no covariance model available for centering")
    if batch.stabilized:
        raise ValueError("centering a stabilized batch is meaningless: its mean is 0 by construction")
    if batch.centered_by is not None:
        raise ValueError("batch is already centered")
    if batch.n < 8:
        raise ValueError(f"need at least 8 samples to center, got {batch.n}")
    xw = whiten(batch.points, cov)
    pairs = np.empty((cov.dim, 2))
    for j in range(cov.dim):
        pairs[j, 0] = quartile(xw[:, j], "first")
        pairs[j, 1] = quartile(xw[:, j], "third")
    center_w = pairs.mean(axis=1)
    return CenterEstimate(center=unwhiten(center_w, cov), per_axis_quartiles=pairs, n_used=batch.n)


def empirical_covariance(batch: SampleBatch, cov: CovarianceModel = None, workers: int = 1) -> np.ndarray:
    """Second moment (1/n) sum x x^T of the whitened stabilized batch."""
    cov = cov or batch.cov
    if cov is None:
        raise ValueError("no covariance model available")
    if not batch.stabilized:
        raise ValueError("empirical_covariance expects a stabilized batch")
    if batch.n == 0:
        raise ValueError("batch is empty")
    xw = whiten(batch.points, cov)
    total = block_row_sum(lambda lo, hi: xw[lo:hi].T @ xw[lo:hi], batch.n, workers)
    m = total / batch.n
    return 0.5 * (m + m.T)


def sample_update(lam, batch: SampleBatch, cov: CovarianceModel = None, workers: int = 1) -> np.ndarray:
    """Stabilized sample EM step: mean of tanh(<lam, x_i>_Sigma) x_i."""
    cov = cov or batch.cov
    if cov is None:
        raise ValueError("no covariance model available")
    if not batch.stabilized:
        raise ValueError("sample_update expects a stabilized batch")
    if batch.n == 0:
        raise ValueError("batch is empty")
    lam = cov.check_vector(lam, "lam")
    w = whiten(lam, cov)
    xw = whiten(batch.points, cov)

    def rows(lo, hi):
        t = np.tanh(xw[lo:hi] @ w)
        return t @ batch.points[lo:hi]

    return block_row_sum(rows, batch.n, workers) / batch.n


@dataclass(frozen=True)
class BootstrapState:
    """Outcome of the tiny-magnitude power-iteration bootstrap.

    ``direction`` is unit in Mahalanobis norm with arbitrary sign;
    ``magnitude`` is the linear-regime scale sqrt(2/S) * epsilon with
    S = sum ||x_i||_Sigma^3 over the batch.
    """

    direction: np.ndarray
    magnitude: float
    cubic_mass: float  # S above
    iterations_done: int


def _top_two_eigenvalues(matrix: np.ndarray):
    evals = np.linalg.eigvalsh(matrix)
    if evals.size == 1:
        # One dimension: the whitened noise floor plays the second eigenvalue.
        return float(evals[-1]), 1.0
    return float(evals[-1]), float(evals[-2])


def default_bootstrap_cap(dim: int, snr2_hat: float) -> int:
    return max(1, math.ceil(8.0 * math.log2(max(dim, 2)) / min(max(snr2_hat, 1e-12), 1.0)))


def bootstrap_init(
    batch: SampleBatch,
    cov: CovarianceModel = None,
    epsilon: float = 0.1,
    max_iters: Optional[int] = None,
    seed: int = 0,
    angle_tol: float = DIRECTION_ANGLE_TOL,
    workers: int = 1,
) -> BootstrapState:
    """Find a well-aligned unit starting direction by renormalized EM.

    Runs the sample EM update at magnitude sqrt(2/S) * epsilon, rescaling
    back to that magnitude after every step, from a seeded uniform random
    direction.  Stops once successive directions differ by at most
    ``angle_tol`` radians; exhausting the cap first raises
    :class:`InitializationError` (retry with a new seed), and a top
    eigenvalue gap under 1.05 raises :class:`NoSignalError`.
    """
    cov = cov or batch.cov
    if cov is None:
        raise ValueError("no covariance model available")
    if not batch.stabilized:
        raise ValueError("bootstrap_init expects a stabilized batch")
    if epsilon <= 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")

    xw = whiten(batch.points, cov)
    gap = None
    if max_iters is None or max_iters <= 0:
        cov_hat = empirical_covariance(batch, cov, workers)
        top, second = _top_two_eigenvalues(cov_hat)
        gap = top / max(second, 1e-300)
        if gap < NO_SIGNAL_GAP:
            raise NoSignalError(
                "init",
                f"top eigenvalue gap {gap:.4f} below {NO_SIGNAL_GAP}: no usable separation direction",
            )
        max_iters = default_bootstrap_cap(cov.dim, max(top - 1.0, 0.0))

    norms = np.linalg.norm(xw, axis=1)
    cubic_mass = float(np.sum(norms**3))
    if cubic_mass == 0.0:
        raise NoSignalError("init", "batch has zero cubic mass; all points at the origin")
    magnitude = math.sqrt(2.0 / cubic_mass) * epsilon

    rng = rng_stream(seed, STREAM_DIRECTION)
    g = standard_normals(rng, cov.dim)
    direction_w = g / np.linalg.norm(g)

    def em_step_w(v):
        # One stabilized EM update of magnitude * v, all in whitened coords
        # (whitening is linear, so this equals whiten(sample_update(...))).
        def rows(lo, hi):
            t = np.tanh(xw[lo:hi] @ (magnitude * v))
            return t @ xw[lo:hi]

        return block_row_sum(rows, batch.n, workers) / batch.n

    # Run the whole cap: the successive-direction angle is not monotone (it
    # dips near a weakly aligned start before the signal takes over), so an
    # early exit on the first small angle would return a random direction.
    iterations = 0
    angle = math.inf
    for _ in range(max_iters):
        nxt_w = em_step_w(direction_w)
        nrm = float(np.linalg.norm(nxt_w))
        if nrm == 0.0:
            raise NoSignalError("init", "EM update collapsed to zero during bootstrap")
        new_dir = nxt_w / nrm
        angle = math.acos(float(np.clip(direction_w @ new_dir, -1.0, 1.0)))
        direction_w = new_dir
        iterations += 1
    if angle > angle_tol:
        raise InitializationError(
            "init",
            f"direction still moving by {angle:.3f} rad after {max_iters} iterations "
            f"(tolerance {angle_tol}); retry with a new seed",
        )
    return BootstrapState(
        direction=unwhiten(direction_w, cov),
        magnitude=magnitude,
        cubic_mass=cubic_mass,
        iterations_done=iterations,
    )


@dataclass
class PipelineConfig:
    """Desk-scale knobs for the three-stage pipeline.

    Sample sizes default to ceil(100 * d * ln(1/eta) / epsilon^2), with an
    extra max(1, ln d) factor for the centering stage; these constants are
    empirical calibrations, frozen here.  ``blowup`` defaults to 4x the
    largest Mahalanobis radius over a 64-point probe batch.
    """

    epsilon: float
    eta: float = 0.05
    n_center: Optional[int] = None
    n_init: Optional[int] = None
    n_step: Optional[int] = None
    bootstrap_cap: Optional[int] = None
    main_steps: Optional[int] = None
    blowup: Optional[float] = None
    probe_size: int = 64
    allow_reuse: bool = False
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if not (self.epsilon > 0.0):
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not (0.0 < self.eta < 1.0):
            raise ValueError(f"eta must lie in (0, 1), got {self.eta}")
        for name in ("n_center", "n_init", "n_step"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"{name} must be >= 1, got {v}")
        if self.blowup is not None and self.blowup <= 0.0:
            raise ValueError(f"blowup must be positive, got {self.blowup}")

    def resolved_sizes(self, dim: int):
        log_eta = math.log(1.0 / self.eta)
        base = math.ceil(100.0 * dim * log_eta / self.epsilon**2)
        n_center = self.n_center or math.ceil(base * max(1.0, math.log(dim)))
        n_init = self.n_init or base
        n_step = self.n_step or base
        return n_center, n_init, n_step


@dataclass(frozen=True)
class StepDiagnostic:
    step: int
    error: Optional[float]  # sign-resolved, synthetic mode only
    alignment: float  # current direction vs bootstrap direction
    batch_size: int
    seed_stream: int


@dataclass
class PipelineResult:
    estimate: np.ndarray  # lam*, the centered half-separation estimate
    pair: tuple  # (c + lam*, c - lam*)
    center: CenterEstimate
    bootstrap: BootstrapState
    steps: list
    snr_hat: float
    eigen_gap: float
    blowup: float
    # Synthetic-mode extras (None in estimation mode):
    final_error: Optional[float] = None
    center_error: Optional[float] = None
    true_alignment: Optional[float] = None


class GeneratorSource:
    """Synthetic source: draws fresh seeded batches; ground truth known."""

    def __init__(self, mu1, mu2, cov: CovarianceModel):
        self.mu1 = cov.check_vector(mu1, "mu1")
        self.mu2 = cov.check_vector(mu2, "mu2")
        self.cov = cov
        self.half_separation = 0.5 * (self.mu1 - self.mu2)
        self.true_center = 0.5 * (self.mu1 + self.mu2)

    @property
    def dim(self) -> int:
        return self.cov.dim

    def take(self, n: int, seed: int, stream: int) -> SampleBatch:
        return draw(n, self.mu1, self.mu2, self.cov, seed, stream)


class PoolSource:
    """Estimation source: a finite pool of points consumed in file order."""

    def __init__(self, points, cov: CovarianceModel):
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != cov.dim:
            raise ValueError(f"points must be (n, {cov.dim}), got shape {points.shape}")
        self.points = points
        self.cov = cov
        self.cursor = 0

    @property
    def dim(self) -> int:
        return self.cov.dim

    def take(self, n: int, seed: int, stream: int) -> SampleBatch:
        if self.cursor + n > self.points.shape[0]:
            if stream == STREAM_CENTER:
                stage = "center"
            elif stream in (STREAM_INIT, STREAM_DIRECTION):
                stage = "init"
            elif stream == STREAM_PROBE:
                stage = "probe"
            else:
                stage = "main"
            raise PipelineError(
                stage,
                f"sample pool exhausted: need {n} more points, "
                f"have {self.points.shape[0] - self.cursor}",
            )
        chunk = self.points[self.cursor : self.cursor + n]
        self.cursor += n
        return SampleBatch(points=chunk, cov=self.cov)


def _sign_resolved_error(lam, target, cov) -> float:
    return min(
        mahalanobis_norm(lam - target, cov),
        mahalanobis_norm(lam + target, cov),
    )


def run_pipeline(config: PipelineConfig, source) -> PipelineResult:
    """Run centering, bootstrap initialization, and the stabilized main loop.

    ``source`` is a :class:`GeneratorSource` (synthetic mode, errors
    reported against the known truth) or a :class:`PoolSource` (estimation
    mode).  Identical config and seed reproduce the result bit for bit.
    """
    cov = source.cov
    dim = source.dim
    synthetic = isinstance(source, GeneratorSource)
    n_center, n_init, n_step = config.resolved_sizes(dim)
    seed = config.seed
    workers = config.workers

    # Stage 1: centering.
    center_batch = source.take(n_center, seed, STREAM_CENTER)
    center = estimate_center(center_batch, cov)
    c = center.center

    # Stage 2: bootstrap initialization.
    init_raw = source.take(n_init, seed, STREAM_INIT)
    init_batch = stabilize(init_raw, c)
    cov_hat = empirical_covariance(init_batch, cov, workers)
    top, second = _top_two_eigenvalues(cov_hat)
    eigen_gap = top / max(second, 1e-300)
    if eigen_gap < NO_SIGNAL_GAP:
        raise NoSignalError(
            "init",
            f"top eigenvalue gap {eigen_gap:.4f} below {NO_SIGNAL_GAP}: no usable separation",
        )
    snr2_hat = max(top - 1.0, 0.0)
    snr_hat = math.sqrt(snr2_hat)
    if config.epsilon > snr_hat:
        raise PreconditionError(
            "init",
            f"target accuracy epsilon={config.epsilon:g} exceeds estimated snr {snr_hat:.4g}",
        )
    cap = config.bootstrap_cap or default_bootstrap_cap(dim, snr2_hat)
    boot = bootstrap_init(
        init_batch, cov, epsilon=config.epsilon, max_iters=cap, seed=seed, workers=workers
    )

    # Stage 3: main execution.
    if config.blowup is None:
        probe = source.take(config.probe_size, seed, STREAM_PROBE)
        radii = np.linalg.norm(whiten(probe.points - c[None, :], cov), axis=1)
        blowup = 4.0 * float(radii.max())
    else:
        blowup = config.blowup
    steps = config.main_steps
    if steps is None:
        steps = max(1, math.ceil(8.0 * max(1.0, 1.0 / snr2_hat) * max(math.log(1.0 / config.epsilon), 1.0)))

    lam = blowup * boot.direction
    boot_dir_w = whiten(boot.direction, cov)
    target = source.half_separation if synthetic else None
    diagnostics = []
    reusable = None
    for t in range(steps):
        stream = STREAM_MAIN_BASE + t
        if config.allow_reuse:
            if reusable is None:
                reusable = stabilize(source.take(n_step, seed, STREAM_MAIN_BASE), c)
            batch = reusable
            stream = STREAM_MAIN_BASE
        else:
            batch = stabilize(source.take(n_step, seed, stream), c)
        lam = sample_update(lam, batch, cov, workers)
        lam_w = whiten(lam, cov)
        nrm = float(np.linalg.norm(lam_w))
        align = float(lam_w @ boot_dir_w / nrm) if nrm > 0 else 0.0
        err = _sign_resolved_error(lam, target, cov) if synthetic else None
        diagnostics.append(
            StepDiagnostic(step=t, error=err, alignment=align, batch_size=batch.n, seed_stream=stream)
        )

    result = PipelineResult(
        estimate=lam,
        pair=(c + lam, c - lam),
        center=center,
        bootstrap=boot,
        steps=diagnostics,
        snr_hat=snr_hat,
        eigen_gap=eigen_gap,
        blowup=blowup,
    )
    if synthetic:
        result.final_error = _sign_resolved_error(lam, target, cov)
        result.center_error = mahalanobis_norm(c - source.true_center, cov)
        lam_w = whiten(lam, cov)
        mu_w = whiten(target, cov)
        denom = np.linalg.norm(lam_w) * np.linalg.norm(mu_w)
        result.true_alignment = float(lam_w @ mu_w / denom) if denom > 0 else 0.0
    return result
