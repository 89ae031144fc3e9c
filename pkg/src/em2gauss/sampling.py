"""Seeded draws from the mixture, stabilization, and the Monte Carlo oracle.

Randomness contract
-------------------
All streams come from the counter-based Philox generator keyed with the
pair (seed, stream_id), so independent substreams are addressed by name
and reproduce bit-exactly for a given build.  Uniforms are the centered
dyadic lattice (k + 1/2) / 2^53 (strictly inside (0, 1)), and Gaussians
are their inverse normal CDF images, so the whole pipeline from seed to
sample is an explicit deterministic function.

Per draw, the component coins are consumed first, then the normal block,
in row-major order.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import ndtri

from .geometry import CovarianceModel, unwhiten, whiten

__all__ = [
    "SampleBatch",
    "rng_stream",
    "uniforms",
    "standard_normals",
    "draw",
    "stabilize",
    "mc_update",
    "save_batch",
    "load_batch",
]

_TWO53 = float(2**53)


def rng_stream(seed: int, stream: int = 0) -> np.random.Generator:
    """Named Philox substream: same (seed, stream) always yields same bits."""
    key = np.array([np.uint64(seed & (2**64 - 1)), np.uint64(stream & (2**64 - 1))])
    return np.random.Generator(np.random.Philox(key=key))


def uniforms(rng: np.random.Generator, shape) -> np.ndarray:
    """Uniforms on the centered dyadic lattice, strictly inside (0, 1)."""
    k = rng.integers(0, 2**53, size=shape, dtype=np.int64)
    return (k + 0.5) / _TWO53


def standard_normals(rng: np.random.Generator, shape) -> np.ndarray:
    """Inverse-CDF standard normals from :func:`uniforms`."""
    return ndtri(uniforms(rng, shape))


@dataclass(frozen=True)
class SampleBatch:
    """Points drawn from a two-component mixture, plus their provenance.

    ``mu1``/``mu2``/``cov``/``seed`` are None for batches loaded without
    metadata.  A stabilized batch holds (x, -x) pairs interleaved, so its
    sum is exactly zero; ``centered_by`` records the translation applied
    before pairing.
    """

    points: np.ndarray
    mu1: Optional[np.ndarray] = None
    mu2: Optional[np.ndarray] = None
    cov: Optional[CovarianceModel] = None
    seed: Optional[int] = None
    stream: Optional[int] = None
    stabilized: bool = False
    centered_by: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2:
            raise ValueError(f"points must be an (n, d) array, got shape {pts.shape}")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def draw(n: int, mu1, mu2, cov: CovarianceModel, seed: int, stream: int = 0) -> SampleBatch:
    """n independent draws from 0.5 N(mu1, Sigma) + 0.5 N(mu2, Sigma).

    A fair coin picks the component, then the standard normal block is
    colored through the covariance factor.
    """
    if n < 1:
        raise ValueError(f"need n >= 1 samples, got {n}")
    mu1 = cov.check_vector(mu1, "mu1")
    mu2 = cov.check_vector(mu2, "mu2")
    rng = rng_stream(seed, stream)
    coins = uniforms(rng, n) < 0.5
    z = standard_normals(rng, (n, cov.dim))
    means = np.where(coins[:, None], mu1[None, :], mu2[None, :])
    points = means + unwhiten(z, cov)
    return SampleBatch(points=points, mu1=mu1, mu2=mu2, cov=cov, seed=int(seed), stream=int(stream))


def stabilize(batch: SampleBatch, center) -> SampleBatch:
    """Translate by ``center`` and add the mirror point for every point.

    The result interleaves (x - c, -(x - c)) pairs; its sum is exactly 0.
    Stabilizing twice is an error.
    """
    if batch.stabilized:
        raise ValueError("batch is already stabilized")
    c = np.asarray(center, dtype=float)
    if c.shape != (batch.dim,):
        raise ValueError(f"center has shape {c.shape}, expected ({batch.dim},)")
    shifted = batch.points - c[None, :]
    paired = np.empty((2 * batch.n, batch.dim))
    paired[0::2] = shifted
    paired[1::2] = -shifted
    return replace(batch, points=paired, stabilized=True, centered_by=c)


def _resolve_means(means, cov):
    # Accept a MixtureSpec-like object (mean, cov, symmetric pair) or (mu1, mu2).
    if hasattr(means, "mean") and hasattr(means, "cov"):
        return means.mean, -means.mean, means.cov
    mu1, mu2 = means
    if cov is None:
        raise ValueError("cov is required when passing raw means")
    return np.asarray(mu1, float), np.asarray(mu2, float), cov


def mc_update(lam, means, cov: CovarianceModel = None, n: int = 10**6, seed: int = 0, stream: int = 0):
    """Monte Carlo estimate of the population EM update, with standard errors.

    Draws n fresh mixture samples and averages tanh(<lam, x>_Sigma) x.
    Returns (estimate, per-coordinate standard errors).  This is the
    brute-force oracle the quadrature path is validated against; the two
    share no code beyond the geometry.
    """
    if n < 1000:
        raise ValueError(f"Monte Carlo oracle needs n >= 1000, got {n}")
    mu1, mu2, cov = _resolve_means(means, cov)
    lam = cov.check_vector(lam, "lam")
    batch = draw(n, mu1, mu2, cov, seed, stream)
    t = np.tanh(whiten(batch.points, cov) @ whiten(lam, cov))
    values = t[:, None] * batch.points
    estimate = values.mean(axis=0)
    se = values.std(axis=0, ddof=1) / np.sqrt(n)
    return estimate, se


# -- CSV export / import ----------------------------------------------------

def _format_matrix(m: np.ndarray) -> str:
    return ";".join(",".join(f"{v:.17g}" for v in row) for row in m)


def _parse_matrix(text: str) -> np.ndarray:
    return np.array([[float(v) for v in row.split(",")] for row in text.split(";")])


def _format_vector(v: np.ndarray) -> str:
    return ",".join(f"{x:.17g}" for x in v)


def save_batch(batch: SampleBatch, path) -> None:
    """Write points as CSV (header x1..xd) plus a key-value .meta sidecar."""
    path = Path(path)
    header = ",".join(f"x{j + 1}" for j in range(batch.dim))
    lines = [header]
    for row in batch.points:
        lines.append(",".join(f"{v:.17g}" for v in row))
    path.write_text("\n".join(lines) + "\n")

    meta = {
        "n": str(batch.n),
        "dim": str(batch.dim),
        "stabilized": str(batch.stabilized).lower(),
    }
    if batch.seed is not None:
        meta["seed"] = str(batch.seed)
    if batch.stream is not None:
        meta["stream"] = str(batch.stream)
    if batch.mu1 is not None:
        meta["mu1"] = _format_vector(batch.mu1)
    if batch.mu2 is not None:
        meta["mu2"] = _format_vector(batch.mu2)
    if batch.cov is not None:
        meta["sigma"] = _format_matrix(batch.cov.sigma)
    if batch.centered_by is not None:
        meta["centered_by"] = _format_vector(batch.centered_by)
    meta_path = path.with_suffix(path.suffix + ".meta")
    meta_path.write_text("".join(f"{k} = {v}\n" for k, v in sorted(meta.items())))


def load_batch(path) -> SampleBatch:
    """Read a batch written by :func:`save_batch`; metadata is optional."""
    path = Path(path)
    lines = path.read_text().strip().splitlines()
    if not lines:
        raise ValueError(f"{path} is empty")
    points = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    if points.size == 0:
        raise ValueError(f"{path} contains a header but no points")

    meta = {}
    meta_path = path.with_suffix(path.suffix + ".meta")
    if meta_path.exists():
        for line in meta_path.read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()

    cov = CovarianceModel(_parse_matrix(meta["sigma"])) if "sigma" in meta else None
    return SampleBatch(
        points=points,
        mu1=np.array([float(v) for v in meta["mu1"].split(",")]) if "mu1" in meta else None,
        mu2=np.array([float(v) for v in meta["mu2"].split(",")]) if "mu2" in meta else None,
        cov=cov,
        seed=int(meta["seed"]) if "seed" in meta else None,
        stream=int(meta["stream"]) if "stream" in meta else None,
        stabilized=meta.get("stabilized", "false") == "true",
        centered_by=(
            np.array([float(v) for v in meta["centered_by"].split(",")])
            if "centered_by" in meta
            else None
        ),
    )
