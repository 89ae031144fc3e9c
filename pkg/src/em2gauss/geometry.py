"""Mahalanobis geometry for a known covariance matrix.

Everything in this package measures vectors against a fixed, known
covariance Sigma.  A :class:`CovarianceModel` validates Sigma once at
construction, factors it, and caches the whitening map W (with
W.T @ W = inv(Sigma)) so that whitening turns Mahalanobis geometry into
plain Euclidean geometry.  W is the symmetric inverse square root, which
keeps whitening componentwise for diagonal covariances.

Models are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "CovarianceModel",
    "DimensionMismatch",
    "mahalanobis_inner",
    "mahalanobis_norm",
    "whiten",
    "unwhiten",
]

SYMMETRY_RTOL = 1e-12


class DimensionMismatch(ValueError):
    """A vector's dimension does not match the covariance model."""


class CovarianceModel:
    """A validated symmetric positive-definite covariance with cached factors.

    Parameters
    ----------
    sigma : (d, d) array_like
        Symmetric positive-definite covariance matrix.
    eig_floor_ratio : float
        Eigenvalues at or below ``eig_floor_ratio * max_eigenvalue`` are
        treated as degenerate and rejected.
    """

    def __init__(self, sigma, eig_floor_ratio: float = 1e-12):
        sigma = np.array(sigma, dtype=float)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise ValueError(f"covariance must be a square matrix, got shape {sigma.shape}")
        scale = float(np.max(np.abs(sigma)))
        if scale == 0.0:
            raise ValueError("covariance is identically zero")
        asym = float(np.max(np.abs(sigma - sigma.T)))
        if asym > SYMMETRY_RTOL * scale:
            raise ValueError(
                f"covariance is not symmetric: max |S - S.T| = {asym:g} "
                f"exceeds {SYMMETRY_RTOL:g} relative tolerance"
            )
        sigma = 0.5 * (sigma + sigma.T)
        evals, evecs = np.linalg.eigh(sigma)
        floor = eig_floor_ratio * evals[-1]
        if evals[-1] <= 0.0 or evals[0] <= floor:
            raise ValueError(
                f"covariance is not positive definite: min eigenvalue {evals[0]:g} "
                f"is at or below the floor {floor:g}"
            )
        self.dim = int(sigma.shape[0])
        self.sigma = sigma
        self.eigenvalues = evals
        # Symmetric roots: whitener = Sigma^(-1/2), colorer = Sigma^(1/2).
        self.whitener = (evecs * evals**-0.5) @ evecs.T
        self.colorer = (evecs * evals**0.5) @ evecs.T
        self.sigma_inv = (evecs / evals) @ evecs.T
        for arr in (self.sigma, self.eigenvalues, self.whitener, self.colorer, self.sigma_inv):
            arr.setflags(write=False)

    @classmethod
    def identity(cls, dim: int) -> "CovarianceModel":
        return cls(np.eye(dim))

    @classmethod
    def diagonal(cls, variances) -> "CovarianceModel":
        return cls(np.diag(np.asarray(variances, dtype=float)))

    def check_vector(self, x, name: str = "x") -> np.ndarray:
        v = np.asarray(x, dtype=float)
        if v.shape != (self.dim,):
            raise DimensionMismatch(f"{name} has shape {v.shape}, expected ({self.dim},)")
        return v

    def __repr__(self) -> str:
        return f"CovarianceModel(dim={self.dim})"


def whiten(x, cov: CovarianceModel) -> np.ndarray:
    """Map x to whitened coordinates where Mahalanobis norm = Euclidean norm.

    Accepts a single d-vector or an (n, d) array of row vectors.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return cov.whitener @ cov.check_vector(x)
    if x.ndim == 2 and x.shape[1] == cov.dim:
        return x @ cov.whitener  # whitener is symmetric
    raise DimensionMismatch(f"x has shape {x.shape}, expected ({cov.dim},) or (n, {cov.dim})")


def unwhiten(y, cov: CovarianceModel) -> np.ndarray:
    """Inverse of :func:`whiten`."""
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        return cov.colorer @ cov.check_vector(y, "y")
    if y.ndim == 2 and y.shape[1] == cov.dim:
        return y @ cov.colorer
    raise DimensionMismatch(f"y has shape {y.shape}, expected ({cov.dim},) or (n, {cov.dim})")


def mahalanobis_inner(x, y, cov: CovarianceModel) -> float:
    """Inner product x.T @ inv(Sigma) @ y; symmetric and bilinear."""
    wx = whiten(x, cov)
    wy = whiten(y, cov)
    return float(wx @ wy)


def mahalanobis_norm(x, cov: CovarianceModel) -> float:
    """sqrt(x.T @ inv(Sigma) @ x); zero iff x = 0."""
    return float(np.linalg.norm(whiten(x, cov)))
