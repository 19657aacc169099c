# linalg: dense real kernels shared by every other module
#
# - invert            LU with partial pivoting (scipy.linalg.lu_factor)
# - spectral_norm     power iteration on M^T M
# - symmetric_eig_extremes  power iteration (max) + inverse iteration (min)
# - frobenius_norm
#
# Tolerances are module-level (SETTINGS); every entry point also accepts an
# explicit override.

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
import scipy.linalg

LOGGER = logging.getLogger('admm_dad')


# -----------------------------
# Errors
# -----------------------------
class LinalgError(ArithmeticError):
    pass


class SingularMatrix(LinalgError):
    pass


class NoConvergence(LinalgError):
    pass


class NotSymmetric(ValueError):
    pass


# -----------------------------
# Settings
# -----------------------------
@dataclass(frozen=True)
class LinalgSettings:
    pivot_rtol: float = 1e-12      # |pivot| < pivot_rtol * max|M_ij|  => singular
    inverse_atol: float = 1e-8     # ||M M^-1 - I||_max
    power_tol: float = 1e-8        # ||M v - lam v|| <= power_tol * |lam|
    start_seed: int = 0            # power iteration start vector
    max_iter: int = 10_000
    symmetry_rtol: float = 1e-10


SETTINGS = LinalgSettings()


def configure(**overrides) -> LinalgSettings:
    """Replace module-level tolerances; returns the new settings."""
    global SETTINGS
    SETTINGS = replace(SETTINGS, **overrides)
    return SETTINGS


def _settings(settings: Optional[LinalgSettings]) -> LinalgSettings:
    return settings if settings is not None else SETTINGS


def as_matrix(m) -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {arr.shape}")
    return arr


# -----------------------------
# Inversion
# -----------------------------
def lu_factor(m, settings: Optional[LinalgSettings] = None):
    """LU factorization with the singularity test used by invert()."""
    cfg = _settings(settings)
    mat = as_matrix(m)
    rows, cols = mat.shape
    if rows != cols:
        raise ValueError(f"invert needs a square matrix, got {rows}x{cols}")
    if not np.all(np.isfinite(mat)):
        raise SingularMatrix("matrix has non-finite entries")
    scale = float(np.max(np.abs(mat))) if mat.size else 0.0
    if scale == 0.0:
        raise SingularMatrix("zero matrix")
    lu, piv = scipy.linalg.lu_factor(mat, check_finite=False)
    pivots = np.abs(np.diag(lu))
    if float(pivots.min()) < cfg.pivot_rtol * scale:
        raise SingularMatrix(
            f"pivot {float(pivots.min()):.3e} below {cfg.pivot_rtol:g} x max entry {scale:.3e}"
        )
    return lu, piv


def lu_solve(factors, rhs) -> np.ndarray:
    return scipy.linalg.lu_solve(factors, np.asarray(rhs, dtype=np.float64), check_finite=False)


def invert(m, settings: Optional[LinalgSettings] = None) -> np.ndarray:
    cfg = _settings(settings)
    mat = as_matrix(m)
    factors = lu_factor(mat, cfg)
    inv = lu_solve(factors, np.eye(mat.shape[0]))
    if not np.all(np.isfinite(inv)):
        raise SingularMatrix("inverse has non-finite entries")
    residual = float(np.max(np.abs(mat @ inv - np.eye(mat.shape[0]))))
    if residual >= cfg.inverse_atol:
        raise SingularMatrix(f"inverse residual {residual:.3e} exceeds {cfg.inverse_atol:g}")
    return inv


# -----------------------------
# Power iterations
# -----------------------------
def _start_vector(dim: int, seed: int) -> np.ndarray:
    v = np.random.default_rng(seed).standard_normal(dim)
    return v / np.linalg.norm(v)


def _power_iteration(matvec, dim: int, cfg: LinalgSettings, what: str) -> float:
    """Dominant eigenvalue of a symmetric PSD operator given by matvec.

    Stops once the eigen-residual ||Mv - lam v|| drops below power_tol * |lam|.
    """
    v = _start_vector(dim, cfg.start_seed)
    for _ in range(cfg.max_iter):
        w = matvec(v)
        nrm = float(np.linalg.norm(w))
        if nrm == 0.0:
            return 0.0
        lam = float(v @ w)
        residual = float(np.linalg.norm(w - lam * v))
        if residual <= cfg.power_tol * max(abs(lam), np.finfo(float).tiny):
            return lam
        v = w / nrm
    raise NoConvergence(f"{what}: no convergence after {cfg.max_iter} iterations")


def spectral_norm(m, settings: Optional[LinalgSettings] = None) -> float:
    cfg = _settings(settings)
    mat = as_matrix(m)
    if mat.size == 0:
        raise ValueError("spectral_norm of an empty matrix")
    if mat.shape[0] == 1 or mat.shape[1] == 1:
        return float(np.linalg.norm(mat))
    if mat.shape[0] >= mat.shape[1]:
        lam = _power_iteration(lambda v: mat.T @ (mat @ v), mat.shape[1], cfg, "spectral_norm")
    else:
        lam = _power_iteration(lambda v: mat @ (mat.T @ v), mat.shape[0], cfg, "spectral_norm")
    return float(np.sqrt(max(lam, 0.0)))


def check_symmetric(m, settings: Optional[LinalgSettings] = None) -> np.ndarray:
    cfg = _settings(settings)
    mat = as_matrix(m)
    if mat.shape[0] != mat.shape[1]:
        raise NotSymmetric(f"matrix is {mat.shape[0]}x{mat.shape[1]}")
    scale = float(np.max(np.abs(mat))) if mat.size else 0.0
    asym = float(np.max(np.abs(mat - mat.T))) if mat.size else 0.0
    if asym > cfg.symmetry_rtol * max(scale, 1.0):
        raise NotSymmetric(f"asymmetry {asym:.3e} above tolerance")
    return mat


def symmetric_eig_extremes(m, settings: Optional[LinalgSettings] = None) -> Tuple[float, float]:
    """(lambda_min, lambda_max) of a symmetric positive (semi)definite matrix.

    lambda_max comes from power iteration; lambda_min from inverse iteration on
    the LU factors. A matrix that fails the pivot test reports lambda_min = 0.
    For indefinite input the power step tracks the eigenvalue largest in
    magnitude, so callers pass Gram matrices.
    """
    cfg = _settings(settings)
    mat = check_symmetric(m, cfg)
    mat = 0.5 * (mat + mat.T)
    dim = mat.shape[0]
    lam_max = _power_iteration(lambda v: mat @ v, dim, cfg, "lambda_max")
    try:
        factors = lu_factor(mat, cfg)
    except SingularMatrix:
        return 0.0, lam_max
    mu = _power_iteration(lambda v: lu_solve(factors, v), dim, cfg, "lambda_min")
    if mu <= 0.0:
        return 0.0, lam_max
    return 1.0 / mu, lam_max


def frobenius_norm(m) -> float:
    mat = np.asarray(m, dtype=np.float64)
    if mat.size == 0:
        return 0.0
    return float(np.sqrt(np.sum(mat * mat)))
