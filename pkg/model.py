# model: analysis operator, measurement model, frame diagnostics
#
# AnalysisOperator holds Phi (N x n, N > n) together with S = Phi^T Phi and
# the frame bounds alpha = lambda_min(S), beta = lambda_max(S).
# MeasurementModel holds A (m x n, m < n) with its measured spectral norm.
# Both are frozen after construction.

from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Union

import numpy as np

import linalg

LOGGER = logging.getLogger('admm_dad')

FRAME_ALPHA_MIN = 1e-10
CONTAINER_HEADER = struct.Struct('<QQ')

PathLike = Union[str, os.PathLike]


# -----------------------------
# Errors
# -----------------------------
class BadShape(ValueError):
    pass


class NotRedundant(ValueError):
    pass


class NotAFrame(ArithmeticError):
    pass


class DimensionMismatch(ValueError):
    pass


class ContainerError(OSError):
    pass


# -----------------------------
# Types
# -----------------------------
@dataclass(frozen=True, eq=False)
class AnalysisOperator:
    phi: np.ndarray
    s_operator: np.ndarray
    alpha: float
    beta: float
    s_inverse_norm: float
    is_frame: bool = True

    @property
    def N(self) -> int:
        return int(self.phi.shape[0])

    @property
    def n(self) -> int:
        return int(self.phi.shape[1])


@dataclass(frozen=True, eq=False)
class MeasurementModel:
    a: np.ndarray
    noise_std: float = 0.0
    a_norm: float = field(default=0.0)
    seed: int = 0

    @property
    def m(self) -> int:
        return int(self.a.shape[0])

    @property
    def n(self) -> int:
        return int(self.a.shape[1])

    @property
    def cs_ratio(self) -> float:
        return self.m / self.n

    @property
    def ata_norm(self) -> float:
        return self.a_norm * self.a_norm


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


# -----------------------------
# Construction
# -----------------------------
def build_analysis_operator(phi) -> AnalysisOperator:
    mat = linalg.as_matrix(phi)
    big_n, n = mat.shape
    if big_n <= n:
        raise NotRedundant(f"analysis operator must be redundant (N > n), got {big_n}x{n}")
    if not np.all(np.isfinite(mat)):
        raise NotAFrame("analysis operator has non-finite entries")
    s_op = mat.T @ mat
    s_op = 0.5 * (s_op + s_op.T)
    alpha, beta = linalg.symmetric_eig_extremes(s_op)
    if alpha < FRAME_ALPHA_MIN:
        raise NotAFrame(f"S = Phi^T Phi is numerically singular (alpha={alpha:.3e})")
    return AnalysisOperator(
        phi=_freeze(mat),
        s_operator=_freeze(s_op),
        alpha=float(alpha),
        beta=float(beta),
        s_inverse_norm=1.0 / float(alpha),
    )


def measurement_model(a, noise_std: float = 0.0, seed: int = 0) -> MeasurementModel:
    mat = linalg.as_matrix(a)
    m, n = mat.shape
    if m >= n:
        raise BadShape(f"measurement matrix must have m < n, got {m}x{n}")
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    return MeasurementModel(a=_freeze(mat), noise_std=float(noise_std),
                            a_norm=linalg.spectral_norm(mat), seed=int(seed))


def sample_measurement_matrix(m: int, n: int, seed: int, noise_std: float = 0.0) -> MeasurementModel:
    """Gaussian A with N(0, 1/m) entries; the spectral norm is measured, not assumed."""
    if m < 1 or n < 1 or m >= n:
        raise BadShape(f"need 1 <= m < n, got m={m}, n={n}")
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((m, n)) / np.sqrt(m)
    mm = measurement_model(a, noise_std=noise_std, seed=seed)
    LOGGER.debug("Sampled A %dx%d seed=%d ||A||=%.4f", m, n, seed, mm.a_norm)
    return mm


# -----------------------------
# Diagnostics
# -----------------------------
def assumption2_value(op: AnalysisOperator, mm: MeasurementModel, rho: float) -> float:
    return float(rho) * op.s_inverse_norm * mm.a_norm


def sinv_s_residual(op: AnalysisOperator) -> float:
    s_inv = linalg.invert(op.s_operator)
    return float(np.max(np.abs(s_inv @ op.s_operator - np.eye(op.n))))


def sinv_s_matrix(op: AnalysisOperator) -> np.ndarray:
    return linalg.invert(op.s_operator) @ op.s_operator


def frame_ratio(op: AnalysisOperator, x) -> float:
    """||Phi x||^2 / ||x||^2, which lies in [alpha, beta] for a frame."""
    vec = np.asarray(x, dtype=np.float64).reshape(-1)
    if vec.shape[0] != op.n:
        raise DimensionMismatch(f"x has length {vec.shape[0]}, expected {op.n}")
    denom = float(vec @ vec)
    if denom == 0.0:
        raise ValueError("frame ratio of the zero vector")
    phix = op.phi @ vec
    return float(phix @ phix) / denom


def check_dimensions(op: AnalysisOperator, mm: MeasurementModel) -> None:
    if op.n != mm.n:
        raise DimensionMismatch(f"Phi acts on R^{op.n} but A acts on R^{mm.n}")


# -----------------------------
# Binary container
# -----------------------------
def encode_matrix(mat) -> bytes:
    arr = np.ascontiguousarray(linalg.as_matrix(mat), dtype='<f8')
    rows, cols = arr.shape
    return CONTAINER_HEADER.pack(rows, cols) + arr.tobytes(order='C')


def decode_matrix(payload: bytes) -> np.ndarray:
    if len(payload) < CONTAINER_HEADER.size:
        raise ContainerError("matrix container shorter than its header")
    rows, cols = CONTAINER_HEADER.unpack_from(payload, 0)
    expected = CONTAINER_HEADER.size + 8 * rows * cols
    if len(payload) != expected:
        raise ContainerError(
            f"matrix container holds {len(payload)} bytes, expected {expected} for {rows}x{cols}"
        )
    data = np.frombuffer(payload, dtype='<f8', offset=CONTAINER_HEADER.size, count=rows * cols)
    return data.reshape(rows, cols).astype(np.float64)


def write_matrix(path: PathLike, mat) -> None:
    with open(path, 'wb') as f:
        f.write(encode_matrix(mat))


def read_matrix(path: PathLike) -> np.ndarray:
    with open(path, 'rb') as f:
        return decode_matrix(f.read())
