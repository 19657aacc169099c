# unfolded: the ADMM-DAD network
#
# With v_k = [u^k; z^k] in R^{2N}, tau = R^-1 A^T y and b = Phi tau:
#   v_1     = I' b + I'' S_{lam/rho}(b)
#   v_{k+1} = Theta~ v_k + I' b + I'' S_{lam/rho}(Theta v_k + b)
#   x_hat   = sigma(C_Phi v_L + tau)
# where W = rho Phi R^-1 Phi^T, Theta = [-I-W | W], Lambda = [I-W | W],
# Theta~ = [Lambda; 0], C_Phi = [-rho R^-1 Phi^T | rho R^-1 Phi^T] and sigma is
# the radial clip onto the B_out ball.
#
# The forward pass never materializes the N x N or 2N x 2N blocks: W acts as
# Phi (M v) with M = rho R^-1 Phi^T. Dense blocks are available as lazy
# properties for diagnostics and tests.

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import List, Optional, Tuple, Union

import numpy as np

import linalg
from admm_ref import soft_threshold
from model import (
    AnalysisOperator,
    ContainerError,
    DimensionMismatch,
    MeasurementModel,
    build_analysis_operator,
    check_dimensions,
    decode_matrix,
    encode_matrix,
)

LOGGER = logging.getLogger('admm_dad')

CHECKPOINT_FORMAT = "admm-dad-checkpoint"
CHECKPOINT_VERSION = 1

PathLike = Union[str, os.PathLike]


class SingularR(linalg.SingularMatrix):
    pass


class CheckpointError(ContainerError):
    pass


# -----------------------------
# Layer matrices
# -----------------------------
@dataclass(frozen=True, eq=False)
class LayerMatrices:
    phi: np.ndarray
    a: np.ndarray
    rho: float
    r_inv: np.ndarray
    m_op: np.ndarray  # rho R^-1 Phi^T  (n x N)

    @property
    def N(self) -> int:
        return int(self.phi.shape[0])

    @property
    def n(self) -> int:
        return int(self.phi.shape[1])

    @cached_property
    def w(self) -> np.ndarray:
        return self.phi @ self.m_op

    @cached_property
    def theta(self) -> np.ndarray:
        eye = np.eye(self.N)
        return np.hstack([-eye - self.w, self.w])

    @cached_property
    def lambda_block(self) -> np.ndarray:
        eye = np.eye(self.N)
        return np.hstack([eye - self.w, self.w])

    @cached_property
    def theta_tilde(self) -> np.ndarray:
        return np.vstack([self.lambda_block, np.zeros((self.N, 2 * self.N))])

    @cached_property
    def c_phi(self) -> np.ndarray:
        return np.hstack([-self.m_op, self.m_op])

    @cached_property
    def i_prime(self) -> np.ndarray:
        return np.vstack([np.eye(self.N), np.zeros((self.N, self.N))])

    @cached_property
    def i_double_prime(self) -> np.ndarray:
        return np.vstack([-np.eye(self.N), np.eye(self.N)])

    def apply_w(self, v: np.ndarray) -> np.ndarray:
        return self.phi @ (self.m_op @ v)

    def tau(self, y: np.ndarray) -> np.ndarray:
        return self.r_inv @ (self.a.T @ y)


def build_layer_matrices(op: AnalysisOperator, mm: MeasurementModel, rho: float) -> LayerMatrices:
    check_dimensions(op, mm)
    if not rho > 0:
        raise ValueError("rho must be > 0")
    r = mm.a.T @ mm.a + rho * op.s_operator
    try:
        r_inv = linalg.invert(r)
    except linalg.SingularMatrix as err:
        raise SingularR(f"R = A^T A + rho S is not invertible: {err}") from err
    m_op = rho * (r_inv @ op.phi.T)
    return LayerMatrices(phi=op.phi, a=mm.a, rho=float(rho), r_inv=r_inv, m_op=m_op)


# -----------------------------
# Decoder
# -----------------------------
@dataclass(frozen=True, eq=False)
class UnfoldedDecoder:
    depth: int
    lam: float
    rho: float
    b_out: float
    operator: AnalysisOperator
    mm: MeasurementModel
    matrices: LayerMatrices

    @property
    def threshold(self) -> float:
        return self.lam / self.rho

    def with_phi(self, phi) -> "UnfoldedDecoder":
        return build_decoder(build_analysis_operator(phi), self.mm, self.depth, self.lam, self.rho, self.b_out)

    def r_inv_norm(self) -> float:
        return linalg.spectral_norm(self.matrices.r_inv)


def build_decoder(op: AnalysisOperator, mm: MeasurementModel, depth: int, lam: float,
                  rho: float, b_out: float) -> UnfoldedDecoder:
    if depth < 1:
        raise ValueError("depth L must be >= 1")
    if not (lam > 0 and rho > 0):
        raise ValueError("lambda and rho must be > 0")
    if not b_out > 0:
        raise ValueError("clipping radius B_out must be > 0")
    mats = build_layer_matrices(op, mm, rho)
    return UnfoldedDecoder(depth=int(depth), lam=float(lam), rho=float(rho), b_out=float(b_out),
                           operator=op, mm=mm, matrices=mats)


def clip(x: np.ndarray, b_out: float) -> np.ndarray:
    """Radial clip onto the l2 ball of radius b_out, column-wise for matrices."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        nrm = float(np.linalg.norm(arr))
        return arr if nrm <= b_out else arr * (b_out / nrm)
    norms = np.linalg.norm(arr, axis=0)
    scale = np.where(norms > b_out, b_out / np.where(norms > 0, norms, 1.0), 1.0)
    return arr * scale


@dataclass
class ForwardTrace:
    tau: np.ndarray
    b: np.ndarray
    us: List[np.ndarray] = field(default_factory=list)   # u^0 .. u^L (only last when not kept)
    zs: List[np.ndarray] = field(default_factory=list)
    pre: List[np.ndarray] = field(default_factory=list)  # soft-threshold arguments, layers 1..L
    x_pre: Optional[np.ndarray] = None
    x_hat: Optional[np.ndarray] = None

    def layer_outputs(self) -> List[np.ndarray]:
        """v_1 .. v_L stacked as [u; z]."""
        return [np.vstack([u, z]) if u.ndim == 2 else np.concatenate([u, z])
                for u, z in zip(self.us[1:], self.zs[1:])]


def _as_columns(dec: UnfoldedDecoder, y_matrix) -> np.ndarray:
    ys = np.asarray(y_matrix, dtype=np.float64)
    if ys.ndim == 1:
        ys = ys.reshape(-1, 1)
    if ys.ndim != 2 or ys.shape[0] != dec.mm.m:
        raise DimensionMismatch(f"measurements must have {dec.mm.m} rows, got shape {ys.shape}")
    return ys


def trace_batch(dec: UnfoldedDecoder, y_matrix, keep_layers: bool = True) -> ForwardTrace:
    ys = _as_columns(dec, y_matrix)
    mats = dec.matrices
    thr = dec.threshold
    tau = mats.tau(ys)
    b = mats.phi @ tau
    u = np.zeros_like(b)
    z = np.zeros_like(b)
    trace = ForwardTrace(tau=tau, b=b, us=[u], zs=[z])
    for _ in range(dec.depth):
        a = mats.apply_w(z - u)           # W (z - u)
        p = b + a - u                     # Theta v + b
        c = soft_threshold(p, thr)
        u, z = u + a + b - c, c           # Lambda v + b - S(.),  S(.)
        if keep_layers:
            trace.us.append(u)
            trace.zs.append(z)
            trace.pre.append(p)
    if not keep_layers:
        trace.us.append(u)
        trace.zs.append(z)
    trace.x_pre = tau + mats.m_op @ (z - u)
    trace.x_hat = clip(trace.x_pre, dec.b_out)
    return trace


def forward(dec: UnfoldedDecoder, y) -> Tuple[List[np.ndarray], np.ndarray]:
    vec = np.asarray(y, dtype=np.float64)
    if vec.ndim != 1:
        raise DimensionMismatch("forward expects a single measurement vector")
    trace = trace_batch(dec, vec.reshape(-1, 1), keep_layers=True)
    layers = [v[:, 0] for v in trace.layer_outputs()]
    return layers, trace.x_hat[:, 0]


def forward_batch(dec: UnfoldedDecoder, y_matrix) -> np.ndarray:
    return trace_batch(dec, y_matrix, keep_layers=False).x_hat


def intermediate_outputs(dec: UnfoldedDecoder, y_matrix) -> List[np.ndarray]:
    """f^1(Y) .. f^L(Y) as 2N x s matrices."""
    return trace_batch(dec, y_matrix, keep_layers=True).layer_outputs()


# -----------------------------
# Checkpoints
# -----------------------------
def save_checkpoint(path: PathLike, dec: UnfoldedDecoder, seed: int = 0) -> None:
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "L": dec.depth,
        "lam": dec.lam,
        "rho": dec.rho,
        "b_out": dec.b_out,
        "seed": int(seed),
        "m": dec.mm.m,
        "n": dec.operator.n,
        "N": dec.operator.N,
    }
    directory = os.path.dirname(os.fspath(path))
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(json.dumps(header, sort_keys=True).encode('utf-8') + b'\n')
        f.write(encode_matrix(dec.operator.phi))


def read_checkpoint(path: PathLike) -> Tuple[dict, np.ndarray]:
    try:
        with open(path, 'rb') as f:
            raw = f.read()
    except OSError as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err}") from err
    head, sep, payload = raw.partition(b'\n')
    if not sep:
        raise CheckpointError(f"{path}: missing checkpoint header")
    try:
        header = json.loads(head.decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"{path}: unreadable checkpoint header") from err
    if not isinstance(header, dict) or header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not an ADMM-DAD checkpoint")
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
    try:
        phi = decode_matrix(payload)
    except ContainerError as err:
        raise CheckpointError(f"{path}: {err}") from err
    if phi.shape != (header.get("N"), header.get("n")):
        raise CheckpointError(f"{path}: Phi shape {phi.shape} disagrees with header")
    return header, phi


def load_checkpoint(path: PathLike, mm: MeasurementModel) -> UnfoldedDecoder:
    header, phi = read_checkpoint(path)
    try:
        return build_decoder(build_analysis_operator(phi), mm, int(header["L"]), float(header["lam"]),
                             float(header["rho"]), float(header["b_out"]))
    except (KeyError, TypeError) as err:
        raise CheckpointError(f"{path}: incomplete checkpoint header ({err})") from err
