# training: MSE loss, reverse-mode gradient w.r.t. Phi, Adam, early stopping
#
# The backward pass follows the forward pass of unfolded.trace_batch step by
# step (u, z form of each layer) and finishes with the chain through
# M = rho R^-1 Phi^T, tau = R^-1 A^T Y and R = A^T A + rho Phi^T Phi.
# Subgradient conventions: soft-threshold derivative 0 at |p| = lam/rho, clip
# Jacobian is the identity inside the ball and the radial projection outside.

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

import linalg
from model import BadShape, DimensionMismatch, assumption2_value, sinv_s_residual
from unfolded import UnfoldedDecoder, forward_batch, trace_batch

LOGGER = logging.getLogger('admm_dad')

HISTORY_FIELDS = ("epoch", "train_mse", "test_mse", "ege", "sinv_s_residual", "assumption2_value")

PathLike = Union[str, os.PathLike]


class NonFiniteLoss(ArithmeticError):
    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


# -----------------------------
# Config / reports
# -----------------------------
@dataclass
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 1e-4
    max_epochs: int = 50
    early_stop_patience: int = 5
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    frame_regularizer: float = 0.0
    kink_eps: float = 1e-9
    min_improvement: float = 0.0

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError("TrainConfig: batch_size must be >= 1")
        if self.early_stop_patience < 1:
            raise ValueError("TrainConfig: early_stop_patience must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("TrainConfig: max_epochs must be >= 0")
        if self.learning_rate < 0:
            raise ValueError("TrainConfig: learning_rate must be >= 0")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ValueError("TrainConfig: Adam betas must lie in [0, 1)")
        if self.frame_regularizer < 0:
            raise ValueError("TrainConfig: frame_regularizer must be >= 0")


@dataclass
class LossReport:
    train_mse: float
    test_mse: float
    ege: float
    epoch: int = 0
    sinv_s_residual: float = float('nan')
    assumption2_value: float = float('nan')

    @classmethod
    def from_losses(cls, train: float, test: float, **extra) -> "LossReport":
        return cls(train_mse=train, test_mse=test, ege=abs(test - train), **extra)

    def as_row(self) -> dict:
        return {name: getattr(self, name) for name in HISTORY_FIELDS}


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, phi: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(phi), v=np.zeros_like(phi), t=0)


Pair = Tuple[np.ndarray, np.ndarray]


def _xy(dataset) -> Pair:
    """(X, Y) from a (X, Y) pair or anything exposing .x and .y."""
    if isinstance(dataset, tuple):
        x, y = dataset
    else:
        x, y = dataset.x, dataset.y
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if y.ndim == 1:
        y = y.reshape(-1, 1)
    if x.shape[1] != y.shape[1]:
        raise DimensionMismatch(f"{x.shape[1]} signals but {y.shape[1]} measurements")
    return x, y


# -----------------------------
# Loss
# -----------------------------
def train_mse(dec: UnfoldedDecoder, x_batch, y_batch) -> float:
    x, y = _xy((x_batch, y_batch))
    if x.shape[0] != dec.operator.n:
        raise DimensionMismatch(f"signals have {x.shape[0]} rows, expected {dec.operator.n}")
    diff = forward_batch(dec, y) - x
    return float(np.sum(diff * diff)) / x.shape[1]


def _clip_backward(x_pre: np.ndarray, g: np.ndarray, b_out: float) -> np.ndarray:
    norms = np.linalg.norm(x_pre, axis=0)
    out = g.copy()
    outside = norms > b_out
    if np.any(outside):
        xs = x_pre[:, outside]
        gs = g[:, outside]
        r = norms[outside]
        proj = np.sum(xs * gs, axis=0) / (r * r)
        out[:, outside] = (b_out / r) * (gs - xs * proj)
    return out


def _backprop_r_inverse(phi: np.ndarray, r_inv: np.ndarray, rho: float, g_r_inv: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. Phi of <G, R^-1> with R = A^T A + rho Phi^T Phi."""
    g_r = -r_inv.T @ g_r_inv @ r_inv.T
    return rho * (phi @ (g_r + g_r.T))


def loss_gradient(dec: UnfoldedDecoder, x_batch, y_batch) -> np.ndarray:
    x, y = _xy((x_batch, y_batch))
    if x.shape[0] != dec.operator.n:
        raise DimensionMismatch(f"signals have {x.shape[0]} rows, expected {dec.operator.n}")
    mats = dec.matrices
    phi, m_op, r_inv, rho = mats.phi, mats.m_op, mats.r_inv, mats.rho
    thr = dec.threshold
    s = x.shape[1]
    tr = trace_batch(dec, y, keep_layers=True)

    g_xhat = (2.0 / s) * (tr.x_hat - x)
    g_xpre = _clip_backward(tr.x_pre, g_xhat, dec.b_out)

    g_phi = np.zeros_like(phi)
    g_tau = g_xpre.copy()
    d_last = tr.zs[-1] - tr.us[-1]
    g_m = g_xpre @ d_last.T
    g_d = m_op.T @ g_xpre
    g_z, g_u = g_d, -g_d
    g_b = np.zeros_like(tr.b)

    for k in range(dec.depth, 0, -1):
        u_prev, z_prev, p = tr.us[k - 1], tr.zs[k - 1], tr.pre[k - 1]
        d = z_prev - u_prev
        q = m_op @ d
        g_c = g_z - g_u
        g_p = g_c * (np.abs(p) > thr)
        g_a = g_u + g_p
        g_b += g_a
        g_phi += g_a @ q.T
        g_q = phi.T @ g_a
        g_m += g_q @ d.T
        g_d = m_op.T @ g_q
        g_z, g_u = g_d, g_u - g_p - g_d

    # b = Phi tau
    g_phi += g_b @ tr.tau.T
    g_tau += phi.T @ g_b
    # tau = R^-1 A^T Y,  M = rho R^-1 Phi^T
    g_r_inv = g_tau @ (mats.a.T @ y).T + rho * (g_m @ phi)
    g_phi += rho * (g_m.T @ r_inv)
    g_phi += _backprop_r_inverse(phi, r_inv, rho, g_r_inv)
    return g_phi


def r_inverse_quadratic(phi, a, rho: float, v) -> Tuple[float, np.ndarray]:
    """||R^-1 v||^2 and its gradient w.r.t. Phi."""
    phi = linalg.as_matrix(phi)
    a = linalg.as_matrix(a)
    vec = np.asarray(v, dtype=np.float64).reshape(-1, 1)
    r_inv = linalg.invert(a.T @ a + rho * (phi.T @ phi))
    w = r_inv @ vec
    g_r_inv = 2.0 * w @ vec.T
    return float(np.sum(w * w)), _backprop_r_inverse(phi, r_inv, rho, g_r_inv)


def frame_regularizer(phi) -> Tuple[float, np.ndarray]:
    """||S^-1 S - I||_F for S = Phi^T Phi and its gradient w.r.t. Phi.

    In exact arithmetic the residual is zero; the value only tracks the
    floating-point error of the inverse, so the gradient is tiny.
    """
    phi = linalg.as_matrix(phi)
    s_op = phi.T @ phi
    s_inv = linalg.invert(s_op)
    err = s_inv @ s_op - np.eye(s_op.shape[0])
    value = linalg.frobenius_norm(err)
    if value == 0.0:
        return 0.0, np.zeros_like(phi)
    g_e = err / value
    g_s = -s_inv.T @ g_e @ err.T
    return value, phi @ (g_s + g_s.T)


def finite_difference_gradient(f: Callable[[np.ndarray], float], phi, coords: Sequence[Tuple[int, int]],
                               step: float = 1e-6) -> np.ndarray:
    """Central differences of f at the given (row, col) entries of phi."""
    base = np.array(phi, dtype=np.float64, copy=True)
    out = np.empty(len(coords))
    for idx, (i, j) in enumerate(coords):
        plus = base.copy()
        minus = base.copy()
        plus[i, j] += step
        minus[i, j] -= step
        out[idx] = (f(plus) - f(minus)) / (2.0 * step)
    return out


def near_kink(dec: UnfoldedDecoder, y_batch, eps: Optional[float] = None) -> bool:
    """True when a threshold argument or an output norm sits within eps of a kink.

    eps defaults to TrainConfig.kink_eps.
    """
    eps = TrainConfig.kink_eps if eps is None else eps
    tr = trace_batch(dec, y_batch, keep_layers=True)
    thr = dec.threshold
    for p in tr.pre:
        if np.any(np.abs(np.abs(p) - thr) < eps):
            return True
    norms = np.linalg.norm(tr.x_pre, axis=0)
    return bool(np.any(np.abs(norms - dec.b_out) < eps))


# -----------------------------
# Initialization / optimizer
# -----------------------------
def he_init(n: int, big_n: int, seed) -> np.ndarray:
    if n < 1 or big_n <= n:
        raise BadShape(f"He init needs N > n >= 1, got N={big_n}, n={n}")
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, np.sqrt(2.0 / n), size=(big_n, n))


def adam_step(phi: np.ndarray, grad: np.ndarray, state: AdamState, cfg: TrainConfig) -> Tuple[np.ndarray, AdamState]:
    t = state.t + 1
    m = cfg.adam_beta1 * state.m + (1.0 - cfg.adam_beta1) * grad
    v = cfg.adam_beta2 * state.v + (1.0 - cfg.adam_beta2) * (grad * grad)
    m_hat = m / (1.0 - cfg.adam_beta1 ** t)
    v_hat = v / (1.0 - cfg.adam_beta2 ** t)
    new_phi = phi - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return new_phi, AdamState(m=m, v=v, t=t)


def iterate_minibatches(count: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    order = rng.permutation(count)
    for start in range(0, count, batch_size):
        yield order[start:start + batch_size]


# -----------------------------
# Fit
# -----------------------------
def evaluate(dec: UnfoldedDecoder, train: Pair, validation: Pair, epoch: int = 0) -> LossReport:
    tr_loss = train_mse(dec, *train)
    te_loss = train_mse(dec, *validation)
    try:
        resid = sinv_s_residual(dec.operator)
    except linalg.SingularMatrix:
        resid = float('inf')
    return LossReport.from_losses(tr_loss, te_loss, epoch=epoch, sinv_s_residual=resid,
                                  assumption2_value=assumption2_value(dec.operator, dec.mm, dec.rho))


def fit(dec: UnfoldedDecoder, train_set, validation_set, cfg: TrainConfig) -> Tuple[UnfoldedDecoder, List[LossReport]]:
    """Adam on Phi with early stopping on the empirical generalization error.

    history[0] is the untrained decoder. The returned decoder is the epoch
    (>= 1 when any epoch ran) with the smallest EGE.
    """
    cfg.validate()
    train = _xy(train_set)
    validation = _xy(validation_set)
    a2 = assumption2_value(dec.operator, dec.mm, dec.rho)
    if a2 >= 1.0:
        LOGGER.warning("Assumption 2 value %.4f >= 1 at initialization", a2)

    rng = np.random.default_rng(cfg.seed)
    state = AdamState.zeros_like(np.asarray(dec.operator.phi))
    history = [evaluate(dec, train, validation, epoch=0)]
    if not np.isfinite(history[0].train_mse):
        raise NonFiniteLoss("non-finite loss before training", epoch=0)
    best_dec, best_ege = dec, np.inf
    stale = 0
    x_all, y_all = train
    for epoch in range(1, cfg.max_epochs + 1):
        for idx in iterate_minibatches(x_all.shape[1], cfg.batch_size, rng):
            phi = np.asarray(dec.operator.phi)
            grad = loss_gradient(dec, x_all[:, idx], y_all[:, idx])
            if cfg.frame_regularizer > 0:
                grad = grad + cfg.frame_regularizer * frame_regularizer(phi)[1]
            if not np.all(np.isfinite(grad)):
                raise NonFiniteLoss(f"non-finite gradient in epoch {epoch}", epoch=epoch)
            new_phi, state = adam_step(phi, grad, state, cfg)
            dec = dec.with_phi(new_phi)
        report = evaluate(dec, train, validation, epoch=epoch)
        if not (np.isfinite(report.train_mse) and np.isfinite(report.test_mse)):
            raise NonFiniteLoss(f"non-finite loss in epoch {epoch}", epoch=epoch)
        history.append(report)
        LOGGER.debug("epoch %d train=%.6g test=%.6g ege=%.3g", epoch, report.train_mse, report.test_mse, report.ege)
        if report.ege < best_ege - cfg.min_improvement:
            best_dec, best_ege = dec, report.ege
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                LOGGER.info("Early stop after epoch %d (best EGE %.4g)", epoch, best_ege)
                break
    return best_dec, history


def best_epoch(history: List[LossReport]) -> int:
    candidates = history[1:] or history
    return min(candidates, key=lambda r: (r.ege, r.epoch)).epoch


def write_history_csv(path: PathLike, history: List[LossReport]) -> None:
    directory = os.path.dirname(os.fspath(path))
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=list(HISTORY_FIELDS), lineterminator='\n')
        writer.writeheader()
        for report in history:
            row = report.as_row()
            writer.writerow({k: (repr(float(v)) if k != "epoch" else int(v)) for k, v in row.items()})
