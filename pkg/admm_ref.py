# admm_ref: classical ADMM for the generalized LASSO
#
#   min_x  1/2 ||A x - y||^2 + lam ||Phi x||_1
#
# Updates (zero initial state):
#   x' = R^-1 (A^T y + rho Phi^T (z - u)),   R = A^T A + rho Phi^T Phi
#   z' = S_{lam/rho}(Phi x' - u)
#   u' = u + Phi x' - z'
# The z-update uses Phi x' - u; the unrolled network in unfolded.py relies on
# exactly this sign.

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

import linalg
from model import AnalysisOperator, DimensionMismatch, MeasurementModel, assumption2_value, check_dimensions

LOGGER = logging.getLogger('admm_dad')

STAGNATION_WINDOW = 100


class NoProgress(RuntimeWarning):
    pass


@dataclass(frozen=True, eq=False)
class AdmmParams:
    lam: float
    rho: float

    def __post_init__(self):
        if not (self.lam > 0 and self.rho > 0):
            raise ValueError(f"lambda and rho must be > 0 (got lam={self.lam}, rho={self.rho})")


@dataclass(frozen=True, eq=False)
class AdmmState:
    x: np.ndarray
    z: np.ndarray
    u: np.ndarray
    iteration: int = 0

    @classmethod
    def zeros(cls, n: int, big_n: int) -> "AdmmState":
        return cls(x=np.zeros(n), z=np.zeros(big_n), u=np.zeros(big_n), iteration=0)


@dataclass
class AdmmResult:
    x_hat: np.ndarray
    history: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    primal_residual: float = float('nan')


def soft_threshold(x, tau: float) -> np.ndarray:
    if not tau > 0:
        raise ValueError("soft threshold needs tau > 0")
    arr = np.asarray(x, dtype=np.float64)
    return np.sign(arr) * np.maximum(np.abs(arr) - tau, 0.0)


def lasso_r_inverse(op: AnalysisOperator, mm: MeasurementModel, rho: float) -> np.ndarray:
    """(A^T A + rho Phi^T Phi)^-1, factored once per (Phi, A, rho)."""
    check_dimensions(op, mm)
    return linalg.invert(mm.a.T @ mm.a + rho * op.s_operator)


def objective(op: AnalysisOperator, mm: MeasurementModel, y, x, lam: float) -> float:
    resid = mm.a @ x - y
    return 0.5 * float(resid @ resid) + lam * float(np.sum(np.abs(op.phi @ x)))


def admm_step(state: AdmmState, op: AnalysisOperator, mm: MeasurementModel, y,
              p: AdmmParams, r_inv: np.ndarray) -> AdmmState:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != mm.m:
        raise DimensionMismatch(f"y has length {y.shape[0]}, expected {mm.m}")
    if r_inv.shape != (op.n, op.n) or state.z.shape[0] != op.N or state.u.shape[0] != op.N:
        raise DimensionMismatch("state or R^-1 does not match the operator dimensions")
    phi = op.phi
    x_new = r_inv @ (mm.a.T @ y + p.rho * (phi.T @ (state.z - state.u)))
    phix = phi @ x_new
    z_new = soft_threshold(phix - state.u, p.lam / p.rho)
    u_new = state.u + phix - z_new
    return AdmmState(x=x_new, z=z_new, u=u_new, iteration=state.iteration + 1)


def run_steps(op: AnalysisOperator, mm: MeasurementModel, y, p: AdmmParams, steps: int,
              r_inv: Optional[np.ndarray] = None) -> List[AdmmState]:
    """States after 0..steps iterations from the zero state."""
    if r_inv is None:
        r_inv = lasso_r_inverse(op, mm, p.rho)
    states = [AdmmState.zeros(op.n, op.N)]
    for _ in range(steps):
        states.append(admm_step(states[-1], op, mm, y, p, r_inv))
    return states


def solve_generalized_lasso(op: AnalysisOperator, mm: MeasurementModel, y, p: AdmmParams,
                            max_iter: int = 10_000, tol: float = 1e-8) -> AdmmResult:
    check_dimensions(op, mm)
    a2 = assumption2_value(op, mm, p.rho)
    if a2 >= 1.0:
        LOGGER.warning("Assumption 2 value %.4f >= 1 for rho=%g", a2, p.rho)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    r_inv = lasso_r_inverse(op, mm, p.rho)
    state = AdmmState.zeros(op.n, op.N)
    history: List[float] = []
    best = np.inf
    stale = 0
    warned = False
    residual = np.inf
    for _ in range(max_iter):
        state = admm_step(state, op, mm, y, p, r_inv)
        history.append(objective(op, mm, y, state.x, p.lam))
        residual = float(np.linalg.norm(op.phi @ state.x - state.z))
        if residual < tol:
            return AdmmResult(state.x, history, state.iteration, True, residual)
        if history[-1] < best - tol:
            best = history[-1]
            stale = 0
        else:
            stale += 1
        if stale >= STAGNATION_WINDOW and not warned:
            msg = (f"objective stagnated at {history[-1]:.6g} for {STAGNATION_WINDOW} iterations "
                   f"(primal residual {residual:.3e})")
            LOGGER.warning(msg)
            warnings.warn(msg, NoProgress, stacklevel=2)
            warned = True
    return AdmmResult(state.x, history, state.iteration, False, residual)
