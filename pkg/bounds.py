# bounds: closed-form constants and generalization bounds for the decoder class
#
#   q      = rho / (alpha - rho ||A^T A||)                 ("stated" rule)
#   G      = 3 (1 + 2 beta q rho),  D_k = sum_{i<k} G^i
#   E_k    = ||A|| ||Y||_F (q G + 36 q^2 rho beta (1 + beta q rho) D_{k-1})
#   K_L    = sum_{k=1..L} G^{L-k} E_k
#   Sigma_L = 2 q rho sqrt(beta) (K_L + ||A|| ||Y||_F q G D_L)
#
# G^L grows geometrically, so everything is carried as a logarithm and only
# exponentiated at the end.

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import integrate
from scipy.special import logsumexp

import linalg
from model import AnalysisOperator, MeasurementModel

LOGGER = logging.getLogger('admm_dad')

Q_RULES = ("stated", "certified")
Y_SOURCES = ("measured", "b_in")


class QUndefined(ArithmeticError):
    pass


class BInBOutMismatch(ValueError):
    pass


@dataclass(frozen=True)
class BoundInputs:
    alpha: float
    beta: float
    rho: float
    lam: float
    a_norm: float
    ata_norm: float
    y_frob: float
    b_in: float
    b_out: float
    n: int
    N: int
    s: int
    L: int
    delta: float = 0.05
    q_rule: str = "stated"
    y_source: str = "measured"

    def __post_init__(self):
        if not (0.0 < self.alpha <= self.beta):
            raise ValueError(f"need 0 < alpha <= beta, got alpha={self.alpha}, beta={self.beta}")
        if not (self.rho > 0 and self.lam > 0):
            raise ValueError("rho and lambda must be > 0")
        if not (self.b_in > 0 and self.b_out > 0):
            raise ValueError("B_in and B_out must be > 0")
        if not (0.0 < self.delta < 1.0):
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if min(self.n, self.N, self.s, self.L) < 1:
            raise ValueError("n, N, s and L must be >= 1")
        if self.a_norm < 0 or self.ata_norm < 0 or self.y_frob < 0:
            raise ValueError("norms must be >= 0")
        if self.q_rule not in Q_RULES:
            raise ValueError(f"q_rule must be one of {Q_RULES}")
        if self.y_source not in Y_SOURCES:
            raise ValueError(f"y_source must be one of {Y_SOURCES}")

    def with_depth(self, depth: int) -> "BoundInputs":
        values = asdict(self)
        values["L"] = int(depth)
        return BoundInputs(**values)


def _exp(log_value: float) -> float:
    if log_value == -np.inf:
        return 0.0
    try:
        return math.exp(log_value)
    except OverflowError:
        return float('inf')


def _log(value: float) -> float:
    return math.log(value) if value > 0 else -np.inf


# -----------------------------
# q and the per-layer constants
# -----------------------------
def q_stated(inputs: BoundInputs) -> float:
    denom = inputs.alpha - inputs.rho * inputs.ata_norm
    if denom <= 0:
        raise QUndefined(
            f"alpha={inputs.alpha:.4g} <= rho*||A^T A||={inputs.rho * inputs.ata_norm:.4g}; q is undefined"
        )
    return inputs.rho / denom


def q_certified(inputs: BoundInputs) -> float:
    """max(stated q, 1/(rho alpha)); the second term bounds ||(A^T A + rho S)^-1|| since A^T A >= 0."""
    return max(q_stated(inputs), 1.0 / (inputs.rho * inputs.alpha))


def compute_q(inputs: BoundInputs) -> float:
    return q_certified(inputs) if inputs.q_rule == "certified" else q_stated(inputs)


def compute_g(inputs: BoundInputs, q: Optional[float] = None) -> float:
    q = compute_q(inputs) if q is None else q
    return 3.0 * (1.0 + 2.0 * inputs.beta * q * inputs.rho)


def log_d(k: int, g: float) -> float:
    """log of D_k = sum_{i=0}^{k-1} G^i (G > 1)."""
    if k <= 0:
        return -np.inf
    log_g = math.log(g)
    # (G^k - 1)/(G - 1) = G^k (1 - G^-k) / (G - 1)
    return k * log_g + math.log1p(-math.exp(-k * log_g)) - math.log(g - 1.0)


def _log_scale(inputs: BoundInputs) -> float:
    return _log(inputs.a_norm) + _log(inputs.y_frob)


def log_e(inputs: BoundInputs, k: int, q: Optional[float] = None) -> float:
    q = compute_q(inputs) if q is None else q
    g = compute_g(inputs, q)
    first = math.log(q * g)
    coeff = 36.0 * q * q * inputs.rho * inputs.beta * (1.0 + inputs.beta * q * inputs.rho)
    second = math.log(coeff) + log_d(k - 1, g)
    return _log_scale(inputs) + float(np.logaddexp(first, second))


def log_kl(inputs: BoundInputs) -> float:
    q = compute_q(inputs)
    log_g = math.log(compute_g(inputs, q))
    depth = inputs.L
    terms = [(depth - k) * log_g + log_e(inputs, k, q) for k in range(1, depth + 1)]
    return float(logsumexp(terms))


def compute_kl(inputs: BoundInputs) -> float:
    return _exp(log_kl(inputs))


def kl_recursion(inputs: BoundInputs) -> float:
    """K_1 = E_1, K_{k+1} = G K_k + E_{k+1} evaluated directly in floats."""
    q = compute_q(inputs)
    g = compute_g(inputs, q)
    k_val = _exp(log_e(inputs, 1, q))
    for k in range(2, inputs.L + 1):
        k_val = g * k_val + _exp(log_e(inputs, k, q))
    return k_val


def log_sigma_l(inputs: BoundInputs) -> float:
    q = compute_q(inputs)
    g = compute_g(inputs, q)
    prefix = math.log(2.0 * q * inputs.rho * math.sqrt(inputs.beta))
    tail = _log_scale(inputs) + math.log(q * g) + log_d(inputs.L, g)
    return prefix + float(np.logaddexp(log_kl(inputs), tail))


def compute_sigma_l(inputs: BoundInputs) -> float:
    return _exp(log_sigma_l(inputs))


def sigma_l_expanded(inputs: BoundInputs) -> float:
    """Sigma_L with the tail written as 3 ||A|| ||Y|| q (1+2 beta q rho) sum_k 3^k (1+2 beta q rho)^k."""
    q = compute_q(inputs)
    base = 1.0 + 2.0 * inputs.beta * q * inputs.rho
    log_terms = [k * (math.log(3.0) + math.log(base)) for k in range(inputs.L)]
    tail = math.log(3.0) + _log_scale(inputs) + math.log(q) + math.log(base) + float(logsumexp(log_terms))
    prefix = math.log(2.0 * q * inputs.rho * math.sqrt(inputs.beta))
    return _exp(prefix + float(np.logaddexp(log_kl(inputs), tail)))


def output_bound(inputs: BoundInputs, k: int) -> float:
    """Frobenius bound on the k-th layer output f^k(Y)."""
    if k < 1:
        raise ValueError("layer index k must be >= 1")
    q = compute_q(inputs)
    g = compute_g(inputs, q)
    log_val = math.log(3.0) + _log_scale(inputs) + math.log(q) + 0.5 * math.log(inputs.beta) + log_d(k, g)
    return _exp(log_val)


# -----------------------------
# Covering numbers and Rademacher terms
# -----------------------------
def covering_log_ball(big_n: int, n: int, t: float, eps: float) -> float:
    """log-count bound N n log(1 + 2t/eps) for the spectral-norm ball of radius t."""
    if not (t > 0 and eps > 0):
        raise ValueError("radius and eps must be > 0")
    return big_n * n * math.log1p(2.0 * t / eps)


def _log1p_from_log(log_x: float) -> float:
    return float(np.logaddexp(0.0, log_x))


def covering_log(inputs: BoundInputs, eps: float) -> float:
    if not eps > 0:
        raise ValueError("eps must be > 0")
    log_ratio = math.log(2.0) + 0.5 * math.log(inputs.beta) + log_sigma_l(inputs) - math.log(eps)
    return inputs.N * inputs.n * _log1p_from_log(log_ratio)


def _log_e_factor(inputs: BoundInputs, constant: float) -> float:
    """log(e (1 + c sqrt(beta) Sigma_L / (sqrt(s) B_out)))."""
    log_ratio = (math.log(constant) + 0.5 * math.log(inputs.beta) + log_sigma_l(inputs)
                 - 0.5 * math.log(inputs.s) - math.log(inputs.b_out))
    return 1.0 + _log1p_from_log(log_ratio)


def _complexity_prefix(inputs: BoundInputs) -> float:
    return math.sqrt(inputs.N * inputs.n / inputs.s)


def rademacher_estimate(inputs: BoundInputs) -> float:
    """Closed-form estimate of the Dudley integral (factor 4 inside the log)."""
    return (8.0 * (inputs.b_in + inputs.b_out) * inputs.b_out * _complexity_prefix(inputs)
            * math.sqrt(_log_e_factor(inputs, 4.0)))


def dudley_integral(inputs: BoundInputs) -> float:
    """16 (B_in + B_out)/s * int_0^{sqrt(s) B_out / 2} sqrt(log N(eps)) d eps, by quadrature."""
    upper = math.sqrt(inputs.s) * inputs.b_out / 2.0
    log_b = math.log(2.0) + 0.5 * math.log(inputs.beta) + log_sigma_l(inputs)
    nn = inputs.N * inputs.n

    def integrand(t: float) -> float:
        if t <= 0.0:
            return 0.0
        return math.sqrt(nn * _log1p_from_log(log_b - math.log(upper * t)))

    # eps = upper * t; the integrand has an integrable log singularity at 0
    value, _err = integrate.quad(integrand, 0.0, 1.0, limit=200)
    return 16.0 * (inputs.b_in + inputs.b_out) / inputs.s * upper * value


def _confidence_term(inputs: BoundInputs) -> float:
    return math.sqrt(2.0 * math.log(4.0 / inputs.delta) / inputs.s)


def theorem4_bound(inputs: BoundInputs, train_mse: float) -> float:
    complexity = (8.0 * (inputs.b_in + inputs.b_out) * inputs.b_out * _complexity_prefix(inputs)
                  * math.sqrt(_log_e_factor(inputs, 2.0)))
    confidence = 4.0 * (inputs.b_in + inputs.b_out) ** 2 * _confidence_term(inputs)
    return float(train_mse) + complexity + confidence


def theorem5_bound(inputs: BoundInputs, train_mse: float) -> float:
    if not math.isclose(inputs.b_in, inputs.b_out, rel_tol=1e-12):
        raise BInBOutMismatch(f"B_in={inputs.b_in:.6g} differs from B_out={inputs.b_out:.6g}")
    inner = _complexity_prefix(inputs) * math.sqrt(_log_e_factor(inputs, 2.0)) + _confidence_term(inputs)
    return float(train_mse) + 16.0 * inputs.b_out ** 2 * inner


# -----------------------------
# Matrix-perturbation helpers
# -----------------------------
def invertibility_bound(a_mat, b_mat) -> Optional[float]:
    """||A^-1|| / (1 - ||A^-1|| ||B||) when ||A^-1|| ||B|| < 1, else None."""
    a_inv_norm = linalg.spectral_norm(linalg.invert(a_mat))
    prod = a_inv_norm * linalg.spectral_norm(b_mat)
    if prod >= 1.0:
        return None
    return a_inv_norm / (1.0 - prod)


def inverse_difference_bound(a_mat, b_mat) -> float:
    """||B^-1|| ||A^-1|| ||A - B||, an upper bound on ||B^-1 - A^-1||."""
    a_inv = linalg.invert(a_mat)
    b_inv = linalg.invert(b_mat)
    diff = np.asarray(a_mat, dtype=np.float64) - np.asarray(b_mat, dtype=np.float64)
    return linalg.spectral_norm(b_inv) * linalg.spectral_norm(a_inv) * linalg.spectral_norm(diff)


# -----------------------------
# Reports
# -----------------------------
@dataclass
class BoundReport:
    q: float
    q_stated: float
    q_certified: float
    g: float
    k_l: float
    sigma_l: float
    output_bound: float
    rademacher_estimate: float
    theorem4_excess: float
    theorem5_excess: Optional[float]
    q_rule: str = "stated"
    y_source: str = "measured"
    inputs: Optional[BoundInputs] = None

    def covering_log_at(self, eps: float) -> float:
        if self.inputs is None:
            raise ValueError("report was built without inputs")
        return covering_log(self.inputs, eps)

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("inputs", None)
        return out


def bound_inputs_from(op: AnalysisOperator, mm: MeasurementModel, y_matrix, rho: float, lam: float,
                      b_in: float, b_out: float, depth: int, delta: float = 0.05,
                      q_rule: str = "stated", y_source: str = "measured") -> BoundInputs:
    ys = np.asarray(y_matrix, dtype=np.float64)
    if ys.ndim == 1:
        ys = ys.reshape(-1, 1)
    s = int(ys.shape[1])
    y_frob = linalg.frobenius_norm(ys) if y_source == "measured" else math.sqrt(s) * float(b_in)
    return BoundInputs(
        alpha=op.alpha, beta=op.beta, rho=float(rho), lam=float(lam), a_norm=mm.a_norm,
        ata_norm=mm.ata_norm, y_frob=y_frob, b_in=float(b_in), b_out=float(b_out),
        n=op.n, N=op.N, s=s, L=int(depth), delta=float(delta), q_rule=q_rule, y_source=y_source,
    )


def compute_report(inputs: BoundInputs, train_mse: float = 0.0) -> BoundReport:
    stated = q_stated(inputs)
    certified = q_certified(inputs)
    q = compute_q(inputs)
    t4 = theorem4_bound(inputs, train_mse) - train_mse
    try:
        t5: Optional[float] = theorem5_bound(inputs, train_mse) - train_mse
    except BInBOutMismatch:
        t5 = None
    if certified > stated:
        LOGGER.debug("q: stated %.4g below 1/(rho alpha); certified %.4g", stated, certified)
    return BoundReport(
        q=q, q_stated=stated, q_certified=certified, g=compute_g(inputs, q),
        k_l=compute_kl(inputs), sigma_l=compute_sigma_l(inputs),
        output_bound=output_bound(inputs, inputs.L), rademacher_estimate=rademacher_estimate(inputs),
        theorem4_excess=t4, theorem5_excess=t5, q_rule=inputs.q_rule, y_source=inputs.y_source,
        inputs=inputs,
    )
