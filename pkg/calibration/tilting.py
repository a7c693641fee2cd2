"""
분포 보정: temperature scaling + 평균 보존 exponential tilting

    temperature scaling : p~_k ∝ p_k^(1/T)            (T > 1 이면 평평해짐)
    tilting             : q_k ∝ p_k^(1/T) · exp(β r_k)  (Σ r_k q_k = Σ r_k p_k 가 되도록 β 선택)

β ↦ mean(q(β)) 는 순증가 함수이므로 구간 확장 후 이분법으로 근을 찾습니다.
모든 계산은 p_k > 0 인 support 위의 log 공간에서 수행 (p_k = 0 은 그대로 0).
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.optimize import bisect
from scipy.special import logsumexp

from utils.response_distribution import ResponseDistribution

MEAN_TOLERANCE = 1e-9
# 이분법 종료 기준: 평균 잔차가 이 값 이하면 근으로 간주
RESIDUAL_TOLERANCE = 1e-12
BISECT_XTOL = 1e-14
BISECT_MAXITER = 200
MAX_BRACKET_EXPANSIONS = 200


class CalibrationError(ValueError):
    pass


class TiltInfeasibleError(CalibrationError):
    """목표 평균이 support의 (min r, max r) 개구간 밖"""


@dataclass(frozen=True)
class CalibrationParams:
    T: float
    beta: float = 0.0

    def __post_init__(self):
        if not self.T > 0:
            raise CalibrationError(f"Temperature must be positive, got {self.T}")
        if not np.isfinite(self.beta):
            raise CalibrationError(f"Tilt coefficient must be finite, got {self.beta}")


def _check_temperature(T: float) -> None:
    if not (np.isfinite(T) and T > 0):
        raise CalibrationError(f"Temperature must be a positive finite number, got {T}")


def _from_support(d: ResponseDistribution, support: np.ndarray, log_w: np.ndarray) -> ResponseDistribution:
    probs = np.zeros(len(d.options))
    probs[support] = np.exp(log_w - logsumexp(log_w))
    return ResponseDistribution.from_array(d.question_id, d.options, probs)


def temperature_scale(d: ResponseDistribution, T: float) -> ResponseDistribution:
    """p_k^(1/T) 재정규화 (0인 항목은 0 유지)"""
    _check_temperature(T)
    if T == 1.0:
        return d
    p = d.p
    support = np.flatnonzero(p > 0)
    return _from_support(d, support, np.log(p[support]) / T)


def _tilted_mean(log_base: np.ndarray, r: np.ndarray, beta: float) -> float:
    w = log_base + beta * r
    e = np.exp(w - w.max())
    return float(np.dot(r, e) / e.sum())


def _bracket(f, beta0: float) -> Tuple[float, float]:
    """f(lo) < 0 < f(hi) 가 되도록 beta0 주변에서 구간을 두 배씩 확장"""
    step = max(1.0, abs(beta0))
    lo, hi = beta0 - step, beta0 + step
    f_lo, f_hi = f(lo), f(hi)
    for _ in range(MAX_BRACKET_EXPANSIONS):
        if f_lo < 0 < f_hi:
            return lo, hi
        step *= 2.0
        if f_lo >= 0:
            lo -= step
            f_lo = f(lo)
        if f_hi <= 0:
            hi += step
            f_hi = f(hi)
    raise TiltInfeasibleError(f"Could not bracket the tilt coefficient (f(lo)={f_lo}, f(hi)={f_hi})")


def tilt_mean_preserving(d: ResponseDistribution, T: float) -> Tuple[ResponseDistribution, float]:
    """
    temperature scaling 후 원래 기대 응답을 유지하도록 exponential tilting

    Returns:
        (보정된 분포, β)

    Raises:
        CalibrationError: T <= 0
        TiltInfeasibleError: 목표 평균이 support 범위 밖 / 잔차 검증 실패
    """
    _check_temperature(T)
    p = d.p
    support = np.flatnonzero(p > 0)
    if len(support) == 1 or T == 1.0:
        return d, 0.0

    r = d.values[support]
    log_base = np.log(p[support]) / T
    target = float(np.dot(d.values, p))
    if not (r[0] < target < r[-1]):
        raise TiltInfeasibleError(
            f"{d.question_id}: target mean {target} outside the open support range ({r[0]}, {r[-1]})"
        )

    def residual(beta: float) -> float:
        return _tilted_mean(log_base, r, beta) - target

    def stopping_residual(beta: float) -> float:
        gap = residual(beta)
        return 0.0 if abs(gap) <= RESIDUAL_TOLERANCE else gap

    if residual(0.0) == 0.0:
        return _from_support(d, support, log_base), 0.0

    # moment 근사 초기값: λ = (target - μ_T) / σ_T²
    scaled = np.exp(log_base - logsumexp(log_base))
    mu_t = float(np.dot(r, scaled))
    var_t = float(np.dot((r - mu_t) ** 2, scaled))
    beta0 = (target - mu_t) / var_t if var_t > 1e-12 else 0.0

    lo, hi = _bracket(residual, beta0)
    beta = bisect(stopping_residual, lo, hi, xtol=BISECT_XTOL, maxiter=BISECT_MAXITER)

    q = _from_support(d, support, log_base + beta * r)
    gap = abs(q.mean() - target)
    if gap > MEAN_TOLERANCE:
        raise TiltInfeasibleError(f"{d.question_id}: tilt residual {gap:.3e} exceeds {MEAN_TOLERANCE}")
    return q, float(beta)
