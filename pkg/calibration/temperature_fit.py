"""
Leave-one-out temperature 적합 + temperature sweep

- 평가 문항 하나를 빼고 나머지 문항에서 기준값(criterion)이 최소인 T를 grid에서 고른 뒤
  빠진 문항에 적용 (자기 자신의 사람 응답은 사용하지 않음)
- criterion: wasserstein (기본) / variance_gap
- 동률이면 |log T|가 가장 작은(T=1에 가까운) 값 선택
"""
import math
from dataclasses import dataclass, replace
from typing import Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from calibration.tilting import (
    CalibrationError,
    CalibrationParams,
    TiltInfeasibleError,
    temperature_scale,
    tilt_mean_preserving,
)
from experiment_validation.metrics import mae, normalized_variance, wasserstein1d
from simulation.population_simulation import PopulationPrediction, expected_response
from utils.logging_utils import get_logger
from utils.output_files import write_table
from utils.response_distribution import ResponseDistribution
from utils.survey_data import HumanDistribution, QuestionSpec

logger = get_logger(__name__)

# 0.25 ~ 16 사이 로그 간격 21개 (1.0은 포함되지 않음)
DEFAULT_T_GRID = tuple(float(t) for t in 2.0 ** np.linspace(-2, 4, 21))
# sweep 기본값: 흔히 쓰이는 0.3과 기본 온도 1.0 포함
DEFAULT_SWEEP_GRID = (0.25, 0.3, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0)
CRITERIA = ("wasserstein", "variance_gap")
TIE_TOLERANCE = 1e-12

PredictionLike = Union[PopulationPrediction, ResponseDistribution]
HumanLike = Union[HumanDistribution, ResponseDistribution]


@dataclass(frozen=True)
class LooFold:
    held_out: str
    T: float
    train_questions: Tuple[str, ...]
    train_criterion: float


@dataclass(frozen=True)
class CalibrationFit:
    per_question_T: Dict[str, float]
    objective: str
    folds: Tuple[LooFold, ...]

    def params(self, question_id: str) -> CalibrationParams:
        return CalibrationParams(T=self.per_question_T[question_id])


def _as_distribution(x) -> ResponseDistribution:
    if isinstance(x, PopulationPrediction):
        return x.aggregate
    if isinstance(x, HumanDistribution):
        return x.to_distribution()
    return x


def _pairs(predictions: Mapping[str, object], human: Mapping[str, object]
           ) -> Dict[str, List[Tuple[ResponseDistribution, ResponseDistribution]]]:
    """문항 ID -> [(예측, 사람)] (국가가 여러 개면 문항당 여러 쌍)"""
    pairs: Dict[str, List[Tuple[ResponseDistribution, ResponseDistribution]]] = {}
    for qid, preds in predictions.items():
        if qid not in human:
            raise CalibrationError(f"No human distribution for question {qid}")
        humans = human[qid]
        preds = list(preds) if isinstance(preds, (list, tuple)) else [preds]
        humans = list(humans) if isinstance(humans, (list, tuple)) else [humans]
        if len(preds) != len(humans):
            raise CalibrationError(f"{qid}: {len(preds)} predictions but {len(humans)} human distributions")
        pairs[qid] = [(_as_distribution(p), _as_distribution(h)) for p, h in zip(preds, humans)]
    return pairs


def _safe_tilt(d: ResponseDistribution, T: float) -> Tuple[ResponseDistribution, float]:
    try:
        return tilt_mean_preserving(d, T)
    except TiltInfeasibleError as e:
        # 수치적으로 point mass인 분포: 보정하지 않고 그대로 사용
        logger.warning(f"Tilt skipped: {e}")
        return d, 0.0


def criterion_value(pred: ResponseDistribution, human: ResponseDistribution, criterion: str) -> float:
    if criterion == "wasserstein":
        return wasserstein1d(pred, human)
    if criterion == "variance_gap":
        return abs(normalized_variance(pred) - normalized_variance(human))
    raise CalibrationError(f"Unknown calibration criterion: {criterion} (expected one of {CRITERIA})")


def _select(grid: Sequence[float], scores: np.ndarray) -> int:
    best = float(np.min(scores))
    tied = [i for i, s in enumerate(scores) if s <= best + TIE_TOLERANCE]
    return min(tied, key=lambda i: (abs(math.log(grid[i])), grid[i]))


def fit_temperature_loo(
    predictions: Mapping[str, object],
    human: Mapping[str, object],
    grid: Sequence[float] = DEFAULT_T_GRID,
    criterion: str = "wasserstein",
) -> CalibrationFit:
    """
    문항 단위 leave-one-out T 적합

    Args:
        predictions: 문항 ID -> 예측 (PopulationPrediction / ResponseDistribution, 국가별 리스트 가능)
        human: 문항 ID -> 사람 분포 (predictions와 같은 구조)
        grid: 후보 T
        criterion: wasserstein / variance_gap (보정 후 분포 기준)
    """
    if criterion not in CRITERIA:
        raise CalibrationError(f"Unknown calibration criterion: {criterion} (expected one of {CRITERIA})")
    grid = [float(t) for t in grid]
    if not grid:
        raise CalibrationError("Temperature grid is empty")
    for t in grid:
        CalibrationParams(T=t)
    pairs = _pairs(predictions, human)
    if len(pairs) < 2:
        raise CalibrationError(f"Leave-one-out fitting needs >= 2 questions, got {len(pairs)}")

    # (문항, T) 별 criterion 합과 개수를 미리 계산
    qids = list(pairs)
    sums = np.zeros((len(qids), len(grid)))
    counts = np.array([len(pairs[qid]) for qid in qids], dtype=float)
    for i, qid in enumerate(qids):
        for j, T in enumerate(grid):
            sums[i, j] = sum(criterion_value(_safe_tilt(p, T)[0], h, criterion) for p, h in pairs[qid])

    per_question_T: Dict[str, float] = {}
    folds = []
    for i, qid in enumerate(qids):
        train = [k for k in range(len(qids)) if k != i]
        scores = sums[train].sum(axis=0) / counts[train].sum()
        best = _select(grid, scores)
        per_question_T[qid] = grid[best]
        folds.append(LooFold(
            held_out=qid,
            T=grid[best],
            train_questions=tuple(qids[k] for k in train),
            train_criterion=float(scores[best]),
        ))
    logger.info(f"LOO temperature fit ({criterion}): "
                + ", ".join(f"{q}={t:.3g}" for q, t in per_question_T.items()))
    return CalibrationFit(per_question_T=per_question_T, objective=criterion, folds=tuple(folds))


def calibrate_prediction(pred: PopulationPrediction, T: float) -> Tuple[PopulationPrediction, float]:
    """집단 예측 분포에 평균 보존 tilting 적용 (per_persona는 비움)"""
    q, beta = _safe_tilt(pred.aggregate, T)
    calibrated = replace(
        pred,
        per_persona=(),
        persona_digests=(),
        aggregate=q,
        expected_response=expected_response(q),
        method=f"{pred.method}_calibrated",
    )
    return calibrated, beta


def apply_calibration(
    predictions: Sequence[PopulationPrediction],
    fit: CalibrationFit,
    human: Mapping[Tuple[str, str], HumanLike],
    questions: Mapping[str, QuestionSpec],
) -> Tuple[List[PopulationPrediction], pd.DataFrame]:
    """
    적합된 T를 각 (국가, 문항) 예측에 적용

    Returns:
        (보정된 예측 목록, 보고서 DataFrame)
    """
    calibrated, rows = [], []
    for pred in predictions:
        if pred.question_id not in fit.per_question_T:
            raise CalibrationError(f"No fitted temperature for question {pred.question_id}")
        T = fit.per_question_T[pred.question_id]
        new_pred, beta = calibrate_prediction(pred, T)
        h = _as_distribution(human[(pred.country, pred.question_id)])
        q = questions[pred.question_id]
        calibrated.append(new_pred)
        rows.append({
            "country": pred.country,
            "question_id": pred.question_id,
            "method": pred.method,
            "model": pred.model,
            "T": T,
            "beta": beta,
            "criterion": fit.objective,
            "criterion_before": criterion_value(pred.aggregate, h, fit.objective),
            "criterion_after": criterion_value(new_pred.aggregate, h, fit.objective),
            "mae_before": mae(pred.expected_response, h.mean(), q),
            "mae_after": mae(new_pred.expected_response, h.mean(), q),
            "pred_norm_variance": normalized_variance(pred.aggregate),
            "calibrated_norm_variance": normalized_variance(new_pred.aggregate),
            "human_norm_variance": normalized_variance(h),
        })
    return calibrated, pd.DataFrame(rows)


def write_calibration_report(report: pd.DataFrame, path: str) -> str:
    return write_table(report, path)


def temperature_sweep(
    predictions: Mapping[str, object],
    human: Mapping[str, object],
    Ts: Sequence[float] = DEFAULT_SWEEP_GRID,
) -> pd.DataFrame:
    """
    T별 평균 MAE / Wasserstein (plain scaling, mean-preserving tilting 둘 다)

    Returns:
        DataFrame [method, T, mae, wasserstein, n_pairs]
        (tilting의 MAE는 T와 무관하게 일정)
    """
    for T in Ts:
        CalibrationParams(T=float(T))
    pairs = [pair for plist in _pairs(predictions, human).values() for pair in plist]
    if not pairs:
        raise CalibrationError("temperature_sweep needs at least one (prediction, human) pair")

    rows = []
    for T in Ts:
        T = float(T)
        for method in ("scaling", "tilting"):
            maes, dists = [], []
            for p, h in pairs:
                q = temperature_scale(p, T) if method == "scaling" else _safe_tilt(p, T)[0]
                maes.append(abs(q.mean() - h.mean()) / (h.scale_max - h.scale_min))
                dists.append(wasserstein1d(q, h))
            rows.append({
                "method": method,
                "T": T,
                "mae": float(np.mean(maes)),
                "wasserstein": float(np.mean(dists)),
                "n_pairs": len(pairs),
            })
    return pd.DataFrame(rows, columns=["method", "T", "mae", "wasserstein", "n_pairs"])
