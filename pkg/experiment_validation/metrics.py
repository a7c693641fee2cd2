"""
평가 지표 모듈
예측 분포와 실제(사람) 응답 분포를 비교합니다.

- MAE                 : |예측 평균 - 실제 평균| / (scale_max - scale_min)
- normalized variance : 분산 / ((scale_max - scale_min) / 2)^2
- Wasserstein-1       : 순서 척도 위 CDF 차이의 합 (인접 선택지 간격 1, 범위 정규화 없음)
"""
from dataclasses import asdict, dataclass
from typing import Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import wasserstein_distance

from utils.logging_utils import get_logger
from utils.response_distribution import ResponseDistribution
from utils.survey_data import HumanDistribution, QuestionSpec

logger = get_logger(__name__)

MEAN_RANGE_TOLERANCE = 1e-9
ALL = "ALL"
ENSEMBLE = "ensemble"
METRIC_COLUMNS = ["mae", "pred_norm_variance", "human_norm_variance", "wasserstein"]

DistributionLike = Union[ResponseDistribution, HumanDistribution]


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class EvalCell:
    country: str
    question_id: str
    method: str
    model: str
    mae: float
    pred_norm_variance: float
    human_norm_variance: float
    wasserstein: float
    pred_mean: float
    human_mean: float
    scale_range: int

    def __post_init__(self):
        values = (self.mae, self.pred_norm_variance, self.human_norm_variance, self.wasserstein)
        if not all(np.isfinite(v) for v in values):
            raise MetricError(f"Non-finite metric for {self.country}/{self.question_id}/{self.method}")


# =============================================================================
# 1. 지표
# =============================================================================

def mae(pred_mean: float, human_mean: float, q: QuestionSpec) -> float:
    width = q.scale_max - q.scale_min
    if width <= 0:
        raise MetricError(f"{q.id}: degenerate scale {q.scale_min}-{q.scale_max}")
    for name, value in (("prediction", pred_mean), ("human", human_mean)):
        if not (q.scale_min - MEAN_RANGE_TOLERANCE <= value <= q.scale_max + MEAN_RANGE_TOLERANCE):
            raise MetricError(f"{q.id}: {name} mean {value} outside scale {q.scale_min}-{q.scale_max}")
    return abs(pred_mean - human_mean) / width


def _as_distribution(d: DistributionLike) -> ResponseDistribution:
    if isinstance(d, HumanDistribution):
        return d.to_distribution()
    return d


def normalized_variance(d: DistributionLike) -> float:
    """분산을 척도 최대 분산(양 끝점 반반)으로 나눈 값, [0, 1]"""
    d = _as_distribution(d)
    half_range = (d.scale_max - d.scale_min) / 2.0
    if half_range <= 0:
        raise MetricError(f"{d.question_id}: degenerate scale")
    return d.variance() / half_range ** 2


def wasserstein1d(p: ResponseDistribution, h: DistributionLike) -> float:
    """같은 선택지 grid 위의 1차 Wasserstein 거리 (= sum_k |CDF_p(k) - CDF_h(k)|)"""
    h = _as_distribution(h)
    if p.options != h.options:
        raise MetricError(f"{p.question_id}: option grids differ ({p.options} vs {h.options})")
    values = p.values
    return float(wasserstein_distance(values, values, u_weights=p.p, v_weights=h.p))


# =============================================================================
# 2. 예측 평가
# =============================================================================

def evaluate_predictions(
    predictions: Sequence,
    human: Mapping[Tuple[str, str], HumanDistribution],
    questions: Mapping[str, QuestionSpec],
) -> List[EvalCell]:
    """
    PopulationPrediction 목록 -> EvalCell 목록

    Args:
        predictions: PopulationPrediction 목록
        human: (국가, 문항 ID) -> HumanDistribution
        questions: 문항 ID -> QuestionSpec
    """
    logger.warning("Human means are unweighted (survey weights ignored); "
                   "Wasserstein distances use unit option spacing and are not range-normalized")
    cells = []
    for pred in predictions:
        key = (pred.country, pred.question_id)
        if key not in human:
            raise MetricError(f"No human distribution for {key}")
        h = human[key]
        q = questions[pred.question_id]
        human_mean = h.mean()
        cells.append(EvalCell(
            country=pred.country,
            question_id=pred.question_id,
            method=pred.method,
            model=pred.model,
            mae=mae(pred.expected_response, human_mean, q),
            pred_norm_variance=normalized_variance(pred.aggregate),
            human_norm_variance=normalized_variance(h),
            wasserstein=wasserstein1d(pred.aggregate, h),
            pred_mean=pred.expected_response,
            human_mean=human_mean,
            scale_range=q.scale_range,
        ))
    return cells


def cells_to_frame(cells: Sequence[EvalCell]) -> pd.DataFrame:
    columns = list(EvalCell.__dataclass_fields__)
    return pd.DataFrame([asdict(c) for c in cells], columns=columns)


def cells_from_frame(df: pd.DataFrame) -> List[EvalCell]:
    """evaluation/cells.csv -> EvalCell 목록"""
    missing = set(EvalCell.__dataclass_fields__) - set(df.columns)
    if missing:
        raise MetricError(f"Evaluation table lacks columns {sorted(missing)}")
    return [
        EvalCell(
            country=str(r["country"]),
            question_id=str(r["question_id"]),
            method=str(r["method"]),
            model=str(r["model"]),
            mae=float(r["mae"]),
            pred_norm_variance=float(r["pred_norm_variance"]),
            human_norm_variance=float(r["human_norm_variance"]),
            wasserstein=float(r["wasserstein"]),
            pred_mean=float(r["pred_mean"]),
            human_mean=float(r["human_mean"]),
            scale_range=int(r["scale_range"]),
        )
        for r in df.to_dict("records")
    ]


def _group_means(df: pd.DataFrame, keys: List[str]) -> pd.DataFrame:
    out = df.groupby(keys, sort=True)[METRIC_COLUMNS].mean()
    out["n_cells"] = df.groupby(keys, sort=True).size()
    return out.reset_index()


def _ensemble_cells(df: pd.DataFrame) -> pd.DataFrame:
    """모델 간 앙상블: (국가, 문항, 방법)별 예측 평균을 평균낸 뒤 MAE 재계산"""
    grouped = df.groupby(["country", "question_id", "method"], sort=True)
    ens = grouped.agg(
        pred_mean=("pred_mean", "mean"),
        human_mean=("human_mean", "first"),
        scale_range=("scale_range", "first"),
        pred_norm_variance=("pred_norm_variance", "mean"),
        human_norm_variance=("human_norm_variance", "first"),
        wasserstein=("wasserstein", "mean"),
        n_models=("model", "nunique"),
    ).reset_index()
    ens["mae"] = (ens["pred_mean"] - ens["human_mean"]).abs() / ens["scale_range"]
    return ens


def summarize_cells(cells: Sequence[EvalCell]) -> pd.DataFrame:
    """
    집계 행 생성

    level:
        model_country : (모델, 국가, 방법)
        model         : (모델, 방법) 전체 국가
        country       : (국가, 방법) 전체 모델 (heatmap 상단 행)
        ensemble      : (국가, 방법) 모델 간 앙상블 예측
        all           : 방법별 전체 평균
    """
    df = cells_to_frame(cells)
    if df.empty:
        return pd.DataFrame(columns=["level", "model", "country", "method"] + METRIC_COLUMNS + ["n_cells"])

    parts = []
    part = _group_means(df, ["model", "country", "method"])
    part.insert(0, "level", "model_country")
    parts.append(part)

    part = _group_means(df, ["model", "method"])
    part.insert(0, "level", "model")
    part.insert(2, "country", ALL)
    parts.append(part)

    part = _group_means(df, ["country", "method"])
    part.insert(0, "level", "country")
    part.insert(1, "model", ALL)
    parts.append(part)

    ens = _ensemble_cells(df)
    part = _group_means(ens, ["country", "method"])
    part.insert(0, "level", "ensemble")
    part.insert(1, "model", ENSEMBLE)
    parts.append(part)

    part = _group_means(df, ["method"])
    part.insert(0, "level", "all")
    part.insert(1, "model", ALL)
    part.insert(2, "country", ALL)
    parts.append(part)

    summary = pd.concat(parts, ignore_index=True)
    return summary[["level", "model", "country", "method"] + METRIC_COLUMNS + ["n_cells"]]


# =============================================================================
# 3. 그림용 long-format 테이블
# =============================================================================

def mae_lines_table(cells: Sequence[EvalCell]) -> pd.DataFrame:
    """국가 x 방법 평균 MAE (모델별 + 전체 모델)"""
    summary = summarize_cells(cells)
    keep = summary[summary["level"].isin(["model_country", "country"])]
    return keep[["model", "country", "method", "mae", "n_cells"]].reset_index(drop=True)


def variance_box_table(cells: Sequence[EvalCell]) -> pd.DataFrame:
    """문항별 normalized variance (예측 / 사람) long format"""
    df = cells_to_frame(cells)
    pred = df[["model", "country", "question_id", "method", "pred_norm_variance"]].rename(
        columns={"pred_norm_variance": "norm_variance"})
    human = df[["country", "question_id", "human_norm_variance"]].drop_duplicates().rename(
        columns={"human_norm_variance": "norm_variance"})
    human.insert(0, "model", "human")
    human["method"] = "human"
    return pd.concat([pred, human[pred.columns]], ignore_index=True)


def question_scatter_table(cells: Sequence[EvalCell], x_method: str = "country",
                           y_method: str = "value") -> pd.DataFrame:
    """(모델, 문항)별 두 방법의 국가 평균 MAE 비교"""
    df = cells_to_frame(cells)
    df = df[df["method"].isin([x_method, y_method])]
    pivot = df.pivot_table(index=["model", "question_id"], columns="method", values="mae", aggfunc="mean")
    for method in (x_method, y_method):
        if method not in pivot.columns:
            raise MetricError(f"question_scatter needs cells for method '{method}'")
    pivot = pivot.reset_index()
    return pd.DataFrame({
        "model": pivot["model"],
        "question_id": pivot["question_id"],
        f"mae_{x_method}": pivot[x_method],
        f"mae_{y_method}": pivot[y_method],
    })


def guidance_box_table(cells: Sequence[EvalCell]) -> pd.DataFrame:
    """method 라벨이 '<mode>@<guidance key>' 형식인 셀의 국가별 MAE"""
    df = cells_to_frame(cells)
    df = df[df["method"].str.contains("@", regex=False)]
    if df.empty:
        raise MetricError("guidance_box needs predictions simulated with several guidance keys")
    split = df["method"].str.split("@", n=1, expand=True)
    df = df.assign(mode=split[0], guidance=split[1])
    out = df.groupby(["model", "country", "mode", "guidance"], sort=True)["mae"].mean().reset_index()
    return out
