"""
2차원 문화 지도 투영
문항별 기대 응답에 사용자가 지정한 가중치를 곱해 (x, y) 좌표로 변환합니다.

    x = offset_x + Σ_i w1_i · response_i
    y = offset_y + Σ_i w2_i · response_i

가중치는 datasets/map_loadings_demo.yaml 같은 YAML 파일로 제공 (요인분석 재현은 범위 밖)
"""
import os
from dataclasses import dataclass
from typing import Dict, Mapping, Sequence, Tuple

import pandas as pd
import yaml

from experiment_validation.metrics import MetricError
from utils.survey_data import HumanDistribution


@dataclass(frozen=True)
class MapProjection:
    loadings: Dict[str, Tuple[float, float]]
    offsets: Tuple[float, float] = (0.0, 0.0)
    axis_names: Tuple[str, str] = ("dim1", "dim2")


def load_map_projection(path: str) -> MapProjection:
    """
    형식:
        axes: [traditional_secular, survival_self_expression]
        offsets: [0.0, 0.0]
        loadings:
          Q164: [-0.5, 0.0]
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Map loadings not found: {path}")
    with open(path, encoding="utf-8") as f:
        doc = yaml.safe_load(f) or {}
    loadings = {}
    for qid, weights in (doc.get("loadings") or {}).items():
        if len(weights) != 2:
            raise MetricError(f"Loading for {qid} must have two weights, got {weights}")
        loadings[str(qid)] = (float(weights[0]), float(weights[1]))
    offsets = tuple(float(v) for v in doc.get("offsets", (0.0, 0.0)))
    axes = tuple(str(a) for a in doc.get("axes", ("dim1", "dim2")))
    return MapProjection(loadings=loadings, offsets=offsets, axis_names=axes)


def project_map(profile: Mapping[str, float], proj: MapProjection) -> Tuple[float, float]:
    missing = sorted(set(profile) - set(proj.loadings))
    if missing:
        raise MetricError(f"No map loadings for {missing}")
    x, y = proj.offsets
    for qid, response in profile.items():
        w1, w2 = proj.loadings[qid]
        x += w1 * response
        y += w2 * response
    return float(x), float(y)


def map_points_table(
    predictions: Sequence,
    human: Mapping[Tuple[str, str], HumanDistribution],
    proj: MapProjection,
) -> pd.DataFrame:
    """
    국가 x (방법, 모델)별 예측 좌표 + 실제 응답 좌표

    지도 가중치가 있는 문항만 사용
    """
    profiles: Dict[Tuple[str, str, str], Dict[str, float]] = {}
    for pred in predictions:
        if pred.question_id in proj.loadings:
            profiles.setdefault((pred.country, pred.method, pred.model), {})[pred.question_id] = pred.expected_response

    rows = []
    human_done = set()
    for (country, method, model), profile in sorted(profiles.items()):
        x, y = project_map(profile, proj)
        rows.append({"country": country, "source": method, "model": model, "x": x, "y": y,
                     "n_items": len(profile)})
        if country in human_done:
            continue
        human_profile = {qid: human[(country, qid)].mean() for qid in profile if (country, qid) in human}
        if human_profile:
            hx, hy = project_map(human_profile, proj)
            rows.append({"country": country, "source": "human", "model": "human", "x": hx, "y": hy,
                         "n_items": len(human_profile)})
            human_done.add(country)
    return pd.DataFrame(rows, columns=["country", "source", "model", "x", "y", "n_items"])
