"""
페르소나 집단 시뮬레이션 모듈
페르소나마다 프롬프트를 만들어 채점하고, 응답 분포를 균등 가중 평균하여
국가 단위 예측(PopulationPrediction)을 만듭니다.

- country / generic / default 모드는 페르소나 텍스트가 없으므로 (국가, 문항)당 1회만 채점
- 한 페르소나라도 실패하면 해당 문항 전체를 중단 (부분 표본으로 평균하지 않음)
"""
import asyncio
import json
import os
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from experiment_validation.metrics import mae
from utils.logging_utils import get_logger
from utils.output_files import write_table
from utils.persona_generator import Persona, Population, sample_population
from utils.prompts import PERSONA_PROMPT_MODES, GuidanceTemplate, render_prompt
from utils.response_distribution import ResponseDistribution
from utils.scoring_backend import make_request, to_distribution
from utils.survey_data import HumanDistribution, QuestionSpec, SurveyDataset

logger = get_logger(__name__)

__all__ = [
    "ResponseDistribution",
    "PopulationPrediction",
    "SimulationError",
    "expected_response",
    "aggregate_distributions",
    "simulate_population",
    "simulate_population_async",
    "sweep_sample_size",
    "sample_size_band",
    "write_prediction_dump",
    "load_prediction_dump",
]

AGGREGATE_FILE = "predictions.csv"
PERSONA_FILE = "persona_predictions.csv"
AGGREGATE_COLUMNS = ["country", "question_id", "method", "model", "n_personas", "options",
                     "aggregate_probs", "expected_response"]
PERSONA_COLUMNS = ["country", "question_id", "method", "model", "persona_index", "prompt_digest",
                   "probs", "expected_response"]


class SimulationError(RuntimeError):
    def __init__(self, message: str, persona_index: Optional[int] = None):
        self.persona_index = persona_index
        prefix = f"persona #{persona_index}: " if persona_index is not None else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class PopulationPrediction:
    question_id: str
    country: str
    per_persona: Tuple[ResponseDistribution, ...]
    aggregate: ResponseDistribution
    expected_response: float
    method: str = "value"
    model: str = "mock"
    n_personas: int = 0
    # 페르소나별 프롬프트 digest (dump 재현성 확인용)
    persona_digests: Tuple[str, ...] = ()


def expected_response(d: ResponseDistribution) -> float:
    """E_p[r] = sum_k r_k p_k"""
    return float(np.dot(d.values, d.p))


def aggregate_distributions(dists: Sequence[ResponseDistribution]) -> ResponseDistribution:
    """페르소나 분포의 원소별 평균 (균등 가중)"""
    if not dists:
        raise SimulationError("Cannot aggregate an empty set of distributions")
    first = dists[0]
    for d in dists[1:]:
        if d.options != first.options:
            raise SimulationError(f"{first.question_id}: persona distributions use different option grids")
    stacked = np.vstack([d.p for d in dists])
    return ResponseDistribution.from_array(first.question_id, first.options, stacked.mean(axis=0))


# =============================================================================
# 1. 페르소나 1명 채점
# =============================================================================

def _model_label(backend, model_id: Optional[str]) -> str:
    return model_id or getattr(backend, "backend_id", "backend")


def _score_persona(index: int, persona: Optional[Persona], q: QuestionSpec, guidance: GuidanceTemplate,
                   mode: str, country: str, backend, model_id: str) -> Tuple[ResponseDistribution, str]:
    try:
        bundle = render_prompt(persona, q, guidance, mode, country)
        res = backend.score(make_request(bundle, model_id))
        return to_distribution(res, q), bundle.digest()
    except SimulationError:
        raise
    except (ValueError, RuntimeError) as e:
        raise SimulationError(f"{country}/{q.id}: {e}", persona_index=index) from e


def _scoring_targets(pop: Population, mode: str) -> List[Optional[Persona]]:
    if mode in PERSONA_PROMPT_MODES:
        if len(pop) == 0:
            raise SimulationError(f"{pop.country}: empty population for mode '{mode}'")
        return list(pop.personas)
    # 페르소나 없는 모드: 모든 페르소나가 같은 프롬프트 -> 1회 채점
    return [None]


def _build_prediction(pop: Population, q: QuestionSpec, mode: str, model: str,
                      results: Sequence[Tuple[ResponseDistribution, str]]) -> PopulationPrediction:
    per_persona = tuple(d for d, _ in results)
    aggregate = aggregate_distributions(per_persona)
    n_personas = len(pop) if mode in PERSONA_PROMPT_MODES else 0
    return PopulationPrediction(
        question_id=q.id,
        country=pop.country,
        per_persona=per_persona,
        aggregate=aggregate,
        expected_response=expected_response(aggregate),
        method=mode,
        model=model,
        n_personas=n_personas,
        persona_digests=tuple(h for _, h in results),
    )


# =============================================================================
# 2. 집단 시뮬레이션
# =============================================================================

async def simulate_population_async(
    pop: Population,
    q: QuestionSpec,
    guidance: GuidanceTemplate,
    mode: str,
    backend,
    max_workers: int = 8,
    model_id: Optional[str] = None,
) -> PopulationPrediction:
    """asyncio.Semaphore로 동시 요청 수를 제한하며 페르소나 채점 (결과는 페르소나 순서 유지)"""
    model = _model_label(backend, model_id)
    targets = _scoring_targets(pop, mode)
    semaphore = asyncio.Semaphore(max(1, max_workers))

    async def process(index: int, persona: Optional[Persona]):
        async with semaphore:
            return await asyncio.to_thread(
                _score_persona, index, persona, q, guidance, mode, pop.country, backend, model
            )

    results = await asyncio.gather(*(process(i, p) for i, p in enumerate(targets)))
    return _build_prediction(pop, q, mode, model, results)


def simulate_population(
    pop: Population,
    q: QuestionSpec,
    guidance: GuidanceTemplate,
    mode: str,
    backend,
    max_workers: int = 1,
    model_id: Optional[str] = None,
    progress: bool = False,
) -> PopulationPrediction:
    """
    (집단, 문항) -> PopulationPrediction

    Args:
        pop: 페르소나 집단 (persona 모드에서는 비어 있으면 안 됨)
        q: 대상 문항
        guidance: system guidance 템플릿
        mode: 프롬프트 모드 (utils.prompts.PROMPT_MODES)
        backend: score(ScoreRequest) -> ScoreResult 를 제공하는 객체
        max_workers: 1이면 순차 실행, 그 이상이면 asyncio 동시 실행
        model_id: 캐시 키와 보고서에 쓰일 모델 이름 (기본값: backend.backend_id)

    Raises:
        SimulationError: 페르소나 채점 실패 (persona_index 포함)
    """
    if max_workers > 1:
        return asyncio.run(simulate_population_async(pop, q, guidance, mode, backend, max_workers, model_id))

    model = _model_label(backend, model_id)
    targets = _scoring_targets(pop, mode)
    iterator = tqdm(enumerate(targets), total=len(targets), desc=f"{pop.country}/{q.id}",
                    disable=not progress, leave=False)
    results = [
        _score_persona(i, persona, q, guidance, mode, pop.country, backend, model)
        for i, persona in iterator
    ]
    return _build_prediction(pop, q, mode, model, results)


# =============================================================================
# 3. 표본 크기 sweep
# =============================================================================

def sweep_sample_size(
    ds: SurveyDataset,
    country: str,
    q: QuestionSpec,
    ns: Sequence[int],
    repeats: int,
    seed: int,
    items: Sequence[str],
    catalog,
    guidance: GuidanceTemplate,
    backend,
    human: HumanDistribution,
    mode: str = "value",
    include_nationality: bool = False,
    max_workers: int = 1,
) -> pd.DataFrame:
    """
    n별, 반복별로 새 집단을 뽑아 MAE 기록 (반복 i의 seed = seed + i)

    Returns:
        DataFrame [n, repeat, seed, expected_response, human_mean, mae]
    """
    ns = list(ns)
    if not ns or any(n <= 0 for n in ns) or ns != sorted(set(ns)):
        raise ValueError(f"ns must be positive and strictly ascending, got {ns}")
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")

    human_mean = human.mean()
    rows = []
    for n in ns:
        for repeat in range(repeats):
            repeat_seed = seed + repeat
            pop = sample_population(ds, country, items, catalog, n, repeat_seed,
                                    mode=mode, include_nationality=include_nationality)
            pred = simulate_population(pop, q, guidance, mode, backend, max_workers=max_workers)
            rows.append({
                "n": n,
                "repeat": repeat,
                "seed": repeat_seed,
                "expected_response": pred.expected_response,
                "human_mean": human_mean,
                "mae": mae(pred.expected_response, human_mean, q),
            })
        logger.debug(f"sweep {country}/{q.id}: n={n} done ({repeats} repeats)")
    return pd.DataFrame(rows, columns=["n", "repeat", "seed", "expected_response", "human_mean", "mae"])


def sample_size_band(table: pd.DataFrame) -> pd.DataFrame:
    """반복 간 MAE 범위: n별 [mae_min, mae_mean, mae_max, band_width]"""
    grouped = table.groupby("n")["mae"]
    band = pd.DataFrame({
        "mae_min": grouped.min(),
        "mae_mean": grouped.mean(),
        "mae_max": grouped.max(),
    }).reset_index()
    band["band_width"] = band["mae_max"] - band["mae_min"]
    return band


# =============================================================================
# 4. 예측 dump (CSV 2개: 집단 단위 / 페르소나 단위)
# =============================================================================

def _encode(values: Iterable) -> str:
    return json.dumps(list(values))


def write_prediction_dump(predictions: Sequence[PopulationPrediction], out_dir: str) -> Tuple[str, str]:
    """
    predictions.csv         : country, question_id, method, model, n_personas, options, aggregate_probs, expected_response
    persona_predictions.csv : country, question_id, method, model, persona_index, prompt_digest, probs, expected_response

    확률 벡터는 JSON 배열(repr 정밀도)로 저장되어 재로드 시 비트 단위로 동일
    """
    aggregate_rows, persona_rows = [], []
    for pred in predictions:
        aggregate_rows.append({
            "country": pred.country,
            "question_id": pred.question_id,
            "method": pred.method,
            "model": pred.model,
            "n_personas": pred.n_personas,
            "options": _encode(pred.aggregate.options),
            "aggregate_probs": _encode(pred.aggregate.probs),
            "expected_response": repr(pred.expected_response),
        })
        for i, (dist, digest) in enumerate(zip(pred.per_persona, pred.persona_digests)):
            persona_rows.append({
                "country": pred.country,
                "question_id": pred.question_id,
                "method": pred.method,
                "model": pred.model,
                "persona_index": i,
                "prompt_digest": digest,
                "probs": _encode(dist.probs),
                "expected_response": repr(expected_response(dist)),
            })
    aggregate_path = write_table(pd.DataFrame(aggregate_rows, columns=AGGREGATE_COLUMNS), os.path.join(out_dir, AGGREGATE_FILE))
    persona_path = write_table(pd.DataFrame(persona_rows, columns=PERSONA_COLUMNS), os.path.join(out_dir, PERSONA_FILE))
    logger.info(f"Wrote {len(aggregate_rows)} predictions, {len(persona_rows)} persona rows to {out_dir}")
    return aggregate_path, persona_path


def load_prediction_dump(out_dir: str) -> List[PopulationPrediction]:
    aggregate_path = os.path.join(out_dir, AGGREGATE_FILE)
    persona_path = os.path.join(out_dir, PERSONA_FILE)
    for path in (aggregate_path, persona_path):
        if not os.path.exists(path):
            raise FileNotFoundError(f"Prediction dump not found: {path}")

    agg = pd.read_csv(aggregate_path, dtype=str, keep_default_na=False)
    per = pd.read_csv(persona_path, dtype=str, keep_default_na=False)

    persona_groups: Dict[Tuple[str, str, str, str], List] = {}
    for row in per.to_dict("records"):
        key = (row["country"], row["question_id"], row["method"], row["model"])
        persona_groups.setdefault(key, []).append(row)

    predictions = []
    for row in agg.to_dict("records"):
        key = (row["country"], row["question_id"], row["method"], row["model"])
        options = tuple(json.loads(row["options"]))
        aggregate = ResponseDistribution(question_id=row["question_id"], options=options,
                                         probs=tuple(json.loads(row["aggregate_probs"])))
        rows = sorted(persona_groups.get(key, []), key=lambda r: int(r["persona_index"]))
        per_persona = tuple(
            ResponseDistribution(question_id=row["question_id"], options=options,
                                 probs=tuple(json.loads(r["probs"])))
            for r in rows
        )
        predictions.append(PopulationPrediction(
            question_id=row["question_id"],
            country=row["country"],
            per_persona=per_persona,
            aggregate=aggregate,
            expected_response=float(row["expected_response"]),
            method=row["method"],
            model=row["model"],
            n_personas=int(row["n_personas"]),
            persona_digests=tuple(r["prompt_digest"] for r in rows),
        ))
    return predictions
