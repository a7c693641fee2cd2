"""
설문 데이터 모듈 (Survey Data)
WVS 형식의 문항 카탈로그와 응답자 테이블을 읽고, 결측 비율 필터와
국가별 실제 응답 분포(Ground Truth)를 제공합니다.

입력 형식:
- 문항 카탈로그: YAML, `questions:` 아래에 {id, text, scale_min, scale_max,
  labels(순서 있는 리스트), anchors(선택, 양 끝점 라벨), battery(선택)}
- 응답자 테이블: CSV, 1열 응답자 ID, 2열 국가 코드, 이후 문항 ID별 1열.
  빈 칸 또는 음수 값(WVS의 거절/모름 코드)은 결측으로 처리.
"""
import csv
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import yaml

from utils.logging_utils import get_logger
from utils.response_distribution import ResponseDistribution

logger = get_logger(__name__)

DEFAULT_MAX_MISSING_FRACTION = 0.20


# =============================================================================
# 1. 예외
# =============================================================================

class DatasetParseError(ValueError):
    """입력 파일 형식 오류 (행/열 위치 포함)"""

    def __init__(self, path: str, row: int, column, message: str):
        self.path = path
        self.row = row
        self.column = column
        super().__init__(f"{path}: row {row}, column {column}: {message}")


class DatasetValidationError(ValueError):
    """값 범위 위반 등 검증 오류"""

    def __init__(self, message: str, respondent_ids: Sequence[str] = ()):
        self.respondent_ids = list(respondent_ids)
        super().__init__(message)


class EmptyDistributionError(ValueError):
    """유효 응답이 하나도 없는 (문항, 국가) 조합"""


# =============================================================================
# 2. 데이터 타입
# =============================================================================

@dataclass(frozen=True)
class QuestionSpec:
    id: str
    text: str
    scale_min: int
    scale_max: int
    labels: Dict[int, str] = field(default_factory=dict)
    battery: Optional[str] = None
    anchors: Dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.scale_min >= self.scale_max:
            raise DatasetValidationError(
                f"{self.id}: scale_min ({self.scale_min}) must be < scale_max ({self.scale_max})"
            )
        if self.labels and set(self.labels) != set(self.options):
            raise DatasetValidationError(
                f"{self.id}: labels must cover every option {self.scale_min}..{self.scale_max} or be empty"
            )

    @property
    def options(self) -> List[int]:
        return list(range(self.scale_min, self.scale_max + 1))

    @property
    def scale_range(self) -> int:
        return self.scale_max - self.scale_min

    def in_scale(self, value: int) -> bool:
        return self.scale_min <= value <= self.scale_max


@dataclass(frozen=True)
class Respondent:
    id: str
    country: str
    answers: Dict[str, Optional[int]]
    attributes: Dict[str, str] = field(default_factory=dict)

    def answer(self, question_id: str) -> Optional[int]:
        return self.answers.get(question_id)


@dataclass(frozen=True)
class SurveyDataset:
    questions: Tuple[QuestionSpec, ...]
    respondents: Tuple[Respondent, ...]
    attribute_columns: Tuple[str, ...] = ()

    def question(self, question_id: str) -> QuestionSpec:
        for q in self.questions:
            if q.id == question_id:
                return q
        raise DatasetValidationError(f"Unknown question id: {question_id}")

    @property
    def question_ids(self) -> List[str]:
        return [q.id for q in self.questions]

    @property
    def countries(self) -> List[str]:
        return sorted({r.country for r in self.respondents})

    def respondents_in(self, country: str) -> List[Respondent]:
        return [r for r in self.respondents if r.country == country]


@dataclass(frozen=True)
class HumanDistribution:
    question_id: str
    country: str
    counts: Dict[int, int]
    n_valid: int
    n_missing: int
    options: Tuple[int, ...] = ()

    def probs(self) -> np.ndarray:
        if self.n_valid == 0:
            raise EmptyDistributionError(
                f"No valid answers for {self.question_id} in {self.country}"
            )
        counts = np.array([self.counts.get(k, 0) for k in self.options], dtype=float)
        return counts / counts.sum()

    def mean(self) -> float:
        return float(np.dot(np.array(self.options, dtype=float), self.probs()))

    def to_distribution(self) -> ResponseDistribution:
        return ResponseDistribution.from_array(self.question_id, self.options, self.probs())


# =============================================================================
# 3. 로딩 / 저장
# =============================================================================

def _parse_labels(raw, scale_min: int, path: str, row: int) -> Dict[int, str]:
    if raw is None:
        return {}
    if isinstance(raw, list):
        return {scale_min + i: str(label) for i, label in enumerate(raw)}
    if isinstance(raw, dict):
        return {int(k): str(v) for k, v in raw.items()}
    raise DatasetParseError(path, row, "labels", "labels must be a list or a mapping")


def load_question_catalog(path: str) -> List[QuestionSpec]:
    """문항 카탈로그(YAML) 로드"""
    if not os.path.exists(path):
        raise FileNotFoundError(f"Question catalog not found: {path}")
    with open(path, encoding="utf-8") as f:
        try:
            doc = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            row = mark.line + 1 if mark else 0
            col = mark.column + 1 if mark else 0
            raise DatasetParseError(path, row, col, str(getattr(e, "problem", e))) from e

    records = doc.get("questions", []) if isinstance(doc, dict) else None
    if not isinstance(records, list):
        raise DatasetParseError(path, 1, "questions", "expected a 'questions' list")

    questions: List[QuestionSpec] = []
    seen = set()
    for row, rec in enumerate(records, start=1):
        if not isinstance(rec, dict):
            raise DatasetParseError(path, row, "-", "each question must be a mapping")
        for key in ("id", "text", "scale_min", "scale_max"):
            if key not in rec:
                raise DatasetParseError(path, row, key, "missing required field")
        try:
            scale_min = int(rec["scale_min"])
            scale_max = int(rec["scale_max"])
        except (TypeError, ValueError) as e:
            raise DatasetParseError(path, row, "scale_min/scale_max", "not an integer") from e
        qid = str(rec["id"])
        if qid in seen:
            raise DatasetValidationError(f"Duplicate question id in catalog: {qid}")
        seen.add(qid)
        questions.append(QuestionSpec(
            id=qid,
            text=str(rec["text"]),
            scale_min=scale_min,
            scale_max=scale_max,
            labels=_parse_labels(rec.get("labels"), scale_min, path, row),
            battery=rec.get("battery"),
            anchors={int(k): str(v) for k, v in (rec.get("anchors") or {}).items()},
        ))
    return questions


def _parse_cell(value: str, path: str, row: int, column: str) -> Optional[int]:
    value = value.strip()
    if value == "":
        return None
    try:
        number = float(value)
    except ValueError as e:
        raise DatasetParseError(path, row, column, f"not a number: {value!r}") from e
    if number != int(number):
        raise DatasetParseError(path, row, column, f"not an integer: {value!r}")
    number = int(number)
    # WVS 음수 코드 = 거절/모름/해당없음
    return None if number < 0 else number


def load_dataset(
    question_catalog_path: str,
    respondent_table_path: str,
    attribute_columns: Iterable[str] = (),
) -> SurveyDataset:
    """
    문항 카탈로그 + 응답자 테이블을 읽어 검증된 SurveyDataset 반환

    Args:
        question_catalog_path: 문항 카탈로그 YAML 경로
        respondent_table_path: 응답자 CSV 경로
        attribute_columns: 문항이 아닌 인구통계 속성 열 (sociodemographic 페르소나용)

    Raises:
        DatasetParseError: 형식 오류 (행/열 위치 포함)
        DatasetValidationError: 척도 범위를 벗어난 응답 (응답자 ID 목록 포함)
    """
    questions = load_question_catalog(question_catalog_path)
    by_id = {q.id: q for q in questions}
    attribute_columns = tuple(attribute_columns)

    if not os.path.exists(respondent_table_path):
        raise FileNotFoundError(f"Respondent table not found: {respondent_table_path}")
    try:
        df = pd.read_csv(respondent_table_path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        logger.info(f"Empty respondent table: {respondent_table_path}")
        return SurveyDataset(tuple(questions), (), attribute_columns)
    except pd.errors.ParserError as e:
        raise DatasetParseError(respondent_table_path, 0, "-", str(e)) from e

    if len(df.columns) < 2:
        raise DatasetParseError(respondent_table_path, 1, len(df.columns) + 1,
                                "expected respondent id and country columns")
    id_col, country_col = df.columns[0], df.columns[1]
    answer_cols = []
    for col in df.columns[2:]:
        if col in attribute_columns:
            continue
        if col not in by_id:
            raise DatasetParseError(respondent_table_path, 1, col, "column is not a known question id")
        answer_cols.append(col)

    respondents: List[Respondent] = []
    out_of_range: List[str] = []
    # 1행은 헤더 -> 데이터는 2행부터
    for row, rec in enumerate(df.to_dict("records"), start=2):
        answers: Dict[str, Optional[int]] = {}
        bad = False
        for col in answer_cols:
            value = _parse_cell(rec[col], respondent_table_path, row, col)
            if value is not None and not by_id[col].in_scale(value):
                bad = True
            answers[col] = value
        if bad:
            out_of_range.append(rec[id_col])
        respondents.append(Respondent(
            id=rec[id_col],
            country=rec[country_col],
            answers=answers,
            attributes={a: rec[a] for a in attribute_columns if a in rec},
        ))

    if out_of_range:
        raise DatasetValidationError(
            f"Answers outside the question scale for respondents: {', '.join(out_of_range)}",
            out_of_range,
        )

    logger.info(f"Loaded {len(respondents)} respondents, {len(questions)} questions")
    return SurveyDataset(tuple(questions), tuple(respondents), attribute_columns)


def save_dataset(ds: SurveyDataset, question_catalog_path: Optional[str], respondent_table_path: str) -> None:
    """load_dataset의 역연산 (round-trip 보장), question_catalog_path가 None이면 응답자 테이블만 저장"""
    catalog = {"questions": []}
    for q in ds.questions:
        rec = {"id": q.id, "text": q.text, "scale_min": q.scale_min, "scale_max": q.scale_max,
               "labels": [q.labels[k] for k in q.options] if q.labels else []}
        if q.anchors:
            rec["anchors"] = dict(q.anchors)
        if q.battery is not None:
            rec["battery"] = q.battery
        catalog["questions"].append(rec)
    if question_catalog_path is not None:
        with open(question_catalog_path, "w", encoding="utf-8") as f:
            yaml.safe_dump(catalog, f, allow_unicode=True, sort_keys=False)

    directory = os.path.dirname(respondent_table_path)
    if directory:
        os.makedirs(directory, exist_ok=True)

    header = ["respondent_id", "country", *ds.question_ids, *ds.attribute_columns]
    with open(respondent_table_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for r in ds.respondents:
            cells = [r.id, r.country]
            cells += ["" if r.answers.get(qid) is None else str(r.answers[qid]) for qid in ds.question_ids]
            cells += [r.attributes.get(a, "") for a in ds.attribute_columns]
            writer.writerow(cells)


# =============================================================================
# 4. 필터 / Ground Truth
# =============================================================================

def _check_countries(ds: SurveyDataset, countries: Sequence[str]) -> None:
    known = set(ds.countries)
    for c in countries:
        if c not in known:
            raise DatasetValidationError(f"Unknown country code: {c}")


def missing_fraction(ds: SurveyDataset, question_id: str, country: str) -> float:
    group = ds.respondents_in(country)
    n_missing = sum(1 for r in group if r.answer(question_id) is None)
    return n_missing / len(group)


def filter_questions(
    ds: SurveyDataset,
    countries: Sequence[str],
    max_missing_fraction: float = DEFAULT_MAX_MISSING_FRACTION,
) -> List[str]:
    """
    모든 대상 국가에서 결측 비율이 기준 미만인 문항만 반환

    기준 1.0 이상이면 필터를 적용하지 않음 (전체 문항 반환)
    """
    if not countries:
        raise DatasetValidationError("countries must be non-empty")
    if not 0.0 <= max_missing_fraction <= 1.0:
        raise DatasetValidationError(f"max_missing_fraction must be in [0, 1], got {max_missing_fraction}")
    _check_countries(ds, countries)
    if max_missing_fraction >= 1.0:
        return ds.question_ids

    kept = []
    for qid in ds.question_ids:
        if all(missing_fraction(ds, qid, c) < max_missing_fraction for c in countries):
            kept.append(qid)
        else:
            logger.debug(f"{qid} dropped by missingness filter")
    return kept


def human_distribution(ds: SurveyDataset, question_id: str, country: str) -> HumanDistribution:
    """(문항, 국가)별 실제 응답 분포 (결측 제외 집계)"""
    q = ds.question(question_id)
    _check_countries(ds, [country])
    counts = {k: 0 for k in q.options}
    n_missing = 0
    for r in ds.respondents_in(country):
        value = r.answer(question_id)
        if value is None:
            n_missing += 1
        else:
            counts[value] += 1
    n_valid = sum(counts.values())
    if n_valid == 0:
        raise EmptyDistributionError(f"No valid answers for {question_id} in {country}")
    return HumanDistribution(
        question_id=question_id,
        country=country,
        counts=counts,
        n_valid=n_valid,
        n_missing=n_missing,
        options=tuple(q.options),
    )


def country_counts(ds: SurveyDataset) -> Dict[str, int]:
    counts: Dict[str, int] = {}
    for r in ds.respondents:
        counts[r.country] = counts.get(r.country, 0) + 1
    return dict(sorted(counts.items()))
