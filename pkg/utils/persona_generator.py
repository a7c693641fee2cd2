"""
페르소나 생성 모듈 (공통)
실제 설문 응답자의 (문항, 응답) 쌍을 자연어 설명문(descriptor)으로 바꾸고,
대상 국가 응답자를 복원 추출하여 페르소나 집단(Population)을 구성합니다.

모드:
- value           : 가치관 문항 응답 -> 카탈로그 설명문
- sociodemographic: 나이/성별/학력 등 속성 열 -> 설명문
- fewshot         : 설명문 대신 "Q: ... A: n" 원 응답을 그대로 제공
"""
import os
import random
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import yaml

from utils.logging_utils import get_logger
from utils.survey_data import QuestionSpec, Respondent, SurveyDataset

logger = get_logger(__name__)

# =============================================================================
# 1. Constants
# =============================================================================

PERSONA_MODES = ("value", "sociodemographic", "fewshot")

# Inglehart-Welzel 문화 지도 10개 문항 (WVS-7 기준 추정치, config에서 교체 가능)
DEFAULT_PERSONA_ITEMS = (
    "Q164",  # God important
    "Q8",    # Autonomy (independence as a child quality)
    "Q184",  # Abortion justifiable
    "Q254",  # National pride
    "Q45",   # Respect for authority
    "Q154",  # Post-materialist aims
    "Q46",   # Happiness
    "Q182",  # Homosexuality justifiable
    "Q209",  # Signed a petition
    "Q57",   # Trust in people
)

DEFAULT_ATTRIBUTES = ("age", "gender", "education")


class PersonaError(ValueError):
    """페르소나 구성 불가 (응답 없음, 카탈로그 누락 등)"""


# =============================================================================
# 2. Descriptor Catalog
# =============================================================================

@dataclass(frozen=True)
class DescriptorCatalog:
    entries: Dict[Tuple[str, int], str]
    provenance: str = ""

    def get(self, question_id: str, option: int) -> str:
        try:
            return self.entries[(question_id, option)]
        except KeyError:
            raise PersonaError(f"No descriptor for ({question_id}, {option}) in catalog") from None

    def has(self, question_id: str, option: int) -> bool:
        return (question_id, option) in self.entries

    def validate(self, questions: Mapping[str, QuestionSpec], items: Sequence[str]) -> None:
        """모든 대상 문항의 모든 선택지에 'You'로 시작하는 설명문이 있는지 확인"""
        problems = []
        for qid in items:
            if qid not in questions:
                problems.append(f"{qid}: not in question catalog")
                continue
            for option in questions[qid].options:
                text = self.entries.get((qid, option))
                if text is None:
                    problems.append(f"{qid}={option}: missing descriptor")
                elif not _starts_with_you(text):
                    problems.append(f"{qid}={option}: descriptor must begin with 'You'")
        if problems:
            raise PersonaError("Descriptor catalog problems: " + "; ".join(problems))


def _starts_with_you(text: str) -> bool:
    normalized = text.strip().lstrip("\"'“‘").lower()
    return normalized.startswith("you")


def load_descriptor_catalog(path: str) -> DescriptorCatalog:
    """
    설명문 카탈로그(YAML) 로드

    형식:
        provenance: "generator=..., prompt_variant=..."
        descriptors:
          Q164:
            1: "You ..."
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Descriptor catalog not found: {path}")
    with open(path, encoding="utf-8") as f:
        doc = yaml.safe_load(f) or {}

    entries: Dict[Tuple[str, int], str] = {}
    for qid, options in (doc.get("descriptors") or {}).items():
        for option, text in (options or {}).items():
            text = str(text).strip()
            if not text:
                raise PersonaError(f"Empty descriptor for ({qid}, {option}) in {path}")
            entries[(str(qid), int(option))] = text
    provenance = doc.get("provenance") or ""
    if isinstance(provenance, dict):
        provenance = ", ".join(f"{k}={v}" for k, v in provenance.items())
    return DescriptorCatalog(entries=entries, provenance=str(provenance).strip())


def load_descriptor_prompt_variants(path: str) -> Dict[str, str]:
    """설명문 생성 프롬프트 변형 (key -> 지시문)"""
    if not os.path.exists(path):
        raise FileNotFoundError(f"Descriptor prompt variants not found: {path}")
    with open(path, encoding="utf-8") as f:
        doc = yaml.safe_load(f) or {}
    variants = {}
    for entry in doc.get("variants") or []:
        key, prompt = str(entry.get("key", "")).strip(), str(entry.get("prompt", "")).strip()
        if not key or not prompt:
            raise PersonaError(f"Descriptor prompt variant needs key and prompt: {entry}")
        variants[key] = prompt
    return variants


def catalog_prompt_variant(catalog: DescriptorCatalog) -> Optional[str]:
    """provenance 문자열의 prompt_variant=... 값"""
    for part in catalog.provenance.split(","):
        name, _, value = part.partition("=")
        if name.strip() == "prompt_variant":
            return value.strip() or None
    return None


# =============================================================================
# 3. Persona / Population
# =============================================================================

@dataclass(frozen=True)
class Persona:
    descriptors: Tuple[str, ...]
    mode: str = "value"
    source_respondent: Optional[str] = None
    nationality: Optional[str] = None
    # 렌더링된 문항의 구조화된 응답 (mock backend가 읽음)
    profile: Dict[str, int] = field(default_factory=dict)
    fewshot_pairs: Tuple[Tuple[str, int], ...] = ()

    @property
    def is_empty(self) -> bool:
        return not self.descriptors and not self.fewshot_pairs

    def render(self) -> str:
        """
        프롬프트의 'Your persona:' 블록에 들어갈 텍스트 (설명문은 줄바꿈으로 구분)

        설명문이 없으면 국적 줄도 생략 -> 빈 문자열 (빈 coalition = country prompting)
        """
        if self.is_empty:
            return ""
        lines = []
        if self.nationality is not None:
            lines.append(f"You are from {self.nationality}.")
        if self.mode == "fewshot":
            lines.extend(f"Q: {text} A: {answer}" for text, answer in self.fewshot_pairs)
        else:
            lines.extend(self.descriptors)
        return "\n".join(lines)


@dataclass(frozen=True)
class Population:
    personas: Tuple[Persona, ...]
    country: str
    seed: int
    items: Tuple[str, ...] = ()
    mode: str = "value"
    include_nationality: bool = False
    # item_subset_population에서 같은 응답자로 재구성하기 위해 보관 (paired design)
    respondents: Tuple[Respondent, ...] = ()
    catalog: Optional[DescriptorCatalog] = None
    questions: Tuple[QuestionSpec, ...] = ()
    attributes: Tuple[str, ...] = DEFAULT_ATTRIBUTES

    def __len__(self) -> int:
        return len(self.personas)


def _sociodemographic_descriptors(resp: Respondent, attributes: Sequence[str]) -> List[str]:
    descriptors = []
    for attr in attributes:
        value = str(resp.attributes.get(attr, "")).strip()
        if value:
            descriptors.append(f"Your {attr.replace('_', ' ')} is {value}.")
    return descriptors


def build_persona(
    resp: Respondent,
    items: Sequence[str],
    catalog: Optional[DescriptorCatalog],
    mode: str = "value",
    include_nationality: bool = False,
    questions: Optional[Mapping[str, QuestionSpec]] = None,
    attributes: Sequence[str] = DEFAULT_ATTRIBUTES,
    allow_empty: bool = False,
) -> Persona:
    """
    응답자 1명 -> 페르소나 1개

    Args:
        resp: 응답자
        items: 페르소나 문항 ID (순서대로 설명문 생성, 무응답 문항은 건너뜀)
        catalog: 설명문 카탈로그 (value 모드 필수)
        mode: value / sociodemographic / fewshot
        include_nationality: True면 "You are from {country}." 추가
        questions: 문항 ID -> QuestionSpec (fewshot 모드 필수)
        attributes: sociodemographic 모드에서 사용할 속성 열
        allow_empty: True면 설명문 0개 페르소나 허용 (coalition 재구성용)

    Raises:
        PersonaError: 대상 문항에 하나도 응답하지 않은 경우 등
    """
    if mode not in PERSONA_MODES:
        raise PersonaError(f"Unknown persona mode: {mode}")
    nationality = resp.country if include_nationality else None

    if mode == "sociodemographic":
        descriptors = _sociodemographic_descriptors(resp, attributes)
        if not descriptors and not allow_empty:
            raise PersonaError(f"Respondent {resp.id} has none of the attributes {list(attributes)}")
        return Persona(descriptors=tuple(descriptors), mode=mode,
                       source_respondent=resp.id, nationality=nationality)

    answered = [(qid, resp.answer(qid)) for qid in items if resp.answer(qid) is not None]
    if not answered and not allow_empty:
        raise PersonaError(f"Respondent {resp.id} answered none of the persona items")
    profile = {qid: answer for qid, answer in answered}

    if mode == "fewshot":
        if questions is None:
            raise PersonaError("fewshot mode needs the question catalog")
        pairs = tuple((questions[qid].text, answer) for qid, answer in answered)
        return Persona(descriptors=(), mode=mode, source_respondent=resp.id,
                       nationality=nationality, profile=profile, fewshot_pairs=pairs)

    if catalog is None:
        raise PersonaError("value mode needs a descriptor catalog")
    descriptors = tuple(catalog.get(qid, answer) for qid, answer in answered)
    return Persona(descriptors=descriptors, mode=mode, source_respondent=resp.id,
                   nationality=nationality, profile=profile)


def _is_eligible(resp: Respondent, items: Sequence[str], mode: str, attributes: Sequence[str]) -> bool:
    if mode == "sociodemographic":
        return bool(_sociodemographic_descriptors(resp, attributes))
    return any(resp.answer(qid) is not None for qid in items)


def sample_population(
    ds: SurveyDataset,
    country: str,
    items: Sequence[str],
    catalog: Optional[DescriptorCatalog],
    n: int,
    seed: int,
    mode: str = "value",
    include_nationality: bool = False,
    attributes: Sequence[str] = DEFAULT_ATTRIBUTES,
) -> Population:
    """
    대상 국가 응답자를 균등 복원 추출하여 N명의 페르소나 집단 생성

    같은 (데이터, 문항, 카탈로그, n, seed, mode, 옵션) -> 항상 같은 집단
    """
    if n < 0:
        raise PersonaError(f"n must be non-negative, got {n}")
    items = tuple(items)
    attributes = tuple(attributes)
    eligible = [r for r in ds.respondents_in(country) if _is_eligible(r, items, mode, attributes)]
    if n > 0 and not eligible:
        raise PersonaError(f"No eligible respondents in {country} for items {list(items)}")

    rng = random.Random(seed)
    sampled = tuple(rng.choices(eligible, k=n)) if n > 0 else ()
    by_id = {q.id: q for q in ds.questions}
    personas = tuple(
        build_persona(r, items, catalog, mode, include_nationality, by_id, attributes)
        for r in sampled
    )
    logger.debug(f"Sampled {n} personas from {len(eligible)} eligible respondents in {country}")
    return Population(
        personas=personas,
        country=country,
        seed=seed,
        items=items,
        mode=mode,
        include_nationality=include_nationality,
        respondents=sampled,
        catalog=catalog,
        questions=tuple(ds.questions),
        attributes=attributes,
    )


def item_subset_population(pop: Population, item_subset) -> Population:
    """
    같은 응답자로 문항 부분집합만 사용해 집단 재구성 (Shapley coalition용)

    빈 부분집합 -> 설명문 0개 페르소나 (country prompting과 동일하게 렌더링됨)
    """
    unknown = set(item_subset) - set(pop.items)
    if unknown:
        raise PersonaError(f"Items not in the population's item list: {sorted(unknown)}")
    items = tuple(qid for qid in pop.items if qid in set(item_subset))
    by_id = {q.id: q for q in pop.questions}
    personas = tuple(
        build_persona(r, items, pop.catalog, pop.mode, pop.include_nationality, by_id,
                      pop.attributes, allow_empty=True)
        for r in pop.respondents
    )
    return Population(
        personas=personas,
        country=pop.country,
        seed=pop.seed,
        items=items,
        mode=pop.mode,
        include_nationality=pop.include_nationality,
        respondents=pop.respondents,
        catalog=pop.catalog,
        questions=pop.questions,
        attributes=pop.attributes,
    )
