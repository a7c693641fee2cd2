"""
프롬프트 생성 모듈 (공통)
모든 prompting 모드가 같은 골격을 사용하도록 보장:

    [System]
    {guidance}

    Your persona: {persona}        (sociodemographic / value / fewshot 모드)

    [User]
    {question_text}

    Respond with ONLY the single integer ({min}-{max}):
"""
import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import yaml

from utils.persona_generator import Persona
from utils.survey_data import QuestionSpec

PROMPT_MODES = ("default", "generic", "country", "sociodemographic", "value", "fewshot")
PERSONA_PROMPT_MODES = ("sociodemographic", "value", "fewshot")

DEFAULT_SYSTEM_TEXT = "You are a helpful assistant."
DEFAULT_GUIDANCE_KEY = "social_science"
GENERIC_GUIDANCE_KEY = "generic"

# guidance 파일이 없을 때 사용하는 기본값
SOCIAL_SCIENCE_GUIDANCE = (
    "You are participating in a social science simulation. You will be given a survey "
    "question and must answer it as someone living in {country} would, embracing this "
    "persona's values as your own."
)
GENERIC_GUIDANCE = (
    "You are participating in a social science simulation. You will be given a survey "
    "question and must answer it as a typical human respondent would."
)

_PLACEHOLDER = re.compile(r"\{[^{}]*\}")


class PromptRenderError(ValueError):
    """치환되지 않은 placeholder, country 누락 등"""


@dataclass(frozen=True)
class GuidanceTemplate:
    key: str
    body: str

    def __post_init__(self):
        if not self.body.strip():
            raise PromptRenderError(f"Guidance template '{self.key}' has an empty body")

    @property
    def needs_country(self) -> bool:
        return "{country}" in self.body

    def render(self, country: Optional[str]) -> str:
        text = self.body
        if self.needs_country:
            if not country:
                raise PromptRenderError(f"Guidance '{self.key}' references {{country}} but no country was given")
            text = text.replace("{country}", country)
        leftover = _PLACEHOLDER.findall(text)
        if leftover:
            raise PromptRenderError(f"Guidance '{self.key}' has unresolved placeholders: {leftover}")
        return text


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str
    question_id: str
    admissible_options: Tuple[int, ...]
    # 렌더링된 페르소나의 구조화 데이터 (mock backend 전용, 캐시 키에는 포함되지 않음)
    profile: Dict[str, int] = field(default_factory=dict, compare=False)
    country: Optional[str] = None

    def digest(self) -> str:
        payload = json.dumps(
            [self.system_text, self.user_text, self.question_id, list(self.admissible_options)],
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def load_guidance_templates(path: str) -> Dict[str, GuidanceTemplate]:
    """guidance 템플릿 파일(YAML, [{key, body}, ...]) 로드"""
    if not os.path.exists(path):
        raise FileNotFoundError(f"Guidance templates not found: {path}")
    with open(path, encoding="utf-8") as f:
        records = yaml.safe_load(f) or []
    if isinstance(records, dict):
        records = records.get("templates", [])
    templates = {}
    for rec in records:
        key = str(rec["key"])
        if key in templates:
            raise PromptRenderError(f"Duplicate guidance key: {key}")
        templates[key] = GuidanceTemplate(key=key, body=" ".join(str(rec["body"]).split()))
    return templates


def builtin_guidance(key: str = DEFAULT_GUIDANCE_KEY) -> GuidanceTemplate:
    bodies = {DEFAULT_GUIDANCE_KEY: SOCIAL_SCIENCE_GUIDANCE, GENERIC_GUIDANCE_KEY: GENERIC_GUIDANCE}
    if key not in bodies:
        raise PromptRenderError(f"No built-in guidance '{key}'; load the templates file")
    return GuidanceTemplate(key=key, body=bodies[key])


def _scale_entry(q: QuestionSpec, option: int) -> str:
    if q.labels:
        return f"{option}={q.labels[option]}"
    return f"{option}={q.anchors.get(option, option)}"


def render_question(q: QuestionSpec) -> str:
    """
    문항 + 척도 블록

    Question:
    How important is religion in your life?

    Scale: 1=Very important, 2=Rather important, ...
    """
    scale = ", ".join(_scale_entry(q, k) for k in q.options)
    return f"Question:\n{q.text}\n\nScale: {scale}"


def answer_instruction(q: QuestionSpec) -> str:
    return f"Respond with ONLY the single integer ({q.scale_min}-{q.scale_max}):"


def render_prompt(
    persona: Optional[Persona],
    q: QuestionSpec,
    guidance: GuidanceTemplate,
    mode: str,
    country: Optional[str] = None,
) -> PromptBundle:
    """
    (페르소나, 문항) -> system/user 프롬프트 쌍

    - default : "You are a helpful assistant."
    - generic : 국가 없는 generic guidance
    - country : guidance에 {country} 치환, 페르소나 없음
    - sociodemographic / value / fewshot : guidance + "Your persona: ..."
      (설명문이 없는 페르소나는 country 모드와 동일한 출력)
    """
    if mode not in PROMPT_MODES:
        raise PromptRenderError(f"Unknown prompt mode: {mode}")

    profile: Dict[str, int] = {}
    if mode == "default":
        system_text = DEFAULT_SYSTEM_TEXT
    elif mode == "generic":
        generic = guidance if not guidance.needs_country else builtin_guidance(GENERIC_GUIDANCE_KEY)
        system_text = generic.render(None)
    else:
        system_text = guidance.render(country)
        if mode in PERSONA_PROMPT_MODES and persona is not None:
            persona_text = persona.render()
            if persona_text:
                system_text = f"{system_text}\n\nYour persona: {persona_text}"
                profile = dict(persona.profile)

    user_text = f"{render_question(q)}\n\n{answer_instruction(q)}"
    return PromptBundle(
        system_text=system_text,
        user_text=user_text,
        question_id=q.id,
        admissible_options=tuple(q.options),
        profile=profile,
        country=country,
    )
