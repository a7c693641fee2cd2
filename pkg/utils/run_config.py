"""
실행 설정 모듈 (RunConfig)
우선순위: CLI 플래그 > 설정 파일(YAML) > 기본값(DEFAULT_CONFIG)

설정 파일에 알 수 없는 키가 있으면 ConfigError (오타가 조용히 무시되지 않도록)
"""
import copy
import hashlib
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import Any, Dict, List, Mapping, Optional

import yaml

from utils.persona_generator import DEFAULT_ATTRIBUTES, DEFAULT_PERSONA_ITEMS

# 평가 대상 10개국
DEFAULT_COUNTRIES = [
    "Moldova", "Taiwan", "Japan", "Iceland", "Sweden",
    "Puerto Rico", "Colombia", "Ghana", "Jordan", "United Kingdom",
]


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    question_catalog: str = "datasets/question_catalog.yaml"
    respondent_table: str = "datasets/demo/respondents.csv"
    attribute_columns: List[str] = field(default_factory=lambda: list(DEFAULT_ATTRIBUTES))
    max_missing_fraction: float = 0.20


@dataclass
class PersonaConfig:
    items: List[str] = field(default_factory=lambda: list(DEFAULT_PERSONA_ITEMS))
    descriptor_catalog: str = "datasets/descriptor_catalog.yaml"
    descriptor_prompts: Optional[str] = "datasets/descriptor_prompts.yaml"
    n: int = 200
    include_nationality: bool = False
    attributes: List[str] = field(default_factory=lambda: list(DEFAULT_ATTRIBUTES))


@dataclass
class PromptConfig:
    mode: str = "value"
    guidance_key: str = "social_science"
    # 2개 이상이면 guidance별로 시뮬레이션 (method 라벨: "<mode>@<key>")
    guidance_keys: List[str] = field(default_factory=list)
    guidance_file: str = "datasets/guidance_templates.yaml"


@dataclass
class BackendConfig:
    kind: str = "mock"
    model: Optional[str] = None
    base_url: Optional[str] = None
    strategy: str = "candidate"
    rps: float = 0.0
    max_retries: int = 3
    cache_path: Optional[str] = "cache/responses.jsonl"


@dataclass
class MockConfig:
    gamma: float = 2.0
    mean_rule: str = "profile_position"


@dataclass
class CalibrationConfig:
    grid: List[float] = field(default_factory=list)
    criterion: str = "wasserstein"
    sweep_grid: List[float] = field(default_factory=list)


@dataclass
class EvaluationConfig:
    # 비어 있으면 결측 필터를 통과한 문항 중 페르소나 문항을 제외한 전부
    questions: List[str] = field(default_factory=list)
    map_loadings: Optional[str] = "datasets/map_loadings_demo.yaml"
    sample_sizes: List[int] = field(default_factory=lambda: [5, 20, 100, 500])
    repeats: int = 20


@dataclass
class ShapleyConfig:
    mode: str = "exact"
    n_permutations: int = 1000
    n_personas: int = 50


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    persona: PersonaConfig = field(default_factory=PersonaConfig)
    prompt: PromptConfig = field(default_factory=PromptConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    mock: MockConfig = field(default_factory=MockConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    shapley: ShapleyConfig = field(default_factory=ShapleyConfig)
    seed: int = 0
    countries: List[str] = field(default_factory=lambda: list(DEFAULT_COUNTRIES))
    out_dir: str = "runs"
    max_workers: int = 1

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def digest(self) -> str:
        text = yaml.safe_dump(self.to_dict(), sort_keys=True, allow_unicode=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    @property
    def guidance_keys(self) -> List[str]:
        return list(self.prompt.guidance_keys) or [self.prompt.guidance_key]


DEFAULT_CONFIG: Dict[str, Any] = RunConfig().to_dict()


def _merge(base: Dict[str, Any], update: Mapping[str, Any], path: str = "") -> Dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"Unknown config key: {where}")
        if isinstance(base[key], dict):
            if not isinstance(value, Mapping):
                raise ConfigError(f"Config key {where} must be a mapping")
            merged[key] = _merge(base[key], value, where + ".")
        else:
            merged[key] = value
    return merged


def _dotted_to_nested(overrides: Mapping[str, Any]) -> Dict[str, Any]:
    nested: Dict[str, Any] = {}
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = nested
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return nested


def _build(cls, data: Mapping[str, Any]):
    kwargs = {}
    for f in fields(cls):
        value = data[f.name]
        default = f.default_factory() if callable(f.default_factory) else f.default
        if is_dataclass(default):
            kwargs[f.name] = _build(type(default), value)
        else:
            kwargs[f.name] = value
    return cls(**kwargs)


def validate_config(cfg: RunConfig) -> None:
    from utils.persona_generator import PERSONA_MODES
    from utils.prompts import PROMPT_MODES

    problems = []
    if cfg.prompt.mode not in PROMPT_MODES:
        problems.append(f"prompt.mode must be one of {PROMPT_MODES}")
    if cfg.prompt.mode in PERSONA_MODES and cfg.persona.n < 1:
        problems.append("persona.n must be >= 1 for persona prompt modes")
    if cfg.backend.kind not in ("http", "mock"):
        problems.append("backend.kind must be 'http' or 'mock'")
    if cfg.backend.strategy not in ("candidate", "first_token"):
        problems.append("backend.strategy must be 'candidate' or 'first_token'")
    if cfg.backend.max_retries < 1:
        problems.append("backend.max_retries must be >= 1")
    if cfg.mock.gamma < 0:
        problems.append("mock.gamma must be non-negative")
    if cfg.calibration.criterion not in ("wasserstein", "variance_gap"):
        problems.append("calibration.criterion must be 'wasserstein' or 'variance_gap'")
    if any(t <= 0 for t in list(cfg.calibration.grid) + list(cfg.calibration.sweep_grid)):
        problems.append("calibration temperatures must be positive")
    if cfg.shapley.mode not in ("exact", "permutation"):
        problems.append("shapley.mode must be 'exact' or 'permutation'")
    if not 0.0 <= cfg.dataset.max_missing_fraction <= 1.0:
        problems.append("dataset.max_missing_fraction must be in [0, 1]")
    if not cfg.countries:
        problems.append("countries must be non-empty")
    if cfg.max_workers < 1:
        problems.append("max_workers must be >= 1")
    if problems:
        raise ConfigError("Invalid configuration: " + "; ".join(problems))


def load_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Args:
        path: YAML 설정 파일 (없으면 기본값만 사용)
        overrides: 점 표기 키 -> 값 (예: {"backend.kind": "mock", "seed": 3}), None 값은 무시

    Raises:
        FileNotFoundError: 설정 파일 없음
        ConfigError: 알 수 없는 키, 잘못된 값
    """
    data = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        if not os.path.exists(path):
            raise FileNotFoundError(f"Config file not found: {path}")
        with open(path, encoding="utf-8") as f:
            try:
                doc = yaml.safe_load(f) or {}
            except yaml.YAMLError as e:
                raise ConfigError(f"Cannot parse config {path}: {e}") from e
        if not isinstance(doc, Mapping):
            raise ConfigError(f"Config file {path} must contain a mapping")
        data = _merge(data, doc)
    if overrides:
        data = _merge(data, _dotted_to_nested(overrides))

    cfg = _build(RunConfig, data)
    validate_config(cfg)
    return cfg
