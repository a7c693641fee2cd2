"""
채점 백엔드 모듈 (Scoring Backend)
프롬프트와 후보 답(척도 정수의 문자열)을 받아 후보별 log-probability를 반환합니다.

구현:
- OpenAIScoringBackend : OpenAI 호환 HTTP endpoint
    * candidate   : 후보 문자열 전체를 completion으로 붙여 echo 점수 합산 (기본값)
    * first_token : chat top_logprobs의 첫 토큰만 사용 (점수 endpoint가 없는 provider용,
                    "10"처럼 여러 토큰인 후보는 첫 토큰이 "1"과 겹치므로 편향 있음)
- MockBackend          : logit_k = -gamma * |r_k - mu(profile, q)| 결정적 mock
- CachedBackend        : 내용 해시 기반 영구 캐시 래퍼

캐시 파일 형식 (append-only JSON Lines, UTF-8, 레코드당 1줄):
    {"key": "<sha256 hex>", "request": "<prompt digest sha256 hex>",
     "logprobs": [<float>, ...], "timestamp": "<ISO-8601 UTC>"}
- key      : sha256(json.dumps([backend_fingerprint, model_id, system_text, user_text,
             candidates, decode_params], sort_keys=True, ensure_ascii=False))
- backend_fingerprint : 점수에 영향을 주는 백엔드 설정 문자열
             (mock: gamma + mean_rule, http: model + strategy + base_url)
- logprobs : 후보 순서와 동일, Python repr 정밀도(왕복 시 비트 단위 동일)
- 마지막 줄이 잘린 경우(중단된 쓰기) 로드 시 건너뜀
"""
import hashlib
import json
import math
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Callable, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
import openai
from scipy.special import log_softmax, softmax

from utils.logging_utils import get_logger
from utils.prompts import PromptBundle
from utils.response_distribution import ResponseDistribution
from utils.survey_data import QuestionSpec

logger = get_logger(__name__)

DEFAULT_MAX_RETRIES = 3
DEFAULT_BACKOFF_SECONDS = 1.0
FIRST_TOKEN_FLOOR_LOGPROB = -30.0
FIRST_TOKEN_TOP_K = 20

_TRANSIENT_ERRORS = (
    openai.APIConnectionError,
    openai.APITimeoutError,
    openai.RateLimitError,
    openai.InternalServerError,
)


class BackendConfigError(ValueError):
    """provider 설정 문제 (logprobs 미지원 등) - 재시도 무의미"""


class RetryableBackendError(RuntimeError):
    """일시적 전송 실패가 재시도 후에도 계속된 경우"""

    def __init__(self, message: str, attempts: int):
        self.attempts = attempts
        super().__init__(f"{message} (after {attempts} attempts)")


# =============================================================================
# 1. 요청 / 결과 타입
# =============================================================================

@dataclass(frozen=True)
class ScoreRequest:
    bundle: PromptBundle
    candidates: Tuple[str, ...]
    model_id: str
    decode_params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.candidates:
            raise ValueError("ScoreRequest needs at least one candidate")
        if len(set(self.candidates)) != len(self.candidates):
            raise ValueError(f"Duplicate candidates: {self.candidates}")

    def cache_key(self, backend_fingerprint: str = "") -> str:
        """backend_fingerprint: 같은 요청이라도 백엔드 설정(mock gamma, strategy, endpoint 등)이 다르면 다른 키"""
        payload = json.dumps(
            [backend_fingerprint, self.model_id, self.bundle.system_text, self.bundle.user_text,
             list(self.candidates), self.decode_params],
            sort_keys=True,
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ScoreResult:
    logprobs: Tuple[float, ...]
    backend_id: str
    cached: bool = False

    def __post_init__(self):
        if not all(math.isfinite(x) for x in self.logprobs):
            raise ValueError(f"Non-finite logprob from {self.backend_id}: {self.logprobs}")


def make_request(bundle: PromptBundle, model_id: str, decode_params: Optional[Dict[str, Any]] = None) -> ScoreRequest:
    return ScoreRequest(
        bundle=bundle,
        candidates=tuple(str(k) for k in bundle.admissible_options),
        model_id=model_id,
        decode_params=dict(decode_params or {}),
    )


def to_distribution(res: ScoreResult, q: QuestionSpec) -> ResponseDistribution:
    """후보 집합 위에서 softmax 정규화 -> 응답 분포"""
    if len(res.logprobs) != len(q.options):
        raise ValueError(
            f"{q.id}: {len(res.logprobs)} logprobs for {len(q.options)} admissible options"
        )
    probs = softmax(np.asarray(res.logprobs, dtype=float))
    return ResponseDistribution.from_array(q.id, q.options, probs)


# =============================================================================
# 2. Mock
# =============================================================================

MeanRule = Callable[[Mapping[str, int], QuestionSpec], float]


@dataclass(frozen=True)
class MockWorld:
    planted_mean: MeanRule
    gamma: float = 1.0
    questions: Mapping[str, QuestionSpec] = field(default_factory=dict)
    # make_mean_rule 이름 (캐시 fingerprint용, 직접 만든 규칙은 "custom")
    rule: str = "custom"

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValueError(f"mock gamma must be non-negative, got {self.gamma}")


def _question_for(world: MockWorld, bundle: PromptBundle) -> QuestionSpec:
    q = world.questions.get(bundle.question_id)
    if q is not None:
        return q
    opts = bundle.admissible_options
    return QuestionSpec(id=bundle.question_id, text="", scale_min=opts[0], scale_max=opts[-1])


def mock_score(world: MockWorld, req: ScoreRequest) -> ScoreResult:
    """logit_k = -gamma * |r_k - mu| 를 log-softmax로 정규화 (결정적)"""
    q = _question_for(world, req.bundle)
    mu = float(world.planted_mean(req.bundle.profile, q))
    r = np.array([int(c) for c in req.candidates], dtype=float)
    logits = -world.gamma * np.abs(r - mu)
    return ScoreResult(logprobs=tuple(float(x) for x in log_softmax(logits)), backend_id="mock")


def _midpoint(q: QuestionSpec) -> float:
    return (q.scale_min + q.scale_max) / 2.0


def _position(answer: int, item: QuestionSpec) -> float:
    return (answer - item.scale_min) / item.scale_range


def make_mean_rule(name: str, questions: Mapping[str, QuestionSpec]) -> MeanRule:
    """
    mock의 planted mean 규칙

    - midpoint          : 항상 척도 중앙
    - profile_position  : 페르소나 응답들의 척도 내 상대 위치 평균을 대상 척도로 옮김
    - item_echo:<QID>   : 특정 문항 응답의 상대 위치를 그대로 옮김 (단일 관련 문항 실험용)
    """
    if name == "midpoint":
        return lambda profile, q: _midpoint(q)

    if name == "profile_position":
        def rule(profile, q):
            known = [(qid, a) for qid, a in profile.items() if qid in questions]
            if not known:
                return _midpoint(q)
            pos = sum(_position(a, questions[qid]) for qid, a in known) / len(known)
            return q.scale_min + pos * q.scale_range
        return rule

    if name.startswith("item_echo:"):
        item_id = name.split(":", 1)[1]
        if item_id not in questions:
            raise BackendConfigError(f"mock.mean_rule refers to unknown item {item_id}")

        def echo(profile, q):
            if item_id not in profile:
                return _midpoint(q)
            return q.scale_min + _position(profile[item_id], questions[item_id]) * q.scale_range
        return echo

    raise BackendConfigError(f"Unknown mock.mean_rule: {name}")


class MockBackend:
    """결정적 mock 백엔드 (호출 횟수 기록)"""

    def __init__(self, world: MockWorld, backend_id: str = "mock"):
        self.world = world
        self.backend_id = backend_id
        self.fingerprint = f"{backend_id}:gamma={float(world.gamma)!r}:rule={world.rule}"
        self.n_calls = 0
        self._lock = threading.Lock()

    def score(self, req: ScoreRequest) -> ScoreResult:
        with self._lock:
            self.n_calls += 1
        res = mock_score(self.world, req)
        return ScoreResult(logprobs=res.logprobs, backend_id=self.backend_id)


# =============================================================================
# 3. 호출 제한 / 재시도
# =============================================================================

class RateLimiter:
    """초당 요청 수 제한 (clock/sleep 주입 가능 - 테스트용 fake clock)"""

    def __init__(self, rps: float, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.rps = rps
        self.clock = clock
        self.sleep = sleep
        self._next_slot = None
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if not self.rps or self.rps <= 0:
            return
        with self._lock:
            now = self.clock()
            slot = now if self._next_slot is None else max(now, self._next_slot)
            self._next_slot = slot + 1.0 / self.rps
        wait = slot - now
        if wait > 0:
            self.sleep(wait)


def call_with_retries(fn: Callable[[], Any], max_retries: int = DEFAULT_MAX_RETRIES,
                      base_delay: float = DEFAULT_BACKOFF_SECONDS,
                      sleep: Callable[[float], None] = time.sleep) -> Any:
    """일시적 오류는 지수 백오프(1s, 2s, ...)로 재시도, 설정 오류는 즉시 전달"""
    last_error = None
    for attempt in range(1, max_retries + 1):
        try:
            return fn()
        except _TRANSIENT_ERRORS as e:
            last_error = e
            logger.warning(f"Transient backend error (attempt {attempt}/{max_retries}): {e}")
            if attempt < max_retries:
                sleep(base_delay * 2 ** (attempt - 1))
    raise RetryableBackendError(f"Scoring request failed: {last_error}", attempts=max_retries)


# =============================================================================
# 4. OpenAI 호환 HTTP 백엔드
# =============================================================================

def completion_prefix(bundle: PromptBundle) -> str:
    """candidate 채점용 평문 프롬프트 (system, user, 답변 자리 순서)"""
    return f"{bundle.system_text}\n\n{bundle.user_text}\n"


class OpenAIScoringBackend:
    def __init__(self, client, model_id: str, strategy: str = "candidate",
                 rps: float = 0.0, max_retries: int = DEFAULT_MAX_RETRIES,
                 sleep: Callable[[float], None] = time.sleep,
                 limiter: Optional[RateLimiter] = None):
        if strategy not in ("candidate", "first_token"):
            raise BackendConfigError(f"Unknown scoring strategy: {strategy}")
        self.client = client
        self.model_id = model_id
        self.strategy = strategy
        self.max_retries = max_retries
        self.sleep = sleep
        self.limiter = limiter or RateLimiter(rps, sleep=sleep)
        self.backend_id = f"openai:{model_id}:{strategy}"
        self.fingerprint = f"{self.backend_id}:{getattr(client, 'base_url', None)}"
        self._warned_first_token = False

    def _call(self, fn):
        def limited():
            self.limiter.acquire()
            return fn()
        try:
            return call_with_retries(limited, self.max_retries, sleep=self.sleep)
        except openai.BadRequestError as e:
            raise BackendConfigError(
                f"Provider rejected the scoring request ({e}). If it does not support logprobs, "
                "use backend.kind=mock or backend.strategy=first_token"
            ) from e

    def _score_candidate(self, prefix: str, candidate: str) -> float:
        res = self._call(lambda: self.client.completions.create(
            model=self.model_id, prompt=prefix + candidate, max_tokens=1, echo=True, logprobs=1,
        ))
        lp = res.choices[0].logprobs
        if lp is None or lp.token_logprobs is None:
            raise BackendConfigError(
                "Provider returned no logprobs for echo scoring; "
                "use backend.kind=mock or backend.strategy=first_token"
            )
        start, end = len(prefix), len(prefix) + len(candidate)
        offsets = list(lp.text_offset)
        total = 0.0
        for i, (offset, value) in enumerate(zip(offsets, lp.token_logprobs)):
            # 토큰 구간 [offset, 다음 offset) 이 후보 구간과 겹치면 포함
            # (prefix 끝 "\n"과 후보가 한 토큰으로 합쳐지는 경우 포함, 생성된 1토큰은 offset >= end라 제외)
            token_end = offsets[i + 1] if i + 1 < len(offsets) else max(offset + 1, end)
            if offset < end and token_end > start and value is not None:
                total += value
        return total

    def _score_first_token(self, req: ScoreRequest) -> Tuple[float, ...]:
        if not self._warned_first_token:
            logger.warning("first_token scoring: multi-token candidates (e.g. '10') share their first "
                           "token with shorter ones; expect biased distributions on 10-point scales")
            self._warned_first_token = True
        res = self._call(lambda: self.client.chat.completions.create(
            model=self.model_id,
            messages=[{"role": "system", "content": req.bundle.system_text},
                      {"role": "user", "content": req.bundle.user_text}],
            max_tokens=1, logprobs=True, top_logprobs=FIRST_TOKEN_TOP_K,
        ))
        content = res.choices[0].logprobs.content if res.choices[0].logprobs else None
        if not content:
            raise BackendConfigError("Provider returned no top_logprobs; use backend.kind=mock")
        table = {t.token.strip(): t.logprob for t in content[0].top_logprobs}
        return tuple(float(table.get(c, FIRST_TOKEN_FLOOR_LOGPROB)) for c in req.candidates)

    def score(self, req: ScoreRequest) -> ScoreResult:
        if self.strategy == "first_token":
            logprobs = self._score_first_token(req)
        else:
            prefix = completion_prefix(req.bundle)
            logprobs = tuple(self._score_candidate(prefix, c) for c in req.candidates)
        return ScoreResult(logprobs=logprobs, backend_id=self.backend_id)


# =============================================================================
# 5. 캐시
# =============================================================================

class ResponseCache:
    """append-only JSONL 캐시 (동시 읽기 허용, 쓰기는 lock으로 직렬화)"""

    def __init__(self, path: str):
        self.path = path
        self._entries: Dict[str, Tuple[float, ...]] = {}
        self._lock = threading.Lock()
        self._load()

    def _load(self) -> None:
        if not os.path.exists(self.path):
            return
        with open(self.path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    self._entries[rec["key"]] = tuple(float(x) for x in rec["logprobs"])
                except (json.JSONDecodeError, KeyError, TypeError) as e:
                    logger.warning(f"Skipping unreadable cache record {self.path}:{lineno}: {e}")
        logger.info(f"Loaded {len(self._entries)} cached scores from {self.path}")

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: str) -> Optional[Tuple[float, ...]]:
        return self._entries.get(key)

    def put(self, key: str, request_digest: str, logprobs: Sequence[float]) -> None:
        record = {
            "key": key,
            "request": request_digest,
            "logprobs": [float(x) for x in logprobs],
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        with self._lock:
            if key in self._entries:
                return
            directory = os.path.dirname(self.path)
            if directory:
                os.makedirs(directory, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(record, ensure_ascii=False) + "\n")
                f.flush()
            self._entries[key] = tuple(record["logprobs"])


class CachedBackend:
    """캐시 래퍼: 동일 요청은 backend 호출 없이 cached=True로 반환"""

    def __init__(self, inner, cache: ResponseCache):
        self.inner = inner
        self.cache = cache
        self.backend_id = inner.backend_id
        self.fingerprint = getattr(inner, "fingerprint", inner.backend_id)
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def key_for(self, req: ScoreRequest) -> str:
        return req.cache_key(self.fingerprint)

    def score(self, req: ScoreRequest) -> ScoreResult:
        key = self.key_for(req)
        logprobs = self.cache.get(key)
        if logprobs is not None:
            with self._lock:
                self.hits += 1
            return ScoreResult(logprobs=logprobs, backend_id=self.backend_id, cached=True)
        res = self.inner.score(req)
        self.cache.put(key, req.bundle.digest(), res.logprobs)
        with self._lock:
            self.misses += 1
        return res


# =============================================================================
# 6. Factory
# =============================================================================

def build_backend(kind: str, questions: Mapping[str, QuestionSpec], *,
                  model_id: Optional[str] = None, base_url: Optional[str] = None,
                  strategy: str = "candidate", rps: float = 0.0,
                  max_retries: int = DEFAULT_MAX_RETRIES,
                  mock_gamma: float = 1.0, mock_mean_rule: str = "profile_position",
                  cache_path: Optional[str] = None):
    """config 값으로 백엔드 구성 (cache_path가 있으면 CachedBackend로 감쌈)"""
    if kind == "mock":
        world = MockWorld(planted_mean=make_mean_rule(mock_mean_rule, questions),
                          gamma=mock_gamma, questions=dict(questions), rule=mock_mean_rule)
        backend = MockBackend(world)
    elif kind == "http":
        from utils.llm_config import get_llm_client
        client, model_name = get_llm_client(model_id, base_url)
        backend = OpenAIScoringBackend(client, model_name, strategy=strategy,
                                       rps=rps, max_retries=max_retries)
    else:
        raise BackendConfigError(f"Unknown backend.kind: {kind} (expected 'http' or 'mock')")

    if cache_path:
        backend = CachedBackend(backend, ResponseCache(cache_path))
    return backend
