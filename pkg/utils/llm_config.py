"""
공통 LLM 설정 모듈
모든 prompting 모드와 실험이 동일한 LLM 클라이언트를 사용하도록 보장
"""
import os
from typing import Optional, Tuple

from dotenv import load_dotenv
from openai import OpenAI

from utils.logging_utils import get_logger

logger = get_logger(__name__)

# 환경 변수 로드
load_dotenv()

# =============================================================================
# LLM 설정 (모든 실험 공통)
# =============================================================================

API_KEY_ENV = "PERSONA_SIM_API_KEY"
BASE_URL_ENV = "PERSONA_SIM_BASE_URL"

# 로컬 OpenAI 호환 서버(vLLM, Ollama 등)를 쓰려면 PERSONA_SIM_BASE_URL 지정
DEFAULT_MODEL = "gpt-4o-mini"
REQUEST_TIMEOUT = 60

# =============================================================================
# LLM 클라이언트 초기화
# =============================================================================

def get_llm_client(model: Optional[str] = None, base_url: Optional[str] = None) -> Tuple[OpenAI, str]:
    """
    LLM 클라이언트 반환 (모든 실험 공통)

    Args:
        model: 모델 ID (없으면 DEFAULT_MODEL)
        base_url: endpoint URL (없으면 PERSONA_SIM_BASE_URL, 그것도 없으면 OpenAI 기본값)

    Returns:
        OpenAI: OpenAI 클라이언트 객체
        str: 사용 중인 모델 이름
    """
    api_key = os.getenv(API_KEY_ENV)
    if not api_key:
        raise ValueError(
            f"{API_KEY_ENV} not found in environment or .env file. "
            f"Please create a .env file with: {API_KEY_ENV}=your_key_here "
            "(or run with --backend mock)"
        )
    base_url = base_url or os.getenv(BASE_URL_ENV) or None
    model_name = model or DEFAULT_MODEL

    client = OpenAI(api_key=api_key, base_url=base_url, timeout=REQUEST_TIMEOUT, max_retries=0)
    logger.info(f"🔸 Using scoring endpoint {base_url or 'https://api.openai.com/v1'}: {model_name}")
    return client, model_name
