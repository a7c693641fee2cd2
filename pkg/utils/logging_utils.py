"""
공통 로깅 설정
모든 모듈이 같은 포맷으로 로그를 남기도록 보장
"""
import logging
import os
import sys

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"

_configured = False


def get_logger(name: str) -> logging.Logger:
    """
    모듈별 로거 반환 (최초 호출 시 루트 핸들러 설정)

    LOG_LEVEL 환경 변수로 레벨 조정 가능 (기본값: INFO)
    """
    global _configured
    if not _configured:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root = logging.getLogger("persona_sim")
        root.addHandler(handler)
        root.setLevel(os.getenv("LOG_LEVEL", "INFO").upper())
        _configured = True
    return logging.getLogger(f"persona_sim.{name}")
