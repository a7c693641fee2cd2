"""
결과 파일 쓰기 도우미
모든 산출물은 `<name>.partial`에 먼저 쓰고, 성공했을 때만 최종 이름으로 바꿉니다.
(중간에 실패하면 .partial 파일만 남음)
"""
import hashlib
import os
from contextlib import contextmanager
from typing import Iterator

import pandas as pd
import yaml

PARTIAL_SUFFIX = ".partial"


@contextmanager
def partial_output(path: str) -> Iterator[str]:
    """with partial_output("out.csv") as tmp: ... -> 성공 시 tmp를 out.csv로 rename"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    tmp = path + PARTIAL_SUFFIX
    yield tmp
    os.replace(tmp, path)


def write_table(df: pd.DataFrame, path: str) -> str:
    with partial_output(path) as tmp:
        df.to_csv(tmp, index=False, lineterminator="\n", float_format="%.12g")
    return path


def write_yaml(doc, path: str) -> str:
    with partial_output(path) as tmp:
        with open(tmp, "w", encoding="utf-8") as f:
            yaml.safe_dump(doc, f, sort_keys=False, allow_unicode=True)
    return path


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
