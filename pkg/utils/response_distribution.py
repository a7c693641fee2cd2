"""
응답 분포 타입 (ResponseDistribution)
척도의 연속된 정수 선택지 r_k 위의 확률 벡터 p_k
"""
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

PROB_SUM_TOLERANCE = 1e-12


@dataclass(frozen=True)
class ResponseDistribution:
    question_id: str
    options: Tuple[int, ...]
    probs: Tuple[float, ...]

    def __post_init__(self):
        if len(self.options) != len(self.probs):
            raise ValueError(f"{self.question_id}: options and probs differ in length")
        if len(self.options) == 0:
            raise ValueError(f"{self.question_id}: empty option grid")
        if any(b - a != 1 for a, b in zip(self.options, self.options[1:])):
            raise ValueError(f"{self.question_id}: options must be strictly increasing and contiguous")
        if any(p < 0 for p in self.probs):
            raise ValueError(f"{self.question_id}: negative probability")
        if abs(sum(self.probs) - 1.0) > PROB_SUM_TOLERANCE:
            raise ValueError(f"{self.question_id}: probabilities sum to {sum(self.probs)!r}, not 1")

    @classmethod
    def from_array(cls, question_id: str, options: Sequence[int], probs) -> "ResponseDistribution":
        """배열을 받아 재정규화 후 생성 (부동소수 오차 흡수)"""
        p = np.asarray(probs, dtype=float)
        p = p / p.sum()
        return cls(question_id=question_id, options=tuple(int(o) for o in options),
                   probs=tuple(float(x) for x in p))

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self.options, dtype=float)

    @property
    def p(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)

    @property
    def scale_min(self) -> int:
        return self.options[0]

    @property
    def scale_max(self) -> int:
        return self.options[-1]

    def mean(self) -> float:
        return float(np.dot(self.values, self.p))

    def variance(self) -> float:
        mu = self.mean()
        return float(np.dot((self.values - mu) ** 2, self.p))
