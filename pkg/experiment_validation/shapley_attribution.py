"""
페르소나 문항별 Shapley 값
문항 부분집합(coalition)으로 만든 페르소나 집단의 평균 MAE를 value로 두고,
각 문항의 평균 한계 기여도를 계산합니다.

- 음수 Shapley 값 = 그 문항을 넣으면 MAE가 낮아짐 (도움이 되는 문항)
- 빈 부분집합 = 설명문 없는 페르소나 (country prompting과 같은 프롬프트)
- coalition 집단은 전체 실행과 같은 응답자를 재사용 (paired design)
"""
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from experiment_validation.metrics import mae
from simulation.population_simulation import simulate_population
from utils.logging_utils import get_logger
from utils.output_files import write_table
from utils.persona_generator import Population, item_subset_population
from utils.prompts import GuidanceTemplate
from utils.survey_data import HumanDistribution, QuestionSpec, SurveyDataset, human_distribution

logger = get_logger(__name__)

MAX_EXACT_ITEMS = 12
SHAPLEY_MODES = ("exact", "permutation")
MEAN_ROW = "MEAN"


class ShapleyError(ValueError):
    pass


@dataclass(frozen=True)
class CoalitionValue:
    subset: FrozenSet[str]
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ShapleyError(f"Non-finite coalition value for {sorted(self.subset)}")


@dataclass(frozen=True)
class ShapleyReport:
    country: str
    items: Tuple[str, ...]
    values: Dict[str, float]
    method: str
    samples: Optional[int] = None
    std_errors: Dict[str, float] = field(default_factory=dict)
    v_full: float = 0.0
    v_empty: float = 0.0

    @property
    def efficiency_gap(self) -> float:
        return sum(self.values.values()) - (self.v_full - self.v_empty)


# =============================================================================
# 1. Coalition value
# =============================================================================

@dataclass
class EvalContext:
    """coalition 평가에 필요한 고정 설정 + 스레드 안전 memo"""
    population: Population
    questions: Sequence[QuestionSpec]
    guidance: GuidanceTemplate
    backend: object
    mode: str = "value"
    human: Dict[str, HumanDistribution] = field(default_factory=dict)
    max_workers: int = 1
    memo: Dict[FrozenSet[str], CoalitionValue] = field(default_factory=dict)
    memo_hits: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def lookup(self, subset: FrozenSet[str]) -> Optional[CoalitionValue]:
        with self._lock:
            cv = self.memo.get(subset)
            if cv is not None:
                self.memo_hits += 1
            return cv

    def insert(self, cv: CoalitionValue) -> CoalitionValue:
        """먼저 들어온 값을 유지 (insert-if-absent)"""
        with self._lock:
            return self.memo.setdefault(cv.subset, cv)


def coalition_value(ds: SurveyDataset, country: str, subset: Iterable[str], ctx: EvalContext) -> float:
    """부분집합 문항으로 만든 집단의 평가 문항 평균 MAE (subset별 memo)"""
    if ctx.population.country != country:
        raise ShapleyError(f"Context population is for {ctx.population.country}, not {country}")
    key = frozenset(subset)
    cached = ctx.lookup(key)
    if cached is not None:
        return cached.value

    pop = item_subset_population(ctx.population, key)
    errors = []
    for q in ctx.questions:
        if q.id not in ctx.human:
            ctx.human[q.id] = human_distribution(ds, q.id, country)
        pred = simulate_population(pop, q, ctx.guidance, ctx.mode, ctx.backend)
        errors.append(mae(pred.expected_response, ctx.human[q.id].mean(), q))
    cv = ctx.insert(CoalitionValue(subset=key, value=float(np.mean(errors))))
    return cv.value


# =============================================================================
# 2. Shapley values
# =============================================================================

def _memoized(value_fn: Callable[[FrozenSet[str]], float]) -> Callable[[FrozenSet[str]], float]:
    table: Dict[FrozenSet[str], float] = {}
    lock = threading.Lock()

    def fn(subset: FrozenSet[str]) -> float:
        with lock:
            if subset in table:
                return table[subset]
        value = float(value_fn(subset))
        with lock:
            return table.setdefault(subset, value)
    return fn


def _all_subsets(items: Sequence[str]) -> List[FrozenSet[str]]:
    return [frozenset(c) for k in range(len(items) + 1) for c in combinations(items, k)]


def _exact(items: Sequence[str], v: Callable[[FrozenSet[str]], float]) -> Dict[str, float]:
    n = len(items)
    weights = [math.factorial(k) * math.factorial(n - k - 1) / math.factorial(n) for k in range(n)]
    phi = {}
    for item in items:
        others = [x for x in items if x != item]
        total = 0.0
        for k in range(n):
            for combo in combinations(others, k):
                s = frozenset(combo)
                total += weights[k] * (v(s | {item}) - v(s))
        phi[item] = total
    return phi


def _permutation(items: Sequence[str], v: Callable[[FrozenSet[str]], float], n_permutations: int,
                 seed: int) -> Tuple[Dict[str, float], Dict[str, float]]:
    rng = np.random.default_rng(seed)
    contributions = {item: np.empty(n_permutations) for item in items}
    for m in range(n_permutations):
        order = rng.permutation(len(items))
        current: FrozenSet[str] = frozenset()
        previous = v(current)
        for idx in order:
            item = items[idx]
            current = current | {item}
            value = v(current)
            contributions[item][m] = value - previous
            previous = value
    phi = {item: float(c.mean()) for item, c in contributions.items()}
    if n_permutations > 1:
        se = {item: float(c.std(ddof=1) / math.sqrt(n_permutations)) for item, c in contributions.items()}
    else:
        se = {item: float("nan") for item in items}
    return phi, se


def shapley_values(
    items: Sequence[str],
    value_fn: Callable[[FrozenSet[str]], float],
    mode: str = "exact",
    n_permutations: int = 1000,
    seed: int = 0,
    country: str = "",
    max_workers: int = 1,
) -> ShapleyReport:
    """
    Args:
        items: 페르소나 문항 ID
        value_fn: frozenset(문항) -> value (평균 MAE)
        mode: exact (문항 <= 12) / permutation (seed 고정 무작위 순열)
        n_permutations: permutation 모드 순열 수
        max_workers: exact 모드에서 coalition을 미리 병렬 평가할 스레드 수
    """
    items = tuple(items)
    if not items:
        raise ShapleyError("shapley_values needs at least one item")
    if len(set(items)) != len(items):
        raise ShapleyError(f"Duplicate items: {items}")
    if mode not in SHAPLEY_MODES:
        raise ShapleyError(f"Unknown Shapley mode: {mode} (expected one of {SHAPLEY_MODES})")

    v = _memoized(value_fn)
    if mode == "exact":
        if len(items) > MAX_EXACT_ITEMS:
            raise ShapleyError(
                f"Exact Shapley over {len(items)} items needs 2^{len(items)} coalitions; "
                f"use mode='permutation' (limit {MAX_EXACT_ITEMS})"
            )
        if max_workers > 1:
            with ThreadPoolExecutor(max_workers=max_workers) as pool:
                list(pool.map(v, _all_subsets(items)))
        phi, se, samples = _exact(items, v), {}, None
    else:
        if n_permutations < 1:
            raise ShapleyError(f"n_permutations must be >= 1, got {n_permutations}")
        phi, se = _permutation(items, v, n_permutations, seed)
        samples = n_permutations

    report = ShapleyReport(
        country=country,
        items=items,
        values=phi,
        method=mode,
        samples=samples,
        std_errors=se,
        v_full=v(frozenset(items)),
        v_empty=v(frozenset()),
    )
    logger.info(f"Shapley ({mode}) {country}: efficiency gap {report.efficiency_gap:.2e}")
    return report


def country_shapley(ds: SurveyDataset, ctx: EvalContext, mode: str = "exact", n_permutations: int = 1000,
                    seed: int = 0) -> ShapleyReport:
    """ctx 집단의 문항 전체에 대해 Shapley 계산"""
    country = ctx.population.country
    return shapley_values(
        ctx.population.items,
        lambda subset: coalition_value(ds, country, subset, ctx),
        mode=mode,
        n_permutations=n_permutations,
        seed=seed,
        country=country,
        max_workers=ctx.max_workers,
    )


def shapley_table(reports: Sequence[ShapleyReport]) -> pd.DataFrame:
    """(국가, 문항, φ) 행 + 국가별 평균 행(item=MEAN)"""
    rows = []
    for rep in reports:
        for item in rep.items:
            rows.append({
                "country": rep.country,
                "item": item,
                "phi": rep.values[item],
                "std_error": rep.std_errors.get(item, np.nan),
                "method": rep.method,
                "samples": rep.samples if rep.samples is not None else "",
            })
        rows.append({
            "country": rep.country,
            "item": MEAN_ROW,
            "phi": float(np.mean([rep.values[i] for i in rep.items])),
            "std_error": np.nan,
            "method": rep.method,
            "samples": rep.samples if rep.samples is not None else "",
        })
    return pd.DataFrame(rows, columns=["country", "item", "phi", "std_error", "method", "samples"])


def write_shapley_report(reports: Sequence[ShapleyReport], path: str) -> str:
    return write_table(shapley_table(reports), path)
