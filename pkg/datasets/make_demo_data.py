"""
데모 응답자 데이터 생성
WVS 원자료 없이 파이프라인 전체를 돌려볼 수 있도록 합성 응답자 테이블을 만듭니다.

생성 모델:
- 국가마다 2차원 문화 좌표(traditional-secular, survival-self expression)를 고정
- 응답자 좌표 = 국가 좌표 + 개인 잡음
- 문항마다 두 축에 대한 가중치를 뽑고, 응답 = 척도 중앙 + tanh(가중합 + 잡음) * 반폭 (반올림)
- 일부 응답은 결측 (음수 코드 대신 빈 칸)

실행:
    python datasets/make_demo_data.py
"""
import os
import sys

import numpy as np

# 프로젝트 루트 경로 추가
current_dir = os.path.dirname(os.path.abspath(__file__))
parent_dir = os.path.dirname(current_dir)
sys.path.append(parent_dir)

from utils.persona_generator import DEFAULT_ATTRIBUTES
from utils.run_config import DEFAULT_COUNTRIES
from utils.survey_data import Respondent, SurveyDataset, load_question_catalog, save_dataset

OUTPUT_FILE = "datasets/demo/respondents.csv"
CATALOG_FILE = "datasets/question_catalog.yaml"

# 국가별 문화 좌표 (데모용 근사치)
COUNTRY_POSITIONS = {
    "Moldova": (-0.2, -0.8),
    "Taiwan": (0.6, -0.1),
    "Japan": (0.9, 0.1),
    "Iceland": (0.5, 0.8),
    "Sweden": (0.9, 0.9),
    "Puerto Rico": (-0.7, 0.5),
    "Colombia": (-0.6, 0.3),
    "Ghana": (-0.9, -0.4),
    "Jordan": (-0.8, -0.6),
    "United Kingdom": (0.3, 0.6),
}

AGE_GROUPS = ["18-29", "30-49", "50-64", "65+"]
GENDERS = ["female", "male"]
EDUCATION = ["primary", "secondary", "tertiary"]


def make_synthetic_dataset(questions, countries, n_per_country: int = 300, seed: int = 0,
                           missing_rate: float = 0.05, attribute_columns=DEFAULT_ATTRIBUTES) -> SurveyDataset:
    """
    합성 SurveyDataset 생성 (같은 seed -> 같은 데이터)

    Args:
        questions: QuestionSpec 목록
        countries: 국가 목록 (COUNTRY_POSITIONS에 없으면 seed로 좌표 생성)
        n_per_country: 국가당 응답자 수
        missing_rate: 응답별 결측 확률
    """
    rng = np.random.default_rng(seed)
    loadings = {q.id: rng.normal(0.0, 1.0, size=2) for q in questions}
    respondents = []
    for country in countries:
        center = np.array(COUNTRY_POSITIONS.get(country, rng.uniform(-1, 1, size=2)))
        for i in range(n_per_country):
            position = center + rng.normal(0.0, 0.5, size=2)
            answers = {}
            for q in questions:
                if rng.random() < missing_rate:
                    answers[q.id] = None
                    continue
                signal = float(loadings[q.id] @ position) + rng.normal(0.0, 0.4)
                half = (q.scale_max - q.scale_min) / 2.0
                value = int(round(q.scale_min + half + half * np.tanh(signal)))
                answers[q.id] = min(q.scale_max, max(q.scale_min, value))
            attributes = {
                "age": str(rng.choice(AGE_GROUPS)),
                "gender": str(rng.choice(GENDERS)),
                "education": str(rng.choice(EDUCATION)),
            }
            respondents.append(Respondent(
                id=f"{country[:3].upper()}-{i:04d}",
                country=country,
                answers=answers,
                attributes={a: attributes[a] for a in attribute_columns if a in attributes},
            ))
    return SurveyDataset(tuple(questions), tuple(respondents), tuple(attribute_columns))


def main():
    questions = load_question_catalog(CATALOG_FILE)
    ds = make_synthetic_dataset(questions, DEFAULT_COUNTRIES)
    save_dataset(ds, None, OUTPUT_FILE)
    print(f"✅ Demo respondents generated: {len(ds.respondents)} rows, {len(questions)} questions.")
    print(f"📂 Saved to: {OUTPUT_FILE}")


if __name__ == "__main__":
    main()
