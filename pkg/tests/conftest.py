"""공통 fixture: 작은 문항 카탈로그, 2개국 응답자, 설명문 카탈로그, mock 백엔드"""
import pytest

from utils.persona_generator import DescriptorCatalog
from utils.prompts import builtin_guidance
from utils.scoring_backend import MockBackend, MockWorld, make_mean_rule
from utils.survey_data import QuestionSpec, Respondent, SurveyDataset

COUNTRIES = ("Aland", "Borduria")


@pytest.fixture
def questions():
    return [
        QuestionSpec("Q1", "How important is family in your life?", 1, 4,
                     labels={1: "Very important", 2: "Rather important",
                             3: "Not very important", 4: "Not at all important"}),
        QuestionSpec("Q2", "How satisfied are you with your life?", 1, 10,
                     anchors={1: "Completely dissatisfied", 10: "Completely satisfied"}),
        QuestionSpec("P1", "How important is God in your life?", 1, 3, battery="persona"),
        QuestionSpec("P2", "Have you signed a petition?", 1, 2, battery="persona"),
    ]


@pytest.fixture
def question_map(questions):
    return {q.id: q for q in questions}


def _answers(i: int, offset: int):
    return {
        "Q1": 1 + (i + offset) % 4,
        "Q2": 1 + (3 * i + offset) % 10,
        "P1": 1 + (i + offset) % 3,
        "P2": None if i % 7 == 0 else 1 + (i // 2) % 2,
    }


@pytest.fixture
def dataset(questions):
    respondents = []
    for c, country in enumerate(COUNTRIES):
        for i in range(40):
            respondents.append(Respondent(
                id=f"{country[:2].upper()}-{i:03d}",
                country=country,
                answers=_answers(i, c),
                attributes={"age": ["18-29", "30-49", "50-64"][i % 3], "gender": ["female", "male"][i % 2]},
            ))
    return SurveyDataset(tuple(questions), tuple(respondents), ("age", "gender"))


@pytest.fixture
def catalog():
    entries = {}
    for option, text in {1: "You consider God very important.", 2: "You give God some importance.",
                         3: "You do not consider God important."}.items():
        entries[("P1", option)] = text
    entries[("P2", 1)] = "You have signed a petition."
    entries[("P2", 2)] = "You have never signed a petition."
    return DescriptorCatalog(entries=entries, provenance="generator=test, prompt_variant=modular")


@pytest.fixture
def guidance():
    return builtin_guidance()


@pytest.fixture
def make_mock(question_map):
    def factory(rule: str = "profile_position", gamma: float = 2.0):
        world = MockWorld(planted_mean=make_mean_rule(rule, question_map), gamma=gamma, questions=question_map)
        return MockBackend(world)
    return factory
