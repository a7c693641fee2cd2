import numpy as np
import pytest

from utils.survey_data import (
    DatasetParseError,
    DatasetValidationError,
    EmptyDistributionError,
    QuestionSpec,
    Respondent,
    SurveyDataset,
    country_counts,
    filter_questions,
    human_distribution,
    load_dataset,
    load_question_catalog,
    save_dataset,
)

CATALOG = """\
questions:
  - id: Q1
    text: How important is family?
    scale_min: 1
    scale_max: 4
    labels: [Very important, Rather important, Not very important, Not at all important]
  - id: Q2
    text: Life satisfaction
    scale_min: 1
    scale_max: 10
"""


def _write(tmp_path, catalog: str, table: str):
    cat = tmp_path / "catalog.yaml"
    tab = tmp_path / "respondents.csv"
    cat.write_text(catalog, encoding="utf-8")
    tab.write_text(table, encoding="utf-8")
    return str(cat), str(tab)


def _missing_dataset(n_total: int, n_missing: int) -> SurveyDataset:
    q = QuestionSpec("Q1", "text", 1, 4)
    respondents = tuple(
        Respondent(id=str(i), country="Aland", answers={"Q1": None if i < n_missing else 1})
        for i in range(n_total)
    )
    return SurveyDataset((q,), respondents)


# =============================================================================
# 로딩
# =============================================================================

def test_load_dataset_parses_answers_and_missing_codes(tmp_path):
    cat, tab = _write(tmp_path, CATALOG, "id,country,Q1,Q2,age\nr1,Aland,1,10,30-49\nr2,Aland,,-2,18-29\nr3,Borduria,4,5.0,65+\n")
    ds = load_dataset(cat, tab, attribute_columns=["age"])

    assert ds.question_ids == ["Q1", "Q2"]
    assert ds.countries == ["Aland", "Borduria"]
    r1, r2, r3 = ds.respondents
    assert r1.answers == {"Q1": 1, "Q2": 10}
    assert r2.answers == {"Q1": None, "Q2": None}
    assert r3.answer("Q2") == 5
    assert r1.attributes == {"age": "30-49"}
    assert ds.question("Q1").labels[4] == "Not at all important"


def test_non_numeric_cell_reports_row_and_column(tmp_path):
    cat, tab = _write(tmp_path, CATALOG, "id,country,Q1,Q2\nr1,Aland,1,2\nr2,Aland,x,3\n")
    with pytest.raises(DatasetParseError) as err:
        load_dataset(cat, tab)
    assert err.value.row == 3
    assert err.value.column == "Q1"


def test_unknown_column_is_a_parse_error(tmp_path):
    cat, tab = _write(tmp_path, CATALOG, "id,country,Q1,Q99\nr1,Aland,1,2\n")
    with pytest.raises(DatasetParseError):
        load_dataset(cat, tab)


def test_out_of_range_answers_list_respondents(tmp_path):
    cat, tab = _write(tmp_path, CATALOG, "id,country,Q1,Q2\nr1,Aland,5,2\nr2,Aland,1,2\nr3,Aland,1,11\n")
    with pytest.raises(DatasetValidationError) as err:
        load_dataset(cat, tab)
    assert err.value.respondent_ids == ["r1", "r3"]


def test_empty_table_gives_empty_dataset(tmp_path):
    cat, tab = _write(tmp_path, CATALOG, "")
    ds = load_dataset(cat, tab)
    assert ds.respondents == ()
    assert ds.countries == []


def test_missing_catalog_field_is_parse_error(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("questions:\n  - id: Q1\n    text: t\n    scale_min: 1\n", encoding="utf-8")
    with pytest.raises(DatasetParseError) as err:
        load_question_catalog(str(path))
    assert err.value.column == "scale_max"


def test_malformed_yaml_is_parse_error(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("questions: [\n  - id: Q1\n", encoding="utf-8")
    with pytest.raises(DatasetParseError):
        load_question_catalog(str(path))


def test_missing_files_raise_file_not_found(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_question_catalog(str(tmp_path / "nope.yaml"))
    cat, _ = _write(tmp_path, CATALOG, "")
    with pytest.raises(FileNotFoundError):
        load_dataset(cat, str(tmp_path / "nope.csv"))


def test_degenerate_scale_rejected():
    with pytest.raises(DatasetValidationError):
        QuestionSpec("Q1", "t", 3, 3)


def test_save_then_load_round_trip(tmp_path, dataset):
    cat, tab = str(tmp_path / "c.yaml"), str(tmp_path / "out" / "r.csv")
    save_dataset(dataset, cat, tab)
    loaded = load_dataset(cat, tab, attribute_columns=dataset.attribute_columns)
    assert loaded == dataset


def test_shipped_catalog_loads():
    questions = load_question_catalog("datasets/question_catalog.yaml")
    ids = [q.id for q in questions]
    assert len(ids) == len(set(ids))
    assert {"Q1", "Q164", "Q57", "Q238"} <= set(ids)
    assert {q.id for q in questions if q.battery == "persona"} == {
        "Q164", "Q8", "Q184", "Q254", "Q45", "Q154", "Q46", "Q182", "Q209", "Q57"}


# =============================================================================
# 결측 필터
# =============================================================================

def test_filter_drops_exactly_twenty_percent_missing():
    assert filter_questions(_missing_dataset(1000, 200), ["Aland"], 0.2) == []


def test_filter_keeps_just_under_twenty_percent_missing():
    assert filter_questions(_missing_dataset(1000, 199), ["Aland"], 0.2) == ["Q1"]


def test_filter_needs_every_country(dataset):
    assert "P2" in filter_questions(dataset, ["Aland", "Borduria"], 0.2)
    # P2는 7명 중 1명꼴 결측 (약 15%)
    assert "P2" not in filter_questions(dataset, ["Aland"], 0.1)


def test_filter_threshold_one_keeps_everything(dataset):
    assert filter_questions(dataset, ["Aland"], 1.0) == dataset.question_ids


def test_filter_rejects_unknown_country_and_bad_threshold(dataset):
    with pytest.raises(DatasetValidationError):
        filter_questions(dataset, ["Atlantis"])
    with pytest.raises(DatasetValidationError):
        filter_questions(dataset, ["Aland"], 1.5)
    with pytest.raises(DatasetValidationError):
        filter_questions(dataset, [])


# =============================================================================
# 실제 응답 분포
# =============================================================================

def test_human_distribution_counts_full_grid(dataset):
    h = human_distribution(dataset, "P2", "Aland")
    assert h.options == (1, 2)
    assert h.n_valid + h.n_missing == 40
    assert h.n_missing == 6
    np.testing.assert_allclose(h.probs().sum(), 1.0)
    assert 1.0 <= h.mean() <= 2.0


def test_human_distribution_includes_zero_count_options():
    q = QuestionSpec("Q1", "t", 1, 4)
    ds = SurveyDataset((q,), (Respondent("a", "X", {"Q1": 2}), Respondent("b", "X", {"Q1": 2})))
    h = human_distribution(ds, "Q1", "X")
    assert h.counts == {1: 0, 2: 2, 3: 0, 4: 0}
    np.testing.assert_array_equal(h.probs(), [0, 1, 0, 0])
    assert h.to_distribution().mean() == pytest.approx(2.0)


def test_human_distribution_without_valid_answers():
    q = QuestionSpec("Q1", "t", 1, 4)
    ds = SurveyDataset((q,), (Respondent("a", "X", {"Q1": None}),))
    with pytest.raises(EmptyDistributionError):
        human_distribution(ds, "Q1", "X")


def test_country_counts(dataset):
    assert country_counts(dataset) == {"Aland": 40, "Borduria": 40}
